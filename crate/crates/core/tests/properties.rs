use std::collections::{BTreeMap, VecDeque};

use num_rational::Ratio;
use proptest::prelude::*;

use semtrace_core::evalsuite::{canonical_serialize, parse_canonical};
use semtrace_core::fuzz::{differential, roundtrip_check, AstGen, TerminatingGen};
use semtrace_core::grpo::{group_advantages, kl_categorical};
use semtrace_core::lang::parse_program;
use semtrace_core::rewards::{sem_reward, SemPrediction};
use semtrace_core::scheduler::{AlignmentPrompt, FailureBuffer, PushOutcome};
use semtrace_core::tracer::{execute, TraceMode};
use semtrace_core::value::{matches_truth, values_equal};
use semtrace_core::Value;

fn atom() -> impl Strategy<Value = Value> {
    prop_oneof![
        any::<i64>().prop_map(Value::Int),
        (-1e12f64..1e12).prop_map(Value::Float),
        prop_oneof![Just(f64::INFINITY), Just(f64::NEG_INFINITY), Just(0.5), Just(-0.0)]
            .prop_map(Value::Float),
        any::<bool>().prop_map(Value::Bool),
        "[a-z \"\\\\\n]{0,6}".prop_map(Value::Str),
        Just(Value::Null),
    ]
}

fn value() -> impl Strategy<Value = Value> {
    atom().prop_recursive(3, 24, 4, |inner| {
        prop_oneof![
            prop::collection::vec(inner, 0..4).prop_map(Value::List),
            prop::collection::vec(atom().prop_filter("hashable", Value::is_hashable), 0..4)
                .prop_map(|xs| Value::set_from(xs).unwrap()),
        ]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn advantages_are_standardized(rewards in prop::collection::vec(0.0f64..1.0, 2..16)) {
        let adv = group_advantages(&rewards, 1e-6).unwrap();
        let g = adv.len() as f64;
        let mean = adv.iter().sum::<f64>() / g;
        prop_assert!(mean.abs() <= 1e-12);
        let m = rewards.iter().sum::<f64>() / g;
        let var = rewards.iter().map(|r| (r - m) * (r - m)).sum::<f64>() / g;
        if var.sqrt() > 1e-6 {
            let std = (adv.iter().map(|a| a * a).sum::<f64>() / g).sqrt();
            prop_assert!((std - 1.0).abs() <= 1e-9, "std {std}");
        }
    }

    #[test]
    fn constant_groups_get_zero_advantage(r in 0.0f64..1.0, g in 2usize..16) {
        let adv = group_advantages(&vec![r; g], 1e-6).unwrap();
        prop_assert!(adv.iter().all(|a| *a == 0.0));
    }

    #[test]
    fn kl_is_nonnegative_and_zero_on_self(
        pairs in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..10)
    ) {
        let (p, q): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        prop_assert!(kl_categorical(&p, &q) >= 0.0);
        prop_assert!(kl_categorical(&p, &p).abs() < 1e-12);
    }

    #[test]
    fn canonical_text_round_trips(v in value()) {
        let text = canonical_serialize(&v);
        let back = parse_canonical(&text).unwrap();
        prop_assert!(matches_truth(&back, &v), "{text}");
        prop_assert_eq!(canonical_serialize(&back), text);
    }

    #[test]
    fn sem_reward_ignores_variable_order(
        correct in prop::collection::vec(any::<bool>(), 1..8),
        seed in any::<u64>()
    ) {
        let (pred, truth, mut vars) = scenario(&correct);
        let base = sem_reward(&pred, &truth, &vars).unwrap();
        // deterministic shuffle from the seed
        let n = vars.len();
        for i in (1..n).rev() {
            let j = (seed.rotate_left(i as u32) % (i as u64 + 1)) as usize;
            vars.swap(i, j);
        }
        prop_assert_eq!(sem_reward(&pred, &truth, &vars).unwrap(), base);
    }

    #[test]
    fn sem_reward_is_monotone(correct in prop::collection::vec(any::<bool>(), 1..8), flip in 0usize..8) {
        let (pred, truth, vars) = scenario(&correct);
        let before = sem_reward(&pred, &truth, &vars).unwrap();
        let mut better = correct.clone();
        let i = flip % better.len();
        better[i] = true;
        let (pred2, _, _) = scenario(&better);
        prop_assert!(sem_reward(&pred2, &truth, &vars).unwrap() >= before);
    }

    #[test]
    fn buffer_matches_fifo_model(ops in prop::collection::vec(0i64..12, 0..60), cap in 1usize..6) {
        let p = parse_program("fn f(x) { y = x return y }").unwrap();
        let mut buf = FailureBuffer::new(cap);
        let mut model: VecDeque<String> = VecDeque::new();
        for x in ops {
            let prompt = AlignmentPrompt::from_trace(&p, &[Value::Int(x)], 100, 0).unwrap();
            let id = prompt.id.clone();
            let out = buf.push(prompt);
            if model.contains(&id) {
                prop_assert_eq!(out, PushOutcome::Duplicate);
            } else {
                model.push_back(id);
                let expect_evict = if model.len() > cap { model.pop_front() } else { None };
                match out {
                    PushOutcome::Added { evicted } => {
                        prop_assert_eq!(evicted.map(|e| e.id), expect_evict)
                    }
                    PushOutcome::Duplicate => prop_assert!(false, "unexpected duplicate"),
                }
            }
            let ids: Vec<String> = buf.iter().map(|e| e.id.clone()).collect();
            prop_assert_eq!(ids, Vec::from(model.clone()));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn formatted_asts_reparse(seed in any::<u64>()) {
        let p = AstGen::new(seed).program();
        if let Err(e) = roundtrip_check(&p) {
            prop_assert!(false, "{}", e);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn tracer_agrees_with_reference(seed in any::<u64>()) {
        let (p, input) = TerminatingGen::new(seed).program();
        if let Err(e) = differential(&p, &input, 1_000_000) {
            prop_assert!(false, "{}", e);
        }
    }

    #[test]
    fn final_values_are_the_last_writes(seed in any::<u64>()) {
        let (p, input) = TerminatingGen::new(seed).program();
        let rec = execute(&p, &input, 1_000_000, TraceMode::Full).unwrap();
        let events = rec.trajectory.as_ref().unwrap();
        let mut scan: BTreeMap<String, Value> =
            p.params.iter().cloned().zip(input.iter().cloned()).collect();
        for ev in events {
            if let (Some(v), Some(val)) = (&ev.defined_variable, &ev.value_written) {
                scan.insert(v.clone(), val.clone());
            }
        }
        prop_assert_eq!(format!("{scan:?}"), format!("{:?}", rec.final_vars));
    }
}

/// Predictions where variable `i` is right iff `correct[i]`.
fn scenario(correct: &[bool]) -> (SemPrediction, BTreeMap<String, Value>, Vec<String>) {
    let vars: Vec<String> = (0..correct.len()).map(|i| format!("v{i}")).collect();
    let truth: BTreeMap<String, Value> = vars
        .iter()
        .enumerate()
        .map(|(i, v)| (v.clone(), Value::Int(i as i64)))
        .collect();
    let pred = SemPrediction {
        variables: vars
            .iter()
            .zip(correct)
            .enumerate()
            .map(|(i, (v, ok))| {
                let val = if *ok { Value::Float(i as f64) } else { Value::Int(-1 - i as i64) };
                (v.clone(), val)
            })
            .collect(),
    };
    (pred, truth, vars)
}

#[test]
fn sem_reward_enumerates_exactly() {
    for n in 1..=6usize {
        for mask in 0u32..(1 << n) {
            let correct: Vec<bool> = (0..n).map(|i| mask & (1 << i) != 0).collect();
            let (pred, truth, vars) = scenario(&correct);
            let r = sem_reward(&pred, &truth, &vars).unwrap();
            assert_eq!(r, Ratio::new(mask.count_ones() as u64, n as u64));
        }
    }
}

#[test]
fn int_and_float_compare_equal_but_sets_never_equal_lists() {
    assert!(values_equal(&Value::Int(2), &Value::Float(2.0)));
    let s = Value::set_from([Value::Int(1)]).unwrap();
    assert!(!values_equal(&s, &Value::List(vec![Value::Int(1)])));
}
