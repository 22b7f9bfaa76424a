//! Helpers shared by integration targets.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use semtrace_core::grpo::{
    sample_rollouts, surrogate_and_grad, GrpoConfig, Policy, PromptKind,
    TemplatePolicy, ValuePredictorPolicy,
};
use semtrace_core::lang::HoleTemplate;
use semtrace_core::Value;

pub const H: f64 = 1e-5;
pub const POINTS: usize = 20;

fn cfg() -> GrpoConfig {
    GrpoConfig {
        clip_eps: 0.2,
        kl_beta: 0.05,
        ..GrpoConfig::default()
    }
}

fn randomize<P: Policy>(p: &mut P, prompt: &str, rng: &mut ChaCha8Rng, scale: f64) {
    for slot in p.logits_mut(prompt).unwrap() {
        for x in slot.iter_mut() {
            *x = rng.random_range(-scale..scale);
        }
    }
}

/// Returns the worst relative error, or `None` when some ratio sits within
/// 1e-3 of a clip boundary (the objective has a kink there).
fn check_point<P: Policy>(base: &P, prompt: &str, rng: &mut ChaCha8Rng) -> Option<f64> {
    let cfg = cfg();
    let mut behaviour = base.clone();
    randomize(&mut behaviour, prompt, rng, 1.0);
    let mut policy = behaviour.clone();
    // move the current policy away so ratios spread across both clip sides
    for slot in policy.logits_mut(prompt).unwrap() {
        for x in slot.iter_mut() {
            *x += rng.random_range(-0.4..0.4);
        }
    }
    let mut reference = base.clone();
    randomize(&mut reference, prompt, rng, 0.5);

    let mut group = sample_rollouts(&behaviour, prompt, PromptKind::CodeGen, 8, rng).unwrap();
    let rewards: Vec<f64> = (0..8).map(|_| f64::from(rng.random_range(0..3u8))).collect();
    group.set_rewards(&rewards, cfg.std_floor).ok()?;

    let lp: Vec<Vec<f64>> = group
        .samples
        .iter()
        .map(|s| policy.logprob(prompt, &s.actions).unwrap())
        .collect();
    let (lo, hi) = (1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
    for (s, l) in group.samples.iter().zip(&lp) {
        for (a, b) in l.iter().zip(&s.logp_old) {
            let r = (a - b).exp();
            if (r - lo).abs() < 1e-3 || (r - hi).abs() < 1e-3 {
                return None;
            }
        }
    }

    let (_, grad, _) = surrogate_and_grad(&policy, &group, &reference, &cfg).unwrap();
    let shape: Vec<usize> = grad.iter().map(Vec::len).collect();
    let mut worst: f64 = 0.0;
    for (t, &n) in shape.iter().enumerate() {
        for k in 0..n {
            let mut plus = policy.clone();
            plus.logits_mut(prompt).unwrap()[t][k] += H;
            let mut minus = policy.clone();
            minus.logits_mut(prompt).unwrap()[t][k] -= H;
            let fp = surrogate_and_grad(&plus, &group, &reference, &cfg).unwrap().0;
            let fm = surrogate_and_grad(&minus, &group, &reference, &cfg).unwrap().0;
            let fd = (fp - fm) / (2.0 * H);
            let a = grad[t][k];
            // absolute floor keeps round-off on near-zero entries from dominating
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    Some(worst)
}

pub fn gradient_check<P: Policy>(base: &P, prompt: &str, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut done = 0;
    let mut worst: f64 = 0.0;
    while done < POINTS {
        if let Some(e) = check_point(base, prompt, &mut rng) {
            worst = worst.max(e);
            done += 1;
        }
    }
    worst
}

pub fn template_policy() -> TemplatePolicy {
    let t = HoleTemplate::new(
        "fn f(x) { y = x __HOLE_1__ 2 return y + __HOLE_2__ }",
        vec![
            vec!["+".into(), "-".into(), "*".into()],
            vec!["0".into(), "1".into(), "2".into(), "3".into()],
        ],
    )
    .unwrap();
    let mut p = TemplatePolicy::default();
    p.register("t", &t).unwrap();
    p
}

pub fn value_policy() -> ValuePredictorPolicy {
    let mut p = ValuePredictorPolicy::default();
    let pool = vec![Value::Int(0), Value::Int(1), Value::Int(5), Value::Null, Value::Bool(true)];
    p.register("a", &["x".into(), "y".into(), "z".into()], pool).unwrap();
    p
}

