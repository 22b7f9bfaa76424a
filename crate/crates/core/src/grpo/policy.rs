//! Tabular categorical policies.
//!
//! Every prompt owns a list of slots; each slot is an independent categorical
//! distribution parameterized by a logit vector. A code-generation prompt has
//! one slot per template hole, an alignment prompt one slot per target
//! variable over a shared candidate value pool.

use std::collections::BTreeMap;
use std::io;

use rand::Rng;

use crate::lang::{literal_constants, HoleTemplate, Program, TemplateError};
use crate::persist::{put_string, Reader};
use crate::rewards::SemPrediction;
use crate::tracer::literal_value;
use crate::value::{canonical_cmp, values_equal, Value};

/// Prompt id → per-slot logits.
pub type ParamTable = BTreeMap<String, Vec<Vec<f64>>>;

const MAGIC: &[u8; 8] = b"SEMTPOL1";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PolicyError {
    #[error("prompt `{0}` is not registered")]
    UnknownPrompt(String),
    #[error("prompt `{prompt}`: expected {expected} actions, got {got}")]
    ActionCount {
        prompt: String,
        expected: usize,
        got: usize,
    },
    #[error("prompt `{prompt}`: action {action} out of range for slot {slot}")]
    ActionRange {
        prompt: String,
        slot: usize,
        action: usize,
    },
    #[error("prompt `{0}` has no slots")]
    NoSlots(String),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

/// Shared behavior of the tabular policies.
pub trait Policy: Clone + Send + Sync {
    fn logits(&self, prompt: &str) -> Option<&[Vec<f64>]>;
    fn logits_mut(&mut self, prompt: &str) -> Option<&mut [Vec<f64>]>;

    fn slots(&self, prompt: &str) -> Result<&[Vec<f64>], PolicyError> {
        self.logits(prompt)
            .ok_or_else(|| PolicyError::UnknownPrompt(prompt.to_string()))
    }

    /// Draws one action per slot by inverse CDF.
    fn sample<R: Rng>(&self, prompt: &str, rng: &mut R) -> Result<(Vec<usize>, Vec<f64>), PolicyError> {
        let slots = self.slots(prompt)?;
        let mut actions = Vec::with_capacity(slots.len());
        for logits in slots {
            let probs = softmax(logits);
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = probs.len() - 1;
            for (k, p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    pick = k;
                    break;
                }
            }
            actions.push(pick);
        }
        let lp = self.logprob(prompt, &actions)?;
        Ok((actions, lp))
    }

    fn logprob(&self, prompt: &str, actions: &[usize]) -> Result<Vec<f64>, PolicyError> {
        let slots = self.slots(prompt)?;
        check_actions(prompt, slots, actions)?;
        Ok(slots
            .iter()
            .zip(actions)
            .map(|(l, &a)| log_softmax(l)[a])
            .collect())
    }

    /// Gradient of the summed log-probability: `onehot(a) - softmax` per slot.
    fn grad_logprob(&self, prompt: &str, actions: &[usize]) -> Result<Vec<Vec<f64>>, PolicyError> {
        let slots = self.slots(prompt)?;
        check_actions(prompt, slots, actions)?;
        Ok(slots
            .iter()
            .zip(actions)
            .map(|(l, &a)| {
                let mut g: Vec<f64> = softmax(l).into_iter().map(|p| -p).collect();
                g[a] += 1.0;
                g
            })
            .collect())
    }

    fn snapshot(&self) -> Self {
        self.clone()
    }
}

fn check_actions(prompt: &str, slots: &[Vec<f64>], actions: &[usize]) -> Result<(), PolicyError> {
    if slots.len() != actions.len() {
        return Err(PolicyError::ActionCount {
            prompt: prompt.to_string(),
            expected: slots.len(),
            got: actions.len(),
        });
    }
    for (slot, (l, &a)) in slots.iter().zip(actions).enumerate() {
        if a >= l.len() {
            return Err(PolicyError::ActionRange {
                prompt: prompt.to_string(),
                slot,
                action: a,
            });
        }
    }
    Ok(())
}

/// Code-generation policy: one categorical per template hole.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TemplatePolicy {
    pub params: ParamTable,
    templates: BTreeMap<String, HoleTemplate>,
}

impl TemplatePolicy {
    /// Registers a template with uniform (zero) logits. Re-registering keeps
    /// existing parameters.
    pub fn register(&mut self, id: &str, t: &HoleTemplate) -> Result<(), PolicyError> {
        t.validate()?;
        if t.hole_count() == 0 {
            return Err(PolicyError::NoSlots(id.to_string()));
        }
        self.params
            .entry(id.to_string())
            .or_insert_with(|| t.vocab_sizes().iter().map(|&n| vec![0.0; n]).collect());
        self.templates.insert(id.to_string(), t.clone());
        Ok(())
    }

    pub fn decode(&self, id: &str, actions: &[usize]) -> Result<Program, PolicyError> {
        let t = self
            .templates
            .get(id)
            .ok_or_else(|| PolicyError::UnknownPrompt(id.to_string()))?;
        Ok(t.instantiate(actions)?)
    }
}

impl Policy for TemplatePolicy {
    fn logits(&self, prompt: &str) -> Option<&[Vec<f64>]> {
        self.params.get(prompt).map(Vec::as_slice)
    }
    fn logits_mut(&mut self, prompt: &str) -> Option<&mut [Vec<f64>]> {
        self.params.get_mut(prompt).map(Vec::as_mut_slice)
    }
}

/// Candidate values for an alignment prompt: literals of the program, atomic
/// values inside the input, a few fixed constants and the truth values,
/// deduplicated and in canonical order.
pub fn value_pool(p: &Program, input: &[Value], truth: &[Value]) -> Vec<Value> {
    fn atoms(out: &mut Vec<Value>, v: &Value) {
        match v {
            Value::List(xs) | Value::Set(xs) => xs.iter().for_each(|x| atoms(out, x)),
            other => out.push(other.clone()),
        }
    }
    let mut pool: Vec<Value> = literal_constants(p).iter().map(literal_value).collect();
    input.iter().for_each(|v| atoms(&mut pool, v));
    pool.extend([
        Value::Int(-1),
        Value::Int(0),
        Value::Int(1),
        Value::Int(2),
        Value::Bool(true),
        Value::Bool(false),
        Value::Null,
        Value::Float(f64::INFINITY),
    ]);
    pool.extend(truth.iter().cloned());
    pool.sort_by(canonical_cmp);
    pool.dedup_by(|a, b| values_equal(a, b));
    pool
}

#[derive(Debug, Clone, PartialEq)]
struct AlignSlots {
    variables: Vec<String>,
    pool: Vec<Value>,
}

/// Alignment policy: one categorical per target variable over the prompt's
/// candidate pool.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValuePredictorPolicy {
    pub params: ParamTable,
    prompts: BTreeMap<String, AlignSlots>,
}

impl ValuePredictorPolicy {
    pub fn register(
        &mut self,
        id: &str,
        variables: &[String],
        pool: Vec<Value>,
    ) -> Result<(), PolicyError> {
        if variables.is_empty() || pool.is_empty() {
            return Err(PolicyError::NoSlots(id.to_string()));
        }
        self.params
            .entry(id.to_string())
            .or_insert_with(|| vec![vec![0.0; pool.len()]; variables.len()]);
        self.prompts.insert(
            id.to_string(),
            AlignSlots {
                variables: variables.to_vec(),
                pool,
            },
        );
        Ok(())
    }

    pub fn unregister(&mut self, id: &str) {
        self.params.remove(id);
        self.prompts.remove(id);
    }

    pub fn pool(&self, id: &str) -> Option<&[Value]> {
        self.prompts.get(id).map(|s| s.pool.as_slice())
    }

    pub fn decode(&self, id: &str, actions: &[usize]) -> Result<SemPrediction, PolicyError> {
        let s = self
            .prompts
            .get(id)
            .ok_or_else(|| PolicyError::UnknownPrompt(id.to_string()))?;
        check_actions(id, self.slots(id)?, actions)?;
        Ok(SemPrediction {
            variables: s
                .variables
                .iter()
                .zip(actions)
                .map(|(v, &a)| (v.clone(), s.pool[a].clone()))
                .collect(),
        })
    }
}

impl Policy for ValuePredictorPolicy {
    fn logits(&self, prompt: &str) -> Option<&[Vec<f64>]> {
        self.params.get(prompt).map(Vec::as_slice)
    }
    fn logits_mut(&mut self, prompt: &str) -> Option<&mut [Vec<f64>]> {
        self.params.get_mut(prompt).map(Vec::as_mut_slice)
    }
}

/// Both policies behind one parameter namespace; code prompts are looked
/// up first.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct JointPolicy {
    pub code: TemplatePolicy,
    pub align: ValuePredictorPolicy,
}

impl Policy for JointPolicy {
    fn logits(&self, prompt: &str) -> Option<&[Vec<f64>]> {
        self.code.logits(prompt).or_else(|| self.align.logits(prompt))
    }
    fn logits_mut(&mut self, prompt: &str) -> Option<&mut [Vec<f64>]> {
        if self.code.params.contains_key(prompt) {
            self.code.logits_mut(prompt)
        } else {
            self.align.logits_mut(prompt)
        }
    }
}

/// Binary layout, all integers little-endian:
/// `"SEMTPOL1"`, u64 entry count, then per entry in (prompt, slot) order:
/// u32 key length, key bytes `"<prompt>#<slot>"`, u32 dimension, that many f64.
pub fn table_to_bytes(t: &ParamTable) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    let count: usize = t.values().map(Vec::len).sum();
    out.extend_from_slice(&(count as u64).to_le_bytes());
    for (prompt, slots) in t {
        for (i, logits) in slots.iter().enumerate() {
            put_string(&mut out, &format!("{prompt}#{i}"));
            out.extend_from_slice(&(logits.len() as u32).to_le_bytes());
            for l in logits {
                out.extend_from_slice(&l.to_le_bytes());
            }
        }
    }
    out
}

pub fn table_from_bytes(bytes: &[u8]) -> io::Result<ParamTable> {
    let bad = |m: &str| io::Error::new(io::ErrorKind::InvalidData, m.to_string());
    let mut r = Reader::new(bytes);
    if r.take(8)? != MAGIC {
        return Err(bad("bad magic in policy file"));
    }
    let count = r.u64()?;
    let mut t = ParamTable::new();
    for _ in 0..count {
        let key = r.string()?;
        let (prompt, slot) = key
            .rsplit_once('#')
            .ok_or_else(|| bad("policy key without slot"))?;
        let slot: usize = slot.parse().map_err(|_| bad("bad slot index"))?;
        let dim = r.u32()? as usize;
        let logits = (0..dim).map(|_| r.f64()).collect::<io::Result<Vec<_>>>()?;
        let slots = t.entry(prompt.to_string()).or_default();
        if slots.len() != slot {
            return Err(bad("policy slots out of order"));
        }
        slots.push(logits);
    }
    if !r.at_end() {
        return Err(bad("trailing bytes in policy file"));
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::digest::stream_rng;
    use crate::lang::parse_program;

    fn one_hole() -> HoleTemplate {
        HoleTemplate::new(
            "fn f(x) { return x + __HOLE_1__ }",
            vec![vec!["0".into(), "1".into(), "2".into(), "3".into()]],
        )
        .unwrap()
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let mut p = TemplatePolicy::default();
        p.register("t", &one_hole()).unwrap();
        let draw = |seed| {
            let mut rng = stream_rng(seed, "test", 0, 0);
            (0..8)
                .map(|_| p.sample("t", &mut rng).unwrap().0[0])
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(7), draw(7));
        assert_ne!(draw(7), draw(8));
    }

    #[test]
    fn logprob_reproduces_sampled_values() {
        let mut p = TemplatePolicy::default();
        p.register("t", &one_hole()).unwrap();
        p.params.get_mut("t").unwrap()[0] = vec![0.3, -1.2, 2.0, 0.1];
        let mut rng = stream_rng(1, "test", 0, 0);
        for _ in 0..50 {
            let (a, lp) = p.sample("t", &mut rng).unwrap();
            assert_eq!(p.logprob("t", &a).unwrap(), lp);
        }
        let total: f64 = (0..4).map(|a| p.logprob("t", &[a]).unwrap()[0].exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empirical_frequencies_match_softmax() {
        let mut p = TemplatePolicy::default();
        p.register("t", &one_hole()).unwrap();
        let logits = vec![0.5, -0.5, 1.5, 0.0];
        p.params.get_mut("t").unwrap()[0] = logits.clone();
        let probs = softmax(&logits);
        let n = 100_000usize;
        let mut counts = [0usize; 4];
        let mut rng = stream_rng(3, "freq", 0, 0);
        for _ in 0..n {
            counts[p.sample("t", &mut rng).unwrap().0[0]] += 1;
        }
        for k in 0..4 {
            let mean = n as f64 * probs[k];
            let sd = (n as f64 * probs[k] * (1.0 - probs[k])).sqrt();
            assert!((counts[k] as f64 - mean).abs() <= 3.0 * sd, "action {k}");
        }
    }

    #[test]
    fn value_predictor_decodes_all_variables() {
        let prog = parse_program("fn f(xs) { a = 5 b = [1] c = \"s\" return a }").unwrap();
        let truth = [Value::Int(5), Value::List(vec![Value::Int(1)]), Value::Str("s".into())];
        let pool = value_pool(&prog, &[Value::List(vec![Value::Int(9)])], &truth);
        let vars: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let mut p = ValuePredictorPolicy::default();
        p.register("q", &vars, pool.clone()).unwrap();
        let mut rng = stream_rng(0, "vp", 0, 0);
        let (a, _) = p.sample("q", &mut rng).unwrap();
        let pred = p.decode("q", &a).unwrap();
        assert_eq!(pred.variables.len(), 3);
        for t in &truth {
            assert!(pool.iter().any(|v| v == t));
        }
        assert!(pool.contains(&Value::Int(9)));
        assert!(pool.contains(&Value::Float(f64::INFINITY)));
        assert!(pool.windows(2).all(|w| canonical_cmp(&w[0], &w[1]).is_lt()));
    }

    #[test]
    fn binary_round_trip() {
        let mut t = ParamTable::new();
        t.insert("a".into(), (0..12).map(|i| vec![i as f64, -0.5]).collect());
        t.insert("b#x".into(), vec![vec![1e-300, f64::MAX, 3.0]]);
        let bytes = table_to_bytes(&t);
        assert_eq!(&bytes[..8], b"SEMTPOL1");
        assert_eq!(table_from_bytes(&bytes).unwrap(), t);
        assert!(table_from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
