//! Group relative policy optimization over tabular policies.
//!
//! Objective for one group of `G` samples with `T` slots each:
//!
//! ```text
//! J = 1/(G*T) * sum_i sum_t min(r_it * A_i, clip(r_it, 1-eps, 1+eps) * A_i)
//!     - beta * sum_t KL(pi_theta(.|t) || pi_ref(.|t))
//! ```
//!
//! with `r_it = exp(logp_theta - logp_old)`. A training step ascends the
//! mean of `J` over all groups in the batch.

pub mod policy;

pub use policy::{
    log_softmax, softmax, table_from_bytes, table_to_bytes, value_pool, JointPolicy, ParamTable,
    Policy, PolicyError, TemplatePolicy, ValuePredictorPolicy,
};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrpoConfig {
    pub group_size: usize,
    pub clip_eps: f64,
    pub kl_beta: f64,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub std_floor: f64,
    /// Groups per optimizer update.
    pub mini_batch: usize,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        GrpoConfig {
            group_size: 8,
            clip_eps: 0.2,
            kl_beta: 1e-3,
            learning_rate: 1e-6,
            optimizer: OptimizerKind::Sgd,
            std_floor: 1e-6,
            mini_batch: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GrpoError {
    #[error("group size must be at least 2, got {0}")]
    GroupTooSmall(usize),
    #[error("no groups to train on")]
    NoGroups,
    #[error("invalid config: {0}")]
    Config(String),
    #[error("group `{prompt}`: {message}")]
    Mismatch { prompt: String, message: String },
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<(), GrpoError> {
        let bad = |m: &str| Err(GrpoError::Config(m.to_string()));
        if self.group_size < 2 {
            return bad("group_size must be at least 2");
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return bad("clip_eps must lie in (0, 1)");
        }
        if !(self.kl_beta >= 0.0 && self.kl_beta.is_finite()) {
            return bad("kl_beta must be a non-negative number");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.std_floor > 0.0 && self.std_floor.is_finite()) {
            return bad("std_floor must be positive");
        }
        if self.mini_batch == 0 {
            return bad("mini_batch must be at least 1");
        }
        if let OptimizerKind::Adam { beta1, beta2, eps } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || eps <= 0.0 {
                return bad("adam betas must lie in [0, 1) and eps must be positive");
            }
        }
        Ok(())
    }
}

/// `(R_i - mean) / max(std, std_floor)` with the population standard
/// deviation; a group of identical rewards gets exactly zero advantages.
pub fn group_advantages(rewards: &[f64], std_floor: f64) -> Result<Vec<f64>, GrpoError> {
    let g = rewards.len();
    if g < 2 {
        return Err(GrpoError::GroupTooSmall(g));
    }
    if rewards.iter().all(|r| *r == rewards[0]) {
        return Ok(vec![0.0; g]);
    }
    let mean = rewards.iter().sum::<f64>() / g as f64;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / g as f64;
    let denom = var.sqrt().max(std_floor);
    Ok(rewards.iter().map(|r| (r - mean) / denom).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PromptKind {
    CodeGen,
    Alignment,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub actions: Vec<usize>,
    /// Per-slot log-probabilities under the sampling policy.
    pub logp_old: Vec<f64>,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutGroup {
    pub prompt: String,
    pub kind: PromptKind,
    pub samples: Vec<Sample>,
    pub advantages: Vec<f64>,
}

impl RolloutGroup {
    pub fn rewards(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.reward).collect()
    }

    pub fn set_rewards(&mut self, rewards: &[f64], std_floor: f64) -> Result<(), GrpoError> {
        for (s, r) in self.samples.iter_mut().zip(rewards) {
            s.reward = *r;
        }
        self.advantages = group_advantages(rewards, std_floor)?;
        Ok(())
    }
}

/// Draws `g` independent samples; rewards and advantages are left for the
/// caller.
pub fn sample_rollouts<P: Policy, R: Rng>(
    policy: &P,
    prompt: &str,
    kind: PromptKind,
    g: usize,
    rng: &mut R,
) -> Result<RolloutGroup, GrpoError> {
    if g < 2 {
        return Err(GrpoError::GroupTooSmall(g));
    }
    let mut samples = Vec::with_capacity(g);
    for _ in 0..g {
        let (actions, logp_old) = policy.sample(prompt, rng)?;
        samples.push(Sample {
            actions,
            logp_old,
            reward: 0.0,
        });
    }
    Ok(RolloutGroup {
        prompt: prompt.to_string(),
        kind,
        samples,
        advantages: Vec::new(),
    })
}

/// `sum_k p_k (log p_k - log q_k)` for `p = softmax(p_logits)`.
pub fn kl_categorical(p_logits: &[f64], q_logits: &[f64]) -> f64 {
    let lp = log_softmax(p_logits);
    let lq = log_softmax(q_logits);
    lp.iter()
        .zip(&lq)
        .map(|(a, b)| a.exp() * (a - b))
        .sum::<f64>()
        .max(0.0)
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GroupMetrics {
    pub mean_ratio: f64,
    pub clip_fraction: f64,
    pub kl: f64,
}

/// Objective, gradient w.r.t. the prompt's logits, and diagnostics.
pub fn surrogate_and_grad<P: Policy>(
    policy: &P,
    group: &RolloutGroup,
    reference: &P,
    cfg: &GrpoConfig,
) -> Result<(f64, Vec<Vec<f64>>, GroupMetrics), GrpoError> {
    let mismatch = |m: &str| GrpoError::Mismatch {
        prompt: group.prompt.clone(),
        message: m.to_string(),
    };
    let slots = policy.slots(&group.prompt)?;
    let t_len = slots.len();
    if group.samples.is_empty() || group.advantages.len() != group.samples.len() {
        return Err(mismatch("advantages do not match samples"));
    }
    let n = (group.samples.len() * t_len) as f64;
    let log_probs: Vec<Vec<f64>> = slots.iter().map(|l| log_softmax(l)).collect();
    let probs: Vec<Vec<f64>> = log_probs
        .iter()
        .map(|l| l.iter().map(|x| x.exp()).collect())
        .collect();
    let mut grad: Vec<Vec<f64>> = slots.iter().map(|l| vec![0.0; l.len()]).collect();
    let mut objective = 0.0;
    let mut ratio_sum = 0.0;
    let mut clipped = 0usize;
    let (lo, hi) = (1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
    for (s, &a) in group.samples.iter().zip(&group.advantages) {
        if s.actions.len() != t_len || s.logp_old.len() != t_len {
            return Err(mismatch("sample length differs from slot count"));
        }
        for t in 0..t_len {
            let act = s.actions[t];
            if act >= slots[t].len() {
                return Err(mismatch("action out of range"));
            }
            let r = (log_probs[t][act] - s.logp_old[t]).exp();
            ratio_sum += r;
            let active_clip = (a > 0.0 && r > hi) || (a < 0.0 && r < lo);
            if active_clip {
                clipped += 1;
                objective += r.clamp(lo, hi) * a;
            } else {
                objective += r * a;
                // d(r*A)/dlogits = A * r * (onehot - softmax)
                let w = a * r / n;
                for (k, g) in grad[t].iter_mut().enumerate() {
                    let onehot = if k == act { 1.0 } else { 0.0 };
                    *g += w * (onehot - probs[t][k]);
                }
            }
        }
    }
    objective /= n;

    let mut kl_total = 0.0;
    for t in 0..t_len {
        let zeros;
        let q = match reference.logits(&group.prompt) {
            Some(r) if r.len() == t_len && r[t].len() == slots[t].len() => &r[t],
            _ => {
                zeros = vec![0.0; slots[t].len()];
                &zeros
            }
        };
        let lq = log_softmax(q);
        let kl: f64 = probs[t]
            .iter()
            .zip(&log_probs[t])
            .zip(&lq)
            .map(|((p, lp), lq)| p * (lp - lq))
            .sum();
        kl_total += kl;
        // d KL / d logit_k = p_k (log p_k - log q_k - KL)
        for k in 0..slots[t].len() {
            grad[t][k] -= cfg.kl_beta * probs[t][k] * (log_probs[t][k] - lq[k] - kl);
        }
    }
    objective -= cfg.kl_beta * kl_total;
    Ok((
        objective,
        grad,
        GroupMetrics {
            mean_ratio: ratio_sum / n,
            clip_fraction: clipped as f64 / n,
            kl: kl_total.max(0.0),
        },
    ))
}

/// Optimizer state; updates ascend the objective.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub t: u64,
    pub m: ParamTable,
    pub v: ParamTable,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Optimizer {
            kind,
            lr,
            t: 0,
            m: ParamTable::new(),
            v: ParamTable::new(),
        }
    }

    pub fn forget(&mut self, prompt: &str) {
        self.m.remove(prompt);
        self.v.remove(prompt);
    }

    pub fn apply<P: Policy>(&mut self, policy: &mut P, grads: &[(String, Vec<Vec<f64>>)]) {
        self.t += 1;
        for (prompt, g) in grads {
            let Some(theta) = policy.logits_mut(prompt) else {
                continue;
            };
            match self.kind {
                OptimizerKind::Sgd => {
                    for (row, grow) in theta.iter_mut().zip(g) {
                        for (x, d) in row.iter_mut().zip(grow) {
                            *x += self.lr * d;
                        }
                    }
                }
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let zeros = || g.iter().map(|r| vec![0.0; r.len()]).collect::<Vec<_>>();
                    let m = self.m.entry(prompt.clone()).or_insert_with(zeros);
                    let v = self.v.entry(prompt.clone()).or_insert_with(zeros);
                    let c1 = 1.0 - beta1.powi(self.t as i32);
                    let c2 = 1.0 - beta2.powi(self.t as i32);
                    for (((row, grow), mrow), vrow) in theta.iter_mut().zip(g).zip(m).zip(v) {
                        for (((x, d), mk), vk) in
                            row.iter_mut().zip(grow).zip(mrow.iter_mut()).zip(vrow.iter_mut())
                        {
                            *mk = beta1 * *mk + (1.0 - beta1) * d;
                            *vk = beta2 * *vk + (1.0 - beta2) * d * d;
                            *x += self.lr * (*mk / c1) / ((*vk / c2).sqrt() + eps);
                        }
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StepMetrics {
    /// Negative mean objective before the update.
    pub loss: f64,
    pub kl: f64,
    pub clip_fraction: f64,
    pub mean_ratio: f64,
    pub mean_r_gen: Option<f64>,
    pub mean_r_sem: Option<f64>,
    pub updates: usize,
}

/// One pass over `groups` in mini-batches of `cfg.mini_batch` groups, one
/// optimizer update per mini-batch. Code and alignment groups are weighted
/// alike.
pub fn train_step<P: Policy>(
    policy: &mut P,
    groups: &[RolloutGroup],
    reference: &P,
    cfg: &GrpoConfig,
    opt: &mut Optimizer,
) -> Result<StepMetrics, GrpoError> {
    if groups.is_empty() {
        return Err(GrpoError::NoGroups);
    }
    let mut m = StepMetrics::default();
    for chunk in groups.chunks(cfg.mini_batch.max(1)) {
        let snapshot: &P = policy;
        let results = chunk
            .par_iter()
            .map(|g| surrogate_and_grad(snapshot, g, reference, cfg))
            .collect::<Result<Vec<_>, _>>()?;
        let scale = 1.0 / chunk.len() as f64;
        let mut grads = Vec::with_capacity(chunk.len());
        for (g, (obj, grad, gm)) in chunk.iter().zip(results) {
            m.loss -= obj;
            m.kl += gm.kl;
            m.clip_fraction += gm.clip_fraction;
            m.mean_ratio += gm.mean_ratio;
            let grad = grad
                .into_iter()
                .map(|row| row.into_iter().map(|x| x * scale).collect())
                .collect();
            grads.push((g.prompt.clone(), grad));
        }
        opt.apply(policy, &grads);
        m.updates += 1;
    }
    let n = groups.len() as f64;
    m.loss /= n;
    m.kl /= n;
    m.clip_fraction /= n;
    m.mean_ratio /= n;
    let mean_reward = |kind| {
        let rs: Vec<f64> = groups
            .iter()
            .filter(|g| g.kind == kind)
            .flat_map(|g| g.samples.iter().map(|s| s.reward))
            .collect();
        (!rs.is_empty()).then(|| rs.iter().sum::<f64>() / rs.len() as f64)
    };
    m.mean_r_gen = mean_reward(PromptKind::CodeGen);
    m.mean_r_sem = mean_reward(PromptKind::Alignment);
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::digest::stream_rng;
    use crate::lang::HoleTemplate;

    fn bandit(n: usize) -> TemplatePolicy {
        let t = HoleTemplate::new(
            "fn f() { return __HOLE_1__ }",
            vec![(0..n).map(|i| i.to_string()).collect()],
        )
        .unwrap();
        let mut p = TemplatePolicy::default();
        p.register("b", &t).unwrap();
        p
    }

    #[test]
    fn advantage_examples() {
        let a = group_advantages(&[1.0, 0.0, 0.0, 0.0], 1e-6).unwrap();
        // mean 0.25, std sqrt(0.1875)
        let sd = 0.1875f64.sqrt();
        assert!((a[0] - 0.75 / sd).abs() < 1e-12);
        assert!((a[1] + 0.25 / sd).abs() < 1e-12);
        assert!((a[0] - 1.7320508).abs() < 1e-6);
        assert_eq!(group_advantages(&[0.5; 3], 1e-6).unwrap(), vec![0.0; 3]);
        assert_eq!(group_advantages(&[1.0], 1e-6), Err(GrpoError::GroupTooSmall(1)));
    }

    #[test]
    fn kl_examples() {
        let p = [0.75f64.ln(), 0.25f64.ln()];
        let expected = 0.75 * 1.5f64.ln() + 0.25 * 0.5f64.ln();
        assert!((kl_categorical(&p, &[0.0, 0.0]) - expected).abs() < 1e-12);
        assert!((expected - 0.130812).abs() < 1e-6);
        assert_eq!(kl_categorical(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]), 0.0);
    }

    #[test]
    fn on_policy_ratio_is_one_and_objective_is_mean_advantage() {
        let p = bandit(4);
        let mut rng = stream_rng(0, "t", 0, 0);
        let mut g = sample_rollouts(&p, "b", PromptKind::CodeGen, 8, &mut rng).unwrap();
        let rewards: Vec<f64> = (0..8).map(|i| (i % 3) as f64).collect();
        g.set_rewards(&rewards, 1e-6).unwrap();
        let cfg = GrpoConfig::default();
        let (obj, grad, m) = surrogate_and_grad(&p, &g, &p, &cfg).unwrap();
        assert_eq!(m.mean_ratio, 1.0);
        assert_eq!(m.kl, 0.0);
        assert_eq!(m.clip_fraction, 0.0);
        let mean_a = g.advantages.iter().sum::<f64>() / 8.0;
        assert!((obj - mean_a).abs() < 1e-12);
        let mut expect = [0.0; 4];
        for (s, a) in g.samples.iter().zip(&g.advantages) {
            let gl = p.grad_logprob("b", &s.actions).unwrap();
            for k in 0..4 {
                expect[k] += a * gl[0][k] / 8.0;
            }
        }
        for k in 0..4 {
            assert!((grad[0][k] - expect[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn clipped_branch_contributes_constant() {
        let mut p = bandit(2);
        let g = RolloutGroup {
            prompt: "b".into(),
            kind: PromptKind::CodeGen,
            samples: vec![Sample {
                actions: vec![0],
                logp_old: vec![(1.0f64 / 3.0).ln()],
                reward: 1.0,
            }],
            advantages: vec![2.0],
        };
        // current p(0) = 0.5, old 1/3 -> ratio 1.5
        p.params.get_mut("b").unwrap()[0] = vec![0.0, 0.0];
        let cfg = GrpoConfig {
            kl_beta: 0.0,
            ..GrpoConfig::default()
        };
        let (obj, grad, m) = surrogate_and_grad(&p, &g, &p, &cfg).unwrap();
        assert!((obj - 1.2 * 2.0).abs() < 1e-12);
        assert_eq!(grad[0], vec![0.0, 0.0]);
        assert_eq!(m.clip_fraction, 1.0);
    }

    #[test]
    fn positive_advantage_sample_gains_probability() {
        let mut p = bandit(4);
        let reference = p.snapshot();
        let mut rng = stream_rng(5, "t", 0, 0);
        let mut g = sample_rollouts(&p, "b", PromptKind::CodeGen, 8, &mut rng).unwrap();
        let target = g.samples[0].actions.clone();
        let rewards: Vec<f64> = g
            .samples
            .iter()
            .map(|s| f64::from(u8::from(s.actions == target)))
            .collect();
        g.set_rewards(&rewards, 1e-6).unwrap();
        let before = p.logprob("b", &target).unwrap()[0];
        let cfg = GrpoConfig {
            learning_rate: 0.1,
            ..GrpoConfig::default()
        };
        let mut opt = Optimizer::new(OptimizerKind::Sgd, cfg.learning_rate);
        let m = train_step(&mut p, &[g], &reference, &cfg, &mut opt).unwrap();
        assert!(p.logprob("b", &target).unwrap()[0] > before);
        assert!(m.mean_r_gen.is_some() && m.mean_r_sem.is_none());
    }

    #[test]
    fn degenerate_group_only_feels_kl() {
        let mut p = bandit(3);
        p.params.get_mut("b").unwrap()[0] = vec![0.2, -0.1, 0.4];
        let mut rng = stream_rng(2, "t", 0, 0);
        let mut g = sample_rollouts(&p, "b", PromptKind::CodeGen, 4, &mut rng).unwrap();
        g.set_rewards(&[1.0; 4], 1e-6).unwrap();
        let cfg = GrpoConfig {
            kl_beta: 0.0,
            ..GrpoConfig::default()
        };
        let (_, grad, _) = surrogate_and_grad(&p, &g, &bandit(3), &cfg).unwrap();
        assert_eq!(grad[0], vec![0.0; 3]);
    }

    #[test]
    fn config_validation() {
        assert!(GrpoConfig::default().validate().is_ok());
        for bad in [
            GrpoConfig { group_size: 1, ..GrpoConfig::default() },
            GrpoConfig { clip_eps: 1.0, ..GrpoConfig::default() },
            GrpoConfig { learning_rate: 0.0, ..GrpoConfig::default() },
            GrpoConfig { mini_batch: 0, ..GrpoConfig::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
