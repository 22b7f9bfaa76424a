//! Mixed-batch construction and the end-to-end training loop.
//!
//! Each step draws `min(|buffer|, floor(align_ratio * B))` alignment prompts
//! and fills the rest of the batch with code-generation prompts, samples a
//! group per prompt, scores it, takes one GRPO pass, and finally harvests
//! the failed code samples into the buffer.

mod buffer;

pub use buffer::{
    build_alignment_prompt, harvest_failures, prompt_id, AlignmentPrompt, Candidate,
    FailureBuffer, HarvestStats, Ineligible, PushOutcome,
};

use std::fs::{self, File};
use std::path::{Path, PathBuf};

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{align_count, ConfigError, RunConfig};
use crate::dataset::{load_problems, DatasetError, ProblemRecord};
use crate::digest::stream_rng;
use crate::grpo::{
    sample_rollouts, table_from_bytes, table_to_bytes, train_step, value_pool, GrpoConfig,
    GrpoError, JointPolicy, Optimizer, PromptKind, RolloutGroup,
};
use crate::persist::write_atomic;
use crate::rewards::{gen_reward, ratio_to_f64, sem_reward, GenRewardReport};

#[derive(Debug, thiserror::Error)]
pub enum SchedError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Grpo(#[from] GrpoError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("run directory {0} is locked by another process")]
    Locked(String),
    #[error("run directory {0} already holds a run; use --resume")]
    RunExists(String),
    #[error("batch size must be at least 1")]
    EmptyBatch,
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> SchedError + '_ {
    move |e| SchedError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Draws problem indices without replacement, reshuffling each epoch from
/// `(seed, epoch)` so the position alone determines the permutation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeSampler {
    pub seed: u64,
    pub n: usize,
    pub epoch: u64,
    pub cursor: usize,
    #[serde(skip)]
    perm: Vec<usize>,
}

impl CodeSampler {
    pub fn new(seed: u64, n: usize) -> Self {
        CodeSampler::at(seed, n, 0, 0)
    }

    pub fn at(seed: u64, n: usize, epoch: u64, cursor: usize) -> Self {
        let mut s = CodeSampler {
            seed,
            n,
            epoch,
            cursor,
            perm: Vec::new(),
        };
        s.shuffle();
        s
    }

    fn shuffle(&mut self) {
        self.perm = (0..self.n).collect();
        self.perm
            .shuffle(&mut stream_rng(self.seed, "epoch", self.epoch, 0));
    }

    pub fn next_index(&mut self) -> usize {
        if self.cursor >= self.n {
            self.epoch += 1;
            self.cursor = 0;
            self.shuffle();
        }
        let i = self.perm[self.cursor];
        self.cursor += 1;
        i
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixedBatch {
    pub step: u64,
    /// Indices into the problem list.
    pub code: Vec<usize>,
    /// Buffer prompt ids.
    pub align: Vec<String>,
}

pub fn mix_batch<R: Rng>(
    sampler: &mut CodeSampler,
    buffer: &FailureBuffer,
    batch_size: usize,
    align_ratio: f64,
    step: u64,
    rng: &mut R,
) -> Result<MixedBatch, SchedError> {
    if batch_size == 0 {
        return Err(SchedError::EmptyBatch);
    }
    let k = align_count(align_ratio, batch_size).min(batch_size);
    let m = k.min(buffer.len());
    let align = index::sample(rng, buffer.len(), m)
        .into_iter()
        .map(|i| buffer.get(i).expect("index in range").id.clone())
        .collect();
    let code = (0..batch_size - m).map(|_| sampler.next_index()).collect();
    Ok(MixedBatch { step, code, align })
}

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub loss: f64,
    pub kl: f64,
    pub clip_fraction: f64,
    pub mean_ratio: f64,
    #[serde(rename = "mean_R_gen")]
    pub mean_r_gen: Option<f64>,
    #[serde(rename = "mean_R_sem")]
    pub mean_r_sem: Option<f64>,
    /// Buffer size after harvesting.
    pub buffer_size: usize,
    /// Buffer size when the batch was drawn.
    pub buffer_size_at_batch: usize,
    pub n_align_in_batch: usize,
    pub n_code_in_batch: usize,
    pub harvested: usize,
    pub duplicates: usize,
    pub ineligible: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointState {
    step: u64,
    epoch: u64,
    cursor: usize,
    optimizer_t: u64,
}

/// In-memory training state.
pub struct Trainer {
    pub cfg: RunConfig,
    pub problems: Vec<ProblemRecord>,
    pub policy: JointPolicy,
    reference: JointPolicy,
    grpo: GrpoConfig,
    pub opt: Optimizer,
    pub buffer: FailureBuffer,
    pub sampler: CodeSampler,
    /// Steps completed.
    pub step: u64,
}

enum Scored {
    Code {
        group: RolloutGroup,
        problem: usize,
        programs: Vec<Option<crate::lang::Program>>,
        reports: Vec<Option<GenRewardReport>>,
    },
    Align(RolloutGroup),
}

impl Trainer {
    pub fn new(cfg: RunConfig, problems: Vec<ProblemRecord>) -> Result<Trainer, SchedError> {
        cfg.validate()?;
        let mut policy = JointPolicy::default();
        for p in &problems {
            policy
                .code
                .register(&p.id, &p.template)
                .map_err(GrpoError::from)?;
        }
        let grpo = cfg.grpo();
        Ok(Trainer {
            reference: policy.clone(),
            policy,
            opt: Optimizer::new(grpo.optimizer, grpo.learning_rate),
            grpo,
            buffer: FailureBuffer::new(cfg.buffer_capacity),
            sampler: CodeSampler::new(cfg.seed, problems.len()),
            step: 0,
            problems,
            cfg,
        })
    }

    /// Runs one training step and returns its metrics record.
    pub fn step(&mut self) -> Result<StepRecord, SchedError> {
        let step = self.step + 1;
        let seed = self.cfg.seed;
        let buffer_size_at_batch = self.buffer.len();
        let batch = mix_batch(
            &mut self.sampler,
            &self.buffer,
            self.cfg.batch_size,
            self.cfg.align_ratio,
            step,
            &mut stream_rng(seed, "batch", step, 0),
        )?;
        let g = self.cfg.group_size;
        let budget = self.cfg.step_budget;
        let std_floor = self.cfg.std_floor;

        let jobs: Vec<(usize, Option<usize>, Option<String>)> = batch
            .align
            .iter()
            .map(|id| (None, Some(id.clone())))
            .chain(batch.code.iter().map(|&i| (Some(i), None)))
            .enumerate()
            .map(|(pos, (c, a))| (pos, c, a))
            .collect();
        let policy = &self.policy;
        let problems = &self.problems;
        let buffer = &self.buffer;
        let scored = jobs
            .par_iter()
            .map(|(pos, code, align)| -> Result<Scored, SchedError> {
                let mut rng = stream_rng(seed, "rollout", step, *pos as u64);
                if let Some(i) = code {
                    let prob = &problems[*i];
                    let mut group =
                        sample_rollouts(policy, &prob.id, PromptKind::CodeGen, g, &mut rng)?;
                    let mut programs = Vec::with_capacity(g);
                    let mut reports = Vec::with_capacity(g);
                    let mut rewards = Vec::with_capacity(g);
                    for s in &group.samples {
                        let prog = policy.code.decode(&prob.id, &s.actions).ok();
                        let rep = prog
                            .as_ref()
                            .and_then(|p| gen_reward(p, &prob.tests, budget).ok());
                        rewards.push(rep.as_ref().map_or(0.0, |r| f64::from(r.reward)));
                        programs.push(prog);
                        reports.push(rep);
                    }
                    group.set_rewards(&rewards, std_floor)?;
                    Ok(Scored::Code {
                        group,
                        problem: *i,
                        programs,
                        reports,
                    })
                } else {
                    let id = align.as_deref().expect("align job");
                    let q = buffer.find(id).expect("sampled from buffer");
                    let mut group =
                        sample_rollouts(policy, id, PromptKind::Alignment, g, &mut rng)?;
                    let rewards: Vec<f64> = group
                        .samples
                        .iter()
                        .map(|s| {
                            policy
                                .align
                                .decode(id, &s.actions)
                                .ok()
                                .and_then(|pred| sem_reward(&pred, &q.truth, &q.variables).ok())
                                .map_or(0.0, ratio_to_f64)
                        })
                        .collect();
                    group.set_rewards(&rewards, std_floor)?;
                    Ok(Scored::Align(group))
                }
            })
            .collect::<Result<Vec<_>, _>>()?;

        let groups: Vec<RolloutGroup> = scored
            .iter()
            .map(|s| match s {
                Scored::Code { group, .. } | Scored::Align(group) => group.clone(),
            })
            .collect();
        let m = train_step(
            &mut self.policy,
            &groups,
            &self.reference,
            &self.grpo,
            &mut self.opt,
        )?;

        let mut stats = HarvestStats::default();
        for s in &scored {
            if let Scored::Code {
                problem,
                programs,
                reports,
                ..
            } = s
            {
                let cands: Vec<Candidate> = programs
                    .iter()
                    .zip(reports)
                    .map(|(p, r)| Candidate {
                        program: p.as_ref(),
                        report: r.as_ref(),
                    })
                    .collect();
                harvest_failures(
                    &mut self.buffer,
                    &cands,
                    &self.problems[*problem].tests,
                    budget,
                    step,
                    &mut stats,
                );
            }
        }
        for e in &stats.evicted {
            self.policy.align.unregister(&e.id);
            self.opt.forget(&e.id);
        }
        for q in &stats.added {
            self.register_align(q)?;
        }
        self.step = step;
        Ok(StepRecord {
            step,
            loss: m.loss,
            kl: m.kl,
            clip_fraction: m.clip_fraction,
            mean_ratio: m.mean_ratio,
            mean_r_gen: m.mean_r_gen,
            mean_r_sem: m.mean_r_sem,
            buffer_size: self.buffer.len(),
            buffer_size_at_batch,
            n_align_in_batch: batch.align.len(),
            n_code_in_batch: batch.code.len(),
            harvested: stats.added.len(),
            duplicates: stats.duplicates,
            ineligible: stats.ineligible,
        })
    }

    fn register_align(&mut self, q: &AlignmentPrompt) -> Result<(), SchedError> {
        let pool = value_pool(&q.program, &q.input, &q.truth_values());
        self.policy
            .align
            .register(&q.id, &q.variables, pool)
            .map_err(GrpoError::from)?;
        Ok(())
    }

    pub fn save_checkpoint(&self, dir: &Path) -> Result<(), SchedError> {
        let parent = dir.parent().unwrap_or(Path::new("."));
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let tmp = parent.join(format!(".{name}.tmp"));
        if tmp.exists() {
            fs::remove_dir_all(&tmp).map_err(io_err(&tmp))?;
        }
        fs::create_dir_all(&tmp).map_err(io_err(&tmp))?;
        let put = |file: &str, bytes: &[u8]| {
            let p = tmp.join(file);
            fs::write(&p, bytes).map_err(io_err(&p))
        };
        put("policy_code.bin", &table_to_bytes(&self.policy.code.params))?;
        put("policy_align.bin", &table_to_bytes(&self.policy.align.params))?;
        put("optimizer_m.bin", &table_to_bytes(&self.opt.m))?;
        put("optimizer_v.bin", &table_to_bytes(&self.opt.v))?;
        put("buffer.jsonl", self.buffer.to_jsonl().as_bytes())?;
        let state = CheckpointState {
            step: self.step,
            epoch: self.sampler.epoch,
            cursor: self.sampler.cursor,
            optimizer_t: self.opt.t,
        };
        put(
            "state.json",
            (serde_json::to_string_pretty(&state).expect("state serializes") + "\n").as_bytes(),
        )?;
        if dir.exists() {
            fs::remove_dir_all(dir).map_err(io_err(dir))?;
        }
        fs::rename(&tmp, dir).map_err(io_err(dir))
    }

    pub fn load_checkpoint(
        cfg: RunConfig,
        problems: Vec<ProblemRecord>,
        dir: &Path,
    ) -> Result<Trainer, SchedError> {
        let mut t = Trainer::new(cfg, problems)?;
        let read = |file: &str| {
            let p = dir.join(file);
            fs::read(&p).map_err(io_err(&p))
        };
        let bad = |m: String| SchedError::Checkpoint(format!("{}: {m}", dir.display()));
        let state: CheckpointState = serde_json::from_slice(&read("state.json")?)
            .map_err(|e| bad(e.to_string()))?;
        let code = table_from_bytes(&read("policy_code.bin")?).map_err(|e| bad(e.to_string()))?;
        if code.keys().ne(t.policy.code.params.keys()) {
            return Err(bad("code policy does not match the dataset".into()));
        }
        t.policy.code.params = code;
        let buffer_text = String::from_utf8(read("buffer.jsonl")?).map_err(|e| bad(e.to_string()))?;
        for line in buffer_text.lines().filter(|l| !l.trim().is_empty()) {
            let q = AlignmentPrompt::from_line(line, t.cfg.step_budget).map_err(bad)?;
            t.register_align(&q)?;
            if t.buffer.push(q) != (PushOutcome::Added { evicted: None }) {
                return Err(bad("buffer file holds duplicates or exceeds capacity".into()));
            }
        }
        let align = table_from_bytes(&read("policy_align.bin")?).map_err(|e| bad(e.to_string()))?;
        if align.keys().ne(t.policy.align.params.keys()) {
            return Err(bad("alignment policy does not match the buffer".into()));
        }
        t.policy.align.params = align;
        t.opt.m = table_from_bytes(&read("optimizer_m.bin")?).map_err(|e| bad(e.to_string()))?;
        t.opt.v = table_from_bytes(&read("optimizer_v.bin")?).map_err(|e| bad(e.to_string()))?;
        t.opt.t = state.optimizer_t;
        t.sampler = CodeSampler::at(t.cfg.seed, t.problems.len(), state.epoch, state.cursor);
        t.step = state.step;
        Ok(t)
    }
}

/// Exclusive lock on a run directory, held until dropped.
pub struct RunLock {
    _file: File,
}

impl RunLock {
    pub fn acquire(run_dir: &Path) -> Result<RunLock, SchedError> {
        fs::create_dir_all(run_dir).map_err(io_err(run_dir))?;
        let p = run_dir.join(".lock");
        let file = File::create(&p).map_err(io_err(&p))?;
        file.try_lock()
            .map_err(|_| SchedError::Locked(run_dir.display().to_string()))?;
        Ok(RunLock { _file: file })
    }
}

pub fn checkpoint_dir(run_dir: &Path, step: u64) -> PathBuf {
    run_dir.join("checkpoints").join(format!("step_{step}"))
}

fn write_metrics(run_dir: &Path, records: &[StepRecord]) -> Result<(), SchedError> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    let p = run_dir.join("metrics.jsonl");
    write_atomic(&p, out.as_bytes()).map_err(io_err(&p))
}

fn read_metrics(run_dir: &Path) -> Result<Vec<StepRecord>, SchedError> {
    let p = run_dir.join("metrics.jsonl");
    if !p.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(&p).map_err(io_err(&p))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|e| SchedError::Checkpoint(format!("metrics: {e}")))
        })
        .collect()
}

fn drive(
    mut trainer: Trainer,
    mut records: Vec<StepRecord>,
    run_dir: &Path,
) -> Result<Trainer, SchedError> {
    while trainer.step < trainer.cfg.max_steps {
        records.push(trainer.step()?);
        write_metrics(run_dir, &records)?;
        if trainer.step.is_multiple_of(trainer.cfg.checkpoint_every) || trainer.step == trainer.cfg.max_steps
        {
            trainer.save_checkpoint(&checkpoint_dir(run_dir, trainer.step))?;
            let p = run_dir.join("buffer.jsonl");
            write_atomic(&p, trainer.buffer.to_jsonl().as_bytes()).map_err(io_err(&p))?;
        }
    }
    if records.is_empty() {
        write_metrics(run_dir, &records)?;
    }
    Ok(trainer)
}

/// Starts a fresh run in `cfg.run_dir`.
pub fn run_training(cfg: &RunConfig) -> Result<Trainer, SchedError> {
    cfg.validate()?;
    let problems = load_problems(&cfg.dataset)?;
    let run_dir = cfg.run_dir.clone();
    let _lock = RunLock::acquire(&run_dir)?;
    if run_dir.join("config.json").exists() {
        return Err(SchedError::RunExists(run_dir.display().to_string()));
    }
    let p = run_dir.join("config.json");
    write_atomic(&p, cfg.to_json().as_bytes()).map_err(io_err(&p))?;
    let trainer = Trainer::new(cfg.clone(), problems)?;
    drive(trainer, Vec::new(), &run_dir)
}

/// Highest `checkpoints/step_<n>` with a state file.
pub fn latest_checkpoint(run_dir: &Path) -> Option<u64> {
    let entries = fs::read_dir(run_dir.join("checkpoints")).ok()?;
    entries
        .filter_map(|e| e.ok())
        .filter(|e| e.path().join("state.json").exists())
        .filter_map(|e| {
            e.file_name()
                .to_str()?
                .strip_prefix("step_")?
                .parse::<u64>()
                .ok()
        })
        .max()
}

/// Continues a run from its latest checkpoint (or from scratch if there is
/// none), optionally raising `max_steps`.
pub fn resume_training(run_dir: &Path, max_steps: Option<u64>) -> Result<Trainer, SchedError> {
    let _lock = RunLock::acquire(run_dir)?;
    let mut cfg = RunConfig::load(&run_dir.join("config.json"))?;
    cfg.run_dir = run_dir.to_path_buf();
    if let Some(m) = max_steps {
        cfg.max_steps = m;
    }
    cfg.validate()?;
    let problems = load_problems(&cfg.dataset)?;
    let p = run_dir.join("config.json");
    write_atomic(&p, cfg.to_json().as_bytes()).map_err(io_err(&p))?;
    let (trainer, mut records) = match latest_checkpoint(run_dir) {
        Some(k) => {
            let t = Trainer::load_checkpoint(cfg, problems, &checkpoint_dir(run_dir, k))?;
            (t, read_metrics(run_dir)?)
        }
        None => (Trainer::new(cfg, problems)?, Vec::new()),
    };
    let k = trainer.step as usize;
    if records.len() < k {
        return Err(SchedError::Checkpoint(format!(
            "metrics.jsonl has {} records but the checkpoint is at step {k}",
            records.len()
        )));
    }
    records.truncate(k);
    drive(trainer, records, run_dir)
}
