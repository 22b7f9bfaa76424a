//! Alignment prompts harvested from failed programs, and the FIFO buffer
//! that holds them.

use std::collections::{BTreeMap, VecDeque};

use serde_json::Value as Json;

use crate::digest::hex_id;
use crate::evalsuite::canonical::{canonical_object, canonical_serialize, decode_json, quote};
use crate::lang::{format_program, list_variables, parse_program, Program};
use crate::rewards::{GenRewardReport, TestCase, TestStatus};
use crate::tracer::{execute, ExecutionStatus, TraceMode};
use crate::value::Value;

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentPrompt {
    /// Hash of the formatted program and the canonical input.
    pub id: String,
    pub program: Program,
    pub input: Vec<Value>,
    /// Target variables in first-definition order.
    pub variables: Vec<String>,
    pub truth: BTreeMap<String, Value>,
    pub origin_step: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Ineligible {
    #[error("program passed every test")]
    Passed,
    #[error("no test input terminates normally")]
    NoTerminatingInput,
    #[error("no variable is defined on the chosen input")]
    EmptyVariables,
    #[error("sample did not decode to a program")]
    Undecodable,
}

pub fn prompt_id(p: &Program, input: &[Value]) -> String {
    let text = format!(
        "{}\n{}",
        format_program(p),
        canonical_serialize(&Value::List(input.to_vec()))
    );
    hex_id(text.as_bytes())
}

impl AlignmentPrompt {
    /// Traces `p` on `input` and keeps the variables it defines.
    pub fn from_trace(
        p: &Program,
        input: &[Value],
        budget: u64,
        origin_step: u64,
    ) -> Result<AlignmentPrompt, Ineligible> {
        let rec = execute(p, input, budget, TraceMode::Summary)
            .map_err(|_| Ineligible::NoTerminatingInput)?;
        if rec.status != ExecutionStatus::Returned {
            return Err(Ineligible::NoTerminatingInput);
        }
        let variables: Vec<String> = list_variables(p)
            .into_iter()
            .filter(|v| rec.final_vars.contains_key(v))
            .collect();
        if variables.is_empty() {
            return Err(Ineligible::EmptyVariables);
        }
        let truth = variables
            .iter()
            .map(|v| (v.clone(), rec.final_vars[v].clone()))
            .collect();
        Ok(AlignmentPrompt {
            id: prompt_id(p, input),
            program: p.clone(),
            input: input.to_vec(),
            variables,
            truth,
            origin_step,
        })
    }

    pub fn truth_values(&self) -> Vec<Value> {
        self.variables.iter().map(|v| self.truth[v].clone()).collect()
    }

    /// One canonical JSON line.
    pub fn to_line(&self) -> String {
        let vars = self
            .variables
            .iter()
            .map(|v| quote(v))
            .collect::<Vec<_>>()
            .join(", ");
        let truth: Vec<(&str, String)> = self
            .variables
            .iter()
            .map(|v| (v.as_str(), canonical_serialize(&self.truth[v])))
            .collect();
        canonical_object(&[
            ("id", quote(&self.id)),
            ("origin_step", self.origin_step.to_string()),
            ("source", quote(&format_program(&self.program))),
            ("input", canonical_serialize(&Value::List(self.input.clone()))),
            ("variables", format!("[{vars}]")),
            ("truth", canonical_object(&truth)),
        ])
    }

    /// Parses a buffer line and regenerates the truth by re-tracing; the
    /// result must reproduce the stored line exactly.
    pub fn from_line(line: &str, budget: u64) -> Result<AlignmentPrompt, String> {
        let j: Json = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let source = j
            .get("source")
            .and_then(Json::as_str)
            .ok_or("missing `source`")?;
        let origin_step = j
            .get("origin_step")
            .and_then(Json::as_u64)
            .ok_or("missing `origin_step`")?;
        let input = match j.get("input") {
            Some(Json::Array(a)) => a
                .iter()
                .map(decode_json)
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| e.to_string())?,
            _ => return Err("`input` must be a list".into()),
        };
        let p = parse_program(source).map_err(|e| e.to_string())?;
        let prompt = AlignmentPrompt::from_trace(&p, &input, budget, origin_step)
            .map_err(|e| e.to_string())?;
        if prompt.to_line() != line.trim_end() {
            return Err(format!("stale buffer entry `{}`", prompt.id));
        }
        Ok(prompt)
    }
}

/// Picks the input for a failed program: the first test that returned a
/// wrong value, else the first test that returned at all.
pub fn build_alignment_prompt(
    p: &Program,
    tests: &[TestCase],
    report: &GenRewardReport,
    budget: u64,
    origin_step: u64,
) -> Result<AlignmentPrompt, Ineligible> {
    if report.reward == 1 {
        return Err(Ineligible::Passed);
    }
    let idx = report
        .first_failing_terminating
        .or_else(|| {
            report
                .per_test
                .iter()
                .position(|t| t.status == TestStatus::Returned)
        })
        .ok_or(Ineligible::NoTerminatingInput)?;
    AlignmentPrompt::from_trace(p, &tests[idx].input, budget, origin_step)
}

#[derive(Debug, Clone, PartialEq)]
pub enum PushOutcome {
    Added { evicted: Option<AlignmentPrompt> },
    Duplicate,
}

/// Bounded FIFO; an id already resident is not inserted again.
#[derive(Debug, Clone, PartialEq)]
pub struct FailureBuffer {
    capacity: usize,
    entries: VecDeque<AlignmentPrompt>,
}

impl FailureBuffer {
    pub fn new(capacity: usize) -> Self {
        FailureBuffer {
            capacity: capacity.max(1),
            entries: VecDeque::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn contains(&self, id: &str) -> bool {
        self.entries.iter().any(|e| e.id == id)
    }

    pub fn get(&self, i: usize) -> Option<&AlignmentPrompt> {
        self.entries.get(i)
    }

    pub fn find(&self, id: &str) -> Option<&AlignmentPrompt> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &AlignmentPrompt> {
        self.entries.iter()
    }

    pub fn push(&mut self, prompt: AlignmentPrompt) -> PushOutcome {
        if self.contains(&prompt.id) {
            return PushOutcome::Duplicate;
        }
        self.entries.push_back(prompt);
        let evicted = if self.entries.len() > self.capacity {
            self.entries.pop_front()
        } else {
            None
        };
        PushOutcome::Added { evicted }
    }

    pub fn to_jsonl(&self) -> String {
        self.entries.iter().map(|e| e.to_line() + "\n").collect()
    }
}

/// A decoded code-generation sample and its test report.
pub struct Candidate<'a> {
    pub program: Option<&'a Program>,
    pub report: Option<&'a GenRewardReport>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct HarvestStats {
    pub added: Vec<AlignmentPrompt>,
    pub evicted: Vec<AlignmentPrompt>,
    pub duplicates: usize,
    pub ineligible: usize,
}

pub fn harvest_failures(
    buffer: &mut FailureBuffer,
    candidates: &[Candidate<'_>],
    tests: &[TestCase],
    budget: u64,
    step: u64,
    stats: &mut HarvestStats,
) {
    for c in candidates {
        let built = match (c.program, c.report) {
            (Some(p), Some(r)) => build_alignment_prompt(p, tests, r, budget, step),
            _ => Err(Ineligible::Undecodable),
        };
        match built {
            Err(Ineligible::Passed) => {}
            Err(_) => stats.ineligible += 1,
            Ok(prompt) => match buffer.push(prompt.clone()) {
                PushOutcome::Duplicate => stats.duplicates += 1,
                PushOutcome::Added { evicted } => {
                    stats.added.push(prompt);
                    if let Some(e) = evicted {
                        // a prompt added and evicted in the same harvest never reaches the policy
                        if let Some(pos) = stats.added.iter().position(|a| a.id == e.id) {
                            stats.added.remove(pos);
                        } else {
                            stats.evicted.push(e);
                        }
                    }
                }
            },
        }
    }
}
