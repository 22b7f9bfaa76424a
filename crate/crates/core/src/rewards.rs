//! Verifiable rewards: binary functional correctness over test cases and
//! the fraction of correctly predicted final variable values.

use std::collections::BTreeMap;

use num_rational::Ratio;
use serde_json::Value as Json;

use crate::evalsuite::canonical::{canonical_object, canonical_serialize, decode_json, quote};
use crate::lang::Program;
use crate::tracer::{execute, ExecutionStatus, RuntimeErrorKind, TraceMode};
use crate::value::{matches_truth, values_equal, Value};

#[derive(Debug, Clone, PartialEq)]
pub struct TestCase {
    pub input: Vec<Value>,
    pub expected: Value,
}

impl TestCase {
    /// Reads `{"input": [...], "expected": v}`.
    pub fn from_json(j: &Json) -> Result<TestCase, RewardError> {
        let bad = |m: &str| RewardError::BadTestCase(m.to_string());
        let obj = j.as_object().ok_or_else(|| bad("test case must be an object"))?;
        let input = match obj.get("input") {
            Some(Json::Array(items)) => items
                .iter()
                .map(decode_json)
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| bad(&e.to_string()))?,
            _ => return Err(bad("`input` must be a list of arguments")),
        };
        let expected = decode_json(obj.get("expected").ok_or_else(|| bad("missing `expected`"))?)
            .map_err(|e| bad(&e.to_string()))?;
        Ok(TestCase { input, expected })
    }

    pub fn to_canonical(&self) -> String {
        canonical_object(&[
            ("input", canonical_serialize(&Value::List(self.input.clone()))),
            ("expected", canonical_serialize(&self.expected)),
        ])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TestStatus {
    Returned,
    RuntimeError(RuntimeErrorKind),
    BudgetExceeded,
    ArityMismatch,
}

impl TestStatus {
    pub fn label(&self) -> String {
        match self {
            TestStatus::Returned => "Returned".into(),
            TestStatus::RuntimeError(k) => format!("RuntimeError:{k:?}"),
            TestStatus::BudgetExceeded => "BudgetExceeded".into(),
            TestStatus::ArityMismatch => "ArityMismatch".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestOutcome {
    pub status: TestStatus,
    pub actual: Option<Value>,
    pub matched: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenRewardReport {
    pub reward: u8,
    pub per_test: Vec<TestOutcome>,
    /// First test whose execution returned a value that did not match.
    pub first_failing_terminating: Option<usize>,
}

impl GenRewardReport {
    pub fn to_canonical(&self) -> String {
        let tests = self
            .per_test
            .iter()
            .map(|t| {
                canonical_object(&[
                    ("status", quote(&t.status.label())),
                    (
                        "actual",
                        t.actual
                            .as_ref()
                            .map_or_else(|| "null".to_string(), canonical_serialize),
                    ),
                    ("matched", t.matched.to_string()),
                ])
            })
            .collect::<Vec<_>>()
            .join(", ");
        canonical_object(&[
            ("reward", self.reward.to_string()),
            ("per_test", format!("[{tests}]")),
            (
                "first_failing_terminating",
                self.first_failing_terminating
                    .map_or_else(|| "null".to_string(), |i| i.to_string()),
            ),
        ])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RewardError {
    #[error("at least one test case is required")]
    NoTests,
    #[error("the variable list is empty")]
    EmptyVariables,
    #[error("no ground truth for variable `{0}`")]
    MissingTruth(String),
    #[error("bad test case: {0}")]
    BadTestCase(String),
}

/// Runs `p` on every test. The expected value is compared against the
/// actual return value with set/list reconciliation, so an expected list
/// `[1, 2]` matches a returned set `{1, 2}`.
pub fn gen_reward(
    p: &Program,
    tests: &[TestCase],
    budget: u64,
) -> Result<GenRewardReport, RewardError> {
    if tests.is_empty() {
        return Err(RewardError::NoTests);
    }
    let mut per_test = Vec::with_capacity(tests.len());
    let mut first_failing_terminating = None;
    for (i, t) in tests.iter().enumerate() {
        let outcome = match execute(p, &t.input, budget.max(1), TraceMode::Summary) {
            Err(_) => TestOutcome {
                status: TestStatus::ArityMismatch,
                actual: None,
                matched: false,
            },
            Ok(rec) => match rec.status {
                ExecutionStatus::Returned => {
                    let actual = rec.return_value.unwrap_or(Value::Null);
                    let matched = matches_truth(&t.expected, &actual);
                    if !matched && first_failing_terminating.is_none() {
                        first_failing_terminating = Some(i);
                    }
                    TestOutcome {
                        status: TestStatus::Returned,
                        actual: Some(actual),
                        matched,
                    }
                }
                ExecutionStatus::RuntimeError { kind, .. } => TestOutcome {
                    status: TestStatus::RuntimeError(kind),
                    actual: None,
                    matched: false,
                },
                ExecutionStatus::BudgetExceeded => TestOutcome {
                    status: TestStatus::BudgetExceeded,
                    actual: None,
                    matched: false,
                },
            },
        };
        per_test.push(outcome);
    }
    let reward = u8::from(per_test.iter().all(|t| t.matched));
    Ok(GenRewardReport {
        reward,
        per_test,
        first_failing_terminating,
    })
}

/// A policy's guess at the final variable values.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SemPrediction {
    pub variables: BTreeMap<String, Value>,
}

/// Exact precision over `vars`; a variable absent from the prediction
/// counts as wrong.
pub fn sem_reward(
    pred: &SemPrediction,
    truth: &BTreeMap<String, Value>,
    vars: &[String],
) -> Result<Ratio<u64>, RewardError> {
    if vars.is_empty() {
        return Err(RewardError::EmptyVariables);
    }
    let mut correct = 0u64;
    for v in vars {
        let t = truth
            .get(v)
            .ok_or_else(|| RewardError::MissingTruth(v.clone()))?;
        if pred.variables.get(v).is_some_and(|p| values_equal(p, t)) {
            correct += 1;
        }
    }
    Ok(Ratio::new(correct, vars.len() as u64))
}

pub fn ratio_to_f64(r: Ratio<u64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}
