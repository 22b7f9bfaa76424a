//! Trace-inference evaluation: prompt construction, strict prediction
//! parsing, Exact@1 scoring and pass@1 aggregation.

pub mod canonical;

pub use canonical::{
    canonical_object, canonical_serialize, decode_json, parse_canonical, serialize_record,
    DecodeError, NEG_INF_SENTINEL, POS_INF_SENTINEL,
};

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use serde_json::Value as Json;

use crate::lang::{format_program, parse_program, Program};
use crate::persist::write_atomic;
use crate::rewards::GenRewardReport;
use crate::tracer::{execute, ExecutionStatus, TraceMode, DEFAULT_BUDGET};
use crate::value::{matches_truth, Value};

pub const PROMPT_TEMPLATE: &str = include_str!("../../resources/trace_inference_prompt.txt");

#[derive(Debug, Clone, PartialEq)]
pub struct EvalItem {
    pub id: String,
    pub source: String,
    pub program: Program,
    pub input: Vec<Value>,
    pub variables: Vec<String>,
    pub truth_output: Value,
    pub truth_vars: BTreeMap<String, Value>,
}

#[derive(Debug, thiserror::Error)]
pub enum ItemError {
    #[error("line {line}: {message}")]
    Record { line: usize, message: String },
    #[error("item `{id}`: {message}")]
    Item { id: String, message: String },
    #[error("{0}")]
    Io(#[from] io::Error),
}

impl EvalItem {
    /// Parses the program and regenerates the truth by tracing. Fails if the
    /// program does not return or a listed variable is never defined.
    pub fn new(
        id: &str,
        source: &str,
        input: Vec<Value>,
        variables: Vec<String>,
    ) -> Result<EvalItem, ItemError> {
        let err = |message: String| ItemError::Item {
            id: id.to_string(),
            message,
        };
        let program = parse_program(source).map_err(|e| err(format!("parse error at {e}")))?;
        let rec = execute(&program, &input, DEFAULT_BUDGET, TraceMode::Summary)
            .map_err(|e| err(e.to_string()))?;
        if rec.status != ExecutionStatus::Returned {
            return Err(err(format!("program did not return ({})", rec.status.label())));
        }
        if variables.is_empty() {
            return Err(err("empty variable list".into()));
        }
        let mut truth_vars = BTreeMap::new();
        for v in &variables {
            let value = rec
                .final_vars
                .get(v)
                .ok_or_else(|| err(format!("variable `{v}` is never defined")))?;
            truth_vars.insert(v.clone(), value.clone());
        }
        Ok(EvalItem {
            id: id.to_string(),
            source: source.to_string(),
            program,
            input,
            variables,
            truth_output: rec.return_value.unwrap_or(Value::Null),
            truth_vars,
        })
    }

    /// The truth as a canonical record line.
    pub fn truth_line(&self) -> String {
        let vars: Vec<(String, Value)> = self
            .variables
            .iter()
            .map(|v| (v.clone(), self.truth_vars[v].clone()))
            .collect();
        serialize_record(&self.truth_output, &vars)
    }
}

/// Reads `{id, source, input, variables[, truth]}` records. `input` is the
/// canonical argument list; a stored `truth` line, if present, must agree
/// with the regenerated truth.
pub fn load_items(path: &Path) -> Result<Vec<EvalItem>, ItemError> {
    let text = fs::read_to_string(path)?;
    let mut items = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec_err = |message: String| ItemError::Record {
            line: i + 1,
            message,
        };
        let j: Json = serde_json::from_str(line).map_err(|e| rec_err(e.to_string()))?;
        let field = |k: &str| j.get(k).ok_or_else(|| rec_err(format!("missing `{k}`")));
        let id = field("id")?
            .as_str()
            .ok_or_else(|| rec_err("`id` must be a string".into()))?;
        let source = field("source")?
            .as_str()
            .ok_or_else(|| rec_err("`source` must be a string".into()))?;
        let input = match field("input")? {
            Json::Array(a) => a
                .iter()
                .map(decode_json)
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| rec_err(e.to_string()))?,
            _ => return Err(rec_err("`input` must be a list".into())),
        };
        let variables = field("variables")?
            .as_array()
            .and_then(|a| a.iter().map(|v| v.as_str().map(String::from)).collect())
            .ok_or_else(|| rec_err("`variables` must be a list of names".into()))?;
        let item = EvalItem::new(id, source, input, variables)?;
        if let Some(stored) = j.get("truth") {
            let stored = stored
                .as_str()
                .ok_or_else(|| rec_err("`truth` must be a canonical line".into()))?;
            if stored != item.truth_line() {
                return Err(ItemError::Item {
                    id: item.id,
                    message: "stored truth disagrees with the tracer".into(),
                });
            }
        }
        items.push(item);
    }
    Ok(items)
}

/// Fills the four placeholders in one pass, so placeholder-like text inside
/// the code or input is never substituted again.
pub fn build_prompt(item: &EvalItem) -> String {
    let code = format_program(&item.program);
    let input = canonical_serialize(&Value::List(item.input.clone()));
    let names = item.variables.join(", ");
    let fills = [
        ("{function_name}", item.program.name.as_str()),
        ("{variable_names}", names.as_str()),
        ("{code}", code.trim_end()),
        ("{input}", input.as_str()),
    ];
    let mut out = String::with_capacity(PROMPT_TEMPLATE.len() + code.len());
    let mut rest = PROMPT_TEMPLATE;
    'scan: while let Some(pos) = rest.find('{') {
        for (ph, val) in fills {
            if rest[pos..].starts_with(ph) {
                out.push_str(&rest[..pos]);
                out.push_str(val);
                rest = &rest[pos + ph.len()..];
                continue 'scan;
            }
        }
        out.push_str(&rest[..=pos]);
        rest = &rest[pos + 1..];
    }
    out.push_str(rest);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub final_output: Value,
    pub variables: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed prediction: {0}")]
pub struct MalformedPrediction(pub String);

/// Parses the last non-empty line of `raw` as a strict record.
pub fn parse_prediction(raw: &str) -> Result<Prediction, MalformedPrediction> {
    let bad = |m: String| MalformedPrediction(m);
    let line = raw
        .lines()
        .rev()
        .find(|l| !l.trim().is_empty())
        .ok_or_else(|| bad("empty response".into()))?;
    let j: Json = serde_json::from_str(line.trim()).map_err(|e| bad(e.to_string()))?;
    let obj = j
        .as_object()
        .ok_or_else(|| bad("last line is not an object".into()))?;
    if let Some(k) = obj
        .keys()
        .find(|k| *k != "final_output" && *k != "variables")
    {
        return Err(bad(format!("unexpected key `{k}`")));
    }
    let final_output = decode_json(
        obj.get("final_output")
            .ok_or_else(|| bad("missing `final_output`".into()))?,
    )
    .map_err(|e| bad(e.to_string()))?;
    let vars = obj
        .get("variables")
        .ok_or_else(|| bad("missing `variables`".into()))?
        .as_object()
        .ok_or_else(|| bad("`variables` must be an object".into()))?;
    let mut variables = BTreeMap::new();
    for (k, v) in vars {
        variables.insert(k.clone(), decode_json(v).map_err(|e| bad(e.to_string()))?);
    }
    Ok(Prediction {
        final_output,
        variables,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ItemScore {
    pub id: String,
    pub exact: bool,
    pub output_correct: bool,
    /// Per-variable correctness in the item's variable order.
    pub variables: Vec<(String, bool)>,
    pub error: Option<String>,
}

pub fn score(pred: &Prediction, item: &EvalItem) -> ItemScore {
    let output_correct = matches_truth(&pred.final_output, &item.truth_output);
    let variables: Vec<(String, bool)> = item
        .variables
        .iter()
        .map(|v| {
            let ok = pred
                .variables
                .get(v)
                .is_some_and(|p| matches_truth(p, &item.truth_vars[v]));
            (v.clone(), ok)
        })
        .collect();
    ItemScore {
        id: item.id.clone(),
        exact: output_correct && variables.iter().all(|(_, ok)| *ok),
        output_correct,
        variables,
        error: None,
    }
}

pub fn exact_at_1(pred: &Prediction, item: &EvalItem) -> bool {
    score(pred, item).exact
}

/// Maps a prompt to raw response text.
pub trait Predictor: Sync {
    fn predict(&self, item: &EvalItem, prompt: &str) -> Result<String, String>;
}

impl<F> Predictor for F
where
    F: Fn(&EvalItem, &str) -> Result<String, String> + Sync,
{
    fn predict(&self, item: &EvalItem, prompt: &str) -> Result<String, String> {
        self(item, prompt)
    }
}

/// Answers with the traced truth after a one-line reasoning section.
pub struct OraclePredictor;

impl Predictor for OraclePredictor {
    fn predict(&self, item: &EvalItem, _prompt: &str) -> Result<String, String> {
        Ok(format!(
            "Tracing `{}` on the given input.\n{}\n",
            item.program.name,
            item.truth_line()
        ))
    }
}

/// Reads `<dir>/<id>.response.txt`.
pub struct ReplayPredictor {
    pub dir: PathBuf,
}

impl Predictor for ReplayPredictor {
    fn predict(&self, item: &EvalItem, _prompt: &str) -> Result<String, String> {
        let name = format!("{}.response.txt", item.id);
        fs::read_to_string(self.dir.join(&name)).map_err(|e| format!("{name}: {e}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub n: usize,
    pub exact_count: usize,
    pub exact_at_1: f64,
    pub pass_at_1: Option<f64>,
    pub items: Vec<ItemScore>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

pub struct Transcript {
    pub prompt: String,
    pub response: Option<String>,
}

/// Evaluates items in parallel and reduces in input order.
pub fn run_eval(items: &[EvalItem], predictor: &dyn Predictor) -> (EvalReport, Vec<Transcript>) {
    let results: Vec<(ItemScore, Transcript)> = items
        .par_iter()
        .map(|item| {
            let prompt = build_prompt(item);
            let response = predictor.predict(item, &prompt);
            let score = match &response {
                Ok(text) => match parse_prediction(text) {
                    Ok(pred) => score(&pred, item),
                    Err(e) => failed(item, e.to_string()),
                },
                Err(e) => failed(item, format!("predictor failed: {e}")),
            };
            (
                score,
                Transcript {
                    prompt,
                    response: response.ok(),
                },
            )
        })
        .collect();
    let (scores, transcripts): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let exact_count = scores.iter().filter(|s| s.exact).count();
    let n = scores.len();
    let report = EvalReport {
        n,
        exact_count,
        exact_at_1: if n == 0 { 0.0 } else { exact_count as f64 / n as f64 },
        pass_at_1: None,
        items: scores,
    };
    (report, transcripts)
}

fn failed(item: &EvalItem, error: String) -> ItemScore {
    ItemScore {
        id: item.id.clone(),
        exact: false,
        output_correct: false,
        variables: item.variables.iter().map(|v| (v.clone(), false)).collect(),
        error: Some(error),
    }
}

/// Writes `report.json` and `transcripts/<id>.{prompt,response}.txt`.
pub fn write_report(
    dir: &Path,
    items: &[EvalItem],
    report: &EvalReport,
    transcripts: &[Transcript],
) -> io::Result<()> {
    let tdir = dir.join("transcripts");
    fs::create_dir_all(&tdir)?;
    for (item, t) in items.iter().zip(transcripts) {
        write_atomic(&tdir.join(format!("{}.prompt.txt", item.id)), t.prompt.as_bytes())?;
        if let Some(r) = &t.response {
            write_atomic(&tdir.join(format!("{}.response.txt", item.id)), r.as_bytes())?;
        }
    }
    write_atomic(&dir.join("report.json"), report.to_json().as_bytes())
}

/// Fraction of problems whose generated program passed every test.
pub fn pass_at_1(reports: &[GenRewardReport]) -> f64 {
    if reports.is_empty() {
        return 0.0;
    }
    reports.iter().filter(|r| r.reward == 1).count() as f64 / reports.len() as f64
}
