//! Code-generation problems: a hole template plus test cases, one JSON
//! record per line:
//!
//! ```json
//! {"id": "sum", "source": "fn f(n) { ... __HOLE_1__ ... }", "vocab": [["0", "1"]],
//!  "tests": [{"input": [3], "expected": 6}]}
//! ```

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde_json::Value as Json;

use crate::lang::HoleTemplate;
use crate::rewards::TestCase;

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemRecord {
    pub id: String,
    pub template: HoleTemplate,
    pub tests: Vec<TestCase>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DatasetError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{path}:{line}: {message}")]
    Record {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}: dataset is empty")]
    Empty { path: String },
}

pub fn parse_problem(j: &Json) -> Result<ProblemRecord, String> {
    let id = j
        .get("id")
        .and_then(Json::as_str)
        .ok_or("`id` must be a string")?;
    if id.is_empty() {
        return Err("`id` must not be empty".into());
    }
    let source = j
        .get("source")
        .and_then(Json::as_str)
        .ok_or("`source` must be a string")?;
    let vocab: Vec<Vec<String>> = serde_json::from_value(j.get("vocab").cloned().unwrap_or(Json::Null))
        .map_err(|e| format!("`vocab`: {e}"))?;
    let template = HoleTemplate::new(source, vocab).map_err(|e| e.to_string())?;
    if template.hole_count() == 0 {
        return Err("template has no holes".into());
    }
    let tests = j
        .get("tests")
        .and_then(Json::as_array)
        .ok_or("`tests` must be a list")?
        .iter()
        .map(|t| TestCase::from_json(t).map_err(|e| e.to_string()))
        .collect::<Result<Vec<_>, _>>()?;
    if tests.is_empty() {
        return Err("`tests` must not be empty".into());
    }
    Ok(ProblemRecord {
        id: id.to_string(),
        template,
        tests,
    })
}

pub fn load_problems(path: &Path) -> Result<Vec<ProblemRecord>, DatasetError> {
    let p = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| DatasetError::Io {
        path: p.clone(),
        message: e.to_string(),
    })?;
    let mut out = Vec::new();
    let mut ids = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec = |message: String| DatasetError::Record {
            path: p.clone(),
            line: i + 1,
            message,
        };
        let j: Json = serde_json::from_str(line).map_err(|e| rec(e.to_string()))?;
        let prob = parse_problem(&j).map_err(rec)?;
        if !ids.insert(prob.id.clone()) {
            return Err(rec(format!("duplicate id `{}`", prob.id)));
        }
        out.push(prob);
    }
    if out.is_empty() {
        return Err(DatasetError::Empty { path: p });
    }
    Ok(out)
}
