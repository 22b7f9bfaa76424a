use std::fs;
use std::path::Path;

use semtrace_core::evalsuite::{canonical_serialize, serialize_record};
use semtrace_core::fuzz::load_fixtures;
use semtrace_core::lang::list_variables;
use semtrace_core::tracer::{execute, ExecutionStatus, TraceMode, DEFAULT_BUDGET};
use semtrace_core::Value;

#[test]
fn fixture_records_match_golden_file() {
    let base = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let fixtures = load_fixtures(&base.join("programs")).unwrap();
    let mut got = String::new();
    for f in &fixtures {
        for input in &f.inputs {
            let rec = execute(&f.program, input, DEFAULT_BUDGET, TraceMode::Summary).unwrap();
            let rhs = match rec.status {
                ExecutionStatus::Returned => {
                    let vars: Vec<(String, Value)> = list_variables(&f.program)
                        .into_iter()
                        .filter_map(|v| rec.final_vars.get(&v).map(|x| (v, x.clone())))
                        .collect();
                    serialize_record(rec.return_value.as_ref().unwrap(), &vars)
                }
                ExecutionStatus::RuntimeError { .. } => "exit 2".into(),
                ExecutionStatus::BudgetExceeded => "exit 3".into(),
            };
            let args = canonical_serialize(&Value::List(input.clone()));
            got.push_str(&format!("{} {args} => {rhs}\n", f.name));
        }
    }
    let want = fs::read_to_string(base.join("golden/trace_records.txt")).unwrap();
    assert_eq!(got, want);
}
