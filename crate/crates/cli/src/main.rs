//! `semtrace` command-line harness.
//!
//! Exit codes: 0 success, 1 usage/parse/config/IO error or failed check,
//! 2 runtime error in the traced program, 3 step budget exhausted.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode, Stdio};

use clap::{Parser, Subcommand};
use serde_json::Value as Json;

use semtrace_core::config::{RunConfig, SEED_ENV};
use semtrace_core::evalsuite::{
    canonical_object, canonical_serialize, load_items, parse_canonical, run_eval, serialize_record,
    write_report, EvalItem, OraclePredictor, Predictor, ReplayPredictor,
};
use semtrace_core::fuzz::{differential_campaign, fixture_campaign, load_fixtures, roundtrip_check, AstGen};
use semtrace_core::lang::{list_variables, parse_program, Program};
use semtrace_core::persist::write_atomic;
use semtrace_core::probe::{
    load_dir, probe_sweep, synthetic_two_layer, to_csv, to_dat, write_dir, ProbeConfig,
};
use semtrace_core::rewards::{gen_reward, TestCase};
use semtrace_core::scheduler::{resume_training, run_training};
use semtrace_core::tracer::{execute, ExecutionStatus, TraceMode, DEFAULT_BUDGET};
use semtrace_core::Value;

#[derive(Parser)]
#[command(name = "semtrace", version, about = "Execution-semantics tracing, rewards and training")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a MiniImp program and print its canonical result record.
    Trace {
        program: PathBuf,
        /// Argument list as a JSON array.
        #[arg(long, default_value = "[]")]
        input: String,
        /// Also print one line per executed step.
        #[arg(long)]
        full: bool,
        #[arg(long, default_value_t = DEFAULT_BUDGET)]
        budget: u64,
    },
    /// Score a program against test cases (JSON array or JSONL).
    Reward {
        program: PathBuf,
        tests: PathBuf,
        #[arg(long, default_value_t = DEFAULT_BUDGET)]
        budget: u64,
    },
    /// Train from a JSON config.
    Train {
        config: PathBuf,
        /// Continue the run in the config's run_dir from its last checkpoint.
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        max_steps: Option<u64>,
    },
    /// Evaluate trace inference on JSONL items.
    Eval {
        items: PathBuf,
        /// `oracle`, `replay:<dir>`, or a shell command reading the prompt on stdin.
        #[arg(long)]
        predictor: String,
        #[arg(long, default_value = "eval_out")]
        out: PathBuf,
    },
    /// Fit one linear probe per layer and write probe_mse.csv / probe_mse.dat.
    Probe {
        features: PathBuf,
        #[arg(long, default_value = "probe_out")]
        out: PathBuf,
        #[arg(long, default_value_t = 0.8)]
        train_ratio: f64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 10)]
        epochs: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        /// Samples per update; 0 means full batch.
        #[arg(long, default_value_t = 1)]
        batch_size: usize,
    },
    /// Differential campaign: tracer vs reference evaluator, plus parse/format round trips.
    Fuzz {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 200)]
        count: usize,
        #[arg(long, default_value_t = 1000)]
        asts: usize,
        /// Directory of `*.mim` fixtures to check as well.
        #[arg(long)]
        fixtures: Option<PathBuf>,
    },
    /// Write a synthetic two-layer probe dataset.
    SynthFeatures {
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 8)]
        problems: usize,
        #[arg(long, default_value_t = 25)]
        per_problem: usize,
        #[arg(long, default_value_t = 16)]
        dim: usize,
    },
}

struct Failure {
    code: u8,
    message: String,
}

fn fail(message: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        message: message.into(),
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.cmd {
        Cmd::Trace {
            program,
            input,
            full,
            budget,
        } => trace(&program, &input, full, budget),
        Cmd::Reward {
            program,
            tests,
            budget,
        } => reward(&program, &tests, budget),
        Cmd::Train {
            config,
            resume,
            max_steps,
        } => train(&config, resume, max_steps),
        Cmd::Eval {
            items,
            predictor,
            out,
        } => eval(&items, &predictor, &out),
        Cmd::Probe {
            features,
            out,
            train_ratio,
            seed,
            epochs,
            lr,
            batch_size,
        } => probe(&features, &out, train_ratio, seed, epochs, lr, batch_size),
        Cmd::Fuzz {
            seed,
            count,
            asts,
            fixtures,
        } => fuzz(seed, count, asts, fixtures.as_deref()),
        Cmd::SynthFeatures {
            out,
            seed,
            problems,
            per_problem,
            dim,
        } => synth(&out, seed, problems, per_problem, dim),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("semtrace: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

/// Flag, else `SEMTRACE_SEED`, else 0.
fn resolve_seed(flag: Option<u64>) -> Result<u64, Failure> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map_err(|_| fail(format!("{SEED_ENV}={s:?} is not a u64"))),
        Err(_) => Ok(0),
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| fail(format!("{}: {e}", path.display())))
}

fn load_program(path: &Path) -> Result<Program, Failure> {
    let text = read(path)?;
    parse_program(&text).map_err(|e| fail(format!("{}: parse error at {e}", path.display())))
}

fn parse_args(text: &str) -> Result<Vec<Value>, Failure> {
    match parse_canonical(text.trim()) {
        Ok(Value::List(args)) => Ok(args),
        Ok(_) => Err(fail("--input must be a JSON array of arguments")),
        Err(e) => Err(fail(format!("--input: {e}"))),
    }
}

fn trace(path: &Path, input: &str, full: bool, budget: u64) -> Outcome {
    let p = load_program(path)?;
    let args = parse_args(input)?;
    let mode = if full { TraceMode::Full } else { TraceMode::Summary };
    let rec = execute(&p, &args, budget, mode).map_err(|e| fail(e.to_string()))?;
    let mut out = String::new();
    for ev in rec.trajectory.iter().flatten() {
        let mut fields = vec![
            ("step", ev.step_index.to_string()),
            ("line", ev.span.line.to_string()),
            ("col", ev.span.col.to_string()),
        ];
        if let (Some(v), Some(val)) = (&ev.defined_variable, &ev.value_written) {
            fields.push(("defines", canonical_serialize(&Value::Str(v.clone()))));
            fields.push(("value", canonical_serialize(val)));
        }
        out.push_str(&canonical_object(&fields));
        out.push('\n');
    }
    match &rec.status {
        ExecutionStatus::Returned => {
            let vars: Vec<(String, Value)> = list_variables(&p)
                .into_iter()
                .filter_map(|v| rec.final_vars.get(&v).map(|x| (v, x.clone())))
                .collect();
            let ret = rec.return_value.clone().unwrap_or(Value::Null);
            out.push_str(&serialize_record(&ret, &vars));
            out.push('\n');
            print!("{out}");
            Ok(())
        }
        ExecutionStatus::RuntimeError { kind, span, detail } => {
            print!("{out}");
            Err(Failure {
                code: 2,
                message: format!("runtime error {kind:?} at {}:{span}: {detail}", path.display()),
            })
        }
        ExecutionStatus::BudgetExceeded => {
            print!("{out}");
            Err(Failure {
                code: 3,
                message: format!("step budget of {budget} exhausted after {} steps", rec.steps_used),
            })
        }
    }
}

fn load_tests(path: &Path) -> Result<Vec<TestCase>, Failure> {
    let text = read(path)?;
    let records: Vec<Json> = if text.trim_start().starts_with('[') {
        serde_json::from_str(&text).map_err(|e| fail(format!("{}: {e}", path.display())))?
    } else {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| {
                serde_json::from_str(l)
                    .map_err(|e| fail(format!("{}:{}: {e}", path.display(), i + 1)))
            })
            .collect::<Result<_, _>>()?
    };
    records
        .iter()
        .map(|j| TestCase::from_json(j).map_err(|e| fail(format!("{}: {e}", path.display()))))
        .collect()
}

fn reward(program: &Path, tests: &Path, budget: u64) -> Outcome {
    let p = load_program(program)?;
    let tests = load_tests(tests)?;
    let report = gen_reward(&p, &tests, budget).map_err(|e| fail(e.to_string()))?;
    println!("{}", report.to_canonical());
    Ok(())
}

fn train(config: &Path, resume: bool, max_steps: Option<u64>) -> Outcome {
    let mut cfg = RunConfig::load(config).map_err(|e| fail(e.to_string()))?;
    let trainer = if resume {
        // the run directory's own config.json is authoritative on resume
        resume_training(&cfg.run_dir, max_steps).map_err(|e| fail(e.to_string()))?
    } else {
        cfg.apply_env().map_err(|e| fail(e.to_string()))?;
        if let Some(m) = max_steps {
            cfg.max_steps = m;
        }
        cfg.validate().map_err(|e| fail(e.to_string()))?;
        run_training(&cfg).map_err(|e| fail(e.to_string()))?
    };
    println!(
        "run {} finished at step {} (buffer {} prompts)",
        trainer.cfg.run_dir.display(),
        trainer.step,
        trainer.buffer.len()
    );
    Ok(())
}

/// Runs `sh -c <cmd>` with the prompt on stdin; stdout is the response.
struct ShellPredictor {
    command: String,
}

impl Predictor for ShellPredictor {
    fn predict(&self, item: &EvalItem, prompt: &str) -> Result<String, String> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&self.command)
            .env("SEMTRACE_ITEM_ID", &item.id)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| format!("spawn failed: {e}"))?;
        if let Some(mut stdin) = child.stdin.take() {
            // a predictor that ignores stdin may close it early
            let _ = stdin.write_all(prompt.as_bytes());
        }
        let out = child.wait_with_output().map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!("predictor exited with {}", out.status));
        }
        String::from_utf8(out.stdout).map_err(|_| "predictor output is not UTF-8".to_string())
    }
}

fn eval(items: &Path, predictor: &str, out: &Path) -> Outcome {
    let items = load_items(items).map_err(|e| fail(e.to_string()))?;
    let pred: Box<dyn Predictor> = if predictor == "oracle" {
        Box::new(OraclePredictor)
    } else if let Some(dir) = predictor.strip_prefix("replay:") {
        Box::new(ReplayPredictor { dir: dir.into() })
    } else {
        Box::new(ShellPredictor {
            command: predictor.to_string(),
        })
    };
    let (report, transcripts) = run_eval(&items, pred.as_ref());
    write_report(out, &items, &report, &transcripts)
        .map_err(|e| fail(format!("{}: {e}", out.display())))?;
    println!(
        "exact_at_1 {} ({}/{})",
        report.exact_at_1, report.exact_count, report.n
    );
    Ok(())
}

fn probe(
    features: &Path,
    out: &Path,
    ratio: f64,
    seed: Option<u64>,
    epochs: usize,
    lr: f64,
    batch_size: usize,
) -> Outcome {
    let seed = resolve_seed(seed)?;
    let ds = load_dir(features).map_err(|e| fail(e.to_string()))?;
    let cfg = ProbeConfig {
        epochs,
        lr,
        batch_size: (batch_size > 0).then_some(batch_size),
        ..ProbeConfig::default()
    };
    let layers: Vec<u32> = ds.layers.keys().copied().collect();
    let results = probe_sweep(&ds, &layers, ratio, seed, &cfg).map_err(|e| fail(e.to_string()))?;
    fs::create_dir_all(out).map_err(|e| fail(format!("{}: {e}", out.display())))?;
    let csv = to_csv(&results);
    for (name, body) in [("probe_mse.csv", &csv), ("probe_mse.dat", &to_dat(&results))] {
        let p = out.join(name);
        write_atomic(&p, body.as_bytes()).map_err(|e| fail(format!("{}: {e}", p.display())))?;
    }
    print!("{csv}");
    Ok(())
}

fn fuzz(seed: Option<u64>, count: usize, asts: usize, fixtures: Option<&Path>) -> Outcome {
    let seed = resolve_seed(seed)?;
    let mut failures = Vec::new();
    let mut gen = AstGen::new(seed);
    for i in 0..asts {
        if let Err(e) = roundtrip_check(&gen.program()) {
            failures.push(format!("ast #{i}: {e}"));
        }
    }
    let r = differential_campaign(seed, count);
    println!(
        "differential: {} programs, {} returned, {} runtime errors, {} disagreements",
        r.programs,
        r.returned,
        r.runtime_errors,
        r.failures.len()
    );
    failures.extend(r.failures);
    if let Some(dir) = fixtures {
        let fx = load_fixtures(dir).map_err(fail)?;
        let r = fixture_campaign(&fx);
        println!(
            "fixtures: {} runs over {} files, {} disagreements",
            r.programs,
            fx.len(),
            r.failures.len()
        );
        failures.extend(r.failures);
    }
    println!("round trip: {asts} random programs");
    if failures.is_empty() {
        Ok(())
    } else {
        for f in &failures {
            eprintln!("{f}");
        }
        Err(fail(format!("{} checks failed", failures.len())))
    }
}

fn synth(out: &Path, seed: Option<u64>, problems: usize, per_problem: usize, dim: usize) -> Outcome {
    let seed = resolve_seed(seed)?;
    let ds = synthetic_two_layer(problems, per_problem, dim, seed);
    write_dir(&ds, out).map_err(|e| fail(format!("{}: {e}", out.display())))?;
    println!("wrote {} samples x {} layers to {}", ds.samples.len(), ds.layers.len(), out.display());
    Ok(())
}
