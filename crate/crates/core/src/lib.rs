//! Execution-semantics-aligned reinforcement learning with verifiable
//! rewards, at desk scale.
//!
//! A tracing interpreter for MiniImp ([`lang`], [`tracer`]) supplies
//! ground-truth final variable values; [`rewards`] turns test results and
//! variable predictions into verifiable rewards; [`grpo`] and [`scheduler`]
//! run a joint group-relative policy optimization loop over toy tabular
//! policies; [`evalsuite`] implements the trace-inference evaluation
//! protocol; [`probe`] trains per-layer linear probes on externally supplied
//! features.

pub mod config;
pub mod dataset;
pub mod digest;
pub mod evalsuite;
pub mod fuzz;
pub mod grpo;
pub mod lang;
pub mod persist;
pub mod probe;
pub mod rewards;
pub mod scheduler;
pub mod tracer;
pub mod value;

pub use value::Value;
