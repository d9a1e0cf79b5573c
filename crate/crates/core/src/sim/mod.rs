//! Discrete-event market simulation: scenarios in, CSV traces out, plus an
//! independent replay that checks the trace and a summary of it.

pub mod engine;
pub mod generate;
pub mod report;
pub mod scenario;
pub mod trace;
pub mod verify;

pub use engine::{run, run_with_seed, FinalState, RunOutput};
pub use report::{report, Summary};
pub use scenario::Scenario;
pub use trace::{EventKind, Trace, TraceEvent};
pub use verify::{verify, verify_trace, VerifyReport};
