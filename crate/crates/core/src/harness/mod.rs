//! The CAS experiment and its checker: workload generation, crash-and-restart
//! cycles in simulated or real-process mode, the execution log, and the
//! serializability verifier with a brute-force oracle.

pub mod app;
mod experiment;
mod log;
mod oracle;
mod verify;
mod workload;

pub use experiment::{
    enumerate, run_experiment, run_kill_experiment, scripted_overwrite_then_crash, worker_main, CrashSpec,
    EnumerationReport, ExperimentConfig, ExperimentReport,
};
pub use log::{CasOp, ExecutionLog, OpResult};
pub use oracle::{oracle_verify, ORACLE_MAX_SUCCESSES};
pub use verify::{
    build_graph, euler_trail, find_euler_trail, place_failed_ops, replay_witness, verify, Edge, Reason, ValueGraph,
    Verdict,
};
pub use workload::{generate_workload, ValueRange, Workload};
