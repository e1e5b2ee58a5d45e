//! Execution of NVRAM-destined programs over an emulated persistent region.
//!
//! Every worker keeps a persistent call stack; after a crash, recovery walks
//! each stack from the top and runs the recover function of every live frame,
//! in parallel across stacks. The crate also ships a recoverable CAS register,
//! the experiment driver that crashes it repeatedly, and a polynomial-time
//! serializability checker for the resulting CAS histories.

pub mod error;
pub mod harness;
pub mod pstack;
pub mod rcas;
pub mod region;
pub mod runtime;
pub mod unbounded;

pub use error::{Error, Result};
