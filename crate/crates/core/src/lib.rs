//! Deterministic orchestration engine and discrete-event simulator for a
//! self-driving nucleic-acid lab.
//!
//! The pipeline runs request → [`procedure::Procedure`] (chemical steps) →
//! [`compiler::Program`] (atomic-service invocations) → [`scheduler::Schedule`]
//! → [`scheduler::EventTrace`], with [`sim_lab`] standing in for the wet lab.

pub mod compiler;
pub mod engine;
pub mod optimizer;
pub mod par;
pub mod procedure;
pub mod registry;
pub mod scheduler;
pub mod seed;
pub mod sim_lab;
pub mod storage;
#[doc(hidden)]
pub mod testkit;
pub mod time;

pub use compiler::{compile, Invocation, Program};
pub use registry::{load_registry, Registry};
pub use time::Ticks;
