//! Deterministic simulator of interacting agents that either exchange answers with a
//! nearby agent or get mirrored back their own answer, with silo metrics, trajectory
//! classification and a parameter-sweep harness.

pub mod backend;
pub mod classify;
pub mod engine;
pub mod error;
pub mod harness;
pub mod io;
pub mod metrics;
pub mod model;
pub mod seed;

pub use classify::{classify, classify_snapshots, ClassificationReport, ClassifierParams, PatternLabel};
pub use engine::{run_system, run_with_backend, RunOptions};
pub use model::{
    Answer, BackendConfig, Embedding, Probability, SiloLabel, SystemConfig, SystemSnapshot, Trajectory,
};
