//! Hybrid discrete-event and agent-based emergency department simulator.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod clinical_outcomes;
pub mod config;
pub mod data;
pub mod des_kernel;
pub mod experiments;
pub mod interventions;
pub mod ledger_replay;
pub mod metrics;
pub mod pathways;
pub mod population;
pub mod rng;
pub mod sim;
pub mod spatial;
pub mod staff;

pub use config::{Baseline, ConfigError, EdSize, Resolved, SimConfig};
pub use des_kernel::{EventKind, EventRecord, SimTime};
pub use experiments::{
    run_study, Arm, Cell, ScenarioMatrix, StatResult, StudyError, StudyOptions, StudyResults,
};
pub use interventions::{Action, Command, InterventionKind};
pub use ledger_replay::{
    run_batched, ArchiveIndex, Checkpoint, CommandSource, ReplayError, TrajectoryPair,
};
pub use metrics::{RunSummary, TimeSeries};
pub use population::Patient;
pub use sim::Simulation;
