//! Master/worker runtime for coded matrix-vector products.

pub mod cluster;
pub mod master;
pub mod metrics;
pub mod straggler;
pub mod transport;
pub mod wire;
pub mod worker;

pub use cluster::{launch_local_cluster, run_cluster, ClusterConfig, ClusterOutcome, Transport};
pub use master::{master_run, ClusterEngine, MasterSetup, Schedule};
pub use metrics::{ExperimentMetrics, IterationMetrics, RoundMetrics, WorkerMetrics};
pub use straggler::{StragglerMode, StragglerPolicy};
pub use transport::Link;
pub use wire::{Operand, OperandSet, Role, WireMessage};
pub use worker::{worker_run, WorkerData};
