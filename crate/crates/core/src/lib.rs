//! Subgroup-based adaptive designs for multi-arm biomarker trials.

pub mod comparators;
pub mod data;
pub mod design;
pub mod partition;
pub mod posterior;
pub mod scenario;
pub mod service;
pub mod simulator;

pub use data::{Arm, BiomarkerMatrix, DataError, PatientId, TrialData};
pub use design::{AllocationMode, DesignConfig, Phase, StopReason, SubaTrial};
pub use partition::{PartitionCatalog, PartitionLayout, PriorParams, ThresholdedPartition};
pub use posterior::{BetaHyper, PosteriorState};
pub use scenario::Scenario;
pub use simulator::{run_study, DesignKind, StudyConfig, StudyResult};
