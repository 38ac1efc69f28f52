//! Turn-level ratings: collection service, MACE aggregation and agreement
//! statistics.

pub mod agreement;
pub mod dataset;
pub mod http;
pub mod mace;
pub mod service;
pub mod store;

use serde::{Deserialize, Serialize};

pub use agreement::{agreement_report, AgreementReport};
pub use dataset::{build_dataset, load_dataset, write_dataset, AggregatedRecord};
pub use mace::{mace_aggregate, MaceConfig, MaceOutput};
pub use service::{AnnotationService, NextTask, RatingInput, ServiceConfig, ServiceError, Task};
pub use store::RatingStore;

pub const NUM_LABELS: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TurnRating {
    pub dialogue_id: String,
    pub turn_index: usize,
    pub judge_id: String,
    pub rating: u8,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatedLabel {
    pub dialogue_id: String,
    pub turn_index: usize,
    pub label: u8,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeProfile {
    pub judge_id: String,
    /// Probability of copying the true label instead of spamming.
    pub competence: f64,
    pub spam_distribution: [f64; NUM_LABELS],
}
