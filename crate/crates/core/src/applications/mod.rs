//! Uses of a trained judge: picking among systems' responses and serving as
//! the reward for policy-gradient training.

pub mod degeneracy;
pub mod policy;
pub mod rerank;
pub mod rl;

pub use degeneracy::{degeneracy_report, DegeneracyReport};
pub use policy::{
    policy_gradient, policy_gradient_update, DialoguePolicy, Episode, MovingBaseline, PgOptimizer, Policy,
    PolicyState, SoftmaxBandit, Step,
};
pub use rerank::{
    evaluate_rerank, rerank, rerank_dialogue, select_best, Candidate, CandidateSet, RerankEvaluation, RerankSystem,
    SystemScore,
};
pub use rl::{run_rl, RlConfig, RlOutcome, TraceRow};
