pub mod annotation;
pub mod applications;
pub mod autodiff;
pub mod corpus;
pub mod error;
pub mod judge;
pub mod models;
pub mod optim;
pub mod params;
pub mod pipeline;
pub mod scalar;
pub mod selftalk;
pub mod stats;
pub mod synthetic;
pub mod tensor;

pub use scalar::Scalar;

pub type JudgeModelF32 = judge::JudgeModel<f32>;
pub type JudgeModelF64 = judge::JudgeModel<f64>;
pub type JudgeEncoderF32 = judge::JudgeEncoder<f32>;
pub type JudgeEncoderF64 = judge::JudgeEncoder<f64>;
pub type ModelParamsF32 = models::ModelParams<f32>;
pub type ModelParamsF64 = models::ModelParams<f64>;
pub type DialoguePolicyF32 = applications::DialoguePolicy<f32>;
pub type DialoguePolicyF64 = applications::DialoguePolicy<f64>;
