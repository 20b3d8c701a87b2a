//! Multitask answer-and-explanation toolkit: canonical VQA corpora, prompt
//! augmentation, reference scorers, decoding, multiple-choice mapping,
//! metrics and e-ViL style evaluation.

pub mod augment;
pub mod corpus;
pub mod decode;
pub mod evalhub;
pub mod image;
pub mod jsonl;
pub mod metrics;
pub mod pipeline;
pub mod rng;
pub mod scorer;
pub mod select;
pub mod synth;
pub mod text;

pub use augment::{PromptRegistry, TaskShape, TrainingExample};
pub use corpus::{Dataset, VqaInstance};
pub use decode::{DecodeConfig, GenerationResult, Strategy};
pub use evalhub::{ErrorAnnotation, ErrorCategory, EvilScore};
pub use metrics::{ExternalScores, MetricValue};
pub use pipeline::{PipelineConfig, Report};
pub use scorer::{TokenId, TokenScorer, Vocab};
