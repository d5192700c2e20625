//! Toy diffusion lab for classifier-free guidance with time-dependent,
//! norm-normalised scaling.
//!
//! The crate trains a small conditional denoiser on a two-class 2D dataset,
//! samples it under several guidance rules and scores the samples against
//! the known ground-truth manifolds.

pub mod csvio;
pub mod error;
pub mod guidance;
pub mod guidance_weight;
pub mod metrics;
pub mod models;
pub mod neural;
pub mod sampler;
pub mod schedule;
pub mod toydata;

pub use error::{Error, Result};
pub use guidance::{apply_rule, GuidanceContext, GuidanceRule};
pub use guidance_weight::{BetaWeight, TimeWeight};
pub use metrics::{EvalReport, Evaluator};
pub use models::{
    train_classifier, train_denoiser, ClassifierConfig, Condition, Denoiser, DenoiserConfig, NoisyClassifier,
    TrainReport,
};
pub use sampler::{sample, SampleRun, SamplerConfig, SamplerMode, Trajectory};
pub use schedule::{NoiseSchedule, ScheduleParams, VarianceChoice};
pub use toydata::{generate, LabeledSet, ManifoldOracle, Standardization, ToySpec};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/schedule.md")]
    pub mod schedule {}
    #[doc = include_str!("../../../book/src/guidance.md")]
    pub mod guidance {}
    #[doc = include_str!("../../../book/src/training.md")]
    pub mod training {}
    #[doc = include_str!("../../../book/src/sampling.md")]
    pub mod sampling {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    pub mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod cli {}
}
