//! Dataset distillation by reverse diffusion with a representativeness
//! prior.
//!
//! Samples are drawn class by class from a VP diffusion sampler whose
//! ancestral update is nudged toward low mean kernel distance to the real
//! samples of the class. The crate covers the kernels, the noise schedule,
//! the score backends, the guided sampler, the baselines and the
//! evaluation harness.

pub mod checks;
pub mod container;
pub mod data;
pub mod distill;
pub mod error;
pub mod eval;
pub mod guidance;
pub mod kernels;
pub mod linalg;
pub mod rng;
pub mod scores;
pub mod sde;
pub mod tasks;

pub use data::{LabeledDataset, Split};
pub use distill::{distill_dap, distill_random, subsample_set, DistilledSet, Method, Provenance};
pub use error::{Error, Result};
pub use guidance::{GuidanceConfig, GuidanceTarget, RefNoise};
pub use kernels::{FeatureMap, FeatureMapSpec, KernelSpec};
pub use rng::{Purpose, RngStream};
pub use scores::{AnalyticScore, DenoiserModel, GmmSpec, ScoreModel};
pub use sde::{NoiseSchedule, ScheduleSpec, StepRule};
pub use tasks::{TaskData, TaskPreset};
