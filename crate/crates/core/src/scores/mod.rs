//! Noise predictors `ε(x_t, t)`.

mod denoiser;
mod gmm;

pub use denoiser::{
    time_embedding, train_denoiser, validation_eps_mse, Activation, Checkpoint, Dense, DenoiserConfig, DenoiserModel,
    ForwardState, TrainHyper, TrainReport, TrainingSource, CHECKPOINT_FORMAT, CHECKPOINT_VERSION,
};
pub use gmm::{gmm_eps, gmm_nll, GmmClass, GmmSpec};

use crate::error::Result;
use crate::sde::NoiseSchedule;

/// Anything that predicts the injected noise, optionally class-conditioned.
pub trait ScoreModel: Sync {
    fn dim(&self) -> usize;

    fn labels(&self) -> Vec<usize>;

    fn eps(&self, schedule: &NoiseSchedule, class: Option<usize>, x_t: &[f64], t: usize) -> Result<Vec<f64>>;

    /// Short identifier recorded in provenance.
    fn backend_id(&self) -> String;

    /// The network, when the backend has one whose hidden layers can act as
    /// a feature map.
    fn denoiser(&self) -> Option<&DenoiserModel> {
        None
    }
}

/// Exact scores of a known mixture.
#[derive(Debug, Clone)]
pub struct AnalyticScore {
    pub spec: GmmSpec,
}

impl AnalyticScore {
    pub fn new(spec: GmmSpec) -> Self {
        Self { spec }
    }
}

impl ScoreModel for AnalyticScore {
    fn dim(&self) -> usize {
        self.spec.dim()
    }

    fn labels(&self) -> Vec<usize> {
        self.spec.labels()
    }

    fn eps(&self, schedule: &NoiseSchedule, class: Option<usize>, x_t: &[f64], t: usize) -> Result<Vec<f64>> {
        gmm_eps(&self.spec, schedule, class, x_t, t)
    }

    fn backend_id(&self) -> String {
        "analytic-gmm".into()
    }
}

impl ScoreModel for DenoiserModel {
    fn dim(&self) -> usize {
        DenoiserModel::dim(self)
    }

    fn labels(&self) -> Vec<usize> {
        DenoiserModel::labels(self).to_vec()
    }

    fn eps(&self, schedule: &NoiseSchedule, class: Option<usize>, x_t: &[f64], t: usize) -> Result<Vec<f64>> {
        schedule.check_step(t)?;
        Ok(self.forward_opt(x_t, t, class)?.eps().to_vec())
    }

    fn backend_id(&self) -> String {
        let widths: Vec<String> = self.layers()[..self.num_hidden()].iter().map(|l| l.n_out.to_string()).collect();
        format!("denoiser[{}]", widths.join("x"))
    }

    fn denoiser(&self) -> Option<&DenoiserModel> {
        Some(self)
    }
}

/// Analytic scores for sampling paired with a denoiser used only as a
/// feature map.
pub struct WithFeatureNet<'a, S: ScoreModel> {
    pub score: &'a S,
    pub net: &'a DenoiserModel,
}

impl<S: ScoreModel> ScoreModel for WithFeatureNet<'_, S> {
    fn dim(&self) -> usize {
        self.score.dim()
    }

    fn labels(&self) -> Vec<usize> {
        self.score.labels()
    }

    fn eps(&self, schedule: &NoiseSchedule, class: Option<usize>, x_t: &[f64], t: usize) -> Result<Vec<f64>> {
        self.score.eps(schedule, class, x_t, t)
    }

    fn backend_id(&self) -> String {
        self.score.backend_id()
    }

    fn denoiser(&self) -> Option<&DenoiserModel> {
        Some(self.net)
    }
}
