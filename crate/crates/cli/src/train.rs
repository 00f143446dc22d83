//! `dap train-denoiser`

use std::path::PathBuf;

use serde::Serialize;

use dap_core::scores::{train_denoiser, validation_eps_mse, TrainReport, TrainingSource};
use dap_core::{AnalyticScore, ScoreModel};

use crate::context::Workspace;

#[derive(Debug, Serialize)]
pub struct TrainSummary {
    pub config_hash: String,
    pub checkpoint: PathBuf,
    pub num_params: usize,
    pub report: TrainReport,
    /// Validation ε-MSE of the exact mixture scores on the same draws.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub analytic_val_mse: Option<f64>,
}

pub fn run(ws: &Workspace, checkpoint: Option<PathBuf>) -> anyhow::Result<TrainSummary> {
    let hyper = ws.config.train_hyper();
    let source = match &ws.task.spec {
        Some(spec) => TrainingSource::Mixture(spec),
        None => TrainingSource::Dataset(ws.train()),
    };
    let (model, report) = train_denoiser(source, &ws.schedule, &ws.config.denoiser_config(), &hyper)?;
    let analytic_val_mse = match &ws.task.spec {
        Some(spec) => {
            let a = AnalyticScore::new(spec.clone());
            Some(validation_eps_mse(source, &ws.schedule, &hyper, |x, t, c| a.eps(&ws.schedule, Some(c), x, t))?)
        }
        None => None,
    };
    let path = checkpoint.unwrap_or_else(|| ws.path("denoiser.json"));
    model.save(&path)?;
    let summary = TrainSummary { config_hash: ws.hash.clone(), checkpoint: path, num_params: model.num_params(), report, analytic_val_mse };
    std::fs::write(ws.path("train_report.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}
