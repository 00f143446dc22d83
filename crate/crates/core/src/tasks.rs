//! Built-in tasks.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::linalg::Pca;
use crate::rng::{Purpose, RngStream};
use crate::scores::GmmSpec;

const DIGITS_CSV: &str = include_str!("../data/digits8x8.csv");

pub const RINGS_TRAIN_PER_CLASS: usize = 1000;
pub const RINGS_TEST_PER_CLASS: usize = 2000;
pub const DIGITS_PCA_DIM: usize = 16;
pub const DIGITS_TEST_FRACTION: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TaskPreset {
    /// Four bimodal classes in 2-D with an exact mixture density.
    #[default]
    RingsAndBlobs,
    /// 8×8 handwritten digits projected to 16-D by PCA.
    DigitsPca,
}

impl fmt::Display for TaskPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskPreset::RingsAndBlobs => "rings-and-blobs",
            TaskPreset::DigitsPca => "digits-pca",
        })
    }
}

impl FromStr for TaskPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rings-and-blobs" => Ok(TaskPreset::RingsAndBlobs),
            "digits-pca" => Ok(TaskPreset::DigitsPca),
            other => Err(Error::InvalidParameter(format!("unknown task preset '{other}'"))),
        }
    }
}

/// Train/test splits plus the generating mixture when it is known.
#[derive(Debug, Clone)]
pub struct TaskData {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub spec: Option<GmmSpec>,
}

impl TaskPreset {
    pub fn load(self, seed: u64) -> Result<TaskData> {
        match self {
            TaskPreset::RingsAndBlobs => rings_and_blobs(seed, RINGS_TRAIN_PER_CLASS, RINGS_TEST_PER_CLASS),
            TaskPreset::DigitsPca => digits_pca(seed),
        }
    }
}

pub fn rings_and_blobs(seed: u64, n_train: usize, n_test: usize) -> Result<TaskData> {
    let spec = GmmSpec::rings_and_blobs();
    let train = spec.sample_dataset(n_train, &mut RngStream::derive(seed, Purpose::Data, 0, 0))?;
    let test = spec
        .sample_dataset(n_test, &mut RngStream::derive(seed, Purpose::Data, 0, 1))?
        .with_split(Split::Test);
    Ok(TaskData { train, test, spec: Some(spec) })
}

/// The raw 64-pixel digit set.
pub fn digits_raw() -> Result<LabeledDataset> {
    LabeledDataset::parse_csv(DIGITS_CSV.as_bytes(), None)
}

/// Stratified split, PCA fitted on the training part, then one global scale
/// so the average per-coordinate training variance is 1.
pub fn digits_pca(seed: u64) -> Result<TaskData> {
    let raw = digits_raw()?;
    let (train, test) = raw.stratified_split(DIGITS_TEST_FRACTION, &mut RngStream::derive(seed, Purpose::Data, 0, 2))?;
    let pca = Pca::fit(train.samples(), DIGITS_PCA_DIM)?;
    let avg_var = pca.explained_variance().iter().sum::<f64>() / DIGITS_PCA_DIM as f64;
    let scale = 1.0 / avg_var.sqrt();
    let project = |x: &[f64]| -> Result<Vec<f64>> { Ok(pca.transform(x)?.into_iter().map(|v| v * scale).collect()) };
    Ok(TaskData { train: train.map_samples(project)?, test: test.map_samples(project)?, spec: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::covariance;

    #[test]
    fn digits_shape_and_scale() {
        let raw = digits_raw().unwrap();
        assert_eq!(raw.len(), 1797);
        assert_eq!(raw.dim(), 64);
        assert_eq!(raw.classes(), (0..10).collect::<Vec<_>>().as_slice());
        let task = digits_pca(0).unwrap();
        assert_eq!(task.train.dim(), DIGITS_PCA_DIM);
        assert_eq!(task.train.len() + task.test.len(), 1797);
        let cov = covariance(task.train.samples()).unwrap();
        assert!((cov.trace() / DIGITS_PCA_DIM as f64 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rings_deterministic() {
        let a = TaskPreset::RingsAndBlobs.load(3).unwrap();
        let b = TaskPreset::RingsAndBlobs.load(3).unwrap();
        assert_eq!(a.train, b.train);
        assert_ne!(a.train.samples()[0], a.test.samples()[0]);
        assert_eq!(a.train.classes(), &[0, 1, 2, 3]);
    }

    #[test]
    fn preset_names_round_trip() {
        for p in [TaskPreset::RingsAndBlobs, TaskPreset::DigitsPca] {
            assert_eq!(p.to_string().parse::<TaskPreset>().unwrap(), p);
        }
        assert!("mnist".parse::<TaskPreset>().is_err());
    }
}
