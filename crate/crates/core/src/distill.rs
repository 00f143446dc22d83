//! Distillation runs and their outputs.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::guidance::{Guide, GuidanceConfig, ReferenceBank};
use crate::rng::{Purpose, RngStream};
use crate::scores::ScoreModel;
use crate::sde::{NoiseSchedule, ScheduleSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Dap,
    /// Diffusion sampling without guidance.
    Unguided,
    /// Uniform subset of the real training data.
    Random,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Dap => "dap",
            Method::Unguided => "unguided",
            Method::Random => "random",
        }
    }
}

/// Everything needed to regenerate a set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub method: Method,
    pub ipc: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guidance: Option<GuidanceConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend: Option<String>,
    /// Set this one was subsampled from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<Box<Provenance>>,
    /// Hash of the run configuration that produced the set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    /// The run configuration itself.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_config: Option<serde_json::Value>,
}

impl Provenance {
    fn new(method: Method, ipc: usize, seed: u64) -> Self {
        Self { method, ipc, seed, guidance: None, schedule: None, backend: None, parent: None, config_hash: None, run_config: None }
    }
}

/// `ipc` samples for every class.
#[derive(Debug, Clone, PartialEq)]
pub struct DistilledSet {
    dim: usize,
    ipc: usize,
    per_class: BTreeMap<usize, Vec<Vec<f64>>>,
    pub provenance: Provenance,
}

impl DistilledSet {
    pub fn new(dim: usize, per_class: BTreeMap<usize, Vec<Vec<f64>>>, provenance: Provenance) -> Result<Self> {
        if per_class.is_empty() {
            return Err(Error::Empty("distilled classes"));
        }
        let ipc = provenance.ipc;
        for (c, rows) in &per_class {
            if rows.len() != ipc {
                return Err(Error::InvalidParameter(format!("class {c} has {} samples, expected ipc {ipc}", rows.len())));
            }
            for r in rows {
                crate::error::check_dim(dim, r.len())?;
                crate::error::check_finite(r, "distilled sample")?;
            }
        }
        Ok(Self { dim, ipc, per_class, provenance })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ipc(&self) -> usize {
        self.ipc
    }

    pub fn classes(&self) -> Vec<usize> {
        self.per_class.keys().copied().collect()
    }

    pub fn class(&self, label: usize) -> Result<&[Vec<f64>]> {
        self.per_class.get(&label).map(Vec::as_slice).ok_or(Error::UnknownClass(label))
    }

    pub fn per_class(&self) -> &BTreeMap<usize, Vec<Vec<f64>>> {
        &self.per_class
    }

    pub fn len(&self) -> usize {
        self.ipc * self.per_class.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn method(&self) -> Method {
        self.provenance.method
    }

    pub fn to_dataset(&self) -> Result<LabeledDataset> {
        let mut samples = Vec::with_capacity(self.len());
        let mut labels = Vec::with_capacity(self.len());
        for (&c, rows) in &self.per_class {
            samples.extend(rows.iter().cloned());
            labels.extend(std::iter::repeat_n(c, rows.len()));
        }
        LabeledDataset::with_classes(samples, labels, self.classes())
    }
}

/// Per-trajectory guided-step counts of a run.
pub type GuidedSteps = BTreeMap<usize, Vec<usize>>;

/// Guided sampling for every class of `train`.
pub fn distill_dap<S: ScoreModel + ?Sized>(
    train: &LabeledDataset,
    cfg: &GuidanceConfig,
    schedule: &NoiseSchedule,
    score: &S,
    ipc: usize,
    seed: u64,
) -> Result<DistilledSet> {
    distill_dap_instrumented(train, cfg, schedule, score, ipc, seed).map(|(set, _)| set)
}

pub fn distill_dap_instrumented<S: ScoreModel + ?Sized>(
    train: &LabeledDataset,
    cfg: &GuidanceConfig,
    schedule: &NoiseSchedule,
    score: &S,
    ipc: usize,
    seed: u64,
) -> Result<(DistilledSet, GuidedSteps)> {
    let bank = ReferenceBank::from_dataset(train);
    let guide = Guide::new(cfg, schedule, score)?;
    for &c in train.classes() {
        bank.class(c)?;
    }
    let runs = train
        .classes()
        .par_iter()
        .map(|&c| guide.sample_distilled(&bank, c, ipc, seed).map(|b| (c, b)))
        .collect::<Result<Vec<_>>>()?;
    let mut per_class = BTreeMap::new();
    let mut steps = BTreeMap::new();
    for (c, batch) in runs {
        per_class.insert(c, batch.samples);
        steps.insert(c, batch.guided_steps);
    }
    let method = if cfg.is_unguided(schedule.steps()) { Method::Unguided } else { Method::Dap };
    let mut prov = Provenance::new(method, ipc, seed);
    prov.guidance = Some(cfg.clone());
    prov.schedule = Some(schedule.spec());
    prov.backend = Some(score.backend_id());
    Ok((DistilledSet::new(train.dim(), per_class, prov)?, steps))
}

fn sorted_subset(rng: &mut RngStream, rows: &[Vec<f64>], k: usize) -> Vec<Vec<f64>> {
    let mut idx = rng.choose_indices(rows.len(), k);
    idx.sort_unstable();
    idx.into_iter().map(|i| rows[i].clone()).collect()
}

/// Uniform without-replacement subset of each class, kept in dataset order.
pub fn distill_random(train: &LabeledDataset, ipc: usize, seed: u64) -> Result<DistilledSet> {
    if ipc == 0 {
        return Err(Error::InvalidParameter("ipc must be >= 1".into()));
    }
    let mut per_class = BTreeMap::new();
    for &c in train.classes() {
        let rows = train.class_samples(c);
        if rows.len() < ipc {
            return Err(Error::InvalidParameter(format!("class {c} has {} samples, fewer than ipc {ipc}", rows.len())));
        }
        let mut rng = RngStream::derive(seed, Purpose::Subset, c, 0);
        per_class.insert(c, sorted_subset(&mut rng, &rows, ipc));
    }
    DistilledSet::new(train.dim(), per_class, Provenance::new(Method::Random, ipc, seed))
}

/// Smaller set drawn from an existing one; provenance chains to the parent.
pub fn subsample_set(set: &DistilledSet, new_ipc: usize, seed: u64) -> Result<DistilledSet> {
    if new_ipc == 0 || new_ipc > set.ipc {
        return Err(Error::InvalidParameter(format!("cannot subsample ipc {} to {new_ipc}", set.ipc)));
    }
    let mut per_class = BTreeMap::new();
    for (&c, rows) in &set.per_class {
        let mut rng = RngStream::derive(seed, Purpose::Subset, c, 1);
        per_class.insert(c, sorted_subset(&mut rng, rows, new_ipc));
    }
    let mut prov = set.provenance.clone();
    prov.ipc = new_ipc;
    prov.seed = seed;
    prov.parent = Some(Box::new(set.provenance.clone()));
    DistilledSet::new(set.dim, per_class, prov)
}
