//! Run configuration: one TOML file with a section per module, every key
//! overridable with `--set section.key=value`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use dap_core::container::sha256_hex;
use dap_core::eval::ClassifierKind;
use dap_core::guidance::{default_t_stop, DEFAULT_GAMMA, DEFAULT_GAMMA_GRID, DEFAULT_REFERENCE_BATCH};
use dap_core::kernels::DEFAULT_RBF_BANDWIDTH;
use dap_core::scores::{Activation, DenoiserConfig, TrainHyper};
use dap_core::{FeatureMapSpec, GuidanceConfig, GuidanceTarget, KernelSpec, RefNoise, ScheduleSpec, StepRule, TaskPreset};

use crate::UsageError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Falls back to `DAP_OUTPUT_DIR`, then `dap-out`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub task: TaskSection,
    pub score: ScoreSection,
    pub schedule: ScheduleSection,
    pub guidance: GuidanceSection,
    pub run: RunSection,
    pub eval: EvalSection,
    pub train: TrainSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSection {
    pub preset: TaskPreset,
    /// Seed of the dataset draw / split.
    pub seed: u64,
    /// CSV files replace the preset when both are given.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_csv: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_csv: Option<PathBuf>,
}

impl Default for TaskSection {
    fn default() -> Self {
        Self { preset: TaskPreset::RingsAndBlobs, seed: 0, train_csv: None, test_csv: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    #[default]
    Analytic,
    Denoiser,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreSection {
    pub backend: Backend,
    /// Denoiser checkpoint; required for the denoiser backend and for
    /// hidden-layer features.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    pub steps: usize,
    /// Unset means the 1000-step range rescaled to `steps`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta_start: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta_end: Option<f64>,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self { steps: 50, beta_start: None, beta_end: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    #[default]
    Linear,
    Rbf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    #[default]
    Identity,
    Projection,
    Hidden,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuidanceSection {
    pub gamma: f64,
    /// Unset means `steps / 6`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_stop: Option<usize>,
    pub kernel: KernelKind,
    pub bandwidth: f64,
    pub feature_map: FeatureKind,
    pub projection_dim: usize,
    pub projection_seed: u64,
    pub layer_index: usize,
    pub reference_batch: usize,
    pub ref_noise: RefNoise,
    pub target: GuidanceTarget,
    pub step_rule: StepRule,
}

impl Default for GuidanceSection {
    fn default() -> Self {
        Self {
            gamma: DEFAULT_GAMMA,
            t_stop: None,
            kernel: KernelKind::Linear,
            bandwidth: DEFAULT_RBF_BANDWIDTH,
            feature_map: FeatureKind::Identity,
            projection_dim: 16,
            projection_seed: 0,
            layer_index: 1,
            reference_batch: DEFAULT_REFERENCE_BATCH,
            ref_noise: RefNoise::Fresh,
            target: GuidanceTarget::NoisyState,
            step_rule: StepRule::Verbatim,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodChoice {
    Dap,
    Unguided,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub methods: Vec<MethodChoice>,
    pub ipc: Vec<usize>,
    pub seeds: Vec<u64>,
    pub gamma_grid: Vec<f64>,
    /// Empty means `{0, T/4, T/2, 3T/4, T}`.
    pub t_stop_grid: Vec<usize>,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            methods: vec![MethodChoice::Dap, MethodChoice::Unguided, MethodChoice::Random],
            ipc: vec![10],
            seeds: vec![0, 1, 2, 3, 4],
            gamma_grid: DEFAULT_GAMMA_GRID.to_vec(),
            t_stop_grid: Vec::new(),
            threads: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub classifiers: Vec<String>,
    pub classifier_seeds: Vec<u64>,
    pub mmd_bandwidth: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            classifiers: ClassifierKind::DEFAULTS.iter().map(ToString::to_string).collect(),
            classifier_seeds: vec![0, 1, 2],
            mmd_bandwidth: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub steps: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch: usize,
    pub clip_norm: f64,
    pub val_size: usize,
    pub seed: u64,
    pub cosine_decay: bool,
    pub hidden: Vec<usize>,
    pub time_dim: usize,
    pub activation: Activation,
}

impl Default for TrainSection {
    fn default() -> Self {
        let h = TrainHyper::default();
        let d = DenoiserConfig::default();
        Self {
            steps: h.steps,
            lr: h.lr,
            momentum: h.momentum,
            batch: h.batch,
            clip_norm: h.clip_norm,
            val_size: h.val_size,
            seed: h.seed,
            cosine_decay: h.cosine_decay,
            hidden: d.hidden,
            time_dim: d.time_dim,
            activation: d.activation,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        toml::from_str(text).context("parsing configuration")
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies `section.key=value`. The value is read as a TOML literal,
    /// falling back to a bare string.
    pub fn apply_override(&mut self, assignment: &str) -> anyhow::Result<()> {
        let Some((path, raw)) = assignment.split_once('=') else {
            return Err(UsageError(format!("override '{assignment}' is not key=value")).into());
        };
        let path: Vec<&str> = path.trim().split('.').collect();
        if path.iter().any(|p| p.is_empty()) || path.len() > 2 {
            return Err(UsageError(format!("bad override key '{}'", path.join("."))).into());
        }
        let raw = raw.trim();
        let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));
        let mut root = toml::Table::try_from(&*self).expect("config serializes");
        let table = match path.as_slice() {
            [_] => &mut root,
            [section, _] => root
                .get_mut(*section)
                .and_then(toml::Value::as_table_mut)
                .ok_or_else(|| UsageError(format!("unknown config section '{section}'")))?,
            _ => unreachable!(),
        };
        table.insert(path.last().expect("non-empty").to_string(), value);
        *self = toml::Value::Table(root)
            .try_into()
            .with_context(|| format!("applying override '{assignment}'"))?;
        Ok(())
    }

    pub fn schedule_spec(&self) -> ScheduleSpec {
        let mut s = ScheduleSpec::rescaled(self.schedule.steps);
        if let Some(b) = self.schedule.beta_start {
            s.beta_start = b;
        }
        if let Some(b) = self.schedule.beta_end {
            s.beta_end = b;
        }
        s
    }

    pub fn t_stop(&self) -> usize {
        self.guidance.t_stop.unwrap_or_else(|| default_t_stop(self.schedule.steps))
    }

    pub fn kernel(&self) -> KernelSpec {
        match self.guidance.kernel {
            KernelKind::Linear => KernelSpec::Linear,
            KernelKind::Rbf => KernelSpec::Rbf { bandwidth: self.guidance.bandwidth },
        }
    }

    pub fn feature_map(&self) -> FeatureMapSpec {
        let g = &self.guidance;
        match g.feature_map {
            FeatureKind::Identity => FeatureMapSpec::Identity,
            FeatureKind::Projection => FeatureMapSpec::RandomProjection { n_out: g.projection_dim, seed: g.projection_seed },
            FeatureKind::Hidden => FeatureMapSpec::DenoiserHidden { layer_index: g.layer_index },
        }
    }

    pub fn guidance_config(&self) -> GuidanceConfig {
        let g = &self.guidance;
        GuidanceConfig {
            gamma: g.gamma,
            t_stop: self.t_stop(),
            kernel: self.kernel(),
            feature_map: self.feature_map(),
            reference_batch: g.reference_batch,
            ref_noise: g.ref_noise,
            target: g.target,
            step_rule: g.step_rule,
        }
    }

    pub fn t_stop_grid(&self) -> Vec<usize> {
        if self.run.t_stop_grid.is_empty() {
            let t = self.schedule.steps;
            vec![0, t / 4, t / 2, 3 * t / 4, t]
        } else {
            self.run.t_stop_grid.clone()
        }
    }

    pub fn classifiers(&self) -> anyhow::Result<Vec<ClassifierKind>> {
        self.eval.classifiers.iter().map(|s| s.parse::<ClassifierKind>().map_err(Into::into)).collect()
    }

    pub fn train_hyper(&self) -> TrainHyper {
        let t = &self.train;
        TrainHyper {
            steps: t.steps,
            lr: t.lr,
            momentum: t.momentum,
            batch: t.batch,
            clip_norm: t.clip_norm,
            val_size: t.val_size,
            seed: t.seed,
            cosine_decay: t.cosine_decay,
        }
    }

    pub fn denoiser_config(&self) -> DenoiserConfig {
        DenoiserConfig { hidden: self.train.hidden.clone(), time_dim: self.train.time_dim, activation: self.train.activation }
    }

    /// Checks everything that can be checked without loading data.
    pub fn validate(&self) -> anyhow::Result<()> {
        self.schedule_spec().build()?;
        let steps = self.schedule.steps;
        self.guidance_config().validate(steps)?;
        if self.run.ipc.is_empty() || self.run.ipc.contains(&0) {
            bail!(dap_core::Error::InvalidParameter("run.ipc must be a non-empty list of positive counts".into()));
        }
        if self.run.seeds.is_empty() {
            bail!(dap_core::Error::InvalidParameter("run.seeds must not be empty".into()));
        }
        if self.run.methods.is_empty() {
            bail!(dap_core::Error::InvalidParameter("run.methods must not be empty".into()));
        }
        for &g in &self.run.gamma_grid {
            if !(g >= 0.0 && g.is_finite()) {
                bail!(dap_core::Error::InvalidParameter(format!("gamma grid entry {g} must be finite and >= 0")));
            }
        }
        if let Some(&t) = self.t_stop_grid().iter().find(|&&t| t > steps) {
            bail!(dap_core::Error::InvalidParameter(format!("t_stop grid entry {t} exceeds T = {steps}")));
        }
        if self.eval.classifier_seeds.is_empty() {
            bail!(dap_core::Error::InvalidParameter("eval.classifier_seeds must not be empty".into()));
        }
        if !(self.eval.mmd_bandwidth > 0.0) {
            bail!(dap_core::Error::InvalidParameter("eval.mmd_bandwidth must be positive".into()));
        }
        self.classifiers()?;
        let needs_net = self.score.backend == Backend::Denoiser || self.guidance.feature_map == FeatureKind::Hidden;
        if needs_net && self.score.checkpoint.is_none() {
            bail!(dap_core::Error::InvalidParameter("score.checkpoint is required for the denoiser backend and hidden-layer features".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, ignoring settings that do not
    /// change results (output directory, thread count).
    /// The configuration without machine-local settings (output location,
    /// thread count), which affect neither results nor the hash.
    pub fn portable(&self) -> RunConfig {
        let mut c = self.clone();
        c.output_dir = None;
        c.run.threads = 0;
        c
    }

    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(&self.portable()).expect("config serializes"))
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::to_value(self.portable()).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
        assert_eq!(RunConfig::from_toml("").unwrap(), c);
        c.validate().unwrap();
        assert_eq!(c.t_stop(), 8);
        assert_eq!(c.t_stop_grid(), vec![0, 12, 25, 37, 50]);
    }

    #[test]
    fn overrides() {
        let mut c = RunConfig::default();
        c.apply_override("guidance.gamma=0.5").unwrap();
        c.apply_override("guidance.kernel=rbf").unwrap();
        c.apply_override("run.seeds=[1, 2]").unwrap();
        c.apply_override("task.preset=digits-pca").unwrap();
        c.apply_override("guidance.t_stop=3").unwrap();
        assert_eq!(c.guidance.gamma, 0.5);
        assert_eq!(c.kernel(), KernelSpec::Rbf { bandwidth: 1.0 });
        assert_eq!(c.run.seeds, vec![1, 2]);
        assert_eq!(c.task.preset, TaskPreset::DigitsPca);
        assert_eq!(c.t_stop(), 3);
        assert!(c.apply_override("guidance.nope=1").is_err());
        assert!(c.apply_override("nosuch.key=1").is_err());
        assert!(c.apply_override("gamma").is_err());
        assert!(c.apply_override("guidance.gamma=fast").is_err());
    }

    #[test]
    fn hash_ignores_output_location() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.output_dir = Some("/elsewhere".into());
        b.run.threads = 3;
        assert_eq!(a.hash(), b.hash());
        b.guidance.gamma = 0.2;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn validation_catches_bad_values() {
        let mut c = RunConfig::default();
        c.guidance.t_stop = Some(60);
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.guidance.feature_map = FeatureKind::Hidden;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.eval.classifiers = vec!["forest".into()];
        assert!(c.validate().is_err());
    }
}
