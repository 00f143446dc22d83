//! Everything a subcommand needs after the config is validated.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _};

use dap_core::scores::DenoiserModel;
use dap_core::{AnalyticScore, LabeledDataset, NoiseSchedule, ScoreModel, Split, TaskData};

use crate::config::{Backend, RunConfig};

pub const DEFAULT_OUTPUT_DIR: &str = "dap-out";
pub const OUTPUT_DIR_ENV: &str = "DAP_OUTPUT_DIR";

/// Analytic mixture scores, a trained network, or both (analytic scores
/// with the network used only for hidden-layer features).
pub struct LoadedScore {
    analytic: Option<AnalyticScore>,
    net: Option<DenoiserModel>,
}

impl ScoreModel for LoadedScore {
    fn dim(&self) -> usize {
        match (&self.analytic, &self.net) {
            (Some(a), _) => a.dim(),
            (None, Some(n)) => ScoreModel::dim(n),
            (None, None) => unreachable!("score without backend"),
        }
    }

    fn labels(&self) -> Vec<usize> {
        match (&self.analytic, &self.net) {
            (Some(a), _) => a.labels(),
            (None, Some(n)) => ScoreModel::labels(n),
            (None, None) => unreachable!("score without backend"),
        }
    }

    fn eps(&self, schedule: &NoiseSchedule, class: Option<usize>, x_t: &[f64], t: usize) -> dap_core::Result<Vec<f64>> {
        match (&self.analytic, &self.net) {
            (Some(a), _) => a.eps(schedule, class, x_t, t),
            (None, Some(n)) => n.eps(schedule, class, x_t, t),
            (None, None) => unreachable!("score without backend"),
        }
    }

    fn backend_id(&self) -> String {
        match (&self.analytic, &self.net) {
            (Some(a), _) => a.backend_id(),
            (None, Some(n)) => n.backend_id(),
            (None, None) => unreachable!("score without backend"),
        }
    }

    fn denoiser(&self) -> Option<&DenoiserModel> {
        self.net.as_ref()
    }
}

pub struct Workspace {
    pub config: RunConfig,
    pub hash: String,
    pub task: TaskData,
    pub schedule: NoiseSchedule,
    pub out_dir: PathBuf,
}

impl Workspace {
    /// Validates `config` and loads the task data.
    pub fn open(config: RunConfig) -> anyhow::Result<Self> {
        config.validate()?;
        let task = load_task(&config)?;
        let schedule = config.schedule_spec().build()?;
        let out_dir = config
            .output_dir
            .clone()
            .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR));
        std::fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
        let hash = config.hash();
        Ok(Self { config, hash, task, schedule, out_dir })
    }

    pub fn train(&self) -> &LabeledDataset {
        &self.task.train
    }

    pub fn test(&self) -> &LabeledDataset {
        &self.task.test
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    /// Builds the configured score backend and checks it against the data.
    pub fn score(&self) -> anyhow::Result<LoadedScore> {
        let net = match &self.config.score.checkpoint {
            Some(p) => Some(load_checkpoint(p)?),
            None => None,
        };
        let analytic = match self.config.score.backend {
            Backend::Analytic => match &self.task.spec {
                Some(spec) => Some(AnalyticScore::new(spec.clone())),
                None => bail!(dap_core::Error::InvalidParameter(
                    "the analytic backend needs a task with a known mixture; use score.backend = \"denoiser\"".into()
                )),
            },
            Backend::Denoiser => None,
        };
        let score = LoadedScore { analytic, net };
        if score.dim() != self.train().dim() {
            bail!(dap_core::Error::DimensionMismatch { expected: self.train().dim(), got: score.dim() });
        }
        if let Some(n) = &score.net {
            if ScoreModel::dim(n) != self.train().dim() {
                bail!(dap_core::Error::DimensionMismatch { expected: self.train().dim(), got: ScoreModel::dim(n) });
            }
        }
        let labels = score.labels();
        if let Some(&c) = self.train().classes().iter().find(|c| !labels.contains(c)) {
            bail!(dap_core::Error::UnknownClass(c));
        }
        Ok(score)
    }

    /// `# config_hash=...` header line shared by every CSV.
    pub fn csv_header(&self) -> String {
        format!("# config_hash={}\n", self.hash)
    }
}

fn load_checkpoint(path: &Path) -> anyhow::Result<DenoiserModel> {
    DenoiserModel::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn load_task(config: &RunConfig) -> anyhow::Result<TaskData> {
    let t = &config.task;
    match (&t.train_csv, &t.test_csv) {
        (Some(train), Some(test)) => {
            let read = |p: &PathBuf| LabeledDataset::read_csv(p, None).with_context(|| format!("reading {}", p.display()));
            let train = read(train)?;
            let test = read(test)?.with_split(Split::Test);
            if train.dim() != test.dim() {
                bail!(dap_core::Error::DimensionMismatch { expected: train.dim(), got: test.dim() });
            }
            Ok(TaskData { train, test, spec: None })
        }
        (None, None) => Ok(t.preset.load(t.seed)?),
        _ => bail!(dap_core::Error::InvalidParameter("task.train_csv and task.test_csv must be given together".into())),
    }
}
