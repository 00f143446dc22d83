//! Representativeness guidance.
//!
//! The energy of a sample is its mean kernel-induced distance to a batch of
//! class references, `E(x) = (1/N) Σ D_K(φ(x), φ(x_ref))`, and the guidance
//! direction is `g = −∇_x E(x)`. During reverse sampling the references are
//! forward-noised to the current step, and the guided update is
//! `x_{t−1} = x̃_{t−1} + γ g_t` for `t > t_stop`, where `x̃_{t−1}` is the
//! plain ancestral step.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{check_dim, Error, Result};
use crate::kernels::{induced_grad_accumulate, induced_unchecked, FeatureMap, FeatureMapSpec, KernelSpec, Projection};
use crate::rng::{Purpose, RngStream};
use crate::scores::{DenoiserModel, ScoreModel};
use crate::sde::{ancestral_step, forward_noise_with, x0_estimate, NoiseSchedule, StepRule};

pub const DEFAULT_REFERENCE_BATCH: usize = 256;
pub const DEFAULT_GAMMA: f64 = 0.1;
/// Ascending; the last entry is past the collapse point on the default task.
pub const DEFAULT_GAMMA_GRID: [f64; 7] = [0.0, 0.05, 0.1, 0.2, 0.5, 1.0, 2.0];

/// Default early stop for a `steps`-step sampler (8 of 50).
pub fn default_t_stop(steps: usize) -> usize {
    steps / 6
}

/// How reference noise is drawn across steps of one trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RefNoise {
    /// Fresh Gaussian noise for every reference at every step.
    #[default]
    Fresh,
    /// One noise draw per reference, reused at every step.
    Frozen,
}

/// Which state the distance is measured on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GuidanceTarget {
    /// `x_t` against references noised to step `t`.
    #[default]
    NoisyState,
    /// The affine clean estimate `x̂_0(x_t)` against clean references, with
    /// the noise prediction held constant when differentiating.
    DenoisedEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceConfig {
    pub gamma: f64,
    /// Guidance is applied only at steps `t > t_stop`.
    pub t_stop: usize,
    pub kernel: KernelSpec,
    pub feature_map: FeatureMapSpec,
    /// References per trajectory, capped at the class size.
    pub reference_batch: usize,
    #[serde(default)]
    pub ref_noise: RefNoise,
    #[serde(default)]
    pub target: GuidanceTarget,
    #[serde(default)]
    pub step_rule: StepRule,
}

impl GuidanceConfig {
    /// Defaults for a `steps`-step sampler: linear kernel, identity features,
    /// [`default_t_stop`].
    pub fn new(gamma: f64, steps: usize) -> Self {
        Self {
            gamma,
            t_stop: default_t_stop(steps),
            kernel: KernelSpec::Linear,
            feature_map: FeatureMapSpec::Identity,
            reference_batch: DEFAULT_REFERENCE_BATCH,
            ref_noise: RefNoise::Fresh,
            target: GuidanceTarget::NoisyState,
            step_rule: StepRule::Verbatim,
        }
    }

    pub fn validate(&self, steps: usize) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidParameter(format!("gamma must be finite and >= 0, got {}", self.gamma)));
        }
        if self.t_stop > steps {
            return Err(Error::InvalidParameter(format!("t_stop {} exceeds T = {steps}", self.t_stop)));
        }
        if self.reference_batch == 0 {
            return Err(Error::InvalidParameter("reference batch must be >= 1".into()));
        }
        if let FeatureMapSpec::RandomProjection { n_out: 0, .. } = self.feature_map {
            return Err(Error::InvalidParameter("projection output dimension must be >= 1".into()));
        }
        self.kernel.validate()
    }

    /// True when the configuration reduces to plain ancestral sampling.
    pub fn is_unguided(&self, steps: usize) -> bool {
        self.gamma == 0.0 || self.t_stop >= steps
    }
}

/// Mean induced distance from `x` to `refs` in feature space.
pub fn representativeness_energy(kernel: &KernelSpec, map: &FeatureMap<'_>, x: &[f64], refs: &[Vec<f64>]) -> Result<f64> {
    if refs.is_empty() {
        return Err(Error::Empty("references"));
    }
    kernel.validate()?;
    let fx = map.apply(x)?;
    let mut total = 0.0;
    for r in refs {
        check_dim(x.len(), r.len())?;
        let fr = map.apply(r)?;
        total += induced_unchecked(kernel, &fx, &fr);
    }
    Ok(total / refs.len() as f64)
}

/// `g = −∇_x (1/N) Σ D_K(φ(x), z_i)` for precomputed reference features `z_i`.
pub fn guidance_gradient_features(kernel: &KernelSpec, map: &FeatureMap<'_>, x: &[f64], ref_features: &[Vec<f64>]) -> Result<Vec<f64>> {
    if ref_features.is_empty() {
        return Err(Error::Empty("references"));
    }
    let fx = map.apply(x)?;
    let mut upstream = vec![0.0; fx.len()];
    let w = 1.0 / ref_features.len() as f64;
    for z in ref_features {
        check_dim(fx.len(), z.len())?;
        induced_grad_accumulate(kernel, &fx, z, w, &mut upstream);
    }
    if upstream.iter().all(|&u| u == 0.0) {
        return Ok(vec![0.0; x.len()]);
    }
    let grad = map.pullback(x, &upstream)?;
    Ok(grad.into_iter().map(|v| -v).collect())
}

/// Guidance direction against (already noised) references. Adding a small
/// positive multiple of the result decreases [`representativeness_energy`].
pub fn guidance_gradient(kernel: &KernelSpec, map: &FeatureMap<'_>, x_t: &[f64], refs_t: &[Vec<f64>]) -> Result<Vec<f64>> {
    kernel.validate()?;
    let feats = refs_t
        .iter()
        .map(|r| {
            check_dim(x_t.len(), r.len())?;
            map.apply(r)
        })
        .collect::<Result<Vec<_>>>()?;
    guidance_gradient_features(kernel, map, x_t, &feats)
}

/// Clean per-class training samples used as guidance references.
#[derive(Debug, Clone)]
pub struct ReferenceBank {
    classes: BTreeMap<usize, Vec<Vec<f64>>>,
    dim: usize,
}

impl ReferenceBank {
    pub fn from_dataset(train: &LabeledDataset) -> Self {
        let classes = train.classes().iter().map(|&c| (c, train.class_samples(c))).collect();
        Self { classes, dim: train.dim() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn class(&self, label: usize) -> Result<&[Vec<f64>]> {
        match self.classes.get(&label) {
            Some(v) if !v.is_empty() => Ok(v),
            _ => Err(Error::UnknownClass(label)),
        }
    }

    /// References for one trajectory: a without-replacement subsample of
    /// the class with its own noise stream.
    pub fn trajectory_refs(&self, cfg: &GuidanceConfig, label: usize, seed: u64, index: usize) -> Result<TrajectoryRefs> {
        let all = self.class(label)?;
        let mut select = RngStream::derive(seed, Purpose::RefSelect, label, index);
        let idx = select.choose_indices(all.len(), cfg.reference_batch);
        let clean: Vec<Vec<f64>> = idx.into_iter().map(|i| all[i].clone()).collect();
        let mut noise = RngStream::derive(seed, Purpose::RefNoise, label, index);
        let frozen = match cfg.ref_noise {
            RefNoise::Frozen => Some(clean.iter().map(|r| noise.normal_vec(r.len())).collect()),
            RefNoise::Fresh => None,
        };
        Ok(TrajectoryRefs { clean, noise, frozen, cached: None })
    }
}

/// Per-trajectory reference state. Noised references are cached for the
/// most recent step.
#[derive(Debug, Clone)]
pub struct TrajectoryRefs {
    clean: Vec<Vec<f64>>,
    noise: RngStream,
    frozen: Option<Vec<Vec<f64>>>,
    cached: Option<(usize, Vec<Vec<f64>>)>,
}

impl TrajectoryRefs {
    pub fn clean(&self) -> &[Vec<f64>] {
        &self.clean
    }

    /// References forward-noised to step `t`.
    pub fn noised_at(&mut self, schedule: &NoiseSchedule, t: usize) -> Result<&[Vec<f64>]> {
        if !matches!(self.cached, Some((ct, _)) if ct == t) {
            let noised = self
                .clean
                .iter()
                .enumerate()
                .map(|(i, r)| match &self.frozen {
                    Some(eps) => forward_noise_with(schedule, r, t, &eps[i]),
                    None => {
                        let eps = self.noise.normal_vec(r.len());
                        forward_noise_with(schedule, r, t, &eps)
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            self.cached = Some((t, noised));
        }
        Ok(&self.cached.as_ref().expect("just filled").1)
    }
}

/// Everything a guided sampler needs, resolved once per run.
pub struct Guide<'a, S: ScoreModel + ?Sized> {
    pub cfg: &'a GuidanceConfig,
    pub schedule: &'a NoiseSchedule,
    pub score: &'a S,
    projection: Option<Projection>,
    net: Option<&'a DenoiserModel>,
}

impl<'a, S: ScoreModel + ?Sized> Guide<'a, S> {
    pub fn new(cfg: &'a GuidanceConfig, schedule: &'a NoiseSchedule, score: &'a S) -> Result<Self> {
        cfg.validate(schedule.steps())?;
        let dim = score.dim();
        let (projection, net) = match cfg.feature_map {
            FeatureMapSpec::Identity => (None, None),
            FeatureMapSpec::RandomProjection { n_out, seed } => (Some(Projection::gaussian(n_out, dim, seed)?), None),
            FeatureMapSpec::DenoiserHidden { layer_index } => {
                let net = score.denoiser().ok_or_else(|| {
                    Error::InvalidParameter("denoiser-hidden features need a denoiser backend".into())
                })?;
                if net.hidden_width(layer_index).is_none() {
                    return Err(Error::InvalidParameter(format!(
                        "hidden layer {layer_index} does not exist ({} hidden layers)",
                        net.num_hidden()
                    )));
                }
                check_dim(dim, net.dim())?;
                (None, Some(net))
            }
        };
        Ok(Self { cfg, schedule, score, projection, net })
    }

    pub fn feature_map(&self, t: usize, class: usize) -> FeatureMap<'_> {
        match (&self.cfg.feature_map, &self.projection, self.net) {
            (FeatureMapSpec::RandomProjection { .. }, Some(p), _) => FeatureMap::Projection(p),
            (FeatureMapSpec::DenoiserHidden { layer_index }, _, Some(model)) => {
                FeatureMap::Hidden { model, layer: *layer_index, t, class }
            }
            _ => FeatureMap::Identity,
        }
    }

    /// Guidance direction at step `t` for a sample of `class`.
    fn direction(&self, class: usize, x_t: &[f64], eps_pred: &[f64], t: usize, refs: &mut TrajectoryRefs) -> Result<Vec<f64>> {
        let map = self.feature_map(t, class);
        match self.cfg.target {
            GuidanceTarget::NoisyState => {
                let noised = refs.noised_at(self.schedule, t)?;
                guidance_gradient(&self.cfg.kernel, &map, x_t, noised)
            }
            GuidanceTarget::DenoisedEstimate => {
                let x0 = x0_estimate(self.schedule, x_t, eps_pred, t)?;
                let g = guidance_gradient(&self.cfg.kernel, &map, &x0, refs.clean())?;
                let scale = 1.0 / self.schedule.alpha_bar(t).sqrt();
                Ok(g.into_iter().map(|v| v * scale).collect())
            }
        }
    }

    /// One reverse step with early-stopped guidance.
    pub fn guided_step(&self, class: usize, x_t: &[f64], t: usize, refs: &mut TrajectoryRefs, rng: &mut RngStream) -> Result<StepOutcome> {
        let eps = self.score.eps(self.schedule, Some(class), x_t, t)?;
        let mut x = ancestral_step(self.schedule, x_t, &eps, t, rng, self.cfg.step_rule)?;
        let guided = t > self.cfg.t_stop && self.cfg.gamma > 0.0;
        if guided {
            let g = self.direction(class, x_t, &eps, t, refs)?;
            for (xi, gi) in x.iter_mut().zip(&g) {
                *xi += self.cfg.gamma * gi;
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite state at step {t}")));
        }
        Ok(StepOutcome { x, guided })
    }

    /// One full trajectory from `x_T ~ N(0, I)`.
    pub fn trajectory(&self, bank: &ReferenceBank, class: usize, seed: u64, index: usize) -> Result<(Vec<f64>, usize)> {
        let mut refs = bank.trajectory_refs(self.cfg, class, seed, index)?;
        let mut rng = RngStream::derive(seed, Purpose::Trajectory, class, index);
        let mut x = rng.normal_vec(self.score.dim());
        let mut guided_steps = 0;
        for t in (1..=self.schedule.steps()).rev() {
            let out = self.guided_step(class, &x, t, &mut refs, &mut rng)?;
            guided_steps += usize::from(out.guided);
            x = out.x;
        }
        Ok((x, guided_steps))
    }

    /// `ipc` independent guided trajectories for one class.
    pub fn sample_distilled(&self, bank: &ReferenceBank, class: usize, ipc: usize, seed: u64) -> Result<SampleBatch> {
        if ipc == 0 {
            return Err(Error::InvalidParameter("ipc must be >= 1".into()));
        }
        check_dim(self.score.dim(), bank.dim())?;
        bank.class(class)?;
        let runs = (0..ipc)
            .into_par_iter()
            .map(|i| self.trajectory(bank, class, seed, i))
            .collect::<Result<Vec<_>>>()?;
        let (samples, guided_steps) = runs.into_iter().unzip();
        Ok(SampleBatch { samples, guided_steps })
    }
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub x: Vec<f64>,
    /// Whether the guidance branch was evaluated.
    pub guided: bool,
}

#[derive(Debug, Clone)]
pub struct SampleBatch {
    pub samples: Vec<Vec<f64>>,
    /// Guided step count of each trajectory.
    pub guided_steps: Vec<usize>,
}

/// Plain ancestral sampling with the same per-trajectory noise streams as
/// [`Guide::trajectory`].
pub fn sample_unguided<S: ScoreModel + ?Sized>(
    schedule: &NoiseSchedule,
    score: &S,
    class: Option<usize>,
    n: usize,
    seed: u64,
    rule: StepRule,
) -> Result<Vec<Vec<f64>>> {
    let stream_class = class.unwrap_or(usize::MAX);
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = RngStream::derive(seed, Purpose::Trajectory, stream_class, i);
            let mut x = rng.normal_vec(score.dim());
            for t in (1..=schedule.steps()).rev() {
                let eps = score.eps(schedule, class, &x, t)?;
                x = ancestral_step(schedule, &x, &eps, t, &mut rng, rule)?;
            }
            Ok(x)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scores::{AnalyticScore, DenoiserConfig, GmmSpec};
    use crate::sde::ScheduleSpec;
    use approx::assert_abs_diff_eq;

    #[test]
    fn energy_examples() {
        let k = KernelSpec::Linear;
        let id = FeatureMap::Identity;
        assert_eq!(representativeness_energy(&k, &id, &[1.0, 2.0], &[vec![1.0, 2.0]]).unwrap(), 0.0);
        let e = representativeness_energy(&k, &id, &[0.0, 0.0], &[vec![3.0, 4.0], vec![0.0, -5.0]]).unwrap();
        assert_eq!(e, 5.0);
        let e = representativeness_energy(&k, &id, &[0.0, 0.0], &[vec![1.0, 0.0], vec![0.0, 3.0]]).unwrap();
        assert_eq!(e, 2.0);
        assert!(matches!(representativeness_energy(&k, &id, &[0.0], &[]), Err(Error::Empty(_))));
    }

    #[test]
    fn single_reference_gradient_is_unit_vector() {
        let x = [1.0, 2.0, -0.5];
        let r = vec![0.5, -1.0, 0.5];
        let g = guidance_gradient(&KernelSpec::Linear, &FeatureMap::Identity, &x, &[r.clone()]).unwrap();
        let d: Vec<f64> = x.iter().zip(&r).map(|(a, b)| a - b).collect();
        let n = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        for (gi, di) in g.iter().zip(&d) {
            assert_abs_diff_eq!(*gi, -di / n, epsilon = 1e-15);
        }
    }

    #[test]
    fn gradient_vanishes_at_reference() {
        let x = vec![0.25, -0.75];
        for k in [KernelSpec::Linear, KernelSpec::rbf(1.0).unwrap()] {
            let g = guidance_gradient(&k, &FeatureMap::Identity, &x, &[x.clone()]).unwrap();
            assert_eq!(g, vec![0.0, 0.0]);
        }
    }

    #[test]
    fn pure_guidance_descends_energy() {
        let mut rng = RngStream::new(2, 2);
        let refs: Vec<Vec<f64>> = (0..32).map(|_| rng.normal_vec(2)).collect();
        let k = KernelSpec::Linear;
        let id = FeatureMap::Identity;
        let mut x = vec![4.0, -3.0];
        let mut e = representativeness_energy(&k, &id, &x, &refs).unwrap();
        let step = 0.05;
        for _ in 0..400 {
            let g = guidance_gradient(&k, &id, &x, &refs).unwrap();
            let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if gn < 0.05 {
                break;
            }
            x.iter_mut().zip(&g).for_each(|(xi, gi)| *xi += step * gi);
            let e_new = representativeness_energy(&k, &id, &x, &refs).unwrap();
            assert!(e_new < e, "energy rose from {e} to {e_new}");
            e = e_new;
        }
        // first-order optimality: the mean unit vector is small at the end
        let g = guidance_gradient(&k, &id, &x, &refs).unwrap();
        assert!(g.iter().map(|v| v * v).sum::<f64>().sqrt() < 0.05);
    }

    fn setup() -> (NoiseSchedule, AnalyticScore, ReferenceBank) {
        let schedule = ScheduleSpec::default().build().unwrap();
        let spec = GmmSpec::rings_and_blobs();
        let mut rng = RngStream::new(0, 0);
        let train = spec.sample_dataset(300, &mut rng).unwrap();
        (schedule, AnalyticScore::new(spec), ReferenceBank::from_dataset(&train))
    }

    #[test]
    fn zero_gamma_and_full_stop_match_unguided() {
        let (schedule, score, bank) = setup();
        let plain = sample_unguided(&schedule, &score, Some(2), 10, 5, StepRule::Verbatim).unwrap();
        let bits = |v: &[Vec<f64>]| -> Vec<u64> { v.iter().flatten().map(|x| x.to_bits()).collect() };
        let mut zero = GuidanceConfig::new(0.0, 50);
        zero.t_stop = 0;
        let mut stopped = GuidanceConfig::new(2.0, 50);
        stopped.t_stop = 50;
        for cfg in [zero, stopped] {
            let guide = Guide::new(&cfg, &schedule, &score).unwrap();
            let out = guide.sample_distilled(&bank, 2, 10, 5).unwrap();
            assert_eq!(bits(&out.samples), bits(&plain));
            assert!(out.guided_steps.iter().all(|&n| n == 0));
        }
    }

    #[test]
    fn guided_step_count_and_branch() {
        let (schedule, score, bank) = setup();
        for t_stop in [0, 12, 25, 37, 50] {
            let mut cfg = GuidanceConfig::new(0.5, 50);
            cfg.t_stop = t_stop;
            let guide = Guide::new(&cfg, &schedule, &score).unwrap();
            let out = guide.sample_distilled(&bank, 0, 3, 1).unwrap();
            assert!(out.guided_steps.iter().all(|&n| n == 50 - t_stop));
        }
        let cfg = GuidanceConfig::new(0.5, 50);
        let guide = Guide::new(&cfg, &schedule, &score).unwrap();
        let mut refs = bank.trajectory_refs(&cfg, 1, 0, 0).unwrap();
        let mut rng = RngStream::new(0, 0);
        assert!(!guide.guided_step(1, &[0.0, 0.0], cfg.t_stop, &mut refs, &mut rng).unwrap().guided);
        assert!(guide.guided_step(1, &[0.0, 0.0], cfg.t_stop + 1, &mut refs, &mut rng).unwrap().guided);
    }

    #[test]
    fn sampling_is_deterministic() {
        let (schedule, score, bank) = setup();
        let cfg = GuidanceConfig::new(0.3, 50);
        let guide = Guide::new(&cfg, &schedule, &score).unwrap();
        let a = guide.sample_distilled(&bank, 3, 6, 42).unwrap();
        let b = guide.sample_distilled(&bank, 3, 6, 42).unwrap();
        assert_eq!(a.samples, b.samples);
        let c = guide.sample_distilled(&bank, 3, 6, 43).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn frozen_noise_reuses_draws() {
        let (schedule, _, bank) = setup();
        let mut cfg = GuidanceConfig::new(0.3, 50);
        cfg.ref_noise = RefNoise::Frozen;
        cfg.reference_batch = 4;
        let mut refs = bank.trajectory_refs(&cfg, 0, 9, 0).unwrap();
        let a = refs.noised_at(&schedule, 30).unwrap().to_vec();
        let b = refs.noised_at(&schedule, 20).unwrap().to_vec();
        // same eps: (x_t − √ᾱ x0) / √(1−ᾱ) agrees across steps
        let eps = |v: &[f64], r: &[f64], t: usize| -> f64 {
            let ab = schedule.alpha_bar(t);
            (v[0] - ab.sqrt() * r[0]) / (1.0 - ab).sqrt()
        };
        let clean = refs.clean().to_vec();
        assert_abs_diff_eq!(eps(&a[0], &clean[0], 30), eps(&b[0], &clean[0], 20), epsilon = 1e-12);
    }

    #[test]
    fn config_validation() {
        let (schedule, score, _) = setup();
        let mut cfg = GuidanceConfig::new(-1.0, 50);
        assert!(Guide::new(&cfg, &schedule, &score).is_err());
        cfg.gamma = 1.0;
        cfg.t_stop = 51;
        assert!(Guide::new(&cfg, &schedule, &score).is_err());
        cfg.t_stop = 10;
        cfg.feature_map = FeatureMapSpec::DenoiserHidden { layer_index: 1 };
        assert!(Guide::new(&cfg, &schedule, &score).is_err());
        let net = DenoiserModel::new(2, vec![0, 1, 2, 3], &DenoiserConfig::default(), 0).unwrap();
        cfg.feature_map = FeatureMapSpec::DenoiserHidden { layer_index: 3 };
        assert!(Guide::new(&cfg, &schedule, &net).is_err());
        cfg.feature_map = FeatureMapSpec::DenoiserHidden { layer_index: 1 };
        assert!(Guide::new(&cfg, &schedule, &net).is_ok());
    }

    #[test]
    fn unknown_class_and_zero_ipc() {
        let (schedule, score, bank) = setup();
        let cfg = GuidanceConfig::new(0.3, 50);
        let guide = Guide::new(&cfg, &schedule, &score).unwrap();
        assert!(matches!(guide.sample_distilled(&bank, 7, 2, 0), Err(Error::UnknownClass(7))));
        assert!(guide.sample_distilled(&bank, 0, 0, 0).is_err());
    }
}
