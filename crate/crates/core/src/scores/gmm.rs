//! Diagonal Gaussian mixtures with exact forward-process marginals.
//!
//! Under `x_t = √ᾱ x0 + √(1−ᾱ) ε` a component `N(μ, diag σ²)` becomes
//! `N(√ᾱ μ, diag(ᾱ σ² + 1 − ᾱ))`, so the noised density and its score are
//! available in closed form at every step.

use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{check_dim, Error, Result};
use crate::rng::RngStream;
use crate::sde::NoiseSchedule;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmClass {
    pub label: usize,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    /// Diagonal variances, one vector per component.
    pub variances: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmSpec {
    pub classes: Vec<GmmClass>,
}

impl GmmSpec {
    pub fn new(classes: Vec<GmmClass>) -> Result<Self> {
        let spec = Self { classes };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let first = self.classes.first().ok_or(Error::Empty("mixture classes"))?;
        let dim = first.means.first().ok_or(Error::Empty("mixture components"))?.len();
        if dim == 0 {
            return Err(Error::InvalidParameter("mixture dimension must be >= 1".into()));
        }
        let mut labels: Vec<usize> = self.classes.iter().map(|c| c.label).collect();
        labels.sort_unstable();
        labels.dedup();
        if labels.len() != self.classes.len() {
            return Err(Error::InvalidParameter("duplicate class label".into()));
        }
        for c in &self.classes {
            let k = c.weights.len();
            if k == 0 || c.means.len() != k || c.variances.len() != k {
                return Err(Error::InvalidParameter(format!(
                    "class {}: weights, means and variances must have equal non-zero length",
                    c.label
                )));
            }
            let total: f64 = c.weights.iter().sum();
            if (total - 1.0).abs() > 1e-9 || c.weights.iter().any(|w| !(*w > 0.0)) {
                return Err(Error::InvalidParameter(format!("class {}: weights must be a simplex", c.label)));
            }
            for (m, v) in c.means.iter().zip(&c.variances) {
                check_dim(dim, m.len())?;
                check_dim(dim, v.len())?;
                if v.iter().any(|s| !(*s > 0.0 && s.is_finite())) || m.iter().any(|x| !x.is_finite()) {
                    return Err(Error::InvalidParameter(format!("class {}: bad component", c.label)));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.classes[0].means[0].len()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.classes.iter().map(|c| c.label).collect()
    }

    pub fn class(&self, label: usize) -> Result<&GmmClass> {
        self.classes
            .iter()
            .find(|c| c.label == label)
            .ok_or(Error::UnknownClass(label))
    }

    fn components(&self, class: Option<usize>) -> Result<Vec<(f64, &[f64], &[f64])>> {
        let classes: Vec<&GmmClass> = match class {
            Some(label) => vec![self.class(label)?],
            None => self.classes.iter().collect(),
        };
        let prior = 1.0 / classes.len() as f64;
        Ok(classes
            .into_iter()
            .flat_map(|c| {
                c.weights
                    .iter()
                    .zip(&c.means)
                    .zip(&c.variances)
                    .map(move |((w, m), v)| (prior * w, m.as_slice(), v.as_slice()))
            })
            .collect())
    }

    /// Log-density and score of the forward marginal at `ᾱ`, optionally
    /// conditioned on a class. `alpha_bar = 1` is the clean mixture.
    pub fn log_density_and_score(&self, class: Option<usize>, x: &[f64], alpha_bar: f64) -> Result<(f64, Vec<f64>)> {
        check_dim(self.dim(), x.len())?;
        let comps = self.components(class)?;
        let a = alpha_bar.sqrt();
        let mut logs = Vec::with_capacity(comps.len());
        let mut grads = Vec::with_capacity(comps.len());
        for (w, mean, var) in comps {
            let mut lp = w.ln();
            let mut g = Vec::with_capacity(x.len());
            for ((xi, mi), vi) in x.iter().zip(mean).zip(var) {
                let v = alpha_bar * vi + (1.0 - alpha_bar);
                let d = xi - a * mi;
                lp -= 0.5 * (d * d / v + v.ln() + LN_2PI);
                g.push(-d / v);
            }
            logs.push(lp);
            grads.push(g);
        }
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = weights.iter().sum();
        let log_p = max + z.ln();
        let mut score = vec![0.0; x.len()];
        for (r, g) in weights.iter().zip(&grads) {
            for (s, gi) in score.iter_mut().zip(g) {
                *s += r / z * gi;
            }
        }
        Ok((log_p, score))
    }

    pub fn log_density(&self, class: Option<usize>, x: &[f64]) -> Result<f64> {
        Ok(self.log_density_and_score(class, x, 1.0)?.0)
    }

    /// Posterior responsibilities of the components of one class for clean `x`.
    pub fn responsibilities(&self, label: usize, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), x.len())?;
        let c = self.class(label)?;
        let logs: Vec<f64> = c
            .weights
            .iter()
            .zip(&c.means)
            .zip(&c.variances)
            .map(|((w, m), v)| {
                w.ln() - 0.5
                    * x.iter()
                        .zip(m)
                        .zip(v)
                        .map(|((xi, mi), vi)| (xi - mi) * (xi - mi) / vi + vi.ln())
                        .sum::<f64>()
            })
            .collect();
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = e.iter().sum();
        Ok(e.into_iter().map(|v| v / z).collect())
    }

    pub fn sample(&self, label: usize, n: usize, rng: &mut RngStream) -> Result<Vec<Vec<f64>>> {
        let c = self.class(label)?;
        Ok((0..n)
            .map(|_| {
                let u = rng.uniform();
                let mut acc = 0.0;
                let mut k = c.weights.len() - 1;
                for (i, w) in c.weights.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        k = i;
                        break;
                    }
                }
                c.means[k]
                    .iter()
                    .zip(&c.variances[k])
                    .map(|(m, v)| m + v.sqrt() * rng.normal())
                    .collect()
            })
            .collect())
    }

    /// `n_per_class` i.i.d. draws from every class.
    pub fn sample_dataset(&self, n_per_class: usize, rng: &mut RngStream) -> Result<LabeledDataset> {
        let mut samples = Vec::new();
        let mut labels = Vec::new();
        for c in &self.classes {
            samples.extend(self.sample(c.label, n_per_class, rng)?);
            labels.extend(std::iter::repeat_n(c.label, n_per_class));
        }
        LabeledDataset::new(samples, labels)
    }

    /// Four classes in 2-D. Two "ring" classes put equal mass on opposite
    /// modes of an axis; two "blob" classes are a tight core plus a broad
    /// halo on a diagonal.
    pub fn rings_and_blobs() -> Self {
        let ring = |label, a: [f64; 2], b: [f64; 2]| GmmClass {
            label,
            weights: vec![0.5, 0.5],
            means: vec![a.to_vec(), b.to_vec()],
            variances: vec![vec![0.49; 2], vec![0.49; 2]],
        };
        let blob = |label, core: [f64; 2], halo: [f64; 2]| GmmClass {
            label,
            weights: vec![0.6, 0.4],
            means: vec![core.to_vec(), halo.to_vec()],
            variances: vec![vec![0.49; 2], vec![2.25; 2]],
        };
        Self {
            classes: vec![
                ring(0, [2.5, 0.0], [-2.5, 0.0]),
                ring(1, [0.0, 2.5], [0.0, -2.5]),
                blob(2, [2.5, 2.5], [2.2, 2.2]),
                blob(3, [-2.5, -2.5], [-2.2, -2.2]),
            ],
        }
    }
}

/// Exact noise prediction `−√(1−ᾱ_t) ∇ log p_t(x_t)`.
pub fn gmm_eps(spec: &GmmSpec, schedule: &NoiseSchedule, class: Option<usize>, x_t: &[f64], t: usize) -> Result<Vec<f64>> {
    schedule.check_step(t)?;
    let ab = schedule.alpha_bar(t);
    let (_, score) = spec.log_density_and_score(class, x_t, ab)?;
    let s = (1.0 - ab).sqrt();
    Ok(score.into_iter().map(|g| -s * g).collect())
}

/// Mean negative log-likelihood in nats per sample under the clean,
/// class-marginal mixture.
pub fn gmm_nll(spec: &GmmSpec, dataset: &LabeledDataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    check_dim(spec.dim(), dataset.dim())?;
    let mut total = 0.0;
    for x in dataset.samples() {
        total -= spec.log_density(None, x)?;
    }
    Ok(total / dataset.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde::ScheduleSpec;
    use approx::assert_abs_diff_eq;

    fn single(mean: Vec<f64>, var: Vec<f64>) -> GmmSpec {
        GmmSpec::new(vec![GmmClass { label: 0, weights: vec![1.0], means: vec![mean], variances: vec![var] }]).unwrap()
    }

    #[test]
    fn single_gaussian_eps_closed_form() {
        let s = ScheduleSpec::default().build().unwrap();
        let spec = single(vec![1.0, -2.0], vec![1.0, 1.0]);
        let x = [0.3, 0.8];
        for t in [1, 10, 50] {
            let ab = s.alpha_bar(t);
            let eps = gmm_eps(&spec, &s, Some(0), &x, t).unwrap();
            // unit covariance: the noised variance is 1, score = −(x − √ᾱ μ)
            let want: Vec<f64> = x
                .iter()
                .zip([1.0, -2.0])
                .map(|(xi, m)| (1.0 - ab).sqrt() * (xi - ab.sqrt() * m))
                .collect();
            for (a, b) in eps.iter().zip(&want) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn symmetric_pair_has_zero_axis_score() {
        let s = ScheduleSpec::default().build().unwrap();
        let spec = GmmSpec::rings_and_blobs();
        // class 0 modes at (±2.5, 0): x-component of the score vanishes on x = 0
        for t in [1, 20, 50] {
            let eps = gmm_eps(&spec, &s, Some(0), &[0.0, 0.7], t).unwrap();
            assert_abs_diff_eq!(eps[0], 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn score_matches_central_differences() {
        let s = ScheduleSpec::default().build().unwrap();
        let spec = GmmSpec::rings_and_blobs();
        let mut rng = RngStream::new(4, 4);
        let h = 1e-4;
        for trial in 0..200 {
            let x = [rng.normal() * 3.0, rng.normal() * 3.0];
            let t = 1 + trial % 50;
            let class = if trial % 5 == 4 { None } else { Some(trial % 4) };
            let ab = s.alpha_bar(t);
            let (_, score) = spec.log_density_and_score(class, &x, ab).unwrap();
            for i in 0..2 {
                let (mut up, mut dn) = (x, x);
                up[i] += h;
                dn[i] -= h;
                let lp = |p: &[f64]| spec.log_density_and_score(class, p, ab).unwrap().0;
                let fd = (lp(&up) - lp(&dn)) / (2.0 * h);
                let rel = (score[i] - fd).abs() / score[i].abs().max(1e-3);
                assert!(rel < 1e-5, "trial {trial} dim {i}: {} vs {fd}", score[i]);
            }
        }
    }

    #[test]
    fn standard_normal_nll_at_origin() {
        let spec = single(vec![0.0; 3], vec![1.0; 3]);
        let ds = LabeledDataset::new(vec![vec![0.0; 3]], vec![0]).unwrap();
        assert_abs_diff_eq!(gmm_nll(&spec, &ds).unwrap(), 1.5 * (2.0 * std::f64::consts::PI).ln(), epsilon = 1e-14);
    }

    #[test]
    fn nll_at_component_means_by_direct_density() {
        let spec = GmmSpec::new(vec![GmmClass {
            label: 0,
            weights: vec![0.5, 0.5],
            means: vec![vec![-1.0], vec![1.0]],
            variances: vec![vec![0.25], vec![0.25]],
        }])
        .unwrap();
        let ds = LabeledDataset::new(vec![vec![-1.0], vec![1.0]], vec![0, 0]).unwrap();
        let pdf = |x: f64, m: f64| (-(x - m) * (x - m) / 0.5).exp() / (2.0 * std::f64::consts::PI * 0.25).sqrt();
        let want = -(0.5 * pdf(1.0, -1.0) + 0.5 * pdf(1.0, 1.0)).ln();
        assert_abs_diff_eq!(gmm_nll(&spec, &ds).unwrap(), want, epsilon = 1e-13);
    }

    #[test]
    fn errors() {
        let s = ScheduleSpec::default().build().unwrap();
        let spec = GmmSpec::rings_and_blobs();
        assert!(matches!(gmm_eps(&spec, &s, Some(9), &[0.0, 0.0], 3), Err(Error::UnknownClass(9))));
        assert!(matches!(gmm_eps(&spec, &s, Some(0), &[0.0, 0.0], 0), Err(Error::StepOutOfRange { .. })));
        assert!(gmm_eps(&spec, &s, Some(0), &[0.0], 3).is_err());
        let empty = LabeledDataset::new(vec![], vec![]).unwrap();
        assert!(matches!(gmm_nll(&spec, &empty), Err(Error::Empty(_))));
        let bad = GmmSpec::new(vec![GmmClass { label: 0, weights: vec![0.7], means: vec![vec![0.0]], variances: vec![vec![1.0]] }]);
        assert!(bad.is_err());
    }

    #[test]
    fn sampled_moments() {
        let spec = single(vec![2.0, -1.0], vec![0.25, 4.0]);
        let mut rng = RngStream::new(8, 8);
        let xs = spec.sample(0, 40_000, &mut rng).unwrap();
        let n = xs.len() as f64;
        let m0 = xs.iter().map(|x| x[0]).sum::<f64>() / n;
        let v1 = xs.iter().map(|x| (x[1] + 1.0).powi(2)).sum::<f64>() / n;
        assert_abs_diff_eq!(m0, 2.0, epsilon = 0.01);
        assert_abs_diff_eq!(v1, 4.0, epsilon = 0.12);
    }
}
