//! Mercer kernels, the distance they induce on feature space, and the
//! feature maps that distance is evaluated through.
//!
//! For a kernel `K` the induced distance is
//! `D(x, y) = sqrt(K(x,x) + K(y,y) - 2 K(x,y))`, the RKHS norm of the
//! difference of the canonical features. For the linear kernel this is the
//! Euclidean distance, so `D(φ(x), φ(y)) = ‖φ(x) − φ(y)‖` for any explicit
//! feature map `φ`.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, check_finite, Error, Result};
use crate::rng::RngStream;
use crate::scores::DenoiserModel;

pub const RBF_PRESETS: [f64; 3] = [0.5, 1.0, 2.0];
pub const DEFAULT_RBF_BANDWIDTH: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum KernelSpec {
    Linear,
    Rbf { bandwidth: f64 },
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec::Linear
    }
}

impl KernelSpec {
    pub fn rbf(bandwidth: f64) -> Result<Self> {
        let k = KernelSpec::Rbf { bandwidth };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Linear => Ok(()),
            KernelSpec::Rbf { bandwidth } if bandwidth > 0.0 && bandwidth.is_finite() => Ok(()),
            KernelSpec::Rbf { bandwidth } => Err(Error::InvalidParameter(format!(
                "RBF bandwidth must be positive, got {bandwidth}"
            ))),
        }
    }

    pub fn label(&self) -> String {
        match self {
            KernelSpec::Linear => "linear".into(),
            KernelSpec::Rbf { bandwidth } => format!("rbf({bandwidth})"),
        }
    }
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    check_dim(x.len(), y.len())?;
    check_finite(x, "kernel argument")?;
    check_finite(y, "kernel argument")
}

pub(crate) fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

pub(crate) fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

// Callers have validated the inputs.
fn kernel_unchecked(spec: &KernelSpec, x: &[f64], y: &[f64]) -> f64 {
    match *spec {
        KernelSpec::Linear => dot(x, y),
        KernelSpec::Rbf { bandwidth } => {
            (-sq_dist(x, y) / (2.0 * bandwidth * bandwidth)).exp()
        }
    }
}

pub fn kernel_eval(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    spec.validate()?;
    check_pair(x, y)?;
    Ok(kernel_unchecked(spec, x, y))
}

pub(crate) fn induced_unchecked(spec: &KernelSpec, x: &[f64], y: &[f64]) -> f64 {
    let radicand = match *spec {
        // K(x,x) + K(y,y) - 2K(x,y) for the linear kernel, evaluated without
        // cancellation.
        KernelSpec::Linear => sq_dist(x, y),
        KernelSpec::Rbf { .. } => 2.0 - 2.0 * kernel_unchecked(spec, x, y),
    };
    radicand.max(0.0).sqrt()
}

pub fn induced_distance(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    spec.validate()?;
    check_pair(x, y)?;
    Ok(induced_unchecked(spec, x, y))
}

/// Below this distance the gradient of `D` is taken to be zero.
pub const DISTANCE_FLOOR: f64 = 1e-12;

/// Gradient of `D(u, v)` with respect to `u`, accumulated into `out` with
/// weight `scale`. Returns the distance.
pub(crate) fn induced_grad_accumulate(
    spec: &KernelSpec,
    u: &[f64],
    v: &[f64],
    scale: f64,
    out: &mut [f64],
) -> f64 {
    let d = induced_unchecked(spec, u, v);
    if d < DISTANCE_FLOOR {
        return d;
    }
    // Linear: ∂D/∂u = (u - v) / D
    // RBF:    D = sqrt(2 - 2k),  ∂D/∂u = k (u - v) / (σ² D)
    let coeff = match *spec {
        KernelSpec::Linear => 1.0 / d,
        KernelSpec::Rbf { bandwidth } => {
            let k = kernel_unchecked(spec, u, v);
            k / (bandwidth * bandwidth * d)
        }
    };
    for ((o, a), b) in out.iter_mut().zip(u).zip(v) {
        *o += scale * coeff * (a - b);
    }
    d
}

pub fn gram_matrix(spec: &KernelSpec, batch: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    spec.validate()?;
    let first = batch.first().ok_or(Error::Empty("gram batch"))?;
    for v in batch {
        check_dim(first.len(), v.len())?;
        check_finite(v, "gram batch")?;
    }
    let n = batch.len();
    let mut g = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i..n {
            let k = kernel_unchecked(spec, &batch[i], &batch[j]);
            g[i][j] = k;
            g[j][i] = k;
        }
    }
    Ok(g)
}

/// Serializable description of a feature map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FeatureMapSpec {
    Identity,
    /// Gaussian random projection to `n_out` dimensions, entries drawn from
    /// the seeded stream and scaled by `1/sqrt(n_out)`.
    RandomProjection { n_out: usize, seed: u64 },
    /// Post-activation output of hidden layer `layer_index` (0-based) of the
    /// denoiser.
    DenoiserHidden { layer_index: usize },
}

impl Default for FeatureMapSpec {
    fn default() -> Self {
        FeatureMapSpec::Identity
    }
}

impl FeatureMapSpec {
    pub fn label(&self) -> String {
        match self {
            FeatureMapSpec::Identity => "identity".into(),
            FeatureMapSpec::RandomProjection { n_out, seed } => format!("proj({n_out},{seed})"),
            FeatureMapSpec::DenoiserHidden { layer_index } => format!("hidden({layer_index})"),
        }
    }
}

/// Dense linear map `x ↦ W x`, `W` stored row-major `n_out × n_in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    n_out: usize,
    n_in: usize,
    matrix: Vec<f64>,
}

impl Projection {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_out = rows.len();
        if n_out == 0 {
            return Err(Error::Empty("projection rows"));
        }
        let n_in = rows[0].len();
        let mut matrix = Vec::with_capacity(n_out * n_in);
        for r in rows {
            check_dim(n_in, r.len())?;
            check_finite(r, "projection matrix")?;
            matrix.extend_from_slice(r);
        }
        Ok(Self { n_out, n_in, matrix })
    }

    pub fn gaussian(n_out: usize, n_in: usize, seed: u64) -> Result<Self> {
        if n_out == 0 || n_in == 0 {
            return Err(Error::InvalidParameter("projection dimensions must be >= 1".into()));
        }
        let mut rng = RngStream::new(seed, 0x5052_4f4a);
        let scale = 1.0 / (n_out as f64).sqrt();
        let matrix = (0..n_out * n_in).map(|_| rng.normal() * scale).collect();
        Ok(Self { n_out, n_in, matrix })
    }

    pub fn n_out(&self) -> usize {
        self.n_out
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.n_in, x.len())?;
        Ok(self.matrix.chunks(self.n_in).map(|row| dot(row, x)).collect())
    }

    /// `Wᵀ v`
    pub fn transpose_apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.n_out, v.len())?;
        let mut out = vec![0.0; self.n_in];
        for (row, &vi) in self.matrix.chunks(self.n_in).zip(v) {
            for (o, w) in out.iter_mut().zip(row) {
                *o += w * vi;
            }
        }
        Ok(out)
    }
}

/// A feature map resolved against the data it will be applied to.
#[derive(Debug, Clone, Copy)]
pub enum FeatureMap<'a> {
    Identity,
    Projection(&'a Projection),
    /// Hidden layer of a denoiser at a fixed step and class condition.
    Hidden {
        model: &'a DenoiserModel,
        layer: usize,
        t: usize,
        class: usize,
    },
}

impl FeatureMap<'_> {
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        match *self {
            FeatureMap::Identity => Ok(x.to_vec()),
            FeatureMap::Projection(p) => p.apply(x),
            FeatureMap::Hidden { model, layer, t, class } => {
                let state = model.forward(x, t, class)?;
                state.hidden(layer).map(<[f64]>::to_vec)
            }
        }
    }

    /// Vector–Jacobian product `J_φ(x)ᵀ upstream`.
    pub fn pullback(&self, x: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        match *self {
            FeatureMap::Identity => {
                check_dim(x.len(), upstream.len())?;
                Ok(upstream.to_vec())
            }
            FeatureMap::Projection(p) => {
                check_dim(p.n_in(), x.len())?;
                p.transpose_apply(upstream)
            }
            FeatureMap::Hidden { model, layer, t, class } => {
                let state = model.forward(x, t, class)?;
                model.hidden_input_grad(&state, layer, upstream)
            }
        }
    }
}

/// `d(φ(x), φ(y)) = ‖φ(x) − φ(y)‖₂`.
pub fn factorized_distance(map: &FeatureMap<'_>, x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    let fx = map.apply(x)?;
    let fy = map.apply(y)?;
    Ok(sq_dist(&fx, &fy).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn linear_kernel_is_dot_product() {
        let k = kernel_eval(&KernelSpec::Linear, &[1.0, 2.0], &[1.0, 2.0]).unwrap();
        assert_eq!(k, 5.0);
    }

    #[test]
    fn rbf_kernel_values() {
        let rbf = KernelSpec::rbf(1.0).unwrap();
        assert_eq!(kernel_eval(&rbf, &[0.3, -4.0], &[0.3, -4.0]).unwrap(), 1.0);
        // ‖x − y‖² = 2
        let k = kernel_eval(&rbf, &[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert_abs_diff_eq!(k, (-1.0f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(k, 0.36788, epsilon = 1e-5);
    }

    #[test]
    fn kernel_errors() {
        assert!(matches!(
            kernel_eval(&KernelSpec::Linear, &[1.0], &[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            kernel_eval(&KernelSpec::Linear, &[f64::NAN], &[1.0]),
            Err(Error::NonFinite(_))
        ));
        assert!(KernelSpec::rbf(0.0).is_err());
        assert!(KernelSpec::rbf(-1.0).is_err());
        assert!(induced_distance(&KernelSpec::Rbf { bandwidth: -2.0 }, &[0.0], &[0.0]).is_err());
    }

    #[test]
    fn induced_distance_examples() {
        for spec in [KernelSpec::Linear, KernelSpec::rbf(0.5).unwrap()] {
            assert_eq!(induced_distance(&spec, &[1.5, -2.0], &[1.5, -2.0]).unwrap(), 0.0);
        }
        let d = induced_distance(&KernelSpec::Linear, &[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert_abs_diff_eq!(d, 2f64.sqrt(), epsilon = 1e-15);

        let rbf = KernelSpec::rbf(1.0).unwrap();
        for dist in [0.1, 0.7, 1.0, 2.5, 6.0] {
            let got = induced_distance(&rbf, &[0.0, 0.0], &[dist, 0.0]).unwrap();
            let want = (2.0 - 2.0 * (-dist * dist / 2.0f64).exp()).sqrt();
            assert_abs_diff_eq!(got, want, epsilon = 1e-14);
        }
    }

    #[test]
    fn rbf_distance_saturates_below_sqrt2() {
        let rbf = KernelSpec::rbf(0.5).unwrap();
        let mut prev = 0.0;
        for i in 1..40 {
            let d = induced_distance(&rbf, &[0.0], &[i as f64 * 0.1]).unwrap();
            assert!(d >= prev && d <= 2f64.sqrt());
            prev = d;
        }
        let far = induced_distance(&rbf, &[0.0], &[50.0]).unwrap();
        assert_abs_diff_eq!(far, 2f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn gram_examples() {
        let g = gram_matrix(&KernelSpec::Linear, &[vec![2.0, 1.0]]).unwrap();
        assert_eq!(g, vec![vec![5.0]]);
        let basis = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        let g = gram_matrix(&KernelSpec::Linear, &basis).unwrap();
        for (i, row) in g.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                assert_eq!(v, if i == j { 1.0 } else { 0.0 });
            }
        }
        assert!(matches!(gram_matrix(&KernelSpec::Linear, &[]), Err(Error::Empty(_))));
    }

    #[test]
    fn identity_projection_matches_identity_map() {
        let eye = Projection::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let (x, y) = ([0.3, -1.2], [2.0, 0.5]);
        let a = factorized_distance(&FeatureMap::Projection(&eye), &x, &y).unwrap();
        let b = factorized_distance(&FeatureMap::Identity, &x, &y).unwrap();
        assert_eq!(a, b);
        assert_eq!(factorized_distance(&FeatureMap::Identity, &x, &x).unwrap(), 0.0);
    }

    #[test]
    fn projection_dimension_mismatch() {
        let p = Projection::gaussian(3, 2, 9).unwrap();
        assert!(factorized_distance(&FeatureMap::Projection(&p), &[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0]).is_err());
        assert_eq!(p.apply(&[1.0, 1.0]).unwrap().len(), 3);
    }

    #[test]
    fn grad_matches_difference_quotient() {
        let (u, v) = ([0.4, -0.3, 1.1], [-0.2, 0.9, 0.5]);
        for spec in [KernelSpec::Linear, KernelSpec::rbf(0.7).unwrap()] {
            let mut g = vec![0.0; 3];
            induced_grad_accumulate(&spec, &u, &v, 1.0, &mut g);
            for i in 0..3 {
                let h = 1e-6;
                let (mut up, mut dn) = (u, u);
                up[i] += h;
                dn[i] -= h;
                let fd = (induced_unchecked(&spec, &up, &v) - induced_unchecked(&spec, &dn, &v)) / (2.0 * h);
                assert_abs_diff_eq!(g[i], fd, epsilon = 1e-8);
            }
        }
    }
}
