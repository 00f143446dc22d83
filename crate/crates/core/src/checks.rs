//! Randomized property suites, runnable outside the test harness.

use serde::Serialize;

use crate::error::Result;
use crate::guidance::{guidance_gradient, representativeness_energy};
use crate::kernels::{factorized_distance, gram_matrix, induced_distance, FeatureMap, KernelSpec, Projection};
use crate::linalg::min_eigenvalue;
use crate::rng::RngStream;
use crate::scores::{DenoiserConfig, DenoiserModel};

#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: impl Into<String>, passed: bool, detail: String) -> Self {
        Self { name: name.into(), passed, detail }
    }
}

fn random_point(rng: &mut RngStream, d: usize) -> Vec<f64> {
    let scale = 0.1 + 3.0 * rng.uniform();
    (0..d).map(|_| scale * rng.normal()).collect()
}

/// Non-negativity, identity, symmetry and triangle inequality on `n` triples.
pub fn metric_axioms(kernel: &KernelSpec, n: usize, seed: u64) -> Result<CheckOutcome> {
    let mut rng = RngStream::new(seed, 11);
    let mut worst_sym = 0.0f64;
    let mut worst_tri = 0.0f64;
    let mut worst_self = 0.0f64;
    let mut negative = 0;
    for _ in 0..n {
        let d = 1 + rng.below(6);
        let (x, y, z) = (random_point(&mut rng, d), random_point(&mut rng, d), random_point(&mut rng, d));
        let dxy = induced_distance(kernel, &x, &y)?;
        let dyx = induced_distance(kernel, &y, &x)?;
        let dxz = induced_distance(kernel, &x, &z)?;
        let dzy = induced_distance(kernel, &z, &y)?;
        negative += usize::from(dxy < 0.0);
        worst_sym = worst_sym.max((dxy - dyx).abs());
        worst_tri = worst_tri.max(dxy - dxz - dzy);
        worst_self = worst_self.max(induced_distance(kernel, &x, &x)?);
    }
    let passed = negative == 0 && worst_sym <= 1e-12 && worst_tri <= 1e-9 && worst_self <= 1e-9;
    Ok(CheckOutcome::new(
        format!("metric axioms {}", kernel.label()),
        passed,
        format!("{n} triples, max asymmetry {worst_sym:.1e}, max triangle excess {worst_tri:.1e}, max self-distance {worst_self:.1e}"),
    ))
}

/// Linear-kernel distance against the identity-feature Euclidean distance.
pub fn factorization(n: usize, seed: u64) -> Result<CheckOutcome> {
    let mut rng = RngStream::new(seed, 12);
    let mut worst = 0.0f64;
    for _ in 0..n {
        let d = 1 + rng.below(8);
        let (x, y) = (random_point(&mut rng, d), random_point(&mut rng, d));
        let a = induced_distance(&KernelSpec::Linear, &x, &y)?;
        let b = factorized_distance(&FeatureMap::Identity, &x, &y)?;
        worst = worst.max((a - b).abs());
    }
    Ok(CheckOutcome::new("factorization", worst <= 1e-9, format!("{n} pairs, max deviation {worst:.1e}")))
}

/// Minimum Gram eigenvalue over random batches.
pub fn gram_psd(kernel: &KernelSpec, batches: usize, seed: u64) -> Result<CheckOutcome> {
    let mut rng = RngStream::new(seed, 13);
    let mut worst = f64::INFINITY;
    for _ in 0..batches {
        let d = 1 + rng.below(5);
        let batch: Vec<Vec<f64>> = (0..16).map(|_| random_point(&mut rng, d)).collect();
        let g = gram_matrix(kernel, &batch)?;
        let m = nalgebra::DMatrix::from_fn(16, 16, |i, j| g[i][j]);
        worst = worst.min(min_eigenvalue(&m));
    }
    Ok(CheckOutcome::new(
        format!("gram psd {}", kernel.label()),
        worst >= -1e-8,
        format!("{batches} batches of 16, min eigenvalue {worst:.2e}"),
    ))
}

/// Central-difference gradient of the energy, `h = 1e-5`.
pub fn fd_energy_gradient(kernel: &KernelSpec, map: &FeatureMap<'_>, x: &[f64], refs: &[Vec<f64>]) -> Result<Vec<f64>> {
    let h = 1e-5;
    let mut g = Vec::with_capacity(x.len());
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        xp[i] = x[i] + h;
        let ep = representativeness_energy(kernel, map, &xp, refs)?;
        xp[i] = x[i] - h;
        let em = representativeness_energy(kernel, map, &xp, refs)?;
        xp[i] = x[i];
        g.push(-(ep - em) / (2.0 * h));
    }
    Ok(g)
}

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / norm.max(1e-8)
}

/// Guidance gradient against finite differences over `n` random
/// configurations cycling through identity, projection and hidden-layer maps
/// and both kernels. References lie within a few units of `x` so the RBF
/// gradient is not below finite-difference resolution.
pub fn gradient_fidelity(n: usize, seed: u64) -> Result<CheckOutcome> {
    let mut rng = RngStream::new(seed, 14);
    let dim = 3;
    let cfg = DenoiserConfig { hidden: vec![16, 16, 16], time_dim: 4, ..DenoiserConfig::default() };
    let net = DenoiserModel::new(dim, vec![0, 1], &cfg, seed)?;
    let proj = Projection::gaussian(5, dim, seed)?;
    let mut worst = 0.0f64;
    for i in 0..n {
        let map = match i % 3 {
            0 => FeatureMap::Identity,
            1 => FeatureMap::Projection(&proj),
            _ => FeatureMap::Hidden { model: &net, layer: i % 3 - 1 + (i / 3) % 2, t: 1 + rng.below(50), class: rng.below(2) },
        };
        let kernel = if i % 2 == 0 { KernelSpec::Linear } else { KernelSpec::Rbf { bandwidth: 0.5 + rng.uniform() } };
        let x = random_point(&mut rng, dim);
        let spread = 0.3 + 1.5 * rng.uniform();
        let refs: Vec<Vec<f64>> =
            (0..1 + rng.below(8)).map(|_| x.iter().map(|v| v + spread * rng.normal()).collect()).collect();
        let g = guidance_gradient(&kernel, &map, &x, &refs)?;
        let fd = fd_energy_gradient(&kernel, &map, &x, &refs)?;
        worst = worst.max(relative_error(&g, &fd));
    }
    Ok(CheckOutcome::new("gradient fidelity", worst < 1e-4, format!("{n} configurations, max relative error {worst:.1e}")))
}

/// The full suite with default sizes.
pub fn run_all(seed: u64) -> Result<Vec<CheckOutcome>> {
    let rbf = KernelSpec::Rbf { bandwidth: 1.0 };
    Ok(vec![
        metric_axioms(&KernelSpec::Linear, 10_000, seed)?,
        metric_axioms(&rbf, 10_000, seed)?,
        factorization(10_000, seed)?,
        gram_psd(&KernelSpec::Linear, 50, seed)?,
        gram_psd(&rbf, 50, seed)?,
        gradient_fidelity(120, seed)?,
    ])
}
