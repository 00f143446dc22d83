//! Representativeness, diversity and likelihood diagnostics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::distill::DistilledSet;
use crate::error::{check_dim, Error, Result};
use crate::kernels::{induced_unchecked, kernel_eval, FeatureMap, KernelSpec};
use crate::linalg::{covariance, mean, sqrt_psd};
use crate::scores::{gmm_nll, GmmSpec};

pub const REPRESENTATIVENESS_CAP: f64 = 1e6;
pub const COLLAPSE_TRACE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Representativeness {
    /// `1 / mean distance`, capped.
    pub score: f64,
    pub mean_distance: f64,
    pub saturated: bool,
}

/// Per class, the inverse of the mean feature-space distance between every
/// distilled sample and every training sample of that class.
pub fn representativeness_score(
    distilled: &DistilledSet,
    train: &LabeledDataset,
    kernel: &KernelSpec,
    map: &FeatureMap<'_>,
) -> Result<BTreeMap<usize, Representativeness>> {
    check_dim(train.dim(), distilled.dim())?;
    kernel.validate()?;
    let mut out = BTreeMap::new();
    for (&c, rows) in distilled.per_class() {
        let refs = train.class_samples(c);
        if refs.is_empty() || rows.is_empty() {
            return Err(Error::Empty("representativeness class"));
        }
        let ref_feats = refs.iter().map(|r| map.apply(r)).collect::<Result<Vec<_>>>()?;
        let mut total = 0.0;
        for x in rows {
            let fx = map.apply(x)?;
            total += ref_feats.iter().map(|fr| induced_unchecked(kernel, &fx, fr)).sum::<f64>();
        }
        let mean_distance = total / (rows.len() * refs.len()) as f64;
        let raw = 1.0 / mean_distance;
        let saturated = !(raw < REPRESENTATIVENESS_CAP);
        let score = if saturated { REPRESENTATIVENESS_CAP } else { raw };
        out.insert(c, Representativeness { score, mean_distance, saturated });
    }
    Ok(out)
}

/// Unbiased MMD² between two samples under `kernel`.
pub fn mmd2_unbiased(kernel: &KernelSpec, xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Result<f64> {
    if xs.len() < 2 || ys.len() < 2 {
        return Err(Error::Degenerate("MMD needs at least 2 samples per side".into()));
    }
    let within = |s: &[Vec<f64>]| -> Result<f64> {
        let mut t = 0.0;
        for i in 0..s.len() {
            for j in i + 1..s.len() {
                t += kernel_eval(kernel, &s[i], &s[j])?;
            }
        }
        let n = s.len() as f64;
        Ok(2.0 * t / (n * (n - 1.0)))
    };
    let mut cross = 0.0;
    for x in xs {
        for y in ys {
            cross += kernel_eval(kernel, x, y)?;
        }
    }
    Ok(within(xs)? + within(ys)? - 2.0 * cross / (xs.len() * ys.len()) as f64)
}

/// `‖μ_s − μ_t‖² + ‖Σ_s^{1/2} − Σ_t^{1/2}‖_F²`
pub fn gauss_moment_distance(s: &[Vec<f64>], t: &[Vec<f64>]) -> Result<f64> {
    let (ms, mt) = (mean(s)?, mean(t)?);
    check_dim(ms.len(), mt.len())?;
    let dm: f64 = ms.iter().zip(&mt).map(|(a, b)| (a - b).powi(2)).sum();
    let diff = sqrt_psd(&covariance(s)?) - sqrt_psd(&covariance(t)?);
    Ok(dm + diff.norm_squared())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDiversity {
    pub cov_trace: f64,
    pub collapsed: bool,
    pub mmd2: f64,
    pub gauss_moment_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diversity {
    pub per_class: BTreeMap<usize, ClassDiversity>,
    /// Class averages.
    pub mmd2: f64,
    pub gauss_moment_distance: f64,
    pub mean_cov_trace: f64,
}

/// Per-class covariance trace, MMD² and Gaussian-moment distance to the
/// training class, each averaged over classes.
pub fn diversity_metrics(distilled: &DistilledSet, train: &LabeledDataset, mmd_kernel: &KernelSpec) -> Result<Diversity> {
    check_dim(train.dim(), distilled.dim())?;
    if distilled.ipc() < 2 {
        return Err(Error::Degenerate("diversity needs at least 2 samples per class".into()));
    }
    let mut per_class = BTreeMap::new();
    for (&c, rows) in distilled.per_class() {
        let refs = train.class_samples(c);
        let cov_trace = covariance(rows)?.trace();
        per_class.insert(
            c,
            ClassDiversity {
                cov_trace,
                collapsed: cov_trace < COLLAPSE_TRACE,
                mmd2: mmd2_unbiased(mmd_kernel, rows, &refs)?,
                gauss_moment_distance: gauss_moment_distance(rows, &refs)?,
            },
        );
    }
    let n = per_class.len() as f64;
    let avg = |f: fn(&ClassDiversity) -> f64| per_class.values().map(f).sum::<f64>() / n;
    Ok(Diversity {
        mmd2: avg(|d| d.mmd2),
        gauss_moment_distance: avg(|d| d.gauss_moment_distance),
        mean_cov_trace: avg(|d| d.cov_trace),
        per_class,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NllReport {
    pub train: Option<f64>,
    pub test: Option<f64>,
    pub gap: Option<f64>,
    pub note: String,
}

/// Exact mixture NLLs when the generating density is known.
pub fn nll_report(spec: Option<&GmmSpec>, train: &LabeledDataset, test: &LabeledDataset) -> Result<NllReport> {
    match spec {
        Some(spec) => {
            let (a, b) = (gmm_nll(spec, train)?, gmm_nll(spec, test)?);
            Ok(NllReport { train: Some(a), test: Some(b), gap: Some(b - a), note: "exact mixture likelihood".into() })
        }
        None => Ok(NllReport {
            train: None,
            test: None,
            gap: None,
            note: "no tractable likelihood for this score backend".into(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distill::distill_random;
    use crate::rng::RngStream;
    use crate::tasks::rings_and_blobs;

    #[test]
    fn representativeness_of_exact_references_saturates() {
        let task = rings_and_blobs(0, 1, 1).unwrap();
        let set = distill_random(&task.train, 1, 0).unwrap();
        let r = representativeness_score(&set, &task.train, &KernelSpec::Linear, &FeatureMap::Identity).unwrap();
        assert!(r.values().all(|v| v.saturated && v.score == REPRESENTATIVENESS_CAP));
    }

    #[test]
    fn identical_samples_collapse() {
        let task = rings_and_blobs(0, 20, 1).unwrap();
        let mut set = distill_random(&task.train, 3, 0).unwrap();
        let rows = set.class(0).unwrap()[0].clone();
        let per_class = set.per_class().keys().map(|&c| (c, vec![rows.clone(); 3])).collect();
        set = DistilledSet::new(2, per_class, set.provenance.clone()).unwrap();
        let d = diversity_metrics(&set, &task.train, &KernelSpec::Rbf { bandwidth: 1.0 }).unwrap();
        assert!(d.per_class.values().all(|c| c.collapsed && c.cov_trace == 0.0));
    }

    #[test]
    fn moment_distance_zero_on_self() {
        let mut rng = RngStream::new(0, 0);
        let s: Vec<Vec<f64>> = (0..30).map(|_| rng.normal_vec(3)).collect();
        assert!(gauss_moment_distance(&s, &s).unwrap().abs() < 1e-12);
    }

    #[test]
    fn nll_gap_zero_on_same_set() {
        let task = rings_and_blobs(0, 50, 1).unwrap();
        let r = nll_report(task.spec.as_ref(), &task.train, &task.train).unwrap();
        assert_eq!(r.gap, Some(0.0));
        assert!(nll_report(None, &task.train, &task.test).unwrap().train.is_none());
    }
}
