//! Small classifiers trained from scratch on distilled data.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{check_dim, Error, Result};
use crate::kernels::sq_dist;
use crate::rng::{Purpose, RngStream};

pub const SOFTMAX_EPOCHS: usize = 200;
pub const SOFTMAX_LR: f64 = 0.5;
pub const MLP_HIDDEN: usize = 64;
pub const MLP_EPOCHS: usize = 500;
pub const MLP_LR: f64 = 0.05;
pub const MLP_MOMENTUM: f64 = 0.9;
pub const WEIGHT_DECAY: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClassifierKind {
    Knn { k: usize },
    SoftmaxRegression,
    MlpSmall,
}

impl ClassifierKind {
    pub const DEFAULTS: [ClassifierKind; 3] =
        [ClassifierKind::Knn { k: 5 }, ClassifierKind::SoftmaxRegression, ClassifierKind::MlpSmall];
}

impl fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClassifierKind::Knn { k } => write!(f, "knn{k}"),
            ClassifierKind::SoftmaxRegression => f.write_str("softmax"),
            ClassifierKind::MlpSmall => f.write_str("mlp"),
        }
    }
}

impl FromStr for ClassifierKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax" => Ok(ClassifierKind::SoftmaxRegression),
            "mlp" => Ok(ClassifierKind::MlpSmall),
            _ => s
                .strip_prefix("knn")
                .and_then(|k| k.parse().ok())
                .filter(|&k: &usize| k >= 1)
                .map(|k| ClassifierKind::Knn { k })
                .ok_or_else(|| Error::InvalidParameter(format!("unknown classifier '{s}'"))),
        }
    }
}

/// Per-feature standardization fitted on the training set.
#[derive(Debug, Clone)]
pub struct Standardizer {
    mean: Vec<f64>,
    inv_std: Vec<f64>,
}

impl Standardizer {
    fn fit(rows: &[Vec<f64>]) -> Self {
        let d = rows[0].len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            mean.iter_mut().zip(r).for_each(|(m, v)| *m += v / n);
        }
        let mut var = vec![0.0; d];
        for r in rows {
            var.iter_mut().zip(r).zip(&mean).for_each(|((s, v), m)| *s += (v - m).powi(2) / n);
        }
        let inv_std = var.into_iter().map(|v| if v > 1e-12 { 1.0 / v.sqrt() } else { 1.0 }).collect();
        Self { mean, inv_std }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.inv_std).map(|((v, m), s)| (v - m) * s).collect()
    }
}

fn softmax_in_place(z: &mut [f64]) {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    z.iter_mut().for_each(|v| *v /= s);
}

/// A trained model.
pub enum Fitted {
    Knn { k: usize, rows: Vec<Vec<f64>>, labels: Vec<usize> },
    Linear { std: Standardizer, classes: Vec<usize>, w: Vec<Vec<f64>>, b: Vec<f64> },
    Mlp { std: Standardizer, classes: Vec<usize>, w1: Vec<Vec<f64>>, b1: Vec<f64>, w2: Vec<Vec<f64>>, b2: Vec<f64> },
}

impl Fitted {
    pub fn predict(&self, x: &[f64]) -> usize {
        match self {
            Fitted::Knn { k, rows, labels } => knn_predict(*k, rows, labels, x),
            Fitted::Linear { std, classes, w, b } => {
                let z = std.apply(x);
                let logits: Vec<f64> = w.iter().zip(b).map(|(wr, bi)| bi + dot(wr, &z)).collect();
                classes[argmax(&logits)]
            }
            Fitted::Mlp { std, classes, w1, b1, w2, b2 } => {
                let z = std.apply(x);
                let h: Vec<f64> = w1.iter().zip(b1).map(|(wr, bi)| (bi + dot(wr, &z)).tanh()).collect();
                let logits: Vec<f64> = w2.iter().zip(b2).map(|(wr, bi)| bi + dot(wr, &h)).collect();
                classes[argmax(&logits)]
            }
        }
    }

    pub fn accuracy(&self, test: &LabeledDataset) -> f64 {
        let hits = test.samples().iter().zip(test.labels()).filter(|(x, &y)| self.predict(x) == y).count();
        hits as f64 / test.len() as f64
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Majority vote over the `k` nearest rows; ties go to the tied class with
/// the nearest member.
fn knn_predict(k: usize, rows: &[Vec<f64>], labels: &[usize], x: &[f64]) -> usize {
    let mut d: Vec<(f64, usize)> = rows.iter().zip(labels).map(|(r, &l)| (sq_dist(r, x), l)).collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0));
    let near = &d[..k.min(d.len())];
    let mut votes: std::collections::BTreeMap<usize, usize> = std::collections::BTreeMap::new();
    for &(_, l) in near {
        *votes.entry(l).or_default() += 1;
    }
    let top = *votes.values().max().expect("k >= 1");
    near.iter().find(|(_, l)| votes[l] == top).expect("a voter exists").1
}

fn one_hot_index(classes: &[usize], label: usize) -> usize {
    classes.binary_search(&label).expect("label in class list")
}

pub fn fit(kind: ClassifierKind, train: &LabeledDataset, seed: u64) -> Result<Fitted> {
    let present: Vec<usize> = train.class_counts().into_iter().filter(|&(_, n)| n > 0).map(|(c, _)| c).collect();
    if present.len() < 2 {
        return Err(Error::Degenerate(format!("training set has {} class(es); need at least 2", present.len())));
    }
    let classes = train.classes().to_vec();
    let rows = train.samples();
    match kind {
        ClassifierKind::Knn { k } => {
            if k == 0 {
                return Err(Error::InvalidParameter("k must be >= 1".into()));
            }
            Ok(Fitted::Knn { k, rows: rows.to_vec(), labels: train.labels().to_vec() })
        }
        ClassifierKind::SoftmaxRegression => Ok(fit_softmax(train, classes, seed)),
        ClassifierKind::MlpSmall => Ok(fit_mlp(train, classes, seed)),
    }
}

fn fit_softmax(train: &LabeledDataset, classes: Vec<usize>, seed: u64) -> Fitted {
    let std = Standardizer::fit(train.samples());
    let xs: Vec<Vec<f64>> = train.samples().iter().map(|x| std.apply(x)).collect();
    let (d, c, n) = (train.dim(), classes.len(), xs.len() as f64);
    let mut rng = RngStream::derive(seed, Purpose::Init, 0, 0);
    let mut w: Vec<Vec<f64>> = (0..c).map(|_| (0..d).map(|_| 0.01 * rng.normal()).collect()).collect();
    let mut b = vec![0.0; c];
    for _ in 0..SOFTMAX_EPOCHS {
        let mut gw = vec![vec![0.0; d]; c];
        let mut gb = vec![0.0; c];
        for (x, &y) in xs.iter().zip(train.labels()) {
            let mut p: Vec<f64> = w.iter().zip(&b).map(|(wr, bi)| bi + dot(wr, x)).collect();
            softmax_in_place(&mut p);
            p[one_hot_index(&classes, y)] -= 1.0;
            for (k, pk) in p.iter().enumerate() {
                gb[k] += pk / n;
                gw[k].iter_mut().zip(x).for_each(|(g, xi)| *g += pk * xi / n);
            }
        }
        for k in 0..c {
            b[k] -= SOFTMAX_LR * gb[k];
            for j in 0..d {
                w[k][j] -= SOFTMAX_LR * (gw[k][j] + WEIGHT_DECAY * w[k][j]);
            }
        }
    }
    Fitted::Linear { std, classes, w, b }
}

fn fit_mlp(train: &LabeledDataset, classes: Vec<usize>, seed: u64) -> Fitted {
    let std = Standardizer::fit(train.samples());
    let xs: Vec<Vec<f64>> = train.samples().iter().map(|x| std.apply(x)).collect();
    let (d, c, h, n) = (train.dim(), classes.len(), MLP_HIDDEN, xs.len() as f64);
    let mut rng = RngStream::derive(seed, Purpose::Init, 0, 1);
    let s1 = (1.0 / d as f64).sqrt();
    let s2 = (1.0 / h as f64).sqrt();
    let mut w1: Vec<Vec<f64>> = (0..h).map(|_| (0..d).map(|_| s1 * rng.normal()).collect()).collect();
    let mut b1 = vec![0.0; h];
    let mut w2: Vec<Vec<f64>> = (0..c).map(|_| (0..h).map(|_| s2 * rng.normal()).collect()).collect();
    let mut b2 = vec![0.0; c];
    let (mut vw1, mut vb1) = (vec![vec![0.0; d]; h], vec![0.0; h]);
    let (mut vw2, mut vb2) = (vec![vec![0.0; h]; c], vec![0.0; c]);
    for _ in 0..MLP_EPOCHS {
        let mut gw1 = vec![vec![0.0; d]; h];
        let mut gb1 = vec![0.0; h];
        let mut gw2 = vec![vec![0.0; h]; c];
        let mut gb2 = vec![0.0; c];
        for (x, &y) in xs.iter().zip(train.labels()) {
            let a: Vec<f64> = w1.iter().zip(&b1).map(|(wr, bi)| (bi + dot(wr, x)).tanh()).collect();
            let mut p: Vec<f64> = w2.iter().zip(&b2).map(|(wr, bi)| bi + dot(wr, &a)).collect();
            softmax_in_place(&mut p);
            p[one_hot_index(&classes, y)] -= 1.0;
            let mut da = vec![0.0; h];
            for (k, pk) in p.iter().enumerate() {
                gb2[k] += pk / n;
                for j in 0..h {
                    gw2[k][j] += pk * a[j] / n;
                    da[j] += pk * w2[k][j];
                }
            }
            for j in 0..h {
                let dz = da[j] * (1.0 - a[j] * a[j]) / n;
                gb1[j] += dz;
                gw1[j].iter_mut().zip(x).for_each(|(g, xi)| *g += dz * xi);
            }
        }
        let step = |p: &mut f64, v: &mut f64, g: f64, decay: bool| {
            let g = if decay { g + WEIGHT_DECAY * *p } else { g };
            *v = MLP_MOMENTUM * *v - MLP_LR * g;
            *p += *v;
        };
        for j in 0..h {
            step(&mut b1[j], &mut vb1[j], gb1[j], false);
            for i in 0..d {
                step(&mut w1[j][i], &mut vw1[j][i], gw1[j][i], true);
            }
        }
        for k in 0..c {
            step(&mut b2[k], &mut vb2[k], gb2[k], false);
            for j in 0..h {
                step(&mut w2[k][j], &mut vw2[k][j], gw2[k][j], true);
            }
        }
    }
    Fitted::Mlp { std, classes, w1, b1, w2, b2 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyStats {
    pub classifier: String,
    pub mean: f64,
    /// Sample standard deviation across seeds; 0 for a single seed.
    pub std: f64,
    pub per_seed: Vec<f64>,
}

/// Trains from scratch once per seed and scores on `test`.
pub fn train_and_test(kind: ClassifierKind, train: &LabeledDataset, test: &LabeledDataset, seeds: &[u64]) -> Result<AccuracyStats> {
    if seeds.is_empty() {
        return Err(Error::Empty("seeds"));
    }
    if test.is_empty() {
        return Err(Error::Empty("test set"));
    }
    check_dim(train.dim(), test.dim())?;
    let per_seed = seeds.iter().map(|&s| fit(kind, train, s).map(|m| m.accuracy(test))).collect::<Result<Vec<_>>>()?;
    let (mean, std) = mean_std(&per_seed);
    Ok(AccuracyStats { classifier: kind.to_string(), mean, std, per_seed })
}

pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_blobs(n: usize, seed: u64) -> LabeledDataset {
        let mut rng = RngStream::new(seed, 0);
        let mut s = vec![];
        let mut l = vec![];
        for i in 0..n {
            let c = i % 2;
            let off = if c == 0 { -2.0 } else { 2.0 };
            s.push(vec![off + rng.normal(), rng.normal()]);
            l.push(c);
        }
        LabeledDataset::new(s, l).unwrap()
    }

    #[test]
    fn all_families_learn_separable_data() {
        let train = two_blobs(60, 1);
        let test = two_blobs(400, 2);
        for kind in ClassifierKind::DEFAULTS {
            let acc = train_and_test(kind, &train, &test, &[0, 1, 2]).unwrap();
            assert!(acc.mean > 0.93, "{kind}: {}", acc.mean);
            assert!((0.0..=1.0).contains(&acc.mean) && acc.std >= 0.0);
        }
    }

    #[test]
    fn single_class_rejected() {
        let train = LabeledDataset::new(vec![vec![0.0], vec![1.0]], vec![3, 3]).unwrap();
        assert!(matches!(fit(ClassifierKind::MlpSmall, &train, 0), Err(Error::Degenerate(_))));
    }

    #[test]
    fn knn_tie_break_prefers_nearest() {
        let rows = vec![vec![0.0], vec![1.0], vec![-1.5], vec![5.0]];
        assert_eq!(knn_predict(2, &rows, &[7, 7, 2, 2], &[0.1]), 7);
        assert_eq!(knn_predict(2, &rows, &[7, 3, 2, 2], &[-1.0]), 2);
    }

    #[test]
    fn names_parse() {
        for k in ClassifierKind::DEFAULTS {
            assert_eq!(k.to_string().parse::<ClassifierKind>().unwrap(), k);
        }
        assert!("knn0".parse::<ClassifierKind>().is_err());
    }
}
