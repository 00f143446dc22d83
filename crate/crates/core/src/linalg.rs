//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{check_dim, Error, Result};

pub fn mean(rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = rows.first().ok_or(Error::Empty("rows"))?;
    let mut m = vec![0.0; first.len()];
    for r in rows {
        check_dim(m.len(), r.len())?;
        for (a, b) in m.iter_mut().zip(r) {
            *a += b;
        }
    }
    let n = rows.len() as f64;
    m.iter_mut().for_each(|v| *v /= n);
    Ok(m)
}

/// Unbiased sample covariance.
pub fn covariance(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    if rows.len() < 2 {
        return Err(Error::Degenerate(format!("covariance needs >= 2 samples, got {}", rows.len())));
    }
    let mu = mean(rows)?;
    let d = mu.len();
    let mut c = DMatrix::zeros(d, d);
    for r in rows {
        for i in 0..d {
            let di = r[i] - mu[i];
            for j in i..d {
                c[(i, j)] += di * (r[j] - mu[j]);
            }
        }
    }
    let denom = (rows.len() - 1) as f64;
    for i in 0..d {
        for j in i..d {
            let v = c[(i, j)] / denom;
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
    Ok(c)
}

pub fn to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(n, d, |i, j| rows[i][j])
}

pub fn min_eigenvalue(sym: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(sym.clone()).eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Principal square root of a symmetric PSD matrix; negative round-off
/// eigenvalues are clamped to zero.
pub fn sqrt_psd(sym: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(sym.clone());
    let vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// Principal component projection fitted on a sample.
#[derive(Debug, Clone)]
pub struct Pca {
    mean: Vec<f64>,
    /// `k × d`, rows sorted by decreasing explained variance.
    components: Vec<Vec<f64>>,
    explained: Vec<f64>,
}

impl Pca {
    pub fn fit(rows: &[Vec<f64>], k: usize) -> Result<Self> {
        let cov = covariance(rows)?;
        let d = cov.nrows();
        if k == 0 || k > d {
            return Err(Error::InvalidParameter(format!("PCA rank {k} outside 1..={d}")));
        }
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let components = order[..k]
            .iter()
            .map(|&i| {
                let v: Vec<f64> = eig.eigenvectors.column(i).iter().cloned().collect();
                // fix the sign so the largest-magnitude loading is positive
                let pivot = v.iter().cloned().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
                if pivot < 0.0 {
                    v.into_iter().map(|x| -x).collect()
                } else {
                    v
                }
            })
            .collect();
        let explained = order[..k].iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
        Ok(Self { mean: mean(rows)?, components, explained })
    }

    pub fn explained_variance(&self) -> &[f64] {
        &self.explained
    }

    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.mean.len(), x.len())?;
        Ok(self
            .components
            .iter()
            .map(|c| c.iter().zip(x).zip(&self.mean).map(|((ci, xi), mi)| ci * (xi - mi)).sum())
            .collect())
    }
}
