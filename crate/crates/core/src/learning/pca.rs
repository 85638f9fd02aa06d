//! Principal component projection keeping the smallest number of components
//! that reach a cumulative explained-variance target.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{QcError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PcaConfig {
    pub variance_target: f64,
}

impl Default for PcaConfig {
    fn default() -> Self {
        PcaConfig { variance_target: 0.98 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    mean: Array1<f64>,
    /// `k x d`, rows are unit eigenvectors by decreasing eigenvalue.
    components: Array2<f64>,
    /// All eigenvalues of the sample covariance, decreasing, clamped at 0.
    pub eigenvalues: Vec<f64>,
    pub variance_target: f64,
}

/// Smallest `k` with `sum(ev[..k]) / sum(ev) >= target`; `ev` sorted decreasing.
pub fn choose_components(eigenvalues: &[f64], target: f64) -> usize {
    let total: f64 = eigenvalues.iter().sum();
    let mut acc = 0.0;
    for (i, v) in eigenvalues.iter().enumerate() {
        acc += v;
        if acc / total >= target {
            return i + 1;
        }
    }
    eigenvalues.len()
}

impl Pca {
    pub fn fit(x: ArrayView2<f64>, config: &PcaConfig) -> Result<Self> {
        let t = config.variance_target;
        if !(t > 0.0 && t <= 1.0) {
            return Err(QcError::Config(format!("variance target {t} outside (0, 1]")));
        }
        let (n, d) = x.dim();
        if n < 2 || d == 0 {
            return Err(QcError::Degenerate("PCA needs at least two rows".into()));
        }
        let mean = x.mean_axis(Axis(0)).expect("non-empty");
        let centered = &x - &mean;
        let cov = centered.t().dot(&centered) / (n as f64 - 1.0);
        let scale = cov.diag().iter().cloned().fold(0.0, f64::max);
        if !(scale > 1e-12) {
            return Err(QcError::Degenerate("all feature rows are identical".into()));
        }
        let eig = SymmetricEigen::new(DMatrix::from_fn(d, d, |i, j| cov[(i, j)]));
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
        let k = choose_components(&eigenvalues, t);
        let components = Array2::from_shape_fn((k, d), |(r, c)| eig.eigenvectors[(c, order[r])]);
        Ok(Pca {
            mean,
            components,
            eigenvalues,
            variance_target: t,
        })
    }

    pub fn n_components(&self) -> usize {
        self.components.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn explained_ratio(&self, k: usize) -> f64 {
        let total: f64 = self.eigenvalues.iter().sum();
        self.eigenvalues[..k].iter().sum::<f64>() / total
    }

    pub fn transform(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(QcError::invalid(format!("PCA expects {} features, got {}", self.input_dim(), x.ncols())));
        }
        Ok((&x - &self.mean).dot(&self.components.t()))
    }
}
