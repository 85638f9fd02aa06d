use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{Descriptor, FeatureVector};
use crate::error::{QcError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ZernikeConfig {
    pub max_order: usize,
    pub use_magnitudes: bool,
    /// Restrict the output to this single `(n, m)` moment.
    pub only: Option<(usize, usize)>,
}

impl Default for ZernikeConfig {
    fn default() -> Self {
        ZernikeConfig {
            max_order: 4,
            use_magnitudes: true,
            only: None,
        }
    }
}

impl ZernikeConfig {
    pub fn indices(&self) -> Vec<(usize, usize)> {
        match self.only {
            Some(nm) => vec![nm],
            None => zernike_indices(self.max_order),
        }
    }

    pub fn dim(&self) -> usize {
        self.indices().len()
    }

    fn validate(&self) -> Result<()> {
        if !self.use_magnitudes {
            return Err(QcError::Config("Zernike features are always magnitudes".into()));
        }
        if let Some((n, m)) = self.only {
            if m > n || (n - m) % 2 != 0 {
                return Err(QcError::Config(format!("({n}, {m}) is not an admissible Zernike index")));
            }
        }
        Ok(())
    }
}

/// Admissible `(n, m)` pairs with `m >= 0`, `n - m` even, ordered by `n` then `m`.
pub fn zernike_indices(max_order: usize) -> Vec<(usize, usize)> {
    (0..=max_order)
        .flat_map(|n| (n % 2..=n).step_by(2).map(move |m| (n, m)))
        .collect()
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

pub fn radial_polynomial(n: usize, m: usize, rho: f64) -> f64 {
    if m > n || (n - m) % 2 != 0 {
        return 0.0;
    }
    (0..=(n - m) / 2)
        .map(|s| {
            let sign = if s % 2 == 0 { 1.0 } else { -1.0 };
            sign * factorial(n - s) / (factorial(s) * factorial((n + m) / 2 - s) * factorial((n - m) / 2 - s))
                * rho.powi((n - 2 * s) as i32)
        })
        .sum()
}

/// `|A(n, m)|` over the unit disk inscribed in the zero-padded square image.
pub fn zernike_features(slice: &Array2<f64>, config: &ZernikeConfig) -> Result<FeatureVector> {
    config.validate()?;
    let (h, w) = slice.dim();
    let n_side = h.max(w);
    if n_side == 0 {
        return Err(QcError::invalid("Zernike moments of an empty slice"));
    }
    let (off_r, off_c) = ((n_side - h) / 2, (n_side - w) / 2);
    let centre = (n_side as f64 - 1.0) / 2.0;
    let half = n_side as f64 / 2.0;
    let delta = (2.0 / n_side as f64).powi(2);
    let indices = config.indices();
    let mut acc = vec![Complex64::new(0.0, 0.0); indices.len()];
    let mut inside = 0usize;
    for r in 0..n_side {
        for c in 0..n_side {
            let x = (c as f64 - centre) / half;
            let y = (centre - r as f64) / half;
            let rho = (x * x + y * y).sqrt();
            if rho > 1.0 {
                continue;
            }
            inside += 1;
            let (sr, sc) = (r.wrapping_sub(off_r), c.wrapping_sub(off_c));
            let f = if sr < h && sc < w { slice[(sr, sc)] } else { 0.0 };
            if f == 0.0 {
                continue;
            }
            let theta = y.atan2(x);
            for (a, &(n, m)) in acc.iter_mut().zip(&indices) {
                *a += f * radial_polynomial(n, m, rho) * Complex64::from_polar(1.0, -(m as f64) * theta);
            }
        }
    }
    if inside == 0 {
        return Err(QcError::invalid("no pixels inside the unit disk"));
    }
    let values = acc
        .iter()
        .zip(&indices)
        .map(|(a, &(n, _))| ((n as f64 + 1.0) / PI * delta * a).norm())
        .collect();
    FeatureVector::new(values, Descriptor::Zernike, config.dim())
}
