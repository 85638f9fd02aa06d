use std::f64::consts::PI;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Descriptor, FeatureVector};
use crate::error::{QcError, Result};
use crate::volume::sample_bilinear;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LbpConfig {
    pub neighbors: usize,
    pub radius: f64,
}

impl Default for LbpConfig {
    fn default() -> Self {
        LbpConfig {
            neighbors: 8,
            radius: 1.0,
        }
    }
}

impl LbpConfig {
    /// `P + 1` uniform codes plus one bin for all non-uniform patterns.
    pub fn dim(&self) -> usize {
        self.neighbors + 2
    }

    fn validate(&self) -> Result<()> {
        if self.neighbors < 4 || self.neighbors > 32 || !(self.radius >= 1.0) {
            return Err(QcError::Config("LBP needs 4 <= P <= 32 and R >= 1".into()));
        }
        Ok(())
    }
}

/// Rotation-invariant uniform code of a `P`-bit circular pattern: the number
/// of set bits when the pattern has at most two transitions, else `P + 1`.
pub fn uniform_code(bits: u32, p: usize) -> usize {
    let mask = if p == 32 { u32::MAX } else { (1u32 << p) - 1 };
    let bits = bits & mask;
    let rotated = ((bits >> 1) | ((bits & 1) << (p - 1))) & mask;
    if (bits ^ rotated).count_ones() <= 2 {
        bits.count_ones() as usize
    } else {
        p + 1
    }
}

fn snap(v: f64) -> f64 {
    if (v - v.round()).abs() < 1e-9 {
        v.round()
    } else {
        v
    }
}

/// Normalised histogram of uniform rotation-invariant codes over interior
/// pixels. Neighbours lie on a circle of radius `R` and are sampled
/// bilinearly; a neighbour equal to the centre counts as set.
pub fn lbp_features(slice: &Array2<f64>, config: &LbpConfig) -> Result<FeatureVector> {
    config.validate()?;
    let p = config.neighbors;
    let margin = config.radius.ceil() as usize;
    let (h, w) = slice.dim();
    if h < 2 * margin + 1 || w < 2 * margin + 1 {
        return Err(QcError::invalid(format!(
            "slice {h}x{w} is smaller than the LBP footprint {0}x{0}",
            2 * margin + 1
        )));
    }
    let offsets: Vec<(f64, f64)> = (0..p)
        .map(|k| {
            let a = 2.0 * PI * k as f64 / p as f64;
            (snap(-config.radius * a.sin()), snap(config.radius * a.cos()))
        })
        .collect();
    let view = slice.view();
    let mut hist = vec![0.0; p + 2];
    let mut total = 0usize;
    for r in margin..h - margin {
        for c in margin..w - margin {
            let centre = slice[(r, c)];
            let mut bits = 0u32;
            for (k, &(dr, dc)) in offsets.iter().enumerate() {
                let v = sample_bilinear(&view, r as f64 + dr, c as f64 + dc, 0.0);
                if v >= centre {
                    bits |= 1 << k;
                }
            }
            hist[uniform_code(bits, p)] += 1.0;
            total += 1;
        }
    }
    for v in hist.iter_mut() {
        *v /= total as f64;
    }
    FeatureVector::new(hist, Descriptor::Lbp, config.dim())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_codes() {
        assert_eq!(uniform_code(0b0000_0000, 8), 0);
        assert_eq!(uniform_code(0b1111_1111, 8), 8);
        assert_eq!(uniform_code(0b0001_1100, 8), 3);
        assert_eq!(uniform_code(0b1000_0001, 8), 2);
        assert_eq!(uniform_code(0b0101_0000, 8), 9);
        // rotation invariance
        for b in 0u32..256 {
            let rot = ((b << 1) | (b >> 7)) & 0xff;
            assert_eq!(uniform_code(b, 8), uniform_code(rot, 8));
        }
    }

    #[test]
    fn constant_image_is_all_ones_bin() {
        let img = Array2::from_elem((6, 7), 2.5);
        let f = lbp_features(&img, &LbpConfig::default()).unwrap();
        assert_eq!(f.dim, 10);
        assert_eq!(f.values[8], 1.0);
        assert!((f.values.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn too_small_slice_fails() {
        assert!(lbp_features(&Array2::zeros((2, 5)), &LbpConfig::default()).is_err());
        assert!(lbp_features(&Array2::zeros((3, 3)), &LbpConfig { neighbors: 3, radius: 1.0 }).is_err());
    }
}
