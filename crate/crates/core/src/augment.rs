//! Geometric augmentation of training slices: translation, rotation, zoom,
//! shear and flips, resampled bilinearly with zero fill.

use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{QcError, Result};
use crate::rng::indexed_stream;
use crate::volume::{sample_bilinear, Label, SliceSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FillMode {
    #[default]
    ConstantZero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Fraction of height/width.
    pub max_translation: f64,
    /// Degrees.
    pub max_rotation: f64,
    pub zoom_range: (f64, f64),
    /// Degrees.
    pub max_shear: f64,
    pub allow_hflip: bool,
    pub allow_vflip: bool,
    pub fill_mode: FillMode,
    /// Augmented copies per original sample.
    pub multiplier: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            max_translation: 0.1,
            max_rotation: 15.0,
            zoom_range: (0.9, 1.1),
            max_shear: 10.0,
            allow_hflip: true,
            allow_vflip: true,
            fill_mode: FillMode::ConstantZero,
            multiplier: 2,
        }
    }
}

impl AugmentConfig {
    /// A config whose transforms are all the identity.
    pub fn identity() -> Self {
        AugmentConfig {
            max_translation: 0.0,
            max_rotation: 0.0,
            zoom_range: (1.0, 1.0),
            max_shear: 0.0,
            allow_hflip: false,
            allow_vflip: false,
            fill_mode: FillMode::ConstantZero,
            multiplier: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.zoom_range;
        if !(lo > 0.0 && hi >= lo) {
            return Err(QcError::Config(format!("zoom range ({lo}, {hi}) must be positive and ordered")));
        }
        if !(0.0..180.0).contains(&self.max_rotation) {
            return Err(QcError::Config(format!("max rotation {} outside [0, 180)", self.max_rotation)));
        }
        if !(0.0..90.0).contains(&self.max_shear) || !(0.0..1.0).contains(&self.max_translation) {
            return Err(QcError::Config("shear must be in [0, 90) and translation in [0, 1)".into()));
        }
        Ok(())
    }
}

/// One drawn transform. Translations are in pixels, angles in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineParams {
    pub shift_rows: f64,
    pub shift_cols: f64,
    pub rotation: f64,
    pub zoom: f64,
    pub shear: f64,
    pub hflip: bool,
    pub vflip: bool,
}

impl AffineParams {
    pub fn identity() -> Self {
        AffineParams {
            shift_rows: 0.0,
            shift_cols: 0.0,
            rotation: 0.0,
            zoom: 1.0,
            shear: 0.0,
            hflip: false,
            vflip: false,
        }
    }

    pub fn sample<R: Rng>(config: &AugmentConfig, shape: (usize, usize), rng: &mut R) -> Self {
        let sym = |rng: &mut R, m: f64| if m > 0.0 { rng.random_range(-m..=m) } else { 0.0 };
        let (lo, hi) = config.zoom_range;
        AffineParams {
            shift_rows: sym(rng, config.max_translation * shape.0 as f64),
            shift_cols: sym(rng, config.max_translation * shape.1 as f64),
            rotation: sym(rng, config.max_rotation),
            zoom: if hi > lo { rng.random_range(lo..=hi) } else { lo },
            shear: sym(rng, config.max_shear),
            hflip: config.allow_hflip && rng.random::<bool>(),
            vflip: config.allow_vflip && rng.random::<bool>(),
        }
    }

    /// Forward linear part acting on centred `(col, row)` coordinates:
    /// rotate * zoom * shear * flip.
    fn linear(&self) -> [[f64; 2]; 2] {
        let (s, c) = self.rotation.to_radians().sin_cos();
        let k = self.shear.to_radians().tan();
        let fx = if self.hflip { -1.0 } else { 1.0 };
        let fy = if self.vflip { -1.0 } else { 1.0 };
        let z = self.zoom;
        // shear * flip = [[fx, k fy], [0, fy]]
        let sf = [[fx, k * fy], [0.0, fy]];
        let rz = [[c * z, -s * z], [s * z, c * z]];
        [
            [rz[0][0] * sf[0][0] + rz[0][1] * sf[1][0], rz[0][0] * sf[0][1] + rz[0][1] * sf[1][1]],
            [rz[1][0] * sf[0][0] + rz[1][1] * sf[1][0], rz[1][0] * sf[0][1] + rz[1][1] * sf[1][1]],
        ]
    }
}

/// Applies the transform by inverse mapping each output pixel.
pub fn warp(slice: &Array2<f64>, params: &AffineParams) -> Array2<f64> {
    let (h, w) = slice.dim();
    let a = params.linear();
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let inv = [[a[1][1] / det, -a[0][1] / det], [-a[1][0] / det, a[0][0] / det]];
    let cr = (h as f64 - 1.0) / 2.0;
    let cc = (w as f64 - 1.0) / 2.0;
    let view = slice.view();
    Array2::from_shape_fn((h, w), |(r, c)| {
        let x = c as f64 - cc - params.shift_cols;
        let y = r as f64 - cr - params.shift_rows;
        let sx = inv[0][0] * x + inv[0][1] * y;
        let sy = inv[1][0] * x + inv[1][1] * y;
        sample_bilinear(&view, sy + cr, sx + cc, 0.0)
    })
}

pub fn augment<R: Rng>(slice: &Array2<f64>, label: Option<Label>, config: &AugmentConfig, rng: &mut R) -> (Array2<f64>, Option<Label>) {
    let params = AffineParams::sample(config, slice.dim(), rng);
    (warp(slice, &params), label)
}

/// Returns the originals followed by `multiplier` augmented copies of each,
/// in sample order. Sample `i` draws from RNG substream `i`.
pub fn augment_dataset(samples: &[SliceSample], config: &AugmentConfig, seed: u64) -> Result<Vec<SliceSample>> {
    config.validate()?;
    let copies: Vec<Vec<SliceSample>> = samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = indexed_stream(seed, i as u64);
            (0..config.multiplier)
                .map(|_| {
                    let (pixels, label) = augment(&s.pixels, s.label, config, &mut rng);
                    SliceSample {
                        key: s.key.clone(),
                        pixels,
                        label,
                    }
                })
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(samples.len() * (1 + config.multiplier));
    out.extend(samples.iter().cloned());
    out.extend(copies.into_iter().flatten());
    Ok(out)
}
