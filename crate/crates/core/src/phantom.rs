//! Synthetic head phantoms used as clean input for benchmark generation.
//!
//! Each phantom is a brain ellipsoid (grey-matter shell, white-matter core,
//! two ventricles) surrounded by a dark skull gap and a thin bright scalp
//! layer. Diffusion-weighted images attenuate each tissue by `exp(-b * ADC)`
//! with a direction-dependent white-matter ADC. Magnitude images carry
//! Rician noise.

use std::path::{Path, PathBuf};

use ndarray::Array4;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{QcError, Result};
use crate::nifti_io::{save_dwi, Precision};
use crate::rng;
use crate::volume::{identity_affine, DwiVolume};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomConfig {
    /// Grid size `(X, Y, Z)`.
    pub dims: [usize; 3],
    /// Number of gradient images; the first one is b=0.
    pub gradients: usize,
    pub b_value: f64,
    /// Brain semi-axes as fractions of the half field of view, sampled
    /// uniformly in this range.
    pub brain_scale: (f64, f64),
    /// Rician noise level relative to grey-matter b=0 intensity.
    pub noise: f64,
    pub intensity: f64,
    pub voxel_size: [f64; 3],
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            dims: [64, 64, 48],
            gradients: 1,
            b_value: 1000.0,
            brain_scale: (0.62, 0.72),
            noise: 0.03,
            intensity: 1000.0,
            voxel_size: [2.0, 2.0, 2.5],
        }
    }
}

struct Ellipsoid {
    center: [f64; 3],
    axes: [f64; 3],
}

impl Ellipsoid {
    fn radius(&self, p: [f64; 3]) -> f64 {
        (0..3)
            .map(|i| ((p[i] - self.center[i]) / self.axes[i]).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

pub fn generate_phantom<R: Rng>(id: &str, config: &PhantomConfig, rng: &mut R) -> Result<DwiVolume> {
    let [nx, ny, nz] = config.dims;
    if nx < 8 || ny < 8 || nz < 8 || config.gradients == 0 {
        return Err(QcError::Config("phantom grid must be at least 8^3 with one gradient".into()));
    }
    let (lo, hi) = config.brain_scale;
    if !(lo > 0.0 && hi >= lo && hi < 0.9) {
        return Err(QcError::Config(format!("brain_scale {:?} must lie in (0, 0.9)", config.brain_scale)));
    }
    let half = [nx as f64 / 2.0, ny as f64 / 2.0, nz as f64 / 2.0];
    let scale = rng.random_range(lo..=hi);
    let center = [
        half[0] - 0.5 + rng.random_range(-1.5..1.5),
        half[1] - 0.5 + rng.random_range(-1.5..1.5),
        half[2] - 0.5 + rng.random_range(-1.0..1.0),
    ];
    let aspect = [rng.random_range(0.92..1.0), 1.0, rng.random_range(0.9..1.0)];
    let brain = Ellipsoid {
        center,
        axes: [0, 1, 2].map(|i| half[i] * scale * aspect[i]),
    };
    let vent_off = brain.axes[0] * rng.random_range(0.18..0.26);
    let vent_axes = [brain.axes[0] * 0.12, brain.axes[1] * 0.35, brain.axes[2] * 0.22];
    let ventricles = [-1.0, 1.0].map(|s| Ellipsoid {
        center: [center[0] + s * vent_off, center[1] + brain.axes[1] * 0.05, center[2] + brain.axes[2] * 0.1],
        axes: vent_axes,
    });
    let wm_ratio = rng.random_range(0.68..0.78);
    let gm = config.intensity;
    let bias = [rng.random_range(-0.08..0.08), rng.random_range(-0.08..0.08), rng.random_range(-0.05..0.05)];

    // tissue b=0 intensity and ADC (mm^2/s)
    const CSF: (f64, f64) = (1.6, 3.0e-3);
    const GREY: (f64, f64) = (1.0, 0.85e-3);
    const WHITE: (f64, f64) = (0.8, 0.7e-3);
    const FAT: (f64, f64) = (1.5, 0.05e-3);

    let directions: Vec<[f64; 3]> = (0..config.gradients)
        .map(|_| {
            let v = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0f64..1.0)];
            let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt().max(1e-6);
            [v[0] / n, v[1] / n, v[2] / n]
        })
        .collect();
    let bvals: Vec<f64> = (0..config.gradients)
        .map(|g| if g == 0 { 0.0 } else { config.b_value })
        .collect();

    let sigma = config.noise * gm;
    let normal = Normal::new(0.0, sigma.max(f64::MIN_POSITIVE)).expect("finite sigma");
    let mut data = Array4::<f64>::zeros((nx, ny, nz, config.gradients));
    for x in 0..nx {
        for y in 0..ny {
            for z in 0..nz {
                let p = [x as f64, y as f64, z as f64];
                let rb = brain.radius(p);
                let tissue = if ventricles.iter().any(|v| v.radius(p) <= 1.0) {
                    Some((CSF, 0.0))
                } else if rb <= wm_ratio {
                    Some((WHITE, 1.0))
                } else if rb <= 1.0 {
                    Some((GREY, 0.0))
                } else if (1.12..=1.2).contains(&rb) {
                    Some((FAT, 0.0))
                } else {
                    None
                };
                let field = 1.0
                    + bias[0] * (p[0] - half[0]) / half[0]
                    + bias[1] * (p[1] - half[1]) / half[1]
                    + bias[2] * (p[2] - half[2]) / half[2];
                for g in 0..config.gradients {
                    let signal = match tissue {
                        Some(((s0, adc), anisotropy)) => {
                            let d = &directions[g];
                            // white matter diffuses faster along x
                            let adc = adc * (1.0 + anisotropy * 0.6 * (d[0] * d[0] - 1.0 / 3.0));
                            gm * s0 * field * (-bvals[g] * adc).exp()
                        }
                        None => 0.0,
                    };
                    let (n1, n2) = if sigma > 0.0 {
                        (normal.sample(rng), normal.sample(rng))
                    } else {
                        (0.0, 0.0)
                    };
                    data[(x, y, z, g)] = ((signal + n1).powi(2) + n2 * n2).sqrt();
                }
            }
        }
    }
    let mut vol = DwiVolume::new(id, data, config.voxel_size, identity_affine(config.voxel_size))?;
    vol.bvals = Some(bvals);
    Ok(vol)
}

/// Writes `count` phantoms named `phantom_000.nii.gz`, ... into `dir`. Each
/// phantom draws from its own RNG stream keyed by `(seed, id)`.
pub fn write_phantoms(dir: &Path, count: usize, config: &PhantomConfig, seed: u64) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    (0..count)
        .into_par_iter()
        .map(|i| {
            let id = format!("phantom_{i:03}");
            let mut r = rng::stream(seed, &id);
            let vol = generate_phantom(&id, config, &mut r)?;
            let path = dir.join(format!("{id}.nii.gz"));
            save_dwi(&vol, &path, Precision::F32)?;
            Ok(path)
        })
        .collect()
}
