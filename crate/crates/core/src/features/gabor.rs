use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex};

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{mean_std, Descriptor, FeatureVector};
use crate::error::{QcError, Result};
use crate::fft;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaborConfig {
    pub n_scales: usize,
    pub n_orientations: usize,
    /// Carrier wavelength at the finest scale, in pixels.
    pub base_wavelength: f64,
    pub scale_factor: f64,
    /// Envelope sigma as a fraction of the wavelength.
    pub sigma_ratio: f64,
    pub zero_dc: bool,
}

impl Default for GaborConfig {
    fn default() -> Self {
        GaborConfig {
            n_scales: 4,
            n_orientations: 4,
            base_wavelength: 4.0,
            scale_factor: 2.0,
            sigma_ratio: 0.56,
            zero_dc: true,
        }
    }
}

impl GaborConfig {
    /// Mean and standard deviation of the response magnitude per kernel.
    pub fn dim(&self) -> usize {
        2 * self.n_scales * self.n_orientations
    }

    fn validate(&self) -> Result<()> {
        if self.n_scales == 0 || self.n_orientations == 0 {
            return Err(QcError::Config("Gabor bank needs at least one scale and orientation".into()));
        }
        if !(self.base_wavelength >= 2.0 && self.scale_factor > 0.0 && self.sigma_ratio > 0.0) {
            return Err(QcError::Config("Gabor wavelength must be >= 2 px with positive factors".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GaborKernel {
    pub scale: usize,
    pub orientation: usize,
    pub wavelength: f64,
    /// Radians; the carrier oscillates along this direction (0 = along columns).
    pub angle: f64,
    /// Square, odd-sized, centred at `(half, half)`; rows are `dy`, columns `dx`.
    pub data: Array2<Complex64>,
}

impl GaborKernel {
    pub fn half(&self) -> usize {
        self.data.nrows() / 2
    }
}

/// Kernels ordered scale-major: `index = scale * n_orientations + orientation`.
pub fn gabor_bank(config: &GaborConfig) -> Result<Vec<GaborKernel>> {
    config.validate()?;
    let mut out = Vec::with_capacity(config.n_scales * config.n_orientations);
    for s in 0..config.n_scales {
        let wavelength = config.base_wavelength * config.scale_factor.powi(s as i32);
        let sigma = config.sigma_ratio * wavelength;
        let half = (3.0 * sigma).ceil() as i64;
        let size = (2 * half + 1) as usize;
        for o in 0..config.n_orientations {
            let angle = o as f64 * PI / config.n_orientations as f64;
            let (sin, cos) = angle.sin_cos();
            let mut envelope = Array2::<f64>::zeros((size, size));
            let mut data = Array2::<Complex64>::zeros((size, size));
            for dy in -half..=half {
                for dx in -half..=half {
                    let (x, y) = (dx as f64, dy as f64);
                    let along = x * cos + y * sin;
                    let env = (-(x * x + y * y) / (2.0 * sigma * sigma)).exp();
                    let idx = ((dy + half) as usize, (dx + half) as usize);
                    envelope[idx] = env;
                    data[idx] = Complex64::from_polar(env, 2.0 * PI * along / wavelength);
                }
            }
            let env_sum = envelope.sum();
            data.mapv_inplace(|v| v / env_sum);
            envelope.mapv_inplace(|v| v / env_sum);
            if config.zero_dc {
                // envelope sums to 1, so this removes the kernel's DC exactly
                let dc = data.sum();
                data.zip_mut_with(&envelope, |k, &e| *k -= dc * e);
            }
            out.push(GaborKernel {
                scale: s,
                orientation: o,
                wavelength,
                angle,
                data,
            });
        }
    }
    Ok(out)
}

/// Half-sample symmetric reflection of an arbitrary index into `[0, n)`.
pub(crate) fn reflect_index(i: i64, n: usize) -> usize {
    let n = n as i64;
    let m = i.rem_euclid(2 * n);
    (if m < n { m } else { 2 * n - 1 - m }) as usize
}

fn is_smooth(mut n: usize) -> bool {
    for p in [2, 3, 5] {
        while n % p == 0 {
            n /= p;
        }
    }
    n == 1
}

fn fast_len(min: usize) -> usize {
    (min..).find(|&n| is_smooth(n)).expect("smooth length exists")
}

fn padded_image(img: &Array2<f64>, pad: usize, shape: (usize, usize)) -> Array2<Complex64> {
    let (h, w) = img.dim();
    Array2::from_shape_fn(shape, |(r, c)| {
        let rr = reflect_index(r as i64 - pad as i64, h);
        let cc = reflect_index(c as i64 - pad as i64, w);
        Complex64::new(img[(rr, cc)], 0.0)
    })
}

fn kernel_spectrum(kernel: &Array2<Complex64>, shape: (usize, usize)) -> Array2<Complex64> {
    let half = (kernel.nrows() / 2) as i64;
    let mut k = Array2::<Complex64>::zeros(shape);
    for ((r, c), &v) in kernel.indexed_iter() {
        let rr = (r as i64 - half).rem_euclid(shape.0 as i64) as usize;
        let cc = (c as i64 - half).rem_euclid(shape.1 as i64) as usize;
        k[(rr, cc)] += v;
    }
    fft::fft2(&mut k);
    k
}

/// 2D convolution with symmetric-reflect boundary handling, same-size output.
pub fn convolve_reflect(img: &Array2<f64>, kernel: &Array2<Complex64>) -> Array2<Complex64> {
    let pad = kernel.nrows().max(kernel.ncols()) / 2;
    let (h, w) = img.dim();
    let shape = (fast_len(h + 2 * pad), fast_len(w + 2 * pad));
    let mut spec = padded_image(img, pad, shape);
    fft::fft2(&mut spec);
    let k = kernel_spectrum(kernel, shape);
    spec.zip_mut_with(&k, |a, b| *a *= b);
    fft::ifft2_crop(&mut spec, pad..pad + h, pad..pad + w)
}

/// Kernels sharing one padding width, with their spectra at that padding.
#[derive(Debug)]
struct PadGroup {
    pad: usize,
    shape: (usize, usize),
    members: Vec<(usize, Array2<Complex64>)>,
}

type SpectrumCache = HashMap<(usize, usize), Arc<Vec<PadGroup>>>;

/// A Gabor bank with kernel spectra cached per image shape. Each kernel is
/// applied at the smallest padding that holds its footprint.
#[derive(Debug)]
pub struct GaborBank {
    config: GaborConfig,
    kernels: Vec<GaborKernel>,
    spectra: Mutex<SpectrumCache>,
}

impl GaborBank {
    pub fn new(config: &GaborConfig) -> Result<Self> {
        Ok(GaborBank {
            config: config.clone(),
            kernels: gabor_bank(config)?,
            spectra: Mutex::new(HashMap::new()),
        })
    }

    pub fn config(&self) -> &GaborConfig {
        &self.config
    }

    pub fn kernels(&self) -> &[GaborKernel] {
        &self.kernels
    }

    fn groups(&self, (h, w): (usize, usize)) -> Arc<Vec<PadGroup>> {
        let mut cache = self.spectra.lock().expect("spectrum cache poisoned");
        cache
            .entry((h, w))
            .or_insert_with(|| {
                let mut by_pad: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
                for (i, k) in self.kernels.iter().enumerate() {
                    by_pad.entry(k.half()).or_default().push(i);
                }
                Arc::new(
                    by_pad
                        .into_iter()
                        .map(|(pad, idx)| {
                            let shape = (fast_len(h + 2 * pad), fast_len(w + 2 * pad));
                            PadGroup {
                                pad,
                                shape,
                                members: idx
                                    .into_iter()
                                    .map(|i| (i, kernel_spectrum(&self.kernels[i].data, shape)))
                                    .collect(),
                            }
                        })
                        .collect(),
                )
            })
            .clone()
    }

    /// Magnitude of every kernel response, in bank order.
    pub fn responses(&self, img: &Array2<f64>) -> Vec<Array2<f64>> {
        let (h, w) = img.dim();
        let mut out: Vec<Option<Array2<f64>>> = vec![None; self.kernels.len()];
        for g in self.groups((h, w)).iter() {
            let mut image = padded_image(img, g.pad, g.shape);
            fft::fft2(&mut image);
            for (i, k) in &g.members {
                let mut prod = &image * k;
                let resp = fft::ifft2_crop(&mut prod, g.pad..g.pad + h, g.pad..g.pad + w);
                out[*i] = Some(resp.mapv(|v| v.norm()));
            }
        }
        out.into_iter().map(|r| r.expect("every kernel is in a group")).collect()
    }

    pub fn features(&self, img: &Array2<f64>) -> Result<FeatureVector> {
        let mut values = Vec::with_capacity(self.config.dim());
        for resp in self.responses(img) {
            let (m, s) = mean_std(resp.iter().cloned());
            values.push(m);
            values.push(s);
        }
        FeatureVector::new(values, Descriptor::Gabor, self.config.dim())
    }
}

/// `(mean, std)` of the magnitude response per kernel; 32 values for the
/// default 4x4 bank.
pub fn gabor_features(slice: &Array2<f64>, config: &GaborConfig) -> Result<FeatureVector> {
    GaborBank::new(config)?.features(slice)
}
