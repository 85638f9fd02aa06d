//! Classical texture descriptors: Gabor filter-bank energies, Zernike moment
//! magnitudes and rotation-invariant uniform LBP histograms.

mod cache;
mod gabor;
mod lbp;
mod zernike;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{QcError, Result};

pub use cache::FeatureMatrix;
pub use gabor::{convolve_reflect, gabor_bank, gabor_features, GaborBank, GaborConfig, GaborKernel};
pub use lbp::{lbp_features, uniform_code, LbpConfig};
pub use zernike::{radial_polynomial, zernike_features, zernike_indices, ZernikeConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Descriptor {
    Gabor,
    Zernike,
    Lbp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub descriptor: Descriptor,
    pub dim: usize,
}

impl FeatureVector {
    pub(crate) fn new(values: Vec<f64>, descriptor: Descriptor, expected_dim: usize) -> Result<Self> {
        if values.len() != expected_dim {
            return Err(QcError::Invariant(format!(
                "{descriptor:?} produced {} values, expected {expected_dim}",
                values.len()
            )));
        }
        Ok(FeatureVector {
            dim: values.len(),
            values,
            descriptor,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "descriptor", rename_all = "snake_case")]
pub enum DescriptorConfig {
    Gabor(GaborConfig),
    Zernike(ZernikeConfig),
    Lbp(LbpConfig),
}

impl DescriptorConfig {
    pub fn descriptor(&self) -> Descriptor {
        match self {
            DescriptorConfig::Gabor(_) => Descriptor::Gabor,
            DescriptorConfig::Zernike(_) => Descriptor::Zernike,
            DescriptorConfig::Lbp(_) => Descriptor::Lbp,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            DescriptorConfig::Gabor(c) => c.dim(),
            DescriptorConfig::Zernike(c) => c.dim(),
            DescriptorConfig::Lbp(c) => c.dim(),
        }
    }
}

/// Reusable extractor; Gabor kernels and their spectra are built once.
#[derive(Debug)]
pub enum FeatureExtractor {
    Gabor(GaborBank),
    Zernike(ZernikeConfig),
    Lbp(LbpConfig),
}

impl FeatureExtractor {
    pub fn new(config: &DescriptorConfig) -> Result<Self> {
        Ok(match config {
            DescriptorConfig::Gabor(c) => FeatureExtractor::Gabor(GaborBank::new(c)?),
            DescriptorConfig::Zernike(c) => FeatureExtractor::Zernike(c.clone()),
            DescriptorConfig::Lbp(c) => FeatureExtractor::Lbp(c.clone()),
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            FeatureExtractor::Gabor(b) => b.config().dim(),
            FeatureExtractor::Zernike(c) => c.dim(),
            FeatureExtractor::Lbp(c) => c.dim(),
        }
    }

    pub fn extract(&self, pixels: &Array2<f64>) -> Result<FeatureVector> {
        match self {
            FeatureExtractor::Gabor(b) => b.features(pixels),
            FeatureExtractor::Zernike(c) => zernike_features(pixels, c),
            FeatureExtractor::Lbp(c) => lbp_features(pixels, c),
        }
    }
}

pub(crate) fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    if n == 0.0 {
        return (0.0, 0.0);
    }
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}
