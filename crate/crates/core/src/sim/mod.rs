//! Artifact injection and benchmark generation.
//!
//! Slice-domain injectors act on one 2D slice (rows are the phase-encode
//! axis, columns the frequency-encode axis). Volume-domain injectors modulate
//! whole axial slices of one gradient image and are labelled in the sagittal
//! view, where they show up as banding across slices.

mod banding;
mod benchmark;
mod kspace;
mod slice_domain;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::QcError;
use crate::volume::View;

pub use banding::{inject_motion, inject_multiband, multiband_sign};
pub use benchmark::{
    corrupt_volume, make_benchmark, AffectedSlices, AppliedArtifact, BenchmarkConfig, BenchmarkManifest,
    CorruptedVolume, ManifestEntry,
};
pub use kspace::{herringbone_amplitude, inject_ghosting, inject_herringbone};
pub use slice_domain::{inject_chemical_shift, inject_susceptibility, quantile, SusceptibilityParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    Herringbone,
    ChemicalShift,
    Susceptibility,
    Ghosting,
    Motion,
    Multiband,
}

impl ArtifactKind {
    pub const ALL: [ArtifactKind; 6] = [
        ArtifactKind::Herringbone,
        ArtifactKind::ChemicalShift,
        ArtifactKind::Susceptibility,
        ArtifactKind::Ghosting,
        ArtifactKind::Motion,
        ArtifactKind::Multiband,
    ];

    /// View in which the artifact is labelled.
    pub fn label_view(self) -> View {
        match self {
            ArtifactKind::Motion | ArtifactKind::Multiband => View::Sagittal,
            _ => View::Axial,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ArtifactKind::Herringbone => "herringbone",
            ArtifactKind::ChemicalShift => "chemical_shift",
            ArtifactKind::Susceptibility => "susceptibility",
            ArtifactKind::Ghosting => "ghosting",
            ArtifactKind::Motion => "motion",
            ArtifactKind::Multiband => "multiband",
        }
    }
}

impl fmt::Display for ArtifactKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ArtifactKind {
    type Err = QcError;

    fn from_str(s: &str) -> Result<Self, QcError> {
        let t = s.trim().to_ascii_lowercase().replace('-', "_");
        ArtifactKind::ALL
            .into_iter()
            .find(|k| k.as_str() == t)
            .ok_or_else(|| QcError::Config(format!("unknown artifact kind '{s}'")))
    }
}

/// Kind-specific injector parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArtifactParams {
    Herringbone { ku: i64, kv: i64, amplitude: f64, phase: f64 },
    ChemicalShift { shift_px: i64, rim_quantile: f64, blend: f64 },
    Susceptibility(SusceptibilityParams),
    Ghosting { alpha: f64 },
    Motion { band_period: usize, attenuation: f64 },
    Multiband { period: usize, gain: f64 },
}

impl ArtifactParams {
    pub fn kind(&self) -> ArtifactKind {
        match self {
            ArtifactParams::Herringbone { .. } => ArtifactKind::Herringbone,
            ArtifactParams::ChemicalShift { .. } => ArtifactKind::ChemicalShift,
            ArtifactParams::Susceptibility(_) => ArtifactKind::Susceptibility,
            ArtifactParams::Ghosting { .. } => ArtifactKind::Ghosting,
            ArtifactParams::Motion { .. } => ArtifactKind::Motion,
            ArtifactParams::Multiband { .. } => ArtifactKind::Multiband,
        }
    }
}

/// One artifact instance: kind-specific parameters, the severity they were
/// derived from, and the RNG seed of the owning volume stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactSpec {
    pub severity: f64,
    pub params: ArtifactParams,
    pub seed: u64,
}

impl ArtifactSpec {
    pub fn new(severity: f64, params: ArtifactParams, seed: u64) -> Result<Self, QcError> {
        if !(severity > 0.0 && severity <= 1.0) {
            return Err(QcError::invalid(format!("severity {severity} must lie in (0, 1]")));
        }
        Ok(ArtifactSpec { severity, params, seed })
    }

    pub fn kind(&self) -> ArtifactKind {
        self.params.kind()
    }
}
