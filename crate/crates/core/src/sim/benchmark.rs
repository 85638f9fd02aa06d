use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::path::Path;

use ndarray::{s, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    herringbone_amplitude, inject_chemical_shift, inject_ghosting, inject_herringbone, inject_motion,
    inject_multiband, inject_susceptibility, ArtifactKind, ArtifactParams, ArtifactSpec, SusceptibilityParams,
};
use crate::error::{QcError, Result};
use crate::labels::{write_labels, LabelRecord};
use crate::nifti_io::{list_volumes, load_dwi, save_dwi, Precision};
use crate::rng;
use crate::volume::{compute_brain_extent, kept_indices, BrainExtent, DwiVolume, ExclusionRule, Label, SliceKey, View};

pub const MANIFEST_VERSION: u32 = 1;

/// Slice differences at or below this are not counted as corruption.
pub const DIFF_TOLERANCE: f64 = 1e-9;

const SLICE_KINDS: [ArtifactKind; 4] = [
    ArtifactKind::Herringbone,
    ArtifactKind::ChemicalShift,
    ArtifactKind::Susceptibility,
    ArtifactKind::Ghosting,
];
const VOLUME_KINDS: [ArtifactKind; 2] = [ArtifactKind::Motion, ArtifactKind::Multiband];

/// `mix` gives, per axial kind, the probability that each kept axial slice
/// receives it; per sagittal kind, the probability that each gradient image
/// receives it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub mix: BTreeMap<ArtifactKind, f64>,
    pub severity: (f64, f64),
    pub seed: u64,
    pub exclusion: ExclusionRule,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            mix: BTreeMap::new(),
            severity: (0.3, 0.7),
            seed: 0,
            exclusion: ExclusionRule::default(),
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        for (kind, f) in &self.mix {
            if !(0.0..=1.0).contains(f) {
                return Err(QcError::Config(format!("fraction for {kind} is {f}, expected [0, 1]")));
            }
        }
        let (lo, hi) = self.severity;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(QcError::Config(format!(
                "severity range ({lo}, {hi}) must satisfy 0 < lo <= hi <= 1"
            )));
        }
        Ok(())
    }

    fn fraction(&self, kind: ArtifactKind) -> f64 {
        self.mix.get(&kind).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppliedArtifact {
    pub gradient: usize,
    /// Axial slice for slice-domain artifacts; `None` for volume-domain ones.
    pub slice_index: Option<usize>,
    pub spec: ArtifactSpec,
}

/// `(gradient, slice_index)` pairs labelled artifactual, per view.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AffectedSlices {
    pub axial: Vec<(usize, usize)>,
    pub sagittal: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub volume_id: String,
    pub seed: u64,
    pub kinds: Vec<ArtifactKind>,
    pub artifacts: Vec<AppliedArtifact>,
    pub affected: AffectedSlices,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkManifest {
    pub version: u32,
    pub seed: u64,
    pub mix: BTreeMap<ArtifactKind, f64>,
    pub severity: (f64, f64),
    pub volume_count: usize,
    /// Volumes that received no artifact.
    pub clean_count: usize,
    pub entries: Vec<ManifestEntry>,
}

impl BenchmarkManifest {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

pub struct CorruptedVolume {
    pub volume: DwiVolume,
    pub entry: ManifestEntry,
    pub labels: Vec<LabelRecord>,
}

fn sample_params(
    kind: ArtifactKind,
    severity: f64,
    slice: &Array2<f64>,
    extent: &BrainExtent,
    rng: &mut ChaCha8Rng,
) -> Option<ArtifactParams> {
    let (h, w) = slice.dim();
    let sign = |rng: &mut ChaCha8Rng| if rng.random::<bool>() { 1 } else { -1 };
    match kind {
        ArtifactKind::Ghosting => Some(ArtifactParams::Ghosting { alpha: 0.5 * severity }),
        ArtifactKind::Herringbone => {
            let ku = sign(rng) * rng.random_range(3..=(h as i64 / 4).max(3));
            let kv = sign(rng) * rng.random_range(3..=(w as i64 / 4).max(3));
            Some(ArtifactParams::Herringbone {
                ku,
                kv,
                amplitude: herringbone_amplitude(slice, severity),
                phase: rng.random_range(0.0..2.0 * PI),
            })
        }
        ArtifactKind::ChemicalShift => Some(ArtifactParams::ChemicalShift {
            shift_px: sign(rng) * (1 + (4.0 * severity).round() as i64),
            rim_quantile: 0.9,
            blend: 0.6,
        }),
        ArtifactKind::Susceptibility => {
            let radius = 6 + (16.0 * severity).round() as usize;
            // rows of an axial slice run along x, columns along y
            let lo_r = extent.bbox.x.0.max(radius);
            let hi_r = extent.bbox.x.1.min(h.saturating_sub(radius + 1));
            let lo_c = extent.bbox.y.0.max(radius);
            let hi_c = extent.bbox.y.1.min(w.saturating_sub(radius + 1));
            if lo_r > hi_r || lo_c > hi_c {
                return None;
            }
            let center = (rng.random_range(lo_r..=hi_r), rng.random_range(lo_c..=hi_c));
            Some(ArtifactParams::Susceptibility(SusceptibilityParams::new(
                center,
                radius,
                6.0 * severity,
                severity,
            )))
        }
        ArtifactKind::Motion => Some(ArtifactParams::Motion {
            band_period: rng.random_range(2..=3),
            attenuation: 0.6 * severity,
        }),
        ArtifactKind::Multiband => Some(ArtifactParams::Multiband {
            period: [4, 6, 8][rng.random_range(0..3)],
            gain: 0.4 * severity,
        }),
    }
}

fn apply_slice(params: &ArtifactParams, slice: &Array2<f64>) -> Result<Array2<f64>> {
    match params {
        ArtifactParams::Ghosting { alpha } => inject_ghosting(slice, *alpha),
        ArtifactParams::Herringbone { ku, kv, amplitude, phase } => {
            inject_herringbone(slice, (*ku, *kv), *amplitude, *phase)
        }
        ArtifactParams::ChemicalShift { shift_px, rim_quantile, blend } => {
            inject_chemical_shift(slice, *shift_px, *rim_quantile, *blend)
        }
        ArtifactParams::Susceptibility(p) => inject_susceptibility(slice, p),
        ArtifactParams::Motion { .. } | ArtifactParams::Multiband { .. } => {
            Err(QcError::invalid("volume-domain artifact applied to a single slice"))
        }
    }
}

fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Corrupts one clean volume in memory using the RNG stream keyed by
/// `(config.seed, volume.id)`.
pub fn corrupt_volume(clean: &DwiVolume, config: &BenchmarkConfig) -> Result<CorruptedVolume> {
    config.validate()?;
    let stream_seed = rng::derive_seed(config.seed, &clean.id);
    let mut rng = rng::stream(config.seed, &clean.id);
    let extent = compute_brain_extent(clean, None)?;
    let rule = &config.exclusion;
    let axial: Vec<usize> = kept_indices(View::Axial, &extent, rule)?.collect();
    let sagittal: Vec<usize> = kept_indices(View::Sagittal, &extent, rule)?.collect();
    let (lo, hi) = config.severity;

    let mut volume = clean.clone();
    let mut artifacts = Vec::new();
    let mut affected_axial = BTreeSet::new();
    let mut affected_sagittal = BTreeSet::new();

    for g in 0..clean.gradient_count() {
        for kind in VOLUME_KINDS {
            if rng.random::<f64>() >= config.fraction(kind) {
                continue;
            }
            let severity = rng.random_range(lo..=hi);
            let dummy = Array2::zeros((1, 1));
            let params = sample_params(kind, severity, &dummy, &extent, &mut rng).expect("volume params");
            let (next, hit) = match &params {
                ArtifactParams::Motion { band_period, attenuation } => {
                    inject_motion(&volume, g, *band_period, *attenuation, &extent, rule)?
                }
                ArtifactParams::Multiband { period, gain } => {
                    inject_multiband(&volume, g, *period, *gain, &extent, rule)?
                }
                _ => unreachable!("slice kinds are handled below"),
            };
            volume = next;
            affected_sagittal.extend(hit.into_iter().map(|x| (g, x)));
            artifacts.push(AppliedArtifact {
                gradient: g,
                slice_index: None,
                spec: ArtifactSpec::new(severity, params, stream_seed)?,
            });
        }
    }

    let mut data = volume.into_data();
    for g in 0..clean.gradient_count() {
        for &z in &axial {
            let before = data.slice(s![.., .., z, g]).to_owned();
            let mut current = before.clone();
            for kind in SLICE_KINDS {
                if rng.random::<f64>() >= config.fraction(kind) {
                    continue;
                }
                let severity = rng.random_range(lo..=hi);
                let Some(params) = sample_params(kind, severity, &current, &extent, &mut rng) else {
                    continue;
                };
                current = apply_slice(&params, &current)?;
                artifacts.push(AppliedArtifact {
                    gradient: g,
                    slice_index: Some(z),
                    spec: ArtifactSpec::new(severity, params, stream_seed)?,
                });
            }
            if max_abs_diff(&before, &current) > DIFF_TOLERANCE {
                affected_axial.insert((g, z));
                data.slice_mut(s![.., .., z, g]).assign(&current);
            }
        }
    }
    let volume = clean.with_data(data)?;

    let mut labels = Vec::with_capacity((axial.len() + sagittal.len()) * clean.gradient_count());
    for (view, indices, affected) in [
        (View::Axial, &axial, &affected_axial),
        (View::Sagittal, &sagittal, &affected_sagittal),
    ] {
        for g in 0..clean.gradient_count() {
            for &i in indices {
                let key = SliceKey::new(clean.id.clone(), view, g, i);
                labels.push(LabelRecord::new(&key, Label::from_flag(affected.contains(&(g, i)))));
            }
        }
    }

    let kinds: BTreeSet<ArtifactKind> = artifacts.iter().map(|a| a.spec.kind()).collect();
    Ok(CorruptedVolume {
        volume,
        entry: ManifestEntry {
            volume_id: clean.id.clone(),
            seed: stream_seed,
            kinds: kinds.into_iter().collect(),
            artifacts,
            affected: AffectedSlices {
                axial: affected_axial.into_iter().collect(),
                sagittal: affected_sagittal.into_iter().collect(),
            },
        },
        labels,
    })
}

/// Corrupts every volume in `clean_dir`, writing `volumes/<id>.nii.gz`,
/// `labels.csv` and `manifest.json` under `out_dir`.
pub fn make_benchmark(clean_dir: &Path, out_dir: &Path, config: &BenchmarkConfig) -> Result<BenchmarkManifest> {
    config.validate()?;
    let paths = if clean_dir.is_dir() {
        list_volumes(clean_dir)?
    } else {
        Vec::new()
    };
    if paths.is_empty() {
        return Err(QcError::NoInput(format!("no NIfTI volumes in {}", clean_dir.display())));
    }
    let volumes_dir = out_dir.join("volumes");
    std::fs::create_dir_all(&volumes_dir)?;
    let results: Vec<(ManifestEntry, Vec<LabelRecord>)> = paths
        .par_iter()
        .map(|p| {
            let clean = load_dwi(p)?;
            let c = corrupt_volume(&clean, config)?;
            save_dwi(&c.volume, volumes_dir.join(format!("{}.nii.gz", clean.id)), Precision::F64)?;
            Ok((c.entry, c.labels))
        })
        .collect::<Result<_>>()?;

    let mut labels = Vec::new();
    let mut entries = Vec::new();
    for (entry, l) in results {
        labels.extend(l);
        if !entry.artifacts.is_empty() {
            entries.push(entry);
        }
    }
    let manifest = BenchmarkManifest {
        version: MANIFEST_VERSION,
        seed: config.seed,
        mix: config.mix.clone(),
        severity: config.severity,
        volume_count: paths.len(),
        clean_count: paths.len() - entries.len(),
        entries,
    };
    write_labels(out_dir.join("labels.csv"), &labels)?;
    std::fs::write(out_dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{generate_phantom, PhantomConfig};

    fn phantom(id: &str) -> DwiVolume {
        let cfg = PhantomConfig { dims: [32, 32, 24], gradients: 2, ..Default::default() };
        generate_phantom(id, &cfg, &mut rng::stream(9, id)).unwrap()
    }

    #[test]
    fn zero_mix_is_clean() {
        let clean = phantom("a");
        let c = corrupt_volume(&clean, &BenchmarkConfig::default()).unwrap();
        assert_eq!(c.volume, clean);
        assert!(c.entry.artifacts.is_empty());
        assert!(c.labels.iter().all(|l| l.label == Label::ArtifactFree));
    }

    #[test]
    fn axial_labels_match_slice_diff() {
        let clean = phantom("b");
        let mut cfg = BenchmarkConfig { seed: 5, ..Default::default() };
        for k in SLICE_KINDS {
            cfg.mix.insert(k, 0.3);
        }
        let c = corrupt_volume(&clean, &cfg).unwrap();
        let mut diffs = 0;
        for l in c.labels.iter().filter(|l| l.view == View::Axial) {
            let a = clean.slice_view(View::Axial, l.gradient_index, l.slice_index).to_owned();
            let b = c.volume.slice_view(View::Axial, l.gradient_index, l.slice_index).to_owned();
            let differs = max_abs_diff(&a, &b) > DIFF_TOLERANCE;
            assert_eq!(differs, l.label.is_artifact(), "{l:?}");
            diffs += differs as usize;
        }
        assert!(diffs > 0);
        assert!(c.labels.iter().filter(|l| l.view == View::Sagittal).all(|l| !l.label.is_artifact()));
    }

    #[test]
    fn sagittal_kinds_label_whole_gradient() {
        let clean = phantom("c");
        let mut cfg = BenchmarkConfig { seed: 1, ..Default::default() };
        cfg.mix.insert(ArtifactKind::Motion, 1.0);
        let c = corrupt_volume(&clean, &cfg).unwrap();
        let sag: Vec<_> = c.labels.iter().filter(|l| l.view == View::Sagittal).collect();
        assert!(!sag.is_empty() && sag.iter().all(|l| l.label.is_artifact()));
        assert!(c.labels.iter().filter(|l| l.view == View::Axial).all(|l| !l.label.is_artifact()));
        assert_eq!(c.entry.kinds, vec![ArtifactKind::Motion]);
    }

    #[test]
    fn config_validation() {
        let mut cfg = BenchmarkConfig::default();
        cfg.mix.insert(ArtifactKind::Ghosting, 1.5);
        assert!(cfg.validate().is_err());
        let cfg = BenchmarkConfig { severity: (0.0, 0.5), ..Default::default() };
        assert!(cfg.validate().is_err());
    }
}
