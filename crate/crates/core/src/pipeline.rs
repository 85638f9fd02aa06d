//! Dual-view QC: score every kept axial and sagittal slice, then flag each
//! gradient image whose flagged-slice count exceeds the view threshold.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{QcError, Result};
use crate::learning::{flag_from_prob, SliceClassifier};
use crate::volume::{compute_brain_extent, extract_slices, DwiVolume, ExclusionRule, View};

pub const REPORT_VERSION: u32 = 1;
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdConfig {
    #[serde(rename = "axial", alias = "axial_slice_count")]
    pub axial_slice_count: usize,
    #[serde(rename = "sagittal", alias = "sagittal_slice_count")]
    pub sagittal_slice_count: usize,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        ThresholdConfig {
            axial_slice_count: 3,
            sagittal_slice_count: 7,
        }
    }
}

impl ThresholdConfig {
    pub fn uniform(t: usize) -> Self {
        ThresholdConfig {
            axial_slice_count: t,
            sagittal_slice_count: t,
        }
    }

    pub fn for_view(&self, view: View) -> usize {
        match view {
            View::Axial => self.axial_slice_count,
            View::Sagittal => self.sagittal_slice_count,
        }
    }
}

/// Volume rule: strictly more flagged slices than the threshold.
pub fn volume_flag(flag_count: usize, threshold: usize) -> bool {
    flag_count > threshold
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceEntry {
    pub view: View,
    pub gradient: usize,
    pub index: usize,
    pub prob: f64,
    pub flag: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub view: View,
    pub gradient: usize,
    pub flag: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QcReport {
    pub version: u32,
    pub volume_id: String,
    pub thresholds: ThresholdConfig,
    /// Model identification per view.
    pub models: BTreeMap<String, serde_json::Value>,
    pub slices: Vec<SliceEntry>,
    pub verdicts: Vec<Verdict>,
    /// Any gradient flagged in any view.
    pub acquisition_flag: bool,
    pub tool_version: String,
    pub timestamp: String,
}

impl QcReport {
    /// Flagged-slice count per `(view, gradient)`, including zero counts for
    /// every scored gradient.
    pub fn flag_counts(&self) -> BTreeMap<(View, usize), usize> {
        let mut counts = BTreeMap::new();
        for s in &self.slices {
            *counts.entry((s.view, s.gradient)).or_insert(0) += usize::from(s.flag);
        }
        counts
    }

    /// Verdicts recomputed from the slice flags alone.
    pub fn verdicts_at(&self, thresholds: &ThresholdConfig) -> Vec<Verdict> {
        self.flag_counts()
            .into_iter()
            .map(|((view, gradient), n)| Verdict {
                view,
                gradient,
                flag: volume_flag(n, thresholds.for_view(view)),
            })
            .collect()
    }

    pub fn check_consistency(&self) -> Result<()> {
        if self.verdicts != self.verdicts_at(&self.thresholds) {
            return Err(QcError::Invariant(format!(
                "report '{}' verdicts do not match its slice flags",
                self.volume_id
            )));
        }
        if let Some(s) = self.slices.iter().find(|s| s.flag != flag_from_prob(s.prob)) {
            return Err(QcError::Invariant(format!(
                "slice {}/{}/{} flag disagrees with prob {}",
                s.view, s.gradient, s.index, s.prob
            )));
        }
        Ok(())
    }

    pub fn flagged(&self) -> impl Iterator<Item = &SliceEntry> {
        self.slices.iter().filter(|s| s.flag)
    }

    pub fn contains_slice(&self, view: View, gradient: usize, index: usize) -> bool {
        self.slices
            .iter()
            .any(|s| s.view == view && s.gradient == gradient && s.index == index)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| QcError::Load {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let report: QcReport = serde_json::from_slice(&bytes)?;
        if report.version != REPORT_VERSION {
            return Err(QcError::ModelFormat(format!(
                "report version {} unsupported (expected {REPORT_VERSION})",
                report.version
            )));
        }
        Ok(report)
    }
}

fn ensure_view(model: &dyn SliceClassifier, view: View) -> Result<()> {
    match model.view() {
        Some(v) if v != view => Err(QcError::ViewMismatch {
            expected: view.to_string(),
            actual: v.to_string(),
        }),
        _ => Ok(()),
    }
}

pub fn qc_volume(
    volume: &DwiVolume,
    axial_model: &dyn SliceClassifier,
    sagittal_model: &dyn SliceClassifier,
    rule: &ExclusionRule,
    thresholds: &ThresholdConfig,
) -> Result<QcReport> {
    ensure_view(axial_model, View::Axial)?;
    ensure_view(sagittal_model, View::Sagittal)?;
    let extent = compute_brain_extent(volume, None)?;
    let mut slices = Vec::new();
    let mut models = BTreeMap::new();
    for (view, model) in [(View::Axial, axial_model), (View::Sagittal, sagittal_model)] {
        let samples = extract_slices(volume, view, &extent, rule)?;
        let probs = model.predict_proba(&samples)?;
        if probs.len() != samples.len() {
            return Err(QcError::Invariant(format!(
                "{view} model returned {} probabilities for {} slices",
                probs.len(),
                samples.len()
            )));
        }
        for (s, p) in samples.iter().zip(probs) {
            if !(0.0..=1.0).contains(&p) {
                return Err(QcError::Invariant(format!("probability {p} for slice {}", s.key)));
            }
            slices.push(SliceEntry {
                view,
                gradient: s.key.gradient_index,
                index: s.key.slice_index,
                prob: p,
                flag: flag_from_prob(p),
            });
        }
        models.insert(view.to_string(), model.describe());
    }
    let mut report = QcReport {
        version: REPORT_VERSION,
        volume_id: volume.id.clone(),
        thresholds: *thresholds,
        models,
        slices,
        verdicts: Vec::new(),
        acquisition_flag: false,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        timestamp: chrono::Utc::now().to_rfc3339(),
    };
    report.verdicts = report.verdicts_at(thresholds);
    report.acquisition_flag = report.verdicts.iter().any(|v| v.flag);
    Ok(report)
}

/// Min-max scaled 8-bit grayscale; constant slices map to black.
pub fn thumbnail_bytes(pixels: &Array2<f64>) -> Vec<u8> {
    let (lo, hi) = pixels
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    pixels
        .iter()
        .map(|&v| if range > 0.0 { ((v - lo) / range * 255.0).round() as u8 } else { 0 })
        .collect()
}

pub fn thumbnail_name(view: View, gradient: usize, index: usize) -> String {
    format!("{view}_{gradient}_{index}.png")
}

pub fn write_thumbnail(pixels: &Array2<f64>, path: &Path) -> Result<()> {
    let (h, w) = pixels.dim();
    let img = image::GrayImage::from_raw(w as u32, h as u32, thumbnail_bytes(pixels))
        .ok_or_else(|| QcError::invalid("thumbnail buffer size mismatch"))?;
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| QcError::Io(std::io::Error::other(e)))
}

/// Writes `bytes` to `path` through a sibling temp file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportFiles {
    pub report: PathBuf,
    pub thumbnails: Vec<PathBuf>,
}

/// Writes `report.json` into `out_dir` and, when `thumbnails` is set, one
/// PNG per flagged slice cut from `volume`.
pub fn write_report(report: &QcReport, volume: Option<&DwiVolume>, out_dir: &Path, thumbnails: bool) -> Result<ReportFiles> {
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    if thumbnails {
        let vol = volume.ok_or_else(|| QcError::invalid("thumbnails need the source volume"))?;
        if vol.id != report.volume_id {
            return Err(QcError::invalid(format!(
                "volume '{}' does not match report '{}'",
                vol.id, report.volume_id
            )));
        }
        for s in report.flagged() {
            let path = out_dir.join(thumbnail_name(s.view, s.gradient, s.index));
            write_thumbnail(&vol.slice_view(s.view, s.gradient, s.index).to_owned(), &path)?;
            written.push(path);
        }
    }
    let path = out_dir.join(REPORT_FILE);
    write_atomic(&path, &serde_json::to_vec_pretty(report)?)?;
    Ok(ReportFiles {
        report: path,
        thumbnails: written,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(view: View, gradient: usize, index: usize, prob: f64) -> SliceEntry {
        SliceEntry {
            view,
            gradient,
            index,
            prob,
            flag: flag_from_prob(prob),
        }
    }

    #[test]
    fn strict_volume_rule() {
        assert!(volume_flag(4, 3));
        assert!(!volume_flag(3, 3));
        assert!(!volume_flag(0, 0));
    }

    #[test]
    fn thresholds_serialize_with_short_names() {
        let t = ThresholdConfig::default();
        assert_eq!(serde_json::to_string(&t).unwrap(), r#"{"axial":3,"sagittal":7}"#);
        let long: ThresholdConfig = serde_json::from_str(r#"{"axial_slice_count":2}"#).unwrap();
        assert_eq!(long.axial_slice_count, 2);
        assert_eq!(long.sagittal_slice_count, 7);
    }

    #[test]
    fn counts_include_unflagged_gradients() {
        let mut r = QcReport {
            version: 1,
            volume_id: "v".into(),
            thresholds: ThresholdConfig::uniform(1),
            models: BTreeMap::new(),
            slices: vec![
                entry(View::Axial, 0, 1, 0.9),
                entry(View::Axial, 0, 2, 0.7),
                entry(View::Axial, 1, 1, 0.2),
                entry(View::Sagittal, 0, 5, 0.5),
            ],
            verdicts: vec![],
            acquisition_flag: false,
            tool_version: "t".into(),
            timestamp: "now".into(),
        };
        let c = r.flag_counts();
        assert_eq!(c[&(View::Axial, 0)], 2);
        assert_eq!(c[&(View::Axial, 1)], 0);
        assert_eq!(c[&(View::Sagittal, 0)], 0);
        r.verdicts = r.verdicts_at(&r.thresholds);
        assert_eq!(r.verdicts.iter().filter(|v| v.flag).count(), 1);
        r.check_consistency().unwrap();
        r.thresholds = ThresholdConfig::uniform(2);
        assert!(r.check_consistency().is_err());
    }

    #[test]
    fn thumbnail_scaling() {
        let px = Array2::from_shape_vec((1, 3), vec![-1.0, 0.0, 1.0]).unwrap();
        assert_eq!(thumbnail_bytes(&px), vec![0, 128, 255]);
        assert_eq!(thumbnail_bytes(&Array2::from_elem((2, 2), 5.0)), vec![0; 4]);
    }
}
