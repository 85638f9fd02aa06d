//! Labelled slice datasets: a directory of volumes plus a label CSV.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{QcError, Result};
use crate::labels::{latest_by_key, read_labels, LabelRecord};
use crate::nifti_io::load_dwi;
use crate::volume::{SliceSample, View};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    /// Dataset identity used for leakage checks.
    pub id: String,
    pub volumes: PathBuf,
    pub labels: PathBuf,
}

impl DatasetSpec {
    /// Layout written by the benchmark generator: `volumes/` and `labels.csv`.
    pub fn benchmark(id: impl Into<String>, dir: &Path) -> Self {
        DatasetSpec {
            id: id.into(),
            volumes: dir.join("volumes"),
            labels: dir.join("labels.csv"),
        }
    }

    pub fn resolve(mut self, base: &Path) -> Self {
        if self.volumes.is_relative() {
            self.volumes = base.join(&self.volumes);
        }
        if self.labels.is_relative() {
            self.labels = base.join(&self.labels);
        }
        self
    }
}

/// Finds `<id>.nii.gz` or `<id>.nii` in `dir`.
pub fn volume_path(dir: &Path, volume_id: &str) -> Result<PathBuf> {
    ["nii.gz", "nii"]
        .iter()
        .map(|ext| dir.join(format!("{volume_id}.{ext}")))
        .find(|p| p.is_file())
        .ok_or_else(|| QcError::Load {
            path: dir.join(format!("{volume_id}.nii.gz")),
            reason: "volume referenced by labels not found".into(),
        })
}

/// Extracts exactly the labelled slices of `view`, attaching their labels.
/// Samples are ordered by volume id, then gradient, then slice index.
pub fn load_labeled_samples(volumes_dir: &Path, labels: &[LabelRecord], view: View) -> Result<Vec<SliceSample>> {
    let mut by_volume: BTreeMap<String, Vec<LabelRecord>> = BTreeMap::new();
    for (_, r) in latest_by_key(labels) {
        if r.view == view {
            by_volume.entry(r.volume_id.clone()).or_default().push(r);
        }
    }
    let chunks: Vec<Vec<SliceSample>> = by_volume
        .par_iter()
        .map(|(id, records)| {
            let vol = load_dwi(volume_path(volumes_dir, id)?)?;
            records
                .iter()
                .map(|r| Ok(vol.slice(&r.key())?.with_label(r.label)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

pub fn load_dataset(spec: &DatasetSpec, view: View) -> Result<Vec<SliceSample>> {
    if !spec.volumes.is_dir() {
        return Err(QcError::Load {
            path: spec.volumes.clone(),
            reason: "volume directory does not exist".into(),
        });
    }
    let labels = read_labels(&spec.labels)?;
    let samples = load_labeled_samples(&spec.volumes, &labels, view)?;
    if samples.is_empty() {
        return Err(QcError::NoInput(format!("dataset '{}' has no {view} labels", spec.id)));
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::write_labels;
    use crate::nifti_io::{save_dwi, Precision};
    use crate::volume::{DwiVolume, Label, SliceKey};
    use ndarray::Array4;

    #[test]
    fn loads_only_labelled_slices() {
        let dir = tempfile::tempdir().unwrap();
        let data = Array4::from_shape_fn((6, 5, 4, 2), |(x, y, z, g)| (x + y * 10 + z * 100 + g * 1000) as f64);
        let vol = DwiVolume::new("v1", data, [1.0; 3], crate::volume::identity_affine([1.0; 3])).unwrap();
        save_dwi(&vol, dir.path().join("volumes/v1.nii.gz"), Precision::F64).unwrap();
        let recs = vec![
            LabelRecord::new(&SliceKey::new("v1", View::Axial, 1, 2), Label::Artifactual),
            LabelRecord::new(&SliceKey::new("v1", View::Axial, 0, 3), Label::ArtifactFree),
            LabelRecord::new(&SliceKey::new("v1", View::Sagittal, 0, 3), Label::ArtifactFree),
        ];
        write_labels(dir.path().join("labels.csv"), &recs).unwrap();
        let spec = DatasetSpec::benchmark("d", dir.path());
        let s = load_dataset(&spec, View::Axial).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].key, SliceKey::new("v1", View::Axial, 0, 3));
        assert_eq!(s[1].label, Some(Label::Artifactual));
        assert_eq!(s[1].pixels[(1, 1)], 1.0 + 10.0 + 200.0 + 1000.0);

        let missing = vec![LabelRecord::new(&SliceKey::new("v9", View::Axial, 0, 0), Label::ArtifactFree)];
        assert!(load_labeled_samples(&spec.volumes, &missing, View::Axial).is_err());
    }
}
