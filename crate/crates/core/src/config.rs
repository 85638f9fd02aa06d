//! Experiment configuration: one JSON document holding every knob of a
//! train or evaluate run. Unknown keys are rejected and the stored copy has
//! every default filled in.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::dataset::DatasetSpec;
use crate::error::{QcError, Result};
use crate::eval::FoldSpec;
use crate::learning::{Backend, BackendSpec, FeatureBackbone};
use crate::pipeline::ThresholdConfig;
use crate::volume::{ExclusionRule, View};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneSettings {
    pub fraction: f64,
    pub seed: u64,
    /// Model to start from; trained on `datasets` when absent.
    pub base_model: Option<PathBuf>,
    /// Extra label CSV (e.g. review decisions) over the test datasets' volumes.
    pub new_labels: Option<PathBuf>,
}

impl Default for FinetuneSettings {
    fn default() -> Self {
        FinetuneSettings {
            fraction: 0.1,
            seed: 0,
            base_model: None,
            new_labels: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Training datasets.
    pub datasets: Vec<DatasetSpec>,
    /// Held-out datasets for cross-dataset and fine-tune evaluation.
    pub test_datasets: Vec<DatasetSpec>,
    pub view: View,
    pub exclusion: ExclusionRule,
    pub augment: AugmentConfig,
    pub backend: BackendSpec,
    pub backbone: Option<FeatureBackbone>,
    pub thresholds: ThresholdConfig,
    pub folds: FoldSpec,
    /// Slice-count thresholds for sweeps.
    pub sweep_thresholds: Vec<usize>,
    pub finetune: FinetuneSettings,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            datasets: Vec::new(),
            test_datasets: Vec::new(),
            view: View::Axial,
            exclusion: ExclusionRule::default(),
            augment: AugmentConfig::default(),
            backend: BackendSpec::default_for(Backend::CnnHead),
            backbone: None,
            thresholds: ThresholdConfig::default(),
            folds: FoldSpec::default(),
            sweep_thresholds: (1..=10).collect(),
            finetune: FinetuneSettings::default(),
            seed: 0,
            output_dir: PathBuf::from("results"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| QcError::Config(e.to_string()))
    }

    /// Reads a config and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| QcError::Config(format!("{}: {e}", path.display())))?;
        let cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let cfg = cfg.resolve(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve(mut self, base: &Path) -> Self {
        let abs = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.datasets = self.datasets.into_iter().map(|d| d.resolve(base)).collect();
        self.test_datasets = self.test_datasets.into_iter().map(|d| d.resolve(base)).collect();
        if let Some(b) = self.backbone.as_mut() {
            abs(&mut b.weights_path);
        }
        if let Some(p) = self.finetune.base_model.as_mut() {
            abs(p);
        }
        if let Some(p) = self.finetune.new_labels.as_mut() {
            abs(p);
        }
        abs(&mut self.output_dir);
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.backend.validate()?;
        self.augment.validate()?;
        if self.folds.k < 2 {
            return Err(QcError::Config(format!("folds.k = {} must be at least 2", self.folds.k)));
        }
        if self.backend.backend().needs_backbone() && self.backbone.is_none() {
            return Err(QcError::Config(format!("backend {} needs a backbone entry", self.backend.backend())));
        }
        if !(self.finetune.fraction > 0.0 && self.finetune.fraction <= 1.0) {
            return Err(QcError::Config(format!("finetune.fraction {} outside (0, 1]", self.finetune.fraction)));
        }
        let mut ids: Vec<&str> = self.datasets.iter().chain(&self.test_datasets).map(|d| d.id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(QcError::Config(format!("dataset id '{}' listed twice", w[0])));
        }
        Ok(())
    }

    /// The config with every default written out.
    pub fn materialized(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::pipeline::write_atomic(path, &serde_json::to_vec_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"seed": 1, "epochz": 3}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"augment": {"max_rotaton": 3}}"#).is_err());
    }

    #[test]
    fn defaults_are_materialized() {
        let cfg = ExperimentConfig::from_json(r#"{"backend": {"backend": "cnn_head"}}"#).unwrap();
        let v = cfg.materialized();
        assert_eq!(v["backend"]["train"]["epochs"], 20);
        assert_eq!(v["backend"]["train"]["learning_rate"], 2e-4);
        assert_eq!(v["thresholds"]["axial"], 3);
        assert_eq!(v["folds"]["k"], 5);
        assert_eq!(v["folds"]["grouping"], "subject");
        let back: ExperimentConfig = serde_json::from_value(v).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn relative_paths_resolve_against_config_dir() {
        let cfg = ExperimentConfig::from_json(
            r#"{"backend": {"backend": "gabor_rf"}, "datasets": [{"id": "a", "volumes": "a/volumes", "labels": "a/labels.csv"}]}"#,
        )
        .unwrap()
        .resolve(Path::new("/data"));
        assert_eq!(cfg.datasets[0].volumes, PathBuf::from("/data/a/volumes"));
        assert_eq!(cfg.output_dir, PathBuf::from("/data/results"));
        cfg.validate().unwrap();
    }
}
