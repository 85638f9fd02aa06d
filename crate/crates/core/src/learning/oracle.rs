use std::collections::BTreeMap;
use std::path::Path;

use serde_json::json;

use super::SliceClassifier;
use crate::error::Result;
use crate::labels::{latest_by_key, read_labels, LabelRecord};
use crate::volume::{Label, SliceKey, SliceSample, View};

/// Test detector answering from ground-truth labels: probability 1 for
/// artifactual slices, 0 for clean or unknown ones.
#[derive(Debug, Clone, Default)]
pub struct LabelOracle {
    labels: BTreeMap<SliceKey, Label>,
    view: Option<View>,
    source: String,
}

impl LabelOracle {
    pub fn from_records(records: &[LabelRecord], view: Option<View>) -> Self {
        LabelOracle {
            labels: latest_by_key(records)
                .into_iter()
                .filter(|(k, _)| view.is_none_or(|v| k.view == v))
                .map(|(k, r)| (k, r.label))
                .collect(),
            view,
            source: "records".into(),
        }
    }

    pub fn from_csv(path: &Path, view: Option<View>) -> Result<Self> {
        let mut o = Self::from_records(&read_labels(path)?, view);
        o.source = path.display().to_string();
        Ok(o)
    }

    pub fn from_samples(samples: &[SliceSample]) -> Self {
        LabelOracle {
            labels: samples
                .iter()
                .filter_map(|s| s.label.map(|l| (s.key.clone(), l)))
                .collect(),
            view: None,
            source: "samples".into(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

impl SliceClassifier for LabelOracle {
    fn view(&self) -> Option<View> {
        self.view
    }

    fn describe(&self) -> serde_json::Value {
        json!({ "backend": "oracle", "source": self.source, "labels": self.labels.len() })
    }

    fn predict_proba(&self, samples: &[SliceSample]) -> Result<Vec<f64>> {
        super::check_views(self.view, samples)?;
        Ok(samples
            .iter()
            .map(|s| match self.labels.get(&s.key) {
                Some(Label::Artifactual) => 1.0,
                _ => 0.0,
            })
            .collect())
    }
}
