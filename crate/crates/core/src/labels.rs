//! Slice label CSV files.
//!
//! Header: `volume_id,view,gradient_index,slice_index,label`, optionally
//! followed by a `source` column for expert review decisions.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{QcError, Result};
use crate::volume::{Label, SliceKey, View};

pub const LABEL_HEADER: [&str; 5] = ["volume_id", "view", "gradient_index", "slice_index", "label"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub volume_id: String,
    pub view: View,
    pub gradient_index: usize,
    pub slice_index: usize,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

impl LabelRecord {
    pub fn new(key: &SliceKey, label: Label) -> Self {
        LabelRecord {
            volume_id: key.volume_id.clone(),
            view: key.view,
            gradient_index: key.gradient_index,
            slice_index: key.slice_index,
            label,
            source: None,
        }
    }

    pub fn key(&self) -> SliceKey {
        SliceKey::new(self.volume_id.clone(), self.view, self.gradient_index, self.slice_index)
    }
}

pub fn read_labels_from<R: Read>(reader: R) -> Result<Vec<LabelRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    for (i, expected) in LABEL_HEADER.iter().enumerate() {
        if headers.get(i) != Some(*expected) {
            return Err(QcError::Labels(format!(
                "expected header column {i} to be '{expected}', found {:?}",
                headers.get(i)
            )));
        }
    }
    let mut out = Vec::new();
    for (line, rec) in rdr.deserialize::<LabelRecord>().enumerate() {
        out.push(rec.map_err(|e| QcError::Labels(format!("row {}: {e}", line + 2)))?);
    }
    Ok(out)
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<LabelRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)
        .map_err(|e| QcError::Labels(format!("{}: {e}", path.display())))?;
    read_labels_from(file)
}

/// Writes records with the base header, adding `source` only when any record
/// carries one.
pub fn write_labels_to<W: Write>(writer: W, records: &[LabelRecord]) -> Result<()> {
    let with_source = records.iter().any(|r| r.source.is_some());
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    let mut header: Vec<&str> = LABEL_HEADER.to_vec();
    if with_source {
        header.push("source");
    }
    wtr.write_record(&header)?;
    for r in records {
        let mut row = vec![
            r.volume_id.clone(),
            r.view.to_string(),
            r.gradient_index.to_string(),
            r.slice_index.to_string(),
            r.label.index().to_string(),
        ];
        if with_source {
            row.push(r.source.clone().unwrap_or_default());
        }
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_labels(path: impl AsRef<Path>, records: &[LabelRecord]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_labels_to(std::io::BufWriter::new(file), records)
}

/// Collapses duplicates, later records replacing earlier ones.
pub fn latest_by_key(records: &[LabelRecord]) -> BTreeMap<SliceKey, LabelRecord> {
    records.iter().map(|r| (r.key(), r.clone())).collect()
}
