use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::DescriptorConfig;
use crate::error::{QcError, Result};
use crate::volume::SliceKey;

const MAGIC: &[u8; 8] = b"DWQCFEAT";
const CACHE_VERSION: u32 = 1;

/// Row-per-slice feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub config: DescriptorConfig,
    pub keys: Vec<SliceKey>,
    pub data: Array2<f64>,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    version: u32,
    config: DescriptorConfig,
    rows: usize,
    cols: usize,
    keys: Vec<SliceKey>,
}

fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("bin"), stem.with_extension("json"))
}

impl FeatureMatrix {
    /// Writes `<stem>.bin` (magic, rows, cols as u64 LE, then row-major f64 LE)
    /// and the `<stem>.json` sidecar.
    pub fn save(&self, stem: &Path) -> Result<()> {
        let (bin, json) = paths(stem);
        let (rows, cols) = self.data.dim();
        if rows != self.keys.len() {
            return Err(QcError::Invariant("feature rows and keys differ in length".into()));
        }
        let mut w = BufWriter::new(fs::File::create(&bin)?);
        w.write_all(MAGIC)?;
        w.write_all(&(rows as u64).to_le_bytes())?;
        w.write_all(&(cols as u64).to_le_bytes())?;
        for v in self.data.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        let sidecar = Sidecar {
            version: CACHE_VERSION,
            config: self.config.clone(),
            rows,
            cols,
            keys: self.keys.clone(),
        };
        fs::write(json, serde_json::to_vec_pretty(&sidecar)?)?;
        Ok(())
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let (bin, json) = paths(stem);
        let sidecar: Sidecar = serde_json::from_slice(&fs::read(&json)?)?;
        if sidecar.version != CACHE_VERSION {
            return Err(QcError::ModelFormat(format!("feature cache version {}", sidecar.version)));
        }
        let mut r = BufReader::new(fs::File::open(&bin)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(QcError::ModelFormat(format!("{} is not a feature cache", bin.display())));
        }
        let mut word = [0u8; 8];
        r.read_exact(&mut word)?;
        let rows = u64::from_le_bytes(word) as usize;
        r.read_exact(&mut word)?;
        let cols = u64::from_le_bytes(word) as usize;
        if rows != sidecar.rows || cols != sidecar.cols || rows != sidecar.keys.len() {
            return Err(QcError::ModelFormat("feature cache shape disagrees with its sidecar".into()));
        }
        let mut values = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            r.read_exact(&mut word)?;
            values.push(f64::from_le_bytes(word));
        }
        let data = Array2::from_shape_vec((rows, cols), values)
            .map_err(|e| QcError::ModelFormat(e.to_string()))?;
        Ok(FeatureMatrix {
            config: sidecar.config,
            keys: sidecar.keys,
            data,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::LbpConfig;
    use crate::volume::View;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = FeatureMatrix {
            config: DescriptorConfig::Lbp(LbpConfig::default()),
            keys: vec![SliceKey::new("a", View::Axial, 0, 1), SliceKey::new("a", View::Axial, 0, 2)],
            data: Array2::from_shape_fn((2, 10), |(r, c)| r as f64 * 0.1 + c as f64 / 3.0),
        };
        let stem = dir.path().join("feats");
        m.save(&stem).unwrap();
        assert_eq!(FeatureMatrix::load(&stem).unwrap(), m);
        fs::write(stem.with_extension("bin"), b"garbage!").unwrap();
        assert!(FeatureMatrix::load(&stem).is_err());
    }
}
