//! NIfTI-1 input/output for diffusion volumes.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array4, Axis, Ix4};
use nifti::{IntoNdArray, NiftiHeader, NiftiObject, NiftiType, ReaderOptions};
use nifti::writer::WriterOptions;

use crate::error::{QcError, Result};
use crate::volume::DwiVolume;

/// Volume id derived from the file name, without `.nii` / `.nii.gz`.
pub fn volume_id_from_path(path: &Path) -> String {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    name.strip_suffix(".nii.gz")
        .or_else(|| name.strip_suffix(".nii"))
        .unwrap_or(&name)
        .to_string()
}

fn is_nifti(path: &Path) -> bool {
    let name = path.to_string_lossy();
    name.ends_with(".nii") || name.ends_with(".nii.gz")
}

/// Sorted NIfTI files directly inside `dir`.
pub fn list_volumes(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_file() && is_nifti(&path) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn load_err(path: &Path, reason: impl Into<String>) -> QcError {
    QcError::Load {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn read_bvals(path: &Path) -> Option<Vec<f64>> {
    let stem = volume_id_from_path(path);
    let sidecar = path.with_file_name(format!("{stem}.bval"));
    let text = fs::read_to_string(sidecar).ok()?;
    text.split_whitespace().map(|t| t.parse().ok()).collect()
}

fn header_affine(header: &NiftiHeader) -> [[f64; 4]; 4] {
    if header.sform_code > 0 {
        let rows = [header.srow_x, header.srow_y, header.srow_z];
        let mut a = [[0.0; 4]; 4];
        for (r, row) in rows.iter().enumerate() {
            for c in 0..4 {
                a[r][c] = row[c] as f64;
            }
        }
        a[3][3] = 1.0;
        a
    } else {
        let p = |i: usize| {
            let v = header.pixdim[i].abs() as f64;
            if v > 0.0 {
                v
            } else {
                1.0
            }
        };
        crate::volume::identity_affine([p(1), p(2), p(3)])
    }
}

/// Loads a 3D or 4D NIfTI-1 file (optionally gzipped). 3D images become
/// single-gradient volumes. A `<stem>.bval` sidecar is read when present.
pub fn load_dwi(path: impl AsRef<Path>) -> Result<DwiVolume> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(load_err(path, "file does not exist"));
    }
    let obj = ReaderOptions::new()
        .read_file(path)
        .map_err(|e| load_err(path, e.to_string()))?;
    let header = obj.header().clone();
    let array = obj
        .into_volume()
        .into_ndarray::<f64>()
        .map_err(|e| load_err(path, e.to_string()))?;
    let data: Array4<f64> = match array.ndim() {
        3 => array
            .insert_axis(Axis(3))
            .into_dimensionality::<Ix4>()
            .map_err(|e| load_err(path, e.to_string()))?,
        4 => array
            .into_dimensionality::<Ix4>()
            .map_err(|e| load_err(path, e.to_string()))?,
        n => return Err(load_err(path, format!("expected a 3D or 4D image, found {n}D"))),
    };
    // the reader yields Fortran-ordered buffers
    let data = data.as_standard_layout().into_owned();

    let non_finite = data.iter().filter(|v| !v.is_finite()).count();
    if non_finite > 0 {
        return Err(QcError::NonFinite {
            path: path.to_path_buf(),
            count: non_finite,
        });
    }
    let voxel_size = [1, 2, 3].map(|i| {
        let v = header.pixdim[i].abs() as f64;
        if v > 0.0 {
            v
        } else {
            1.0
        }
    });
    let affine = header_affine(&header);
    let mut vol = DwiVolume::new(volume_id_from_path(path), data, voxel_size, affine)
        .map_err(|e| load_err(path, e.to_string()))?;
    vol.bvals = read_bvals(path).filter(|b| b.len() == vol.gradient_count());
    Ok(vol)
}

/// Storage precision for written volumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

/// Writes a volume as 4D NIfTI-1; `.nii.gz` paths are compressed.
pub fn save_dwi(volume: &DwiVolume, path: impl AsRef<Path>, precision: Precision) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut header = NiftiHeader::default();
    header.pixdim[1] = volume.voxel_size[0] as f32;
    header.pixdim[2] = volume.voxel_size[1] as f32;
    header.pixdim[3] = volume.voxel_size[2] as f32;
    header.pixdim[4] = 1.0;
    header.sform_code = 1;
    header.qform_code = 0;
    let a = volume.affine;
    header.srow_x = [a[0][0], a[0][1], a[0][2], a[0][3]].map(|v| v as f32);
    header.srow_y = [a[1][0], a[1][1], a[1][2], a[1][3]].map(|v| v as f32);
    header.srow_z = [a[2][0], a[2][1], a[2][2], a[2][3]].map(|v| v as f32);
    let io_err = |e: nifti::NiftiError| load_err(path, format!("write failed: {e}"));
    let writer = WriterOptions::new(path).reference_header(&header);
    match precision {
        Precision::F64 => writer
            .write_nifti_with_type(volume.data(), NiftiType::Float64)
            .map_err(io_err)?,
        Precision::F32 => writer
            .write_nifti_with_type(&volume.data().mapv(|v| v as f32), NiftiType::Float32)
            .map_err(io_err)?,
    }
    if let Some(bvals) = &volume.bvals {
        let stem = volume_id_from_path(path);
        let text: Vec<String> = bvals.iter().map(|b| b.to_string()).collect();
        fs::write(path.with_file_name(format!("{stem}.bval")), text.join(" ") + "\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array3, Array4};

    #[test]
    fn round_trip_4d_preserves_layout_and_geometry() {
        let dir = tempfile::tempdir().unwrap();
        let data = Array4::from_shape_fn((7, 5, 4, 3), |(x, y, z, g)| (x + 10 * y + 100 * z + 1000 * g) as f64);
        let mut affine = crate::volume::identity_affine([2.0, 2.0, 2.5]);
        affine[0][3] = -10.0;
        let mut vol = DwiVolume::new("dwi", data.clone(), [2.0, 2.0, 2.5], affine).unwrap();
        vol.bvals = Some(vec![0.0, 1000.0, 1000.0]);
        let path = dir.path().join("dwi.nii.gz");
        save_dwi(&vol, &path, Precision::F64).unwrap();
        let back = load_dwi(&path).unwrap();
        assert_eq!(back.id, "dwi");
        assert_eq!(back.data(), &data);
        assert_eq!(back.voxel_size, [2.0, 2.0, 2.5]);
        assert_eq!(back.affine, affine);
        assert_eq!(back.bvals, Some(vec![0.0, 1000.0, 1000.0]));
        assert_eq!(back.reference_gradient(), 0);
    }

    #[test]
    fn three_d_file_is_promoted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t1.nii");
        let img = Array3::from_shape_fn((6, 4, 5), |(x, y, z)| (x * y + z) as f32);
        let header = NiftiHeader::default();
        WriterOptions::new(&path).reference_header(&header).write_nifti(&img).unwrap();
        let vol = load_dwi(&path).unwrap();
        assert_eq!(vol.dims(), [6, 4, 5, 1]);
        assert_eq!(vol.data()[(3, 2, 4, 0)], 10.0);
    }

    #[test]
    fn missing_and_non_finite_files_fail() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_dwi(dir.path().join("nope.nii")), Err(QcError::Load { .. })));

        let path = dir.path().join("nan.nii");
        let mut img = Array3::<f32>::zeros((3, 3, 3));
        img[(1, 1, 1)] = f32::NAN;
        img[(0, 1, 2)] = f32::INFINITY;
        WriterOptions::new(&path)
            .reference_header(&NiftiHeader::default())
            .write_nifti(&img)
            .unwrap();
        let err = load_dwi(&path).unwrap_err();
        assert!(matches!(err, QcError::NonFinite { count: 2, .. }));
        assert!(err.to_string().contains("2 non-finite"));

        let junk = dir.path().join("junk.nii");
        fs::write(&junk, b"not a nifti file").unwrap();
        assert!(matches!(load_dwi(&junk), Err(QcError::Load { .. })));
    }
}
