//! Diffusion volumes, brain extent, slice extraction and slice normalisation.

use std::collections::VecDeque;
use std::fmt;
use std::ops::RangeInclusive;
use std::str::FromStr;

use nalgebra::Matrix4;
use ndarray::{s, Array2, Array3, Array4, ArrayView2, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{QcError, Result};

/// Slice orientation. Axial slices are `(X, Y)` planes at fixed `z`, sagittal
/// slices are `(Y, Z)` planes at fixed `x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    Axial,
    Sagittal,
}

impl View {
    pub const ALL: [View; 2] = [View::Axial, View::Sagittal];

    pub fn as_str(&self) -> &'static str {
        match self {
            View::Axial => "axial",
            View::Sagittal => "sagittal",
        }
    }
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for View {
    type Err = QcError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "axial" => Ok(View::Axial),
            "sagittal" => Ok(View::Sagittal),
            other => Err(QcError::invalid(format!("unknown view '{other}'"))),
        }
    }
}

/// Binary slice label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Label {
    ArtifactFree = 0,
    Artifactual = 1,
}

impl Label {
    pub fn from_flag(flag: bool) -> Self {
        if flag {
            Label::Artifactual
        } else {
            Label::ArtifactFree
        }
    }

    pub fn is_artifact(self) -> bool {
        self == Label::Artifactual
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l as u8
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(Label::ArtifactFree),
            1 => Ok(Label::Artifactual),
            other => Err(format!("label must be 0 or 1, got {other}")),
        }
    }
}

/// Identifies one 2D slice of one gradient image.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SliceKey {
    pub volume_id: String,
    pub view: View,
    pub gradient_index: usize,
    pub slice_index: usize,
}

impl SliceKey {
    pub fn new(volume_id: impl Into<String>, view: View, gradient_index: usize, slice_index: usize) -> Self {
        SliceKey {
            volume_id: volume_id.into(),
            view,
            gradient_index,
            slice_index,
        }
    }
}

impl fmt::Display for SliceKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}/{}/{}",
            self.volume_id, self.view, self.gradient_index, self.slice_index
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SliceSample {
    pub key: SliceKey,
    pub pixels: Array2<f64>,
    pub label: Option<Label>,
}

impl SliceSample {
    pub fn view(&self) -> View {
        self.key.view
    }

    pub fn with_label(mut self, label: Label) -> Self {
        self.label = Some(label);
        self
    }
}

/// A 4D diffusion acquisition indexed `(x, y, z, gradient)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DwiVolume {
    pub id: String,
    data: Array4<f64>,
    pub voxel_size: [f64; 3],
    pub affine: [[f64; 4]; 4],
    /// b-values, when a sidecar gradient table was found.
    pub bvals: Option<Vec<f64>>,
}

pub fn identity_affine(voxel_size: [f64; 3]) -> [[f64; 4]; 4] {
    [
        [voxel_size[0], 0.0, 0.0, 0.0],
        [0.0, voxel_size[1], 0.0, 0.0],
        [0.0, 0.0, voxel_size[2], 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ]
}

impl DwiVolume {
    pub fn new(
        id: impl Into<String>,
        data: Array4<f64>,
        voxel_size: [f64; 3],
        affine: [[f64; 4]; 4],
    ) -> Result<Self> {
        let id = id.into();
        if data.shape().iter().any(|&d| d == 0) {
            return Err(QcError::invalid(format!(
                "volume '{id}' has an empty dimension {:?}",
                data.shape()
            )));
        }
        let non_finite = data.iter().filter(|v| !v.is_finite()).count();
        if non_finite > 0 {
            return Err(QcError::NonFinite {
                path: id.clone().into(),
                count: non_finite,
            });
        }
        let m = Matrix4::from_fn(|r, c| affine[r][c]);
        if m.try_inverse().is_none() || m.determinant().abs() < 1e-12 {
            return Err(QcError::invalid(format!("volume '{id}' has a singular affine")));
        }
        Ok(DwiVolume {
            id,
            data,
            voxel_size,
            affine,
            bvals: None,
        })
    }

    /// Builds a single-gradient volume from a 3D image with a diagonal affine.
    pub fn from_3d(id: impl Into<String>, image: Array3<f64>, voxel_size: [f64; 3]) -> Result<Self> {
        let data = image.insert_axis(Axis(3));
        DwiVolume::new(id, data, voxel_size, identity_affine(voxel_size))
    }

    pub fn data(&self) -> &Array4<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array4<f64> {
        self.data
    }

    /// Replaces the voxel data, keeping geometry. Shape must not change.
    pub fn with_data(&self, data: Array4<f64>) -> Result<Self> {
        if data.shape() != self.data.shape() {
            return Err(QcError::invalid("replacement data changes volume shape"));
        }
        let mut out = DwiVolume::new(self.id.clone(), data, self.voxel_size, self.affine)?;
        out.bvals = self.bvals.clone();
        Ok(out)
    }

    pub fn dims(&self) -> [usize; 4] {
        let s = self.data.shape();
        [s[0], s[1], s[2], s[3]]
    }

    pub fn gradient_count(&self) -> usize {
        self.data.shape()[3]
    }

    pub fn gradient(&self, g: usize) -> ArrayView3<'_, f64> {
        self.data.index_axis(Axis(3), g)
    }

    /// Number of slices along the axis a view cuts.
    pub fn slice_count(&self, view: View) -> usize {
        match view {
            View::Axial => self.data.shape()[2],
            View::Sagittal => self.data.shape()[0],
        }
    }

    pub fn slice_view(&self, view: View, g: usize, index: usize) -> ArrayView2<'_, f64> {
        match view {
            View::Axial => self.data.slice(s![.., .., index, g]),
            View::Sagittal => self.data.slice(s![index, .., .., g]),
        }
    }

    pub fn slice(&self, key: &SliceKey) -> Result<SliceSample> {
        if key.gradient_index >= self.gradient_count() || key.slice_index >= self.slice_count(key.view) {
            return Err(QcError::invalid(format!("slice {key} is outside volume {:?}", self.dims())));
        }
        Ok(SliceSample {
            key: key.clone(),
            pixels: self
                .slice_view(key.view, key.gradient_index, key.slice_index)
                .to_owned(),
            label: None,
        })
    }

    /// First b=0 image when b-values are known, else the brightest gradient
    /// image (least diffusion attenuation).
    pub fn reference_gradient(&self) -> usize {
        if let Some(bvals) = &self.bvals {
            if bvals.len() == self.gradient_count() {
                let min = bvals.iter().cloned().fold(f64::INFINITY, f64::min);
                if let Some(i) = bvals.iter().position(|&b| b == min) {
                    return i;
                }
            }
        }
        let mut best = 0;
        let mut best_mean = f64::NEG_INFINITY;
        for g in 0..self.gradient_count() {
            let m = self.gradient(g).mean().unwrap_or(0.0);
            if m > best_mean {
                best_mean = m;
                best = g;
            }
        }
        best
    }
}

/// Inclusive bounding box of the brain mask, `[min, max]` per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: (usize, usize),
    pub y: (usize, usize),
    pub z: (usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BrainExtent {
    pub mask: Array3<bool>,
    pub bbox: BoundingBox,
}

impl BrainExtent {
    pub fn voxel_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExclusionRule {
    pub sagittal_edge_trim: usize,
    pub axial_top_trim: usize,
    pub drop_outside_brain: bool,
}

impl Default for ExclusionRule {
    fn default() -> Self {
        ExclusionRule {
            sagittal_edge_trim: 5,
            axial_top_trim: 5,
            drop_outside_brain: true,
        }
    }
}

/// Otsu threshold over a 256-bin histogram spanning `[min, max]`.
pub fn otsu_threshold(values: &[f64]) -> Option<f64> {
    let (min, max) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(max > min) {
        return None;
    }
    const BINS: usize = 256;
    let width = (max - min) / BINS as f64;
    let mut hist = [0u64; BINS];
    for &v in values {
        let b = (((v - min) / width) as usize).min(BINS - 1);
        hist[b] += 1;
    }
    let total = values.len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &h)| i as f64 * h as f64).sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let (mut best, mut best_var) = (0usize, -1.0);
    for (i, &h) in hist.iter().enumerate().take(BINS - 1) {
        w0 += h as f64;
        sum0 += i as f64 * h as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (sum_all - sum0) / w1;
        let between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if between > best_var {
            best_var = between;
            best = i;
        }
    }
    Some(min + (best + 1) as f64 * width)
}

/// Largest 6-connected component of a 3D mask; ties go to the component
/// containing the lowest linear index.
pub fn largest_component(mask: &Array3<bool>) -> Array3<bool> {
    let (nx, ny, nz) = mask.dim();
    let mut label = Array3::<u32>::zeros((nx, ny, nz));
    let mut best = (0u32, 0usize);
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for ((x, y, z), &m) in mask.indexed_iter() {
        if !m || label[(x, y, z)] != 0 {
            continue;
        }
        next += 1;
        let mut size = 0usize;
        label[(x, y, z)] = next;
        queue.push_back((x, y, z));
        while let Some((cx, cy, cz)) = queue.pop_front() {
            size += 1;
            let neighbours = [
                (cx.wrapping_sub(1), cy, cz),
                (cx + 1, cy, cz),
                (cx, cy.wrapping_sub(1), cz),
                (cx, cy + 1, cz),
                (cx, cy, cz.wrapping_sub(1)),
                (cx, cy, cz + 1),
            ];
            for (px, py, pz) in neighbours {
                if px < nx && py < ny && pz < nz && mask[(px, py, pz)] && label[(px, py, pz)] == 0 {
                    label[(px, py, pz)] = next;
                    queue.push_back((px, py, pz));
                }
            }
        }
        if size > best.1 {
            best = (next, size);
        }
    }
    label.mapv(|l| l != 0 && l == best.0)
}

fn tight_bbox(mask: &Array3<bool>) -> Option<BoundingBox> {
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    let mut any = false;
    for ((x, y, z), &m) in mask.indexed_iter() {
        if m {
            any = true;
            for (axis, v) in [x, y, z].into_iter().enumerate() {
                lo[axis] = lo[axis].min(v);
                hi[axis] = hi[axis].max(v);
            }
        }
    }
    any.then(|| BoundingBox {
        x: (lo[0], hi[0]),
        y: (lo[1], hi[1]),
        z: (lo[2], hi[2]),
    })
}

/// Thresholds one gradient image with Otsu and keeps the largest connected
/// component. A constant positive image is all brain.
pub fn compute_brain_extent(volume: &DwiVolume, gradient_index: Option<usize>) -> Result<BrainExtent> {
    let g = gradient_index.unwrap_or_else(|| volume.reference_gradient());
    if g >= volume.gradient_count() {
        return Err(QcError::invalid(format!(
            "gradient index {g} out of range (G = {})",
            volume.gradient_count()
        )));
    }
    let image = volume.gradient(g);
    let values: Vec<f64> = image.iter().cloned().collect();
    let mask = match otsu_threshold(&values) {
        Some(t) => largest_component(&image.mapv(|v| v > t)),
        None => {
            if values[0] > 0.0 {
                Array3::from_elem(image.dim(), true)
            } else {
                return Err(QcError::EmptyExtent(format!(
                    "volume '{}' gradient {g} is constant at {}",
                    volume.id, values[0]
                )));
            }
        }
    };
    let bbox = tight_bbox(&mask)
        .ok_or_else(|| QcError::EmptyExtent(format!("volume '{}' has no voxels above threshold", volume.id)))?;
    Ok(BrainExtent { mask, bbox })
}

/// Slice indices that survive the exclusion rule for a view.
pub fn kept_indices(
    view: View,
    extent: &BrainExtent,
    rule: &ExclusionRule,
) -> Result<RangeInclusive<usize>> {
    let (nx, _, nz) = extent.mask.dim();
    let (lo, hi, trim_lo, trim_hi) = match view {
        View::Sagittal => {
            let (lo, hi) = if rule.drop_outside_brain { extent.bbox.x } else { (0, nx - 1) };
            (lo, hi, rule.sagittal_edge_trim, rule.sagittal_edge_trim)
        }
        View::Axial => {
            let (lo, hi) = if rule.drop_outside_brain { extent.bbox.z } else { (0, nz - 1) };
            (lo, hi, 0, rule.axial_top_trim)
        }
    };
    let start = lo + trim_lo;
    if hi < trim_hi || start > hi - trim_hi {
        return Err(QcError::EmptySelection(format!(
            "{view} range [{lo}, {hi}] is exhausted by trims ({trim_lo}, {trim_hi})"
        )));
    }
    Ok(start..=hi - trim_hi)
}

/// One sample per kept slice and gradient, ordered by gradient then index.
pub fn extract_slices(
    volume: &DwiVolume,
    view: View,
    extent: &BrainExtent,
    rule: &ExclusionRule,
) -> Result<Vec<SliceSample>> {
    let range = kept_indices(view, extent, rule)?;
    let mut out = Vec::with_capacity(range.clone().count() * volume.gradient_count());
    for g in 0..volume.gradient_count() {
        for idx in range.clone() {
            out.push(SliceSample {
                key: SliceKey::new(volume.id.clone(), view, g, idx),
                pixels: volume.slice_view(view, g, idx).to_owned(),
                label: None,
            });
        }
    }
    Ok(out)
}

pub const STD_FLOOR: f64 = 1e-8;

/// Zero-mean, unit population variance. Constant slices become zeros.
pub fn normalize_pixels(pixels: &Array2<f64>) -> Array2<f64> {
    let n = pixels.len() as f64;
    if n == 0.0 {
        return pixels.clone();
    }
    let mean = pixels.sum() / n;
    let var = pixels.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < STD_FLOOR {
        return Array2::zeros(pixels.raw_dim());
    }
    pixels.mapv(|v| (v - mean) / std)
}

pub fn normalize_slice(slice: &SliceSample) -> SliceSample {
    SliceSample {
        key: slice.key.clone(),
        pixels: normalize_pixels(&slice.pixels),
        label: slice.label,
    }
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    if a == b {
        a
    } else {
        a + t * (b - a)
    }
}

/// Bilinear sample at fractional `(row, col)`. Samples outside the pixel
/// grid return `fill`.
pub fn sample_bilinear(img: &ArrayView2<f64>, row: f64, col: f64, fill: f64) -> f64 {
    let (h, w) = img.dim();
    if !(row >= 0.0 && col >= 0.0 && row <= (h - 1) as f64 && col <= (w - 1) as f64) {
        return fill;
    }
    let r0 = (row.floor() as usize).min(h - 1);
    let c0 = (col.floor() as usize).min(w - 1);
    let r1 = (r0 + 1).min(h - 1);
    let c1 = (c0 + 1).min(w - 1);
    let fr = row - r0 as f64;
    let fc = col - c0 as f64;
    let top = lerp(img[(r0, c0)], img[(r0, c1)], fc);
    let bottom = lerp(img[(r1, c0)], img[(r1, c1)], fc);
    lerp(top, bottom, fr)
}

/// Bilinear resize with aligned corners; no cropping or padding.
pub fn prepare_input(pixels: &Array2<f64>, target: (usize, usize)) -> Result<Array2<f64>> {
    let (th, tw) = target;
    if th == 0 || tw == 0 {
        return Err(QcError::invalid("target shape must be positive"));
    }
    if pixels.dim() == target {
        return Ok(pixels.clone());
    }
    let (h, w) = pixels.dim();
    let scale = |i: usize, n_out: usize, n_in: usize| {
        if n_out == 1 {
            0.0
        } else {
            (i * (n_in - 1)) as f64 / (n_out - 1) as f64
        }
    };
    let view = pixels.view();
    Ok(Array2::from_shape_fn(target, |(r, c)| {
        sample_bilinear(&view, scale(r, th, h), scale(c, tw, w), 0.0)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn sphere(n: usize, radius: f64) -> Array3<f64> {
        let c = (n / 2) as f64;
        Array3::from_shape_fn((n, n, n), |(x, y, z)| {
            let d = ((x as f64 - c).powi(2) + (y as f64 - c).powi(2) + (z as f64 - c).powi(2)).sqrt();
            if d <= radius {
                100.0
            } else {
                0.0
            }
        })
    }

    #[test]
    fn sphere_extent_matches_brute_force() {
        let img = sphere(64, 20.0);
        // brute-force bounding box of the generated phantom
        let mut lo = [usize::MAX; 3];
        let mut hi = [0; 3];
        for ((x, y, z), &v) in img.indexed_iter() {
            if v > 0.0 {
                for (a, i) in [x, y, z].into_iter().enumerate() {
                    lo[a] = lo[a].min(i);
                    hi[a] = hi[a].max(i);
                }
            }
        }
        assert_eq!((lo[0], hi[0]), (12, 52));
        let vol = DwiVolume::from_3d("s", img, [1.0; 3]).unwrap();
        let ext = compute_brain_extent(&vol, None).unwrap();
        assert_eq!(ext.bbox.x, (lo[0], hi[0]));
        assert_eq!(ext.bbox.y, (lo[1], hi[1]));
        assert_eq!(ext.bbox.z, (lo[2], hi[2]));
    }

    #[test]
    fn constant_positive_volume_is_all_brain() {
        let vol = DwiVolume::from_3d("c", Array3::from_elem((6, 5, 4), 3.0), [1.0; 3]).unwrap();
        let ext = compute_brain_extent(&vol, None).unwrap();
        assert_eq!(ext.voxel_count(), 6 * 5 * 4);
        assert_eq!(ext.bbox, BoundingBox { x: (0, 5), y: (0, 4), z: (0, 3) });
    }

    #[test]
    fn zero_volume_has_empty_extent() {
        let vol = DwiVolume::from_3d("z", Array3::zeros((4, 4, 4)), [1.0; 3]).unwrap();
        assert!(matches!(compute_brain_extent(&vol, None), Err(QcError::EmptyExtent(_))));
    }

    #[test]
    fn largest_component_drops_islands() {
        let mut img = sphere(32, 8.0);
        img[(1, 1, 1)] = 100.0;
        let vol = DwiVolume::from_3d("s", img, [1.0; 3]).unwrap();
        let ext = compute_brain_extent(&vol, None).unwrap();
        assert!(!ext.mask[(1, 1, 1)]);
        assert_eq!(ext.bbox.x, (8, 24));
    }

    fn extent_with_bbox(dims: (usize, usize, usize), bbox: BoundingBox) -> BrainExtent {
        let mut mask = Array3::from_elem(dims, false);
        mask[(bbox.x.0, bbox.y.0, bbox.z.0)] = true;
        mask[(bbox.x.1, bbox.y.1, bbox.z.1)] = true;
        BrainExtent { mask, bbox }
    }

    #[test]
    fn exclusion_rule_arithmetic() {
        let rule = ExclusionRule::default();
        let ext = extent_with_bbox((64, 64, 60), BoundingBox { x: (10, 53), y: (0, 63), z: (5, 50) });
        let sag = kept_indices(View::Sagittal, &ext, &rule).unwrap();
        assert_eq!(sag, 15..=48);
        assert_eq!(sag.count(), 34);
        assert_eq!(kept_indices(View::Axial, &ext, &rule).unwrap(), 5..=45);

        let narrow = extent_with_bbox((64, 64, 60), BoundingBox { x: (10, 18), y: (0, 63), z: (5, 50) });
        assert!(matches!(
            kept_indices(View::Sagittal, &narrow, &rule),
            Err(QcError::EmptySelection(_))
        ));
    }

    #[test]
    fn extract_count_is_kept_times_gradients() {
        let data = Array4::from_shape_fn((20, 6, 16, 3), |(x, _, z, _)| {
            if (3..17).contains(&x) && (2..14).contains(&z) {
                10.0
            } else {
                0.0
            }
        });
        let vol = DwiVolume::new("v", data, [1.0; 3], identity_affine([1.0; 3])).unwrap();
        let ext = compute_brain_extent(&vol, Some(0)).unwrap();
        let rule = ExclusionRule { sagittal_edge_trim: 2, axial_top_trim: 3, drop_outside_brain: true };
        let sag = extract_slices(&vol, View::Sagittal, &ext, &rule).unwrap();
        // brute force: x in 3..=16 minus 2 each side
        let expected: Vec<usize> = (0..20).filter(|x| (5..=14).contains(x)).collect();
        assert_eq!(sag.len(), expected.len() * 3);
        assert!(sag.iter().all(|s| expected.contains(&s.key.slice_index)));
        let ax = extract_slices(&vol, View::Axial, &ext, &rule).unwrap();
        assert_eq!(ax.len(), (2..=10).count() * 3);
        assert_eq!(ax[0].pixels.dim(), (20, 6));
        assert_eq!(sag[0].pixels.dim(), (6, 16));
    }

    #[test]
    fn normalize_examples() {
        let out = normalize_pixels(&array![[1.0, 2.0, 3.0]]);
        assert_abs_diff_eq!(out[(0, 0)], -1.224744871391589, epsilon = 1e-12);
        assert_abs_diff_eq!(out[(0, 1)], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out[(0, 2)], 1.224744871391589, epsilon = 1e-12);

        let constant = normalize_pixels(&Array2::from_elem((4, 4), 5.0));
        assert!(constant.iter().all(|&v| v == 0.0));

        let twice = normalize_pixels(&out);
        for (a, b) in out.iter().zip(twice.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn resize_preserves_corners_and_identity() {
        let img = Array2::from_shape_fn((96, 96), |(r, c)| (r * 96 + c) as f64);
        let big = prepare_input(&img, (224, 224)).unwrap();
        assert_eq!(big[(0, 0)], img[(0, 0)]);
        assert_eq!(big[(0, 223)], img[(0, 95)]);
        assert_eq!(big[(223, 0)], img[(95, 0)]);
        assert_eq!(big[(223, 223)], img[(95, 95)]);
        assert_eq!(prepare_input(&img, (96, 96)).unwrap(), img);

        let rect = Array2::from_shape_fn((60, 96), |(r, c)| (r + c) as f64);
        let out = prepare_input(&rect, (224, 224)).unwrap();
        assert_eq!(out.dim(), (224, 224));
        assert_eq!(out[(223, 223)], rect[(59, 95)]);
        assert!(prepare_input(&rect, (0, 4)).is_err());
    }

    #[test]
    fn rejects_non_finite_and_singular() {
        let mut img = Array3::<f64>::zeros((2, 2, 2));
        img[(0, 0, 0)] = f64::NAN;
        match DwiVolume::from_3d("n", img, [1.0; 3]) {
            Err(QcError::NonFinite { count, .. }) => assert_eq!(count, 1),
            other => panic!("unexpected {other:?}"),
        }
        let mut affine = identity_affine([1.0; 3]);
        affine[2][2] = 0.0;
        assert!(DwiVolume::new("s", Array4::zeros((2, 2, 2, 1)), [1.0; 3], affine).is_err());
    }
}
