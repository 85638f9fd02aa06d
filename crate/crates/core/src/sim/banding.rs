use ndarray::{s, Zip};

use crate::error::{QcError, Result};
use crate::volume::{kept_indices, BrainExtent, DwiVolume, ExclusionRule, View};

fn affected_sagittal(extent: &BrainExtent, rule: &ExclusionRule) -> Result<Vec<usize>> {
    Ok(kept_indices(View::Sagittal, extent, rule)?.collect())
}

fn scale_axial(volume: &DwiVolume, g: usize, gains: &[(usize, f64)]) -> Result<DwiVolume> {
    let mut data = volume.data().clone();
    for &(z, gain) in gains {
        let mut plane = data.slice_mut(s![.., .., z, g]);
        Zip::from(&mut plane).for_each(|v| *v *= gain);
    }
    volume.with_data(data)
}

fn check_gradient(volume: &DwiVolume, g: usize) -> Result<()> {
    if g >= volume.gradient_count() {
        return Err(QcError::invalid(format!("gradient {g} out of range")));
    }
    Ok(())
}

/// Interleaved motion banding: axial slices inside the brain z-range with
/// `z % band_period == 0` lose `attenuation` of their signal. Returns the
/// corrupted volume and the kept sagittal indices, which all show the bands.
pub fn inject_motion(
    volume: &DwiVolume,
    gradient_index: usize,
    band_period: usize,
    attenuation: f64,
    extent: &BrainExtent,
    rule: &ExclusionRule,
) -> Result<(DwiVolume, Vec<usize>)> {
    check_gradient(volume, gradient_index)?;
    if band_period < 2 {
        return Err(QcError::invalid(format!("band period {band_period} < 2")));
    }
    if !(0.0..1.0).contains(&attenuation) {
        return Err(QcError::invalid(format!("attenuation {attenuation} outside [0, 1)")));
    }
    if attenuation == 0.0 {
        return Ok((volume.clone(), Vec::new()));
    }
    let (z0, z1) = extent.bbox.z;
    let gains: Vec<(usize, f64)> = (z0..=z1)
        .filter(|z| z % band_period == 0)
        .map(|z| (z, 1.0 - attenuation))
        .collect();
    Ok((scale_axial(volume, gradient_index, &gains)?, affected_sagittal(extent, rule)?))
}

/// `sign(sin(2 pi z / period))`, evaluated exactly on the integer phase.
pub fn multiband_sign(z: usize, period: usize) -> f64 {
    let phase = z % period;
    if phase == 0 || 2 * phase == period {
        0.0
    } else if 2 * phase < period {
        1.0
    } else {
        -1.0
    }
}

/// Slice-group intensity modulation `1 + gain * sign(sin(2 pi z / period))`
/// on every axial slice of one gradient image.
pub fn inject_multiband(
    volume: &DwiVolume,
    gradient_index: usize,
    mb_period: usize,
    gain: f64,
    extent: &BrainExtent,
    rule: &ExclusionRule,
) -> Result<(DwiVolume, Vec<usize>)> {
    check_gradient(volume, gradient_index)?;
    if mb_period < 2 {
        return Err(QcError::invalid(format!("multiband period {mb_period} < 2")));
    }
    if !(gain.is_finite() && gain.abs() < 1.0) {
        return Err(QcError::invalid(format!("multiband gain {gain} must satisfy |gain| < 1")));
    }
    if gain == 0.0 {
        return Ok((volume.clone(), Vec::new()));
    }
    let nz = volume.slice_count(View::Axial);
    let gains: Vec<(usize, f64)> = (0..nz)
        .map(|z| (z, 1.0 + gain * multiband_sign(z, mb_period)))
        .filter(|&(_, g)| g != 1.0)
        .collect();
    Ok((scale_axial(volume, gradient_index, &gains)?, affected_sagittal(extent, rule)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::compute_brain_extent;
    use ndarray::{Array3, Array4};

    fn block_volume() -> DwiVolume {
        let data = Array4::from_shape_fn((24, 8, 20, 2), |(x, _, z, _)| {
            if (2..22).contains(&x) && (1..19).contains(&z) {
                10.0
            } else {
                0.0
            }
        });
        DwiVolume::new("b", data, [1.0; 3], crate::volume::identity_affine([1.0; 3])).unwrap()
    }

    #[test]
    fn motion_rules() {
        let vol = block_volume();
        let ext = compute_brain_extent(&vol, Some(0)).unwrap();
        let rule = ExclusionRule::default();
        let (same, affected) = inject_motion(&vol, 1, 2, 0.0, &ext, &rule).unwrap();
        assert_eq!(same, vol);
        assert!(affected.is_empty());

        let (out, affected) = inject_motion(&vol, 1, 2, 0.5, &ext, &rule).unwrap();
        let kept: Vec<usize> = kept_indices(View::Sagittal, &ext, &rule).unwrap().collect();
        assert_eq!(affected, kept);
        for z in 0..20 {
            let expect = if (1..=18).contains(&z) && z % 2 == 0 { 5.0 } else { 10.0 };
            assert_eq!(out.data()[(10, 3, z, 1)], if (1..19).contains(&z) { expect } else { 0.0 });
            assert_eq!(out.data()[(10, 3, z, 0)], vol.data()[(10, 3, z, 0)]);
        }
        assert!(inject_motion(&vol, 0, 1, 0.5, &ext, &rule).is_err());
    }

    #[test]
    fn multiband_period_and_mean() {
        assert_eq!((0..4).map(|z| multiband_sign(z, 4)).collect::<Vec<_>>(), vec![0.0, 1.0, 0.0, -1.0]);
        assert_eq!((0..6).map(|z| multiband_sign(z, 6)).collect::<Vec<_>>(), vec![0.0, 1.0, 1.0, 0.0, -1.0, -1.0]);

        let img = Array3::from_elem((20, 6, 24), 3.0);
        let vol = DwiVolume::from_3d("u", img, [1.0; 3]).unwrap();
        let ext = compute_brain_extent(&vol, None).unwrap();
        let rule = ExclusionRule::default();
        let (out, affected) = inject_multiband(&vol, 0, 4, 0.3, &ext, &rule).unwrap();
        assert_eq!(affected.len(), 10);
        assert_eq!(out.data()[(0, 0, 1, 0)], 3.0 * 1.3);
        assert_eq!(out.data()[(0, 0, 3, 0)], 3.0 * 0.7);
        // numeric check: mean over a whole number of periods equals the unmodulated mean
        let mean = out.data().mean().unwrap();
        assert!((mean - 3.0).abs() < 1e-12);

        let (same, none) = inject_multiband(&vol, 0, 4, 0.0, &ext, &rule).unwrap();
        assert_eq!(same, vol);
        assert!(none.is_empty());
    }
}
