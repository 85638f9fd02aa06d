use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{QcError, Result};
use crate::volume::sample_bilinear;

/// Linear-interpolated quantile (`q` in `[0, 1]`) of the slice values.
pub fn quantile(values: &Array2<f64>, q: f64) -> f64 {
    let mut v: Vec<f64> = values.iter().cloned().collect();
    v.sort_by(|a, b| a.total_cmp(b));
    if v.is_empty() {
        return 0.0;
    }
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

/// Fat/water shift: pixels strictly above the `rim_quantile` quantile are
/// copied `shift_px` columns along the frequency-encode axis and blended onto
/// the original with weight `blend`. Sources always come from the input, so
/// overlapping copies do not cascade.
pub fn inject_chemical_shift(
    slice: &Array2<f64>,
    shift_px: i64,
    rim_quantile: f64,
    blend: f64,
) -> Result<Array2<f64>> {
    if shift_px == 0 {
        return Err(QcError::invalid("chemical shift of 0 px"));
    }
    if !(0.0..=1.0).contains(&rim_quantile) || !(0.0..=1.0).contains(&blend) {
        return Err(QcError::invalid("rim quantile and blend must lie in [0, 1]"));
    }
    let threshold = quantile(slice, rim_quantile);
    let (_, w) = slice.dim();
    let mut out = slice.clone();
    for ((r, c), &v) in slice.indexed_iter() {
        if v <= threshold {
            continue;
        }
        let target = c as i64 + shift_px;
        if target < 0 || target >= w as i64 {
            continue;
        }
        let t = (r, target as usize);
        out[t] = (1.0 - blend) * slice[t] + blend * v;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SusceptibilityParams {
    /// Disk centre `(row, col)`.
    pub center: (usize, usize),
    pub radius: usize,
    /// Peak displacement in pixels along the phase-encode (row) axis.
    pub warp_scale: f64,
    pub severity: f64,
    /// Signal inside the disk is scaled by `1 - attenuation_coeff * severity`.
    pub attenuation_coeff: f64,
}

impl SusceptibilityParams {
    pub fn new(center: (usize, usize), radius: usize, warp_scale: f64, severity: f64) -> Self {
        SusceptibilityParams {
            center,
            radius,
            warp_scale,
            severity,
            attenuation_coeff: 0.5,
        }
    }
}

/// Local distortion and signal loss near a susceptibility boundary. Inside
/// the disk each pixel is resampled from `row + d(rho)` with the Gaussian
/// profile `d(rho) = warp_scale * exp(-rho^2 / (2 (radius/3)^2))`, then
/// attenuated. Pixels outside the disk are untouched.
pub fn inject_susceptibility(slice: &Array2<f64>, p: &SusceptibilityParams) -> Result<Array2<f64>> {
    if p.radius < 2 {
        return Err(QcError::invalid(format!("susceptibility radius {} < 2", p.radius)));
    }
    let (h, w) = slice.dim();
    let (cr, cc) = p.center;
    if cr < p.radius || cc < p.radius || cr + p.radius >= h || cc + p.radius >= w {
        return Err(QcError::invalid(format!(
            "disk at {:?} with radius {} leaves the {h}x{w} slice",
            p.center, p.radius
        )));
    }
    if !p.warp_scale.is_finite() || !(0.0..=1.0).contains(&p.severity) {
        return Err(QcError::invalid("warp scale must be finite and severity in [0, 1]"));
    }
    if p.warp_scale == 0.0 && p.severity == 0.0 {
        return Ok(slice.clone());
    }
    let gain = 1.0 - p.attenuation_coeff * p.severity;
    let sigma = p.radius as f64 / 3.0;
    let r2 = (p.radius * p.radius) as f64;
    let view = slice.view();
    let mut out = slice.clone();
    for r in cr - p.radius..=cr + p.radius {
        for c in cc - p.radius..=cc + p.radius {
            let dr = r as f64 - cr as f64;
            let dc = c as f64 - cc as f64;
            let rho2 = dr * dr + dc * dc;
            if rho2 > r2 {
                continue;
            }
            let d = p.warp_scale * (-rho2 / (2.0 * sigma * sigma)).exp();
            let src = (r as f64 + d).clamp(0.0, (h - 1) as f64);
            out[(r, c)] = gain * sample_bilinear(&view, src, c as f64, 0.0);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chemical_shift_rules() {
        let zero = Array2::<f64>::zeros((8, 8));
        assert_eq!(inject_chemical_shift(&zero, 2, 0.9, 0.6).unwrap(), zero);
        assert!(inject_chemical_shift(&zero, 0, 0.9, 0.6).is_err());

        let mut img = Array2::<f64>::zeros((8, 8));
        img[(3, 2)] = 10.0;
        let out = inject_chemical_shift(&img, 2, 0.9, 0.6).unwrap();
        assert_eq!(out[(3, 4)], 6.0);
        assert_eq!(out[(3, 2)], 10.0);
        let changed = out.iter().zip(img.iter()).filter(|(a, b)| a != b).count();
        assert_eq!(changed, 1);
    }

    #[test]
    fn chemical_shift_changes_only_shifted_rim() {
        let img = Array2::from_shape_fn((16, 16), |(r, c)| ((r * 7 + c * 3) % 11) as f64);
        let shift = -3;
        let out = inject_chemical_shift(&img, shift, 0.8, 0.6).unwrap();
        let t = quantile(&img, 0.8);
        // diff-mask oracle: every changed pixel is a shifted copy of a rim pixel
        for ((r, c), &b) in img.indexed_iter() {
            if (out[(r, c)] - b).abs() > 1e-12 {
                let src = c as i64 - shift;
                assert!(src >= 0 && src < 16 && img[(r, src as usize)] > t);
            }
        }
    }

    #[test]
    fn quantile_interpolates() {
        let a = Array2::from_shape_vec((1, 5), vec![5.0, 1.0, 3.0, 2.0, 4.0]).unwrap();
        assert_eq!(quantile(&a, 0.5), 3.0);
        assert_eq!(quantile(&a, 0.875), 4.5);
    }

    #[test]
    fn susceptibility_identity_and_dip() {
        let img = Array2::from_elem((32, 32), 4.0);
        let mut p = SusceptibilityParams::new((16, 16), 5, 0.0, 0.0);
        assert_eq!(inject_susceptibility(&img, &p).unwrap(), img);
        p.severity = 1.0;
        let out = inject_susceptibility(&img, &p).unwrap();
        for ((r, c), &v) in out.indexed_iter() {
            let inside = (r as f64 - 16.0).powi(2) + (c as f64 - 16.0).powi(2) <= 25.0;
            assert_eq!(v, if inside { 2.0 } else { 4.0 });
        }
    }

    #[test]
    fn susceptibility_checkerboard_phase_at_centre() {
        let img = Array2::from_shape_fn((32, 32), |(r, c)| ((r + c) % 2) as f64);
        let p = SusceptibilityParams::new((15, 15), 6, 1.0, 0.0);
        let out = inject_susceptibility(&img, &p).unwrap();
        // resampling oracle: centre reads one row down, flipping the phase
        assert_eq!(out[(15, 15)], img[(16, 15)]);
        assert_ne!(out[(15, 15)], img[(15, 15)]);
        assert_eq!(out[(0, 0)], img[(0, 0)]);
    }

    #[test]
    fn susceptibility_bounds() {
        let img = Array2::<f64>::zeros((16, 16));
        assert!(inject_susceptibility(&img, &SusceptibilityParams::new((8, 8), 1, 1.0, 0.5)).is_err());
        assert!(inject_susceptibility(&img, &SusceptibilityParams::new((2, 8), 4, 1.0, 0.5)).is_err());
        assert!(inject_susceptibility(&img, &SusceptibilityParams::new((8, 12), 4, 1.0, 0.5)).is_err());
    }
}
