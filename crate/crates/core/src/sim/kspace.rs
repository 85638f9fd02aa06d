use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{QcError, Result};
use crate::fft;

/// Nyquist ghost: odd phase-encode lines of k-space are scaled by `1 - alpha`,
/// even lines by `1 + alpha`. For an even row count this equals
/// `in + alpha * roll(in, rows / 2)` in the image domain.
pub fn inject_ghosting(slice: &Array2<f64>, alpha: f64) -> Result<Array2<f64>> {
    if !alpha.is_finite() {
        return Err(QcError::invalid(format!("ghost alpha {alpha} is not finite")));
    }
    if alpha == 0.0 {
        return Ok(slice.clone());
    }
    let mut k = fft::to_complex(slice);
    fft::fft_rows(&mut k);
    for (row, mut line) in k.outer_iter_mut().enumerate() {
        let gain = if row % 2 == 1 { 1.0 - alpha } else { 1.0 + alpha };
        line.mapv_inplace(|v| v * gain);
    }
    fft::ifft_rows(&mut k);
    Ok(k.mapv(|v| v.re))
}

/// Amplitude giving a stripe peak-to-peak of `severity` times the slice's
/// dynamic range.
pub fn herringbone_amplitude(slice: &Array2<f64>, severity: f64) -> f64 {
    let (lo, hi) = slice
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    severity * (hi - lo).max(0.0) / 2.0
}

/// Spurious k-space spike at `(ku, kv)` and its conjugate, producing
/// `in + A cos(2 pi (ku x / X + kv y / Y) + phase)` with `x` the row and `y`
/// the column index.
pub fn inject_herringbone(
    slice: &Array2<f64>,
    spike: (i64, i64),
    amplitude: f64,
    phase: f64,
) -> Result<Array2<f64>> {
    let (h, w) = slice.dim();
    let ku = spike.0.rem_euclid(h as i64) as usize;
    let kv = spike.1.rem_euclid(w as i64) as usize;
    if ku == 0 && kv == 0 {
        return Err(QcError::invalid("herringbone spike at the k-space origin (DC)"));
    }
    if !amplitude.is_finite() || !phase.is_finite() {
        return Err(QcError::invalid("herringbone amplitude and phase must be finite"));
    }
    if amplitude == 0.0 {
        return Ok(slice.clone());
    }
    let mut k = fft::to_complex(slice);
    fft::fft2(&mut k);
    let energy = amplitude * (h * w) as f64 / 2.0;
    k[(ku, kv)] += Complex64::from_polar(energy, phase);
    let conj = ((h - ku) % h, (w - kv) % w);
    k[conj] += Complex64::from_polar(energy, -phase);
    fft::ifft2(&mut k);
    Ok(k.mapv(|v| v.re))
}

#[allow(dead_code)]
pub(crate) fn herringbone_closed_form(slice: &Array2<f64>, spike: (i64, i64), amplitude: f64, phase: f64) -> Array2<f64> {
    let (h, w) = slice.dim();
    Array2::from_shape_fn((h, w), |(x, y)| {
        slice[(x, y)]
            + amplitude
                * (2.0 * PI * (spike.0 as f64 * x as f64 / h as f64 + spike.1 as f64 * y as f64 / w as f64) + phase).cos()
    })
}
