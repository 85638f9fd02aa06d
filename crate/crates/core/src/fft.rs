//! 2D FFT helpers over `ndarray` buffers.

use std::cell::RefCell;
use std::ops::Range;
use std::sync::Arc;

use ndarray::{s, Array2, Axis};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(n)
        } else {
            p.plan_fft_forward(n)
        }
    })
}

fn transform_lanes(data: &mut Array2<Complex64>, axis: Axis, inverse: bool) {
    let n = data.len_of(axis);
    let fft = plan(n, inverse);
    let mut buf = vec![Complex64::default(); n];
    for mut lane in data.lanes_mut(axis) {
        for (b, v) in buf.iter_mut().zip(lane.iter()) {
            *b = *v;
        }
        fft.process(&mut buf);
        for (v, b) in lane.iter_mut().zip(buf.iter()) {
            *v = *b;
        }
    }
    if inverse {
        let scale = 1.0 / n as f64;
        data.mapv_inplace(|v| v * scale);
    }
}

/// Forward transform along rows only (each column is one 1D signal).
pub fn fft_rows(data: &mut Array2<Complex64>) {
    transform_lanes(data, Axis(0), false);
}

pub fn ifft_rows(data: &mut Array2<Complex64>) {
    transform_lanes(data, Axis(0), true);
}

pub fn fft2(data: &mut Array2<Complex64>) {
    transform_lanes(data, Axis(0), false);
    transform_lanes(data, Axis(1), false);
}

/// Inverse 2D transform, normalised by `1 / (rows * cols)`.
pub fn ifft2(data: &mut Array2<Complex64>) {
    transform_lanes(data, Axis(0), true);
    transform_lanes(data, Axis(1), true);
}

/// Inverse 2D transform of which only the `rows x cols` window is kept.
pub fn ifft2_crop(data: &mut Array2<Complex64>, rows: Range<usize>, cols: Range<usize>) -> Array2<Complex64> {
    transform_lanes(data, Axis(0), true);
    let mut window = data.slice(s![rows, ..]).to_owned();
    transform_lanes(&mut window, Axis(1), true);
    window.slice(s![.., cols]).to_owned()
}

pub fn to_complex(real: &Array2<f64>) -> Array2<Complex64> {
    real.mapv(|v| Complex64::new(v, 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let a = Array2::from_shape_fn((6, 10), |(r, c)| (r * 3 + c * c) as f64 * 0.1);
        let mut k = to_complex(&a);
        fft2(&mut k);
        assert!((k[(0, 0)].re - a.sum()).abs() < 1e-9);
        ifft2(&mut k);
        for (x, y) in k.iter().zip(a.iter()) {
            assert!((x.re - y).abs() < 1e-12 && x.im.abs() < 1e-12);
        }
        let mut k = to_complex(&a);
        fft2(&mut k);
        let crop = ifft2_crop(&mut k, 1..4, 2..7);
        for ((r, c), v) in crop.indexed_iter() {
            assert!((v.re - a[(r + 1, c + 2)]).abs() < 1e-12);
        }
    }
}
