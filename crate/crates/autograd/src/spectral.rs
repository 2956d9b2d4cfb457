//! Power-iteration estimate of the top singular value.

use crate::scalar::{lit, Scalar};
use crate::tensor::Tensor;

const NORM_EPS: f64 = 1e-12;

fn normalize<T: Scalar>(v: &mut [T]) {
    let n = v.iter().map(|&x| x * x).sum::<T>().sqrt().max(lit(NORM_EPS));
    v.iter_mut().for_each(|x| *x /= n);
}

/// `uᵀ W v` for `W` stored row-major as `rows x cols`.
pub fn bilinear<T: Scalar>(w: &[T], rows: usize, cols: usize, u: &[T], v: &[T]) -> T {
    (0..rows)
        .map(|r| u[r] * w[r * cols..(r + 1) * cols].iter().zip(v).map(|(&a, &b)| a * b).sum::<T>())
        .sum()
}

/// Runs `iters` power-iteration steps (`v ← Wᵀu/‖·‖`, `u ← Wv/‖·‖`) in place
/// on `u`, then returns `v = Wᵀu/‖·‖` and the estimate `sigma = uᵀ W v`.
pub fn power_iteration<T: Scalar>(w: &[T], rows: usize, cols: usize, u: &mut [T], iters: usize) -> (Vec<T>, T) {
    assert_eq!(w.len(), rows * cols);
    assert_eq!(u.len(), rows);
    let mut v = vec![T::zero(); cols];
    let step_v = |u: &[T], v: &mut [T]| {
        v.iter_mut().for_each(|x| *x = T::zero());
        for r in 0..rows {
            let ur = u[r];
            for (x, &a) in v.iter_mut().zip(&w[r * cols..(r + 1) * cols]) {
                *x += a * ur;
            }
        }
        normalize(v);
    };
    for _ in 0..iters {
        step_v(u, &mut v);
        for (r, ur) in u.iter_mut().enumerate() {
            *ur = w[r * cols..(r + 1) * cols].iter().zip(&v).map(|(&a, &b)| a * b).sum();
        }
        normalize(u);
    }
    step_v(u, &mut v);
    let sigma = bilinear(w, rows, cols, u, &v);
    (v, sigma)
}

/// Gradient of `W / (uᵀ W v)` with `u`, `v` held fixed:
/// `G / sigma - (<G, W> / sigma^2) u vᵀ`.
pub fn backward<T: Scalar>(w: &Tensor<T>, gy: &Tensor<T>, u: &[T], v: &[T], sigma: T) -> Tensor<T> {
    let rows = u.len();
    let cols = v.len();
    let inner: T = w.data().iter().zip(gy.data()).map(|(&a, &b)| a * b).sum();
    let k = inner / (sigma * sigma);
    let inv = T::one() / sigma;
    let mut dw = gy.map(|g| g * inv);
    let d = dw.data_mut();
    for r in 0..rows {
        for c in 0..cols {
            d[r * cols + c] -= k * u[r] * v[c];
        }
    }
    dw
}
