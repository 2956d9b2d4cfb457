//! Instance and batch normalization kernels.

use crate::graph::BatchStats;
use crate::scalar::{lit, Scalar};
use crate::tensor::Tensor;

pub fn instance_forward<T: Scalar>(x: &Tensor<T>, eps: T) -> (Tensor<T>, Vec<T>) {
    let (_, _, h, w) = x.dims4();
    let plane = h * w;
    let inv_n: T = lit(1.0 / plane as f64);
    let mut y = x.clone();
    let mut inv_std = Vec::with_capacity(x.numel() / plane);
    for chunk in y.data_mut().chunks_mut(plane) {
        let mean = chunk.iter().copied().sum::<T>() * inv_n;
        let var = chunk.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_n;
        let inv = T::one() / (var + eps).sqrt();
        for v in chunk.iter_mut() {
            *v = (*v - mean) * inv;
        }
        inv_std.push(inv);
    }
    (y, inv_std)
}

/// `dx = inv * (dy - mean(dy) - y * mean(dy * y))` per plane.
pub fn instance_backward<T: Scalar>(y: &Tensor<T>, inv_std: &[T], gy: &Tensor<T>) -> Tensor<T> {
    let (_, _, h, w) = y.dims4();
    let plane = h * w;
    let inv_n: T = lit(1.0 / plane as f64);
    let mut dx = gy.clone();
    for (i, (dxp, yp)) in dx.data_mut().chunks_mut(plane).zip(y.data().chunks(plane)).enumerate() {
        let mean_g = dxp.iter().copied().sum::<T>() * inv_n;
        let mean_gy = dxp.iter().zip(yp).map(|(&g, &yv)| g * yv).sum::<T>() * inv_n;
        let inv = inv_std[i];
        for (g, &yv) in dxp.iter_mut().zip(yp) {
            *g = inv * (*g - mean_g - yv * mean_gy);
        }
    }
    dx
}

/// Returns `(y, mean, inv_std, batch_stats)`; batch statistics only in
/// training mode (`running == None`).
#[allow(clippy::type_complexity)]
pub fn batch_forward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    running: Option<(&[T], &[T])>,
    eps: T,
) -> (Tensor<T>, Vec<T>, Vec<T>, Option<BatchStats<T>>) {
    let (n, c, h, w) = x.dims4();
    let plane = h * w;
    let count = n * plane;
    let (mean, var_biased, stats) = match running {
        Some((rm, rv)) => (rm.to_vec(), rv.to_vec(), None),
        None => {
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            for (i, p) in x.data().chunks(plane).enumerate() {
                mean[i % c] += p.iter().copied().sum::<T>();
            }
            let inv_count: T = lit(1.0 / count as f64);
            mean.iter_mut().for_each(|m| *m *= inv_count);
            for (i, p) in x.data().chunks(plane).enumerate() {
                let m = mean[i % c];
                var[i % c] += p.iter().map(|&v| (v - m) * (v - m)).sum::<T>();
            }
            let unbiased: Vec<T> =
                var.iter().map(|&v| v / lit((count.max(2) - 1) as f64)).collect();
            var.iter_mut().for_each(|v| *v *= inv_count);
            let stats = BatchStats { mean: mean.clone(), var: unbiased };
            (mean, var, Some(stats))
        }
    };
    let inv_std: Vec<T> = var_biased.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut y = x.clone();
    for (i, p) in y.data_mut().chunks_mut(plane).enumerate() {
        let ch = i % c;
        let (m, inv, g, b) = (mean[ch], inv_std[ch], gamma[ch], beta[ch]);
        for v in p.iter_mut() {
            *v = (*v - m) * inv * g + b;
        }
    }
    (y, mean, inv_std, stats)
}

pub fn batch_backward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &[T],
    mean: &[T],
    inv_std: &[T],
    gy: &Tensor<T>,
    train: bool,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (n, c, h, w) = x.dims4();
    let plane = h * w;
    let count: T = lit((n * plane) as f64);
    let mut sum_g = vec![T::zero(); c];
    let mut sum_gx = vec![T::zero(); c];
    for (i, (gp, xp)) in gy.data().chunks(plane).zip(x.data().chunks(plane)).enumerate() {
        let ch = i % c;
        let (m, inv) = (mean[ch], inv_std[ch]);
        for (&g, &xv) in gp.iter().zip(xp) {
            sum_g[ch] += g;
            sum_gx[ch] += g * (xv - m) * inv;
        }
    }
    let mut dx = gy.clone();
    for (i, (dp, xp)) in dx.data_mut().chunks_mut(plane).zip(x.data().chunks(plane)).enumerate() {
        let ch = i % c;
        let (m, inv, g) = (mean[ch], inv_std[ch], gamma[ch]);
        if train {
            let k = g * inv / count;
            for (d, &xv) in dp.iter_mut().zip(xp) {
                let xhat = (xv - m) * inv;
                *d = k * (count * *d - sum_g[ch] - xhat * sum_gx[ch]);
            }
        } else {
            let k = g * inv;
            dp.iter_mut().for_each(|d| *d *= k);
        }
    }
    (
        dx,
        Tensor::from_vec(&[c], sum_gx).expect("gamma grad"),
        Tensor::from_vec(&[c], sum_g).expect("beta grad"),
    )
}
