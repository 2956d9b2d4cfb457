//! Loss kernels: mean squared error, softmax cross-entropy, masked Gram.

use crate::error::{Error, Result};
use crate::scalar::{gemm, lit, MatRef, Scalar};
use crate::tensor::Tensor;

pub fn mse<T: Scalar>(a: &[T], b: &[T]) -> T {
    let s: T = a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum();
    s / lit(a.len().max(1) as f64)
}

fn check_labels<T: Scalar>(logits: &Tensor<T>, labels: &[u8]) -> Result<(usize, usize, usize)> {
    let (n, k, h, w) = logits.dims4();
    if labels.len() != n * h * w {
        return Err(Error::Shape(format!(
            "{} labels for logits of shape {:?}",
            labels.len(),
            logits.shape()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= k) {
        return Err(Error::Shape(format!("label {bad} outside [0, {})", k)));
    }
    Ok((n, k, h * w))
}

pub fn softmax_xent_forward<T: Scalar>(logits: &Tensor<T>, labels: &[u8]) -> Result<T> {
    let (n, k, plane) = check_labels(logits, labels)?;
    let d = logits.data();
    let mut total = T::zero();
    for b in 0..n {
        let base = b * k * plane;
        for p in 0..plane {
            let at = |c: usize| d[base + c * plane + p];
            let max = (0..k).map(at).fold(T::neg_infinity(), T::max);
            let lse = (0..k).map(|c| (at(c) - max).exp()).sum::<T>().ln() + max;
            total += lse - at(labels[b * plane + p] as usize);
        }
    }
    Ok(total / lit((n * plane) as f64))
}

pub fn softmax_xent_backward<T: Scalar>(logits: &Tensor<T>, labels: &[u8], gy: T) -> Tensor<T> {
    let (n, k, h, w) = logits.dims4();
    let plane = h * w;
    let scale = gy / lit((n * plane) as f64);
    let d = logits.data();
    let mut dx = Tensor::zeros(logits.shape());
    let out = dx.data_mut();
    let mut probs = vec![T::zero(); k];
    for b in 0..n {
        let base = b * k * plane;
        for p in 0..plane {
            let max = (0..k).map(|c| d[base + c * plane + p]).fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for (c, pr) in probs.iter_mut().enumerate() {
                *pr = (d[base + c * plane + p] - max).exp();
                z += *pr;
            }
            let label = labels[b * plane + p] as usize;
            for (c, &pr) in probs.iter().enumerate() {
                let target = if c == label { T::one() } else { T::zero() };
                out[base + c * plane + p] = (pr / z - target) * scale;
            }
        }
    }
    dx
}

fn check_mask<T: Scalar>(phi: &Tensor<T>, mask: &Tensor<T>) -> Result<()> {
    let (n, _, h, w) = phi.dims4();
    if mask.shape() != [n, h, w] {
        return Err(Error::Shape(format!(
            "mask {:?} does not match features {:?}",
            mask.shape(),
            phi.shape()
        )));
    }
    Ok(())
}

/// `G_b = (phi_b ⊙ m_b)(phi_b ⊙ m_b)ᵀ / (Σ m_b + eps)`, with `phi_b` viewed as
/// `C x HW`. Returns the Gram matrices and the per-sample denominators.
pub fn masked_gram_forward<T: Scalar>(phi: &Tensor<T>, mask: &Tensor<T>, eps: T) -> Result<(Tensor<T>, Vec<T>)> {
    check_mask(phi, mask)?;
    let (n, c, h, w) = phi.dims4();
    let plane = h * w;
    let mut out = Tensor::zeros(&[n, c, c]);
    let mut denom = Vec::with_capacity(n);
    let mut scaled = vec![T::zero(); c * plane];
    for b in 0..n {
        let m = &mask.data()[b * plane..(b + 1) * plane];
        let d = m.iter().copied().sum::<T>() + eps;
        denom.push(d);
        let g = &mut out.data_mut()[b * c * c..(b + 1) * c * c];
        if m.iter().all(|&v| v == T::zero()) {
            continue;
        }
        let src = &phi.data()[b * c * plane..(b + 1) * c * plane];
        for (srow, drow) in src.chunks(plane).zip(scaled.chunks_mut(plane)) {
            for ((dv, &sv), &mv) in drow.iter_mut().zip(srow).zip(m) {
                *dv = sv * mv;
            }
        }
        gemm(
            MatRef::new(&scaled, c, plane),
            MatRef::transposed(&scaled, plane, c),
            T::zero(),
            g,
            c,
        );
        let inv = T::one() / d;
        g.iter_mut().for_each(|v| *v *= inv);
    }
    Ok((out, denom))
}

/// `dphi_b = ((Ĝ + Ĝᵀ)(phi_b ⊙ m_b) / D_b) ⊙ m_b`.
pub fn masked_gram_backward<T: Scalar>(phi: &Tensor<T>, mask: &Tensor<T>, denom: &[T], gy: &Tensor<T>) -> Tensor<T> {
    let (n, c, h, w) = phi.dims4();
    let plane = h * w;
    let mut dphi = Tensor::zeros(phi.shape());
    let mut scaled = vec![T::zero(); c * plane];
    let mut sym = vec![T::zero(); c * c];
    for (b, &d) in denom.iter().enumerate().take(n) {
        let m = &mask.data()[b * plane..(b + 1) * plane];
        if m.iter().all(|&v| v == T::zero()) {
            continue;
        }
        let src = &phi.data()[b * c * plane..(b + 1) * c * plane];
        for (srow, drow) in src.chunks(plane).zip(scaled.chunks_mut(plane)) {
            for ((dv, &sv), &mv) in drow.iter_mut().zip(srow).zip(m) {
                *dv = sv * mv;
            }
        }
        let g = &gy.data()[b * c * c..(b + 1) * c * c];
        let inv = T::one() / d;
        for i in 0..c {
            for j in 0..c {
                sym[i * c + j] = (g[i * c + j] + g[j * c + i]) * inv;
            }
        }
        let out = &mut dphi.data_mut()[b * c * plane..(b + 1) * c * plane];
        gemm(MatRef::new(&sym, c, c), MatRef::new(&scaled, c, plane), T::zero(), out, plane);
        for row in out.chunks_mut(plane) {
            for (v, &mv) in row.iter_mut().zip(m) {
                *v *= mv;
            }
        }
    }
    dphi
}
