//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

use psfr_autograd::{Graph, Tensor, Var};

/// `Σ_p φ_i(p) m(p) · φ_j(p) m(p) / (Σ_p m(p) + eps)` by explicit loops.
pub fn gram_oracle(phi: &[f64], c: usize, hw: usize, mask: &[f64], eps: f64) -> Vec<f64> {
    let denom: f64 = mask.iter().sum::<f64>() + eps;
    let mut out = vec![0.0; c * c];
    for i in 0..c {
        for j in 0..c {
            let mut acc = 0.0;
            for p in 0..hw {
                acc += phi[i * hw + p] * mask[p] * phi[j * hw + p] * mask[p];
            }
            out[i * c + j] = acc / denom;
        }
    }
    out
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix; returns
/// eigenvalues and column eigenvectors (row-major `n x n`).
pub fn jacobi_eigen(a: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut a = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i * n + j].powi(2)).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i * n + i]).collect(), v)
}

pub fn matmul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            for j in 0..n {
                out[i * n + j] += a[i * n + k] * b[k * n + j];
            }
        }
    }
    out
}

/// Symmetric PSD square root through the Jacobi oracle.
pub fn sqrt_sym(a: &[f64], n: usize) -> Vec<f64> {
    let (vals, v) = jacobi_eigen(a, n);
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = (0..n).map(|k| v[i * n + k] * vals[k].max(0.0).sqrt() * v[j * n + k]).sum();
        }
    }
    out
}

/// Fréchet distance between Gaussians using the Jacobi oracle.
pub fn frechet_oracle(m1: &[f64], c1: &[f64], m2: &[f64], c2: &[f64]) -> f64 {
    let n = m1.len();
    let diff: f64 = m1.iter().zip(m2).map(|(a, b)| (a - b).powi(2)).sum();
    let s1 = sqrt_sym(c1, n);
    let inner = matmul(&matmul(&s1, c2, n), &s1, n);
    let sym: Vec<f64> = (0..n * n).map(|k| 0.5 * (inner[k] + inner[(k % n) * n + k / n])).collect();
    let root = sqrt_sym(&sym, n);
    let tr = |m: &[f64]| (0..n).map(|i| m[i * n + i]).sum::<f64>();
    diff + tr(c1) + tr(c2) - 2.0 * tr(&root)
}

/// Analytic gradient of the scalar `f` at `x` and its central-difference
/// estimate at the listed coordinates.
pub fn grad_pair(
    x: &Tensor<f64>,
    coords: &[usize],
    h: f64,
    f: impl Fn(&mut Graph<f64>, Var) -> Var,
) -> Vec<(f64, f64)> {
    let mut g = Graph::new();
    let v = g.leaf(x.clone());
    let out = f(&mut g, v);
    let grads = g.backward(out).unwrap();
    let analytic = grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(x.shape()));
    let eval = |t: Tensor<f64>| {
        let mut g = Graph::new();
        let v = g.input(t);
        let o = f(&mut g, v);
        g.value(o).item()
    };
    coords
        .iter()
        .map(|&i| {
            let mut p = x.clone();
            p.data_mut()[i] += h;
            let mut m = x.clone();
            m.data_mut()[i] -= h;
            (analytic.data()[i], (eval(p) - eval(m)) / (2.0 * h))
        })
        .collect()
}

/// `‖a − n‖ / max(‖n‖, floor)` over gradient pairs.
pub fn rel_err(pairs: &[(f64, f64)], floor: f64) -> f64 {
    let num: f64 = pairs.iter().map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let den: f64 = pairs.iter().map(|(_, n)| n * n).sum::<f64>().sqrt();
    num / den.max(floor)
}
