//! im2col convolution kernels.

use crate::scalar::{gemm, MatRef, Scalar};
use crate::tensor::Tensor;

/// Upper bound on the im2col scratch buffer, in elements.
const MAX_COL: usize = 1 << 22;

#[derive(Clone, Copy)]
struct Geom {
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geom {
    fn new(x: &[usize], wshape: &[usize], stride: usize, pad: usize) -> Self {
        let (cin, h, w) = (x[1], x[2], x[3]);
        assert_eq!(wshape.len(), 4, "conv weight must be [Cout, Cin, k, k]");
        assert_eq!(wshape[1], cin, "conv weight expects {} input channels, input has {}", wshape[1], cin);
        let k = wshape[2];
        assert_eq!(wshape[3], k, "only square kernels are supported");
        assert!(stride >= 1);
        assert!(h + 2 * pad >= k && w + 2 * pad >= k, "input {h}x{w} smaller than kernel {k}");
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        Geom { cin, h, w, k, stride, pad, ho, wo }
    }

    fn kdim(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn tile_rows(&self) -> usize {
        (MAX_COL / (self.kdim() * self.wo).max(1)).clamp(1, self.ho)
    }
}

fn im2col<T: Scalar>(x: &[T], g: &Geom, oy0: usize, oy1: usize, col: &mut [T]) {
    let t = (oy1 - oy0) * g.wo;
    for c in 0..g.cin {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let dst = &mut col[row * t..(row + 1) * t];
                for oy in oy0..oy1 {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let out = &mut dst[(oy - oy0) * g.wo..(oy - oy0 + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        out.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in out.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *v = if ix >= 0 && ix < g.w as isize { src[ix as usize] } else { T::zero() };
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(col: &[T], g: &Geom, oy0: usize, oy1: usize, dx: &mut [T]) {
    let t = (oy1 - oy0) * g.wo;
    for c in 0..g.cin {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let src = &col[row * t..(row + 1) * t];
                for oy in oy0..oy1 {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let vals = &src[(oy - oy0) * g.wo..(oy - oy0 + 1) * g.wo];
                    for (ox, &v) in vals.iter().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

pub fn forward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, bias: Option<&[T]>, stride: usize, pad: usize) -> Tensor<T> {
    let g = Geom::new(x.shape(), w.shape(), stride, pad);
    let n = x.shape()[0];
    let cout = w.shape()[0];
    let kdim = g.kdim();
    let hw_out = g.ho * g.wo;
    let mut out = Tensor::zeros(&[n, cout, g.ho, g.wo]);
    let in_per = g.cin * g.h * g.w;
    let tile = g.tile_rows();
    let mut col = if g.pointwise() { Vec::new() } else { vec![T::zero(); kdim * tile * g.wo] };
    let wmat = MatRef::new(w.data(), cout, kdim);
    for b in 0..n {
        let xb = &x.data()[b * in_per..(b + 1) * in_per];
        let ob = &mut out.data_mut()[b * cout * hw_out..(b + 1) * cout * hw_out];
        if g.pointwise() {
            gemm(wmat, MatRef::new(xb, kdim, hw_out), T::zero(), ob, hw_out);
        } else {
            let mut oy0 = 0;
            while oy0 < g.ho {
                let oy1 = (oy0 + tile).min(g.ho);
                let t = (oy1 - oy0) * g.wo;
                im2col(xb, &g, oy0, oy1, &mut col);
                gemm(wmat, MatRef::new(&col[..kdim * t], kdim, t), T::zero(), &mut ob[oy0 * g.wo..], hw_out);
                oy0 = oy1;
            }
        }
        if let Some(bias) = bias {
            for (co, plane) in ob.chunks_mut(hw_out).enumerate() {
                let bv = bias[co];
                plane.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    out
}

/// Gradients of [`forward`] with respect to input, weight and bias.
/// Input, weight and bias gradients, each present only when requested.
pub type ConvGrads<T> = (Option<Tensor<T>>, Option<Tensor<T>>, Option<Tensor<T>>);

#[allow(clippy::too_many_arguments)]
pub fn backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    gy: &Tensor<T>,
    stride: usize,
    pad: usize,
    need_dx: bool,
    need_dw: bool,
    need_db: bool,
) -> ConvGrads<T> {
    let g = Geom::new(x.shape(), w.shape(), stride, pad);
    let n = x.shape()[0];
    let cout = w.shape()[0];
    let kdim = g.kdim();
    let hw_out = g.ho * g.wo;
    let in_per = g.cin * g.h * g.w;

    let db = need_db.then(|| {
        let mut db = vec![T::zero(); cout];
        for (i, plane) in gy.data().chunks(hw_out).enumerate() {
            db[i % cout] += plane.iter().copied().sum::<T>();
        }
        Tensor::from_vec(&[cout], db).expect("bias grad")
    });
    if !need_dx && !need_dw {
        return (None, None, db);
    }

    let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));
    let mut dw = need_dw.then(|| Tensor::zeros(w.shape()));
    let tile = g.tile_rows();
    let mut col = vec![T::zero(); if g.pointwise() { 0 } else { kdim * tile * g.wo }];
    let mut dcol = vec![T::zero(); if need_dx && !g.pointwise() { kdim * tile * g.wo } else { 0 }];
    let wt = MatRef::transposed(w.data(), kdim, cout);

    for b in 0..n {
        let xb = &x.data()[b * in_per..(b + 1) * in_per];
        let gb = &gy.data()[b * cout * hw_out..(b + 1) * cout * hw_out];
        if g.pointwise() {
            if let Some(dw) = dw.as_mut() {
                gemm(
                    MatRef::new(gb, cout, hw_out),
                    MatRef::transposed(xb, hw_out, kdim),
                    T::one(),
                    dw.data_mut(),
                    kdim,
                );
            }
            if let Some(dx) = dx.as_mut() {
                let dxb = &mut dx.data_mut()[b * in_per..(b + 1) * in_per];
                gemm(wt, MatRef::new(gb, cout, hw_out), T::zero(), dxb, hw_out);
            }
            continue;
        }
        let mut oy0 = 0;
        while oy0 < g.ho {
            let oy1 = (oy0 + tile).min(g.ho);
            let t = (oy1 - oy0) * g.wo;
            let gtile = MatRef::strided(&gb[oy0 * g.wo..], cout, t, hw_out);
            if let Some(dw) = dw.as_mut() {
                im2col(xb, &g, oy0, oy1, &mut col);
                gemm(gtile, MatRef::transposed(&col[..kdim * t], t, kdim), T::one(), dw.data_mut(), kdim);
            }
            if let Some(dx) = dx.as_mut() {
                gemm(wt, gtile, T::zero(), &mut dcol[..kdim * t], t);
                let dxb = &mut dx.data_mut()[b * in_per..(b + 1) * in_per];
                col2im(&dcol[..kdim * t], &g, oy0, oy1, dxb);
            }
            oy0 = oy1;
        }
    }
    (dx, dw, db)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
        let (n, cin, h, wd) = x.dims4();
        let (cout, _, k, _) = w.dims4();
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (wd + 2 * pad - k) / stride + 1;
        let mut out = Tensor::zeros(&[n, cout, ho, wo]);
        for b in 0..n {
            for co in 0..cout {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = 0.0;
                        for ci in 0..cin {
                            for ki in 0..k {
                                for kj in 0..k {
                                    let iy = (oy * stride + ki) as isize - pad as isize;
                                    let ix = (ox * stride + kj) as isize - pad as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    acc += x.data()[((b * cin + ci) * h + iy as usize) * wd + ix as usize]
                                        * w.data()[((co * cin + ci) * k + ki) * k + kj];
                                }
                            }
                        }
                        out.data_mut()[((b * cout + co) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn forward_matches_direct_loops() {
        use rand::SeedableRng;
        let mut rng = rand::rngs::StdRng::seed_from_u64(7);
        for &(k, stride, pad) in &[(3, 1, 1), (4, 2, 1), (1, 1, 0), (3, 2, 0)] {
            let x = Tensor::<f64>::randn(&[2, 3, 9, 7], 1.0, &mut rng);
            let w = Tensor::<f64>::randn(&[4, 3, k, k], 1.0, &mut rng);
            let got = forward(&x, &w, None, stride, pad);
            let want = naive(&x, &w, stride, pad);
            assert_eq!(got.shape(), want.shape());
            for (a, b) in got.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-10, "k={k} s={stride} p={pad}: {a} vs {b}");
            }
        }
    }
}
