//! Separable linear resampling with half-pixel centers.
//!
//! A [`Resampler`] is the sparse `out_len x in_len` matrix of one axis. Border
//! taps are clamped onto the edge pixel, so every row of weights sums to one
//! and constant images are reproduced exactly.

use crate::scalar::{lit, Scalar};
use crate::tensor::Tensor;

/// Cubic convolution coefficient (the value OpenCV and PyTorch use).
pub const CUBIC_A: f64 = -0.75;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Filter {
    Nearest,
    Bilinear,
    Bicubic,
    /// Box filter weighted by exact pixel-interval overlap.
    Area,
}

#[derive(Clone, Debug)]
pub struct Resampler {
    in_len: usize,
    out_len: usize,
    taps: Vec<Vec<(usize, f64)>>,
}

fn cubic(x: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        ((CUBIC_A + 2.0) * x - (CUBIC_A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((CUBIC_A * x - 5.0 * CUBIC_A) * x + 8.0 * CUBIC_A) * x - 4.0 * CUBIC_A
    } else {
        0.0
    }
}

fn triangle(x: f64) -> f64 {
    (1.0 - x.abs()).max(0.0)
}

impl Resampler {
    /// With `antialias`, interpolating kernels are widened by the reduction
    /// factor when downsampling.
    pub fn new(filter: Filter, in_len: usize, out_len: usize, antialias: bool) -> Self {
        assert!(in_len > 0 && out_len > 0, "resample lengths must be positive");
        let scale = in_len as f64 / out_len as f64;
        let clamp = |i: isize| i.clamp(0, in_len as isize - 1) as usize;
        let mut taps = Vec::with_capacity(out_len);
        for o in 0..out_len {
            let mut row: Vec<(usize, f64)> = Vec::new();
            let mut push = |idx: usize, wgt: f64| {
                if wgt == 0.0 {
                    return;
                }
                match row.iter_mut().find(|(i, _)| *i == idx) {
                    Some(t) => t.1 += wgt,
                    None => row.push((idx, wgt)),
                }
            };
            match filter {
                Filter::Nearest => {
                    let src = ((o as f64) * scale).floor() as isize;
                    push(clamp(src), 1.0);
                }
                Filter::Area => {
                    let lo = o as f64 * scale;
                    let hi = (o + 1) as f64 * scale;
                    let mut i = lo.floor() as isize;
                    while (i as f64) < hi {
                        let overlap = (hi.min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0);
                        push(clamp(i), overlap);
                        i += 1;
                    }
                }
                Filter::Bilinear | Filter::Bicubic => {
                    let (kernel, radius): (fn(f64) -> f64, f64) = if filter == Filter::Bilinear {
                        (triangle, 1.0)
                    } else {
                        (cubic, 2.0)
                    };
                    let stretch = if antialias && scale > 1.0 { scale } else { 1.0 };
                    let center = (o as f64 + 0.5) * scale - 0.5;
                    let support = radius * stretch;
                    let lo = (center - support).floor() as isize;
                    let hi = (center + support).ceil() as isize;
                    for i in lo..=hi {
                        push(clamp(i), kernel((i as f64 - center) / stretch));
                    }
                }
            }
            let total: f64 = row.iter().map(|t| t.1).sum();
            for t in &mut row {
                t.1 /= total;
            }
            taps.push(row);
        }
        Resampler { in_len, out_len, taps }
    }

    pub fn in_len(&self) -> usize {
        self.in_len
    }

    pub fn out_len(&self) -> usize {
        self.out_len
    }

    /// Non-zero `(input index, weight)` pairs of one output position.
    pub fn taps(&self, out: usize) -> &[(usize, f64)] {
        &self.taps[out]
    }

    fn typed<T: Scalar>(&self) -> Vec<Vec<(usize, T)>> {
        self.taps.iter().map(|r| r.iter().map(|&(i, w)| (i, lit(w))).collect()).collect()
    }
}

/// Resizes every plane of an NCHW tensor.
pub fn apply<T: Scalar>(x: &Tensor<T>, rows: &Resampler, cols: &Resampler) -> Tensor<T> {
    let (n, c, h, w) = x.dims4();
    assert_eq!((rows.in_len, cols.in_len), (h, w), "resampler does not match input size");
    let (oh, ow) = (rows.out_len, cols.out_len);
    let (rt, ct) = (rows.typed::<T>(), cols.typed::<T>());
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let mut tmp = vec![T::zero(); h * ow];
    for (src, dst) in x.data().chunks(h * w).zip(out.data_mut().chunks_mut(oh * ow)) {
        for y in 0..h {
            let srow = &src[y * w..(y + 1) * w];
            for (ox, taps) in ct.iter().enumerate() {
                tmp[y * ow + ox] = taps.iter().map(|&(i, wt)| srow[i] * wt).sum();
            }
        }
        for (oy, taps) in rt.iter().enumerate() {
            let drow = &mut dst[oy * ow..(oy + 1) * ow];
            for &(iy, wt) in taps {
                let trow = &tmp[iy * ow..(iy + 1) * ow];
                for (d, &t) in drow.iter_mut().zip(trow) {
                    *d += t * wt;
                }
            }
        }
    }
    out
}

/// Adjoint of [`apply`]: maps output-space gradients back to the input grid.
pub fn apply_transpose<T: Scalar>(gy: &Tensor<T>, rows: &Resampler, cols: &Resampler) -> Tensor<T> {
    let (n, c, oh, ow) = gy.dims4();
    assert_eq!((rows.out_len, cols.out_len), (oh, ow), "resampler does not match gradient size");
    let (h, w) = (rows.in_len, cols.in_len);
    let (rt, ct) = (rows.typed::<T>(), cols.typed::<T>());
    let mut dx = Tensor::zeros(&[n, c, h, w]);
    let mut tmp = vec![T::zero(); h * ow];
    for (src, dst) in gy.data().chunks(oh * ow).zip(dx.data_mut().chunks_mut(h * w)) {
        tmp.iter_mut().for_each(|v| *v = T::zero());
        for (oy, taps) in rt.iter().enumerate() {
            let grow = &src[oy * ow..(oy + 1) * ow];
            for &(iy, wt) in taps {
                for (t, &g) in tmp[iy * ow..(iy + 1) * ow].iter_mut().zip(grow) {
                    *t += g * wt;
                }
            }
        }
        for y in 0..h {
            let drow = &mut dst[y * w..(y + 1) * w];
            for (ox, taps) in ct.iter().enumerate() {
                let t = tmp[y * ow + ox];
                for &(ix, wt) in taps {
                    drow[ix] += t * wt;
                }
            }
        }
    }
    dx
}

/// Convenience wrapper building both axis resamplers.
pub fn resize<T: Scalar>(x: &Tensor<T>, out_h: usize, out_w: usize, filter: Filter, antialias: bool) -> Tensor<T> {
    let (_, _, h, w) = x.dims4();
    if (h, w) == (out_h, out_w) {
        return x.clone();
    }
    apply(
        x,
        &Resampler::new(filter, h, out_h, antialias),
        &Resampler::new(filter, w, out_w, antialias),
    )
}
