use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub fn upsample_nearest2<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (n, c, h, w) = x.dims4();
    let mut out = Tensor::zeros(&[n, c, 2 * h, 2 * w]);
    for (src, dst) in x.data().chunks(h * w).zip(out.data_mut().chunks_mut(4 * h * w)) {
        for y in 0..2 * h {
            let row = &src[(y / 2) * w..(y / 2 + 1) * w];
            let drow = &mut dst[y * 2 * w..(y + 1) * 2 * w];
            for (xo, v) in drow.iter_mut().enumerate() {
                *v = row[xo / 2];
            }
        }
    }
    out
}

pub fn upsample_nearest2_backward<T: Scalar>(gy: &Tensor<T>) -> Tensor<T> {
    let (n, c, h2, w2) = gy.dims4();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut dx = Tensor::zeros(&[n, c, h, w]);
    for (src, dst) in gy.data().chunks(h2 * w2).zip(dx.data_mut().chunks_mut(h * w)) {
        for y in 0..h2 {
            for x in 0..w2 {
                dst[(y / 2) * w + x / 2] += src[y * w2 + x];
            }
        }
    }
    dx
}

pub fn max_pool2<T: Scalar>(x: &Tensor<T>) -> (Tensor<T>, Vec<u32>) {
    let (n, c, h, w) = x.dims4();
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[n, c, ho, wo]);
    let mut argmax = vec![0u32; n * c * ho * wo];
    for (p, (src, dst)) in x.data().chunks(h * w).zip(out.data_mut().chunks_mut(ho * wo)).enumerate() {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = (2 * oy) * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = (2 * oy + dy) * w + 2 * ox + dx;
                    if src[idx] > src[best] {
                        best = idx;
                    }
                }
                dst[oy * wo + ox] = src[best];
                argmax[p * ho * wo + oy * wo + ox] = best as u32;
            }
        }
    }
    (out, argmax)
}

pub fn max_pool2_backward<T: Scalar>(in_shape: &[usize], argmax: &[u32], gy: &Tensor<T>) -> Tensor<T> {
    let mut dx = Tensor::zeros(in_shape);
    let plane_in = in_shape[2] * in_shape[3];
    let (_, _, ho, wo) = gy.dims4();
    for (p, (g, dst)) in gy.data().chunks(ho * wo).zip(dx.data_mut().chunks_mut(plane_in)).enumerate() {
        for (i, &gv) in g.iter().enumerate() {
            dst[argmax[p * ho * wo + i] as usize] += gv;
        }
    }
    dx
}
