use std::rc::Rc;

use crate::conv;
use crate::error::{Error, Result};
use crate::loss;
use crate::norm;
use crate::pool;
use crate::resample::Resampler;
use crate::scalar::{lit, Scalar};
use crate::spectral;
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Input,
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    LeakyRelu(Var, T),
    Tanh(Var),
    Conv2d { x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize },
    SpectralNorm { w: Var, u: Vec<T>, v: Vec<T>, sigma: T },
    InstanceNorm { x: Var, inv_std: Vec<T> },
    BatchNorm { x: Var, gamma: Var, beta: Var, mean: Vec<T>, inv_std: Vec<T>, train: bool },
    ChannelAffine { x: Var, scale: Vec<T> },
    UpsampleNearest2(Var),
    MaxPool2 { x: Var, argmax: Vec<u32> },
    Resize { x: Var, rows: Rc<Resampler>, cols: Rc<Resampler> },
    ConcatChannels(Vec<Var>),
    BroadcastBatch(Var),
    Mean(Var),
    Mse(Var, Var),
    SoftmaxXent { logits: Var, labels: Rc<Vec<u8>> },
    MaskedGram { phi: Var, mask: Rc<Tensor<T>>, denom: Vec<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Batch statistics observed by a training-mode batch norm, returned so the
/// caller can update running averages.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Unbiased variance.
    pub var: Vec<T>,
}

/// Reverse-mode tape. Nodes are appended by the op methods; [`Graph::backward`]
/// walks them in reverse.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Graph::backward`] for every leaf node.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot => *slot = Some(g),
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant input; never receives a gradient.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Input, false)
    }

    /// Differentiable leaf (a parameter, or an input under a gradient check).
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Copies a node's value into a new constant, cutting gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.input(value)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) {
        assert_eq!(
            self.value(a).shape(),
            self.value(b).shape(),
            "{what}: operand shapes differ"
        );
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "add");
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "sub");
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "mul");
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let value = self.value(a).map(|x| x * s);
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, s), rg)
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Var {
        let value = self.value(a).map(|x| x + s);
        let rg = self.rg(a);
        self.push(value, Op::AddScalar(a), rg)
    }

    /// `max(x, 0) + slope * min(x, 0)`; slope 0 is a plain ReLU.
    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Var {
        let value = self.value(a).map(|x| if x > T::zero() { x } else { x * slope });
        let rg = self.rg(a);
        self.push(value, Op::LeakyRelu(a, slope), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.leaky_relu(a, T::zero())
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.tanh());
        let rg = self.rg(a);
        self.push(value, Op::Tanh(a), rg)
    }

    /// 2-D cross-correlation with zero padding. `w` is `[Cout, Cin, k, k]`,
    /// `b` is `[Cout]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let bias = b.map(|b| self.value(b).data());
        let value = conv::forward(self.value(x), self.value(w), bias, stride, pad);
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        self.push(value, Op::Conv2d { x, w, b, stride, pad }, rg)
    }

    /// `w / sigma`, with `sigma = uᵀ W v` for fixed singular-vector estimates
    /// `u` (rows) and `v` (columns) of `w` viewed as `[Cout, rest]`.
    pub fn spectral_norm(&mut self, w: Var, u: &[T], v: &[T]) -> Var {
        let wt = self.value(w);
        let rows = wt.shape()[0];
        let cols = wt.numel() / rows;
        assert_eq!((u.len(), v.len()), (rows, cols), "spectral_norm vector sizes");
        let sigma = spectral::bilinear(wt.data(), rows, cols, u, v);
        let inv = T::one() / sigma;
        let value = wt.map(|x| x * inv);
        let rg = self.rg(w);
        self.push(value, Op::SpectralNorm { w, u: u.to_vec(), v: v.to_vec(), sigma }, rg)
    }

    /// Per-sample, per-channel normalization over the spatial axes:
    /// `(x - mean) / sqrt(var + eps)` with the biased variance.
    pub fn instance_norm(&mut self, x: Var, eps: T) -> Var {
        let (value, inv_std) = norm::instance_forward(self.value(x), eps);
        let rg = self.rg(x);
        self.push(value, Op::InstanceNorm { x, inv_std }, rg)
    }

    /// Batch normalization with affine `gamma`/`beta` (`[C]`). In training
    /// mode the batch statistics are used and returned; otherwise
    /// `running = (mean, var)` must be supplied.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: Option<(&[T], &[T])>,
        eps: T,
    ) -> (Var, Option<BatchStats<T>>) {
        let train = running.is_none();
        let (value, mean, inv_std, stats) = norm::batch_forward(
            self.value(x),
            self.value(gamma).data(),
            self.value(beta).data(),
            running,
            eps,
        );
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let v = self.push(value, Op::BatchNorm { x, gamma, beta, mean, inv_std, train }, rg);
        (v, stats)
    }

    /// `x[:, c] * scale[c] + shift[c]` with constant per-channel coefficients.
    pub fn channel_affine(&mut self, x: Var, scale: &[T], shift: &[T]) -> Var {
        let t = self.value(x);
        let (n, c, h, w) = t.dims4();
        assert!(scale.len() == c && shift.len() == c, "channel_affine coefficient count");
        let mut value = t.clone();
        let plane = h * w;
        for (i, chunk) in value.data_mut().chunks_mut(plane).enumerate() {
            let ch = i % c;
            for v in chunk {
                *v = *v * scale[ch] + shift[ch];
            }
        }
        let _ = n;
        let rg = self.rg(x);
        self.push(value, Op::ChannelAffine { x, scale: scale.to_vec() }, rg)
    }

    pub fn upsample_nearest2(&mut self, x: Var) -> Var {
        let value = pool::upsample_nearest2(self.value(x));
        let rg = self.rg(x);
        self.push(value, Op::UpsampleNearest2(x), rg)
    }

    /// 2x2 max pooling with stride 2 (odd trailing rows/columns dropped).
    pub fn max_pool2(&mut self, x: Var) -> Var {
        let (value, argmax) = pool::max_pool2(self.value(x));
        let rg = self.rg(x);
        self.push(value, Op::MaxPool2 { x, argmax }, rg)
    }

    /// Separable linear resampling: `rows` maps the height axis and `cols`
    /// the width axis.
    pub fn resize(&mut self, x: Var, rows: Rc<Resampler>, cols: Rc<Resampler>) -> Var {
        let value = crate::resample::apply(self.value(x), &rows, &cols);
        let rg = self.rg(x);
        self.push(value, Op::Resize { x, rows, cols }, rg)
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let (n, _, h, w) = self.value(parts[0]).dims4();
        let mut total_c = 0;
        for &p in parts {
            let (pn, pc, ph, pw) = self.value(p).dims4();
            assert_eq!((pn, ph, pw), (n, h, w), "concat_channels shape mismatch");
            total_c += pc;
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(n * total_c * plane);
        for b in 0..n {
            for &p in parts {
                let t = self.value(p);
                let per = t.numel() / n;
                data.extend_from_slice(&t.data()[b * per..(b + 1) * per]);
            }
        }
        let value = Tensor::from_vec(&[n, total_c, h, w], data).expect("concat shape");
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(value, Op::ConcatChannels(parts.to_vec()), rg)
    }

    /// Repeats a batch-1 tensor `n` times along the batch axis.
    pub fn broadcast_batch(&mut self, x: Var, n: usize) -> Var {
        let t = self.value(x);
        assert_eq!(t.shape()[0], 1, "broadcast_batch expects a leading axis of 1");
        let mut shape = t.shape().to_vec();
        shape[0] = n;
        let mut data = Vec::with_capacity(t.numel() * n);
        for _ in 0..n {
            data.extend_from_slice(t.data());
        }
        let value = Tensor::from_vec(&shape, data).expect("broadcast shape");
        let rg = self.rg(x);
        self.push(value, Op::BroadcastBatch(x), rg)
    }

    /// Mean over all elements; yields a scalar node.
    pub fn mean(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).mean());
        let rg = self.rg(x);
        self.push(value, Op::Mean(x), rg)
    }

    /// Mean squared difference over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "mse");
        let value = Tensor::scalar(loss::mse(self.value(a).data(), self.value(b).data()));
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Mse(a, b), rg)
    }

    /// Mean softmax cross-entropy of `[B, K, H, W]` logits against `[B, H, W]`
    /// class indices.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[u8]) -> Result<Var> {
        let value = loss::softmax_xent_forward(self.value(logits), labels)?;
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(value),
            Op::SoftmaxXent { logits, labels: Rc::new(labels.to_vec()) },
            rg,
        ))
    }

    /// Per-sample masked Gram matrices `[B, C, C]` of features `[B, C, H, W]`
    /// under a constant mask `[B, H, W]`.
    pub fn masked_gram(&mut self, phi: Var, mask: Rc<Tensor<T>>, eps: T) -> Result<Var> {
        let (value, denom) = loss::masked_gram_forward(self.value(phi), &mask, eps)?;
        let rg = self.rg(phi);
        Ok(self.push(value, Op::MaskedGram { phi, mask, denom }, rg))
    }

    /// Reverse pass from a scalar node. Returns gradients for every node that
    /// was created with [`Graph::leaf`].
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let root = &self.nodes[loss.0];
        if root.value.numel() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar root, got {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !root.requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Tensor::ones(root.value.shape()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            self.backward_node(node, gy, &mut grads);
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf) {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn backward_node(&self, node: &Node<T>, gy: Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        match &node.op {
            Op::Input | Op::Leaf => {}
            Op::Add(a, b) => {
                if self.rg(*b) {
                    accumulate(grads, *b, gy.clone());
                }
                if self.rg(*a) {
                    accumulate(grads, *a, gy);
                }
            }
            Op::Sub(a, b) => {
                if self.rg(*b) {
                    accumulate(grads, *b, gy.map(|x| -x));
                }
                if self.rg(*a) {
                    accumulate(grads, *a, gy);
                }
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    accumulate(grads, *a, gy.zip_map(self.value(*b), |g, y| g * y));
                }
                if self.rg(*b) {
                    accumulate(grads, *b, gy.zip_map(self.value(*a), |g, x| g * x));
                }
            }
            Op::Scale(a, s) => {
                let s = *s;
                accumulate(grads, *a, gy.map(|g| g * s));
            }
            Op::AddScalar(a) => accumulate(grads, *a, gy),
            Op::LeakyRelu(a, slope) => {
                let slope = *slope;
                let g = gy.zip_map(self.value(*a), |g, x| if x > T::zero() { g } else { g * slope });
                accumulate(grads, *a, g);
            }
            Op::Tanh(a) => {
                let g = gy.zip_map(&node.value, |g, y| g * (T::one() - y * y));
                accumulate(grads, *a, g);
            }
            Op::Conv2d { x, w, b, stride, pad } => {
                let need_b = b.is_some_and(|b| self.rg(b));
                let (dx, dw, db) = conv::backward(
                    self.value(*x),
                    self.value(*w),
                    &gy,
                    *stride,
                    *pad,
                    self.rg(*x),
                    self.rg(*w),
                    need_b,
                );
                if let Some(dx) = dx {
                    accumulate(grads, *x, dx);
                }
                if let Some(dw) = dw {
                    accumulate(grads, *w, dw);
                }
                if let (Some(b), Some(db)) = (b, db) {
                    accumulate(grads, *b, db);
                }
            }
            Op::SpectralNorm { w, u, v, sigma } => {
                let wt = self.value(*w);
                let dw = spectral::backward(wt, &gy, u, v, *sigma);
                accumulate(grads, *w, dw);
            }
            Op::InstanceNorm { x, inv_std } => {
                let dx = norm::instance_backward(&node.value, inv_std, &gy);
                accumulate(grads, *x, dx);
            }
            Op::BatchNorm { x, gamma, beta, mean, inv_std, train } => {
                let (dx, dgamma, dbeta) = norm::batch_backward(
                    self.value(*x),
                    self.value(*gamma).data(),
                    mean,
                    inv_std,
                    &gy,
                    *train,
                );
                if self.rg(*x) {
                    accumulate(grads, *x, dx);
                }
                if self.rg(*gamma) {
                    accumulate(grads, *gamma, dgamma);
                }
                if self.rg(*beta) {
                    accumulate(grads, *beta, dbeta);
                }
            }
            Op::ChannelAffine { x, scale } => {
                let (_, c, h, w) = gy.dims4();
                let mut g = gy;
                for (i, chunk) in g.data_mut().chunks_mut(h * w).enumerate() {
                    let s = scale[i % c];
                    for v in chunk {
                        *v *= s;
                    }
                }
                accumulate(grads, *x, g);
            }
            Op::UpsampleNearest2(x) => {
                accumulate(grads, *x, pool::upsample_nearest2_backward(&gy));
            }
            Op::MaxPool2 { x, argmax } => {
                let dx = pool::max_pool2_backward(self.value(*x).shape(), argmax, &gy);
                accumulate(grads, *x, dx);
            }
            Op::Resize { x, rows, cols } => {
                let dx = crate::resample::apply_transpose(&gy, rows, cols);
                accumulate(grads, *x, dx);
            }
            Op::ConcatChannels(parts) => {
                let (n, _, h, w) = gy.dims4();
                let plane = h * w;
                let total: usize = gy.numel() / n;
                let mut offset = 0;
                for &p in parts {
                    let pc = self.value(p).shape()[1];
                    if self.rg(p) {
                        let mut data = Vec::with_capacity(n * pc * plane);
                        for b in 0..n {
                            let start = b * total + offset;
                            data.extend_from_slice(&gy.data()[start..start + pc * plane]);
                        }
                        let g = Tensor::from_vec(&[n, pc, h, w], data).expect("concat grad");
                        accumulate(grads, p, g);
                    }
                    offset += pc * plane;
                }
            }
            Op::BroadcastBatch(x) => {
                let n = gy.shape()[0];
                let mut shape = gy.shape().to_vec();
                shape[0] = 1;
                let per = gy.numel() / n;
                let mut acc = vec![T::zero(); per];
                for chunk in gy.data().chunks(per) {
                    for (a, &g) in acc.iter_mut().zip(chunk) {
                        *a += g;
                    }
                }
                accumulate(grads, *x, Tensor::from_vec(&shape, acc).expect("broadcast grad"));
            }
            Op::Mean(x) => {
                let t = self.value(*x);
                let g = gy.item() / lit(t.numel() as f64);
                accumulate(grads, *x, Tensor::full(t.shape(), g));
            }
            Op::Mse(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let k = gy.item() * lit(2.0 / ta.numel() as f64);
                let diff = ta.zip_map(tb, |x, y| (x - y) * k);
                if self.rg(*b) {
                    accumulate(grads, *b, diff.map(|d| -d));
                }
                if self.rg(*a) {
                    accumulate(grads, *a, diff);
                }
            }
            Op::SoftmaxXent { logits, labels } => {
                let dx = loss::softmax_xent_backward(self.value(*logits), labels, gy.item());
                accumulate(grads, *logits, dx);
            }
            Op::MaskedGram { phi, mask, denom } => {
                let dphi = loss::masked_gram_backward(self.value(*phi), mask, denom, &gy);
                accumulate(grads, *phi, dphi);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_of_simple_expression() {
        // f(a, b) = mean((a * b + a)^2) at a = 2, b = 3 → df/da = 2(ab+a)(b+1)
        let mut g = Graph::<f64>::new();
        let a = g.leaf(Tensor::scalar(2.0));
        let b = g.leaf(Tensor::scalar(3.0));
        let ab = g.mul(a, b);
        let s = g.add(ab, a);
        let z = g.input(Tensor::scalar(0.0));
        let l = g.mse(s, z);
        let grads = g.backward(l).unwrap();
        assert_eq!(g.value(l).item(), 64.0);
        assert_eq!(grads.get(a).unwrap().item(), 2.0 * 8.0 * 4.0);
        assert_eq!(grads.get(b).unwrap().item(), 2.0 * 8.0 * 2.0);
    }

    #[test]
    fn detached_nodes_receive_no_gradient() {
        let mut g = Graph::<f64>::new();
        let a = g.leaf(Tensor::scalar(2.0));
        let d = g.detach(a);
        let s = g.mul(a, d);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(a).unwrap().item(), 2.0);
        assert!(!g.requires_grad(d));
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let mut g = Graph::<f32>::new();
        let a = g.leaf(Tensor::zeros(&[2]));
        assert!(g.backward(a).is_err());
    }
}
