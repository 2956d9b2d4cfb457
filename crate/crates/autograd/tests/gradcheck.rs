//! Central finite differences against the analytic reverse pass, per op.

use std::rc::Rc;

use psfr_autograd::{Filter, Graph, Resampler, Tensor, Var};
use rand::rngs::StdRng;
use rand::SeedableRng;

/// Checks d f / d x for every leaf built by `inputs`.
fn check(name: &str, inputs: Vec<Tensor<f64>>, f: impl Fn(&mut Graph<f64>, &[Var]) -> Var) {
    let eval = |vals: &[Tensor<f64>]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.leaf(t.clone())).collect();
        let out = f(&mut g, &vars);
        (g, vars, out)
    };
    let (g, vars, out) = eval(&inputs);
    let grads = g.backward(out).unwrap();
    let h = 1e-6;
    for (k, x) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[k]).cloned().unwrap_or_else(|| Tensor::zeros(x.shape()));
        for i in 0..x.numel() {
            let mut plus = inputs.clone();
            plus[k].data_mut()[i] += h;
            let mut minus = inputs.clone();
            minus[k].data_mut()[i] -= h;
            let (gp, _, op) = eval(&plus);
            let (gm, _, om) = eval(&minus);
            let numeric = (gp.value(op).item() - gm.value(om).item()) / (2.0 * h);
            let a = analytic.data()[i];
            let err = (a - numeric).abs() / (a.abs().max(numeric.abs()).max(1e-3));
            assert!(err < 1e-5, "{name}: input {k} element {i}: analytic {a} numeric {numeric}");
        }
    }
}

fn rng() -> StdRng {
    StdRng::seed_from_u64(42)
}

/// Reduces a tensor to a scalar with non-uniform weights so every element
/// of the upstream gradient differs.
fn weighted_sum(g: &mut Graph<f64>, x: Var) -> Var {
    let shape = g.value(x).shape().to_vec();
    let n: usize = shape.iter().product();
    let w = Tensor::from_vec(&shape, (0..n).map(|i| ((i * 7 % 11) as f64 - 5.0) / 3.0).collect()).unwrap();
    let wv = g.input(w);
    let p = g.mul(x, wv);
    g.mean(p)
}

#[test]
fn elementwise_ops() {
    let mut r = rng();
    let a = Tensor::randn(&[2, 3], 1.0, &mut r);
    let b = Tensor::randn(&[2, 3], 1.0, &mut r);
    check("add/sub/mul/scale", vec![a.clone(), b.clone()], |g, v| {
        let s = g.add(v[0], v[1]);
        let d = g.sub(s, v[1]);
        let m = g.mul(d, v[1]);
        let sc = g.scale(m, 1.7);
        let t = g.add_scalar(sc, 0.3);
        weighted_sum(g, t)
    });
    check("activations", vec![a], |g, v| {
        let l = g.leaky_relu(v[0], 0.2);
        let t = g.tanh(l);
        weighted_sum(g, t)
    });
    check("mse", vec![b.clone(), Tensor::randn(&[2, 3], 1.0, &mut r)], |g, v| g.mse(v[0], v[1]));
}

#[test]
fn convolution_all_operands() {
    let mut r = rng();
    for &(k, stride, pad) in &[(3, 1, 1), (4, 2, 1), (1, 1, 0)] {
        let x = Tensor::randn(&[2, 2, 6, 5], 1.0, &mut r);
        let w = Tensor::randn(&[3, 2, k, k], 0.5, &mut r);
        let b = Tensor::randn(&[3], 0.5, &mut r);
        check("conv2d", vec![x, w, b], |g, v| {
            let y = g.conv2d(v[0], v[1], Some(v[2]), stride, pad);
            weighted_sum(g, y)
        });
    }
}

#[test]
fn normalizations() {
    let mut r = rng();
    let x = Tensor::randn(&[2, 3, 4, 4], 1.5, &mut r);
    check("instance_norm", vec![x.clone()], |g, v| {
        let y = g.instance_norm(v[0], 1e-5);
        weighted_sum(g, y)
    });
    let gamma = Tensor::randn(&[3], 1.0, &mut r);
    let beta = Tensor::randn(&[3], 1.0, &mut r);
    check("batch_norm train", vec![x.clone(), gamma.clone(), beta.clone()], |g, v| {
        let (y, _) = g.batch_norm(v[0], v[1], v[2], None, 1e-5);
        weighted_sum(g, y)
    });
    let rm = [0.1, -0.2, 0.3];
    let rv = [1.5, 0.5, 2.0];
    check("batch_norm eval", vec![x, gamma, beta], |g, v| {
        let (y, _) = g.batch_norm(v[0], v[1], v[2], Some((&rm, &rv)), 1e-5);
        weighted_sum(g, y)
    });
}

#[test]
fn spatial_ops() {
    let mut r = rng();
    let x = Tensor::randn(&[1, 2, 6, 6], 1.0, &mut r);
    check("upsample", vec![x.clone()], |g, v| {
        let y = g.upsample_nearest2(v[0]);
        weighted_sum(g, y)
    });
    check("maxpool", vec![x.clone()], |g, v| {
        let y = g.max_pool2(v[0]);
        weighted_sum(g, y)
    });
    let rows = Rc::new(Resampler::new(Filter::Bicubic, 6, 3, true));
    let cols = Rc::new(Resampler::new(Filter::Bilinear, 6, 4, false));
    check("resize", vec![x.clone()], |g, v| {
        let y = g.resize(v[0], rows.clone(), cols.clone());
        weighted_sum(g, y)
    });
    let y2 = Tensor::randn(&[1, 3, 6, 6], 1.0, &mut r);
    check("concat", vec![x.clone(), y2], |g, v| {
        let y = g.concat_channels(&[v[0], v[1]]);
        weighted_sum(g, y)
    });
    check("broadcast", vec![x.clone()], |g, v| {
        let y = g.broadcast_batch(v[0], 3);
        weighted_sum(g, y)
    });
    check("channel_affine", vec![x], |g, v| {
        let y = g.channel_affine(v[0], &[2.0, -0.5], &[0.1, 0.2]);
        weighted_sum(g, y)
    });
}

#[test]
fn spectral_norm_with_fixed_vectors() {
    let mut r = rng();
    let w = Tensor::randn(&[3, 2, 2, 2], 1.0, &mut r);
    let mut u = vec![0.6, 0.0, 0.8];
    let (v, _) = psfr_autograd::spectral::power_iteration(w.data(), 3, 8, &mut u, 3);
    check("spectral_norm", vec![w], |g, vars| {
        let y = g.spectral_norm(vars[0], &u, &v);
        weighted_sum(g, y)
    });
}

#[test]
fn classification_and_gram_losses() {
    let mut r = rng();
    let logits = Tensor::randn(&[2, 5, 3, 3], 2.0, &mut r);
    let labels: Vec<u8> = (0..18).map(|i| (i * 3 % 5) as u8).collect();
    check("softmax_xent", vec![logits], |g, v| g.softmax_cross_entropy(v[0], &labels).unwrap());

    let phi = Tensor::randn(&[2, 3, 4, 4], 1.0, &mut r);
    let mask = Rc::new(Tensor::from_vec(&[2, 4, 4], (0..32).map(|i| ((i * 5) % 7) as f64 / 6.0).collect()).unwrap());
    check("masked_gram", vec![phi], |g, v| {
        let gm = g.masked_gram(v[0], mask.clone(), 1e-8).unwrap();
        weighted_sum(g, gm)
    });
}
