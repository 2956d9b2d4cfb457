mod common;

use common::rel_err;
use psfr_autograd::{Graph, Mode, ParamSet, Tensor};
use psfr_core::generator::*;
use psfr_core::imaging::LabelMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn toy_inputs(rng: &mut ChaCha8Rng, b: usize, side: usize) -> (Tensor<f64>, LabelMap) {
    let lq = Tensor::rand_uniform(&[b, 3, side, side], 1.0, rng);
    let labels = LabelMap::new(b, side, side, (0..b * side * side).map(|_| [0u8, 1, 10, 13][rng.random_range(0..4)]).collect())
        .unwrap();
    (lq, labels)
}

fn small_config() -> GenConfig {
    GenConfig {
        base_resolution: 4,
        num_blocks: 3,
        channel_schedule: vec![8, 8, 4],
        const_channels: 8,
        style_hidden: 6,
        out_activation: OutActivation::Tanh,
    }
}

#[test]
fn toy_ladder_doubles_to_output() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = GenConfig::toy();
    let gen = Generator::<f32>::new(cfg.clone(), &mut rng).unwrap();
    let (lq, labels) = {
        let mut r = ChaCha8Rng::seed_from_u64(2);
        let (lq, l) = toy_inputs(&mut r, 2, 64);
        (lq.cast::<f32>(), l)
    };
    let pyramid = build_input_pyramid(&lq, &labels, &cfg).unwrap();
    assert_eq!(pyramid.sizes(), vec![8, 16, 32, 64]);
    let mut g = Graph::new();
    let p = gen.bind(&mut g, false);
    let out = gen.forward(&mut g, &p, &pyramid).unwrap();
    let sides: Vec<usize> = out.features.iter().map(|&f| g.value(f).shape()[2]).collect();
    assert_eq!(sides, vec![8, 16, 32, 64]);
    let img = g.value(out.image);
    assert_eq!(img.shape(), &[2, 3, 64, 64]);
    assert!(img.data().iter().all(|v| v.abs() < 1.0));
}

#[test]
fn three_blocks_from_eight_end_at_thirty_two() {
    let cfg = GenConfig { num_blocks: 3, channel_schedule: vec![64, 64, 32], ..GenConfig::toy() };
    cfg.validate().unwrap();
    assert_eq!(cfg.output_size(), 32);
}

#[test]
fn style_transform_with_constant_parameters() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for &(a, b) in &[(2.0, 0.5), (-0.7, -1.25), (0.0, 3.0)] {
        let mut g = Graph::<f64>::new();
        let f = g.input(Tensor::randn(&[2, 4, 8, 8], 3.0, &mut rng));
        let ys = g.input(Tensor::full(&[2, 4, 8, 8], a));
        let yb = g.input(Tensor::full(&[2, 4, 8, 8], b));
        let out = style_transform(&mut g, f, ys, yb);
        let v = g.value(out);
        for plane in v.data().chunks(64) {
            let mean = plane.iter().sum::<f64>() / 64.0;
            let std = (plane.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 64.0).sqrt();
            assert!((mean - b).abs() <= 1e-4);
            assert!((std - f64::abs(a)).abs() <= 1e-4, "std {std} for a {a}");
        }
    }
}

#[test]
fn style_transform_of_flat_channel_is_finite() {
    let mut g = Graph::<f64>::new();
    let f = g.input(Tensor::full(&[1, 2, 4, 4], 7.0));
    let ys = g.input(Tensor::full(&[1, 2, 4, 4], 1.5));
    let yb = g.input(Tensor::full(&[1, 2, 4, 4], 0.25));
    let out = style_transform(&mut g, f, ys, yb);
    assert!(g.value(out).all_finite());
    assert!(g.value(out).data().iter().all(|&v| (v - 0.25).abs() < 1e-9));
}

#[test]
fn style_net_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut ps = ParamSet::<f64>::new();
    let net = StyleNet::new(&mut ps, "s", 5, 3, &mut rng);
    let input = Tensor::<f64>::rand_uniform(&[1, STYLE_INPUT_CHANNELS, 4, 4], 1.0, &mut rng);
    let weights = Tensor::<f64>::randn(&[1, 3, 4, 4], 1.0, &mut rng);
    let objective = |ps: &ParamSet<f64>, x: &Tensor<f64>, grads: bool| {
        let mut g = Graph::new();
        let p = ps.bind(&mut g, Mode::Train, grads);
        let xv = if grads { g.leaf(x.clone()) } else { g.input(x.clone()) };
        let (ys, yb) = net.forward(&mut g, &p, xv);
        let w = g.input(weights.clone());
        let a = g.mul(ys, w);
        let s = g.add(a, yb);
        let sq = g.mul(s, s);
        let loss = g.mean(sq);
        let value = g.value(loss).item();
        if !grads {
            return (value, Vec::new(), None);
        }
        let gr = g.backward(loss).unwrap();
        (value, p.grads(&gr), gr.get(xv).cloned())
    };
    let (_, pgrads, xgrad) = objective(&ps, &input, true);
    let h = 1e-6;
    let mut pairs = Vec::new();
    for id in ps.ids().filter(|&id| ps.is_trainable(id)).collect::<Vec<_>>() {
        let n = ps.get(id).numel();
        for k in [0, n / 2, n - 1] {
            let mut plus = ps.clone();
            plus.get_mut(id).data_mut()[k] += h;
            let mut minus = ps.clone();
            minus.get_mut(id).data_mut()[k] -= h;
            let numeric = (objective(&plus, &input, false).0 - objective(&minus, &input, false).0) / (2.0 * h);
            pairs.push((pgrads[id.index()].as_ref().unwrap().data()[k], numeric));
        }
    }
    let xg = xgrad.unwrap();
    for k in (0..input.numel()).step_by(17) {
        let mut plus = input.clone();
        plus.data_mut()[k] += h;
        let mut minus = input.clone();
        minus.data_mut()[k] -= h;
        let numeric = (objective(&ps, &plus, false).0 - objective(&ps, &minus, false).0) / (2.0 * h);
        pairs.push((xg.data()[k], numeric));
    }
    let err = rel_err(&pairs, 1e-9);
    assert!(err < 1e-5, "relative error {err}");
}

#[test]
fn output_depends_on_every_level_and_zeroing_all_removes_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = small_config();
    let gen = Generator::<f64>::new(cfg.clone(), &mut rng).unwrap();
    let (lq, labels) = toy_inputs(&mut rng, 1, 16);
    let base = build_input_pyramid(&lq, &labels, &cfg).unwrap();
    let y0 = gen.generate_from(&base).unwrap();
    for i in 0..cfg.num_blocks {
        let mut p = base.clone();
        p.levels[i].lq.data_mut().iter_mut().for_each(|v| *v = -*v);
        let y = gen.generate_from(&p).unwrap();
        let diff: f64 = y.data().iter().zip(y0.data()).map(|(a, b)| (a - b).abs()).sum();
        assert!(diff > 1e-6, "level {i} has no effect");
        let mut z = base.clone();
        z.zero_level(i);
        assert_ne!(gen.generate_from(&z).unwrap().data(), y0.data());
    }
    let (lq2, labels2) = toy_inputs(&mut rng, 1, 16);
    let mut a = base.clone();
    let mut b = build_input_pyramid(&lq2, &labels2, &cfg).unwrap();
    for i in 0..cfg.num_blocks {
        a.zero_level(i);
        b.zero_level(i);
    }
    let ya = gen.generate_from(&a).unwrap();
    assert_eq!(ya.data(), gen.generate_from(&b).unwrap().data());
    assert!(ya.all_finite());
}

#[test]
fn every_parameter_receives_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cfg = small_config();
    let gen = Generator::<f64>::new(cfg.clone(), &mut rng).unwrap();
    let (lq, labels) = toy_inputs(&mut rng, 2, 16);
    let pyramid = build_input_pyramid(&lq, &labels, &cfg).unwrap();
    let mut g = Graph::new();
    let p = gen.bind(&mut g, true);
    let out = gen.forward(&mut g, &p, &pyramid).unwrap();
    let target = g.input(Tensor::randn(&[2, 3, 16, 16], 0.5, &mut rng));
    let loss = g.mse(out.image, target);
    let grads = p.grads(&g.backward(loss).unwrap());
    let ps = gen.params();
    for id in ps.ids().filter(|&id| ps.is_trainable(id)) {
        let gr = grads[id.index()].as_ref().unwrap_or_else(|| panic!("{} has no gradient", ps.name(id)));
        assert!(gr.max_abs() > 0.0, "{} has zero gradient", ps.name(id));
    }
}

#[test]
fn pyramid_rejects_mismatched_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let cfg = small_config();
    let (lq, _) = toy_inputs(&mut rng, 1, 16);
    let (_, labels) = toy_inputs(&mut rng, 1, 8);
    assert!(build_input_pyramid(&lq, &labels, &cfg).is_err());
    let (lq, labels) = toy_inputs(&mut rng, 1, 32);
    assert!(build_input_pyramid(&lq, &labels, &cfg).is_err());
}
