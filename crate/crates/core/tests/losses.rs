mod common;

use common::{gram_oracle, grad_pair, rel_err};
use proptest::prelude::*;
use psfr_autograd::{Graph, Tensor};
use psfr_core::imaging::{LabelMap, NUM_CLASSES};
use psfr_core::losses::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_labels(rng: &mut ChaCha8Rng, b: usize, h: usize, w: usize, classes: &[u8]) -> LabelMap {
    let v = (0..b * h * w).map(|_| classes[rng.random_range(0..classes.len())]).collect();
    LabelMap::new(b, h, w, v).unwrap()
}

#[test]
fn gram_matches_triple_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let c = rng.random_range(1..=8);
        let h = rng.random_range(1..=8);
        let w = rng.random_range(1..=8);
        let phi = Tensor::<f64>::randn(&[c, h, w], 1.0, &mut rng);
        let mask: Vec<f64> = (0..h * w).map(|_| if rng.random_bool(0.5) { 1.0 } else { rng.random::<f64>() }).collect();
        let got = masked_gram(&phi, &mask).unwrap();
        let want = gram_oracle(phi.data(), c, h * w, &mask, GRAM_EPS);
        for (a, b) in got.data().iter().zip(&want) {
            assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
        }
    }
}

#[test]
fn zero_mask_gives_zero_gram() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let phi = Tensor::<f64>::randn(&[5, 4, 3], 1.0, &mut rng);
    let got = masked_gram(&phi, &[0.0; 12]).unwrap();
    assert!(got.data().iter().all(|&v| v == 0.0));
}

#[test]
fn class_grams_partition_the_full_gram() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (c, h, w) = (4, 6, 5);
    let phi = Tensor::<f64>::randn(&[c, h, w], 1.0, &mut rng);
    let labels = random_labels(&mut rng, 1, h, w, &[0, 3, 7, 18]);
    let full = gram_oracle(phi.data(), c, h * w, &vec![1.0; h * w], 0.0);
    let mut acc = vec![0.0; c * c];
    for k in 0..NUM_CLASSES as u8 {
        let mask: Vec<f64> = labels.sample(0).iter().map(|&l| if l == k { 1.0 } else { 0.0 }).collect();
        let area: f64 = mask.iter().sum();
        let gk = masked_gram(&phi, &mask).unwrap();
        for (a, g) in acc.iter_mut().zip(gk.data()) {
            *a += g * (area + GRAM_EPS);
        }
    }
    for (a, f) in acc.iter().zip(&full) {
        assert!((a - f * (h * w) as f64).abs() < 1e-9);
    }
}

fn style_loss_value(pred: &Tensor<f64>, gt: &Tensor<f64>, labels: &LabelMap, ex: &VggExtractor<f64>) -> f64 {
    let mut g = Graph::new();
    let p = g.input(pred.clone());
    let t = g.input(gt.clone());
    let l = semantic_style_loss(&mut g, p, t, labels, ex).unwrap();
    g.value(l).item()
}

#[test]
fn style_loss_vanishes_on_identical_images() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let ex = VggExtractor::<f64>::tiny(&mut rng);
    let img = Tensor::<f64>::rand_uniform(&[2, 3, 16, 16], 1.0, &mut rng);
    let labels = random_labels(&mut rng, 2, 16, 16, &[0, 1, 13]);
    assert_eq!(style_loss_value(&img, &img, &labels, &ex), 0.0);
}

#[test]
fn style_loss_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let ex = VggExtractor::<f64>::tiny(&mut rng);
    for trial in 0..20 {
        let pred = Tensor::<f64>::rand_uniform(&[1, 3, 8, 8], 1.0, &mut rng);
        let gt = Tensor::<f64>::rand_uniform(&[1, 3, 8, 8], 1.0, &mut rng);
        let labels = random_labels(&mut rng, 1, 8, 8, &[0, 1, 10, 13]);
        let coords: Vec<usize> = (0..24).map(|_| rng.random_range(0..pred.numel())).collect();
        let pairs = grad_pair(&pred, &coords, 1e-5, |g, x| {
            let t = g.input(gt.clone());
            semantic_style_loss(g, x, t, &labels, &ex).unwrap()
        });
        let err = rel_err(&pairs, 1e-12);
        assert!(err < 1e-3, "trial {trial}: relative error {err}");
    }
}

#[test]
fn reconstruction_rejects_mismatched_feature_lists() {
    let mut g = Graph::<f64>::new();
    let a = g.input(Tensor::zeros(&[1, 3, 4, 4]));
    let b = g.input(Tensor::zeros(&[1, 3, 4, 4]));
    let f = g.input(Tensor::zeros(&[1, 2, 2, 2]));
    assert!(reconstruction_loss(&mut g, a, b, &[vec![f]], &[]).is_err());
    assert!(reconstruction_loss(&mut g, a, b, &[vec![f, f]], &[vec![f]]).is_err());
}

#[test]
fn reconstruction_sums_pixel_and_feature_terms() {
    let mut g = Graph::<f64>::new();
    let a = g.input(Tensor::full(&[1, 3, 4, 4], 0.5));
    let b = g.input(Tensor::zeros(&[1, 3, 4, 4]));
    let fa = g.input(Tensor::full(&[1, 2, 2, 2], 1.0));
    let fb = g.input(Tensor::full(&[1, 2, 2, 2], -1.0));
    let l = reconstruction_loss(&mut g, a, b, &[vec![fa], vec![fa]], &[vec![fb], vec![fb]]).unwrap();
    assert_eq!(g.value(l).item(), 0.25 + 4.0 + 4.0);
}

#[test]
fn hinge_losses_over_three_scales() {
    let mut g = Graph::<f64>::new();
    let ones: Vec<_> = (0..3).map(|_| g.input(Tensor::full(&[2, 1, 3, 3], 1.0))).collect();
    let neg: Vec<_> = (0..3).map(|_| g.input(Tensor::full(&[2, 1, 3, 3], -1.0))).collect();
    let zeros: Vec<_> = (0..3).map(|_| g.input(Tensor::zeros(&[2, 1, 3, 3]))).collect();
    let d1 = gan_d_loss(&mut g, &ones, &neg).unwrap();
    let d0 = gan_d_loss(&mut g, &zeros, &zeros).unwrap();
    assert_eq!(g.value(d1).item(), 0.0);
    assert_eq!(g.value(d0).item(), 6.0);
    assert!(gan_d_loss(&mut g, &ones, &neg[..2]).is_err());
}

#[test]
fn default_weights_combine_unit_parts() {
    let w = LossWeights::default();
    assert_eq!((w.lambda_ss, w.lambda_rec, w.lambda_adv), (100.0, 10.0, 1.0));
    assert_eq!(w.combine(1.0, 1.0, 1.0), 111.0);
    let mut g = Graph::<f64>::new();
    let one = g.input(Tensor::scalar(1.0));
    let t = total_g_loss(&mut g, one, one, one, &w);
    assert_eq!(g.value(t).item(), 111.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn gram_is_symmetric_with_nonnegative_diagonal(seed in 0u64..10_000, c in 1usize..6, hw in 1usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let phi = Tensor::<f64>::randn(&[c, hw, 1], 1.0, &mut rng);
        let mask: Vec<f64> = (0..hw).map(|_| rng.random()).collect();
        let g = masked_gram(&phi, &mask).unwrap();
        for i in 0..c {
            prop_assert!(g.data()[i * c + i] >= 0.0);
            for j in 0..c {
                prop_assert_eq!(g.data()[i * c + j], g.data()[j * c + i]);
            }
        }
    }

    #[test]
    fn style_loss_is_symmetric_and_nonnegative(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ex = VggExtractor::<f64>::tiny(&mut rng);
        let a = Tensor::<f64>::rand_uniform(&[1, 3, 8, 8], 1.0, &mut rng);
        let b = Tensor::<f64>::rand_uniform(&[1, 3, 8, 8], 1.0, &mut rng);
        let labels = random_labels(&mut rng, 1, 8, 8, &[0, 2, 4]);
        let ab = style_loss_value(&a, &b, &labels, &ex);
        let ba = style_loss_value(&b, &a, &labels, &ex);
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() <= 1e-12 * ab.abs().max(1.0));
    }
}
