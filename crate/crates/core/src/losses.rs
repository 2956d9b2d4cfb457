//! Training objectives: semantic-aware style loss, reconstruction with
//! discriminator feature matching, hinge adversarial losses and their
//! weighted total.
//!
//! Every `‖·‖₂` is taken as a mean square over all elements.

use std::rc::Rc;

use psfr_autograd::loss::masked_gram_forward;
use psfr_autograd::{lit, resample, Bound, Conv2d, ConvSpec, Filter, Graph, Mode, ParamSet, Scalar, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::imaging::{LabelMap, NUM_CLASSES};

/// Guard added to the mask area in the Gram denominator.
pub const GRAM_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_ss: f64,
    pub lambda_rec: f64,
    pub lambda_adv: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda_ss: 100.0, lambda_rec: 10.0, lambda_adv: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_ss", self.lambda_ss), ("lambda_rec", self.lambda_rec), ("lambda_adv", self.lambda_adv)]
        {
            if !(v.is_finite() && v >= 0.0) {
                return Err(CoreError::Config(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }

    /// `λ_ss·l_ss + λ_rec·l_rec + λ_adv·l_g` on plain numbers.
    pub fn combine(&self, l_ss: f64, l_rec: f64, l_g: f64) -> f64 {
        self.lambda_ss * l_ss + self.lambda_rec * l_rec + self.lambda_adv * l_g
    }
}

/// Perceptual feature source for the style loss. Implementations return the
/// style layers ordered shallow to deep; gradients must flow back to `img`.
pub trait FeatureExtractor<T: Scalar> {
    fn features(&self, g: &mut Graph<T>, img: Var) -> Vec<Var>;
}

/// One stage of a VGG-style plan.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VggLayer {
    /// 3x3 convolution followed by ReLU; `tap` exposes the activation.
    Conv { out: usize, tap: bool },
    MaxPool,
}

const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

/// Frozen VGG-like convolution stack. Inputs in `[-1, 1]` are remapped to
/// `[0, 1]` and standardized with the ImageNet channel statistics.
pub struct VggExtractor<T: Scalar> {
    params: ParamSet<T>,
    layers: Vec<(VggLayer, Option<Conv2d>)>,
}

impl<T: Scalar> VggExtractor<T> {
    pub fn new<R: Rng + ?Sized>(plan: &[VggLayer], rng: &mut R) -> Self {
        let mut params = ParamSet::new();
        let mut cin = 3;
        let mut layers = Vec::with_capacity(plan.len());
        for (i, &layer) in plan.iter().enumerate() {
            let conv = match layer {
                VggLayer::Conv { out, .. } => {
                    let c = Conv2d::new(&mut params, &format!("features.{i}"), ConvSpec::same(cin, out, 3), rng);
                    cin = out;
                    Some(c)
                }
                VggLayer::MaxPool => None,
            };
            layers.push((layer, conv));
        }
        VggExtractor { params, layers }
    }

    /// The 19-layer configuration truncated after `relu5_1`, tapping
    /// `relu3_1`, `relu4_1` and `relu5_1`. Weights are random until
    /// [`VggExtractor::load_weights`] is called.
    pub fn vgg19<R: Rng + ?Sized>(rng: &mut R) -> Self {
        use VggLayer::{Conv, MaxPool};
        let c = |out| Conv { out, tap: false };
        let t = |out| Conv { out, tap: true };
        let plan = [
            c(64),
            c(64),
            MaxPool,
            c(128),
            c(128),
            MaxPool,
            t(256),
            c(256),
            c(256),
            c(256),
            MaxPool,
            t(512),
            c(512),
            c(512),
            c(512),
            MaxPool,
            t(512),
        ];
        Self::new(&plan, rng)
    }

    /// A small random-weight stand-in with the same tap structure (three taps
    /// at strides 2, 4 and 8).
    pub fn tiny<R: Rng + ?Sized>(rng: &mut R) -> Self {
        use VggLayer::{Conv, MaxPool};
        let plan = [
            Conv { out: 8, tap: false },
            MaxPool,
            Conv { out: 16, tap: true },
            MaxPool,
            Conv { out: 16, tap: true },
            MaxPool,
            Conv { out: 32, tap: true },
        ];
        Self::new(&plan, rng)
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn load_weights(&mut self, entries: &[(String, Tensor<T>)]) -> Result<()> {
        Ok(self.params.load_named(entries)?)
    }
}

impl<T: Scalar> FeatureExtractor<T> for VggExtractor<T> {
    fn features(&self, g: &mut Graph<T>, img: Var) -> Vec<Var> {
        let p: Bound<'_, T> = self.params.bind(g, Mode::Eval, false);
        let scale: Vec<T> = IMAGENET_STD.iter().map(|s| lit(0.5 / s)).collect();
        let shift: Vec<T> = IMAGENET_MEAN.iter().zip(&IMAGENET_STD).map(|(m, s)| lit((0.5 - m) / s)).collect();
        let mut x = g.channel_affine(img, &scale, &shift);
        let mut taps = Vec::new();
        for (layer, conv) in &self.layers {
            match (layer, conv) {
                (VggLayer::Conv { tap, .. }, Some(conv)) => {
                    let y = conv.forward(g, &p, x);
                    x = g.relu(y);
                    if *tap {
                        taps.push(x);
                    }
                }
                _ => x = g.max_pool2(x),
            }
        }
        taps
    }
}

/// Masked Gram matrix of one feature map `[C, H, W]` under a mask of `H·W`
/// values, returned as `[C, C]`.
pub fn masked_gram<T: Scalar>(phi: &Tensor<T>, mask: &[T]) -> Result<Tensor<T>> {
    if phi.shape().len() != 3 {
        return Err(CoreError::Shape(format!("expected [C, H, W] features, got {:?}", phi.shape())));
    }
    let (c, h, w) = (phi.shape()[0], phi.shape()[1], phi.shape()[2]);
    let phi4 = phi.clone().reshape(&[1, c, h, w])?;
    let mask = Tensor::from_vec(&[1, h, w], mask.to_vec())?;
    let (gram, _) = masked_gram_forward(&phi4, &mask, lit(GRAM_EPS))?;
    Ok(gram.reshape(&[c, c])?)
}

/// Area-resized one-hot masks `[B, 19, h, w]`.
pub fn resized_masks<T: Scalar>(labels: &LabelMap, h: usize, w: usize) -> Tensor<T> {
    let one_hot = labels.one_hot::<T>();
    if (labels.height(), labels.width()) == (h, w) {
        return one_hot;
    }
    resample::resize(&one_hot, h, w, Filter::Area, false)
}

fn class_plane<T: Scalar>(masks: &Tensor<T>, class: usize) -> Rc<Tensor<T>> {
    let (b, k, h, w) = masks.dims4();
    let plane = h * w;
    let mut data = Vec::with_capacity(b * plane);
    for s in 0..b {
        let start = (s * k + class) * plane;
        data.extend_from_slice(&masks.data()[start..start + plane]);
    }
    Rc::new(Tensor::from_vec(&[b, h, w], data).expect("mask plane shape"))
}

/// Semantic-aware style loss: for every style layer and every label present
/// in `labels`, the mean-square difference of masked Gram matrices of `pred`
/// and `gt`. Absent labels have all-zero masks and contribute nothing, so they
/// are skipped.
pub fn semantic_style_loss<T: Scalar>(
    g: &mut Graph<T>,
    pred: Var,
    gt: Var,
    labels: &LabelMap,
    extractor: &dyn FeatureExtractor<T>,
) -> Result<Var> {
    let (b, _, h, w) = g.value(pred).dims4();
    if g.value(pred).shape() != g.value(gt).shape() {
        return Err(CoreError::Shape("style loss operands differ in shape".into()));
    }
    if (labels.batch(), labels.height(), labels.width()) != (b, h, w) {
        return Err(CoreError::Shape(format!(
            "label map {}x{}x{} does not match images {b}x{h}x{w}",
            labels.batch(),
            labels.height(),
            labels.width()
        )));
    }
    let fp = extractor.features(g, pred);
    let fg = extractor.features(g, gt);
    let present = labels.present();
    let mut total: Option<Var> = None;
    for (&a, &bv) in fp.iter().zip(&fg) {
        let (_, _, fh, fw) = g.value(a).dims4();
        let masks = resized_masks::<T>(labels, fh, fw);
        for class in (0..NUM_CLASSES).filter(|&c| present[c]) {
            let m = class_plane(&masks, class);
            let ga = g.masked_gram(a, m.clone(), lit(GRAM_EPS))?;
            let gb = g.masked_gram(bv, m, lit(GRAM_EPS))?;
            let term = g.mse(ga, gb);
            total = Some(match total {
                Some(t) => g.add(t, term),
                None => term,
            });
        }
    }
    Ok(total.unwrap_or_else(|| g.input(Tensor::scalar(T::zero()))))
}

/// Pixel mean-square error plus feature matching over every scale and layer.
/// `feats_pred[s][k]` must pair with `feats_gt[s][k]`.
pub fn reconstruction_loss<T: Scalar>(
    g: &mut Graph<T>,
    pred: Var,
    gt: Var,
    feats_pred: &[Vec<Var>],
    feats_gt: &[Vec<Var>],
) -> Result<Var> {
    if feats_pred.len() != feats_gt.len() {
        return Err(CoreError::Shape(format!(
            "feature lists cover {} and {} scales",
            feats_pred.len(),
            feats_gt.len()
        )));
    }
    for (s, (a, b)) in feats_pred.iter().zip(feats_gt).enumerate() {
        if a.len() != b.len() {
            return Err(CoreError::Shape(format!("scale {s}: {} vs {} feature layers", a.len(), b.len())));
        }
    }
    if g.value(pred).shape() != g.value(gt).shape() {
        return Err(CoreError::Shape("reconstruction operands differ in shape".into()));
    }
    let mut total = g.mse(pred, gt);
    for (a, b) in feats_pred.iter().flatten().zip(feats_gt.iter().flatten()) {
        if g.value(*a).shape() != g.value(*b).shape() {
            return Err(CoreError::Shape("paired discriminator features differ in shape".into()));
        }
        let term = g.mse(*a, *b);
        total = g.add(total, term);
    }
    Ok(total)
}

/// `Σ_s −mean(D_s(fake))`.
pub fn gan_g_loss<T: Scalar>(g: &mut Graph<T>, fake_scores: &[Var]) -> Var {
    let mut total = g.input(Tensor::scalar(T::zero()));
    for &s in fake_scores {
        let m = g.mean(s);
        total = g.sub(total, m);
    }
    total
}

/// `Σ_s mean(max(0, 1 − D_s(real))) + mean(max(0, 1 + D_s(fake)))`.
pub fn gan_d_loss<T: Scalar>(g: &mut Graph<T>, real_scores: &[Var], fake_scores: &[Var]) -> Result<Var> {
    if real_scores.len() != fake_scores.len() {
        return Err(CoreError::Shape(format!(
            "{} real vs {} fake score maps",
            real_scores.len(),
            fake_scores.len()
        )));
    }
    let mut total = g.input(Tensor::scalar(T::zero()));
    for (&r, &f) in real_scores.iter().zip(fake_scores) {
        let neg = g.scale(r, -T::one());
        let margin_r = g.add_scalar(neg, T::one());
        let hinge_r = g.relu(margin_r);
        let mr = g.mean(hinge_r);
        let margin_f = g.add_scalar(f, T::one());
        let hinge_f = g.relu(margin_f);
        let mf = g.mean(hinge_f);
        total = g.add(total, mr);
        total = g.add(total, mf);
    }
    Ok(total)
}

/// Weighted generator objective on graph scalars.
pub fn total_g_loss<T: Scalar>(g: &mut Graph<T>, l_ss: Var, l_rec: Var, l_g: Var, w: &LossWeights) -> Var {
    let a = g.scale(l_ss, lit(w.lambda_ss));
    let b = g.scale(l_rec, lit(w.lambda_rec));
    let c = g.scale(l_g, lit(w.lambda_adv));
    let ab = g.add(a, b);
    g.add(ab, c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar(g: &Graph<f64>, v: Var) -> f64 {
        g.value(v).item()
    }

    fn gram_oracle(phi: &[f64], c: usize, hw: usize, mask: &[f64]) -> Vec<f64> {
        let denom: f64 = mask.iter().sum::<f64>() + GRAM_EPS;
        let mut out = vec![0.0; c * c];
        for i in 0..c {
            for j in 0..c {
                let mut s = 0.0;
                for p in 0..hw {
                    s += phi[i * hw + p] * mask[p] * phi[j * hw + p] * mask[p];
                }
                out[i * c + j] = s / denom;
            }
        }
        out
    }

    #[test]
    fn gram_of_zero_mask_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let phi = Tensor::<f64>::randn(&[3, 4, 4], 1.0, &mut rng);
        let g = masked_gram(&phi, &[0.0; 16]).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gram_of_ones_is_area_ratio() {
        let phi = Tensor::<f64>::ones(&[1, 5, 6]);
        let g = masked_gram(&phi, &[1.0; 30]).unwrap();
        assert_eq!(g.data()[0], 30.0 / (30.0 + 1e-8));
    }

    #[test]
    fn gram_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let phi = Tensor::<f64>::randn(&[3, 4, 4], 1.0, &mut rng);
        let mask: Vec<f64> = (0..16).map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }).collect();
        let g = masked_gram(&phi, &mask).unwrap();
        let want = gram_oracle(phi.data(), 3, 16, &mask);
        for (a, b) in g.data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn hinge_table() {
        let mut g = Graph::<f64>::new();
        let ones: Vec<Var> = (0..3).map(|_| g.input(Tensor::full(&[2, 1, 3, 3], 1.0))).collect();
        let neg: Vec<Var> = (0..3).map(|_| g.input(Tensor::full(&[2, 1, 3, 3], -1.0))).collect();
        let zeros: Vec<Var> = (0..3).map(|_| g.input(Tensor::zeros(&[2, 1, 3, 3]))).collect();
        let c: Vec<Var> = (0..3).map(|_| g.input(Tensor::full(&[2, 1, 3, 3], 0.375))).collect();
        let d0 = gan_d_loss(&mut g, &ones, &neg).unwrap();
        let d6 = gan_d_loss(&mut g, &zeros, &zeros).unwrap();
        let gc = gan_g_loss(&mut g, &c);
        assert_eq!(scalar(&g, d0), 0.0);
        assert_eq!(scalar(&g, d6), 6.0);
        assert_eq!(scalar(&g, gc), -3.0 * 0.375);
    }

    #[test]
    fn total_weighting() {
        let w = LossWeights::default();
        assert_eq!(w.combine(1.0, 1.0, 1.0), 111.0);
        assert_eq!(w.combine(0.0, 0.0, 0.0), 0.0);
        let adv_only = LossWeights { lambda_ss: 0.0, lambda_rec: 0.0, lambda_adv: 1.0 };
        assert_eq!(adv_only.combine(5.0, 7.0, -2.5), -2.5);
        let mut g = Graph::<f64>::new();
        let one = g.input(Tensor::scalar(1.0));
        let t = total_g_loss(&mut g, one, one, one, &w);
        assert_eq!(scalar(&g, t), 111.0);
    }

    #[test]
    fn reconstruction_constant_offset() {
        let mut g = Graph::<f64>::new();
        let pred = g.input(Tensor::full(&[1, 3, 4, 4], 0.25));
        let gt = g.input(Tensor::full(&[1, 3, 4, 4], -0.5));
        let feats: Vec<Vec<Var>> = (0..3).map(|_| (0..4).map(|_| g.input(Tensor::zeros(&[1, 2, 2, 2]))).collect()).collect();
        let l = reconstruction_loss(&mut g, pred, gt, &feats, &feats).unwrap();
        assert_eq!(scalar(&g, l), 0.75 * 0.75);
        let same = reconstruction_loss(&mut g, pred, pred, &feats, &feats).unwrap();
        assert_eq!(scalar(&g, same), 0.0);
        let mut short = feats.clone();
        short[1].pop();
        assert!(reconstruction_loss(&mut g, pred, gt, &feats, &short).is_err());
    }

    #[test]
    fn style_loss_vanishes_on_identical_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ex = VggExtractor::<f64>::tiny(&mut rng);
        let mut g = Graph::new();
        let img = Tensor::rand_uniform(&[2, 3, 16, 16], 1.0, &mut rng);
        let a = g.input(img.clone());
        let b = g.input(img);
        let labels = LabelMap::new(2, 16, 16, (0..512).map(|i| (i % 3) as u8).collect()).unwrap();
        let l = semantic_style_loss(&mut g, a, b, &labels, &ex).unwrap();
        assert_eq!(scalar(&g, l), 0.0);
    }

    #[test]
    fn vgg19_taps_shrink() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ex = VggExtractor::<f32>::vgg19(&mut rng);
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(&[1, 3, 32, 32]));
        let taps = ex.features(&mut g, x);
        let sizes: Vec<_> = taps.iter().map(|&t| g.value(t).shape().to_vec()).collect();
        assert_eq!(sizes, vec![vec![1, 256, 8, 8], vec![1, 512, 4, 4], vec![1, 512, 2, 2]]);
    }
}
