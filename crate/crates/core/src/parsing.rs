//! Face parsing network: encoder, residual trunk and decoder with a 19-class
//! logits head and an auxiliary restored-image head.

use psfr_autograd::{lit, BatchNorm2d, Bound, Conv2d, ConvSpec, Graph, Mode, ParamSet, Scalar, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::imaging::{LabelMap, NUM_CLASSES};

const LRELU_SLOPE: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FpnConfig {
    pub in_resolution: usize,
    pub num_classes: usize,
    pub base_channels: usize,
    pub max_channels: usize,
    pub num_down: usize,
    pub num_resblocks: usize,
    pub num_up: usize,
}

impl Default for FpnConfig {
    fn default() -> Self {
        FpnConfig {
            in_resolution: 512,
            num_classes: NUM_CLASSES,
            base_channels: 64,
            max_channels: 512,
            num_down: 4,
            num_resblocks: 10,
            num_up: 4,
        }
    }
}

impl FpnConfig {
    pub fn toy() -> Self {
        FpnConfig {
            in_resolution: 64,
            base_channels: 16,
            max_channels: 64,
            num_down: 2,
            num_resblocks: 2,
            num_up: 2,
            ..FpnConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes != NUM_CLASSES {
            return Err(CoreError::Config(format!("num_classes must be {NUM_CLASSES}, got {}", self.num_classes)));
        }
        if self.num_down != self.num_up {
            return Err(CoreError::Config(format!(
                "num_down ({}) must equal num_up ({})",
                self.num_down, self.num_up
            )));
        }
        if self.base_channels == 0 || self.max_channels < self.base_channels {
            return Err(CoreError::Config("channels must satisfy 0 < base <= max".into()));
        }
        if self.in_resolution == 0 || !self.in_resolution.is_multiple_of(1 << self.num_down) {
            return Err(CoreError::Config(format!(
                "resolution {} is not divisible by 2^{}",
                self.in_resolution, self.num_down
            )));
        }
        Ok(())
    }

    fn width(&self, level: usize) -> usize {
        (self.base_channels << level).min(self.max_channels)
    }
}

#[derive(Clone, Debug)]
struct ConvBn {
    conv: Conv2d,
    bn: BatchNorm2d,
}

impl ConvBn {
    fn new<T: Scalar, R: Rng + ?Sized>(ps: &mut ParamSet<T>, name: &str, spec: ConvSpec, rng: &mut R) -> Self {
        ConvBn {
            conv: Conv2d::new(ps, &format!("{name}.conv"), spec.bias(false), rng),
            bn: BatchNorm2d::new(ps, &format!("{name}.bn"), spec.cout),
        }
    }

    fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound<'_, T>, x: Var) -> Var {
        let y = self.conv.forward(g, p, x);
        let y = self.bn.forward(g, p, y);
        g.leaky_relu(y, lit(LRELU_SLOPE))
    }
}

/// Outputs of [`Fpn::forward`].
#[derive(Clone, Copy, Debug)]
pub struct FpnOutput {
    pub logits: Var,
    pub restored: Var,
}

pub struct Fpn<T: Scalar> {
    config: FpnConfig,
    params: ParamSet<T>,
    stem: ConvBn,
    down: Vec<ConvBn>,
    res: Vec<[ConvBn; 2]>,
    up: Vec<ConvBn>,
    logits_head: Conv2d,
    image_head: Conv2d,
}

impl<T: Scalar> Fpn<T> {
    pub fn new<R: Rng + ?Sized>(config: FpnConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut ps = ParamSet::new();
        let base = config.base_channels;
        let stem = ConvBn::new(&mut ps, "stem", ConvSpec::same(3, base, 3), rng);
        let down = (0..config.num_down)
            .map(|i| {
                let spec = ConvSpec::same(config.width(i), config.width(i + 1), 3).stride(2, 1);
                ConvBn::new(&mut ps, &format!("down{i}"), spec, rng)
            })
            .collect();
        let deep = config.width(config.num_down);
        let res = (0..config.num_resblocks)
            .map(|i| {
                [
                    ConvBn::new(&mut ps, &format!("res{i}.a"), ConvSpec::same(deep, deep, 3), rng),
                    ConvBn::new(&mut ps, &format!("res{i}.b"), ConvSpec::same(deep, deep, 3), rng),
                ]
            })
            .collect();
        let up = (0..config.num_up)
            .map(|i| {
                let level = config.num_up - i;
                let spec = ConvSpec::same(config.width(level), config.width(level - 1), 3);
                ConvBn::new(&mut ps, &format!("up{i}"), spec, rng)
            })
            .collect();
        let logits_head = Conv2d::new(&mut ps, "logits", ConvSpec::same(base, config.num_classes, 3), rng);
        let image_head = Conv2d::new(&mut ps, "image", ConvSpec::same(base, 3, 3), rng);
        Ok(Fpn { config, params: ps, stem, down, res, up, logits_head, image_head })
    }

    pub fn config(&self) -> &FpnConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    /// `Train` uses batch statistics and records running-stat updates on `p`;
    /// `Eval` uses the stored running statistics.
    pub fn bind<'a>(&'a self, g: &mut Graph<T>, mode: Mode, trainable: bool) -> Bound<'a, T> {
        self.params.bind(g, mode, trainable)
    }

    pub fn forward(&self, g: &mut Graph<T>, p: &Bound<'_, T>, lq: Var) -> Result<FpnOutput> {
        let shape = g.value(lq).shape().to_vec();
        let r = self.config.in_resolution;
        if shape.len() != 4 || shape[1] != 3 || shape[2] != r || shape[3] != r {
            return Err(CoreError::Shape(format!("parsing network expects [B, 3, {r}, {r}], got {shape:?}")));
        }
        let mut x = self.stem.forward(g, p, lq);
        for d in &self.down {
            x = d.forward(g, p, x);
        }
        for [a, b] in &self.res {
            let y = a.forward(g, p, x);
            let y = b.forward(g, p, y);
            x = g.add(x, y);
        }
        for u in &self.up {
            let y = g.upsample_nearest2(x);
            x = u.forward(g, p, y);
        }
        let logits = self.logits_head.forward(g, p, x);
        let img = self.image_head.forward(g, p, x);
        let restored = g.tanh(img);
        Ok(FpnOutput { logits, restored })
    }

    /// Inference with frozen statistics: returns logits and restored image.
    pub fn infer(&self, lq: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, Mode::Eval, false);
        let x = g.input(lq.clone());
        let out = self.forward(&mut g, &p, x)?;
        Ok((g.value(out.logits).clone(), g.value(out.restored).clone()))
    }

    pub fn parse(&self, lq: &Tensor<T>) -> Result<LabelMap> {
        argmax_labels(&self.infer(lq)?.0)
    }
}

/// Parsing and pixel terms of the multi-task loss.
#[derive(Clone, Copy, Debug)]
pub struct FpnLoss {
    pub parse: Var,
    pub pixel: Var,
    pub total: Var,
}

/// Mean softmax cross-entropy plus mean-square image error, weighted equally.
pub fn fpn_loss<T: Scalar>(
    g: &mut Graph<T>,
    logits: Var,
    restored: Var,
    labels: &LabelMap,
    gt_hq: Var,
) -> Result<FpnLoss> {
    let (b, k, h, w) = g.value(logits).dims4();
    if k != NUM_CLASSES || (labels.batch(), labels.height(), labels.width()) != (b, h, w) {
        return Err(CoreError::Shape(format!(
            "logits {:?} vs labels {}x{}x{}",
            g.value(logits).shape(),
            labels.batch(),
            labels.height(),
            labels.width()
        )));
    }
    if g.value(restored).shape() != g.value(gt_hq).shape() {
        return Err(CoreError::Shape("restored image and target differ in shape".into()));
    }
    let parse = g.softmax_cross_entropy(logits, labels.labels()).map_err(|e| CoreError::Label(e.to_string()))?;
    let pixel = g.mse(restored, gt_hq);
    let total = g.add(parse, pixel);
    Ok(FpnLoss { parse, pixel, total })
}

/// Per-pixel argmax over classes; ties resolve to the lowest index.
pub fn argmax_labels<T: Scalar>(logits: &Tensor<T>) -> Result<LabelMap> {
    let (b, k, h, w) = logits.dims4();
    if k != NUM_CLASSES {
        return Err(CoreError::Shape(format!("expected {NUM_CLASSES} logit channels, got {k}")));
    }
    let plane = h * w;
    let d = logits.data();
    let mut labels = vec![0u8; b * plane];
    for s in 0..b {
        let base = s * k * plane;
        for p in 0..plane {
            let mut best = 0;
            let mut best_v = d[base + p];
            for c in 1..k {
                let v = d[base + c * plane + p];
                if v > best_v {
                    best = c;
                    best_v = v;
                }
            }
            labels[s * plane + p] = best as u8;
        }
    }
    LabelMap::new(b, h, w, labels)
}

/// Fraction of pixels whose labels agree.
pub fn pixel_accuracy(pred: &LabelMap, gt: &LabelMap) -> Result<f64> {
    if pred.labels().len() != gt.labels().len() {
        return Err(CoreError::Shape("label maps differ in size".into()));
    }
    let hits = pred.labels().iter().zip(gt.labels()).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / pred.labels().len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mismatched_down_up_rejected() {
        let c = FpnConfig { num_up: 3, ..FpnConfig::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn argmax_ties_go_low() {
        let zeros = Tensor::<f32>::zeros(&[1, NUM_CLASSES, 2, 3]);
        assert!(argmax_labels(&zeros).unwrap().labels().iter().all(|&l| l == 0));
        let mut t = Tensor::<f32>::zeros(&[1, NUM_CLASSES, 2, 3]);
        t.data_mut()[5 * 6..6 * 6].iter_mut().for_each(|v| *v = 2.0);
        assert!(argmax_labels(&t).unwrap().labels().iter().all(|&l| l == 5));
    }

    #[test]
    fn uniform_logits_cost_ln_19() {
        let mut g = Graph::<f64>::new();
        let logits = g.input(Tensor::full(&[1, NUM_CLASSES, 4, 4], 0.3));
        let img = g.input(Tensor::zeros(&[1, 3, 4, 4]));
        let labels = LabelMap::new(1, 4, 4, (0..16).map(|i| i as u8).collect()).unwrap();
        let l = fpn_loss(&mut g, logits, img, &labels, img).unwrap();
        assert!((g.value(l.parse).item() - 19f64.ln()).abs() < 1e-12);
        assert_eq!(g.value(l.pixel).item(), 0.0);
    }

    #[test]
    fn toy_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let fpn = Fpn::<f32>::new(FpnConfig::toy(), &mut rng).unwrap();
        let x = Tensor::rand_uniform(&[2, 3, 64, 64], 1.0, &mut rng);
        let (logits, restored) = fpn.infer(&x).unwrap();
        assert_eq!(logits.shape(), &[2, NUM_CLASSES, 64, 64]);
        assert_eq!(restored.shape(), &[2, 3, 64, 64]);
        assert!(fpn.infer(&Tensor::zeros(&[1, 3, 32, 32])).is_err());
    }
}
