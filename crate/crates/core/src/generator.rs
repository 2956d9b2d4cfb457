//! Progressive generator: a learned constant grown through residual blocks,
//! each followed by a spatially adaptive style transform computed from the
//! matching level of the (LQ image, parsing map) pyramid.

use psfr_autograd::{lit, Bound, Conv2d, ConvSpec, Filter, Graph, Mode, ParamId, ParamSet, Scalar, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::imaging::{LabelMap, NUM_CLASSES};

const LRELU_SLOPE: f64 = 0.2;
/// Variance guard of the style transform's normalization.
pub const STYLE_EPS: f64 = 1e-5;
/// Channels fed to each style network: RGB plus one-hot parsing planes.
pub const STYLE_INPUT_CHANNELS: usize = 3 + NUM_CLASSES;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutActivation {
    #[default]
    Tanh,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub base_resolution: usize,
    pub num_blocks: usize,
    pub channel_schedule: Vec<usize>,
    pub const_channels: usize,
    /// Hidden width of each style network.
    pub style_hidden: usize,
    pub out_activation: OutActivation,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            base_resolution: 16,
            num_blocks: 6,
            channel_schedule: vec![512, 512, 256, 128, 64, 32],
            const_channels: 512,
            style_hidden: 64,
            out_activation: OutActivation::Tanh,
        }
    }
}

impl GenConfig {
    /// 8² constant grown to 64² in four blocks.
    pub fn toy() -> Self {
        GenConfig {
            base_resolution: 8,
            num_blocks: 4,
            channel_schedule: vec![64, 64, 32, 32],
            const_channels: 64,
            style_hidden: 32,
            out_activation: OutActivation::Tanh,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_resolution == 0 || self.num_blocks == 0 {
            return Err(CoreError::Config("generator needs a positive base resolution and block count".into()));
        }
        if self.channel_schedule.len() != self.num_blocks {
            return Err(CoreError::Config(format!(
                "channel schedule has {} entries for {} blocks",
                self.channel_schedule.len(),
                self.num_blocks
            )));
        }
        if self.channel_schedule.windows(2).any(|w| w[1] > w[0]) {
            return Err(CoreError::Config("channel schedule must be non-increasing".into()));
        }
        if self.const_channels == 0 || self.style_hidden == 0 || self.channel_schedule.contains(&0) {
            return Err(CoreError::Config("channel counts must be positive".into()));
        }
        Ok(())
    }

    /// Side length of block `i` (0-based).
    pub fn level_size(&self, i: usize) -> usize {
        self.base_resolution << i
    }

    pub fn output_size(&self) -> usize {
        self.level_size(self.num_blocks - 1)
    }
}

/// One pyramid level: LQ image `[B, 3, s, s]` and soft one-hot `[B, 19, s, s]`.
#[derive(Clone, Debug)]
pub struct PyramidLevel<T> {
    pub lq: Tensor<T>,
    pub parse: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct InputPyramid<T> {
    pub levels: Vec<PyramidLevel<T>>,
}

impl<T: Scalar> InputPyramid<T> {
    /// Replaces level `i` (0-based) with zeros.
    pub fn zero_level(&mut self, i: usize) {
        let l = &mut self.levels[i];
        l.lq.data_mut().iter_mut().for_each(|v| *v = T::zero());
        l.parse.data_mut().iter_mut().for_each(|v| *v = T::zero());
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.lq.shape()[2]).collect()
    }
}

fn bicubic<T: Scalar>(x: &Tensor<T>, side: usize) -> Tensor<T> {
    let (_, _, h, w) = x.dims4();
    if (h, w) == (side, side) {
        return x.clone();
    }
    psfr_autograd::resample::resize(x, side, side, Filter::Bicubic, true)
}

/// Builds the per-block inputs: the label map is expanded to one-hot at full
/// resolution, then image and planes are resized bicubically to each level.
pub fn build_input_pyramid<T: Scalar>(lq: &Tensor<T>, labels: &LabelMap, config: &GenConfig) -> Result<InputPyramid<T>> {
    let (b, c, h, w) = lq.dims4();
    let side = config.output_size();
    if c != 3 || h != side || w != side {
        return Err(CoreError::Shape(format!("expected [B, 3, {side}, {side}] input, got {:?}", lq.shape())));
    }
    if (labels.batch(), labels.height(), labels.width()) != (b, h, w) {
        return Err(CoreError::Shape("label map does not match the input image".into()));
    }
    let one_hot = labels.one_hot::<T>();
    let levels = (0..config.num_blocks)
        .map(|i| {
            let s = config.level_size(i);
            PyramidLevel { lq: bicubic(lq, s), parse: bicubic(&one_hot, s) }
        })
        .collect();
    Ok(InputPyramid { levels })
}

/// The style network Ψ: two shared 3x3 convolutions, then 3x3 heads for the
/// scale and shift maps.
#[derive(Clone, Debug)]
pub struct StyleNet {
    pub trunk: [Conv2d; 2],
    pub scale_head: Conv2d,
    pub shift_head: Conv2d,
}

impl StyleNet {
    pub fn new<T: Scalar, R: Rng + ?Sized>(ps: &mut ParamSet<T>, name: &str, hidden: usize, channels: usize, rng: &mut R) -> Self {
        let conv = |ps: &mut ParamSet<T>, n: &str, cin, cout, rng: &mut R| {
            Conv2d::new(ps, &format!("{name}.{n}"), ConvSpec::same(cin, cout, 3).spectral(true), rng)
        };
        let trunk = [
            conv(ps, "conv0", STYLE_INPUT_CHANNELS, hidden, rng),
            conv(ps, "conv1", hidden, hidden, rng),
        ];
        let scale_head = conv(ps, "scale", hidden, channels, rng);
        let shift_head = conv(ps, "shift", hidden, channels, rng);
        if let Some(b) = scale_head.bias {
            ps.get_mut(b).data_mut().iter_mut().for_each(|v| *v = T::one());
        }
        if let Some(b) = shift_head.bias {
            ps.get_mut(b).data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
        StyleNet { trunk, scale_head, shift_head }
    }

    fn convs(&self) -> [&Conv2d; 4] {
        [&self.trunk[0], &self.trunk[1], &self.scale_head, &self.shift_head]
    }

    /// `(y_s, y_b)` for a 22-channel input.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound<'_, T>, input: Var) -> (Var, Var) {
        let mut x = input;
        for conv in &self.trunk {
            let y = conv.forward(g, p, x);
            x = g.leaky_relu(y, lit(LRELU_SLOPE));
        }
        (self.scale_head.forward(g, p, x), self.shift_head.forward(g, p, x))
    }
}

/// Normalizes each channel of each sample over space, then applies the
/// per-pixel affine map `y_s · F̂ + y_b`.
pub fn style_transform<T: Scalar>(g: &mut Graph<T>, features: Var, y_s: Var, y_b: Var) -> Var {
    let normalized = g.instance_norm(features, lit(STYLE_EPS));
    let scaled = g.mul(normalized, y_s);
    g.add(scaled, y_b)
}

/// Pre-activation residual block, optionally preceded by nearest upsampling.
#[derive(Clone, Debug)]
pub struct ResBlock {
    pub upsample: bool,
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    pub shortcut: Option<Conv2d>,
}

impl ResBlock {
    fn new<T: Scalar, R: Rng + ?Sized>(ps: &mut ParamSet<T>, name: &str, cin: usize, cout: usize, upsample: bool, rng: &mut R) -> Self {
        let spec = |a, b, k| ConvSpec::same(a, b, k).spectral(true);
        ResBlock {
            upsample,
            conv1: Conv2d::new(ps, &format!("{name}.conv1"), spec(cin, cout, 3), rng),
            conv2: Conv2d::new(ps, &format!("{name}.conv2"), spec(cout, cout, 3), rng),
            shortcut: (cin != cout).then(|| Conv2d::new(ps, &format!("{name}.shortcut"), spec(cin, cout, 1), rng)),
        }
    }

    fn convs(&self) -> impl Iterator<Item = &Conv2d> {
        [&self.conv1, &self.conv2].into_iter().chain(self.shortcut.as_ref())
    }

    fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound<'_, T>, x: Var) -> Var {
        let x = if self.upsample { g.upsample_nearest2(x) } else { x };
        let a = g.leaky_relu(x, lit(LRELU_SLOPE));
        let a = self.conv1.forward(g, p, a);
        let a = g.leaky_relu(a, lit(LRELU_SLOPE));
        let a = self.conv2.forward(g, p, a);
        let skip = match &self.shortcut {
            Some(s) => s.forward(g, p, x),
            None => x,
        };
        g.add(skip, a)
    }
}

/// Result of a generator forward pass.
#[derive(Clone, Debug)]
pub struct GenForward {
    pub image: Var,
    /// Style-transformed features `F_1 … F_n`.
    pub features: Vec<Var>,
}

pub struct Generator<T: Scalar> {
    config: GenConfig,
    params: ParamSet<T>,
    constant: ParamId,
    blocks: Vec<ResBlock>,
    styles: Vec<StyleNet>,
    to_rgb: Conv2d,
}

impl<T: Scalar> Generator<T> {
    pub fn new<R: Rng + ?Sized>(config: GenConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        let b = config.base_resolution;
        let constant = params.add_weight("const", Tensor::randn(&[1, config.const_channels, b, b], 1.0, rng));
        let mut cin = config.const_channels;
        let mut blocks = Vec::with_capacity(config.num_blocks);
        let mut styles = Vec::with_capacity(config.num_blocks);
        for (i, &cout) in config.channel_schedule.iter().enumerate() {
            blocks.push(ResBlock::new(&mut params, &format!("block{i}"), cin, cout, i > 0, rng));
            styles.push(StyleNet::new(&mut params, &format!("style{i}"), config.style_hidden, cout, rng));
            cin = cout;
        }
        let to_rgb = Conv2d::new(&mut params, "to_rgb", ConvSpec::same(cin, 3, 3).spectral(true), rng);
        Ok(Generator { config, params, constant, blocks, styles, to_rgb })
    }

    pub fn config(&self) -> &GenConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn style_nets(&self) -> &[StyleNet] {
        &self.styles
    }

    pub fn convs(&self) -> Vec<&Conv2d> {
        let mut out: Vec<&Conv2d> = Vec::new();
        for (b, s) in self.blocks.iter().zip(&self.styles) {
            out.extend(b.convs());
            out.extend(s.convs());
        }
        out.push(&self.to_rgb);
        out
    }

    pub fn power_iterate(&mut self, iters: usize) {
        let convs: Vec<Conv2d> = self.convs().into_iter().cloned().collect();
        for c in &convs {
            c.power_iterate(&mut self.params, iters);
        }
    }

    pub fn bind<'a>(&'a self, g: &mut Graph<T>, trainable: bool) -> Bound<'a, T> {
        self.params.bind(g, Mode::Train, trainable)
    }

    pub fn forward(&self, g: &mut Graph<T>, p: &Bound<'_, T>, pyramid: &InputPyramid<T>) -> Result<GenForward> {
        if pyramid.levels.len() != self.config.num_blocks {
            return Err(CoreError::Shape(format!(
                "pyramid has {} levels for {} blocks",
                pyramid.levels.len(),
                self.config.num_blocks
            )));
        }
        let batch = pyramid.levels[0].lq.shape()[0];
        let c = p.var(self.constant);
        let mut x = g.broadcast_batch(c, batch);
        let mut features = Vec::with_capacity(self.blocks.len());
        for (i, ((block, style), level)) in self.blocks.iter().zip(&self.styles).zip(&pyramid.levels).enumerate() {
            let s = self.config.level_size(i);
            if level.lq.shape() != [batch, 3, s, s] || level.parse.shape() != [batch, NUM_CLASSES, s, s] {
                return Err(CoreError::Shape(format!("pyramid level {i} is not {s}x{s}")));
            }
            x = block.forward(g, p, x);
            let (y_s, y_b) = style_net(g, p, style, level);
            x = style_transform(g, x, y_s, y_b);
            features.push(x);
        }
        let rgb = self.to_rgb.forward(g, p, x);
        let image = match self.config.out_activation {
            OutActivation::Tanh => g.tanh(rgb),
        };
        Ok(GenForward { image, features })
    }

    /// Inference: builds the pyramid and returns the restored batch.
    pub fn generate(&self, lq: &Tensor<T>, labels: &LabelMap) -> Result<Tensor<T>> {
        let pyramid = build_input_pyramid(lq, labels, &self.config)?;
        self.generate_from(&pyramid)
    }

    pub fn generate_from(&self, pyramid: &InputPyramid<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let out = self.forward(&mut g, &p, pyramid)?;
        Ok(g.value(out.image).clone())
    }
}

/// Runs Ψ on one pyramid level.
pub fn style_net<T: Scalar>(
    g: &mut Graph<T>,
    p: &Bound<'_, T>,
    net: &StyleNet,
    level: &PyramidLevel<T>,
) -> (Var, Var) {
    let lq = g.input(level.lq.clone());
    let parse = g.input(level.parse.clone());
    let input = g.concat_channels(&[lq, parse]);
    net.forward(g, p, input)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_ladder_sizes() {
        let c = GenConfig::default();
        let sizes: Vec<usize> = (0..c.num_blocks).map(|i| c.level_size(i)).collect();
        assert_eq!(sizes, vec![16, 32, 64, 128, 256, 512]);
    }

    #[test]
    fn schedule_must_not_increase() {
        let mut c = GenConfig::toy();
        c.channel_schedule = vec![16, 32, 16, 16];
        assert!(c.validate().is_err());
        c.channel_schedule = vec![16, 16, 16];
        assert!(c.validate().is_err());
    }

    #[test]
    fn uniform_background_pyramid_is_exact_one_hot() {
        let c = GenConfig { base_resolution: 4, num_blocks: 3, channel_schedule: vec![4, 4, 4], ..GenConfig::toy() };
        let lq = Tensor::<f64>::zeros(&[1, 3, 16, 16]);
        let labels = LabelMap::filled(1, 16, 16, 0).unwrap();
        let pyr = build_input_pyramid(&lq, &labels, &c).unwrap();
        assert_eq!(pyr.sizes(), vec![4, 8, 16]);
        for level in &pyr.levels {
            let plane = level.parse.shape()[2] * level.parse.shape()[3];
            for (i, &v) in level.parse.data().iter().enumerate() {
                let want = if i < plane { 1.0 } else { 0.0 };
                assert!((v - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn style_heads_start_near_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ps = ParamSet::<f64>::new();
        let net = StyleNet::new(&mut ps, "s", 4, 6, &mut rng);
        assert!(ps.get(net.scale_head.bias.unwrap()).data().iter().all(|&v| v == 1.0));
        assert!(ps.get(net.shift_head.bias.unwrap()).data().iter().all(|&v| v == 0.0));
    }
}
