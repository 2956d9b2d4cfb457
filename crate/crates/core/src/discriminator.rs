//! Multi-scale patch discriminators with spectrally normalized convolutions.

use std::rc::Rc;

use psfr_autograd::{lit, spectral, Bound, Conv2d, ConvSpec, Filter, Graph, Mode, ParamSet, Resampler, Scalar, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Number of strided feature layers per scale.
pub const FEATURE_LAYERS: usize = 4;
/// Smallest full-resolution side accepted: the quarter-scale net halves its
/// input once per feature layer and needs at least 2² before the last one.
pub const MIN_INPUT_SIDE: usize = 4 << FEATURE_LAYERS;
const LRELU_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DiscScale {
    Full,
    Half,
    Quarter,
}

impl DiscScale {
    pub const ALL: [DiscScale; 3] = [DiscScale::Full, DiscScale::Half, DiscScale::Quarter];

    pub fn divisor(self) -> usize {
        match self {
            DiscScale::Full => 1,
            DiscScale::Half => 2,
            DiscScale::Quarter => 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscConfig {
    pub base_channels: usize,
    pub max_channels: usize,
}

impl Default for DiscConfig {
    fn default() -> Self {
        DiscConfig { base_channels: 64, max_channels: 512 }
    }
}

impl DiscConfig {
    pub fn toy() -> Self {
        DiscConfig { base_channels: 16, max_channels: 128 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 || self.max_channels < self.base_channels {
            return Err(CoreError::Config("discriminator channels must satisfy 0 < base <= max".into()));
        }
        Ok(())
    }
}

/// Patch scores plus the four intermediate activations, shallow to deep.
#[derive(Clone, Debug)]
pub struct DiscOutput {
    pub score: Var,
    pub features: Vec<Var>,
}

#[derive(Clone, Debug)]
struct ScaleNet {
    layers: Vec<Conv2d>,
    score: Conv2d,
}

/// Three independent discriminators applied at full, half and quarter
/// resolution.
pub struct MultiScaleDiscriminator<T: Scalar> {
    config: DiscConfig,
    params: ParamSet<T>,
    nets: Vec<ScaleNet>,
}

impl<T: Scalar> MultiScaleDiscriminator<T> {
    pub fn new<R: Rng + ?Sized>(config: DiscConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        let nets = DiscScale::ALL
            .iter()
            .enumerate()
            .map(|(s, _)| {
                let mut cin = 3;
                let mut cout = config.base_channels;
                let layers = (0..FEATURE_LAYERS)
                    .map(|k| {
                        let spec = ConvSpec::same(cin, cout, 4).stride(2, 1).spectral(true);
                        let conv = Conv2d::new(&mut params, &format!("d{s}.conv{k}"), spec, rng);
                        cin = cout;
                        cout = (cout * 2).min(config.max_channels);
                        conv
                    })
                    .collect();
                let score = Conv2d::new(&mut params, &format!("d{s}.score"), ConvSpec::same(cin, 1, 3).spectral(true), rng);
                ScaleNet { layers, score }
            })
            .collect();
        Ok(MultiScaleDiscriminator { config, params, nets })
    }

    pub fn config(&self) -> &DiscConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn convs(&self) -> impl Iterator<Item = &Conv2d> {
        self.nets.iter().flat_map(|n| n.layers.iter().chain(std::iter::once(&n.score)))
    }

    /// Advances every power-iteration vector.
    pub fn power_iterate(&mut self, iters: usize) {
        let convs: Vec<Conv2d> = self.convs().cloned().collect();
        for c in &convs {
            c.power_iterate(&mut self.params, iters);
        }
    }

    pub fn bind<'a>(&'a self, g: &mut Graph<T>, trainable: bool) -> Bound<'a, T> {
        self.params.bind(g, Mode::Train, trainable)
    }

    /// Runs the discriminator for `scale` on `img`, bilinearly downsampling it
    /// first.
    pub fn forward(&self, g: &mut Graph<T>, p: &Bound<'_, T>, img: Var, scale: DiscScale) -> DiscOutput {
        let (_, _, h, w) = g.value(img).dims4();
        let d = scale.divisor();
        let mut x = if d == 1 {
            img
        } else {
            let rows = Rc::new(Resampler::new(Filter::Bilinear, h, (h / d).max(1), false));
            let cols = Rc::new(Resampler::new(Filter::Bilinear, w, (w / d).max(1), false));
            g.resize(img, rows, cols)
        };
        let net = &self.nets[DiscScale::ALL.iter().position(|&s| s == scale).expect("known scale")];
        let mut features = Vec::with_capacity(FEATURE_LAYERS);
        for conv in &net.layers {
            let y = conv.forward(g, p, x);
            x = g.leaky_relu(y, lit(LRELU_SLOPE));
            features.push(x);
        }
        DiscOutput { score: net.score.forward(g, p, x), features }
    }

    pub fn forward_all(&self, g: &mut Graph<T>, p: &Bound<'_, T>, img: Var) -> Vec<DiscOutput> {
        DiscScale::ALL.iter().map(|&s| self.forward(g, p, img, s)).collect()
    }
}

/// Divides `weight` (viewed as `[rows, rest]`) by its top singular value
/// estimated with `iters` power iterations from the persistent vector `u`.
pub fn spectral_normalize<T: Scalar>(weight: &Tensor<T>, u: &mut [T], iters: usize) -> Tensor<T> {
    let rows = weight.shape()[0];
    let (_, sigma) = spectral::power_iteration(weight.data(), rows, weight.numel() / rows, u, iters);
    let inv = T::one() / sigma;
    weight.map(|x| x * inv)
}
