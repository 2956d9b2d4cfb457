//! Online synthesis of low-quality inputs: blur, downsample, additive
//! Gaussian noise, JPEG compression, then resize back to the pipeline size.

mod filters;

pub use filters::{
    add_awgn, blur, blur_size_range, gaussian_sigma, jpeg_roundtrip, motion_kernel, rescale, resize_to, BlurKind,
    Interp,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::imaging::{Image8, PIPELINE_SIZE};

/// Probability that a blur is applied.
pub const P_BLUR: f64 = 0.5;
/// Probability that noise is added.
pub const P_NOISE: f64 = 0.2;
/// Probability that noise is drawn independently per channel.
pub const P_NOISE_PER_CHANNEL: f64 = 0.5;
/// Probability of JPEG compression.
pub const P_JPEG: f64 = 0.7;
/// Downsampled side length range at the 512 pipeline size.
pub const SCALED_SIDE: (u32, u32) = (32, 256);
pub const MAX_NOISE_SIGMA: f64 = 0.1 * 255.0;
/// Compression level range; higher means stronger compression.
pub const JPEG_LEVEL: (u8, u8) = (10, 65);

/// One realization of the degradation model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradationParams {
    pub blur_kind: BlurKind,
    /// Kernel side in pixels.
    pub blur_size: u32,
    /// Motion-blur direction in degrees, `[0, 180)`.
    #[serde(default)]
    pub motion_angle_deg: f64,
    /// Fraction of the original side length kept by the downsample.
    pub scale: f64,
    pub downsample_interp: Interp,
    /// Noise standard deviation in 8-bit units; 0 disables noise.
    pub noise_sigma: f64,
    pub noise_per_channel: bool,
    /// Seed of the noise field.
    #[serde(default)]
    pub noise_seed: u64,
    /// Compression level in `[10, 65]`; `None` skips JPEG.
    pub jpeg_quality: Option<u8>,
}

impl DegradationParams {
    /// Parameters under which [`degrade`] returns its input unchanged.
    pub fn identity() -> Self {
        DegradationParams {
            blur_kind: BlurKind::None,
            blur_size: 0,
            motion_angle_deg: 0.0,
            scale: 1.0,
            downsample_interp: Interp::Bicubic,
            noise_sigma: 0.0,
            noise_per_channel: false,
            noise_seed: 0,
            jpeg_quality: None,
        }
    }

    /// Encoder quality used for the stored compression level.
    pub fn encoder_quality(&self) -> Option<u8> {
        self.jpeg_quality.map(|q| 100 - q)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some((lo, hi)) = blur_size_range(self.blur_kind) {
            let s = self.blur_size as usize;
            if s < lo || s > hi {
                return Err(CoreError::InvalidParam(format!(
                    "{:?} blur size {} outside [{lo}, {hi}]",
                    self.blur_kind, s
                )));
            }
            if self.blur_kind == BlurKind::Median && s.is_multiple_of(2) {
                return Err(CoreError::InvalidParam("median blur size must be odd".into()));
            }
        }
        if !(self.scale.is_finite() && self.scale > 0.0 && self.scale <= 1.0) {
            return Err(CoreError::InvalidParam(format!("scale {} outside (0, 1]", self.scale)));
        }
        if !(0.0..=MAX_NOISE_SIGMA).contains(&self.noise_sigma) {
            return Err(CoreError::InvalidParam(format!(
                "noise sigma {} outside [0, {MAX_NOISE_SIGMA}]",
                self.noise_sigma
            )));
        }
        if let Some(q) = self.jpeg_quality {
            if !(JPEG_LEVEL.0..=JPEG_LEVEL.1).contains(&q) {
                return Err(CoreError::InvalidParam(format!("JPEG level {q} outside [10, 65]")));
            }
        }
        Ok(())
    }
}

fn odd_in(rng: &mut impl Rng, lo: u32, hi: u32) -> u32 {
    let count = (hi - lo) / 2 + 1;
    lo + 2 * rng.random_range(0..count)
}

/// Draws a parameter set; the result depends on `seed` only.
pub fn sample_params(seed: u64) -> DegradationParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = DegradationParams::identity();
    if rng.random_bool(P_BLUR) {
        p.blur_kind = [BlurKind::Gaussian, BlurKind::Average, BlurKind::Median, BlurKind::Motion][rng.random_range(0..4)];
        let (lo, hi) = blur_size_range(p.blur_kind).expect("blur family has a size range");
        p.blur_size = odd_in(&mut rng, lo as u32, hi as u32);
        if p.blur_kind == BlurKind::Motion {
            p.motion_angle_deg = rng.random_range(0.0..180.0);
        }
    }
    let side = rng.random_range(SCALED_SIDE.0..=SCALED_SIDE.1);
    p.scale = side as f64 / PIPELINE_SIZE as f64;
    p.downsample_interp = Interp::ALL[rng.random_range(0..4)];
    if rng.random_bool(P_NOISE) {
        p.noise_sigma = rng.random_range(0.0..=MAX_NOISE_SIGMA);
        p.noise_per_channel = rng.random_bool(P_NOISE_PER_CHANNEL);
    }
    p.noise_seed = rng.random();
    if rng.random_bool(P_JPEG) {
        p.jpeg_quality = Some(rng.random_range(JPEG_LEVEL.0..=JPEG_LEVEL.1));
    }
    p
}

/// Downsampled side length for a given scale.
pub fn scaled_side(side: usize, scale: f64) -> usize {
    ((side as f64 * scale).round() as usize).max(1)
}

/// Produces the low-quality image at 512²: blur, downsample, noise, JPEG,
/// bicubic resize back.
pub fn degrade(hq: &Image8, params: &DegradationParams) -> Result<Image8> {
    if hq.width() != PIPELINE_SIZE || hq.height() != PIPELINE_SIZE {
        return Err(CoreError::Shape(format!(
            "degrade expects {PIPELINE_SIZE}x{PIPELINE_SIZE} input, got {}x{}",
            hq.width(),
            hq.height()
        )));
    }
    params.validate()?;
    let blurred = blur(hq, params.blur_kind, params.blur_size as usize, params.motion_angle_deg)?;
    let side = scaled_side(PIPELINE_SIZE, params.scale);
    let small = resize_to(&blurred, side, side, params.downsample_interp)?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.noise_seed);
    let noisy = add_awgn(&small, params.noise_sigma, params.noise_per_channel, &mut rng)?;
    let compressed = match params.encoder_quality() {
        Some(q) => jpeg_roundtrip(&noisy, q)?,
        None => noisy,
    };
    resize_to(&compressed, PIPELINE_SIZE, PIPELINE_SIZE, Interp::Bicubic)
}
