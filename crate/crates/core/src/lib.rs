//! Blind face restoration pipeline: degradation synthesis, face parsing, a
//! semantic-style-modulated progressive generator, multi-scale adversarial
//! training and evaluation metrics.

pub mod degrade;
pub mod discriminator;
mod error;
pub mod generator;
pub mod imaging;
pub mod losses;
pub mod metrics;
pub mod parsing;
pub mod pipeline;
pub mod seed;

pub use error::{CoreError, Result};

pub type Generator32 = generator::Generator<f32>;
pub type Generator64 = generator::Generator<f64>;
pub type Fpn32 = parsing::Fpn<f32>;
pub type Fpn64 = parsing::Fpn<f64>;
pub type Discriminator32 = discriminator::MultiScaleDiscriminator<f32>;
pub type Discriminator64 = discriminator::MultiScaleDiscriminator<f64>;
