//! Inference: parse the LQ face, then generate the restoration.

use std::path::Path;

use psfr_autograd::{Scalar, Tensor};

use super::checkpoint::Checkpoint;
use super::train::{load_fpn, load_generator};
use crate::degrade::{resize_to, Interp};
use crate::error::{CoreError, Result};
use crate::generator::{build_input_pyramid, Generator, InputPyramid};
use crate::imaging::{images_to_tensor, tensor_to_images, Image8, LabelMap, PIPELINE_SIZE};
use crate::parsing::{argmax_labels, Fpn};

pub struct Restorer<T: Scalar> {
    fpn: Fpn<T>,
    gen: Generator<T>,
}

#[derive(Clone, Debug)]
pub struct Restoration<T> {
    pub hq: Image8,
    pub labels: LabelMap,
    pub pyramid: InputPyramid<T>,
}

impl<T: Scalar> Restorer<T> {
    pub fn new(fpn: Fpn<T>, gen: Generator<T>) -> Result<Self> {
        if fpn.config().in_resolution != gen.config().output_size() {
            return Err(CoreError::Checkpoint(format!(
                "parsing network runs at {}² but the generator produces {}²",
                fpn.config().in_resolution,
                gen.config().output_size()
            )));
        }
        Ok(Restorer { fpn, gen })
    }

    pub fn from_checkpoints(fpn: &Checkpoint<T>, gen: &Checkpoint<T>) -> Result<Self> {
        Self::new(load_fpn(fpn)?, load_generator(gen)?)
    }

    pub fn num_levels(&self) -> usize {
        self.gen.config().num_blocks
    }

    pub fn resolution(&self) -> usize {
        self.gen.config().output_size()
    }

    /// Brings `lq` to 512² bicubically, then (for smaller models) to the model
    /// resolution by area averaging.
    pub fn prepare_input(&self, lq: &Image8) -> Result<Tensor<T>> {
        let full = resize_to(lq, PIPELINE_SIZE, PIPELINE_SIZE, Interp::Bicubic)?;
        let r = self.resolution();
        let model_in = resize_to(&full, r, r, Interp::Area)?;
        images_to_tensor(std::slice::from_ref(&model_in))
    }

    /// Restores one image. Pyramid levels listed in `zero_levels` (0-based)
    /// are replaced by zeros before generation.
    pub fn restore(&self, lq: &Image8, zero_levels: &[usize]) -> Result<Restoration<T>> {
        let x = self.prepare_input(lq)?;
        let labels = self.fpn.parse(&x)?;
        let mut pyramid = build_input_pyramid(&x, &labels, self.gen.config())?;
        for &i in zero_levels {
            if i >= pyramid.levels.len() {
                return Err(CoreError::InvalidParam(format!(
                    "level {i} does not exist; the pyramid has {} levels",
                    pyramid.levels.len()
                )));
            }
            pyramid.zero_level(i);
        }
        let out = self.gen.generate_from(&pyramid)?;
        let hq = tensor_to_images(&out).remove(0);
        Ok(Restoration { hq, labels, pyramid })
    }
}

/// Writes every pyramid level as `lq_<k>.png` and `parse_<k>.png` (argmax of
/// the soft planes), numbering levels from 1 at the coarsest.
pub fn dump_pyramid<T: Scalar>(pyramid: &InputPyramid<T>, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    for (i, level) in pyramid.levels.iter().enumerate() {
        tensor_to_images(&level.lq)[0].save_png(&dir.join(format!("lq_{}.png", i + 1)))?;
        argmax_labels(&level.parse)?.save_png(0, &dir.join(format!("parse_{}.png", i + 1)))?;
    }
    Ok(())
}
