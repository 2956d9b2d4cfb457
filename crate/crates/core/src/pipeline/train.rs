//! Training loops for the parsing network and the adversarial generator.
//!
//! All randomness is derived from the configured seed and the step index, so
//! a run resumed from a checkpoint replays the uninterrupted run exactly.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use psfr_autograd::{Adam, AdamConfig, Graph, Mode, ParamSet, Scalar, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{load_tensor_file, Checkpoint, CheckpointKind};
use super::config::{ExtractorKind, LabelSource, PipelineConfig};
use super::dataset::PreparedDataset;
use crate::discriminator::MultiScaleDiscriminator;
use crate::error::{CoreError, Result};
use crate::generator::{build_input_pyramid, Generator};
use crate::imaging::LabelMap;
use crate::losses::{
    gan_d_loss, gan_g_loss, reconstruction_loss, semantic_style_loss, total_g_loss, FeatureExtractor, VggExtractor,
};
use crate::parsing::{fpn_loss, Fpn};
use crate::seed::derive_seed;

const TAG_FPN_INIT: u64 = 1;
const TAG_GEN_INIT: u64 = 2;
const TAG_DISC_INIT: u64 = 3;
const TAG_EXTRACTOR_INIT: u64 = 4;
const TAG_FPN_DATA: u64 = 5;
const TAG_PSFR_DATA: u64 = 6;

fn init_rng(seed: u64, tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, &[tag]))
}

fn config_of<T: Scalar>(ckpt: &Checkpoint<T>) -> Result<PipelineConfig> {
    PipelineConfig::from_toml(&ckpt.config).map_err(|e| CoreError::Checkpoint(format!("embedded config: {e}")))
}

fn load_params<T: Scalar>(ps: &mut ParamSet<T>, ckpt: &Checkpoint<T>, section: &str) -> Result<()> {
    ps.load_named(ckpt.section(section)?)
        .map_err(|e| CoreError::Checkpoint(format!("section {section:?}: {e}")))
}

fn load_adam<T: Scalar>(adam: &mut Adam<T>, ps: &ParamSet<T>, ckpt: &Checkpoint<T>, section: &str) -> Result<()> {
    adam.load_state(ps, ckpt.section(section)?)
        .map_err(|e| CoreError::Checkpoint(format!("section {section:?}: {e}")))
}

fn named<T: Scalar>(ps: &ParamSet<T>) -> Vec<(String, Tensor<T>)> {
    ps.named().map(|(n, t)| (n.to_string(), t.clone())).collect()
}

/// Rebuilds the parsing network stored in an FPN checkpoint.
pub fn load_fpn<T: Scalar>(ckpt: &Checkpoint<T>) -> Result<Fpn<T>> {
    ckpt.expect_kind(CheckpointKind::Fpn)?;
    let cfg = config_of(ckpt)?;
    let mut fpn = Fpn::new(cfg.fpn, &mut ChaCha8Rng::seed_from_u64(0))?;
    load_params(fpn.params_mut(), ckpt, "fpn")?;
    Ok(fpn)
}

/// Rebuilds the generator stored in a PSFR checkpoint.
pub fn load_generator<T: Scalar>(ckpt: &Checkpoint<T>) -> Result<Generator<T>> {
    ckpt.expect_kind(CheckpointKind::Psfr)?;
    let cfg = config_of(ckpt)?;
    let mut gen = Generator::new(cfg.generator, &mut ChaCha8Rng::seed_from_u64(0))?;
    load_params(gen.params_mut(), ckpt, "generator")?;
    Ok(gen)
}

/// Output locations of a training run.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub checkpoint: Option<PathBuf>,
    /// Loss CSV; appended to when resuming past step 0.
    pub log: Option<PathBuf>,
}

struct CsvLog {
    out: Option<BufWriter<File>>,
}

impl CsvLog {
    fn open(path: Option<&Path>, header: &str, append: bool) -> Result<Self> {
        let Some(path) = path else { return Ok(CsvLog { out: None }) };
        let fresh = !append || !path.exists();
        let file = if fresh {
            File::create(path)
        } else {
            OpenOptions::new().append(true).open(path)
        }
        .map_err(|e| CoreError::io(path, e))?;
        let mut out = BufWriter::new(file);
        if fresh {
            writeln!(out, "{header}").map_err(|e| CoreError::io(path, e))?;
        }
        Ok(CsvLog { out: Some(out) })
    }

    fn row(&mut self, fields: &[String]) -> Result<()> {
        if let Some(out) = &mut self.out {
            writeln!(out, "{}", fields.join(",")).and_then(|_| out.flush()).map_err(|e| CoreError::io("loss log", e))?;
        }
        Ok(())
    }
}

fn to_f64<T: Scalar>(g: &Graph<T>, v: psfr_autograd::Var) -> f64 {
    g.value(v).item().to_f64().unwrap_or(f64::NAN)
}

fn ensure_finite(step: u64, value: f64) -> Result<()> {
    if !value.is_finite() {
        return Err(CoreError::InvalidParam(format!("loss diverged at step {step}")));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FpnStepLog {
    pub step: u64,
    pub l_parse: f64,
    pub l_pix: f64,
    pub total: f64,
}

pub struct FpnTrainer<T: Scalar> {
    config: PipelineConfig,
    fpn: Fpn<T>,
    adam: Adam<T>,
    step: u64,
}

impl<T: Scalar> FpnTrainer<T> {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let fpn = Fpn::new(config.fpn.clone(), &mut init_rng(config.train.seed, TAG_FPN_INIT))?;
        let t = &config.train;
        let adam = Adam::new(AdamConfig::new(t.lr_fpn, t.adam_beta1_fpn, t.adam_beta2), fpn.params());
        Ok(FpnTrainer { config, fpn, adam, step: 0 })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint<T>) -> Result<Self> {
        ckpt.expect_kind(CheckpointKind::Fpn)?;
        let mut trainer = Self::new(config_of(ckpt)?)?;
        load_params(trainer.fpn.params_mut(), ckpt, "fpn")?;
        load_adam(&mut trainer.adam, trainer.fpn.params(), ckpt, "fpn.adam")?;
        trainer.step = ckpt.step;
        Ok(trainer)
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn fpn(&self) -> &Fpn<T> {
        &self.fpn
    }

    pub fn steps_done(&self) -> u64 {
        self.step
    }

    pub fn checkpoint(&self) -> Checkpoint<T> {
        Checkpoint {
            kind: CheckpointKind::Fpn,
            config: self.config.to_toml(),
            step: self.step,
            sections: vec![
                ("fpn".into(), named(self.fpn.params())),
                ("fpn.adam".into(), self.adam.state(self.fpn.params())),
            ],
        }
    }

    /// One optimization step on a freshly degraded batch.
    pub fn step(&mut self, data: &PreparedDataset) -> Result<FpnStepLog> {
        let t = &self.config.train;
        let batch = data.batch::<T>(derive_seed(t.seed, &[TAG_FPN_DATA]), self.step, t.batch_fpn)?;
        let mut g = Graph::new();
        let p = self.fpn.bind(&mut g, Mode::Train, true);
        let x = g.input(batch.lq);
        let out = self.fpn.forward(&mut g, &p, x)?;
        let gt = g.input(batch.hq);
        let loss = fpn_loss(&mut g, out.logits, out.restored, &batch.labels, gt)?;
        let log = FpnStepLog {
            step: self.step,
            l_parse: to_f64(&g, loss.parse),
            l_pix: to_f64(&g, loss.pixel),
            total: to_f64(&g, loss.total),
        };
        ensure_finite(self.step, log.total)?;
        let grads = g.backward(loss.total)?;
        let grads = p.grads(&grads);
        let updates = p.into_updates();
        self.fpn.params_mut().apply_updates(updates);
        self.adam.step(self.fpn.params_mut(), &grads);
        self.step += 1;
        Ok(log)
    }

    /// Trains until `max_steps`, logging every step and checkpointing as
    /// configured.
    pub fn run(&mut self, data: &PreparedDataset, opts: &RunOptions) -> Result<Vec<FpnStepLog>> {
        let mut csv = CsvLog::open(opts.log.as_deref(), "step,l_parse,l_pix,total", self.step > 0)?;
        let mut logs = Vec::new();
        while self.step < self.config.train.max_steps {
            let l = self.step(data)?;
            csv.row(&[l.step.to_string(), l.l_parse.to_string(), l.l_pix.to_string(), l.total.to_string()])?;
            log::info!("fpn step {} loss {:.5}", l.step, l.total);
            logs.push(l);
            self.maybe_save(opts, false)?;
        }
        self.maybe_save(opts, true)?;
        Ok(logs)
    }

    fn maybe_save(&self, opts: &RunOptions, last: bool) -> Result<()> {
        let every = self.config.train.checkpoint_every;
        match &opts.checkpoint {
            Some(path) if last || (every > 0 && self.step.is_multiple_of(every)) => self.checkpoint().save(path),
            _ => Ok(()),
        }
    }
}

/// Sub-step of an adversarial training step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Disc,
    Gen,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PsfrStepLog {
    pub step: u64,
    pub l_ss: f64,
    pub l_rec: f64,
    pub l_g: f64,
    pub l_d: f64,
    /// Weighted generator objective.
    pub total: f64,
    /// Order in which the two networks were updated.
    pub trace: Vec<Phase>,
}

pub struct PsfrTrainer<T: Scalar> {
    config: PipelineConfig,
    gen: Generator<T>,
    disc: MultiScaleDiscriminator<T>,
    adam_g: Adam<T>,
    adam_d: Adam<T>,
    extractor: VggExtractor<T>,
    fpn: Option<Fpn<T>>,
    step: u64,
}

impl<T: Scalar> PsfrTrainer<T> {
    /// `fpn` supplies parsing maps when the configuration asks for predicted
    /// labels.
    pub fn new(config: PipelineConfig, fpn: Option<Fpn<T>>) -> Result<Self> {
        config.validate()?;
        let t = &config.train;
        if t.label_source == LabelSource::Fpn && fpn.is_none() {
            return Err(CoreError::Config("label_source = \"fpn\" needs a parsing checkpoint".into()));
        }
        if let Some(f) = &fpn {
            if f.config().in_resolution != t.resolution {
                return Err(CoreError::Config(format!(
                    "parsing network runs at {}² but training runs at {}²",
                    f.config().in_resolution,
                    t.resolution
                )));
            }
        }
        let gen = Generator::new(config.generator.clone(), &mut init_rng(t.seed, TAG_GEN_INIT))?;
        let disc = MultiScaleDiscriminator::new(config.discriminator.clone(), &mut init_rng(t.seed, TAG_DISC_INIT))?;
        let adam_g = Adam::new(AdamConfig::new(t.lr_g, t.adam_beta1_psfr, t.adam_beta2), gen.params());
        let adam_d = Adam::new(AdamConfig::new(t.lr_d, t.adam_beta1_psfr, t.adam_beta2), disc.params());
        let mut rng = init_rng(t.seed, TAG_EXTRACTOR_INIT);
        let mut extractor = match t.extractor {
            ExtractorKind::Tiny => VggExtractor::tiny(&mut rng),
            ExtractorKind::Vgg19 => VggExtractor::vgg19(&mut rng),
        };
        match &t.extractor_weights {
            Some(path) => extractor.load_weights(&load_tensor_file(path)?)?,
            None if t.extractor == ExtractorKind::Vgg19 => {
                log::warn!("no extractor weights given; the style loss uses a randomly initialized network")
            }
            None => {}
        }
        Ok(PsfrTrainer { config, gen, disc, adam_g, adam_d, extractor, fpn, step: 0 })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint<T>, fpn: Option<Fpn<T>>) -> Result<Self> {
        ckpt.expect_kind(CheckpointKind::Psfr)?;
        let mut tr = Self::new(config_of(ckpt)?, fpn)?;
        load_params(tr.gen.params_mut(), ckpt, "generator")?;
        load_params(tr.disc.params_mut(), ckpt, "discriminator")?;
        load_adam(&mut tr.adam_g, tr.gen.params(), ckpt, "generator.adam")?;
        load_adam(&mut tr.adam_d, tr.disc.params(), ckpt, "discriminator.adam")?;
        tr.step = ckpt.step;
        Ok(tr)
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn generator(&self) -> &Generator<T> {
        &self.gen
    }

    pub fn discriminator(&self) -> &MultiScaleDiscriminator<T> {
        &self.disc
    }

    pub fn extractor(&self) -> &VggExtractor<T> {
        &self.extractor
    }

    pub fn steps_done(&self) -> u64 {
        self.step
    }

    pub fn checkpoint(&self) -> Checkpoint<T> {
        Checkpoint {
            kind: CheckpointKind::Psfr,
            config: self.config.to_toml(),
            step: self.step,
            sections: vec![
                ("generator".into(), named(self.gen.params())),
                ("generator.adam".into(), self.adam_g.state(self.gen.params())),
                ("discriminator".into(), named(self.disc.params())),
                ("discriminator.adam".into(), self.adam_d.state(self.disc.params())),
            ],
        }
    }

    /// Parsing maps for a batch according to the configured label source.
    pub fn labels_for(&self, lq: &Tensor<T>, gt: &LabelMap) -> Result<LabelMap> {
        match (self.config.train.label_source, &self.fpn) {
            (LabelSource::Fpn, Some(fpn)) => fpn.parse(lq),
            _ => Ok(gt.clone()),
        }
    }

    /// One generator forward, then a discriminator update on the detached
    /// fake, then a generator update through the updated discriminator.
    pub fn step(&mut self, data: &PreparedDataset) -> Result<PsfrStepLog> {
        let t = self.config.train.clone();
        let batch = data.batch::<T>(derive_seed(t.seed, &[TAG_PSFR_DATA]), self.step, t.batch_psfr)?;
        let labels = self.labels_for(&batch.lq, &batch.labels)?;
        self.gen.power_iterate(1);
        self.disc.power_iterate(1);
        let pyramid = build_input_pyramid(&batch.lq, &labels, self.gen.config())?;
        let mut trace = Vec::with_capacity(2);

        let mut gg = Graph::new();
        let pg = self.gen.bind(&mut gg, true);
        let fake = self.gen.forward(&mut gg, &pg, &pyramid)?.image;

        let l_d = {
            let mut gd = Graph::new();
            let pd = self.disc.bind(&mut gd, true);
            let real = gd.input(batch.hq.clone());
            let fake_d = gd.input(gg.value(fake).clone());
            let real_scores: Vec<_> = self.disc.forward_all(&mut gd, &pd, real).into_iter().map(|o| o.score).collect();
            let fake_scores: Vec<_> = self.disc.forward_all(&mut gd, &pd, fake_d).into_iter().map(|o| o.score).collect();
            let loss = gan_d_loss(&mut gd, &real_scores, &fake_scores)?;
            let l_d = to_f64(&gd, loss);
            ensure_finite(self.step, l_d)?;
            let grads = pd.grads(&gd.backward(loss)?);
            drop(pd);
            self.adam_d.step(self.disc.params_mut(), &grads);
            trace.push(Phase::Disc);
            l_d
        };

        let pdg = self.disc.bind(&mut gg, false);
        let real = gg.input(batch.hq);
        let outs_fake = self.disc.forward_all(&mut gg, &pdg, fake);
        let outs_real = self.disc.forward_all(&mut gg, &pdg, real);
        let l_ss = semantic_style_loss(&mut gg, fake, real, &labels, &self.extractor as &dyn FeatureExtractor<T>)?;
        let feats_fake: Vec<_> = outs_fake.iter().map(|o| o.features.clone()).collect();
        let feats_real: Vec<_> = outs_real.iter().map(|o| o.features.clone()).collect();
        let l_rec = reconstruction_loss(&mut gg, fake, real, &feats_fake, &feats_real)?;
        let scores: Vec<_> = outs_fake.iter().map(|o| o.score).collect();
        let l_g = gan_g_loss(&mut gg, &scores);
        let total = total_g_loss(&mut gg, l_ss, l_rec, l_g, &t.weights);
        let log = PsfrStepLog {
            step: self.step,
            l_ss: to_f64(&gg, l_ss),
            l_rec: to_f64(&gg, l_rec),
            l_g: to_f64(&gg, l_g),
            l_d,
            total: to_f64(&gg, total),
            trace: Vec::new(),
        };
        ensure_finite(self.step, log.total)?;
        let grads = pg.grads(&gg.backward(total)?);
        drop(pdg);
        drop(pg);
        self.adam_g.step(self.gen.params_mut(), &grads);
        trace.push(Phase::Gen);
        self.step += 1;
        Ok(PsfrStepLog { trace, ..log })
    }

    pub fn run(&mut self, data: &PreparedDataset, opts: &RunOptions) -> Result<Vec<PsfrStepLog>> {
        let mut csv = CsvLog::open(opts.log.as_deref(), "step,l_ss,l_rec,l_g,l_d,total", self.step > 0)?;
        let mut logs = Vec::new();
        while self.step < self.config.train.max_steps {
            let l = self.step(data)?;
            csv.row(&[
                l.step.to_string(),
                l.l_ss.to_string(),
                l.l_rec.to_string(),
                l.l_g.to_string(),
                l.l_d.to_string(),
                l.total.to_string(),
            ])?;
            log::info!("psfr step {} total {:.5} d {:.5}", l.step, l.total, l.l_d);
            logs.push(l);
            self.maybe_save(opts, false)?;
        }
        self.maybe_save(opts, true)?;
        Ok(logs)
    }

    fn maybe_save(&self, opts: &RunOptions, last: bool) -> Result<()> {
        let every = self.config.train.checkpoint_every;
        match &opts.checkpoint {
            Some(path) if last || (every > 0 && self.step.is_multiple_of(every)) => self.checkpoint().save(path),
            _ => Ok(()),
        }
    }
}
