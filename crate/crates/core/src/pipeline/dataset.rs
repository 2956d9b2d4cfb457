//! Training data: (HQ image, label map) pairs at 512², online degradation and
//! batch assembly.

use std::path::{Path, PathBuf};

use psfr_autograd::{Scalar, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::degrade::{degrade, resize_to, sample_params, DegradationParams, Interp};
use crate::error::{CoreError, Result};
use crate::imaging::{images_to_tensor, Image8, LabelMap, PIPELINE_SIZE};
use crate::seed::derive_seed;

/// Labels drawn by [`synthetic_face`].
pub const SYNTHETIC_CLASSES: [u8; 4] = [0, 1, 10, 13];

#[derive(Clone, Debug)]
pub struct Sample {
    pub hq: Image8,
    pub labels: LabelMap,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    samples: Vec<Sample>,
}

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

/// Image files of `dir`, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| CoreError::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| CoreError::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if path.is_file() && ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Brings an image to the 512² pipeline size.
pub fn to_pipeline_size(img: &Image8) -> Result<Image8> {
    let interp = if img.width() > PIPELINE_SIZE { Interp::Area } else { Interp::Bicubic };
    resize_to(img, PIPELINE_SIZE, PIPELINE_SIZE, interp)
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(CoreError::Dataset("dataset is empty".into()));
        }
        for (i, s) in samples.iter().enumerate() {
            let ok = s.hq.width() == PIPELINE_SIZE
                && s.hq.height() == PIPELINE_SIZE
                && s.labels.batch() == 1
                && s.labels.height() == PIPELINE_SIZE
                && s.labels.width() == PIPELINE_SIZE;
            if !ok {
                return Err(CoreError::Dataset(format!("sample {i} is not a 512x512 image/label pair")));
            }
        }
        Ok(Dataset { samples })
    }

    /// Reads `dir/images/*` with label maps at `dir/labels/<stem>.png`.
    /// Other sizes are resized to 512² (labels by nearest neighbour).
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let images = list_images(&dir.join("images"))?;
        let mut samples = Vec::with_capacity(images.len());
        for path in images {
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            let label_path = dir.join("labels").join(format!("{stem}.png"));
            if !label_path.is_file() {
                return Err(CoreError::Dataset(format!("{} has no label map", path.display())));
            }
            let hq = Image8::load(&path)?;
            let labels = LabelMap::load_png(&label_path)?;
            if (labels.width(), labels.height()) != (hq.width(), hq.height()) {
                return Err(CoreError::Dataset(format!("{}: label map size differs from image", label_path.display())));
            }
            samples.push(Sample {
                hq: to_pipeline_size(&hq)?,
                labels: labels.resize_nearest(PIPELINE_SIZE, PIPELINE_SIZE),
            });
        }
        Self::new(samples)
    }

    /// `n` procedurally drawn faces, see [`synthetic_face`].
    pub fn synthetic(n: usize, seed: u64) -> Result<Self> {
        Self::new((0..n as u64).map(|i| synthetic_face(derive_seed(seed, &[i]))).collect())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    /// Precomputes the training-resolution targets.
    pub fn prepare(&self, resolution: usize) -> Result<PreparedDataset> {
        let mut hq_small = Vec::with_capacity(self.len());
        let mut labels_small = Vec::with_capacity(self.len());
        for s in &self.samples {
            hq_small.push(resize_to(&s.hq, resolution, resolution, Interp::Area)?);
            labels_small.push(s.labels.resize_nearest(resolution, resolution));
        }
        Ok(PreparedDataset { base: self.clone(), resolution, hq_small, labels_small })
    }
}

fn inside(x: f64, y: f64, cx: f64, cy: f64, rx: f64, ry: f64) -> bool {
    let (dx, dy) = ((x - cx) / rx, (y - cy) / ry);
    dx * dx + dy * dy <= 1.0
}

fn channel(base: f64, shade: f64) -> u8 {
    (base + shade).round().clamp(0.0, 255.0) as u8
}

/// A face-like 512² image: background, skin ellipse, hair cap and mouth, each
/// with its own color, soft shading and a faint texture.
pub fn synthetic_face(seed: u64) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = PIPELINE_SIZE as f64;
    let mut color = |lo: [f64; 3], hi: [f64; 3]| -> [f64; 3] { std::array::from_fn(|c| rng.random_range(lo[c]..=hi[c])) };
    let bg = color([30.0; 3], [220.0; 3]);
    let skin = color([150.0, 110.0, 80.0], [240.0, 200.0, 170.0]);
    let hair = color([15.0; 3], [120.0, 100.0, 90.0]);
    let mouth = color([150.0, 40.0, 50.0], [220.0, 100.0, 110.0]);
    let cx = s / 2.0 + rng.random_range(-30.0..30.0);
    let cy = s * 0.55 + rng.random_range(-25.0..25.0);
    let rx = rng.random_range(120.0..160.0);
    let ry = rng.random_range(160.0..200.0);
    let hair_lift = rng.random_range(40.0..70.0);
    let mouth_w = rx * rng.random_range(0.3..0.45);
    let mouth_h = ry * rng.random_range(0.08..0.13);
    let freq = rng.random_range(0.05..0.12);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);

    let n = PIPELINE_SIZE;
    let mut img = Image8::filled(n, n, [0, 0, 0]);
    let mut labels = vec![0u8; n * n];
    for y in 0..n {
        for x in 0..n {
            let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
            let texture = 3.0 * (freq * fx + phase).sin() * (freq * fy).cos();
            let (label, rgb, shade) = if inside(fx, fy, cx, cy + ry * 0.55, mouth_w, mouth_h) {
                (10, mouth, texture)
            } else if inside(fx, fy, cx, cy, rx, ry) {
                let r = ((fx - cx) / rx).powi(2) + ((fy - cy) / ry).powi(2);
                (1, skin, texture - 18.0 * r)
            } else if fy < cy && inside(fx, fy, cx, cy - hair_lift, rx + 30.0, ry + 10.0) {
                (13, hair, 2.0 * texture)
            } else {
                (0, bg, texture + 12.0 * (fy / s - 0.5))
            };
            labels[y * n + x] = label;
            img.put(x, y, [channel(rgb[0], shade), channel(rgb[1], shade), channel(rgb[2], shade)]);
        }
    }
    Sample { hq: img, labels: LabelMap::new(1, n, n, labels).expect("synthetic labels are valid") }
}

/// A dataset with HQ targets and label maps cached at the training
/// resolution.
#[derive(Clone, Debug)]
pub struct PreparedDataset {
    base: Dataset,
    resolution: usize,
    hq_small: Vec<Image8>,
    labels_small: Vec<LabelMap>,
}

/// One training batch at the training resolution.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    pub lq: Tensor<T>,
    pub hq: Tensor<T>,
    pub labels: LabelMap,
    pub indices: Vec<usize>,
    pub params: Vec<DegradationParams>,
}

impl PreparedDataset {
    pub fn len(&self) -> usize {
        self.base.len()
    }

    pub fn is_empty(&self) -> bool {
        self.base.is_empty()
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn hq(&self, i: usize) -> &Image8 {
        &self.hq_small[i]
    }

    pub fn labels(&self, i: usize) -> &LabelMap {
        &self.labels_small[i]
    }

    /// Degrades sample `i` at 512² with `params` and brings the result to the
    /// training resolution.
    pub fn degraded(&self, i: usize, params: &DegradationParams) -> Result<Image8> {
        let lq = degrade(&self.base.samples[i].hq, params)?;
        resize_to(&lq, self.resolution, self.resolution, Interp::Area)
    }

    /// Sample index at position `k` of the epoch-wise shuffled stream.
    fn index_at(&self, seed: u64, k: u64) -> usize {
        let n = self.len() as u64;
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[k / n, 0x5EED])));
        order[(k % n) as usize]
    }

    /// Batch for `step`: samples come from a per-epoch shuffle and every slot
    /// draws fresh degradation parameters; both depend only on
    /// `(seed, step, slot)`.
    pub fn batch<T: Scalar>(&self, seed: u64, step: u64, size: usize) -> Result<Batch<T>> {
        let mut lq = Vec::with_capacity(size);
        let mut hq = Vec::with_capacity(size);
        let mut labels = Vec::with_capacity(size);
        let mut indices = Vec::with_capacity(size);
        let mut params = Vec::with_capacity(size);
        for slot in 0..size as u64 {
            let i = self.index_at(seed, step * size as u64 + slot);
            let p = sample_params(derive_seed(seed, &[step, slot]));
            lq.push(self.degraded(i, &p)?);
            hq.push(self.hq_small[i].clone());
            labels.push(self.labels_small[i].clone());
            indices.push(i);
            params.push(p);
        }
        Ok(Batch {
            lq: images_to_tensor(&lq)?,
            hq: images_to_tensor(&hq)?,
            labels: LabelMap::stack(&labels)?,
            indices,
            params,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_faces_use_four_classes() {
        let s = synthetic_face(3);
        let present = s.labels.present();
        let used: Vec<u8> = (0..19u8).filter(|&c| present[c as usize]).collect();
        assert_eq!(used, SYNTHETIC_CLASSES.to_vec());
        assert_eq!(synthetic_face(3).hq, s.hq);
        assert_ne!(synthetic_face(4).hq, s.hq);
    }

    #[test]
    fn batches_are_deterministic_and_cover_epochs() {
        let ds = Dataset::synthetic(4, 1).unwrap().prepare(32).unwrap();
        let a = ds.batch::<f32>(9, 0, 4).unwrap();
        let b = ds.batch::<f32>(9, 0, 4).unwrap();
        assert_eq!(a.lq, b.lq);
        let mut idx = a.indices.clone();
        idx.sort();
        assert_eq!(idx, vec![0, 1, 2, 3]);
        assert_eq!(a.lq.shape(), &[4, 3, 32, 32]);
        assert_eq!(a.labels.height(), 32);
    }

    #[test]
    fn empty_dataset_rejected() {
        assert!(matches!(Dataset::new(Vec::new()), Err(CoreError::Dataset(_))));
    }
}
