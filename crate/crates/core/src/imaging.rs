//! 8-bit image and label-map carriers, and their conversion to tensors.

use std::path::Path;

use psfr_autograd::{lit, Scalar, Tensor};

use crate::error::{CoreError, Result};

/// Number of semantic classes; label 0 is background.
pub const NUM_CLASSES: usize = 19;

/// Side length of pipeline images.
pub const PIPELINE_SIZE: usize = 512;

/// Interleaved 8-bit RGB image.
#[derive(Clone, PartialEq, Eq)]
pub struct Image8 {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl std::fmt::Debug for Image8 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Image8({}x{})", self.width, self.height)
    }
}

impl Image8 {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height * 3 {
            return Err(CoreError::Shape(format!(
                "{} bytes for a {}x{} RGB image",
                pixels.len(),
                width,
                height
            )));
        }
        Ok(Image8 { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let pixels = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Image8 { width, height, pixels }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn put(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    /// Channel planes as floats in `[0, 255]`: `[3][H*W]` flattened.
    pub fn to_planes(&self) -> Vec<f32> {
        let n = self.width * self.height;
        let mut out = vec![0.0; 3 * n];
        for (i, px) in self.pixels.chunks(3).enumerate() {
            for c in 0..3 {
                out[c * n + i] = px[c] as f32;
            }
        }
        out
    }

    /// Inverse of [`Image8::to_planes`], rounding and clamping to `[0, 255]`.
    pub fn from_planes(width: usize, height: usize, planes: &[f32]) -> Self {
        let n = width * height;
        assert_eq!(planes.len(), 3 * n, "plane buffer size");
        let mut pixels = vec![0u8; 3 * n];
        for i in 0..n {
            for c in 0..3 {
                pixels[i * 3 + c] = planes[c * n + i].round().clamp(0.0, 255.0) as u8;
            }
        }
        Image8 { width, height, pixels }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| CoreError::Image { path: path.into(), source })?;
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        Image8::new(w as usize, h as usize, rgb.into_raw())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        image::save_buffer_with_format(
            path,
            &self.pixels,
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::Rgb8,
            image::ImageFormat::Png,
        )
        .map_err(|source| CoreError::Image { path: path.into(), source })
    }
}

/// Batched per-pixel class indices `B x H x W`, every value in `[0, 18]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    batch: usize,
    height: usize,
    width: usize,
    labels: Vec<u8>,
}

impl LabelMap {
    pub fn new(batch: usize, height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != batch * height * width {
            return Err(CoreError::Shape(format!(
                "{} labels for a {}x{}x{} map",
                labels.len(),
                batch,
                height,
                width
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= NUM_CLASSES) {
            return Err(CoreError::Label(format!("label {bad} outside [0, 18]")));
        }
        Ok(LabelMap { batch, height, width, labels })
    }

    pub fn filled(batch: usize, height: usize, width: usize, label: u8) -> Result<Self> {
        Self::new(batch, height, width, vec![label; batch * height * width])
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn sample(&self, b: usize) -> &[u8] {
        let n = self.height * self.width;
        &self.labels[b * n..(b + 1) * n]
    }

    pub fn single(&self, b: usize) -> LabelMap {
        LabelMap { batch: 1, height: self.height, width: self.width, labels: self.sample(b).to_vec() }
    }

    /// Concatenates maps of equal spatial size along the batch axis.
    pub fn stack(maps: &[LabelMap]) -> Result<Self> {
        let first = maps.first().ok_or_else(|| CoreError::Shape("empty label batch".into()))?;
        let mut labels = Vec::new();
        let mut batch = 0;
        for m in maps {
            if (m.height, m.width) != (first.height, first.width) {
                return Err(CoreError::Shape("label maps differ in size".into()));
            }
            labels.extend_from_slice(&m.labels);
            batch += m.batch;
        }
        Ok(LabelMap { batch, height: first.height, width: first.width, labels })
    }

    /// Nearest-neighbour resampling (half-pixel centers).
    pub fn resize_nearest(&self, height: usize, width: usize) -> LabelMap {
        let mut labels = Vec::with_capacity(self.batch * height * width);
        for b in 0..self.batch {
            let src = self.sample(b);
            for y in 0..height {
                let sy = ((y as f64 + 0.5) * self.height as f64 / height as f64).floor() as usize;
                let sy = sy.min(self.height - 1);
                for x in 0..width {
                    let sx = ((x as f64 + 0.5) * self.width as f64 / width as f64).floor() as usize;
                    labels.push(src[sy * self.width + sx.min(self.width - 1)]);
                }
            }
        }
        LabelMap { batch: self.batch, height, width, labels }
    }

    /// One-hot planes `[B, 19, H, W]`.
    pub fn one_hot<T: Scalar>(&self) -> Tensor<T> {
        let plane = self.height * self.width;
        let mut t = Tensor::zeros(&[self.batch, NUM_CLASSES, self.height, self.width]);
        let d = t.data_mut();
        for b in 0..self.batch {
            for (p, &l) in self.sample(b).iter().enumerate() {
                d[(b * NUM_CLASSES + l as usize) * plane + p] = T::one();
            }
        }
        t
    }

    /// Which classes occur anywhere in the batch.
    pub fn present(&self) -> [bool; NUM_CLASSES] {
        let mut seen = [false; NUM_CLASSES];
        for &l in &self.labels {
            seen[l as usize] = true;
        }
        seen
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| CoreError::Image { path: path.into(), source })?;
        let gray = img.to_luma8();
        let (w, h) = gray.dimensions();
        LabelMap::new(1, h as usize, w as usize, gray.into_raw())
    }

    /// Writes sample `b` as an 8-bit grayscale PNG whose values are class indices.
    pub fn save_png(&self, b: usize, path: &Path) -> Result<()> {
        image::save_buffer_with_format(
            path,
            self.sample(b),
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::L8,
            image::ImageFormat::Png,
        )
        .map_err(|source| CoreError::Image { path: path.into(), source })
    }
}

/// Stacks images into `[B, 3, H, W]` with values mapped to `[-1, 1]`.
pub fn images_to_tensor<T: Scalar>(images: &[Image8]) -> Result<Tensor<T>> {
    let first = images.first().ok_or_else(|| CoreError::Shape("empty image batch".into()))?;
    let (w, h) = (first.width, first.height);
    let n = w * h;
    let mut data = Vec::with_capacity(images.len() * 3 * n);
    for img in images {
        if (img.width, img.height) != (w, h) {
            return Err(CoreError::Shape("images in a batch differ in size".into()));
        }
        for c in 0..3 {
            data.extend(img.pixels.iter().skip(c).step_by(3).map(|&v| lit::<T>(v as f64 / 127.5 - 1.0)));
        }
    }
    Ok(Tensor::from_vec(&[images.len(), 3, h, w], data)?)
}

/// Inverse of [`images_to_tensor`], clamping to the 8-bit range.
pub fn tensor_to_images<T: Scalar>(t: &Tensor<T>) -> Vec<Image8> {
    let (b, c, h, w) = t.dims4();
    assert_eq!(c, 3, "expected RGB tensor");
    let n = h * w;
    (0..b)
        .map(|i| {
            let planes: Vec<f32> = t.data()[i * 3 * n..(i + 1) * 3 * n]
                .iter()
                .map(|&v| ((v.to_f64().unwrap_or(0.0) + 1.0) * 127.5) as f32)
                .collect();
            Image8::from_planes(w, h, &planes)
        })
        .collect()
}
