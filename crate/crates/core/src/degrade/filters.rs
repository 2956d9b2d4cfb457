//! The individual factors of the degradation model, each a pure function on
//! [`Image8`].

use std::io::Cursor;

use image::codecs::jpeg::JpegEncoder;
use psfr_autograd::{resample, Filter, Resampler, Tensor};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::imaging::Image8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlurKind {
    None,
    Gaussian,
    Average,
    Median,
    Motion,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interp {
    Nearest,
    Bilinear,
    Bicubic,
    Area,
}

impl Interp {
    pub const ALL: [Interp; 4] = [Interp::Nearest, Interp::Bilinear, Interp::Bicubic, Interp::Area];

    pub fn filter(self) -> Filter {
        match self {
            Interp::Nearest => Filter::Nearest,
            Interp::Bilinear => Filter::Bilinear,
            Interp::Bicubic => Filter::Bicubic,
            Interp::Area => Filter::Area,
        }
    }
}

/// Reflect-101 border: `... 2 1 | 0 1 2 ... n-1 | n-2 ...`.
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut i = i.rem_euclid(period);
    if i >= n as isize {
        i = period - i;
    }
    i as usize
}

/// Gaussian sigma implied by a kernel size, as OpenCV derives it.
pub fn gaussian_sigma(size: usize) -> f64 {
    0.3 * ((size as f64 - 1.0) * 0.5 - 1.0) + 0.8
}

fn gaussian_kernel(size: usize) -> Vec<f32> {
    let sigma = gaussian_sigma(size);
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| (v / s) as f32).collect()
}

/// Reflect-101 padding of a `w x h` plane by `r` on every side.
fn pad_plane<V: Copy>(src: &[V], w: usize, h: usize, r: usize) -> Vec<V> {
    let (pw, ph) = (w + 2 * r, h + 2 * r);
    let mut out = Vec::with_capacity(pw * ph);
    for py in 0..ph {
        let row = &src[reflect(py as isize - r as isize, h) * w..][..w];
        out.extend((0..r).map(|i| row[reflect(i as isize - r as isize, w)]));
        out.extend_from_slice(row);
        out.extend((0..r).map(|i| row[reflect((w + i) as isize, w)]));
    }
    out
}

fn separable(img: &Image8, kernel: &[f32]) -> Image8 {
    let (w, h) = (img.width(), img.height());
    let r = kernel.len() / 2;
    let planes = img.to_planes();
    let mut out = vec![0f32; planes.len()];
    let pw = w + 2 * r;
    let mut tmp = vec![0f32; pw * (h + 2 * r)];
    for c in 0..3 {
        let padded = pad_plane(&planes[c * w * h..(c + 1) * w * h], w, h, r);
        tmp.iter_mut().for_each(|v| *v = 0.0);
        // horizontal pass over every padded row, keeping the vertical margin
        for (trow, prow) in tmp.chunks_mut(pw).zip(padded.chunks(pw)) {
            for (k, &kv) in kernel.iter().enumerate() {
                for (d, &s) in trow[..w].iter_mut().zip(&prow[k..k + w]) {
                    *d += kv * s;
                }
            }
        }
        let dst = &mut out[c * w * h..(c + 1) * w * h];
        for (y, drow) in dst.chunks_mut(w).enumerate() {
            for (k, &kv) in kernel.iter().enumerate() {
                let srow = &tmp[(y + k) * pw..][..w];
                for (d, &s) in drow.iter_mut().zip(srow) {
                    *d += kv * s;
                }
            }
        }
    }
    Image8::from_planes(w, h, &out)
}

/// Running-histogram median filter (exact on 8-bit data).
fn median(img: &Image8, size: usize) -> Image8 {
    let (w, h) = (img.width(), img.height());
    let r = size / 2;
    let pw = w + 2 * r;
    let half = (size * size / 2) as i64;
    let mut out = img.clone();
    for c in 0..3 {
        let plane: Vec<u8> = img.pixels().iter().skip(c).step_by(3).copied().collect();
        let padded = pad_plane(&plane, w, h, r);
        let dst = out.pixels_mut();
        for y in 0..h {
            let rows = &padded[y * pw..(y + size) * pw];
            let mut hist = [0i64; 256];
            for row in rows.chunks(pw) {
                for &v in &row[..size] {
                    hist[v as usize] += 1;
                }
            }
            let (mut m, mut below) = (0usize, 0i64);
            for x in 0..w {
                if x > 0 {
                    for row in rows.chunks(pw) {
                        let old = row[x - 1] as usize;
                        let new = row[x - 1 + size] as usize;
                        hist[old] -= 1;
                        hist[new] += 1;
                        if old < m {
                            below -= 1;
                        }
                        if new < m {
                            below += 1;
                        }
                    }
                }
                while below > half {
                    m -= 1;
                    below -= hist[m];
                }
                while below + hist[m] <= half {
                    below += hist[m];
                    m += 1;
                }
                dst[(y * w + x) * 3 + c] = m as u8;
            }
        }
    }
    out
}

/// Normalized `size x size` line kernel through the center at `angle_deg`
/// (counter-clockwise from the +x axis), as sparse `(dy, dx, weight)` taps.
pub fn motion_kernel(size: usize, angle_deg: f64) -> Vec<(isize, isize, f32)> {
    let c = (size as f64 - 1.0) / 2.0;
    let (s, co) = angle_deg.to_radians().sin_cos();
    let samples = 4 * size;
    let mut cells: Vec<(isize, isize)> = Vec::new();
    for i in 0..samples {
        let t = -c + 2.0 * c * i as f64 / (samples - 1) as f64;
        let x = (c + t * co).round() as isize;
        let y = (c - t * s).round() as isize;
        if !cells.contains(&(y, x)) {
            cells.push((y, x));
        }
    }
    let wgt = 1.0 / cells.len() as f32;
    let ci = c.round() as isize;
    cells.into_iter().map(|(y, x)| (y - ci, x - ci, wgt)).collect()
}

fn sparse_conv(img: &Image8, taps: &[(isize, isize, f32)]) -> Image8 {
    let (w, h) = (img.width(), img.height());
    let r = taps.iter().map(|&(dy, dx, _)| dy.unsigned_abs().max(dx.unsigned_abs())).max().unwrap_or(0);
    let pw = w + 2 * r;
    let planes = img.to_planes();
    let mut out = vec![0f32; planes.len()];
    for c in 0..3 {
        let padded = pad_plane(&planes[c * w * h..(c + 1) * w * h], w, h, r);
        let dst = &mut out[c * w * h..(c + 1) * w * h];
        for &(dy, dx, wt) in taps {
            let (oy, ox) = ((r as isize - dy) as usize, (r as isize - dx) as usize);
            for (y, drow) in dst.chunks_mut(w).enumerate() {
                let srow = &padded[(y + oy) * pw + ox..][..w];
                for (d, &s) in drow.iter_mut().zip(srow) {
                    *d += wt * s;
                }
            }
        }
    }
    Image8::from_planes(w, h, &out)
}

/// Valid kernel-size range for a blur family.
pub fn blur_size_range(kind: BlurKind) -> Option<(usize, usize)> {
    match kind {
        BlurKind::None => None,
        BlurKind::Gaussian | BlurKind::Average | BlurKind::Median => Some((3, 15)),
        BlurKind::Motion => Some((5, 25)),
    }
}

/// Applies one blur family. `angle_deg` is used by motion blur only.
pub fn blur(img: &Image8, kind: BlurKind, size: usize, angle_deg: f64) -> Result<Image8> {
    let Some((lo, hi)) = blur_size_range(kind) else {
        return Ok(img.clone());
    };
    if size < lo || size > hi {
        return Err(CoreError::InvalidParam(format!("{kind:?} blur size {size} outside [{lo}, {hi}]")));
    }
    if kind != BlurKind::Motion && size.is_multiple_of(2) {
        return Err(CoreError::InvalidParam(format!("{kind:?} blur size {size} must be odd")));
    }
    Ok(match kind {
        BlurKind::Gaussian => separable(img, &gaussian_kernel(size)),
        BlurKind::Average => separable(img, &vec![1.0 / size as f32; size]),
        BlurKind::Median => median(img, size),
        BlurKind::Motion => {
            // convolution flips the kernel; the line is symmetric about the center
            sparse_conv(img, &motion_kernel(size, angle_deg))
        }
        BlurKind::None => unreachable!(),
    })
}

/// Resizes to explicit dimensions.
pub fn resize_to(img: &Image8, width: usize, height: usize, interp: Interp) -> Result<Image8> {
    if width == 0 || height == 0 {
        return Err(CoreError::InvalidParam(format!("cannot resize to {width}x{height}")));
    }
    if (width, height) == (img.width(), img.height()) {
        return Ok(img.clone());
    }
    let (w, h) = (img.width(), img.height());
    let planes = Tensor::from_vec(&[1, 3, h, w], img.to_planes())?;
    let rows = Resampler::new(interp.filter(), h, height, false);
    let cols = Resampler::new(interp.filter(), w, width, false);
    let out = resample::apply(&planes, &rows, &cols);
    Ok(Image8::from_planes(width, height, out.data()))
}

/// Scales both sides by `factor` (rounded, at least one pixel).
pub fn rescale(img: &Image8, factor: f64, interp: Interp) -> Result<Image8> {
    if !(factor.is_finite() && factor > 0.0 && factor <= 16.0) {
        return Err(CoreError::InvalidParam(format!("rescale factor {factor} outside (0, 16]")));
    }
    let w = ((img.width() as f64 * factor).round() as usize).max(1);
    let h = ((img.height() as f64 * factor).round() as usize).max(1);
    resize_to(img, w, h, interp)
}

/// Additive white Gaussian noise of standard deviation `sigma` (8-bit
/// units), rounded and clamped. Without `per_channel` one noise plane is
/// shared by all channels.
pub fn add_awgn<R: Rng + ?Sized>(img: &Image8, sigma: f64, per_channel: bool, rng: &mut R) -> Result<Image8> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(CoreError::InvalidParam(format!("noise sigma {sigma} must be finite and non-negative")));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let normal = Normal::new(0.0, sigma).expect("valid sigma");
    let mut out = img.clone();
    for px in out.pixels_mut().chunks_mut(3) {
        let shared: f64 = if per_channel { 0.0 } else { normal.sample(rng) };
        for v in px.iter_mut() {
            let n = if per_channel { normal.sample(rng) } else { shared };
            *v = (*v as f64 + n).round().clamp(0.0, 255.0) as u8;
        }
    }
    Ok(out)
}

/// Encodes at encoder `quality` (1 = worst, 100 = best) and decodes back.
pub fn jpeg_roundtrip(img: &Image8, quality: u8) -> Result<Image8> {
    if !(1..=100).contains(&quality) {
        return Err(CoreError::InvalidParam(format!("JPEG quality {quality} outside [1, 100]")));
    }
    let mut buf = Vec::new();
    JpegEncoder::new_with_quality(&mut buf, quality).encode(
        img.pixels(),
        img.width() as u32,
        img.height() as u32,
        image::ExtendedColorType::Rgb8,
    )?;
    let decoded = image::load(Cursor::new(buf), image::ImageFormat::Jpeg)?.to_rgb8();
    Image8::new(img.width(), img.height(), decoded.into_raw())
}
