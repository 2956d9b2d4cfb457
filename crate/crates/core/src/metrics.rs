//! Full-reference image quality metrics and the Fréchet distance between
//! Gaussian feature statistics.

use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{CoreError, Result};
use crate::imaging::Image8;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const DYNAMIC_RANGE: f64 = 255.0;

/// Per-level exponents of the five-scale structural similarity.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

/// Largest negative eigenvalue (relative to the spectrum's scale) that is
/// treated as round-off and clipped to zero.
pub const PSD_TOLERANCE: f64 = 1e-6;

fn same_shape(a: &Image8, b: &Image8) -> Result<()> {
    if (a.width(), a.height()) != (b.width(), b.height()) {
        return Err(CoreError::Shape(format!(
            "{}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB over all channels; identical images give
/// `f64::INFINITY`.
pub fn psnr(a: &Image8, b: &Image8) -> Result<f64> {
    same_shape(a, b)?;
    let sse: f64 = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    if sse == 0.0 {
        return Ok(f64::INFINITY);
    }
    let mse = sse / a.pixels().len() as f64;
    Ok(10.0 * (DYNAMIC_RANGE * DYNAMIC_RANGE / mse).log10())
}

/// ITU-R BT.601 luma as a row-major plane.
pub fn luma(img: &Image8) -> Vec<f64> {
    img.pixels()
        .chunks_exact(3)
        .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
        .collect()
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let x = i as f64 - r;
            (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering with the SSIM window.
fn filter_valid(x: &[f64], w: usize, h: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let (ow, oh) = (w + 1 - n, h + 1 - n);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        let row = &x[y * w..(y + 1) * w];
        for ox in 0..ow {
            tmp[y * ow + ox] = k.iter().zip(&row[ox..ox + n]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for oy in 0..oh {
        for ox in 0..ow {
            out[oy * ow + ox] = k.iter().enumerate().map(|(i, kv)| kv * tmp[(oy + i) * ow + ox]).sum();
        }
    }
    (out, ow, oh)
}

/// Mean SSIM and mean contrast-structure term of two planes.
fn ssim_planes(a: &[f64], b: &[f64], w: usize, h: usize) -> (f64, f64) {
    let k = gaussian_window();
    let c1 = (SSIM_K1 * DYNAMIC_RANGE).powi(2);
    let c2 = (SSIM_K2 * DYNAMIC_RANGE).powi(2);
    let prod = |f: &dyn Fn(f64, f64) -> f64| a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect::<Vec<_>>();
    let (mu_a, ow, oh) = filter_valid(a, w, h, &k);
    let (mu_b, ..) = filter_valid(b, w, h, &k);
    let (aa, ..) = filter_valid(&prod(&|x, _| x * x), w, h, &k);
    let (bb, ..) = filter_valid(&prod(&|_, y| y * y), w, h, &k);
    let (ab, ..) = filter_valid(&prod(&|x, y| x * y), w, h, &k);
    let n = (ow * oh) as f64;
    let (mut ssim_sum, mut cs_sum) = (0.0, 0.0);
    for i in 0..ow * oh {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        let cs = (2.0 * cov + c2) / (va + vb + c2);
        ssim_sum += (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1) * cs;
        cs_sum += cs;
    }
    (ssim_sum / n, cs_sum / n)
}

/// Structural similarity on luma with an 11x11 Gaussian window (σ = 1.5).
pub fn ssim(a: &Image8, b: &Image8) -> Result<f64> {
    same_shape(a, b)?;
    if a.width() < SSIM_WINDOW || a.height() < SSIM_WINDOW {
        return Err(CoreError::Shape(format!("SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels")));
    }
    Ok(ssim_planes(&luma(a), &luma(b), a.width(), a.height()).0)
}

fn halve(x: &[f64], w: usize, h: usize) -> (Vec<f64>, usize, usize) {
    let (ow, oh) = (w / 2, h / 2);
    let mut out = Vec::with_capacity(ow * oh);
    for y in 0..oh {
        for xx in 0..ow {
            let i = 2 * y * w + 2 * xx;
            out.push((x[i] + x[i + 1] + x[i + w] + x[i + w + 1]) / 4.0);
        }
    }
    (out, ow, oh)
}

/// Five-scale SSIM with 2x2 average pooling between scales. Negative
/// contrast-structure terms are clamped to zero before exponentiation.
pub fn ms_ssim(a: &Image8, b: &Image8) -> Result<f64> {
    same_shape(a, b)?;
    let levels = MS_SSIM_WEIGHTS.len();
    let min_side = (1 << (levels - 1)) * SSIM_WINDOW;
    if a.width().min(a.height()) < min_side {
        return Err(CoreError::Shape(format!("MS-SSIM needs a side of at least {min_side} pixels")));
    }
    let (mut pa, mut pb) = (luma(a), luma(b));
    let (mut w, mut h) = (a.width(), a.height());
    let mut result = 1.0;
    for (level, &weight) in MS_SSIM_WEIGHTS.iter().enumerate() {
        let (s, cs) = ssim_planes(&pa, &pb, w, h);
        if level + 1 == levels {
            result *= s.max(0.0).powf(weight);
        } else {
            result *= cs.max(0.0).powf(weight);
            let (na, nw, nh) = halve(&pa, w, h);
            pb = halve(&pb, w, h).0;
            pa = na;
            (w, h) = (nw, nh);
        }
    }
    Ok(result)
}

/// Mean and covariance of a set of feature vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub n: usize,
}

impl FeatureStats {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>, n: usize) -> Result<Self> {
        let d = mean.len();
        if cov.shape() != (d, d) {
            return Err(CoreError::Shape(format!("covariance {:?} for dimension {d}", cov.shape())));
        }
        if n < 2 {
            return Err(CoreError::InvalidParam(format!("statistics need at least 2 samples, got {n}")));
        }
        if (&cov - cov.transpose()).abs().max() > 1e-8 {
            return Err(CoreError::InvalidParam("covariance is not symmetric".into()));
        }
        Ok(FeatureStats { mean, cov, n })
    }

    /// Sample mean and unbiased covariance of `rows`, each of length `d`.
    pub fn from_samples(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n < 2 {
            return Err(CoreError::InvalidParam(format!("statistics need at least 2 samples, got {n}")));
        }
        let d = rows[0].len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(CoreError::Shape("feature rows differ in length".into()));
        }
        let x = DMatrix::from_fn(n, d, |i, j| rows[i][j]);
        let mean = DVector::from_fn(d, |j, _| x.column(j).mean());
        let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
        let cov = (centered.transpose() * &centered) / (n - 1) as f64;
        let cov = (&cov + cov.transpose()) * 0.5;
        Self::new(mean, cov, n)
    }
}

/// Eigenvalues of a symmetric matrix with round-off negatives clipped to zero;
/// genuinely negative spectra are rejected.
fn clipped_eigen(m: DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let mut eig = SymmetricEigen::new(m);
    let scale = eig.eigenvalues.iter().fold(1.0f64, |a, &v| a.max(v.abs()));
    for v in eig.eigenvalues.iter_mut() {
        if *v < 0.0 {
            if *v < -PSD_TOLERANCE * scale {
                return Err(CoreError::InvalidParam(format!("matrix is not positive semidefinite (eigenvalue {v})")));
            }
            *v = 0.0;
        }
    }
    Ok(eig)
}

fn sqrt_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = clipped_eigen(m.clone())?;
    let s = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
    Ok(&eig.eigenvectors * s * eig.eigenvectors.transpose())
}

/// `‖μ1 − μ2‖² + tr(Σ1 + Σ2 − 2(Σ1Σ2)^{1/2})`. The trace of the cross term is
/// taken as `tr((√Σ1 Σ2 √Σ1)^{1/2})`, which has the same eigenvalues and stays
/// symmetric.
pub fn frechet_distance(s1: &FeatureStats, s2: &FeatureStats) -> Result<f64> {
    if s1.mean.len() != s2.mean.len() {
        return Err(CoreError::Shape(format!(
            "feature dimensions {} and {}",
            s1.mean.len(),
            s2.mean.len()
        )));
    }
    let diff = (&s1.mean - &s2.mean).norm_squared();
    let r1 = sqrt_psd(&s1.cov)?;
    clipped_eigen(s2.cov.clone())?;
    let m = &r1 * &s2.cov * &r1;
    let m = (&m + m.transpose()) * 0.5;
    let cross: f64 = clipped_eigen(m)?.eigenvalues.iter().map(|v| v.sqrt()).sum();
    Ok((diff + s1.cov.trace() + s2.cov.trace() - 2.0 * cross).max(0.0))
}

const FEATURE_MAGIC: &[u8; 8] = b"PSFRFEAT";

/// Writes `rows` as magic, `d`, `n` (u32 little-endian) then `n·d` f32 values.
pub fn write_features(path: &Path, rows: &[Vec<f32>]) -> Result<()> {
    let d = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != d) {
        return Err(CoreError::Shape("feature rows differ in length".into()));
    }
    let mut out = Vec::with_capacity(16 + rows.len() * d * 4);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&(d as u32).to_le_bytes());
    out.extend_from_slice(&(rows.len() as u32).to_le_bytes());
    for v in rows.iter().flatten() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, out).map_err(|e| CoreError::io(path, e))
}

pub fn read_features(path: &Path) -> Result<Vec<Vec<f32>>> {
    let bytes = std::fs::read(path).map_err(|e| CoreError::io(path, e))?;
    let bad = |msg: &str| CoreError::InvalidParam(format!("{}: {msg}", path.display()));
    if bytes.len() < 16 || &bytes[..8] != FEATURE_MAGIC {
        return Err(bad("not a feature file"));
    }
    let d = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let n = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let body = &bytes[16..];
    if body.len() != n * d * 4 {
        return Err(bad("length does not match header"));
    }
    let values: Vec<f32> = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
    Ok(if d == 0 { vec![Vec::new(); n] } else { values.chunks(d).map(<[f32]>::to_vec).collect() })
}
