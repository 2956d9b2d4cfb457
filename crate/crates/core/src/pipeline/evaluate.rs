//! Directory-level evaluation reports.

use std::fmt::Write as _;
use std::path::Path;

use super::dataset::list_images;
use crate::error::{CoreError, Result};
use crate::imaging::Image8;
use crate::metrics::{ms_ssim, psnr, ssim};

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
    /// Absent when the image is too small for five scales.
    pub ms_ssim: Option<f64>,
}

/// Scores every image in `pred` against the file of the same name in `gt`.
pub fn evaluate_dirs(pred: &Path, gt: &Path) -> Result<Vec<EvalRow>> {
    let files = list_images(pred)?;
    if files.is_empty() {
        return Err(CoreError::Dataset(format!("{} holds no images", pred.display())));
    }
    let mut rows = Vec::with_capacity(files.len());
    for path in files {
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        let gt_path = gt.join(&name);
        if !gt_path.is_file() {
            return Err(CoreError::Dataset(format!("no ground truth for {name} in {}", gt.display())));
        }
        let a = Image8::load(&path)?;
        let b = Image8::load(&gt_path)?;
        rows.push(EvalRow { psnr: psnr(&a, &b)?, ssim: ssim(&a, &b)?, ms_ssim: ms_ssim(&a, &b).ok(), name });
    }
    Ok(rows)
}

/// CSV with one row per image and a final `mean` row. Infinite PSNR values
/// are excluded from the mean.
pub fn report_csv(rows: &[EvalRow]) -> String {
    let mut out = String::from("file,psnr,ssim,ms_ssim\n");
    let fmt_opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.6}"));
    for r in rows {
        let _ = writeln!(out, "{},{:.6},{:.6},{}", r.name, r.psnr, r.ssim, fmt_opt(r.ms_ssim));
    }
    let mean = |vals: Vec<f64>| (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64);
    let p = mean(rows.iter().map(|r| r.psnr).filter(|v| v.is_finite()).collect());
    let s = mean(rows.iter().map(|r| r.ssim).collect());
    let m = mean(rows.iter().filter_map(|r| r.ms_ssim).collect());
    let _ = writeln!(out, "mean,{},{},{}", fmt_opt(p), fmt_opt(s), fmt_opt(m));
    out
}
