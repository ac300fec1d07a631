//! Image-quality metrics and the model-vs-baseline comparison report.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{ImageGrid, SampleTriple};

pub use crate::tensor::fft::{radial_spectrum_checked, RadialSpectrum};

/// PSNR outcome; a zero-MSE pair is reported as a distinguished
/// "identical" outcome rather than an unbounded number.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Psnr {
    Identical,
    Db(f64),
}

impl Psnr {
    pub fn db(&self) -> Option<f64> {
        match self {
            Psnr::Db(v) => Some(*v),
            Psnr::Identical => None,
        }
    }
}

/// 10 log10(peak^2 / MSE) with peak taken from the reference image.
pub fn psnr(x: &ImageGrid, reference: &ImageGrid) -> Result<Psnr> {
    if x.size() != reference.size() {
        return Err(Error::Shape("psnr: image sizes differ".into()));
    }
    let peak = reference.max();
    if peak <= 0.0 {
        return Err(Error::Invalid("psnr: reference is all-zero".into()));
    }
    let n = x.data().len() as f64;
    let mse: f64 = x
        .data()
        .iter()
        .zip(reference.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(Psnr::Identical);
    }
    Ok(Psnr::Db(10.0 * (peak * peak / mse).log10()))
}

/// ||x - ref||^2 / ||ref||^2.
pub fn nmse(x: &ImageGrid, reference: &ImageGrid) -> Result<f64> {
    if x.size() != reference.size() {
        return Err(Error::Shape("nmse: image sizes differ".into()));
    }
    let den: f64 = reference.data().iter().map(|v| v * v).sum();
    if den == 0.0 {
        return Err(Error::Invalid("nmse: reference has zero norm".into()));
    }
    let num: f64 = x
        .data()
        .iter()
        .zip(reference.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(num / den)
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        *v = (-((i as f64 - c) * (i as f64 - c)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Horizontal-then-vertical separable filter, valid region only.
fn filter_valid(img: &[f64], size: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let out_size = size - SSIM_WINDOW + 1;
    let mut rows = vec![0.0; size * out_size];
    for y in 0..size {
        for x in 0..out_size {
            let mut acc = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                acc += kv * img[y * size + x + i];
            }
            rows[y * out_size + x] = acc;
        }
    }
    let mut out = vec![0.0; out_size * out_size];
    for y in 0..out_size {
        for x in 0..out_size {
            let mut acc = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                acc += kv * rows[(y + i) * out_size + x];
            }
            out[y * out_size + x] = acc;
        }
    }
    out
}

/// Mean local SSIM over an 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
/// K2 = 0.03, dynamic range = max(ref) - min(ref). Windows are evaluated
/// wherever they fit entirely inside the image (valid region).
pub fn ssim(x: &ImageGrid, reference: &ImageGrid) -> Result<f64> {
    if x.size() != reference.size() {
        return Err(Error::Shape("ssim: image sizes differ".into()));
    }
    let size = x.size();
    if size < SSIM_WINDOW {
        return Err(Error::Invalid(format!(
            "ssim: image size {size} below window {SSIM_WINDOW}"
        )));
    }
    let lo = reference.data().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = reference.max();
    let range = hi - lo;
    if range <= 0.0 {
        return Err(Error::Invalid("ssim: constant reference image".into()));
    }
    let c1 = (SSIM_K1 * range) * (SSIM_K1 * range);
    let c2 = (SSIM_K2 * range) * (SSIM_K2 * range);

    let k = gaussian_kernel();
    let xx: Vec<f64> = x.data().iter().map(|v| v * v).collect();
    let yy: Vec<f64> = reference.data().iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x
        .data()
        .iter()
        .zip(reference.data())
        .map(|(a, b)| a * b)
        .collect();
    let mu_x = filter_valid(x.data(), size, &k);
    let mu_y = filter_valid(reference.data(), size, &k);
    let m_xx = filter_valid(&xx, size, &k);
    let m_yy = filter_valid(&yy, size, &k);
    let m_xy = filter_valid(&xy, size, &k);

    let mut total = 0.0;
    for i in 0..mu_x.len() {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let var_x = m_xx[i] - mx * mx;
        let var_y = m_yy[i] - my * my;
        let cov = m_xy[i] - mx * my;
        total += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
            / ((mx * mx + my * my + c1) * (var_x + var_y + c2));
    }
    Ok(total / mu_x.len() as f64)
}

/// One labeled reconstruction method: maps a dataset sample to an image.
pub struct Method<'a> {
    pub label: String,
    pub recon: Box<dyn Fn(&SampleTriple) -> Result<ImageGrid> + Sync + 'a>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SliceMetrics {
    pub method: String,
    pub slice: usize,
    pub psnr: Psnr,
    pub ssim: f64,
    pub nmse: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub n_slices: usize,
    /// Count of slices whose PSNR came out "identical" (excluded from the
    /// dB aggregate).
    pub n_identical: usize,
    pub psnr_mean: f64,
    pub psnr_std: f64,
    pub ssim_mean: f64,
    pub ssim_std: f64,
    pub nmse_mean: f64,
    pub nmse_std: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub slices: Vec<SliceMetrics>,
    pub summaries: Vec<MethodSummary>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-slice metrics plus mean +- std aggregates for every method, sorted
/// by label. The ground truth is each sample's OSEM image `i_s`. A pure
/// function of its inputs: repeated calls give identical reports.
pub fn evaluate(methods: &[Method], dataset: &[SampleTriple]) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(Error::Invalid("evaluation dataset is empty".into()));
    }
    let mut labels: Vec<&str> = methods.iter().map(|m| m.label.as_str()).collect();
    labels.sort_unstable();
    labels.dedup();
    if labels.len() != methods.len() {
        return Err(Error::Invalid("method labels must be unique".into()));
    }

    let mut order: Vec<&Method> = methods.iter().collect();
    order.sort_by(|a, b| a.label.cmp(&b.label));

    let mut slices = Vec::new();
    let mut summaries = Vec::new();
    for method in order {
        let rows: Vec<SliceMetrics> = dataset
            .par_iter()
            .enumerate()
            .map(|(i, sample)| -> Result<SliceMetrics> {
                let img = (method.recon)(sample)?;
                Ok(SliceMetrics {
                    method: method.label.clone(),
                    slice: i,
                    psnr: psnr(&img, &sample.i_s)?,
                    ssim: ssim(&img, &sample.i_s)?,
                    nmse: nmse(&img, &sample.i_s)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let db: Vec<f64> = rows.iter().filter_map(|r| r.psnr.db()).collect();
        let (psnr_mean, psnr_std) = mean_std(&db);
        let (ssim_mean, ssim_std) = mean_std(&rows.iter().map(|r| r.ssim).collect::<Vec<_>>());
        let (nmse_mean, nmse_std) = mean_std(&rows.iter().map(|r| r.nmse).collect::<Vec<_>>());
        summaries.push(MethodSummary {
            method: method.label.clone(),
            n_slices: rows.len(),
            n_identical: rows.len() - db.len(),
            psnr_mean,
            psnr_std,
            ssim_mean,
            ssim_std,
            nmse_mean,
            nmse_std,
        });
        slices.extend(rows);
    }
    Ok(EvalReport { slices, summaries })
}

impl EvalReport {
    /// Human-readable summary table.
    pub fn table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<24} {:>7} {:>18} {:>18} {:>20}\n",
            "method", "slices", "PSNR (dB)", "SSIM", "NMSE"
        ));
        for s in &self.summaries {
            out.push_str(&format!(
                "{:<24} {:>7} {:>9.3} ±{:>6.3} {:>10.4} ±{:>5.4} {:>11.5} ±{:>6.5}\n",
                s.method, s.n_slices, s.psnr_mean, s.psnr_std, s.ssim_mean, s.ssim_std,
                s.nmse_mean, s.nmse_std
            ));
        }
        out
    }

    /// Line-delimited JSON: one record per slice, then one per summary.
    pub fn jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for row in &self.slices {
            out.push_str(&serde_json::to_string(row).map_err(|e| Error::Format(e.to_string()))?);
            out.push('\n');
        }
        for s in &self.summaries {
            out.push_str(&serde_json::to_string(s).map_err(|e| Error::Format(e.to_string()))?);
            out.push('\n');
        }
        Ok(out)
    }
}
