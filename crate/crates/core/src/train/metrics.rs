use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::raster::Raster;

/// Value pairs used by every metric: pixels valid in both rasters.
fn pairs(gt: &Raster, sr: &Raster) -> Result<Vec<(f64, f64)>> {
    if !gt.same_dims(sr) {
        return Err(Error::Dimension(format!(
            "metric inputs differ: {:?} vs {:?}",
            gt.dims(),
            sr.dims()
        )));
    }
    Ok(gt
        .data()
        .iter()
        .zip(sr.data())
        .filter(|(&g, &s)| g != gt.nodata() && s != sr.nodata())
        .map(|(&g, &s)| (g as f64, s as f64))
        .collect())
}

struct Moments {
    mean_g: f64,
    mean_s: f64,
    var_g: f64,
    var_s: f64,
    cov: f64,
}

fn moments(p: &[(f64, f64)]) -> Moments {
    let n = p.len() as f64;
    let mean_g = p.iter().map(|v| v.0).sum::<f64>() / n;
    let mean_s = p.iter().map(|v| v.1).sum::<f64>() / n;
    let (mut var_g, mut var_s, mut cov) = (0.0, 0.0, 0.0);
    for &(g, s) in p {
        let (dg, ds) = (g - mean_g, s - mean_s);
        var_g += dg * dg;
        var_s += ds * ds;
        cov += dg * ds;
    }
    Moments {
        mean_g,
        mean_s,
        var_g: var_g / n,
        var_s: var_s / n,
        cov: cov / n,
    }
}

/// Pearson correlation over all pixels valid in both rasters.
pub fn pearson_r(gt: &Raster, sr: &Raster) -> Result<f64> {
    let p = pairs(gt, sr)?;
    if p.len() < 2 {
        return Err(Error::UndefinedCorrelation(format!("{} valid pixel pairs", p.len())));
    }
    let m = moments(&p);
    if m.var_g == 0.0 || m.var_s == 0.0 {
        return Err(Error::UndefinedCorrelation("an input has zero variance".into()));
    }
    Ok((m.cov / (m.var_g * m.var_s).sqrt()).clamp(-1.0, 1.0))
}

/// `10 log10(MAX^2 / MSE)`; identical inputs give `+inf`.
pub fn psnr(gt: &Raster, sr: &Raster, max_val: f64) -> Result<f64> {
    if !(max_val > 0.0) {
        return Err(Error::InvalidArgument(format!("MAX must be positive, got {max_val}")));
    }
    let p = pairs(gt, sr)?;
    if p.is_empty() {
        return Err(Error::Empty("no valid pixel pairs".into()));
    }
    let mse = p.iter().map(|(g, s)| (g - s) * (g - s)).sum::<f64>() / p.len() as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (max_val * max_val / mse).log10()
    })
}

/// Whole-image SSIM with population moments and
/// `C1 = (0.01 MAX)^2`, `C2 = (0.03 MAX)^2`.
pub fn ssim_global(gt: &Raster, sr: &Raster, max_val: f64) -> Result<f64> {
    if !(max_val > 0.0) {
        return Err(Error::InvalidArgument(format!("MAX must be positive, got {max_val}")));
    }
    let p = pairs(gt, sr)?;
    if p.is_empty() {
        return Err(Error::Empty("no valid pixel pairs".into()));
    }
    let m = moments(&p);
    let c1 = (0.01 * max_val).powi(2);
    let c2 = (0.03 * max_val).powi(2);
    let num = (2.0 * m.mean_g * m.mean_s + c1) * (2.0 * m.cov + c2);
    let den = (m.mean_g * m.mean_g + m.mean_s * m.mean_s + c1) * (m.var_g + m.var_s + c2);
    Ok(num / den)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub r: f64,
    /// `f64::INFINITY` when the images are identical.
    pub psnr: f64,
    pub ssim: f64,
    pub n: usize,
    pub max_used: f64,
}

pub const DEFAULT_MAX: f64 = 496.0;

pub fn evaluate_pair(gt: &Raster, sr: &Raster, max_val: f64) -> Result<MetricsReport> {
    Ok(MetricsReport {
        r: pearson_r(gt, sr)?,
        psnr: psnr(gt, sr, max_val)?,
        ssim: ssim_global(gt, sr, max_val)?,
        n: pairs(gt, sr)?.len(),
        max_used: max_val,
    })
}

fn fmt_f64(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else {
        format!("{v}")
    }
}

pub const METRICS_CSV_HEADER: &str = "scope_label,r,psnr,ssim,n,max_used";

/// CSV with header `scope_label,r,psnr,ssim,n,max_used`; `+inf` PSNR is
/// written as `inf`.
pub fn metrics_csv(rows: &[(String, MetricsReport)]) -> String {
    let mut out = format!("{METRICS_CSV_HEADER}\n");
    for (label, m) in rows {
        let _ = writeln!(
            out,
            "{label},{},{},{},{},{}",
            fmt_f64(m.r),
            fmt_f64(m.psnr),
            fmt_f64(m.ssim),
            m.n,
            fmt_f64(m.max_used)
        );
    }
    out
}
