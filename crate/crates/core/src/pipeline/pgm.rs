use std::fs;
use std::path::Path;

use crate::error::Result;
use crate::raster::Raster;

/// Linear map applied by [`export_pgm`]: `gray = (v - min) * scale`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PgmScaling {
    pub min: f32,
    pub max: f32,
    pub scale: f64,
}

/// Writes a 16-bit binary PGM stretched over the valid value range, plus a
/// `<path>.txt` sidecar recording the scaling. Nodata becomes 0.
pub fn export_pgm(r: &Raster, path: &Path) -> Result<PgmScaling> {
    let (mut min, mut max) = (f32::INFINITY, f32::NEG_INFINITY);
    for v in r.valid_values() {
        min = min.min(v);
        max = max.max(v);
    }
    if min > max {
        (min, max) = (0.0, 0.0);
    }
    let span = (max - min) as f64;
    let scale = if span > 0.0 { 65535.0 / span } else { 0.0 };
    let mut out = format!("P5\n{} {}\n65535\n", r.cols(), r.rows()).into_bytes();
    for &v in r.data() {
        let g = if r.is_nodata(v) {
            0
        } else {
            ((v - min) as f64 * scale).round().clamp(0.0, 65535.0) as u16
        };
        out.extend_from_slice(&g.to_be_bytes());
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, out)?;
    let mut side = path.as_os_str().to_owned();
    side.push(".txt");
    fs::write(
        side,
        format!("min={min}\nmax={max}\nscale={scale}\nformula=gray = round((value - min) * scale)\nnodata=0\n"),
    )?;
    Ok(PgmScaling { min, max, scale })
}
