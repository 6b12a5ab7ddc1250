//! Tiled inference, the bilinear baseline and run configuration.

mod config;
mod pgm;

use rayon::prelude::*;

use crate::autodiff::{no_grad, Tensor};
use crate::error::{Error, Result};
use crate::model::{forward, ModelConfig, Params};
use crate::raster::{extract_tile, Raster, TileRef};

pub use config::{config_keys, RunConfig};
pub use pgm::{export_pgm, PgmScaling};

/// 2x bilinear upsampling with half-pixel-center alignment and edge
/// clamping. An output pixel is nodata when any contributing input pixel
/// is.
pub fn bilinear_upsample2x(r: &Raster) -> Raster {
    let (rows, cols) = r.dims();
    let (or, oc) = (2 * rows, 2 * cols);
    // source coordinate of output index i: (i + 0.5) / 2 - 0.5
    let taps = |i: usize, n: usize| -> (usize, usize, f64) {
        let x = ((i as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (n - 1) as f64);
        let lo = x.floor() as usize;
        let hi = (lo + 1).min(n - 1);
        (lo, hi, x - lo as f64)
    };
    let d = r.data();
    let mut out = Vec::with_capacity(or * oc);
    for i in 0..or {
        let (r0, r1, fy) = taps(i, rows);
        for j in 0..oc {
            let (c0, c1, fx) = taps(j, cols);
            let px = [d[r0 * cols + c0], d[r0 * cols + c1], d[r1 * cols + c0], d[r1 * cols + c1]];
            if px.iter().any(|&v| r.is_nodata(v)) {
                out.push(r.nodata());
                continue;
            }
            let [a, b, c, e] = px.map(f64::from);
            let top = a + (b - a) * fx;
            let bottom = c + (e - c) * fx;
            out.push((top + (bottom - top) * fy) as f32);
        }
    }
    r.resampled_like(or, oc, out).expect("same footprint, valid data")
}

/// How a raster was cut into tiles.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TileLayout {
    pub source_rows: usize,
    pub source_cols: usize,
    pub tile_h: usize,
    pub tile_w: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub pad_bottom: usize,
    pub pad_right: usize,
}

impl TileLayout {
    pub fn new(source_rows: usize, source_cols: usize, tile_h: usize, tile_w: usize) -> Result<Self> {
        if tile_h == 0 || tile_w == 0 {
            return Err(Error::InvalidArgument(format!("tile size must be positive, got {tile_h}x{tile_w}")));
        }
        let grid_rows = source_rows.div_ceil(tile_h);
        let grid_cols = source_cols.div_ceil(tile_w);
        Ok(Self {
            source_rows,
            source_cols,
            tile_h,
            tile_w,
            grid_rows,
            grid_cols,
            pad_bottom: grid_rows * tile_h - source_rows,
            pad_right: grid_cols * tile_w - source_cols,
        })
    }

    pub fn len(&self) -> usize {
        self.grid_rows * self.grid_cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Tile windows on the padded raster, row-major.
    pub fn windows(&self) -> impl Iterator<Item = TileRef> + '_ {
        (0..self.grid_rows)
            .flat_map(move |gr| (0..self.grid_cols).map(move |gc| TileRef::new(gr * self.tile_h, gc * self.tile_w, self.tile_h, self.tile_w)))
    }

    /// The layout of the same grid on a raster `factor` times finer.
    pub fn scaled(&self, factor: usize) -> Self {
        Self {
            source_rows: self.source_rows * factor,
            source_cols: self.source_cols * factor,
            tile_h: self.tile_h * factor,
            tile_w: self.tile_w * factor,
            grid_rows: self.grid_rows,
            grid_cols: self.grid_cols,
            pad_bottom: self.pad_bottom * factor,
            pad_right: self.pad_right * factor,
        }
    }
}

/// `r` padded with zeros on the bottom and right to `rows x cols`.
fn pad(r: &Raster, rows: usize, cols: usize) -> Result<Raster> {
    if (rows, cols) == r.dims() {
        return Ok(r.clone());
    }
    let mut data = vec![0f32; rows * cols];
    for (row, chunk) in r.data().chunks(r.cols()).enumerate() {
        data[row * cols..row * cols + r.cols()].copy_from_slice(chunk);
    }
    Raster::with_geo(rows, cols, r.x0, r.y0, r.dx, r.dy, r.nodata(), data)
}

/// Non-overlapping row-major tiles covering `r` zero-padded to whole tiles.
pub fn tile_grid(r: &Raster, tile_h: usize, tile_w: usize) -> Result<(Vec<Raster>, TileLayout)> {
    let layout = TileLayout::new(r.rows(), r.cols(), tile_h, tile_w)?;
    let padded = pad(r, layout.grid_rows * tile_h, layout.grid_cols * tile_w)?;
    let tiles = layout.windows().map(|t| extract_tile(&padded, t)).collect::<Result<_>>()?;
    Ok((tiles, layout))
}

/// Inverse of [`tile_grid`], padding removed.
pub fn reassemble(tiles: &[Raster], layout: &TileLayout) -> Result<Raster> {
    if tiles.len() != layout.len() {
        return Err(Error::Dimension(format!("{} tiles for a {}-tile layout", tiles.len(), layout.len())));
    }
    if let Some(t) = tiles.iter().find(|t| t.dims() != (layout.tile_h, layout.tile_w)) {
        return Err(Error::Dimension(format!(
            "tile {:?} does not match layout tile {}x{}",
            t.dims(),
            layout.tile_h,
            layout.tile_w
        )));
    }
    let (rows, cols) = (layout.source_rows, layout.source_cols);
    if rows == 0 || cols == 0 {
        return Err(Error::Dimension("layout describes an empty raster".into()));
    }
    let mut data = vec![0f32; rows * cols];
    for (t, win) in tiles.iter().zip(layout.windows()) {
        for tr in 0..layout.tile_h {
            let row = win.anchor_row + tr;
            if row >= rows {
                break;
            }
            let n = layout.tile_w.min(cols.saturating_sub(win.anchor_col));
            let src = &t.data()[tr * layout.tile_w..tr * layout.tile_w + n];
            data[row * cols + win.anchor_col..row * cols + win.anchor_col + n].copy_from_slice(src);
        }
    }
    let first = &tiles[0];
    Raster::with_geo(rows, cols, first.x0, first.y0, first.dx, first.dy, first.nodata(), data)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReconstructOptions {
    /// Output clamp ceiling in radiance units.
    pub ceil: f32,
    /// Average predictions from half-tile-shifted windows instead of a
    /// plain grid.
    pub overlap: bool,
    /// Tiles per forward pass.
    pub batch: usize,
}

impl Default for ReconstructOptions {
    fn default() -> Self {
        Self {
            ceil: 496.0,
            overlap: false,
            batch: 4,
        }
    }
}

fn tensor_of(tiles: &[Raster], scale: f32) -> Result<Tensor<f32>> {
    let (h, w) = tiles[0].dims();
    let mut data = Vec::with_capacity(tiles.len() * h * w);
    for t in tiles {
        data.extend(t.data().iter().map(|&v| if t.is_nodata(v) { 0.0 } else { v / scale }));
    }
    Tensor::new(&[tiles.len(), 1, h, w], data)
}

/// Predicts the VIIRS-like raster of the target year: the three inputs are
/// tiled consistently (VIIRS at twice the size and anchors), each tile
/// goes through the network in inference mode, and the result is
/// reassembled and clamped to `[0, ceil]`.
pub fn reconstruct_year(
    params: &Params<f32>,
    cfg: &ModelConfig,
    dmsp_ref: &Raster,
    dmsp_tgt: &Raster,
    viirs_ref: &Raster,
    opts: &ReconstructOptions,
) -> Result<Raster> {
    if !dmsp_ref.same_dims(dmsp_tgt) {
        return Err(Error::Dimension(format!(
            "target DMSP {:?} differs from reference DMSP {:?}",
            dmsp_tgt.dims(),
            dmsp_ref.dims()
        )));
    }
    if viirs_ref.dims() != (2 * dmsp_ref.rows(), 2 * dmsp_ref.cols()) {
        return Err(Error::Dimension(format!(
            "reference VIIRS {:?} must be twice DMSP {:?}",
            viirs_ref.dims(),
            dmsp_ref.dims()
        )));
    }
    params.check_against(cfg)?;
    if !(opts.ceil > 0.0) {
        return Err(Error::InvalidArgument(format!("ceiling must be positive, got {}", opts.ceil)));
    }
    let (h, w) = (cfg.h, cfg.w);
    let layout = TileLayout::new(dmsp_ref.rows(), dmsp_ref.cols(), h, w)?;
    let (pr, pc) = (layout.grid_rows * h, layout.grid_cols * w);
    let (a, b, v) = (pad(dmsp_ref, pr, pc)?, pad(dmsp_tgt, pr, pc)?, pad(viirs_ref, 2 * pr, 2 * pc)?);

    let windows: Vec<TileRef> = if opts.overlap {
        let (sh, sw) = ((h / 2).max(1), (w / 2).max(1));
        let starts = |n: usize, t: usize, s: usize| -> Vec<usize> {
            let mut v: Vec<usize> = (0..=n - t).step_by(s).collect();
            if *v.last().unwrap() != n - t {
                v.push(n - t);
            }
            v
        };
        let rows = starts(pr, h, sh);
        let cols = starts(pc, w, sw);
        rows.iter().flat_map(|&r| cols.iter().map(move |&c| TileRef::new(r, c, h, w))).collect()
    } else {
        layout.windows().collect()
    };

    // Tensors are single-threaded, so each worker rebuilds the parameters
    // from a plain snapshot.
    let snapshot: Vec<(String, Vec<usize>, Vec<f32>, bool)> = params
        .iter()
        .map(|(k, t)| (k.to_owned(), t.shape().to_vec(), t.to_vec(), t.requires_grad()))
        .collect();
    let rebuild = || -> Result<Params<f32>> {
        let mut p = Params::new();
        for (k, shape, data, grad) in &snapshot {
            let t = if *grad { Tensor::param(shape, data.clone())? } else { Tensor::new(shape, data.clone())? };
            p.insert(k.clone(), t);
        }
        Ok(p)
    };
    let chunks: Vec<&[TileRef]> = windows.chunks(opts.batch.max(1)).collect();
    let preds: Vec<Vec<f32>> = chunks
        .par_iter()
        .map_init(rebuild, |local, chunk| {
            let local = local.as_ref().map_err(|e| Error::Internal(format!("parameter snapshot: {e}")))?;
            let cut = |r: &Raster, f: usize| chunk.iter().map(|t| extract_tile(r, t.scaled(f))).collect::<Result<Vec<_>>>();
            no_grad(|| {
                let y = forward(
                    &tensor_of(&cut(&a, 1)?, cfg.dmsp_scale)?,
                    &tensor_of(&cut(&b, 1)?, cfg.dmsp_scale)?,
                    &tensor_of(&cut(&v, 2)?, cfg.viirs_scale)?,
                    local,
                    cfg,
                    false,
                )?;
                Ok(y.to_vec())
            })
        })
        .collect::<Result<_>>()?;

    let (or, oc) = (2 * pr, 2 * pc);
    let mut sum = vec![0f64; or * oc];
    let mut hits = vec![0u32; or * oc];
    let (th, tw) = (2 * h, 2 * w);
    for (chunk, yd) in chunks.iter().zip(&preds) {
        for (k, t) in chunk.iter().enumerate() {
            let vt = t.scaled(2);
            for r in 0..th {
                for c in 0..tw {
                    let i = (vt.anchor_row + r) * oc + vt.anchor_col + c;
                    sum[i] += yd[k * th * tw + r * tw + c] as f64;
                    hits[i] += 1;
                }
            }
        }
    }
    let (rows, cols) = (2 * dmsp_ref.rows(), 2 * dmsp_ref.cols());
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let i = r * oc + c;
            let mean = sum[i] / hits[i].max(1) as f64;
            data.push(((mean * cfg.viirs_scale as f64) as f32).clamp(0.0, opts.ceil));
        }
    }
    Raster::with_geo(rows, cols, viirs_ref.x0, viirs_ref.y0, viirs_ref.dx, viirs_ref.dy, viirs_ref.nodata(), data)
}
