//! Georeferenced single-band rasters, binary masks and tile windows.
//!
//! Every image in the toolkit (DMSP digital numbers, VIIRS radiances,
//! variation-coefficient maps, model outputs) travels as a [`Raster`]:
//! a north-up grid of 32-bit values with an upper-left origin, a pixel
//! size and a single nodata sentinel.

mod ascii;
mod mask;
pub(crate) mod ntlr;

pub use ascii::parse_ascii_grid;
pub use mask::{mask_product, Mask};
pub use ntlr::{read_raster, read_raster_file, write_raster, write_raster_file, NTLR_MAGIC, NTLR_VERSION};

use crate::error::{Error, Result};

/// Largest digital number a DMSP-OLS pixel can hold (6-bit sensor).
pub const DMSP_MAX_DN: f32 = 63.0;

#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    rows: usize,
    cols: usize,
    pub x0: f64,
    pub y0: f64,
    pub dx: f64,
    pub dy: f64,
    nodata: f32,
    data: Vec<f32>,
}

impl Raster {
    pub const DEFAULT_NODATA: f32 = -1.0;

    /// Builds a raster with unit pixel size at the origin and the default
    /// nodata sentinel.
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        Self::with_geo(rows, cols, 0.0, 0.0, 1.0, -1.0, Self::DEFAULT_NODATA, data)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_geo(
        rows: usize,
        cols: usize,
        x0: f64,
        y0: f64,
        dx: f64,
        dy: f64,
        nodata: f32,
        data: Vec<f32>,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Dimension(format!("raster must be at least 1x1, got {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        if !nodata.is_finite() {
            return Err(Error::InvalidArgument("nodata sentinel must be finite".into()));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite value at row {}, col {}",
                i / cols,
                i % cols
            )));
        }
        Ok(Self {
            rows,
            cols,
            x0,
            y0,
            dx,
            dy,
            nodata,
            data,
        })
    }

    pub fn filled(rows: usize, cols: usize, value: f32) -> Result<Self> {
        Self::new(rows, cols, vec![value; rows * cols])
    }

    /// Same georeferencing and nodata as `self`, new values.
    pub fn like(&self, data: Vec<f32>) -> Result<Self> {
        Self::with_geo(self.rows, self.cols, self.x0, self.y0, self.dx, self.dy, self.nodata, data)
    }

    /// New raster covering the same footprint at a different resolution.
    pub fn resampled_like(&self, rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        let dx = self.dx * self.cols as f64 / cols as f64;
        let dy = self.dy * self.rows as f64 / rows as f64;
        Self::with_geo(rows, cols, self.x0, self.y0, dx, dy, self.nodata, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn nodata(&self) -> f32 {
        self.nodata
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.cols + col]
    }

    #[inline]
    pub fn is_nodata(&self, v: f32) -> bool {
        v == self.nodata
    }

    /// Values that are not the nodata sentinel.
    pub fn valid_values(&self) -> impl Iterator<Item = f32> + '_ {
        self.data.iter().copied().filter(move |&v| v != self.nodata)
    }

    /// Applies `f` to every valid pixel, keeping nodata cells untouched.
    pub fn map_valid(&self, f: impl Fn(f32) -> f32) -> Result<Self> {
        let nodata = self.nodata;
        self.like(
            self.data
                .iter()
                .map(|&v| if v == nodata { v } else { f(v) })
                .collect(),
        )
    }

    /// Checks the DMSP value range [0, 63] on valid pixels.
    pub fn check_dmsp_range(&self) -> Result<()> {
        match self.valid_values().find(|v| !(0.0..=DMSP_MAX_DN).contains(v)) {
            Some(v) => Err(Error::InvalidArgument(format!("DMSP value {v} outside [0, 63]"))),
            None => Ok(()),
        }
    }

    /// Whether every valid pixel holds an integer digital number.
    pub fn is_integral(&self) -> bool {
        self.valid_values().all(|v| v.fract() == 0.0)
    }

    pub fn same_dims(&self, other: &Raster) -> bool {
        self.dims() == other.dims()
    }
}

/// Upper-left anchored window into a raster, in pixel units.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TileRef {
    pub anchor_row: usize,
    pub anchor_col: usize,
    pub height: usize,
    pub width: usize,
}

impl TileRef {
    pub fn new(anchor_row: usize, anchor_col: usize, height: usize, width: usize) -> Self {
        Self {
            anchor_row,
            anchor_col,
            height,
            width,
        }
    }

    pub fn full(r: &Raster) -> Self {
        Self::new(0, 0, r.rows(), r.cols())
    }

    /// The co-located window on a grid `factor` times finer.
    pub fn scaled(&self, factor: usize) -> Self {
        Self::new(
            self.anchor_row * factor,
            self.anchor_col * factor,
            self.height * factor,
            self.width * factor,
        )
    }

    pub fn fits(&self, rows: usize, cols: usize) -> bool {
        self.height >= 1
            && self.width >= 1
            && self.anchor_row.checked_add(self.height).is_some_and(|e| e <= rows)
            && self.anchor_col.checked_add(self.width).is_some_and(|e| e <= cols)
    }
}

pub fn extract_tile(r: &Raster, t: TileRef) -> Result<Raster> {
    if !t.fits(r.rows(), r.cols()) {
        return Err(Error::OutOfBounds(format!(
            "tile {}x{} at ({}, {}) exceeds {}x{} raster",
            t.height,
            t.width,
            t.anchor_row,
            t.anchor_col,
            r.rows(),
            r.cols()
        )));
    }
    let mut data = Vec::with_capacity(t.height * t.width);
    for row in t.anchor_row..t.anchor_row + t.height {
        let start = row * r.cols() + t.anchor_col;
        data.extend_from_slice(&r.data()[start..start + t.width]);
    }
    Raster::with_geo(
        t.height,
        t.width,
        r.x0 + t.anchor_col as f64 * r.dx,
        r.y0 + t.anchor_row as f64 * r.dy,
        r.dx,
        r.dy,
        r.nodata(),
        data,
    )
}

/// Share of all pixels that are valid and strictly positive.
pub fn lit_fraction(r: &Raster) -> f64 {
    let lit = r.valid_values().filter(|&v| v > 0.0).count();
    lit as f64 / r.len() as f64
}
