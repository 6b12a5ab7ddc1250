//! VIIRS cleaning, random tile sampling, paired training examples, splits
//! and a synthetic scene generator.

mod manifest;
mod synth;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::calib::ProductId;
use crate::error::{Error, Result};
use crate::raster::{extract_tile, Raster, TileRef};
use crate::stats::quantile;

pub use manifest::{
    load_examples, read_manifest, read_manifest_file, store_tile, write_manifest, write_manifest_file, DatasetManifest,
    ManifestEntry, Split, MANIFEST_HEADER,
};
pub use synth::{synth_scene, synth_series, SceneSpec, SAT_RADIANCE, VIIRS_MAX};

pub const DEFAULT_FLOOR: f32 = 0.5;
pub const DEFAULT_CEIL: f32 = 496.0;

/// Values below `floor` become 0, values above `ceil` become `ceil`;
/// nodata is preserved.
pub fn clean_viirs(r: &Raster, floor: f32, ceil: f32) -> Result<Raster> {
    if !(floor < ceil) {
        return Err(Error::InvalidArgument(format!("floor {floor} must be below ceiling {ceil}")));
    }
    r.map_valid(|v| {
        if v < floor {
            0.0
        } else if v > ceil {
            ceil
        } else {
            v
        }
    })
}

/// Quantile `q` of all lit (> 0) valid pixels pooled over `rasters`.
pub fn viirs_ceiling(rasters: &[Raster], q: f64) -> Result<f64> {
    let mut lit: Vec<f64> = rasters
        .iter()
        .flat_map(|r| r.valid_values().filter(|&v| v > 0.0).map(f64::from))
        .collect();
    if lit.is_empty() {
        return Err(Error::InsufficientLitArea("no lit pixels to derive a ceiling from".into()));
    }
    quantile(&mut lit, q)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleOptions {
    /// DMSP tile size; VIIRS tiles are twice as large.
    pub tile_h: usize,
    pub tile_w: usize,
    pub min_lit: f64,
    pub seed: u64,
    /// Total draw budget; `None` means `1000 * n`.
    pub max_attempts: Option<usize>,
}

impl SampleOptions {
    pub fn new(tile_h: usize, tile_w: usize, seed: u64) -> Self {
        Self {
            tile_h,
            tile_w,
            min_lit: 0.01,
            seed,
            max_attempts: None,
        }
    }
}

fn check_pair(dmsp: &Raster, viirs: &Raster) -> Result<()> {
    if viirs.dims() != (2 * dmsp.rows(), 2 * dmsp.cols()) {
        return Err(Error::Dimension(format!(
            "VIIRS {:?} must be twice DMSP {:?}",
            viirs.dims(),
            dmsp.dims()
        )));
    }
    Ok(())
}

fn lit_fraction_in(r: &Raster, t: TileRef) -> f64 {
    let mut lit = 0usize;
    for row in t.anchor_row..t.anchor_row + t.height {
        let start = row * r.cols() + t.anchor_col;
        lit += r.data()[start..start + t.width]
            .iter()
            .filter(|&&v| !r.is_nodata(v) && v > 0.0)
            .count();
    }
    lit as f64 / (t.height * t.width) as f64
}

/// Whether both co-located reference tiles are lit above `min_lit`.
pub fn tile_is_lit(dmsp_ref: &Raster, viirs_ref: &Raster, t: TileRef, min_lit: f64) -> Result<bool> {
    if !t.fits(dmsp_ref.rows(), dmsp_ref.cols()) || !t.scaled(2).fits(viirs_ref.rows(), viirs_ref.cols()) {
        return Err(Error::OutOfBounds(format!("tile {t:?} outside the reference rasters")));
    }
    Ok(lit_fraction_in(dmsp_ref, t) > min_lit && lit_fraction_in(viirs_ref, t.scaled(2)) > min_lit)
}

/// Draws `n` tile anchors uniformly by rejection sampling. Point `i` draws
/// from its own stream derived from `(seed, i)`; all points share one
/// attempt budget.
pub fn sample_points(dmsp_ref: &Raster, viirs_ref: &Raster, n: usize, opts: &SampleOptions) -> Result<Vec<TileRef>> {
    check_pair(dmsp_ref, viirs_ref)?;
    let (th, tw) = (opts.tile_h, opts.tile_w);
    if th == 0 || tw == 0 || th > dmsp_ref.rows() || tw > dmsp_ref.cols() {
        return Err(Error::OutOfBounds(format!(
            "{th}x{tw} tiles do not fit a {:?} raster",
            dmsp_ref.dims()
        )));
    }
    let budget = opts.max_attempts.unwrap_or(1000 * n);
    let (rmax, cmax) = (dmsp_ref.rows() - th, dmsp_ref.cols() - tw);
    let mut used = 0usize;
    let mut out = Vec::with_capacity(n);
    'points: for i in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(i as u64);
        while used < budget {
            used += 1;
            let t = TileRef::new(rng.random_range(0..=rmax), rng.random_range(0..=cmax), th, tw);
            if tile_is_lit(dmsp_ref, viirs_ref, t, opts.min_lit)? {
                out.push(t);
                continue 'points;
            }
        }
        return Err(Error::InsufficientLitArea(format!(
            "only {} of {n} tiles found within {budget} draws (min_lit {})",
            out.len(),
            opts.min_lit
        )));
    }
    Ok(out)
}

/// One training pair: reference and target DMSP tiles, reference and
/// target VIIRS tiles at twice the resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub dmsp_ref: Raster,
    pub dmsp_tgt: Raster,
    pub viirs_ref: Raster,
    pub viirs_tgt: Raster,
    pub product_tgt: ProductId,
    /// DMSP-grid window; the VIIRS window is `tile.scaled(2)`.
    pub tile: TileRef,
}

/// A target year: its DMSP product and the same-year VIIRS raster.
#[derive(Clone, Debug)]
pub struct TargetYear {
    pub product: ProductId,
    pub dmsp: Raster,
    pub viirs: Raster,
}

/// `points x targets` examples, point-major.
pub fn build_examples(points: &[TileRef], ref_dmsp: &Raster, ref_viirs: &Raster, targets: &[TargetYear]) -> Result<Vec<Example>> {
    check_pair(ref_dmsp, ref_viirs)?;
    for t in targets {
        if !t.dmsp.same_dims(ref_dmsp) || !t.viirs.same_dims(ref_viirs) {
            return Err(Error::Dimension(format!("target {} is not co-registered with the reference", t.product)));
        }
    }
    let mut out = Vec::with_capacity(points.len() * targets.len());
    for &p in points {
        let v = p.scaled(2);
        let (dmsp_ref, viirs_ref) = (extract_tile(ref_dmsp, p)?, extract_tile(ref_viirs, v)?);
        for t in targets {
            out.push(Example {
                dmsp_ref: dmsp_ref.clone(),
                dmsp_tgt: extract_tile(&t.dmsp, p)?,
                viirs_ref: viirs_ref.clone(),
                viirs_tgt: extract_tile(&t.viirs, v)?,
                product_tgt: t.product.clone(),
                tile: p,
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitOptions {
    pub train_frac: f64,
    pub seed: u64,
    /// Assign whole anchor points instead of single examples, so no
    /// location appears in both splits.
    pub by_anchor: bool,
    /// Target years held out entirely as test data.
    pub test_years: Vec<u16>,
}

impl SplitOptions {
    pub fn new(train_frac: f64, seed: u64) -> Self {
        Self {
            train_frac,
            seed,
            by_anchor: false,
            test_years: Vec::new(),
        }
    }
}

/// Assigns train/val labels uniformly at random with exactly
/// `round(n * train_frac)` training units; examples whose target year is
/// in `test_years` become test data.
pub fn split_labels(examples: &[(ProductId, TileRef)], opts: &SplitOptions) -> Result<Vec<Split>> {
    if examples.is_empty() {
        return Err(Error::Empty("cannot split an empty manifest".into()));
    }
    if !(0.0..=1.0).contains(&opts.train_frac) {
        return Err(Error::InvalidArgument(format!("train fraction {} outside [0, 1]", opts.train_frac)));
    }
    let mut labels = vec![Split::Val; examples.len()];
    let pool: Vec<usize> = (0..examples.len())
        .filter(|&i| {
            let test = opts.test_years.contains(&examples[i].0.year);
            if test {
                labels[i] = Split::Test;
            }
            !test
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    if opts.by_anchor {
        let mut anchors: Vec<(usize, usize)> = pool.iter().map(|&i| (examples[i].1.anchor_row, examples[i].1.anchor_col)).collect();
        anchors.sort_unstable();
        anchors.dedup();
        anchors.shuffle(&mut rng);
        let k = (anchors.len() as f64 * opts.train_frac).round() as usize;
        let train: std::collections::BTreeSet<_> = anchors[..k].iter().copied().collect();
        for &i in &pool {
            if train.contains(&(examples[i].1.anchor_row, examples[i].1.anchor_col)) {
                labels[i] = Split::Train;
            }
        }
    } else {
        let mut order = pool.clone();
        order.shuffle(&mut rng);
        let k = (pool.len() as f64 * opts.train_frac).round() as usize;
        for &i in &order[..k] {
            labels[i] = Split::Train;
        }
    }
    Ok(labels)
}

/// Returns a copy of `m` with fresh split labels.
pub fn split_manifest(m: &DatasetManifest, opts: &SplitOptions) -> Result<DatasetManifest> {
    let keys: Vec<(ProductId, TileRef)> = m.entries.iter().map(|e| (e.product_tgt.clone(), e.tile)).collect();
    let labels = split_labels(&keys, opts)?;
    let mut out = m.clone();
    for (e, l) in out.entries.iter_mut().zip(labels) {
        e.split = l;
    }
    out.seed = opts.seed;
    Ok(out)
}
