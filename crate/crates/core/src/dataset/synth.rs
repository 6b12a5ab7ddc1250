//! Synthetic nighttime-light scenes for desk-scale runs.
//!
//! A VIIRS-like radiance field is drawn as Gaussian settlement blobs plus
//! faint road segments. The DMSP-like counterpart is produced from it by
//! 2x box downsampling, a Gaussian blur standing in for overglow, a linear
//! gain to digital numbers and saturation at DN 63.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::TargetYear;
use crate::calib::ProductId;
use crate::error::{Error, Result};
use crate::raster::{Raster, DMSP_MAX_DN};

pub const VIIRS_MAX: f32 = 496.0;
/// Blurred radiance that maps to DN 63 at the nominal gain.
pub const SAT_RADIANCE: f32 = 40.0;
const BLUR_SIGMA: f64 = 1.0;

#[derive(Clone, Debug, PartialEq)]
pub struct Blob {
    /// Center in VIIRS pixel coordinates.
    pub row: f64,
    pub col: f64,
    pub sigma: f64,
    pub amp: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Road {
    pub from: (f64, f64),
    pub to: (f64, f64),
    pub amp: f64,
}

/// Everything needed to render one synthetic year.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    /// DMSP grid size; the VIIRS grid is twice as large.
    pub rows: usize,
    pub cols: usize,
    pub blobs: Vec<Blob>,
    pub roads: Vec<Road>,
    /// DN per unit of blurred radiance.
    pub gain: f64,
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo.ln()..hi.ln()).exp()
}

fn random_blob(rng: &mut ChaCha8Rng, vr: f64, vc: f64) -> Blob {
    Blob {
        row: rng.random_range(0.0..vr),
        col: rng.random_range(0.0..vc),
        sigma: rng.random_range(1.5..7.0),
        amp: log_uniform(rng, 3.0, 300.0),
    }
}

impl SceneSpec {
    pub fn random(seed: u64, rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 || !rows.is_multiple_of(2) || !cols.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!("synthetic scene needs even positive dims, got {rows}x{cols}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (vr, vc) = ((2 * rows) as f64, (2 * cols) as f64);
        let n_blobs = ((vr * vc) / 1600.0).ceil().max(2.0) as usize;
        let n_roads = ((vr * vc) / 6400.0).ceil() as usize;
        let blobs = (0..n_blobs).map(|_| random_blob(&mut rng, vr, vc)).collect();
        let roads = (0..n_roads)
            .map(|_| Road {
                from: (rng.random_range(0.0..vr), rng.random_range(0.0..vc)),
                to: (rng.random_range(0.0..vr), rng.random_range(0.0..vc)),
                amp: rng.random_range(2.0..20.0),
            })
            .collect();
        Ok(Self {
            rows,
            cols,
            blobs,
            roads,
            gain: (DMSP_MAX_DN / SAT_RADIANCE) as f64,
        })
    }

    /// The same place `dt` years later (earlier when negative): settlements
    /// grow or shrink at their own rates and new ones appear.
    pub fn evolve(&self, seed: u64, dt: i32) -> SceneSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0x5eed);
        let mut out = self.clone();
        for b in &mut out.blobs {
            let rate: f64 = rng.random_range(-0.12..0.18);
            b.amp *= (rate * dt as f64).exp();
            b.sigma *= (0.02 * rate.signum() * dt as f64).exp();
        }
        let (vr, vc) = ((2 * self.rows) as f64, (2 * self.cols) as f64);
        if dt > 0 {
            let extra = (self.blobs.len() as f64 * 0.04 * dt as f64).round() as usize;
            for _ in 0..extra {
                let mut b = random_blob(&mut rng, vr, vc);
                b.amp *= 0.3;
                out.blobs.push(b);
            }
        }
        out
    }

    pub fn render_viirs(&self) -> Raster {
        let (vr, vc) = (2 * self.rows, 2 * self.cols);
        let mut v = vec![0f64; vr * vc];
        for b in &self.blobs {
            let reach = 4.0 * b.sigma;
            let r0 = (b.row - reach).floor().max(0.0) as usize;
            let r1 = ((b.row + reach).ceil() as usize).min(vr - 1);
            let c0 = (b.col - reach).floor().max(0.0) as usize;
            let c1 = ((b.col + reach).ceil() as usize).min(vc - 1);
            for r in r0..=r1 {
                for c in c0..=c1 {
                    let d2 = (r as f64 + 0.5 - b.row).powi(2) + (c as f64 + 0.5 - b.col).powi(2);
                    v[r * vc + c] += b.amp * (-d2 / (2.0 * b.sigma * b.sigma)).exp();
                }
            }
        }
        for road in &self.roads {
            let (dr, dc) = (road.to.0 - road.from.0, road.to.1 - road.from.1);
            let len2 = (dr * dr + dc * dc).max(1e-12);
            let r0 = (road.from.0.min(road.to.0) - 3.0).floor().max(0.0) as usize;
            let r1 = ((road.from.0.max(road.to.0) + 3.0).ceil() as usize).min(vr - 1);
            let c0 = (road.from.1.min(road.to.1) - 3.0).floor().max(0.0) as usize;
            let c1 = ((road.from.1.max(road.to.1) + 3.0).ceil() as usize).min(vc - 1);
            for r in r0..=r1 {
                for c in c0..=c1 {
                    let (pr, pc) = (r as f64 + 0.5 - road.from.0, c as f64 + 0.5 - road.from.1);
                    let t = ((pr * dr + pc * dc) / len2).clamp(0.0, 1.0);
                    let d2 = (pr - t * dr).powi(2) + (pc - t * dc).powi(2);
                    v[r * vc + c] += road.amp * (-d2 / 0.98).exp();
                }
            }
        }
        let data = v
            .into_iter()
            .map(|x| {
                let x = x as f32;
                if x < 0.5 {
                    0.0
                } else {
                    x.min(VIIRS_MAX)
                }
            })
            .collect();
        Raster::new(vr, vc, data).expect("dims are positive")
    }

    /// 2x box mean, then the blurred, gained and saturated DMSP surrogate.
    pub fn render_dmsp(&self, viirs: &Raster) -> Raster {
        let (rows, cols, vc) = (self.rows, self.cols, viirs.cols());
        let vd = viirs.data();
        let mut down = vec![0f64; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                let at = |dr: usize, dc: usize| vd[(2 * r + dr) * vc + 2 * c + dc] as f64;
                down[r * cols + c] = (at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1)) / 4.0;
            }
        }
        let blurred = gaussian_blur(&down, rows, cols, BLUR_SIGMA);
        let data = blurred
            .into_iter()
            .map(|x| ((x * self.gain).round() as f32).clamp(0.0, DMSP_MAX_DN))
            .collect();
        Raster::new(rows, cols, data).expect("dims are positive")
    }

    /// (dmsp, viirs) for this spec.
    pub fn render(&self) -> (Raster, Raster) {
        let viirs = self.render_viirs();
        (self.render_dmsp(&viirs), viirs)
    }
}

/// Separable Gaussian blur with edge clamping.
fn gaussian_blur(x: &[f64], rows: usize, cols: usize, sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0f64; x.len()];
    for r in 0..rows {
        for c in 0..cols {
            tmp[r * cols + c] = k
                .iter()
                .enumerate()
                .map(|(j, w)| w * x[r * cols + clamp(c as isize + j as isize - radius, cols)])
                .sum();
        }
    }
    let mut out = vec![0f64; x.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[r * cols + c] = k
                .iter()
                .enumerate()
                .map(|(j, w)| w * tmp[clamp(r as isize + j as isize - radius, rows) * cols + c])
                .sum();
        }
    }
    out
}

/// A DMSP-like raster (`rows x cols`, DN in [0, 63]) and its VIIRS-like
/// counterpart at twice the resolution. Requires even dims.
pub fn synth_scene(seed: u64, rows: usize, cols: usize) -> Result<(Raster, Raster)> {
    Ok(SceneSpec::random(seed, rows, cols)?.render())
}

/// Yearly renderings of the scene `synth_scene(seed, rows, cols)` shows in
/// `ref_year`. Each product gets its own sensor gain (within +-15%), so the
/// DMSP series is not inter-calibrated.
pub fn synth_series(seed: u64, rows: usize, cols: usize, ref_year: u16, products: &[ProductId]) -> Result<Vec<TargetYear>> {
    let base = SceneSpec::random(seed, rows, cols)?;
    products
        .iter()
        .map(|p| {
            let dt = p.year as i32 - ref_year as i32;
            let mut spec = base.evolve(seed, dt);
            let sat: u64 = p.satellite.trim_start_matches('F').parse().unwrap_or(0);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(1 + p.year as u64 * 100 + sat);
            spec.gain *= rng.random_range(0.85..1.15);
            let (dmsp, viirs) = spec.render();
            Ok(TargetYear {
                product: p.clone(),
                dmsp,
                viirs,
            })
        })
        .collect()
}
