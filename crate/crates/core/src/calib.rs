//! DMSP-OLS inter-calibration.
//!
//! Calibration fields are pixels that are spatially uniform in every
//! product, temporally stable across the whole stack and never saturated.
//! Each product is then mapped onto a base product with a quadratic fit
//! over those pixels.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::raster::{mask_product, Mask, Raster, DMSP_MAX_DN};
use crate::stats::{mean_std, quantile};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sensor {
    Dmsp,
    Viirs,
}

/// A yearly composite product, e.g. `1999F12` or `VIIRS2014`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ProductId {
    pub year: u16,
    pub satellite: String,
    pub sensor: Sensor,
}

impl ProductId {
    pub fn dmsp(year: u16, satellite: &str) -> Result<Self> {
        if !(1992..=2019).contains(&year) {
            return Err(Error::InvalidArgument(format!("DMSP year {year} outside 1992-2019")));
        }
        let sat = satellite.to_ascii_uppercase();
        if sat.len() < 2 || !sat.starts_with('F') || !sat[1..].chars().all(|c| c.is_ascii_digit()) {
            return Err(Error::InvalidArgument(format!("bad satellite code {satellite:?}")));
        }
        Ok(Self {
            year,
            satellite: sat,
            sensor: Sensor::Dmsp,
        })
    }

    pub fn viirs(year: u16) -> Result<Self> {
        if year < 2012 {
            return Err(Error::InvalidArgument(format!("VIIRS year {year} before 2012")));
        }
        Ok(Self {
            year,
            satellite: "NPP".into(),
            sensor: Sensor::Viirs,
        })
    }
}

impl fmt::Display for ProductId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.sensor {
            Sensor::Dmsp => write!(f, "{}{}", self.year, self.satellite),
            Sensor::Viirs => write!(f, "VIIRS{}", self.year),
        }
    }
}

impl FromStr for ProductId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("cannot parse product id {s:?}"));
        if let Some(y) = s.strip_prefix("VIIRS") {
            return Self::viirs(y.parse().map_err(|_| bad())?);
        }
        if s.len() < 6 || !s.is_char_boundary(4) {
            return Err(bad());
        }
        let (year, sat) = s.split_at(4);
        Self::dmsp(year.parse().map_err(|_| bad())?, sat)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationFit {
    pub product: ProductId,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub r2: f64,
}

impl CalibrationFit {
    pub fn identity(product: ProductId) -> Self {
        Self {
            product,
            a: 0.0,
            b: 1.0,
            c: 0.0,
            r2: 1.0,
        }
    }

    #[inline]
    pub fn eval(&self, v: f64) -> f64 {
        self.a * v * v + self.b * v + self.c
    }
}

/// Published quadratic continuity fits against the 1999/F12 base image,
/// in table order: (year, satellite, a, b, c, R^2).
pub const PUBLISHED_FITS: &[(u16, &str, f64, f64, f64, f64)] = &[
    (1992, "F10", -0.0107, 1.6983, -2.3134, 0.9236),
    (1993, "F10", -0.0118, 1.7771, -2.8972, 0.9311),
    (1994, "F10", -0.0075, 1.4614, -0.1966, 0.9155),
    (1994, "F12", -0.0102, 1.6623, -2.5930, 0.9627),
    (1995, "F12", -0.0062, 1.4031, -1.5095, 0.9677),
    (1996, "F12", -0.0072, 1.4873, -2.0035, 0.9712),
    (1997, "F12", -0.0041, 1.2572, -0.3701, 0.9660),
    (1997, "F14", -0.0157, 1.9777, -2.1581, 0.9661),
    (1998, "F12", -0.0033, 1.1930, -0.2953, 0.9678),
    (1998, "F14", -0.0143, 1.8884, -1.8454, 0.974),
    (1999, "F12", 0.0, 1.0, 0.0, 1.0),
    (1999, "F14", -0.0119, 1.7665, -2.2813, 0.9883),
    (2000, "F14", -0.0074, 1.4813, -1.5059, 0.9721),
    (2000, "F15", -0.0039, 1.2645, -1.7579, 0.9740),
    (2001, "F14", -0.0072, 1.4321, -0.0765, 0.9659),
    (2001, "F15", -0.0023, 1.1326, 0.4873, 0.9705),
    (2002, "F14", -0.006, 1.3605, -0.2098, 0.9645),
    (2002, "F15", -0.0023, 1.1322, 0.2721, 0.9696),
    (2003, "F14", -0.0064, 1.3760, 0.5644, 0.9635),
    (2003, "F15", -0.0131, 1.8092, -0.6368, 0.9602),
    (2004, "F15", -0.0127, 1.7658, -0.0817, 0.9565),
    (2004, "F16", -0.0093, 1.5971, -1.8401, 0.9467),
    (2005, "F15", -0.0094, 1.5570, 0.9574, 0.9531),
    (2005, "F16", -0.0116, 1.7041, -0.2285, 0.9489),
    (2006, "F15", -0.0087, 1.5121, 1.7289, 0.9402),
    (2006, "F16", -0.006, 1.3510, 1.3256, 0.9229),
    (2007, "F15", -0.0111, 1.6814, -0.3691, 0.9432),
    (2007, "F16", -0.0038, 1.1971, 0.3308, 0.9334),
    (2008, "F16", -0.0039, 1.1952, 0.8991, 0.9407),
    (2009, "F16", -0.003, 1.1484, 1.2554, 0.9371),
    (2010, "F18", 0.0102, 0.1829, 7.4196, 0.9261),
    (2011, "F18", -0.0009, 0.9751, 1.6559, 0.9190),
    (2012, "F18", 0.0030, 0.6763, 4.6656, 0.9044),
    (2013, "F15", -0.0176, 1.9709, 0.7879, 0.8723),
    (2013, "F18", 0.0006, 0.8688, 2.5010, 0.9208),
    (2014, "F15", -0.0194, 2.0911, -0.3125, 0.8719),
    (2015, "F15", -0.0209, 2.1549, 0.7466, 0.8667),
    (2016, "F15", -0.0213, 2.1562, 1.1204, 0.8531),
    (2016, "F16", -0.0269, 2.4526, 1.6481, 0.8564),
    (2017, "F15", -0.0218, 2.1726, 1.0962, 0.8344),
    (2017, "F16", -0.0239, 2.2963, 1.1565, 0.8369),
    (2018, "F15", -0.0211, 2.1457, 1.0301, 0.8471),
    (2018, "F16", -0.0199, 2.0848, 0.7396, 0.8461),
    (2019, "F15", -0.0200, 2.0940, 0.8782, 0.8516),
    (2019, "F16", -0.0191, 2.0538, 0.0231, 0.8552),
];

pub fn published_fits() -> Vec<CalibrationFit> {
    PUBLISHED_FITS
        .iter()
        .map(|&(year, sat, a, b, c, r2)| CalibrationFit {
            product: ProductId::dmsp(year, sat).expect("table entries are valid"),
            a,
            b,
            c,
            r2,
        })
        .collect()
}

/// Co-registered DMSP products stacked along the channel axis.
#[derive(Clone, Debug)]
pub struct CalibrationStack {
    products: Vec<ProductId>,
    rasters: Vec<Raster>,
}

impl CalibrationStack {
    pub fn new(products: Vec<ProductId>, rasters: Vec<Raster>) -> Result<Self> {
        if products.len() != rasters.len() {
            return Err(Error::InvalidArgument(format!(
                "{} products but {} rasters",
                products.len(),
                rasters.len()
            )));
        }
        if let Some(first) = rasters.first() {
            if let Some((i, r)) = rasters.iter().enumerate().find(|(_, r)| !r.same_dims(first)) {
                return Err(Error::Dimension(format!(
                    "raster {} ({}) is {:?}, expected {:?}",
                    i,
                    products[i],
                    r.dims(),
                    first.dims()
                )));
            }
        }
        Ok(Self { products, rasters })
    }

    pub fn products(&self) -> &[ProductId] {
        &self.products
    }

    pub fn rasters(&self) -> &[Raster] {
        &self.rasters
    }

    pub fn len(&self) -> usize {
        self.rasters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rasters.is_empty()
    }

    pub fn dims(&self) -> Option<(usize, usize)> {
        self.rasters.first().map(Raster::dims)
    }
}

/// Coefficient of variation over each pixel's 3x3 neighbourhood
/// (population standard deviation). Border pixels, windows touching
/// nodata and windows with zero mean are nodata.
pub fn spatial_vc(r: &Raster) -> Result<Raster> {
    let (rows, cols) = r.dims();
    if rows < 3 || cols < 3 {
        return Err(Error::Dimension(format!(
            "spatial_vc needs at least 3x3, got {rows}x{cols}"
        )));
    }
    let nodata = r.nodata();
    let mut out = vec![nodata; rows * cols];
    let mut window = [0f64; 9];
    for i in 1..rows - 1 {
        'px: for j in 1..cols - 1 {
            let mut k = 0;
            for di in 0..3 {
                for dj in 0..3 {
                    let v = r.get(i + di - 1, j + dj - 1);
                    if r.is_nodata(v) {
                        continue 'px;
                    }
                    window[k] = v as f64;
                    k += 1;
                }
            }
            let (mean, std) = mean_std(&window);
            if mean != 0.0 {
                out[i * cols + j] = (std / mean) as f32;
            }
        }
    }
    r.like(out)
}

/// Per-pixel coefficient of variation across the stack.
pub fn temporal_vc(s: &CalibrationStack) -> Result<Raster> {
    if s.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "temporal_vc needs at least 2 products, got {}",
            s.len()
        )));
    }
    let first = &s.rasters[0];
    let nodata = first.nodata();
    let mut series = vec![0f64; s.len()];
    let out = (0..first.len())
        .map(|i| {
            for (slot, r) in series.iter_mut().zip(&s.rasters) {
                let v = r.data()[i];
                if r.is_nodata(v) {
                    return nodata;
                }
                *slot = v as f64;
            }
            let (mean, std) = mean_std(&series);
            if mean == 0.0 {
                nodata
            } else {
                (std / mean) as f32
            }
        })
        .collect();
    first.like(out)
}

/// 1 where a valid coefficient is at or below `threshold`.
///
/// Ties count as uniform so that perfectly uniform regions survive a
/// threshold that itself evaluates to zero.
pub fn vc_mask(vc: &Raster, threshold: f64) -> Mask {
    Mask::from_fn(vc.rows(), vc.cols(), |i| {
        let v = vc.data()[i];
        !vc.is_nodata(v) && (v as f64) <= threshold
    })
}

/// 0 exactly where the DMSP value is saturated at 63.
pub fn unsaturated_mask(r: &Raster) -> Mask {
    Mask::from_fn(r.rows(), r.cols(), |i| r.data()[i] != DMSP_MAX_DN)
}

/// Intermediate masks of the calibration-field selection.
#[derive(Clone, Debug)]
pub struct CalibrationFields {
    pub spatial_threshold: Option<f64>,
    pub temporal_threshold: Option<f64>,
    pub tsm: Mask,
    pub tm: Mask,
    pub tusm: Mask,
    pub cf: Mask,
}

fn threshold_mask(vcs: &[&Raster], q: f64, rows: usize, cols: usize) -> Result<(Option<f64>, Vec<Mask>)> {
    let mut pool: Vec<f64> = vcs
        .iter()
        .flat_map(|r| r.valid_values().map(f64::from))
        .collect();
    if pool.is_empty() {
        return Ok((None, vcs.iter().map(|_| Mask::zeros(rows, cols)).collect()));
    }
    let thr = quantile(&mut pool, q)?;
    Ok((Some(thr), vcs.iter().map(|r| vc_mask(r, thr)).collect()))
}

pub fn calibration_field_masks(s: &CalibrationStack, spatial_q: f64, temporal_q: f64) -> Result<CalibrationFields> {
    let (rows, cols) = s
        .dims()
        .ok_or_else(|| Error::Empty("calibration stack has no products".into()))?;
    let svcs = s
        .rasters
        .par_iter()
        .map(spatial_vc)
        .collect::<Result<Vec<_>>>()?;
    let (spatial_threshold, sms) = threshold_mask(&svcs.iter().collect::<Vec<_>>(), spatial_q, rows, cols)?;
    let tsm = mask_product(&sms)?;

    let tvc = temporal_vc(s)?;
    let (temporal_threshold, mut tms) = threshold_mask(&[&tvc], temporal_q, rows, cols)?;
    let tm = tms.pop().expect("one mask per input");

    let usms: Vec<Mask> = s.rasters.iter().map(unsaturated_mask).collect();
    let tusm = mask_product(&usms)?;
    let cf = mask_product(&[tsm.clone(), tm.clone(), tusm.clone()])?;
    Ok(CalibrationFields {
        spatial_threshold,
        temporal_threshold,
        tsm,
        tm,
        tusm,
        cf,
    })
}

/// CF = TSM x TM x TUSM.
pub fn calibration_fields(s: &CalibrationStack, spatial_q: f64, temporal_q: f64) -> Result<Mask> {
    Ok(calibration_field_masks(s, spatial_q, temporal_q)?.cf)
}

/// Solves a 3x3 linear system by Gaussian elimination with partial pivoting.
fn solve3(mut m: [[f64; 4]; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let piv = (col..3).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))?;
        if m[piv][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, piv);
        for row in col + 1..3 {
            let f = m[row][col] / m[col][col];
            for k in col..4 {
                m[row][k] -= f * m[col][k];
            }
        }
    }
    let mut x = [0f64; 3];
    for row in (0..3).rev() {
        let s: f64 = (row + 1..3).map(|k| m[row][k] * x[k]).sum();
        x[row] = (m[row][3] - s) / m[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Least-squares quadratic mapping target DN onto base DN over the
/// calibration fields. Returns `(a, b, c)` of `base ~ a t^2 + b t + c`.
pub fn fit_quadratic(product: ProductId, target: &Raster, base: &Raster, cf: &Mask) -> Result<CalibrationFit> {
    if !target.same_dims(base) || target.dims() != cf.dims() {
        return Err(Error::Dimension(format!(
            "target {:?}, base {:?}, mask {:?}",
            target.dims(),
            base.dims(),
            cf.dims()
        )));
    }
    let pairs: Vec<(f64, f64)> = (0..target.len())
        .filter(|&i| cf.is_set(i))
        .map(|i| (target.data()[i], base.data()[i]))
        .filter(|&(t, b)| !target.is_nodata(t) && !base.is_nodata(b))
        .map(|(t, b)| (t as f64, b as f64))
        .collect();

    let mut abscissae: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    abscissae.sort_by(f64::total_cmp);
    abscissae.dedup();
    if abscissae.len() < 3 {
        return Err(Error::SingularFit(format!(
            "{product}: {} calibration pixels with {} distinct target values; need 3",
            pairs.len(),
            abscissae.len()
        )));
    }

    // Normal equations in the basis (t^2, t, 1).
    let mut s = [0f64; 5];
    let mut r = [0f64; 3];
    for &(t, y) in &pairs {
        let mut p = 1.0;
        for sk in s.iter_mut() {
            *sk += p;
            p *= t;
        }
        r[0] += t * t * y;
        r[1] += t * y;
        r[2] += y;
    }
    let system = [
        [s[4], s[3], s[2], r[0]],
        [s[3], s[2], s[1], r[1]],
        [s[2], s[1], s[0], r[2]],
    ];
    let [a, b, c] = solve3(system).ok_or_else(|| Error::SingularFit(format!("{product}: singular normal equations")))?;

    let n = pairs.len() as f64;
    let mean_y = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let ss_tot: f64 = pairs.iter().map(|p| (p.1 - mean_y).powi(2)).sum();
    let ss_res: f64 = pairs
        .iter()
        .map(|&(t, y)| (a * t * t + b * t + c - y).powi(2))
        .sum();
    let r2 = if ss_tot > 0.0 {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    } else if ss_res <= f64::EPSILON {
        1.0
    } else {
        0.0
    };
    Ok(CalibrationFit { product, a, b, c, r2 })
}

/// Fits every product of the stack against `stack[base]`. The base product
/// gets the exact identity fit.
pub fn fit_stack(s: &CalibrationStack, base: usize, cf: &Mask) -> Result<Vec<CalibrationFit>> {
    let base_raster = s
        .rasters
        .get(base)
        .ok_or_else(|| Error::InvalidArgument(format!("base index {base} outside stack of {}", s.len())))?;
    s.products
        .par_iter()
        .zip(&s.rasters)
        .enumerate()
        .map(|(i, (p, r))| {
            if i == base {
                Ok(CalibrationFit::identity(p.clone()))
            } else {
                fit_quadratic(p.clone(), r, base_raster, cf)
            }
        })
        .collect()
}

/// Applies a fit to lit pixels, clamping into [0, 63]. Dark pixels and
/// nodata pass through.
pub fn apply_calibration(r: &Raster, fit: &CalibrationFit) -> Result<Raster> {
    r.map_valid(|v| {
        if v > 0.0 {
            fit.eval(v as f64).clamp(0.0, DMSP_MAX_DN as f64) as f32
        } else {
            v
        }
    })
}

/// Total light value: sum of valid pixels.
pub fn tlv(r: &Raster) -> f64 {
    r.valid_values().map(f64::from).sum()
}

pub fn write_fits_csv<W: Write>(mut w: W, fits: &[CalibrationFit]) -> Result<()> {
    writeln!(w, "year,satellite,a,b,c,r2")?;
    for f in fits {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            f.product.year, f.product.satellite, f.a, f.b, f.c, f.r2
        )?;
    }
    Ok(())
}

pub fn read_fits_csv<R: BufRead>(r: R) -> Result<Vec<CalibrationFit>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if i == 0 {
            if line.trim() != "year,satellite,a,b,c,r2" {
                return Err(Error::Corrupt(format!("unexpected fits header {line:?}")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = || Error::Corrupt(format!("fits line {}: {line:?}", i + 1));
        if f.len() != 6 {
            return Err(bad());
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
        out.push(CalibrationFit {
            product: ProductId::dmsp(f[0].parse().map_err(|_| bad())?, f[1])?,
            a: num(f[2])?,
            b: num(f[3])?,
            c: num(f[4])?,
            r2: num(f[5])?,
        });
    }
    Ok(out)
}

pub fn write_tlv_csv<W: Write>(mut w: W, rows: &[(ProductId, f64)]) -> Result<()> {
    writeln!(w, "year,satellite,tlv")?;
    for (p, v) in rows {
        writeln!(w, "{},{},{}", p.year, p.satellite, v)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(year: u16, sat: &str) -> ProductId {
        ProductId::dmsp(year, sat).unwrap()
    }

    #[test]
    fn product_id_round_trip() {
        let id: ProductId = "1999F12".parse().unwrap();
        assert_eq!(id, p(1999, "F12"));
        assert_eq!(id.to_string(), "1999F12");
        let v: ProductId = "VIIRS2014".parse().unwrap();
        assert_eq!(v.sensor, Sensor::Viirs);
        assert!("1980F10".parse::<ProductId>().is_err());
        assert!("VIIRS2000".parse::<ProductId>().is_err());
        assert!("2000X1".parse::<ProductId>().is_err());
    }

    #[test]
    fn spatial_vc_examples() {
        let flat = Raster::filled(3, 3, 5.0).unwrap();
        assert_eq!(spatial_vc(&flat).unwrap().get(1, 1), 0.0);

        let ramp = Raster::new(3, 3, (1..=9).map(|v| v as f32).collect()).unwrap();
        let vc = spatial_vc(&ramp).unwrap();
        // population sigma of 1..9 is sqrt(60/9) = 2.58199
        assert!((vc.get(1, 1) as f64 - (60f64 / 9.0).sqrt() / 5.0).abs() < 1e-6);
        assert!((vc.get(1, 1) - 0.51640).abs() < 1e-5);
        assert!(vc.is_nodata(vc.get(0, 0)));

        let dark = Raster::filled(3, 3, 0.0).unwrap();
        let vc = spatial_vc(&dark).unwrap();
        assert!(vc.is_nodata(vc.get(1, 1)));

        assert!(spatial_vc(&Raster::filled(2, 5, 1.0).unwrap()).is_err());
    }

    fn stack_of(series: &[&[f32]]) -> CalibrationStack {
        let n = series[0].len();
        let rasters = series
            .iter()
            .map(|s| Raster::new(1, n, s.to_vec()).unwrap())
            .collect::<Vec<_>>();
        let products = (0..rasters.len()).map(|i| p(2000 + i as u16, "F15")).collect();
        CalibrationStack::new(products, rasters).unwrap()
    }

    #[test]
    fn temporal_vc_examples() {
        // pixel 0 constant, pixel 1 = [10, 20], pixel 2 dark
        let s = stack_of(&[&[7.0, 10.0, 0.0], &[7.0, 20.0, 0.0]]);
        let vc = temporal_vc(&s).unwrap();
        assert_eq!(vc.data()[0], 0.0);
        assert!((vc.data()[1] as f64 - 1.0 / 3.0).abs() < 1e-7);
        assert!(vc.is_nodata(vc.data()[2]));

        let single = stack_of(&[&[1.0]]);
        assert!(temporal_vc(&single).is_err());
    }

    #[test]
    fn vc_mask_examples() {
        let vc = Raster::new(1, 2, vec![0.1, 0.5]).unwrap();
        assert_eq!(vc_mask(&vc, 0.3).bits(), &[1, 0]);
        let nd = Raster::filled(1, 3, Raster::DEFAULT_NODATA).unwrap();
        assert_eq!(vc_mask(&nd, 10.0).count(), 0);
        assert_eq!(vc_mask(&vc, 0.05).count(), 0);
    }

    #[test]
    fn unsaturated_mask_examples() {
        let r = Raster::new(1, 3, vec![62.0, 63.0, 0.0]).unwrap();
        assert_eq!(unsaturated_mask(&r).bits(), &[1, 0, 1]);
        assert_eq!(unsaturated_mask(&Raster::filled(2, 2, 63.0).unwrap()).count(), 0);
        assert_eq!(unsaturated_mask(&Raster::filled(2, 2, 0.0).unwrap()).count(), 4);
    }

    #[test]
    fn dark_stack_has_no_fields() {
        let dark = Raster::filled(8, 8, 0.0).unwrap();
        let s = CalibrationStack::new(vec![p(2000, "F14"), p(2001, "F14")], vec![dark.clone(), dark]).unwrap();
        assert_eq!(calibration_fields(&s, 0.25, 0.25).unwrap().count(), 0);
    }

    #[test]
    fn saturated_pixel_is_never_a_field() {
        let mut a = vec![20.0f32; 64];
        a[27] = 63.0;
        let base = Raster::new(8, 8, vec![20.0; 64]).unwrap();
        let s = CalibrationStack::new(
            vec![p(2000, "F14"), p(2001, "F14")],
            vec![base, Raster::new(8, 8, a).unwrap()],
        )
        .unwrap();
        let f = calibration_field_masks(&s, 0.25, 0.25).unwrap();
        assert!(!f.cf.is_set(27));
        assert!(f.cf.is_subset_of(&f.tusm) && f.cf.is_subset_of(&f.tm) && f.cf.is_subset_of(&f.tsm));
    }

    #[test]
    fn fit_identity_and_known_quadratic() {
        let t = Raster::new(1, 6, vec![1.0, 5.0, 10.0, 20.0, 40.0, 60.0]).unwrap();
        let cf = Mask::ones(1, 6);
        let fit = fit_quadratic(p(2000, "F15"), &t, &t, &cf).unwrap();
        assert!(fit.a.abs() < 1e-9 && (fit.b - 1.0).abs() < 1e-9 && fit.c.abs() < 1e-9);
        assert_eq!(fit.r2, 1.0);

        let base = t.map_valid(|v| 0.5 * v * v + 2.0 * v - 1.0).unwrap();
        let fit = fit_quadratic(p(2000, "F15"), &t, &base, &cf).unwrap();
        assert!((fit.a - 0.5).abs() < 1e-6);
        assert!((fit.b - 2.0).abs() < 1e-6);
        assert!((fit.c + 1.0).abs() < 1e-6);
        assert!(fit.r2 >= 1.0 - 1e-9);
    }

    #[test]
    fn fit_degenerate() {
        let t = Raster::new(1, 4, vec![3.0, 3.0, 3.0, 3.0]).unwrap();
        let b = Raster::new(1, 4, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!(matches!(
            fit_quadratic(p(2000, "F15"), &t, &b, &Mask::ones(1, 4)),
            Err(Error::SingularFit(_))
        ));
        let t = Raster::new(1, 4, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let few = Mask::new(1, 4, vec![1, 1, 0, 0]).unwrap();
        assert!(fit_quadratic(p(2000, "F15"), &t, &b, &few).is_err());
    }

    #[test]
    fn apply_published_1992_f10() {
        let fit = published_fits().into_iter().next().unwrap();
        assert_eq!(fit.product, p(1992, "F10"));
        let r = Raster::new(1, 3, vec![63.0, 0.0, Raster::DEFAULT_NODATA]).unwrap();
        let out = apply_calibration(&r, &fit).unwrap();
        assert!((out.data()[0] - 62.2112).abs() < 1e-4, "{}", out.data()[0]);
        assert_eq!(out.data()[1], 0.0);
        assert_eq!(out.data()[2], Raster::DEFAULT_NODATA);
    }

    #[test]
    fn published_base_row_is_identity() {
        let base = published_fits()
            .into_iter()
            .find(|f| f.product == p(1999, "F12"))
            .unwrap();
        assert_eq!((base.a, base.b, base.c, base.r2), (0.0, 1.0, 0.0, 1.0));
        let r = Raster::new(1, 4, vec![0.0, 1.0, 30.5, 63.0]).unwrap();
        assert_eq!(apply_calibration(&r, &base).unwrap(), r);
    }

    #[test]
    fn apply_stays_in_dmsp_range() {
        for fit in published_fits() {
            let r = Raster::new(1, 64, (0..64).map(|v| v as f32).collect()).unwrap();
            let out = apply_calibration(&r, &fit).unwrap();
            assert!(out.check_dmsp_range().is_ok(), "{}", fit.product);
        }
    }

    #[test]
    fn tlv_examples() {
        let r = Raster::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(tlv(&r), 10.0);
        assert_eq!(tlv(&Raster::filled(3, 3, 0.0).unwrap()), 0.0);
        let doubled = r.map_valid(|v| v + v).unwrap();
        assert_eq!(tlv(&doubled), 2.0 * tlv(&r));
    }

    #[test]
    fn fits_csv_round_trip() {
        let fits = published_fits();
        let mut buf = Vec::new();
        write_fits_csv(&mut buf, &fits).unwrap();
        let back = read_fits_csv(buf.as_slice()).unwrap();
        assert_eq!(back, fits);
        assert!(String::from_utf8(buf).unwrap().starts_with("year,satellite,a,b,c,r2\n1992,F10,-0.0107,1.6983,-2.3134,0.9236\n"));
    }
}
