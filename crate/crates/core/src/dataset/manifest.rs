//! Line-oriented manifest CSV and the content-addressed tile store.
//!
//! Tiles live under `<root>/tiles/<first two hex digits>/<sha256>.ntlr`,
//! keyed by the SHA-256 of their NTLR encoding, so identical tiles (the
//! reference tiles shared by every target year of a point) are stored
//! once. Manifest paths are relative to `<root>`.

use std::fmt;
use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use super::Example;
use crate::calib::ProductId;
use crate::error::{Error, Result};
use crate::raster::{read_raster_file, write_raster, Raster, TileRef};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
    Unassigned,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Unassigned => "unassigned",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            "unassigned" => Ok(Split::Unassigned),
            _ => Err(Error::Corrupt(format!("unknown split label {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub id: usize,
    pub split: Split,
    pub product_tgt: ProductId,
    pub tile: TileRef,
    pub dmsp_ref: PathBuf,
    pub dmsp_tgt: PathBuf,
    pub viirs_ref: PathBuf,
    pub viirs_tgt: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    /// Seed of the last sampling or split step.
    pub seed: u64,
}

pub const MANIFEST_HEADER: &str = "example_id,split,target_year,target_satellite,anchor_row,anchor_col,\
dmsp_ref_path,dmsp_tgt_path,viirs_ref_path,viirs_tgt_path,tile_h,tile_w";

/// Writes `r` into the store under `root` (if not already present) and
/// returns its path relative to `root`.
pub fn store_tile(root: &Path, r: &Raster) -> Result<PathBuf> {
    let bytes = write_raster(r);
    let hex: String = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
    let rel = PathBuf::from("tiles").join(&hex[..2]).join(format!("{hex}.ntlr"));
    let abs = root.join(&rel);
    if !abs.exists() {
        fs::create_dir_all(abs.parent().expect("has parent"))?;
        let tmp = abs.with_extension("tmp");
        fs::write(&tmp, &bytes)?;
        fs::rename(&tmp, &abs)?;
    }
    Ok(rel)
}

impl DatasetManifest {
    /// Stores every tile of `examples` under `root`; all entries start
    /// unassigned.
    pub fn store(examples: &[Example], root: &Path, seed: u64) -> Result<Self> {
        let entries = examples
            .iter()
            .enumerate()
            .map(|(id, e)| {
                Ok(ManifestEntry {
                    id,
                    split: Split::Unassigned,
                    product_tgt: e.product_tgt.clone(),
                    tile: e.tile,
                    dmsp_ref: store_tile(root, &e.dmsp_ref)?,
                    dmsp_tgt: store_tile(root, &e.dmsp_tgt)?,
                    viirs_ref: store_tile(root, &e.viirs_ref)?,
                    viirs_tgt: store_tile(root, &e.viirs_tgt)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { entries, seed })
    }

    pub fn count(&self, split: Split) -> usize {
        self.entries.iter().filter(|e| e.split == split).count()
    }
}

/// Reads the tiles of every entry labelled `split`.
pub fn load_examples(m: &DatasetManifest, root: &Path, split: Split) -> Result<Vec<Example>> {
    m.entries
        .iter()
        .filter(|e| e.split == split)
        .map(|e| {
            let ex = Example {
                dmsp_ref: read_raster_file(root.join(&e.dmsp_ref))?,
                dmsp_tgt: read_raster_file(root.join(&e.dmsp_tgt))?,
                viirs_ref: read_raster_file(root.join(&e.viirs_ref))?,
                viirs_tgt: read_raster_file(root.join(&e.viirs_tgt))?,
                product_tgt: e.product_tgt.clone(),
                tile: e.tile,
            };
            let (h, w) = (e.tile.height, e.tile.width);
            if ex.dmsp_ref.dims() != (h, w)
                || ex.dmsp_tgt.dims() != (h, w)
                || ex.viirs_ref.dims() != (2 * h, 2 * w)
                || ex.viirs_tgt.dims() != (2 * h, 2 * w)
            {
                return Err(Error::Dimension(format!("example {} has tiles inconsistent with {h}x{w}", e.id)));
            }
            Ok(ex)
        })
        .collect()
}

fn path_str(p: &Path) -> Result<&str> {
    let s = p.to_str().ok_or_else(|| Error::InvalidArgument(format!("non-UTF-8 path {p:?}")))?;
    if s.contains(',') || s.contains('\n') {
        return Err(Error::InvalidArgument(format!("path {s:?} cannot be stored in a CSV field")));
    }
    Ok(s)
}

pub fn write_manifest<W: Write>(mut w: W, m: &DatasetManifest) -> Result<()> {
    writeln!(w, "# seed={}", m.seed)?;
    writeln!(w, "{MANIFEST_HEADER}")?;
    for e in &m.entries {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            e.id,
            e.split,
            e.product_tgt.year,
            e.product_tgt.satellite,
            e.tile.anchor_row,
            e.tile.anchor_col,
            path_str(&e.dmsp_ref)?,
            path_str(&e.dmsp_tgt)?,
            path_str(&e.viirs_ref)?,
            path_str(&e.viirs_tgt)?,
            e.tile.height,
            e.tile.width
        )?;
    }
    Ok(())
}

pub fn read_manifest<R: BufRead>(r: R) -> Result<DatasetManifest> {
    let mut m = DatasetManifest::default();
    let mut saw_header = false;
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim_end();
        let lineno = i + 1;
        if line.is_empty() {
            continue;
        }
        if let Some(c) = line.strip_prefix('#') {
            if let Some(s) = c.trim().strip_prefix("seed=") {
                m.seed = s.parse().map_err(|_| Error::Corrupt(format!("line {lineno}: bad seed {s:?}")))?;
            }
            continue;
        }
        if !saw_header {
            if line != MANIFEST_HEADER {
                return Err(Error::Corrupt(format!("line {lineno}: unexpected manifest header {line:?}")));
            }
            saw_header = true;
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 12 {
            return Err(Error::Corrupt(format!("line {lineno}: expected 12 fields, got {}", f.len())));
        }
        let num = |s: &str| -> Result<usize> { s.parse().map_err(|_| Error::Corrupt(format!("line {lineno}: bad number {s:?}"))) };
        let year = num(f[2])? as u16;
        let product_tgt = if f[3] == "NPP" {
            ProductId::viirs(year)?
        } else {
            ProductId::dmsp(year, f[3])?
        };
        m.entries.push(ManifestEntry {
            id: num(f[0])?,
            split: f[1].parse()?,
            product_tgt,
            tile: TileRef::new(num(f[4])?, num(f[5])?, num(f[10])?, num(f[11])?),
            dmsp_ref: f[6].into(),
            dmsp_tgt: f[7].into(),
            viirs_ref: f[8].into(),
            viirs_tgt: f[9].into(),
        });
    }
    if !saw_header {
        return Err(Error::Corrupt("manifest has no header".into()));
    }
    Ok(m)
}

pub fn write_manifest_file(path: &Path, m: &DatasetManifest) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut buf = Vec::new();
    write_manifest(&mut buf, m)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_manifest_file(path: &Path) -> Result<DatasetManifest> {
    read_manifest(std::io::BufReader::new(fs::File::open(path)?))
}
