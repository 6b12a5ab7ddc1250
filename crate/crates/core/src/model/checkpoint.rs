//! NTLC checkpoint format, little-endian:
//!
//! ```text
//! magic "NTLC" | u16 version
//! config: u8 variant | u32 h, w, c | f3, hstar, gstar: u32 x 4 each
//!         | f1: u32 x 4 | f32 dmsp_scale, viirs_scale
//! u32 count, then per tensor:
//!         u32 key_len | key bytes | u32 rank | u32 dims[rank] | f32 payload
//! ```

use std::fs;
use std::path::Path;

use super::config::{ModelConfig, RcanConfig, ResNetConfig, Variant};
use super::params::{param_specs, Params};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::raster::ntlr::Cursor;

pub const NTLC_MAGIC: [u8; 4] = *b"NTLC";
pub const NTLC_VERSION: u16 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn save_checkpoint(p: &Params<f32>, cfg: &ModelConfig) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&NTLC_MAGIC);
    out.extend_from_slice(&NTLC_VERSION.to_le_bytes());
    out.push(cfg.variant.code());
    for v in [cfg.h, cfg.w, cfg.c] {
        put_u32(&mut out, v);
    }
    for r in [cfg.f3, cfg.hstar, cfg.gstar] {
        for v in [r.inp_c, r.mid_c, r.out_c, r.blocks] {
            put_u32(&mut out, v);
        }
    }
    for v in [cfg.f1.dim, cfg.f1.groups, cfg.f1.blocks, cfg.f1.reduction] {
        put_u32(&mut out, v);
    }
    out.extend_from_slice(&cfg.dmsp_scale.to_le_bytes());
    out.extend_from_slice(&cfg.viirs_scale.to_le_bytes());

    put_u32(&mut out, p.len());
    for (key, t) in p.iter() {
        put_u32(&mut out, key.len());
        out.extend_from_slice(key.as_bytes());
        put_u32(&mut out, t.shape().len());
        for &d in t.shape() {
            put_u32(&mut out, d);
        }
        for v in t.data().iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn read_config(cur: &mut Cursor) -> Result<ModelConfig> {
    let variant = Variant::from_code(cur.u8()?)?;
    let mut u = || cur.u32().map(|v| v as usize);
    let (h, w, c) = (u()?, u()?, u()?);
    let mut resnet = || -> Result<ResNetConfig> { Ok(ResNetConfig::new(u()?, u()?, u()?, u()?)) };
    let (f3, hstar, gstar) = (resnet()?, resnet()?, resnet()?);
    let f1 = RcanConfig::new(u()?, u()?, u()?, u()?);
    let cfg = ModelConfig {
        variant,
        h,
        w,
        c,
        f3,
        hstar,
        gstar,
        f1,
        dmsp_scale: cur.f32()?,
        viirs_scale: cur.f32()?,
    };
    cfg.validate().map_err(|e| Error::Corrupt(format!("embedded config invalid: {e}")))?;
    Ok(cfg)
}

fn load_inner(bytes: &[u8]) -> Result<(Params<f32>, ModelConfig)> {
    let mut cur = Cursor::new(bytes, "NTLC");
    let magic = cur.array::<4>()?;
    if magic != NTLC_MAGIC {
        return Err(Error::BadMagic {
            expected: NTLC_MAGIC,
            found: magic,
        });
    }
    let version = cur.u16()?;
    if version != NTLC_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let cfg = read_config(&mut cur)?;
    let trainable: std::collections::BTreeMap<String, bool> =
        param_specs(&cfg).into_iter().map(|s| (s.key, s.kind.trainable())).collect();

    let count = cur.u32()? as usize;
    let mut p = Params::new();
    for _ in 0..count {
        let klen = cur.u32()? as usize;
        let key = std::str::from_utf8(cur.take(klen)?)
            .map_err(|_| Error::Corrupt("parameter key is not UTF-8".into()))?
            .to_owned();
        let rank = cur.u32()? as usize;
        if rank > 8 {
            return Err(Error::Corrupt(format!("parameter {key:?} has rank {rank}")));
        }
        let shape = (0..rank).map(|_| cur.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Corrupt("parameter size overflow".into()))?;
        let data = cur.f32_vec(n)?;
        let Some(&train) = trainable.get(&key) else {
            return Err(Error::Corrupt(format!("unexpected parameter {key:?}")));
        };
        let t = if train { Tensor::param(&shape, data)? } else { Tensor::new(&shape, data)? };
        if p.contains(&key) {
            return Err(Error::Corrupt(format!("duplicate parameter {key:?}")));
        }
        p.insert(key, t);
    }
    if cur.remaining() != 0 {
        return Err(Error::Corrupt(format!("{} trailing bytes", cur.remaining())));
    }
    p.check_against(&cfg)?;
    Ok((p, cfg))
}

/// Inverse of [`save_checkpoint`]. Keys and shapes are validated against
/// the embedded config.
pub fn load_checkpoint(bytes: &[u8]) -> Result<(Params<f32>, ModelConfig)> {
    load_inner(bytes).map_err(|e| match e {
        Error::Truncated(m) => Error::Corrupt(format!("checkpoint truncated: {m}")),
        e => e,
    })
}

pub fn save_checkpoint_file(path: impl AsRef<Path>, p: &Params<f32>, cfg: &ModelConfig) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, save_checkpoint(p, cfg))?;
    Ok(())
}

pub fn load_checkpoint_file(path: impl AsRef<Path>) -> Result<(Params<f32>, ModelConfig)> {
    load_checkpoint(&fs::read(path)?)
}
