//! NTLR v1 native raster format.
//!
//! Layout, little-endian throughout:
//!
//! | field    | type  |
//! |----------|-------|
//! | magic    | `b"NTLR"` |
//! | version  | u16 = 1 |
//! | dtype    | u8 = 0 (f32) |
//! | reserved | u8 = 0 |
//! | rows, cols | u32, u32 |
//! | x0, y0, dx, dy | f64 x 4 |
//! | nodata   | f32 |
//! | values   | rows*cols f32, row-major |

use std::fs;
use std::path::Path;

use super::Raster;
use crate::error::{Error, Result};

pub const NTLR_MAGIC: [u8; 4] = *b"NTLR";
pub const NTLR_VERSION: u16 = 1;
const DTYPE_F32: u8 = 0;
const HEADER_LEN: usize = 4 + 2 + 1 + 1 + 4 + 4 + 8 * 4 + 4;

pub fn write_raster(r: &Raster) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + r.len() * 4);
    out.extend_from_slice(&NTLR_MAGIC);
    out.extend_from_slice(&NTLR_VERSION.to_le_bytes());
    out.push(DTYPE_F32);
    out.push(0);
    out.extend_from_slice(&(r.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(r.cols() as u32).to_le_bytes());
    for v in [r.x0, r.y0, r.dx, r.dy] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&r.nodata().to_le_bytes());
    for v in r.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub(crate) struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(buf: &'a [u8], what: &'static str) -> Self {
        Self { buf, pos: 0, what }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Truncated(format!(
                "{}: need {n} bytes at offset {}, have {}",
                self.what,
                self.pos,
                self.buf.len() - self.pos
            ))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.array::<1>()?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.array()?))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    pub(crate) fn f32_vec(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::Corrupt("payload size overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

pub fn read_raster(bytes: &[u8]) -> Result<Raster> {
    let mut cur = Cursor::new(bytes, "NTLR");
    let magic = cur.array::<4>()?;
    if magic != NTLR_MAGIC {
        return Err(Error::BadMagic {
            expected: NTLR_MAGIC,
            found: magic,
        });
    }
    let version = cur.u16()?;
    if version != NTLR_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let dtype = cur.u8()?;
    if dtype != DTYPE_F32 {
        return Err(Error::Corrupt(format!("unsupported dtype {dtype}")));
    }
    let _reserved = cur.u8()?;
    let rows = cur.u32()? as usize;
    let cols = cur.u32()? as usize;
    let (x0, y0, dx, dy) = (cur.f64()?, cur.f64()?, cur.f64()?, cur.f64()?);
    let nodata = cur.f32()?;
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Corrupt("raster dims overflow".into()))?;
    let data = cur.f32_vec(n)?;
    if cur.remaining() != 0 {
        return Err(Error::Corrupt(format!("{} trailing bytes", cur.remaining())));
    }
    Raster::with_geo(rows, cols, x0, y0, dx, dy, nodata, data)
}

pub fn read_raster_file(path: impl AsRef<Path>) -> Result<Raster> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })?;
    read_raster(&bytes)
}

pub fn write_raster_file(path: impl AsRef<Path>, r: &Raster) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, write_raster(r))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_pixel_payload_is_le_f32() {
        let r = Raster::new(1, 1, vec![7.5]).unwrap();
        let bytes = write_raster(&r);
        assert_eq!(bytes.len(), HEADER_LEN + 4);
        assert_eq!(&bytes[..4], b"NTLR");
        assert_eq!(&bytes[HEADER_LEN..], &7.5f32.to_le_bytes());
    }

    #[test]
    fn bad_magic() {
        let mut bytes = write_raster(&Raster::new(1, 1, vec![1.0]).unwrap());
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(read_raster(&bytes), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn bad_version_and_truncation() {
        let bytes = write_raster(&Raster::new(2, 2, vec![1.0; 4]).unwrap());
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(matches!(read_raster(&v2), Err(Error::UnsupportedVersion(2))));
        assert!(matches!(read_raster(&bytes[..bytes.len() - 1]), Err(Error::Truncated(_))));
        assert!(matches!(read_raster(&bytes[..10]), Err(Error::Truncated(_))));
    }

    fn arb_raster() -> impl Strategy<Value = Raster> {
        (1usize..12, 1usize..12).prop_flat_map(|(r, c)| {
            (
                proptest::collection::vec(-1e6f32..1e6, r * c),
                -180.0f64..180.0,
                -90.0f64..90.0,
                1e-4f64..1.0,
            )
                .prop_map(move |(data, x0, y0, d)| {
                    Raster::with_geo(r, c, x0, y0, d, -d, -9999.0, data).unwrap()
                })
        })
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(r in arb_raster()) {
            let bytes = write_raster(&r);
            let back = read_raster(&bytes).unwrap();
            prop_assert_eq!(write_raster(&back), bytes);
            prop_assert!(back.data().iter().zip(r.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
            prop_assert_eq!(back, r);
        }
    }
}
