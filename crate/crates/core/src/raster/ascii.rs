//! ESRI ASCII grid reader.

use super::Raster;
use crate::error::{Error, Result};

struct Token<'a> {
    text: &'a str,
    line: usize,
    column: usize,
}

fn tokens(text: &str) -> impl Iterator<Item = Token<'_>> {
    text.lines().enumerate().flat_map(|(li, line)| {
        let mut out = Vec::new();
        let mut start = None;
        for (ci, ch) in line.char_indices().chain(std::iter::once((line.len(), ' '))) {
            match (ch.is_whitespace(), start) {
                (false, None) => start = Some(ci),
                (true, Some(s)) => {
                    out.push(Token {
                        text: &line[s..ci],
                        line: li + 1,
                        column: line[..s].chars().count() + 1,
                    });
                    start = None;
                }
                _ => {}
            }
        }
        out
    })
}

fn err(tok: &Token<'_>, message: impl Into<String>) -> Error {
    Error::AsciiGrid {
        line: tok.line,
        column: tok.column,
        message: message.into(),
    }
}

#[derive(Default)]
struct Header {
    ncols: Option<usize>,
    nrows: Option<usize>,
    xll: Option<(f64, bool)>,
    yll: Option<(f64, bool)>,
    cellsize: Option<f64>,
    nodata: Option<f32>,
}

fn looks_numeric(s: &str) -> bool {
    s.starts_with(|c: char| c.is_ascii_digit() || c == '-' || c == '+' || c == '.')
}

/// Parses an ESRI ASCII grid. Both `xllcorner`/`yllcorner` and
/// `xllcenter`/`yllcenter` headers are accepted; the result is always
/// anchored at the upper-left pixel corner. Cells equal to `NODATA_value`
/// become [`Raster::DEFAULT_NODATA`].
pub fn parse_ascii_grid(text: &str) -> Result<Raster> {
    let mut toks = tokens(text).peekable();
    let mut h = Header::default();
    let mut last = Token {
        text: "",
        line: 1,
        column: 1,
    };

    while let Some(key) = toks.next_if(|t| !looks_numeric(t.text)) {
        let value = toks
            .next()
            .ok_or_else(|| err(&key, format!("header key {:?} has no value", key.text)))?;
        let as_f64 = |v: &Token<'_>| {
            v.text
                .parse::<f64>()
                .map_err(|_| err(v, format!("invalid header value {:?}", v.text)))
        };
        let as_count = |v: &Token<'_>| {
            v.text
                .parse::<usize>()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| err(v, format!("invalid count {:?}", v.text)))
        };
        match key.text.to_ascii_lowercase().as_str() {
            "ncols" => h.ncols = Some(as_count(&value)?),
            "nrows" => h.nrows = Some(as_count(&value)?),
            "xllcorner" => h.xll = Some((as_f64(&value)?, false)),
            "xllcenter" => h.xll = Some((as_f64(&value)?, true)),
            "yllcorner" => h.yll = Some((as_f64(&value)?, false)),
            "yllcenter" => h.yll = Some((as_f64(&value)?, true)),
            "cellsize" => h.cellsize = Some(as_f64(&value)?).filter(|c| *c > 0.0),
            "nodata_value" => {
                h.nodata = Some(
                    value
                        .text
                        .parse::<f32>()
                        .map_err(|_| err(&value, format!("invalid NODATA_value {:?}", value.text)))?,
                )
            }
            other => return Err(err(&key, format!("unknown header key {other:?}"))),
        }
        last = value;
    }

    let missing = |name: &str| err(&last, format!("missing or invalid header {name}"));
    let ncols = h.ncols.ok_or_else(|| missing("ncols"))?;
    let nrows = h.nrows.ok_or_else(|| missing("nrows"))?;
    let (xll, x_center) = h.xll.ok_or_else(|| missing("xllcorner"))?;
    let (yll, y_center) = h.yll.ok_or_else(|| missing("yllcorner"))?;
    let cellsize = h.cellsize.ok_or_else(|| missing("cellsize"))?;
    let half = cellsize / 2.0;
    let x0 = if x_center { xll - half } else { xll };
    let y_bottom = if y_center { yll - half } else { yll };
    let y0 = y_bottom + nrows as f64 * cellsize;

    let expected = nrows * ncols;
    let mut data = Vec::with_capacity(expected);
    for tok in toks.by_ref() {
        if data.len() == expected {
            return Err(err(
                &tok,
                format!("token count exceeds header dimensions {nrows}x{ncols} = {expected}"),
            ));
        }
        let v: f32 = tok
            .text
            .parse()
            .map_err(|_| err(&tok, format!("non-numeric value {:?}", tok.text)))?;
        if !v.is_finite() {
            return Err(err(&tok, format!("non-finite value {:?}", tok.text)));
        }
        let v = match h.nodata {
            Some(nd) if v == nd => Raster::DEFAULT_NODATA,
            _ if v == Raster::DEFAULT_NODATA => {
                return Err(err(&tok, "value collides with the nodata sentinel"));
            }
            _ => v,
        };
        data.push(v);
        last = tok;
    }
    if data.len() != expected {
        return Err(err(
            &last,
            format!(
                "token count {} does not match header dimensions {nrows}x{ncols} = {expected}",
                data.len()
            ),
        ));
    }
    Raster::with_geo(nrows, ncols, x0, y0, cellsize, -cellsize, Raster::DEFAULT_NODATA, data)
}
