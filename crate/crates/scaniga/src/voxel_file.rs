//! Self-describing voxel files.
//!
//! ```text
//! SCANIGA-VOXEL 1
//! ndim 2
//! dims 4 3
//! spacing 0.5 0.5
//! origin 0 0          (optional, zero by default)
//! type u8             (u8 or f64)
//! encoding ascii      (ascii or binary)
//! data
//! <payload, x fastest>
//! ```
//!
//! ASCII payloads are whitespace separated. Binary payloads follow the
//! `data` line directly, little endian. `u8` values are divided by 255 on
//! reading.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use scaniga_core::voxel::VoxelError;
use scaniga_core::{BinaryImage, Shape, VoxelGrid};
use thiserror::Error;

pub const MAGIC: &str = "SCANIGA-VOXEL 1";

#[derive(Debug, Error)]
pub enum FormatError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("missing magic line `{MAGIC}`")]
    Magic,
    #[error("header line {line}: {message}")]
    Header { line: usize, message: String },
    #[error("payload holds {got} values, header promises {expected}")]
    Payload { expected: usize, got: usize },
    #[error("payload value `{0}` is not a number of the declared type")]
    Value(String),
    #[error(transparent)]
    Voxel(#[from] VoxelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueType {
    U8,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Encoding {
    Ascii,
    Binary,
}

#[derive(Debug, Clone, PartialEq)]
struct Header {
    dims: Vec<usize>,
    spacing: Vec<f64>,
    origin: Vec<f64>,
    value_type: ValueType,
    encoding: Encoding,
}

fn header_err(line: usize, message: impl Into<String>) -> FormatError {
    FormatError::Header {
        line,
        message: message.into(),
    }
}

fn parse_list<T: std::str::FromStr>(line: usize, words: &[&str], n: usize) -> Result<Vec<T>, FormatError> {
    if words.len() != n {
        return Err(header_err(line, format!("expected {n} values, found {}", words.len())));
    }
    words
        .iter()
        .map(|w| w.parse().map_err(|_| header_err(line, format!("cannot parse `{w}`"))))
        .collect()
}

/// Split the header off; returns it and the byte offset of the payload.
fn parse_header(bytes: &[u8]) -> Result<(Header, usize), FormatError> {
    let mut pos = 0;
    let next_line = |pos: &mut usize| -> Option<String> {
        if *pos >= bytes.len() {
            return None;
        }
        let end = bytes[*pos..].iter().position(|&b| b == b'\n').map_or(bytes.len(), |e| *pos + e);
        let s = String::from_utf8_lossy(&bytes[*pos..end]).trim().to_string();
        *pos = (end + 1).min(bytes.len());
        Some(s)
    };
    if next_line(&mut pos).as_deref() != Some(MAGIC) {
        return Err(FormatError::Magic);
    }
    let mut ndim = None;
    let mut dims = None;
    let mut spacing = None;
    let mut origin = None;
    let mut value_type = None;
    let mut encoding = None;
    let mut line_no = 1;
    loop {
        line_no += 1;
        let line = next_line(&mut pos).ok_or_else(|| header_err(line_no, "header ends before `data`"))?;
        let words: Vec<&str> = line.split_whitespace().collect();
        let Some((&key, rest)) = words.split_first() else { continue };
        let need_ndim = || ndim.ok_or_else(|| header_err(line_no, "`ndim` must come first"));
        match key {
            "ndim" => {
                let n: usize = parse_list(line_no, rest, 1)?[0];
                if !(1..=3).contains(&n) {
                    return Err(header_err(line_no, format!("ndim {n} outside 1..=3")));
                }
                ndim = Some(n);
            }
            "dims" => dims = Some(parse_list::<usize>(line_no, rest, need_ndim()?)?),
            "spacing" => spacing = Some(parse_list::<f64>(line_no, rest, need_ndim()?)?),
            "origin" => origin = Some(parse_list::<f64>(line_no, rest, need_ndim()?)?),
            "type" => {
                value_type = Some(match rest {
                    ["u8"] => ValueType::U8,
                    ["f64"] => ValueType::F64,
                    _ => return Err(header_err(line_no, "type must be u8 or f64")),
                })
            }
            "encoding" => {
                encoding = Some(match rest {
                    ["ascii"] => Encoding::Ascii,
                    ["binary"] => Encoding::Binary,
                    _ => return Err(header_err(line_no, "encoding must be ascii or binary")),
                })
            }
            "data" => break,
            other => return Err(header_err(line_no, format!("unknown key `{other}`"))),
        }
    }
    let n = ndim.ok_or_else(|| header_err(line_no, "missing ndim"))?;
    let header = Header {
        dims: dims.ok_or_else(|| header_err(line_no, "missing dims"))?,
        spacing: spacing.unwrap_or_else(|| vec![1.0; n]),
        origin: origin.unwrap_or_else(|| vec![0.0; n]),
        value_type: value_type.ok_or_else(|| header_err(line_no, "missing type"))?,
        encoding: encoding.ok_or_else(|| header_err(line_no, "missing encoding"))?,
    };
    Ok((header, pos))
}

/// Parse a voxel file from memory.
pub fn parse(bytes: &[u8]) -> Result<VoxelGrid, FormatError> {
    let (h, start) = parse_header(bytes)?;
    let expected: usize = h.dims.iter().product();
    let payload = &bytes[start..];
    let values: Vec<f64> = match (h.encoding, h.value_type) {
        (Encoding::Ascii, t) => {
            let text = String::from_utf8_lossy(payload);
            let mut out = Vec::with_capacity(expected);
            for w in text.split_whitespace() {
                let v = match t {
                    ValueType::U8 => w.parse::<u8>().map(|v| v as f64 / 255.0).ok(),
                    ValueType::F64 => w.parse::<f64>().ok(),
                };
                out.push(v.ok_or_else(|| FormatError::Value(w.to_string()))?);
            }
            out
        }
        (Encoding::Binary, ValueType::U8) => payload.iter().map(|&b| b as f64 / 255.0).collect(),
        (Encoding::Binary, ValueType::F64) => {
            if payload.len() % 8 != 0 {
                return Err(FormatError::Payload {
                    expected,
                    got: payload.len() / 8,
                });
            }
            payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect()
        }
    };
    if values.len() != expected {
        return Err(FormatError::Payload {
            expected,
            got: values.len(),
        });
    }
    let shape = Shape::with_ndim(&h.dims)?;
    Ok(VoxelGrid::with_origin(shape, &h.spacing, &h.origin, values)?)
}

pub fn read(path: &Path) -> Result<VoxelGrid, FormatError> {
    parse(&fs::read(path)?)
}

/// Serialize a grid. `u8` output rounds `255 v` after clamping to `[0, 1]`.
pub fn to_bytes(grid: &VoxelGrid, value_type: ValueType, encoding: Encoding) -> Vec<u8> {
    let nd = grid.ndim();
    let dims = &grid.shape().dims()[..nd];
    let join = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ");
    let mut out = Vec::new();
    let _ = writeln!(out, "{MAGIC}");
    let _ = writeln!(out, "ndim {nd}");
    let _ = writeln!(out, "dims {}", dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(" "));
    let _ = writeln!(out, "spacing {}", join(&grid.spacing()[..nd]));
    let _ = writeln!(out, "origin {}", join(&grid.origin()[..nd]));
    let _ = writeln!(
        out,
        "type {}",
        match value_type {
            ValueType::U8 => "u8",
            ValueType::F64 => "f64",
        }
    );
    let _ = writeln!(
        out,
        "encoding {}",
        match encoding {
            Encoding::Ascii => "ascii",
            Encoding::Binary => "binary",
        }
    );
    let _ = writeln!(out, "data");
    let to_u8 = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    match (encoding, value_type) {
        (Encoding::Ascii, ValueType::U8) => {
            for row in grid.values().chunks(dims[0]) {
                let line: Vec<String> = row.iter().map(|&v| to_u8(v).to_string()).collect();
                let _ = writeln!(out, "{}", line.join(" "));
            }
        }
        (Encoding::Ascii, ValueType::F64) => {
            for row in grid.values().chunks(dims[0]) {
                let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
                let _ = writeln!(out, "{}", line.join(" "));
            }
        }
        (Encoding::Binary, ValueType::U8) => out.extend(grid.values().iter().map(|&v| to_u8(v))),
        (Encoding::Binary, ValueType::F64) => {
            for v in grid.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

pub fn write(path: &Path, grid: &VoxelGrid, value_type: ValueType, encoding: Encoding) -> Result<(), FormatError> {
    fs::write(path, to_bytes(grid, value_type, encoding))?;
    Ok(())
}

/// A binary image as a grid of zeros and ones with the given physical
/// box; subdivided images get proportionally finer spacing.
pub fn binary_grid(img: &BinaryImage, origin: [f64; 3], lengths: [f64; 3]) -> VoxelGrid {
    let shape = img.shape();
    let nd = shape.ndim();
    let dims = shape.dims();
    let spacing: Vec<f64> = (0..nd).map(|a| lengths[a] / dims[a] as f64).collect();
    let values = img.bits().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    VoxelGrid::with_origin(shape, &spacing, &origin[..nd], values).expect("consistent binary image")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_errors_name_the_line() {
        let text = format!("{MAGIC}\nndim 2\ndims 2\n");
        match parse(text.as_bytes()) {
            Err(FormatError::Header { line: 3, .. }) => {}
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse(b"P2\n"), Err(FormatError::Magic)));
    }

    #[test]
    fn unknown_key_is_rejected() {
        let text = format!("{MAGIC}\nndim 1\ndims 1\ncolour red\n");
        assert!(matches!(parse(text.as_bytes()), Err(FormatError::Header { line: 4, .. })));
    }
}
