//! On-disk formats: binary frame files and proposal JSON.
//!
//! Frame layout (little endian):
//!
//! ```text
//! "MSFP" | u32 version = 1 | u32 frame_index | u64 point_count | u8 has_mask
//! point_count x (f32 x, f32 y, f32 z, f32 intensity)
//! point_count x u8 mask in {0, 1}          (only when has_mask = 1)
//! ```

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::model::{Point3, PointCloudFrame, Proposal};

pub const FRAME_MAGIC: &[u8; 4] = b"MSFP";
pub const FRAME_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("bad magic {0:?}, expected \"MSFP\"")]
    BadMagic([u8; 4]),
    #[error("unsupported frame format version {0}")]
    UnsupportedVersion(u32),
    #[error("mask flag must be 0 or 1, got {0}")]
    BadMaskFlag(u8),
    #[error("mask byte {value} at point {index} is not 0 or 1")]
    BadMaskByte { index: usize, value: u8 },
    #[error("trailing bytes after frame payload")]
    TrailingBytes,
    #[error("point count {0} does not fit in memory")]
    TooLarge(u64),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub fn write_frame<W: Write>(mut out: W, frame: &PointCloudFrame) -> io::Result<()> {
    let mut buf = Vec::with_capacity(21 + frame.len() * 17);
    buf.extend_from_slice(FRAME_MAGIC);
    buf.extend_from_slice(&FRAME_VERSION.to_le_bytes());
    buf.extend_from_slice(&frame.frame_index.to_le_bytes());
    buf.extend_from_slice(&(frame.len() as u64).to_le_bytes());
    buf.push(u8::from(frame.foreground_mask.is_some()));
    for p in &frame.points {
        for v in [p.x, p.y, p.z, p.intensity] {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    if let Some(mask) = &frame.foreground_mask {
        buf.extend(mask.iter().map(|&m| u8::from(m)));
    }
    out.write_all(&buf)
}

pub fn read_frame<R: Read>(mut input: R) -> Result<PointCloudFrame, FormatError> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    decode_frame(&bytes)
}

fn take<'a>(bytes: &mut &'a [u8], n: usize) -> Result<&'a [u8], FormatError> {
    if bytes.len() < n {
        return Err(io::Error::from(io::ErrorKind::UnexpectedEof).into());
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

pub fn decode_frame(mut bytes: &[u8]) -> Result<PointCloudFrame, FormatError> {
    let cur = &mut bytes;
    let magic: [u8; 4] = take(cur, 4)?.try_into().unwrap();
    if &magic != FRAME_MAGIC {
        return Err(FormatError::BadMagic(magic));
    }
    let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().unwrap());
    let version = u32_at(take(cur, 4)?);
    if version != FRAME_VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let frame_index = u32_at(take(cur, 4)?);
    let count = u64::from_le_bytes(take(cur, 8)?.try_into().unwrap());
    let has_mask = take(cur, 1)?[0];
    if has_mask > 1 {
        return Err(FormatError::BadMaskFlag(has_mask));
    }
    let n = usize::try_from(count).map_err(|_| FormatError::TooLarge(count))?;
    let record_bytes = n.checked_mul(16).ok_or(FormatError::TooLarge(count))?;
    let records = take(cur, record_bytes)?;
    let points = records
        .chunks_exact(16)
        .map(|r| {
            let f =
                |i: usize| f64::from(f32::from_le_bytes(r[i * 4..i * 4 + 4].try_into().unwrap()));
            Point3::new(f(0), f(1), f(2), f(3))
        })
        .collect();
    let foreground_mask = if has_mask == 1 {
        let raw = take(cur, n)?;
        let mask = raw
            .iter()
            .enumerate()
            .map(|(index, &value)| match value {
                0 => Ok(false),
                1 => Ok(true),
                _ => Err(FormatError::BadMaskByte { index, value }),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Some(mask)
    } else {
        None
    };
    if !cur.is_empty() {
        return Err(FormatError::TrailingBytes);
    }
    Ok(PointCloudFrame {
        frame_index,
        points,
        foreground_mask,
    })
}

pub fn save_frame(path: &Path, frame: &PointCloudFrame) -> io::Result<()> {
    let mut buf = Vec::new();
    write_frame(&mut buf, frame)?;
    fs::write(path, buf)
}

pub fn load_frame(path: &Path) -> Result<PointCloudFrame, FormatError> {
    decode_frame(&fs::read(path)?)
}

pub fn proposals_to_json(proposals: &[Proposal]) -> String {
    serde_json::to_string_pretty(proposals).expect("proposals serialize")
}

pub fn proposals_from_json(text: &str) -> Result<Vec<Proposal>, FormatError> {
    Ok(serde_json::from_str(text)?)
}

/// Rounds a point through the on-disk `f32` representation.
pub fn quantize(p: Point3) -> Point3 {
    let q = |v: f64| f64::from(v as f32);
    Point3::new(q(p.x), q(p.y), q(p.z), q(p.intensity))
}
