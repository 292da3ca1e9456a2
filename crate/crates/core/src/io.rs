//! Frame serialization.
//!
//! Two on-disk forms:
//! - binary PGM (P5, maxval 255) per frame, for 8-bit export. Samples are
//!   clamped to [0, 255] and rounded half-away-from-zero.
//! - a raw little-endian f64 planar dump for lossless round-trips: magic
//!   `PSRV1`, then height, width, frames as 32-bit little-endian unsigned,
//!   then the samples in vectorization order. Extension `.psrv` by convention.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::volume::ImageVolume;

const DUMP_MAGIC: &[u8; 5] = b"PSRV1";

fn malformed(path: &Path, reason: impl Into<String>) -> Error {
    Error::Malformed {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

/// Quantizes one sample for 8-bit export: round half away from zero, then
/// clamp to [0, 255].
pub fn quantize_u8(s: f64) -> u8 {
    let r = if s >= 0.0 { (s + 0.5).floor() } else { (s - 0.5).ceil() };
    r.clamp(0.0, 255.0) as u8
}

/// Writes one frame of `v` as binary PGM.
pub fn write_pgm(v: &ImageVolume, frame: usize, path: &Path) -> Result<()> {
    let f = v.frame(frame);
    let (h, w) = (f.height(), f.width());
    let mut out = Vec::with_capacity(h * w + 32);
    out.extend_from_slice(format!("P5\n{w} {h}\n255\n").as_bytes());
    // PGM is row-major, top row first.
    for i in 0..h {
        for j in 0..w {
            out.push(quantize_u8(f.get(i, j)));
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads a binary PGM (maxval 255 only) as a single-frame volume.
pub fn read_pgm(path: &Path) -> Result<ImageVolume> {
    let bytes = fs::read(path)?;
    let mut pos = 0usize;

    fn next_token(bytes: &[u8], pos: &mut usize) -> Option<String> {
        // skip whitespace and '#' comments
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
            } else {
                break;
            }
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos > start {
            Some(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
        } else {
            None
        }
    }

    let magic = next_token(&bytes, &mut pos).ok_or_else(|| malformed(path, "empty file"))?;
    if magic != "P5" {
        return Err(malformed(path, format!("expected P5, got {magic}")));
    }
    let parse = |tok: Option<String>, what: &str| -> Result<usize> {
        tok.ok_or_else(|| malformed(path, format!("missing {what}")))?
            .parse::<usize>()
            .map_err(|_| malformed(path, format!("bad {what}")))
    };
    let w = parse(next_token(&bytes, &mut pos), "width")?;
    let h = parse(next_token(&bytes, &mut pos), "height")?;
    let maxval = parse(next_token(&bytes, &mut pos), "maxval")?;
    if maxval != 255 {
        return Err(malformed(path, format!("unsupported maxval {maxval}")));
    }
    pos += 1; // single whitespace byte after maxval
    if bytes.len() < pos + h * w {
        return Err(malformed(path, "truncated raster"));
    }
    let raster = &bytes[pos..pos + h * w];
    ImageVolume::from_fn(h, w, 1, |i, j, _| raster[i * w + j] as f64)
}

/// Writes the whole volume as a lossless f64 dump.
pub fn write_dump(v: &ImageVolume, path: &Path) -> Result<()> {
    let mut out = fs::File::create(path)?;
    out.write_all(DUMP_MAGIC)?;
    out.write_all(&(v.height() as u32).to_le_bytes())?;
    out.write_all(&(v.width() as u32).to_le_bytes())?;
    out.write_all(&(v.frames() as u32).to_le_bytes())?;
    let mut buf = Vec::with_capacity(v.len() * 8);
    for &s in v.data() {
        buf.extend_from_slice(&s.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

/// Reads a lossless f64 dump written by [`write_dump`].
pub fn read_dump(path: &Path) -> Result<ImageVolume> {
    let mut f = fs::File::open(path)?;
    let mut header = [0u8; 17];
    f.read_exact(&mut header)
        .map_err(|_| malformed(path, "truncated header"))?;
    if &header[..5] != DUMP_MAGIC {
        return Err(malformed(path, "bad magic"));
    }
    let rd = |o: usize| u32::from_le_bytes(header[o..o + 4].try_into().unwrap()) as usize;
    let (h, w, t) = (rd(5), rd(9), rd(13));
    let mut raw = Vec::new();
    f.read_to_end(&mut raw)?;
    if raw.len() != h * w * t * 8 {
        return Err(malformed(path, "raster length mismatch"));
    }
    let data = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    ImageVolume::new(h, w, t, data)
}
