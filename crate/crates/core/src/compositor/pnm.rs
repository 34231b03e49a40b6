//! Binary PPM (P6, maxval 255) and PGM (P5, maxval 255 or 65535).

use std::fs;
use std::path::Path;

use super::{ImageBuffer, SoftMask};
use crate::error::{Error, Result};

struct Header {
    width: usize,
    height: usize,
    maxval: usize,
    body: usize,
}

fn header(bytes: &[u8], magic: &[u8; 2]) -> Result<Header> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(Error::Format(format!("missing {} magic", String::from_utf8_lossy(magic))));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(Error::Truncated("image header".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format(format!("bad image header field at byte {start}")))?;
    }
    // exactly one whitespace byte separates the header from the samples
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::Truncated("image header".into())),
    }
    let [width, height, maxval] = fields;
    Ok(Header {
        width,
        height,
        maxval,
        body: pos,
    })
}

fn body<'a>(bytes: &'a [u8], h: &Header, len: usize) -> Result<&'a [u8]> {
    let body = &bytes[h.body..];
    if body.len() < len {
        return Err(Error::Truncated(format!("image body: {} of {len} bytes", body.len())));
    }
    if body.len() > len {
        return Err(Error::Format("trailing bytes after image body".into()));
    }
    Ok(body)
}

pub fn decode_ppm(bytes: &[u8]) -> Result<ImageBuffer> {
    let h = header(bytes, b"P6")?;
    if h.maxval != 255 {
        return Err(Error::Format(format!("PPM maxval {} unsupported, expected 255", h.maxval)));
    }
    let data = body(bytes, &h, h.width * h.height * 3)?.to_vec();
    ImageBuffer::new(h.width, h.height, data)
}

pub fn encode_ppm(img: &ImageBuffer) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

/// Samples are divided by maxval.
pub fn decode_pgm(bytes: &[u8]) -> Result<SoftMask> {
    let h = header(bytes, b"P5")?;
    let n = h.width * h.height;
    let data = match h.maxval {
        255 => body(bytes, &h, n)?.iter().map(|&b| b as f64 / 255.0).collect(),
        65535 => body(bytes, &h, 2 * n)?
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / 65535.0)
            .collect(),
        m => return Err(Error::Format(format!("PGM maxval {m} unsupported, expected 255 or 65535"))),
    };
    SoftMask::new(h.width, h.height, data)
}

/// Writes 16-bit samples when `wide`, otherwise 8-bit; values are rounded.
pub fn encode_pgm(mask: &SoftMask, wide: bool) -> Vec<u8> {
    let maxval = if wide { 65535 } else { 255 };
    let mut out = format!("P5\n{} {}\n{maxval}\n", mask.width, mask.height).into_bytes();
    for &v in &mask.data {
        let q = (v.clamp(0.0, 1.0) * maxval as f64).round();
        if wide {
            out.extend_from_slice(&(q as u16).to_be_bytes());
        } else {
            out.push(q as u8);
        }
    }
    out
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    let path = path.as_ref();
    decode_ppm(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn write_ppm(img: &ImageBuffer, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_ppm(img)).map_err(|e| Error::io(path, e))
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<SoftMask> {
    let path = path.as_ref();
    decode_pgm(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn write_pgm(mask: &SoftMask, wide: bool, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pgm(mask, wide)).map_err(|e| Error::io(path, e))
}
