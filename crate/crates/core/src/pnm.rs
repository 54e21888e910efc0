//! Binary netpbm (P5/P6) encoding and decoding.

use crate::error::{Error, Result};

/// A decoded 8-bit raster, interleaved when `channels == 3`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

fn header(magic: &str, width: usize, height: usize, maxval: u32) -> Vec<u8> {
    format!("{magic}\n{width} {height}\n{maxval}\n").into_bytes()
}

pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    assert_eq!(pixels.len(), width * height);
    let mut out = header("P5", width, height, 255);
    out.extend_from_slice(pixels);
    out
}

pub fn encode_ppm(width: usize, height: usize, rgb: &[u8]) -> Vec<u8> {
    assert_eq!(rgb.len(), 3 * width * height);
    let mut out = header("P6", width, height, 255);
    out.extend_from_slice(rgb);
    out
}

/// 16-bit samples are written most significant byte first.
pub fn encode_pgm16(width: usize, height: usize, samples: &[u16]) -> Vec<u8> {
    assert_eq!(samples.len(), width * height);
    let mut out = header("P5", width, height, 65535);
    for s in samples {
        out.extend_from_slice(&s.to_be_bytes());
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b' ' | b'\t' | b'\n' | b'\r' => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::ImageParse(format!("expected {what} in header")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::ImageParse(format!("{what} out of range")))
    }
}

/// Decodes a P5 or P6 image with 8-bit samples (maxval ≤ 255).
pub fn decode(bytes: &[u8]) -> Result<Raster> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(Error::ImageParse("missing netpbm magic".into()));
    }
    let channels = match bytes[1] {
        b'5' => 1,
        b'6' => 3,
        other => {
            return Err(Error::ImageParse(format!(
                "unsupported netpbm type P{}",
                other as char
            )))
        }
    };
    let mut cur = Cursor { bytes, pos: 2 };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::ImageParse("zero image extent".into()));
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::ImageParse(format!("maxval {maxval} not supported (8-bit only)")));
    }
    match bytes.get(cur.pos) {
        Some(b' ' | b'\t' | b'\n' | b'\r') => cur.pos += 1,
        _ => return Err(Error::ImageParse("missing whitespace after maxval".into())),
    }
    let need = width
        .checked_mul(height)
        .and_then(|v| v.checked_mul(channels))
        .ok_or_else(|| Error::ImageParse("image extent overflows".into()))?;
    let payload = &bytes[cur.pos..];
    if payload.len() < need {
        return Err(Error::Truncated(format!(
            "pixel payload has {} bytes, expected {need}",
            payload.len()
        )));
    }
    let mut data = payload[..need].to_vec();
    if maxval != 255 {
        for v in &mut data {
            *v = ((*v as u32 * 255 + maxval as u32 / 2) / maxval as u32).min(255) as u8;
        }
    }
    Ok(Raster { width, height, channels, data })
}
