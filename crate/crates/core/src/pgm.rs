//! 8-bit PGM (P2/P5) reading and writing.
//!
//! Samples load as their stored integer values without rescaling by maxval.
//! Writing rounds half-up, clamps to `[0, 255]` and always declares maxval 255.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, PgmError, Result};
use crate::image::Image;

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn skip_whitespace_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    /// Next whitespace-delimited token and its starting offset.
    fn token(&mut self) -> Option<(&'a str, usize)> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len()
            && !self.bytes[self.pos].is_ascii_whitespace()
            && self.bytes[self.pos] != b'#'
        {
            self.pos += 1;
        }
        if start == self.pos {
            None
        } else {
            // non-UTF8 bytes make the token unparseable anyway
            Some((
                std::str::from_utf8(&self.bytes[start..self.pos]).unwrap_or("\u{fffd}"),
                start,
            ))
        }
    }

    fn header_number(&mut self, field: &'static str) -> std::result::Result<(u32, usize), PgmError> {
        let (tok, offset) = self.token().ok_or(PgmError::TruncatedHeader {
            field,
            offset: self.pos,
        })?;
        tok.parse::<u32>()
            .map(|v| (v, offset))
            .map_err(|_| PgmError::BadHeaderToken {
                token: tok.to_string(),
                offset,
            })
    }
}

pub fn load_pgm(bytes: &[u8]) -> std::result::Result<Image, PgmError> {
    if bytes.len() < 2 {
        return Err(PgmError::BadMagic {
            found: String::from_utf8_lossy(bytes).into_owned(),
        });
    }
    let binary = match &bytes[..2] {
        b"P5" => true,
        b"P2" => false,
        other => {
            return Err(PgmError::BadMagic {
                found: String::from_utf8_lossy(other).into_owned(),
            })
        }
    };
    let mut cur = Cursor { bytes, pos: 2 };
    if cur.pos < bytes.len() && !bytes[cur.pos].is_ascii_whitespace() && bytes[cur.pos] != b'#' {
        return Err(PgmError::BadHeaderToken {
            token: String::from_utf8_lossy(&bytes[..bytes.len().min(8)]).into_owned(),
            offset: 0,
        });
    }
    let (width, _) = cur.header_number("width")?;
    let (height, _) = cur.header_number("height")?;
    let (maxval, max_off) = cur.header_number("maxval")?;
    let (width, height) = (width as usize, height as usize);
    if width == 0 || height == 0 {
        return Err(PgmError::ZeroDimension { width, height });
    }
    if maxval == 0 || maxval > 255 {
        return Err(PgmError::UnsupportedMaxval {
            maxval,
            offset: max_off,
        });
    }
    let expected = width * height;
    let mut data = Vec::with_capacity(expected);
    if binary {
        // exactly one whitespace byte separates maxval from the raster
        if cur.pos >= bytes.len() {
            return Err(PgmError::TruncatedPayload {
                offset: cur.pos,
                expected,
                got: 0,
            });
        }
        let start = cur.pos + 1;
        let payload = &bytes[start.min(bytes.len())..];
        if payload.len() < expected {
            return Err(PgmError::TruncatedPayload {
                offset: bytes.len(),
                expected,
                got: payload.len(),
            });
        }
        for (i, &b) in payload[..expected].iter().enumerate() {
            if b as u32 > maxval {
                return Err(PgmError::SampleOutOfRange {
                    value: b as u32,
                    maxval,
                    offset: start + i,
                });
            }
            data.push(b as f64);
        }
    } else {
        while data.len() < expected {
            let Some((tok, offset)) = cur.token() else {
                return Err(PgmError::TruncatedPayload {
                    offset: cur.pos,
                    expected,
                    got: data.len(),
                });
            };
            let v: u32 = tok.parse().map_err(|_| PgmError::BadHeaderToken {
                token: tok.to_string(),
                offset,
            })?;
            if v > maxval {
                return Err(PgmError::SampleOutOfRange {
                    value: v,
                    maxval,
                    offset,
                });
            }
            data.push(v as f64);
        }
    }
    Ok(Image::new(width, height, data).expect("shape checked while parsing"))
}

/// Rounds half-up and clamps into the 8-bit range.
#[inline]
pub fn quantize(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

pub fn save_pgm(img: &Image, binary: bool) -> Vec<u8> {
    let (w, h) = (img.width(), img.height());
    let mut out = Vec::with_capacity(w * h * if binary { 1 } else { 4 } + 32);
    if binary {
        write!(out, "P5\n{w} {h}\n255\n").unwrap();
        out.extend(img.data().iter().map(|&v| quantize(v)));
    } else {
        write!(out, "P2\n{w} {h}\n255\n").unwrap();
        for row in img.data().chunks(w) {
            let line: Vec<String> = row.iter().map(|&v| quantize(v).to_string()).collect();
            out.extend_from_slice(line.join(" ").as_bytes());
            out.push(b'\n');
        }
    }
    out
}

pub fn read_pgm_file(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    load_pgm(&bytes).map_err(Error::from)
}

pub fn write_pgm_file(path: impl AsRef<Path>, img: &Image, binary: bool) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, save_pgm(img, binary))
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}
