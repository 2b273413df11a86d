//! Binary PGM (`P5`, maxval 255) images.

use std::fs;
use std::path::Path;
#[cfg(test)]
use std::path::PathBuf;

use crate::FormatError;

/// An 8-bit grayscale image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gray {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl Gray {
    /// Quantizes `[0, 1]` values to 8 bits (round to nearest).
    pub fn from_unit(height: usize, width: usize, values: &[f64]) -> Self {
        let data = values
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        Self { height, width, data }
    }

    pub fn to_unit(&self) -> Vec<f64> {
        self.data.iter().map(|&v| f64::from(v) / 255.0).collect()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    file: &'a Path,
}

impl Cursor<'_> {
    fn err(&self, msg: impl Into<String>) -> FormatError {
        FormatError::Parse {
            file: self.file.to_path_buf(),
            offset: self.pos,
            msg: msg.into(),
        }
    }

    /// Skips whitespace and `#` comments.
    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize, FormatError> {
        self.skip_space();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err(format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .unwrap()
            .parse()
            .map_err(|_| FormatError::Parse {
                file: self.file.to_path_buf(),
                offset: start,
                msg: format!("{what} out of range"),
            })
    }
}

/// Parses a `P5` image; `file` only labels errors.
pub fn decode(bytes: &[u8], file: &Path) -> Result<Gray, FormatError> {
    let mut c = Cursor { bytes, pos: 0, file };
    if !bytes.starts_with(b"P5") {
        return Err(c.err("not a binary PGM (missing P5 magic)"));
    }
    c.pos = 2;
    let width = c.number("width")?;
    let height = c.number("height")?;
    c.skip_space();
    let maxval_at = c.pos;
    let maxval = c.number("maxval")?;
    if maxval != 255 {
        c.pos = maxval_at;
        return Err(c.err(format!("maxval {maxval} unsupported, only 255")));
    }
    if width == 0 || height == 0 {
        return Err(c.err("zero image dimension"));
    }
    if !bytes.get(c.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(c.err("expected a single whitespace before pixel data"));
    }
    c.pos += 1;
    let n = width
        .checked_mul(height)
        .ok_or_else(|| c.err("image dimensions overflow"))?;
    let rest = &bytes[c.pos..];
    if rest.len() < n {
        c.pos = bytes.len();
        return Err(c.err(format!("truncated pixel data: {} of {n} bytes", rest.len())));
    }
    if rest.len() > n {
        c.pos += n;
        return Err(c.err("trailing bytes after pixel data"));
    }
    Ok(Gray {
        height,
        width,
        data: rest.to_vec(),
    })
}

pub fn read(path: &Path) -> Result<Gray, FormatError> {
    let bytes = fs::read(path).map_err(|e| FormatError::io(path, e))?;
    decode(&bytes, path)
}

pub fn write(path: &Path, img: &Gray) -> Result<(), FormatError> {
    fs::write(path, img.encode()).map_err(|e| FormatError::io(path, e))
}
