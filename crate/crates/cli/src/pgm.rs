//! 8-bit grayscale PGM, ASCII (P2) and binary (P5).

use std::fs;
use std::path::Path;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub maxval: u8,
    /// Row-major samples.
    pub pixels: Vec<u8>,
}

impl GrayImage {
    /// Samples scaled to `[0, 1]` by `maxval`.
    pub fn to_unit(&self) -> Vec<f64> {
        let scale = f64::from(self.maxval);
        self.pixels.iter().map(|&p| f64::from(p) / scale).collect()
    }

    /// 8-bit image from real values: `round(255 · clamp(v / scale, 0, 1))`.
    pub fn from_values(width: usize, height: usize, values: &[f64], scale: f64) -> Self {
        assert_eq!(values.len(), width * height, "image size");
        let pixels = values
            .iter()
            .map(|&v| {
                let u = if v.is_finite() { (v / scale).clamp(0.0, 1.0) } else { 0.0 };
                (u * 255.0).round() as u8
            })
            .collect();
        Self { width, height, maxval: 255, pixels }
    }
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
    line: usize,
}

impl<'a> Header<'a> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b'\n' => {
                    self.line += 1;
                    self.pos += 1;
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn token(&mut self) -> Option<&'a [u8]> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() && self.bytes[self.pos] != b'#'
        {
            self.pos += 1;
        }
        (self.pos > start).then(|| &self.bytes[start..self.pos])
    }

    fn number(&mut self, path: &Path, what: &str) -> Result<usize> {
        let line = self.line;
        let tok = self.token().ok_or_else(|| CliError::parse(path, line, format!("missing {what}")))?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| CliError::parse(path, line, format!("bad {what}: {:?}", String::from_utf8_lossy(tok))))
    }
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<GrayImage> {
    let mut h = Header { bytes, pos: 0, line: 1 };
    let magic = h.token().unwrap_or_default();
    let binary = match magic {
        b"P2" => false,
        b"P5" => true,
        b"P1" | b"P3" | b"P4" | b"P6" | b"P7" => {
            return Err(CliError::parse(
                path,
                1,
                format!(
                    "unsupported Netpbm variant {}: only grayscale PGM (P2, P5) is accepted",
                    String::from_utf8_lossy(magic)
                ),
            ))
        }
        _ => return Err(CliError::parse(path, 1, "not a PGM file (expected P2 or P5)")),
    };
    let width = h.number(path, "width")?;
    let height = h.number(path, "height")?;
    let maxval = h.number(path, "maxval")?;
    if width == 0 || height == 0 {
        return Err(CliError::parse(path, h.line, "image dimensions must be positive"));
    }
    if maxval == 0 {
        return Err(CliError::parse(path, h.line, "maxval must be positive"));
    }
    if maxval > 255 {
        return Err(CliError::parse(
            path,
            h.line,
            format!("16-bit PGM (maxval {maxval}) is not supported; only 8-bit samples are accepted"),
        ));
    }
    let count = width * height;
    let pixels = if binary {
        // Exactly one whitespace byte separates the header from the raster.
        let start = h.pos + 1;
        let raster = bytes.get(start..start + count).ok_or_else(|| {
            CliError::parse(path, h.line, format!("raster truncated: expected {count} bytes"))
        })?;
        raster.to_vec()
    } else {
        let mut px = Vec::with_capacity(count);
        for _ in 0..count {
            let v = h.number(path, "pixel")?;
            if v > maxval {
                return Err(CliError::parse(path, h.line, format!("pixel {v} exceeds maxval {maxval}")));
            }
            px.push(v as u8);
        }
        px
    };
    if pixels.iter().any(|&p| usize::from(p) > maxval) {
        return Err(CliError::parse(path, h.line, format!("pixel exceeds maxval {maxval}")));
    }
    Ok(GrayImage { width, height, maxval: maxval as u8, pixels })
}

pub fn encode_p5(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n{}\n", img.width, img.height, img.maxval).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

pub fn encode_p2(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P2\n{} {}\n{}\n", img.width, img.height, img.maxval);
    for row in img.pixels.chunks(img.width) {
        let line: Vec<String> = row.iter().map(u8::to_string).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out.into_bytes()
}

pub fn read(path: &Path) -> Result<GrayImage> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode(&bytes, path)
}

pub fn write(path: &Path, img: &GrayImage) -> Result<()> {
    crate::io::write_bytes(path, &encode_p5(img))
}
