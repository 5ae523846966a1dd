//! Grayscale images, binary PGM (P5) I/O, block tiling and PSNR.

use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

/// Reported in place of an infinite PSNR (identical images).
pub const PSNR_CAP_DB: f64 = 99.99;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("bad image: {0}")]
    BadImage(String),
    #[error("image sizes differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("bad rectangle {0:?}: expected x,y,w,h")]
    BadRect(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Row-major grayscale image with real-valued samples.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(ImageError::BadImage(format!(
                "{} samples for a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                pixels.push(f(r, c));
            }
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.pixels[row * self.width + col] = v;
    }

    /// Rounded to integers and clamped to `0..=255`, as stored in a PGM.
    pub fn quantized(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|v| quantize(*v) as f64).collect(),
        }
    }

    /// Block `(block_row, block_col)` of side `b`, row-major.
    pub fn block(&self, block_row: usize, block_col: usize, b: usize) -> Vec<f64> {
        self.window(block_row * b, block_col * b, b)
    }

    /// `b x b` window with top-left corner `(row, col)`.
    pub fn window(&self, row: usize, col: usize, b: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(b * b);
        for r in row..row + b {
            out.extend_from_slice(&self.pixels[r * self.width + col..r * self.width + col + b]);
        }
        out
    }

    pub fn set_block(&mut self, block_row: usize, block_col: usize, b: usize, values: &[f64]) {
        assert_eq!(values.len(), b * b, "block size mismatch");
        for (i, row) in values.chunks_exact(b).enumerate() {
            let start = (block_row * b + i) * self.width + block_col * b;
            self.pixels[start..start + b].copy_from_slice(row);
        }
    }

    /// Number of `b x b` blocks per row and per column.
    pub fn block_grid(&self, b: usize) -> Result<(usize, usize), ImageError> {
        if b == 0 || !self.width.is_multiple_of(b) || !self.height.is_multiple_of(b) {
            return Err(ImageError::BadImage(format!(
                "{}x{} is not divisible into {b}x{b} blocks",
                self.width, self.height
            )));
        }
        Ok((self.height / b, self.width / b))
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.pixels.iter().map(|v| quantize(*v)));
        out
    }

    pub fn from_pgm(bytes: &[u8]) -> Result<Self, ImageError> {
        let mut pos = 0;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
                if bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    pos += 1;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
                pos += 1;
            }
            if start == pos {
                return Err(ImageError::BadImage("truncated PGM header".into()));
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        if fields[0] != "P5" {
            return Err(ImageError::BadImage(format!(
                "expected P5, got {}",
                fields[0]
            )));
        }
        let num = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| ImageError::BadImage(format!("bad PGM header field {s:?}")))
        };
        let (width, height, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
        if maxval == 0 || maxval > 255 {
            return Err(ImageError::BadImage(format!("unsupported maxval {maxval}")));
        }
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        let raster = bytes
            .get(pos..pos + width * height)
            .ok_or_else(|| ImageError::BadImage(format!("raster shorter than {width}x{height}")))?;
        let scale = 255.0 / maxval as f64;
        let pixels = raster.iter().map(|&p| p as f64 * scale).collect();
        Self::new(width, height, pixels)
    }

    pub fn read_pgm(path: &Path) -> Result<Self, ImageError> {
        let bytes = std::fs::read(path).map_err(|source| ImageError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_pgm(&bytes)
    }

    pub fn write_pgm(&self, path: &Path) -> Result<(), ImageError> {
        std::fs::write(path, self.to_pgm()).map_err(|source| ImageError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

fn quantize(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Axis-aligned pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub fn intersects(&self, x: usize, y: usize, w: usize, h: usize) -> bool {
        self.x < x + w && x < self.x + self.w && self.y < y + h && y < self.y + self.h
    }

    /// Parses `x,y,w,h` rectangles separated by `;`.
    pub fn parse_list(s: &str) -> Result<Vec<Rect>, ImageError> {
        s.split(';')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(str::parse)
            .collect()
    }
}

impl FromStr for Rect {
    type Err = ImageError;

    fn from_str(s: &str) -> Result<Self, ImageError> {
        let parts: Vec<usize> = s
            .split(',')
            .map(|p| p.trim().parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|_| ImageError::BadRect(s.to_string()))?;
        match parts[..] {
            [x, y, w, h] if w > 0 && h > 0 => Ok(Rect { x, y, w, h }),
            _ => Err(ImageError::BadRect(s.to_string())),
        }
    }
}

/// Mean squared error over the pixels where `mask` is true (all if `None`).
pub fn mse(a: &GrayImage, b: &GrayImage, mask: Option<&[bool]>) -> Result<f64, ImageError> {
    if a.width != b.width || a.height != b.height {
        return Err(ImageError::DimensionMismatch(
            a.width, a.height, b.width, b.height,
        ));
    }
    let (mut sum, mut count) = (0.0, 0usize);
    for (i, (p, q)) in a.pixels.iter().zip(&b.pixels).enumerate() {
        if mask.is_none_or(|m| m[i]) {
            sum += (p - q) * (p - q);
            count += 1;
        }
    }
    if count == 0 {
        return Err(ImageError::BadImage("PSNR over an empty region".into()));
    }
    Ok(sum / count as f64)
}

/// `10 log10(255^2 / MSE)`; infinite when the images agree.
pub fn psnr(original: &GrayImage, reconstructed: &GrayImage) -> Result<f64, ImageError> {
    mse(original, reconstructed, None).map(psnr_from_mse)
}

pub fn psnr_masked(
    original: &GrayImage,
    reconstructed: &GrayImage,
    mask: &[bool],
) -> Result<f64, ImageError> {
    mse(original, reconstructed, Some(mask)).map(psnr_from_mse)
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (255.0f64 * 255.0 / mse).log10()
    }
}

/// Replaces an infinite PSNR with [`PSNR_CAP_DB`] for tables.
pub fn capped(db: f64) -> f64 {
    db.min(PSNR_CAP_DB)
}
