use std::path::Path;

use crate::{Error, Result};

/// Row-major grayscale image with intensities nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        Error::check_dim("pixel count", width * height, pixels.len())?;
        if width == 0 || height == 0 {
            return Err(Error::invalid("image must be non-empty"));
        }
        if pixels.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("image".into()));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    /// Evaluates `f(x, y)` in row-major order.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    pub fn clamped(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        }
    }

    /// The `w x h` window with top-left corner `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::invalid("crop window exceeds image"));
        }
        Self::from_fn(w, h, |x, y| self.get(x0 + x, y0 + y))
    }
}

/// `10 log10(1 / MSE)`; infinite for identical images.
pub fn psnr(reference: &GrayImage, estimate: &GrayImage) -> Result<f64> {
    Error::check_dim("image width", reference.width(), estimate.width())?;
    Error::check_dim("image height", reference.height(), estimate.height())?;
    let mse = reference
        .pixels()
        .iter()
        .zip(estimate.pixels())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / reference.len() as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
}

fn header_tokens(data: &[u8], count: usize) -> Result<(Vec<String>, usize)> {
    let mut tokens = Vec::new();
    let mut i = 0;
    while tokens.len() < count {
        while i < data.len() && data[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < data.len() && data[i] == b'#' {
            while i < data.len() && data[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < data.len() && !data[i].is_ascii_whitespace() && data[i] != b'#' {
            i += 1;
        }
        if start == i {
            return Err(Error::Parse("PGM header ends early".into()));
        }
        tokens.push(String::from_utf8_lossy(&data[start..i]).into_owned());
    }
    Ok((tokens, i))
}

/// Reads 8-bit PGM (`P2` or `P5`), scaling intensities by `1/maxval`.
pub fn parse_pgm(data: &[u8]) -> Result<GrayImage> {
    let (tok, end) = header_tokens(data, 4)?;
    let num = |s: &str, what: &str| s.parse::<usize>().map_err(|e| Error::Parse(format!("PGM {what}: {e}")));
    let (w, h, maxval) = (num(&tok[1], "width")?, num(&tok[2], "height")?, num(&tok[3], "maxval")?);
    if maxval == 0 || maxval > 255 {
        return Err(Error::Parse(format!("PGM maxval {maxval} is not 8-bit")));
    }
    let scale = 1.0 / maxval as f64;
    let raw: Vec<usize> = match tok[0].as_str() {
        "P5" => {
            // A single whitespace byte separates the header from the raster.
            let body = data.get(end + 1..).unwrap_or(&[]);
            if body.len() < w * h {
                return Err(Error::Truncated {
                    expected: w * h,
                    found: body.len(),
                });
            }
            body[..w * h].iter().map(|&b| b as usize).collect()
        }
        "P2" => {
            let (vals, _) = header_tokens(&data[end..], w * h).map_err(|_| Error::Parse("PGM raster ends early".into()))?;
            vals.iter().map(|v| num(v, "pixel")).collect::<Result<_>>()?
        }
        other => return Err(Error::Parse(format!("unsupported PGM magic {other}"))),
    };
    if raw.iter().any(|&v| v > maxval) {
        return Err(Error::Parse("PGM pixel exceeds maxval".into()));
    }
    GrayImage::new(w, h, raw.into_iter().map(|v| v as f64 * scale).collect())
}

/// Binary `P5`, intensities clamped to `[0, 1]` and rounded to 8 bits.
pub fn format_pgm(image: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend(image.pixels().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

pub fn load_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    parse_pgm(&std::fs::read(path)?)
}

pub fn save_pgm(image: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, format_pgm(image))?;
    Ok(())
}
