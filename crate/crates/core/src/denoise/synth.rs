//! Procedural grayscale test images: a smooth background under random
//! flat, shaded and striped shapes.

use std::f64::consts::PI;

use rand::Rng as _;

use super::GrayImage;
use crate::rng::{self, Rng};
use crate::Result;

enum Fill {
    Flat(f64),
    Ramp { a: f64, b: f64, dir: (f64, f64) },
    Stripes { a: f64, b: f64, dir: (f64, f64), period: f64 },
}

impl Fill {
    fn random(rng: &mut Rng, size: f64) -> Self {
        let theta = rng.random_range(0.0..PI);
        let dir = (theta.cos(), theta.sin());
        let a = rng.random_range(0.0..=1.0);
        let b = rng.random_range(0.0..=1.0);
        match rng.random_range(0..3) {
            0 => Fill::Flat(a),
            1 => Fill::Ramp { a, b, dir: (dir.0 / size, dir.1 / size) },
            _ => Fill::Stripes {
                a,
                b,
                dir,
                period: rng.random_range(3.0..12.0),
            },
        }
    }

    fn at(&self, x: f64, y: f64) -> f64 {
        match *self {
            Fill::Flat(v) => v,
            Fill::Ramp { a, b, dir } => {
                let t = (0.5 + x * dir.0 + y * dir.1).clamp(0.0, 1.0);
                a + (b - a) * t
            }
            Fill::Stripes { a, b, dir, period } => {
                let t = 0.5 + 0.5 * (2.0 * PI * (x * dir.0 + y * dir.1) / period).sin();
                a + (b - a) * t
            }
        }
    }
}

enum Region {
    Ellipse { cx: f64, cy: f64, rx: f64, ry: f64, c: f64, s: f64 },
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
    Triangle([(f64, f64); 3]),
}

impl Region {
    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Region::Ellipse { cx, cy, rx, ry, c, s } => {
                let (dx, dy) = (x - cx, y - cy);
                let (u, v) = (c * dx + s * dy, -s * dx + c * dy);
                (u / rx).powi(2) + (v / ry).powi(2) <= 1.0
            }
            Region::Rect { x0, y0, x1, y1 } => x >= x0 && x <= x1 && y >= y0 && y <= y1,
            Region::Triangle(p) => {
                let side = |a: (f64, f64), b: (f64, f64)| (b.0 - a.0) * (y - a.1) - (b.1 - a.1) * (x - a.0);
                let (d0, d1, d2) = (side(p[0], p[1]), side(p[1], p[2]), side(p[2], p[0]));
                (d0 >= 0.0 && d1 >= 0.0 && d2 >= 0.0) || (d0 <= 0.0 && d1 <= 0.0 && d2 <= 0.0)
            }
        }
    }
}

/// Bilinear upsampling of a coarse random grid.
fn background(w: usize, h: usize, rng: &mut Rng) -> Vec<f64> {
    let g = 5;
    let grid: Vec<f64> = (0..g * g).map(|_| rng.random_range(0.15..0.85)).collect();
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let fx = x as f64 / w.max(2).saturating_sub(1) as f64 * (g - 1) as f64;
            let fy = y as f64 / h.max(2).saturating_sub(1) as f64 * (g - 1) as f64;
            let (ix, iy) = ((fx as usize).min(g - 2), (fy as usize).min(g - 2));
            let (tx, ty) = (fx - ix as f64, fy - iy as f64);
            let v = |i: usize, j: usize| grid[j * g + i];
            out.push(
                (1.0 - ty) * ((1.0 - tx) * v(ix, iy) + tx * v(ix + 1, iy))
                    + ty * ((1.0 - tx) * v(ix, iy + 1) + tx * v(ix + 1, iy + 1)),
            );
        }
    }
    out
}

/// A `w x h` image with intensities in `[0.05, 0.95]`.
pub fn synthetic_image(w: usize, h: usize, rng: &mut Rng) -> Result<GrayImage> {
    let mut pixels = background(w, h, rng);
    let (wf, hf) = (w as f64, h as f64);
    let size = wf.max(hf);
    let shapes = rng.random_range(6..=14);
    for _ in 0..shapes {
        let scale = rng.random_range(0.08..0.4) * size;
        let cx = rng.random_range(0.0..wf);
        let cy = rng.random_range(0.0..hf);
        let region = match rng.random_range(0..3) {
            0 => {
                let t = rng.random_range(0.0..PI);
                Region::Ellipse {
                    cx,
                    cy,
                    rx: scale,
                    ry: scale * rng.random_range(0.3..1.0),
                    c: t.cos(),
                    s: t.sin(),
                }
            }
            1 => Region::Rect {
                x0: cx - scale,
                y0: cy - scale * rng.random_range(0.3..1.0),
                x1: cx + scale * rng.random_range(0.3..1.0),
                y1: cy + scale,
            },
            _ => {
                let mut corner = || (cx + rng.random_range(-scale..scale), cy + rng.random_range(-scale..scale));
                Region::Triangle([corner(), corner(), corner()])
            }
        };
        let fill = Fill::random(rng, 2.0 * scale);
        for y in 0..h {
            for x in 0..w {
                let (xf, yf) = (x as f64 + 0.5, y as f64 + 0.5);
                if region.contains(xf, yf) {
                    pixels[y * w + x] = fill.at(xf - cx, yf - cy);
                }
            }
        }
    }
    pixels.iter_mut().for_each(|v| *v = 0.05 + 0.9 * v.clamp(0.0, 1.0));
    GrayImage::new(w, h, pixels)
}

/// `n` images from independent streams of `seed`.
pub fn synthetic_corpus(n: usize, w: usize, h: usize, seed: u64) -> Result<Vec<GrayImage>> {
    (0..n)
        .map(|i| synthetic_image(w, h, &mut rng::stream(seed, 0xd3_0003, i as u64)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn images_are_in_range_and_varied() {
        let corpus = synthetic_corpus(4, 64, 48, 1).unwrap();
        for img in &corpus {
            assert_eq!((img.width(), img.height()), (64, 48));
            assert!(img.pixels().iter().all(|v| (0.05..=0.95).contains(v)));
            let mean = img.pixels().iter().sum::<f64>() / img.len() as f64;
            let var = img.pixels().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / img.len() as f64;
            assert!(var > 1e-3);
        }
        assert_ne!(corpus[0], corpus[1]);
        assert_eq!(corpus, synthetic_corpus(4, 64, 48, 1).unwrap());
    }
}
