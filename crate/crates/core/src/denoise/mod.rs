//! Impulse-noise removal with one scalar SUM shared by every pixel. Each
//! pixel's feature histograms its data residual `x_i - u_i` (gated by a
//! mask) and its differences to the 4-connected neighbours.

mod image;
mod synth;

use nalgebra::DMatrix;
use rand::seq::index;
use rand::Rng as _;
use rayon::prelude::*;

pub use image::{format_pgm, load_pgm, parse_pgm, psnr, save_pgm, GrayImage};
pub use synth::{synthetic_corpus, synthetic_image};

use crate::feature::bin_index;
use crate::rng::{self, Rng};
use crate::sum::{RidgeAccumulator, SparseVec, UpdateMapSequence};
use crate::{Error, Result};

pub const BINS: usize = 100;
pub const RANGE: (f64, f64) = (-2.0, 2.0);
pub const FEATURE_DIM: usize = 2 * BINS;
pub const DEFAULT_MAX_ITER: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NoiseType {
    /// Replaced pixels become 0 or 1.
    SaltPepper,
    /// Replaced pixels become uniform in `[0, 1]`.
    RandomValue,
}

impl NoiseType {
    pub fn name(self) -> &'static str {
        match self {
            NoiseType::SaltPepper => "sp",
            NoiseType::RandomValue => "rv",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sp" => Ok(NoiseType::SaltPepper),
            "rv" => Ok(NoiseType::RandomValue),
            other => Err(Error::invalid(format!("unknown noise type '{other}'"))),
        }
    }
}

/// Noise seen during training; `SpRv` alternates the two per patch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainMode {
    Sp,
    Rv,
    SpRv,
}

impl TrainMode {
    pub fn name(self) -> &'static str {
        match self {
            TrainMode::Sp => "sp",
            TrainMode::Rv => "rv",
            TrainMode::SpRv => "sprv",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sp" => Ok(TrainMode::Sp),
            "rv" => Ok(TrainMode::Rv),
            "sprv" => Ok(TrainMode::SpRv),
            other => Err(Error::invalid(format!("unknown training mode '{other}'"))),
        }
    }

    fn noise_for(self, patch: usize) -> NoiseType {
        match self {
            TrainMode::Sp => NoiseType::SaltPepper,
            TrainMode::Rv => NoiseType::RandomValue,
            TrainMode::SpRv if patch % 2 == 0 => NoiseType::SaltPepper,
            TrainMode::SpRv => NoiseType::RandomValue,
        }
    }
}

/// Observed intensities `u` with the fidelity mask.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisyImage {
    pub observed: GrayImage,
    pub mask: Vec<bool>,
    /// Indices of replaced pixels, when synthetic.
    pub corrupted: Vec<usize>,
}

/// Salt-and-pepper masks out pixels at exactly 0 or 1; random-value noise
/// keeps every pixel.
pub fn mask_for(observed: &GrayImage, noise: NoiseType) -> Vec<bool> {
    match noise {
        NoiseType::SaltPepper => observed.pixels().iter().map(|&v| v != 0.0 && v != 1.0).collect(),
        NoiseType::RandomValue => vec![true; observed.len()],
    }
}

impl NoisyImage {
    pub fn new(observed: GrayImage, mask: Vec<bool>) -> Result<Self> {
        Error::check_dim("mask", observed.len(), mask.len())?;
        Ok(Self {
            observed: observed.clamped(),
            mask,
            corrupted: Vec::new(),
        })
    }

    /// Builds the mask from the intensities with the rule for `noise`.
    pub fn with_mask_rule(observed: GrayImage, noise: NoiseType) -> Self {
        let observed = observed.clamped();
        let mask = mask_for(&observed, noise);
        Self {
            observed,
            mask,
            corrupted: Vec::new(),
        }
    }
}

/// Replaces exactly `floor(rate * H * W)` pixels, chosen without replacement.
pub fn gen_noisy(clean: &GrayImage, noise: NoiseType, rate: f64, rng: &mut Rng) -> Result<NoisyImage> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::invalid(format!("noise rate must lie in [0, 1], got {rate}")));
    }
    let mut observed = clean.clamped();
    let n = clean.len();
    let count = ((rate * n as f64).floor() as usize).min(n);
    let mut corrupted = index::sample(rng, n, count).into_vec();
    corrupted.sort_unstable();
    let px = observed.pixels_mut();
    for &i in &corrupted {
        px[i] = match noise {
            NoiseType::SaltPepper => f64::from(u8::from(rng.random_bool(0.5))),
            NoiseType::RandomValue => rng.random_range(0.0..=1.0),
        };
    }
    let mask = mask_for(&observed, noise);
    Ok(NoisyImage { observed, mask, corrupted })
}

fn gamma(y: f64) -> usize {
    bin_index(y, RANGE.0, RANGE.1, BINS) - 1
}

/// Feature entries of pixel `i`: the masked residual bin and one unit per
/// in-bounds neighbour in the difference block.
fn entries_into(i: usize, x: &[f64], u: &[f64], mask: &[bool], w: usize, h: usize, out: &mut Vec<(usize, f64)>) {
    out.clear();
    let xi = x[i];
    if mask[i] {
        out.push((gamma(xi - u[i]), 1.0));
    }
    let (px, py) = (i % w, i / w);
    if px > 0 {
        out.push((BINS + gamma(xi - x[i - 1]), 1.0));
    }
    if px + 1 < w {
        out.push((BINS + gamma(xi - x[i + 1]), 1.0));
    }
    if py > 0 {
        out.push((BINS + gamma(xi - x[i - w]), 1.0));
    }
    if py + 1 < h {
        out.push((BINS + gamma(xi - x[i + w]), 1.0));
    }
}

/// The 200-dimensional feature of pixel `i` under the current `state`.
pub fn denoise_feature(i: usize, state: &[f64], image: &NoisyImage) -> Result<SparseVec> {
    let u = image.observed.pixels();
    Error::check_dim("state", u.len(), state.len())?;
    if i >= u.len() {
        return Err(Error::invalid(format!("pixel {i} out of bounds")));
    }
    let mut e = Vec::with_capacity(5);
    entries_into(i, state, u, &image.mask, image.observed.width(), image.observed.height(), &mut e);
    Ok(SparseVec::from_pairs(FEATURE_DIM, e))
}

/// One synchronous sweep: every pixel moves by `-D h_i(x)` computed from
/// the same `x`.
fn sweep(map: &[f64], x: &[f64], image: &NoisyImage, next: &mut [f64]) {
    let (w, h) = (image.observed.width(), image.observed.height());
    let u = image.observed.pixels();
    next.par_chunks_mut(w).enumerate().for_each_init(
        || Vec::with_capacity(5),
        |e, (row, out)| {
            for (col, o) in out.iter_mut().enumerate() {
                let i = row * w + col;
                entries_into(i, x, u, &image.mask, w, h, e);
                *o = x[i] - e.iter().map(|&(k, v)| map[k] * v).sum::<f64>();
            }
        },
    );
}

fn map_row(sum: &UpdateMapSequence, t: usize) -> Vec<f64> {
    sum.map(t).row(0).iter().copied().collect()
}

fn check_sum(sum: &UpdateMapSequence) -> Result<()> {
    Error::check_dim("denoiser parameter dimension", 1, sum.param_dim())?;
    Error::check_dim("denoiser feature dimension", FEATURE_DIM, sum.feature_dim())
}

/// Runs maps `1..T` once each, then repeats the last until `max_iter`
/// sweeps in total; the result is clamped to `[0, 1]`.
pub fn denoise(image: &NoisyImage, sum: &UpdateMapSequence, max_iter: usize) -> Result<GrayImage> {
    check_sum(sum)?;
    let rows: Vec<Vec<f64>> = (0..sum.len()).map(|t| map_row(sum, t)).collect();
    let mut x = image.observed.pixels().to_vec();
    let mut next = vec![0.0; x.len()];
    for it in 0..max_iter {
        sweep(&rows[it.min(rows.len() - 1)], &x, image, &mut next);
        std::mem::swap(&mut x, &mut next);
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("denoised image".into()));
    }
    Ok(GrayImage::new(image.observed.width(), image.observed.height(), x)?.clamped())
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenoiseTrainConfig {
    pub patches: usize,
    /// Square patch sides, inclusive.
    pub patch_size: (usize, usize),
    pub rate: (f64, f64),
    pub maps: usize,
    pub lambda: f64,
    pub mode: TrainMode,
    pub seed: u64,
}

impl DenoiseTrainConfig {
    /// 1000 patches of 40-80 px, 0-80% noise, 30 maps, `lambda = 1e-2`.
    pub fn new(mode: TrainMode) -> Self {
        Self {
            patches: 1000,
            patch_size: (40, 80),
            rate: (0.0, 0.8),
            maps: 30,
            lambda: 1e-2,
            mode,
            seed: 0,
        }
    }
}

struct Patch {
    noisy: NoisyImage,
    clean: Vec<f64>,
    x: Vec<f64>,
}

const DOMAIN_PATCH: u64 = 0xd3_0001;
const DOMAIN_TEST: u64 = 0xd3_0002;

fn sample_patch(corpus: &[GrayImage], config: &DenoiseTrainConfig, k: usize) -> Result<Patch> {
    let mut rng = rng::stream(config.seed, DOMAIN_PATCH, k as u64);
    let img = &corpus[rng.random_range(0..corpus.len())];
    let side = rng.random_range(config.patch_size.0..=config.patch_size.1);
    let (w, h) = (side.min(img.width()), side.min(img.height()));
    let x0 = rng.random_range(0..=img.width() - w);
    let y0 = rng.random_range(0..=img.height() - h);
    let clean = img.crop(x0, y0, w, h)?;
    let rate = rng.random_range(config.rate.0..=config.rate.1);
    let noisy = gen_noisy(&clean, config.mode.noise_for(k), rate, &mut rng)?;
    Ok(Patch {
        x: noisy.observed.pixels().to_vec(),
        clean: clean.pixels().to_vec(),
        noisy,
    })
}

fn rmse(patches: &[Patch]) -> f64 {
    let (se, n) = patches.iter().fold((0.0, 0usize), |(se, n), p| {
        let s: f64 = p.x.iter().zip(&p.clean).map(|(a, b)| (a - b) * (a - b)).sum();
        (se + s, n + p.x.len())
    });
    (se / n as f64).sqrt()
}

/// Learns the shared per-pixel SUM: every pixel of every patch is one
/// sample, starting from its noisy value.
pub fn train_denoiser(corpus: &[GrayImage], config: &DenoiseTrainConfig) -> Result<UpdateMapSequence> {
    if corpus.is_empty() || config.patches == 0 {
        return Err(Error::EmptyTrainingSet);
    }
    if config.maps == 0 {
        return Err(Error::invalid("number of maps must be positive"));
    }
    if config.patch_size.0 == 0 || config.patch_size.0 > config.patch_size.1 {
        return Err(Error::invalid("patch size range must be positive and ordered"));
    }
    if !(0.0..=1.0).contains(&config.rate.0) || !(config.rate.0..=1.0).contains(&config.rate.1) {
        return Err(Error::invalid("noise rate range must lie in [0, 1]"));
    }
    let mut patches: Vec<Patch> = (0..config.patches)
        .into_par_iter()
        .map(|k| sample_patch(corpus, config, k))
        .collect::<Result<_>>()?;

    let mut history = vec![rmse(&patches)];
    let mut maps = Vec::with_capacity(config.maps);
    let mut e = Vec::with_capacity(5);
    for _ in 0..config.maps {
        let mut acc = RidgeAccumulator::new(1, FEATURE_DIM);
        for p in &patches {
            let img = &p.noisy.observed;
            let u = img.pixels();
            for i in 0..p.x.len() {
                entries_into(i, &p.x, u, &p.noisy.mask, img.width(), img.height(), &mut e);
                acc.add_entries(&[p.x[i] - p.clean[i]], &e)?;
            }
        }
        let map: DMatrix<f64> = acc.solve(config.lambda)?;
        let row: Vec<f64> = map.row(0).iter().copied().collect();
        patches.par_iter_mut().for_each(|p| {
            let mut next = vec![0.0; p.x.len()];
            sweep(&row, &p.x, &p.noisy, &mut next);
            p.x = next;
        });
        history.push(rmse(&patches));
        maps.push(map);
    }
    UpdateMapSequence::new(maps, config.lambda, history)
}

/// PSNR of one method on one noisy held-out image.
#[derive(Clone, Debug, PartialEq)]
pub struct DenoiseRow {
    pub noise: NoiseType,
    pub rate: f64,
    pub image: usize,
    /// `noisy` for the input itself, otherwise the model name.
    pub method: String,
    pub psnr: f64,
    /// Wall-clock seconds spent denoising; zero for the `noisy` row.
    pub seconds: f64,
}

/// Corrupts every image at every rate with each noise type and scores the
/// noisy input and each model.
pub fn run_denoise_sweep(
    models: &[(String, UpdateMapSequence)],
    images: &[GrayImage],
    noises: &[NoiseType],
    rates: &[f64],
    max_iter: usize,
    seed: u64,
) -> Result<Vec<DenoiseRow>> {
    let mut rows = Vec::new();
    for (a, &noise) in noises.iter().enumerate() {
        for (b, &rate) in rates.iter().enumerate() {
            for (k, img) in images.iter().enumerate() {
                let stream = ((a * rates.len() + b) * images.len() + k) as u64;
                let noisy = gen_noisy(img, noise, rate, &mut rng::stream(seed, DOMAIN_TEST, stream))?;
                let mut push = |method: &str, value: f64, seconds: f64| {
                    rows.push(DenoiseRow {
                        noise,
                        rate,
                        image: k,
                        method: method.to_string(),
                        psnr: value,
                        seconds,
                    })
                };
                push("noisy", psnr(img, &noisy.observed)?, 0.0);
                for (name, sum) in models {
                    let start = std::time::Instant::now();
                    let out = denoise(&noisy, sum, max_iter)?;
                    push(name, psnr(img, &out)?, start.elapsed().as_secs_f64());
                }
            }
        }
    }
    Ok(rows)
}
