//! Synthetic 2D-3D correspondence sets with known pose.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector2, Vector3};
use rand::seq::index;
use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::CorrespondenceSet;
use crate::rng::Rng;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeKind {
    Box,
    Sphere,
    Planes,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 3] = [ShapeKind::Box, ShapeKind::Sphere, ShapeKind::Planes];
}

/// Ranges are sampled uniformly per instance.
#[derive(Clone, Debug, PartialEq)]
pub struct PnpConfig {
    pub points: (usize, usize),
    /// `None` picks one of the shapes at random.
    pub shape: Option<ShapeKind>,
    pub focal: (f64, f64),
    pub width: f64,
    pub height: f64,
    pub outlier_fraction: (f64, f64),
    /// Gaussian pixel noise SD on every image point.
    pub noise_sd: f64,
    /// Camera depth as a multiple of the smallest depth at which the shape
    /// fits in the frame.
    pub depth_factor: (f64, f64),
}

impl PnpConfig {
    /// 100-500 points, 0-80% outliers, no noise.
    pub fn training() -> Self {
        Self {
            points: (100, 500),
            shape: None,
            focal: (600.0, 1000.0),
            width: 640.0,
            height: 480.0,
            outlier_fraction: (0.0, 0.8),
            noise_sd: 0.0,
            depth_factor: (1.0, 2.0),
        }
    }

    /// 400 points, 30% outliers, 2 px noise.
    pub fn test() -> Self {
        Self {
            points: (400, 400),
            outlier_fraction: (0.3, 0.3),
            noise_sd: 2.0,
            ..Self::training()
        }
    }
}

/// A generated set with its ground truth `p ~ K (R s + t)` for inliers.
#[derive(Clone, Debug)]
pub struct PnpInstance {
    pub set: CorrespondenceSet,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub outliers: Vec<bool>,
    pub shape: ShapeKind,
}

pub fn random_rotation(rng: &mut Rng) -> Matrix3<f64> {
    loop {
        let q = Quaternion::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        if q.norm() > 1e-9 {
            return UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner();
        }
    }
}

fn unit_vector(rng: &mut Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(StandardNormal.sample(rng), StandardNormal.sample(rng), StandardNormal.sample(rng));
        let n: f64 = v.norm();
        if n > 1e-9 {
            return v / n;
        }
    }
}

fn cube_point(rng: &mut Rng) -> Vector3<f64> {
    Vector3::new(rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0))
}

/// Raw shape samples before rotation and normalization: uniform in
/// `[-1, 1]^3`, on the unit sphere, or on 2-4 random planes through the cube.
pub fn sample_shape(kind: ShapeKind, n: usize, rng: &mut Rng) -> Vec<Vector3<f64>> {
    match kind {
        ShapeKind::Box => (0..n).map(|_| cube_point(rng)).collect(),
        ShapeKind::Sphere => (0..n).map(|_| unit_vector(rng)).collect(),
        ShapeKind::Planes => {
            let planes: Vec<(Vector3<f64>, f64)> = (0..rng.random_range(2..=4))
                .map(|_| (unit_vector(rng), rng.random_range(-0.5..=0.5)))
                .collect();
            (0..n)
                .map(|_| {
                    let (normal, shift) = planes[rng.random_range(0..planes.len())];
                    let u = cube_point(rng);
                    u - (normal.dot(&u) - shift) * normal
                })
                .collect()
        }
    }
}

/// Centers the bounding box at the origin and scales its longest side to 2.
fn fit_unit_cube(points: &mut [Vector3<f64>]) -> Result<()> {
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for p in points.iter() {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let side = (hi - lo).max();
    if !(side > 1e-12) {
        return Err(Error::Degenerate("shape has no extent".into()));
    }
    let mid = (lo + hi) / 2.0;
    for p in points.iter_mut() {
        *p = (*p - mid) * (2.0 / side);
    }
    Ok(())
}

/// Interval of `t` with `|y_i + t| <= c_i` for all `i`.
fn feasible_shift(y: impl Iterator<Item = (f64, f64)>) -> (f64, f64) {
    y.fold((f64::NEG_INFINITY, f64::INFINITY), |(lo, hi), (yi, ci)| (lo.max(-ci - yi), hi.min(ci - yi)))
}

pub fn gen_pnp_instance(config: &PnpConfig, rng: &mut Rng) -> Result<PnpInstance> {
    let (pmin, pmax) = config.points;
    if pmin < super::MIN_CORRESPONDENCES || pmin > pmax {
        return Err(Error::invalid(format!("point range {pmin}..={pmax} needs at least 6 points")));
    }
    let (omin, omax) = config.outlier_fraction;
    if !(0.0..=1.0).contains(&omin) || !(omin..=1.0).contains(&omax) {
        return Err(Error::invalid("outlier fraction must lie in [0, 1]"));
    }
    if !(config.focal.0 > 0.0 && config.focal.0 <= config.focal.1) {
        return Err(Error::invalid("focal range must be positive"));
    }
    if !(config.depth_factor.0 >= 1.0 && config.depth_factor.0 <= config.depth_factor.1) {
        return Err(Error::invalid("depth factor range must start at 1 or above"));
    }
    if !(config.width > 0.0 && config.height > 0.0) {
        return Err(Error::invalid("image size must be positive"));
    }
    let n = rng.random_range(pmin..=pmax);
    let shape = config.shape.unwrap_or_else(|| ShapeKind::ALL[rng.random_range(0..3)]);
    let mut world = sample_shape(shape, n, rng);
    let spin = random_rotation(rng);
    world.iter_mut().for_each(|p| *p = spin * *p);
    fit_unit_cube(&mut world)?;

    let f = rng.random_range(config.focal.0..=config.focal.1);
    let (hw, hh) = (config.width / 2.0, config.height / 2.0);
    let k = Matrix3::new(f, 0.0, hw, 0.0, f, hh, 0.0, 0.0, 1.0);
    let rotation = random_rotation(rng);
    let y: Vec<Vector3<f64>> = world.iter().map(|s| rotation * s).collect();
    // Smallest depth at which the centered shape projects inside the frame.
    let fit = y
        .iter()
        .map(|p| (f * p.x.abs() / hw - p.z).max(f * p.y.abs() / hh - p.z).max(1e-3 - p.z))
        .fold(f64::NEG_INFINITY, f64::max);
    let tz = fit.max(1e-3) * rng.random_range(config.depth_factor.0..=config.depth_factor.1);
    let half = |p: &Vector3<f64>, h: f64| h * (p.z + tz) / f;
    let (xlo, xhi) = feasible_shift(y.iter().map(|p| (p.x, half(p, hw))));
    let (ylo, yhi) = feasible_shift(y.iter().map(|p| (p.y, half(p, hh))));
    let pick = |rng: &mut Rng, lo: f64, hi: f64| if hi > lo { rng.random_range(lo..=hi) } else { (lo + hi) / 2.0 };
    let translation = Vector3::new(pick(rng, xlo, xhi), pick(rng, ylo, yhi), tz);

    let mut image: Vec<Vector2<f64>> = y
        .iter()
        .map(|p| {
            let c = p + translation;
            Vector2::new(f * c.x / c.z + hw, f * c.y / c.z + hh)
        })
        .collect();
    let fraction = rng.random_range(omin..=omax);
    let n_out = ((fraction * n as f64).round() as usize).min(n);
    let mut outliers = vec![false; n];
    for i in index::sample(rng, n, n_out) {
        outliers[i] = true;
        image[i] = Vector2::new(rng.random_range(0.0..=config.width), rng.random_range(0.0..=config.height));
    }
    if config.noise_sd > 0.0 {
        let noise = Normal::new(0.0, config.noise_sd).map_err(|e| Error::invalid(e.to_string()))?;
        for p in image.iter_mut() {
            p.x += noise.sample(rng);
            p.y += noise.sample(rng);
        }
    }
    Ok(PnpInstance {
        set: CorrespondenceSet::new(image, world, k)?,
        rotation,
        translation,
        outliers,
        shape,
    })
}
