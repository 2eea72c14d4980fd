//! Synthetic scenes: resampled, moved, noisy, occluded copies of a model
//! with added clutter.

use nalgebra::{DVector, Vector3};
use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::cloud::PointCloud;
use super::lie::{axis_angle, lie_log, Rigid};
use crate::rng::Rng;
use crate::{Error, Result};

/// Ranges are inclusive `(lo, hi)` pairs sampled uniformly per scene.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneConfig {
    /// Number of model points drawn with replacement.
    pub points: (usize, usize),
    /// Rotation angle in degrees (random axis, or random sign in the plane).
    pub angle_deg: (f64, f64),
    /// Translation is uniform in `[-translation, translation]^d`.
    pub translation: f64,
    pub noise_sd: (f64, f64),
    pub sparse_outliers: (usize, usize),
    /// Sparse outliers are uniform in `[-outlier_extent, outlier_extent]^d`.
    pub outlier_extent: f64,
    pub structured_outliers: (usize, usize),
    pub structured_sd: (f64, f64),
    /// Fraction of sampled points removed.
    pub incomplete: (f64, f64),
}

impl SceneConfig {
    /// Spatial training perturbations.
    pub fn training_3d() -> Self {
        Self {
            points: (400, 700),
            angle_deg: (0.0, 85.0),
            translation: 0.3,
            noise_sd: (0.05, 0.05),
            sparse_outliers: (0, 300),
            outlier_extent: 1.0,
            structured_outliers: (0, 200),
            structured_sd: (0.1, 0.25),
            incomplete: (0.4, 0.8),
        }
    }

    /// Planar training perturbations; outliers up to the model size.
    pub fn training_2d(model_points: usize) -> Self {
        Self {
            points: (model_points, model_points),
            angle_deg: (0.0, 85.0),
            translation: 0.4,
            noise_sd: (0.03f64.sqrt(), 0.03f64.sqrt()),
            sparse_outliers: (0, model_points),
            outlier_extent: 1.5,
            structured_outliers: (0, 0),
            structured_sd: (0.0, 0.0),
            incomplete: (0.0, 0.6),
        }
    }

    /// Default spatial test setting: 200-600 points, no noise, outliers or
    /// occlusion, initial angle up to 60 degrees.
    pub fn test_3d() -> Self {
        Self {
            points: (200, 600),
            angle_deg: (0.0, 60.0),
            translation: 0.3,
            noise_sd: (0.0, 0.0),
            sparse_outliers: (0, 0),
            outlier_extent: 1.0,
            structured_outliers: (0, 0),
            structured_sd: (0.1, 0.25),
            incomplete: (0.0, 0.0),
        }
    }

    pub fn test_2d(model_points: usize) -> Self {
        Self {
            points: (model_points, model_points),
            angle_deg: (0.0, 60.0),
            translation: 0.4,
            noise_sd: (0.0, 0.0),
            sparse_outliers: (0, 0),
            outlier_extent: 1.5,
            structured_outliers: (0, 0),
            structured_sd: (0.0, 0.0),
            incomplete: (0.0, 0.0),
        }
    }

    /// No perturbation at all: the scene is a resample of the model.
    pub fn identity(points: usize) -> Self {
        Self {
            points: (points, points),
            angle_deg: (0.0, 0.0),
            translation: 0.0,
            noise_sd: (0.0, 0.0),
            sparse_outliers: (0, 0),
            outlier_extent: 1.0,
            structured_outliers: (0, 0),
            structured_sd: (0.0, 0.0),
            incomplete: (0.0, 0.0),
        }
    }

    fn validate(&self) -> Result<()> {
        let ordered = self.points.0 <= self.points.1
            && self.angle_deg.0 <= self.angle_deg.1
            && self.noise_sd.0 <= self.noise_sd.1
            && self.sparse_outliers.0 <= self.sparse_outliers.1
            && self.structured_outliers.0 <= self.structured_outliers.1
            && self.structured_sd.0 <= self.structured_sd.1
            && self.incomplete.0 <= self.incomplete.1;
        let signs = self.translation >= 0.0
            && self.noise_sd.0 >= 0.0
            && self.outlier_extent >= 0.0
            && self.structured_sd.0 >= 0.0
            && self.incomplete.0 >= 0.0
            && self.incomplete.1 < 1.0;
        if !ordered || !signs || self.points.1 == 0 {
            return Err(Error::invalid(format!("invalid scene configuration {self:?}")));
        }
        Ok(())
    }
}

/// Point counts making up a generated scene.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SceneCounts {
    pub sampled: usize,
    pub kept: usize,
    pub sparse_outliers: usize,
    pub structured_outliers: usize,
}

#[derive(Clone, Debug)]
pub struct Scene {
    pub cloud: PointCloud,
    /// Parameters moving the scene back onto the model.
    pub x_star: DVector<f64>,
    /// The motion applied to the model samples.
    pub generator: Rigid,
    pub counts: SceneCounts,
}

fn uniform_range(rng: &mut Rng, r: (f64, f64)) -> f64 {
    if r.0 == r.1 {
        r.0
    } else {
        rng.random_range(r.0..=r.1)
    }
}

fn uniform_count(rng: &mut Rng, r: (usize, usize)) -> usize {
    rng.random_range(r.0..=r.1)
}

fn random_direction(rng: &mut Rng, dim: usize) -> Vector3<f64> {
    loop {
        let z = if dim == 3 { StandardNormal.sample(rng) } else { 0.0 };
        let v = Vector3::new(StandardNormal.sample(rng), StandardNormal.sample(rng), z);
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// Removes `fraction` of the points: in space those with the largest
/// projection on a random direction, in the plane those closest to a random
/// sample point.
fn occlude(points: &mut Vec<Vector3<f64>>, fraction: f64, dim: usize, rng: &mut Rng) {
    let remove = (fraction * points.len() as f64).round() as usize;
    if remove == 0 || points.is_empty() {
        return;
    }
    let key: Vec<f64> = if dim == 3 {
        let u = random_direction(rng, 3);
        points.iter().map(|p| p.dot(&u)).collect()
    } else {
        let c = points[rng.random_range(0..points.len())];
        points.iter().map(|p| -(p - c).norm_squared()).collect()
    };
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| key[b].total_cmp(&key[a]).then(a.cmp(&b)));
    let mut drop = vec![false; points.len()];
    for &i in &order[..remove.min(points.len())] {
        drop[i] = true;
    }
    let mut i = 0;
    points.retain(|_| {
        let keep = !drop[i];
        i += 1;
        keep
    });
}

/// Draws a perturbed scene from the (normalized) model.
///
/// Model samples are occluded, moved by a random rigid motion and jittered;
/// sparse outliers and one structured cluster are then added in the scene
/// frame.
pub fn gen_perturbed_scene(model: &PointCloud, config: &SceneConfig, rng: &mut Rng) -> Result<Scene> {
    config.validate()?;
    if model.is_empty() {
        return Err(Error::invalid("model cloud is empty"));
    }
    let dim = model.dim();
    let n = uniform_count(rng, config.points);
    let mut pts: Vec<Vector3<f64>> = (0..n)
        .map(|_| model.points()[rng.random_range(0..model.len())])
        .collect();
    occlude(&mut pts, uniform_range(rng, config.incomplete), dim, rng);
    let kept = pts.len();

    let angle = uniform_range(rng, config.angle_deg).to_radians();
    let rotation = if dim == 3 {
        axis_angle(&random_direction(rng, 3), angle)
    } else {
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        axis_angle(&Vector3::z(), sign * angle)
    };
    let t = config.translation;
    let mut translation = Vector3::zeros();
    for k in 0..dim {
        translation[k] = if t > 0.0 { rng.random_range(-t..=t) } else { 0.0 };
    }
    let generator = Rigid::new(rotation, translation);

    let sd = uniform_range(rng, config.noise_sd);
    let noise = Normal::new(0.0, sd.max(0.0)).map_err(|e| Error::invalid(e.to_string()))?;
    for p in pts.iter_mut() {
        *p = generator.apply(p);
        if sd > 0.0 {
            for k in 0..dim {
                p[k] += noise.sample(rng);
            }
        }
    }

    let e = config.outlier_extent;
    let sparse = uniform_count(rng, config.sparse_outliers);
    for _ in 0..sparse {
        let mut p = Vector3::zeros();
        for k in 0..dim {
            p[k] = if e > 0.0 { rng.random_range(-e..=e) } else { 0.0 };
        }
        pts.push(p);
    }
    let structured = uniform_count(rng, config.structured_outliers);
    if structured > 0 {
        let ball_sd = uniform_range(rng, config.structured_sd);
        let mut center = Vector3::zeros();
        for k in 0..dim {
            center[k] = if e > 0.0 { rng.random_range(-e..=e) } else { 0.0 };
        }
        for _ in 0..structured {
            let mut p = center;
            for k in 0..dim {
                let z: f64 = StandardNormal.sample(rng);
                p[k] += ball_sd * z;
            }
            pts.push(p);
        }
    }

    let x_star = lie_log(&generator.inverse(), dim)?;
    Ok(Scene {
        cloud: PointCloud::new(dim, pts)?,
        x_star,
        generator,
        counts: SceneCounts {
            sampled: n,
            kept,
            sparse_outliers: sparse,
            structured_outliers: structured,
        },
    })
}
