//! Procedural test shapes: an asymmetric animal-like solid made of
//! ellipsoids and planar closed outlines.

use nalgebra::{Matrix3, Vector3};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use super::cloud::PointCloud;
use super::lie::axis_angle;
use crate::rng;
use crate::{Error, Result};

struct Ellipsoid {
    center: Vector3<f64>,
    radii: Vector3<f64>,
    /// Body frame to world.
    rotation: Matrix3<f64>,
}

impl Ellipsoid {
    fn new(center: [f64; 3], radii: [f64; 3], tilt: [f64; 3]) -> Self {
        let t = Vector3::from(tilt);
        let rotation = if t.norm() > 0.0 {
            axis_angle(&t, t.norm())
        } else {
            Matrix3::identity()
        };
        Self {
            center: center.into(),
            radii: radii.into(),
            rotation,
        }
    }

    fn contains(&self, p: &Vector3<f64>) -> bool {
        let q = self.rotation.transpose() * (p - self.center);
        q.component_div(&self.radii).norm_squared() < 1.0
    }

    /// Approximate surface area (Knud Thomsen's formula).
    fn area(&self) -> f64 {
        let (a, b, c) = (self.radii.x, self.radii.y, self.radii.z);
        let p = 1.6075;
        let m = ((a * b).powf(p) + (a * c).powf(p) + (b * c).powf(p)) / 3.0;
        4.0 * std::f64::consts::PI * m.powf(1.0 / p)
    }

    fn sample_surface(&self, rng: &mut rng::Rng) -> Vector3<f64> {
        let d = loop {
            let v = Vector3::new(
                StandardNormal.sample(rng),
                StandardNormal.sample(rng),
                StandardNormal.sample(rng),
            );
            let n: f64 = v.norm();
            if n > 1e-9 {
                break v / n;
            }
        };
        self.center + self.rotation * d.component_mul(&self.radii)
    }
}

fn animal_parts() -> Vec<Ellipsoid> {
    vec![
        Ellipsoid::new([0.0, 0.0, 0.0], [0.55, 0.40, 0.42], [0.0, 0.15, 0.0]),
        Ellipsoid::new([0.52, 0.08, 0.33], [0.26, 0.22, 0.22], [0.0, 0.0, 0.3]),
        Ellipsoid::new([0.44, 0.00, 0.74], [0.07, 0.05, 0.30], [0.0, -0.35, 0.1]),
        Ellipsoid::new([0.62, 0.17, 0.68], [0.07, 0.05, 0.26], [0.25, 0.3, 0.0]),
        Ellipsoid::new([-0.58, -0.05, 0.12], [0.11, 0.11, 0.10], [0.0, 0.0, 0.0]),
        Ellipsoid::new([0.34, 0.15, -0.38], [0.16, 0.09, 0.07], [0.0, 0.0, 0.2]),
        Ellipsoid::new([-0.22, 0.24, -0.37], [0.27, 0.12, 0.09], [0.0, 0.0, -0.2]),
        Ellipsoid::new([-0.18, -0.27, -0.35], [0.22, 0.10, 0.08], [0.0, 0.0, 0.4]),
    ]
}

/// Dense surface samples of an asymmetric four-legged solid, reduced to
/// `n` points by farthest-point sampling and normalized to `[-1, 1]`.
pub fn bunny_like(dense: usize, n: usize, seed: u64) -> Result<PointCloud> {
    if n == 0 || n > dense {
        return Err(Error::invalid(format!("cannot pick {n} of {dense} points")));
    }
    let parts = animal_parts();
    let total_area: f64 = parts.iter().map(Ellipsoid::area).sum();
    let mut rng = rng::stream(seed, 0xb0_0001, 0);
    let mut pts = Vec::with_capacity(dense);
    while pts.len() < dense {
        let mut pick = rng.random_range(0.0..total_area);
        let mut idx = 0;
        for (i, e) in parts.iter().enumerate() {
            idx = i;
            if pick < e.area() {
                break;
            }
            pick -= e.area();
        }
        let p = parts[idx].sample_surface(&mut rng);
        if parts.iter().enumerate().all(|(j, e)| j == idx || !e.contains(&p)) {
            pts.push(p);
        }
    }
    let cloud = PointCloud::new(3, farthest_point_sample(&pts, n))?;
    Ok(cloud.normalized()?.0)
}

/// Greedy farthest-point subset of size `n`, starting from the point
/// nearest the centroid.
pub fn farthest_point_sample(points: &[Vector3<f64>], n: usize) -> Vec<Vector3<f64>> {
    if points.is_empty() || n == 0 {
        return Vec::new();
    }
    let c = points.iter().sum::<Vector3<f64>>() / points.len() as f64;
    let first = (0..points.len())
        .min_by(|&a, &b| (points[a] - c).norm_squared().total_cmp(&(points[b] - c).norm_squared()))
        .unwrap();
    let mut dist: Vec<f64> = points.iter().map(|p| (p - points[first]).norm_squared()).collect();
    let mut out = vec![points[first]];
    while out.len() < n.min(points.len()) {
        let next = (0..points.len())
            .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)))
            .unwrap();
        out.push(points[next]);
        for (d, p) in dist.iter_mut().zip(points) {
            *d = d.min((p - points[next]).norm_squared());
        }
    }
    out
}

fn outline(n: usize, f: impl Fn(f64) -> (f64, f64)) -> Result<PointCloud> {
    if n < 3 {
        return Err(Error::invalid("outline needs at least 3 points"));
    }
    let pts: Vec<[f64; 2]> = (0..n)
        .map(|i| {
            let (x, y) = f(2.0 * std::f64::consts::PI * i as f64 / n as f64);
            [x, y]
        })
        .collect();
    Ok(PointCloud::from_xy(&pts)?.normalized()?.0)
}

/// Closed fish-like outline with a forked tail.
pub fn fish_outline(n: usize) -> Result<PointCloud> {
    outline(n, |t| {
        let x = t.cos() - 0.6 * (t.sin().powi(2));
        let y = 0.45 * t.sin() + 0.12 * (3.0 * t).sin();
        (x, y)
    })
}

/// Lopsided five-lobed outline.
pub fn lobed_outline(n: usize) -> Result<PointCloud> {
    outline(n, |t| {
        let r = 1.0 + 0.3 * (5.0 * t).cos() + 0.15 * (2.0 * t + 0.5).sin();
        (r * t.cos(), 0.8 * r * t.sin())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn animal_is_normalized_and_asymmetric() {
        let m = bunny_like(4000, 472, 1).unwrap();
        assert_eq!(m.len(), 472);
        assert!(m.points().iter().all(|p| p.amax() <= 1.0 + 1e-12));
        // Second moments differ along the three axes: no mirror symmetry
        // that would make registration ambiguous.
        let mut cov = Matrix3::zeros();
        for p in m.points() {
            cov += p * p.transpose();
        }
        let e = cov.symmetric_eigen().eigenvalues;
        let mut e: Vec<f64> = e.iter().copied().collect();
        e.sort_by(f64::total_cmp);
        assert!(e[1] - e[0] > 0.05 * e[2] && e[2] - e[1] > 0.05 * e[2], "{e:?}");
        assert_eq!(m, bunny_like(4000, 472, 1).unwrap());
    }

    #[test]
    fn farthest_point_sampling_spreads() {
        let pts: Vec<_> = (0..100).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect();
        let s = farthest_point_sample(&pts, 3);
        assert_eq!(s.len(), 3);
        assert!(s.contains(&Vector3::new(0.0, 0.0, 0.0)) && s.contains(&Vector3::new(99.0, 0.0, 0.0)));
    }

    #[test]
    fn outlines() {
        for c in [fish_outline(80).unwrap(), lobed_outline(80).unwrap()] {
            assert_eq!(c.dim(), 2);
            assert_eq!(c.len(), 80);
        }
        assert!(fish_outline(2).is_err());
    }
}
