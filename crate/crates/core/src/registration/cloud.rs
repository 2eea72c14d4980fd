use kiddo::{KdTree, SquaredEuclidean};
use nalgebra::{Matrix2, Matrix3, Vector3};

use super::lie::Rigid;
use crate::{Error, Result};

/// Points in the plane (stored with `z = 0`) or in space.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    dim: usize,
    points: Vec<Vector3<f64>>,
}

impl PointCloud {
    pub fn new(dim: usize, points: Vec<Vector3<f64>>) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::invalid(format!("point dimension must be 2 or 3, got {dim}")));
        }
        if points.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(Error::NonFinite("point coordinates".into()));
        }
        if dim == 2 && points.iter().any(|p| p.z != 0.0) {
            return Err(Error::invalid("planar points must have z = 0"));
        }
        Ok(Self { dim, points })
    }

    pub fn from_xy(points: &[[f64; 2]]) -> Result<Self> {
        Self::new(2, points.iter().map(|p| Vector3::new(p[0], p[1], 0.0)).collect())
    }

    pub fn from_xyz(points: &[[f64; 3]]) -> Result<Self> {
        Self::new(3, points.iter().map(|p| Vector3::new(p[0], p[1], p[2])).collect())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Vector3<f64>> {
        self.points
    }

    pub fn centroid(&self) -> Vector3<f64> {
        if self.points.is_empty() {
            return Vector3::zeros();
        }
        self.points.iter().sum::<Vector3<f64>>() / self.points.len() as f64
    }

    /// Side lengths of the axis-aligned bounding box.
    pub fn bbox_sides(&self) -> Vector3<f64> {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for p in &self.points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        if self.points.is_empty() {
            Vector3::zeros()
        } else {
            hi - lo
        }
    }

    pub fn largest_side(&self) -> f64 {
        self.bbox_sides().max()
    }

    /// Shifts to zero mean and scales so every coordinate lies in `[-1, 1]`.
    /// Returns the cloud with the removed mean and the divisor applied.
    pub fn normalized(&self) -> Result<(PointCloud, Vector3<f64>, f64)> {
        let c = self.centroid();
        let scale = self
            .points
            .iter()
            .map(|p| (p - c).amax())
            .fold(0.0, f64::max);
        if !(scale > 0.0) {
            return Err(Error::Degenerate("cloud has no extent".into()));
        }
        let points = self.points.iter().map(|p| (p - c) / scale).collect();
        Ok((PointCloud::new(self.dim, points)?, c, scale))
    }

    pub fn transformed(&self, g: &Rigid) -> PointCloud {
        PointCloud {
            dim: self.dim,
            points: self.points.iter().map(|p| g.apply(p)).collect(),
        }
    }
}

pub(crate) type Tree = KdTree<f64, 3>;

pub(crate) fn build_tree(points: &[Vector3<f64>]) -> Tree {
    let mut tree = Tree::with_capacity(points.len().max(1));
    for (i, p) in points.iter().enumerate() {
        tree.add(&[p.x, p.y, p.z], i as u64);
    }
    tree
}

pub(crate) fn nearest(tree: &Tree, p: &Vector3<f64>) -> (usize, f64) {
    let nn = tree.nearest_one::<SquaredEuclidean>(&[p.x, p.y, p.z]);
    (nn.item as usize, nn.distance)
}

/// Unit normals from the covariance of each point's `k` nearest neighbours
/// (itself included), oriented away from the centroid.
///
/// When the neighbourhood does not determine a direction (all points
/// coincide, or collinear in space) the direction from the centroid is used.
pub fn compute_normals(cloud: &PointCloud, k: usize) -> Result<Vec<Vector3<f64>>> {
    let dim = cloud.dim();
    if k < dim {
        return Err(Error::invalid(format!("need k >= {dim} neighbours, got {k}")));
    }
    if cloud.len() < dim + 1 {
        return Err(Error::invalid(format!(
            "normals need at least {} points, got {}",
            dim + 1,
            cloud.len()
        )));
    }
    let k = k.min(cloud.len());
    let tree = build_tree(cloud.points());
    let centroid = cloud.centroid();
    let scale = cloud.largest_side().max(f64::MIN_POSITIVE);
    cloud
        .points()
        .iter()
        .map(|p| {
            let nbrs = tree.nearest_n::<SquaredEuclidean>(&[p.x, p.y, p.z], k);
            let pts: Vec<Vector3<f64>> = nbrs.iter().map(|n| cloud.points()[n.item as usize]).collect();
            let mean = pts.iter().sum::<Vector3<f64>>() / pts.len() as f64;
            let mut cov = Matrix3::zeros();
            for q in &pts {
                let d = q - mean;
                cov += d * d.transpose();
            }
            cov /= pts.len() as f64;
            let tol = 1e-12 * scale * scale;
            let normal = if dim == 2 {
                planar_normal(&cov, tol)
            } else {
                spatial_normal(&cov, tol)
            };
            let outward = p - centroid;
            let n = normal.unwrap_or_else(|| fallback(&outward, dim));
            Ok(if n.dot(&outward) < 0.0 { -n } else { n })
        })
        .collect()
}

fn planar_normal(cov: &Matrix3<f64>, tol: f64) -> Option<Vector3<f64>> {
    let c = Matrix2::new(cov[(0, 0)], cov[(0, 1)], cov[(1, 0)], cov[(1, 1)]);
    let eig = c.symmetric_eigen();
    let (lo, hi) = if eig.eigenvalues[0] <= eig.eigenvalues[1] { (0, 1) } else { (1, 0) };
    if eig.eigenvalues[hi] <= tol {
        return None;
    }
    let v = eig.eigenvectors.column(lo);
    Some(Vector3::new(v[0], v[1], 0.0).normalize())
}

fn spatial_normal(cov: &Matrix3<f64>, tol: f64) -> Option<Vector3<f64>> {
    let eig = cov.symmetric_eigen();
    let mut order = [0, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    if eig.eigenvalues[order[1]] <= tol {
        return None;
    }
    Some(eig.eigenvectors.column(order[0]).into_owned().normalize())
}

fn fallback(outward: &Vector3<f64>, dim: usize) -> Vector3<f64> {
    let n = outward.norm();
    if n > 0.0 {
        outward / n
    } else if dim == 2 {
        Vector3::x()
    } else {
        Vector3::z()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng as _;

    #[test]
    fn plane_normals() {
        let mut pts = Vec::new();
        for i in 0..10 {
            for j in 0..10 {
                pts.push([i as f64 * 0.1, j as f64 * 0.13, 0.0]);
            }
        }
        let cloud = PointCloud::from_xyz(&pts).unwrap();
        for n in compute_normals(&cloud, 8).unwrap() {
            assert!((n.z.abs() - 1.0).abs() < 1e-9, "{n}");
        }
    }

    #[test]
    fn sphere_normals_are_radial() {
        let mut rng = rng::stream(3, 0, 0);
        let pts: Vec<[f64; 3]> = (0..400)
            .map(|_| {
                let v = Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0f64),
                )
                .normalize();
                [v.x, v.y, v.z]
            })
            .collect();
        let cloud = PointCloud::from_xyz(&pts).unwrap();
        let normals = compute_normals(&cloud, 10).unwrap();
        let good = normals
            .iter()
            .zip(cloud.points())
            .filter(|(n, p)| n.dot(&p.normalize()) > 15f64.to_radians().cos())
            .count();
        assert!(good as f64 >= 0.95 * 400.0, "{good}");
        assert!(normals.iter().all(|n| (n.norm() - 1.0).abs() < 1e-9));
    }

    #[test]
    fn degenerate_neighbourhoods_stay_unit() {
        let line = PointCloud::from_xy(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]).unwrap();
        for n in compute_normals(&line, 2).unwrap() {
            assert!((n.norm() - 1.0).abs() < 1e-12);
            assert!(n.x.abs() < 1e-12);
        }
        let same = PointCloud::from_xy(&[[1.0, 1.0]; 4]).unwrap();
        for n in compute_normals(&same, 3).unwrap() {
            assert!((n.norm() - 1.0).abs() < 1e-12);
        }
        let collinear = PointCloud::from_xyz(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [3.0, 0.0, 0.0]]).unwrap();
        let normals = compute_normals(&collinear, 3).unwrap();
        assert!((normals[0] - Vector3::new(-1.0, 0.0, 0.0)).norm() < 1e-12);
        assert!(compute_normals(&line, 1).is_err());
    }

    #[test]
    fn normalization_fits_unit_box() {
        let cloud = PointCloud::from_xyz(&[[0.0, 0.0, 0.0], [4.0, 1.0, 0.0], [1.0, 3.0, 2.0]]).unwrap();
        let (n, c, s) = cloud.normalized().unwrap();
        assert!(n.centroid().norm() < 1e-12);
        assert!(n.points().iter().all(|p| p.amax() <= 1.0 + 1e-12));
        assert!(n.points().iter().any(|p| (p.amax() - 1.0).abs() < 1e-12));
        assert!((cloud.points()[1] - (n.points()[1] * s + c)).norm() < 1e-12);
        assert!(PointCloud::from_xy(&[[1.0, 1.0]; 3]).unwrap().normalized().is_err());
    }

    #[test]
    fn rejects_bad_points() {
        assert!(PointCloud::new(2, vec![Vector3::new(0.0, 0.0, 1.0)]).is_err());
        assert!(PointCloud::new(4, vec![]).is_err());
        assert!(PointCloud::new(3, vec![Vector3::new(f64::NAN, 0.0, 1.0)]).is_err());
    }
}
