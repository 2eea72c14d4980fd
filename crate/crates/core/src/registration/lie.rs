//! Exponential and logarithm maps for planar and spatial rigid motions.
//!
//! Parameters are the rotation generator first, then the translation part:
//! `(theta, u1, u2)` in the plane and `(w1, w2, w3, u1, u2, u3)` in space.

use nalgebra::{DVector, Matrix2, Matrix3, Matrix4, Vector2, Vector3};

use crate::{Error, Result};

/// A rigid motion `y -> R y + t`. Planar motions rotate about the z axis and
/// keep `t.z = 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rigid {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Rigid {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn apply(&self, y: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * y + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Rigid) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Rotation angle in degrees.
    pub fn angle_deg(&self) -> f64 {
        let c = ((self.rotation.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        c.acos().to_degrees()
    }
}

pub fn hat(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]) * 0.5
}

/// `sin(t)/t`, `(1 - cos t)/t^2` and `(t - sin t)/t^3`, with series near 0.
fn coefficients(theta: f64) -> (f64, f64, f64) {
    let t2 = theta * theta;
    if theta < 1e-4 {
        (
            1.0 - t2 / 6.0 + t2 * t2 / 120.0,
            0.5 - t2 / 24.0 + t2 * t2 / 720.0,
            1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0,
        )
    } else {
        let (s, c) = theta.sin_cos();
        (s / theta, (1.0 - c) / t2, (theta - s) / (t2 * theta))
    }
}

/// Dimension (2 or 3) of a parameter vector of length 3 or 6.
pub fn params_dim(len: usize) -> Result<usize> {
    match len {
        3 => Ok(2),
        6 => Ok(3),
        n => Err(Error::invalid(format!(
            "rigid parameters must have length 3 or 6, got {n}"
        ))),
    }
}

pub fn param_len(dim: usize) -> usize {
    if dim == 2 {
        3
    } else {
        6
    }
}

pub fn lie_exp(x: &DVector<f64>) -> Result<Rigid> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("rigid parameters".into()));
    }
    Ok(match params_dim(x.len())? {
        2 => exp_se2(x[0], Vector2::new(x[1], x[2])),
        _ => exp_se3(
            &Vector3::new(x[0], x[1], x[2]),
            &Vector3::new(x[3], x[4], x[5]),
        ),
    })
}

pub fn exp_se3(w: &Vector3<f64>, u: &Vector3<f64>) -> Rigid {
    let theta = w.norm();
    let (a, b, c) = coefficients(theta);
    let k = hat(w);
    let k2 = k * k;
    let rotation = Matrix3::identity() + k * a + k2 * b;
    let v = Matrix3::identity() + k * b + k2 * c;
    Rigid::new(rotation, v * u)
}

pub fn exp_se2(theta: f64, u: Vector2<f64>) -> Rigid {
    let (s, c) = theta.sin_cos();
    let (a, b, _) = coefficients(theta.abs());
    // (1 - cos t)/t = t * (1 - cos t)/t^2
    let b = b * theta;
    let v = Matrix2::new(a, -b, b, a);
    let t = v * u;
    let mut rotation = Matrix3::identity();
    rotation[(0, 0)] = c;
    rotation[(0, 1)] = -s;
    rotation[(1, 0)] = s;
    rotation[(1, 1)] = c;
    Rigid::new(rotation, Vector3::new(t.x, t.y, 0.0))
}

/// Rotation vector of `r`, with angle in `[0, pi]`.
pub fn log_so3(r: &Matrix3<f64>) -> Vector3<f64> {
    let cos = ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let theta = cos.acos();
    let skew = vee(r);
    if theta < 1e-4 {
        return skew * (1.0 + theta * theta / 6.0);
    }
    if std::f64::consts::PI - theta < 1e-3 {
        // sin(theta) is tiny: read the axis from the symmetric part,
        // (R + R^T)/2 - cos I = (1 - cos) n n^T.
        let sym = (r + r.transpose()) * 0.5 - Matrix3::identity() * cos;
        let col = (0..3)
            .max_by(|&i, &j| sym[(i, i)].total_cmp(&sym[(j, j)]))
            .unwrap();
        let mut n: Vector3<f64> = sym.column(col).into_owned();
        n /= n.norm();
        if n.dot(&skew) < 0.0 {
            n = -n;
        }
        return n * theta;
    }
    skew * (theta / theta.sin())
}

pub fn lie_log(g: &Rigid, dim: usize) -> Result<DVector<f64>> {
    match dim {
        2 => {
            let theta = g.rotation[(1, 0)].atan2(g.rotation[(0, 0)]);
            let (a, b, _) = coefficients(theta.abs());
            let b = b * theta;
            let v = Matrix2::new(a, -b, b, a);
            let t = Vector2::new(g.translation.x, g.translation.y);
            let u = v
                .lu()
                .solve(&t)
                .ok_or_else(|| Error::Numerical("singular planar V matrix".into()))?;
            Ok(DVector::from_vec(vec![theta, u.x, u.y]))
        }
        3 => {
            let w = log_so3(&g.rotation);
            let (_, b, c) = coefficients(w.norm());
            let k = hat(&w);
            let v = Matrix3::identity() + k * b + k * k * c;
            let u = v
                .lu()
                .solve(&g.translation)
                .ok_or_else(|| Error::Numerical("singular V matrix".into()))?;
            Ok(DVector::from_vec(vec![w.x, w.y, w.z, u.x, u.y, u.z]))
        }
        d => Err(Error::invalid(format!("dimension must be 2 or 3, got {d}"))),
    }
}

/// Rotation by `angle` about unit `axis`.
pub fn axis_angle(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    exp_se3(&(axis.normalize() * angle), &Vector3::zeros()).rotation
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng as _;

    fn generator(x: &DVector<f64>) -> Matrix4<f64> {
        let mut m = Matrix4::zeros();
        if x.len() == 6 {
            m.fixed_view_mut::<3, 3>(0, 0)
                .copy_from(&hat(&Vector3::new(x[0], x[1], x[2])));
            m[(0, 3)] = x[3];
            m[(1, 3)] = x[4];
            m[(2, 3)] = x[5];
        } else {
            m[(0, 1)] = -x[0];
            m[(1, 0)] = x[0];
            m[(0, 3)] = x[1];
            m[(1, 3)] = x[2];
        }
        m
    }

    fn assert_rigid(g: &Rigid) {
        let e = g.rotation.transpose() * g.rotation - Matrix3::identity();
        assert!(e.amax() < 1e-9);
        assert!((g.rotation.determinant() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn identity_and_half_turn() {
        let g = lie_exp(&DVector::zeros(6)).unwrap();
        assert_eq!(g, Rigid::identity());
        let g = lie_exp(&DVector::from_vec(vec![std::f64::consts::PI, 0.0, 0.0, 0.0, 0.0, 0.0])).unwrap();
        let expected = Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0);
        assert!((g.rotation - expected).amax() < 1e-12);
        assert!(lie_exp(&DVector::zeros(4)).is_err());
    }

    #[test]
    fn matches_matrix_exponential() {
        let mut rng = rng::stream(11, 0, 0);
        for i in 0..1000 {
            let len = if i % 2 == 0 { 6 } else { 3 };
            let scale = [1e-7, 0.1, 1.0, 3.0][i % 4];
            let x = DVector::from_fn(len, |_, _| rng.random_range(-scale..scale));
            let g = lie_exp(&x).unwrap();
            let oracle = generator(&x).exp();
            assert!((g.to_homogeneous() - oracle).amax() < 1e-9, "{x}");
            assert_rigid(&g);
        }
    }

    #[test]
    fn log_inverts_exp() {
        let mut rng = rng::stream(12, 0, 0);
        for i in 0..500 {
            let dim = 2 + i % 2;
            let x = if dim == 3 {
                let axis = Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
                .normalize();
                let angle = rng.random_range(0.0..3.1);
                let w = axis * angle;
                DVector::from_vec(vec![w.x, w.y, w.z, rng.random(), rng.random(), -0.5])
            } else {
                DVector::from_vec(vec![rng.random_range(-3.1..3.1), rng.random(), -0.25])
            };
            let g = lie_exp(&x).unwrap();
            let back = lie_log(&g, dim).unwrap();
            assert!((&back - &x).amax() < 1e-9, "{x} vs {back}");
            let again = lie_exp(&back).unwrap();
            assert!((again.to_homogeneous() - g.to_homogeneous()).amax() < 1e-9);
        }
    }

    #[test]
    fn log_near_half_turn() {
        for angle in [std::f64::consts::PI, std::f64::consts::PI - 1e-6, std::f64::consts::PI - 5e-4] {
            let axis = Vector3::new(0.3, -0.5, 0.8).normalize();
            let r = axis_angle(&axis, angle);
            let w = log_so3(&r);
            assert!((w.norm() - angle).abs() < 1e-8);
            let back = exp_se3(&w, &Vector3::zeros()).rotation;
            assert!((back - r).amax() < 1e-9);
        }
    }

    #[test]
    fn compose_and_inverse() {
        let a = lie_exp(&DVector::from_vec(vec![0.2, -0.1, 0.4, 1.0, 2.0, 3.0])).unwrap();
        let b = lie_exp(&DVector::from_vec(vec![-0.7, 0.3, 0.1, -1.0, 0.5, 0.0])).unwrap();
        let y = Vector3::new(0.3, 0.1, -0.9);
        assert!((a.compose(&b).apply(&y) - a.apply(&b.apply(&y))).norm() < 1e-12);
        assert!((a.inverse().apply(&a.apply(&y)) - y).norm() < 1e-12);
        let r = axis_angle(&Vector3::z(), 30f64.to_radians());
        assert!((Rigid::new(r, Vector3::zeros()).angle_deg() - 30.0).abs() < 1e-9);
    }
}
