//! Geometric reprojection residual of a homogeneous 3x4 pose and its
//! histogram feature.

use nalgebra::{DVector, SMatrix, Vector2, Vector3, Vector4};

use super::NormalizedSet;
use crate::feature::{build_feature, GridSpec, ResidualModel};
use crate::sum::{FeatureMap, SparseVec};
use crate::{Error, Result};

/// Terms whose depth `|x_3 . s|` falls below this are left out.
pub const MIN_DEPTH: f64 = 1e-9;
/// Residual bins per axis over `[-1, 1]`.
pub const RESIDUAL_BINS: usize = 10;
pub const PARAMS: usize = 12;

/// Residual `g` and the 12 distinct entries of its 2x12 Jacobian:
/// `a = -s/w` (shared by `dg1/dx1` and `dg2/dx2`), `b1 = s u/w^2` and
/// `b2 = s v/w^2` (the `x_3` blocks), with `u, v, w` the rows of `X s`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Residual {
    pub g: Vector2<f64>,
    pub unique: [f64; PARAMS],
}

impl Residual {
    /// Full Jacobian with respect to the row-major parameters `(x_1, x_2, x_3)`.
    pub fn jacobian(&self) -> SMatrix<f64, 2, PARAMS> {
        let mut j = SMatrix::<f64, 2, PARAMS>::zeros();
        for c in 0..4 {
            j[(0, c)] = self.unique[c];
            j[(1, 4 + c)] = self.unique[c];
            j[(0, 8 + c)] = self.unique[4 + c];
            j[(1, 8 + c)] = self.unique[8 + c];
        }
        j
    }
}

fn rows(x: &[f64]) -> (Vector4<f64>, Vector4<f64>, Vector4<f64>) {
    (
        Vector4::new(x[0], x[1], x[2], x[3]),
        Vector4::new(x[4], x[5], x[6], x[7]),
        Vector4::new(x[8], x[9], x[10], x[11]),
    )
}

/// `g = p - (x_1.s / x_3.s, x_2.s / x_3.s)` for the row-major pose `x`;
/// `None` when the depth is below `MIN_DEPTH`.
pub fn geometric_residual(x: &[f64], p: &Vector2<f64>, s: &Vector3<f64>) -> Option<Residual> {
    debug_assert_eq!(x.len(), PARAMS);
    let (x1, x2, x3) = rows(x);
    let sh = s.push(1.0);
    let (u, v, w) = (x1.dot(&sh), x2.dot(&sh), x3.dot(&sh));
    if w.abs() < MIN_DEPTH || !w.is_finite() {
        return None;
    }
    let mut unique = [0.0; PARAMS];
    let w2 = w * w;
    for c in 0..4 {
        unique[c] = -sh[c] / w;
        unique[4 + c] = sh[c] * u / w2;
        unique[8 + c] = sh[c] * v / w2;
    }
    Some(Residual {
        g: Vector2::new(p.x - u / w, p.y - v / w),
        unique,
    })
}

/// Which Jacobian entries the feature keeps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PnpFeatureKind {
    /// The 12 distinct entries: `12 * 100` values.
    #[default]
    Compact,
    /// All 24 entries of the 2x12 Jacobian: `12 * 2 * 100` values.
    Full,
}

impl PnpFeatureKind {
    pub fn dim(self) -> usize {
        let cells = RESIDUAL_BINS * RESIDUAL_BINS;
        match self {
            PnpFeatureKind::Compact => PARAMS * cells,
            PnpFeatureKind::Full => PARAMS * 2 * cells,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PnpFeatureKind::Compact => "compact",
            PnpFeatureKind::Full => "full",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "compact" => Ok(PnpFeatureKind::Compact),
            "full" => Ok(PnpFeatureKind::Full),
            other => Err(Error::invalid(format!("unknown PnP feature kind '{other}'"))),
        }
    }
}

pub fn residual_grid() -> GridSpec {
    GridSpec::uniform(2, RESIDUAL_BINS, -1.0, 1.0).expect("static grid")
}

struct PnpResiduals<'a>(&'a NormalizedSet);

impl ResidualModel for PnpResiduals<'_> {
    fn param_dim(&self) -> usize {
        PARAMS
    }

    fn residual_dim(&self) -> usize {
        2
    }

    fn num_terms(&self) -> usize {
        self.0.len()
    }

    fn evaluate(&self, j: usize, x: &[f64], residual: &mut [f64], jacobian: &mut [f64]) -> bool {
        match geometric_residual(x, &self.0.image[j], &self.0.world[j]) {
            Some(r) => {
                residual.copy_from_slice(r.g.as_slice());
                let jac = r.jacobian();
                for k in 0..2 {
                    for l in 0..PARAMS {
                        jacobian[k * PARAMS + l] = jac[(k, l)];
                    }
                }
                true
            }
            None => false,
        }
    }
}

/// Unit-norm histogram feature of the pose `x` over a normalized set.
/// Compact layout: entry `l * 100 + cell` holds the `l`-th distinct Jacobian
/// value summed over terms in residual cell `cell`.
pub fn pnp_feature(x: &[f64], set: &NormalizedSet, kind: PnpFeatureKind) -> Result<SparseVec> {
    Error::check_dim("pose parameters", PARAMS, x.len())?;
    let grid = residual_grid();
    let mut h = match kind {
        PnpFeatureKind::Full => build_feature(x, &PnpResiduals(set), &grid)?,
        PnpFeatureKind::Compact => {
            let cells = RESIDUAL_BINS * RESIDUAL_BINS;
            let weight = 1.0 / set.len().max(1) as f64;
            let mut pairs = Vec::with_capacity(set.len() * PARAMS);
            for (p, s) in set.image.iter().zip(&set.world) {
                let Some(r) = geometric_residual(x, p, s) else {
                    continue;
                };
                if !r.g.iter().chain(&r.unique).all(|v| v.is_finite()) {
                    return Err(Error::NonFinite("PnP residual".into()));
                }
                let cell = grid.cell_of(r.g.as_slice());
                pairs.extend(r.unique.iter().enumerate().map(|(l, &v)| (l * cells + cell, weight * v)));
            }
            SparseVec::from_pairs(kind.dim(), pairs)
        }
    };
    let n = h.norm();
    if n > 0.0 {
        h.scale(1.0 / n);
    }
    Ok(h)
}

/// A normalized correspondence set as a feature map over row-major poses.
#[derive(Clone, Copy, Debug)]
pub struct PnpFeatures<'a> {
    pub set: &'a NormalizedSet,
    pub kind: PnpFeatureKind,
}

impl FeatureMap for PnpFeatures<'_> {
    fn feature_dim(&self) -> usize {
        self.kind.dim()
    }

    fn features(&self, x: &DVector<f64>) -> Result<SparseVec> {
        pnp_feature(x.as_slice(), self.set, self.kind)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng as _;

    fn identity_pose() -> Vec<f64> {
        let mut x = vec![0.0; 12];
        x[0] = 1.0;
        x[5] = 1.0;
        x[10] = 1.0;
        let n = 3f64.sqrt();
        x.iter().map(|v| v / n).collect()
    }

    #[test]
    fn residual_examples() {
        let x = identity_pose();
        let s = Vector3::new(0.0, 0.0, 1.0);
        let r = geometric_residual(&x, &Vector2::zeros(), &s).unwrap();
        assert_eq!(r.g, Vector2::zeros());
        let r = geometric_residual(&x, &Vector2::new(0.1, 0.0), &s).unwrap();
        assert!((r.g - Vector2::new(0.1, 0.0)).norm() < 1e-15);
        let scaled: Vec<f64> = x.iter().map(|v| 7.5 * v).collect();
        let r2 = geometric_residual(&scaled, &Vector2::new(0.1, 0.0), &s).unwrap();
        assert!((r.g - r2.g).norm() < 1e-15);
        assert!(geometric_residual(&x, &Vector2::zeros(), &Vector3::zeros()).is_none());
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let mut rng = rng::stream(31, 0, 0);
        let mut checked = 0;
        while checked < 100 {
            let x: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
            let p = Vector2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let s = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let Some(r) = geometric_residual(&x, &p, &s) else { continue };
            let w = x[8] * s.x + x[9] * s.y + x[10] * s.z + x[11];
            if w.abs() < 0.2 {
                continue;
            }
            let h = 1e-6;
            let mut fd = SMatrix::<f64, 2, 12>::zeros();
            for l in 0..12 {
                let mut a = x.clone();
                let mut b = x.clone();
                a[l] += h;
                b[l] -= h;
                let ga = geometric_residual(&a, &p, &s).unwrap().g;
                let gb = geometric_residual(&b, &p, &s).unwrap().g;
                fd.set_column(l, &((ga - gb) / (2.0 * h)));
            }
            let jac = r.jacobian();
            let rel = (jac - fd).norm() / jac.norm();
            assert!(rel < 1e-5, "relative error {rel}");
            checked += 1;
        }
    }

    fn set(image: Vec<[f64; 2]>, world: Vec<[f64; 3]>) -> NormalizedSet {
        NormalizedSet {
            image: image.into_iter().map(Vector2::from).collect(),
            world: world.into_iter().map(Vector3::from).collect(),
        }
    }

    #[test]
    fn zero_depth_gives_zero_feature() {
        let mut x = vec![0.0; 12];
        x[0] = 1.0;
        x[5] = 1.0;
        x[10] = 1.0;
        let s = set(vec![[0.1, 0.1]; 3], vec![[0.2, 0.3, 0.0]; 3]);
        for kind in [PnpFeatureKind::Compact, PnpFeatureKind::Full] {
            let h = pnp_feature(&x, &s, kind).unwrap();
            assert_eq!(h.dim(), kind.dim());
            assert_eq!(h.nnz(), 0);
        }
    }

    #[test]
    fn single_term_matches_naive_expansion() {
        let x: Vec<f64> = vec![0.3, -0.1, 0.2, 0.05, 0.1, 0.4, -0.2, 0.0, 0.05, -0.1, 0.6, 0.5];
        let p = [0.25, -0.4];
        let w = [0.3, -0.2, 0.1];
        let s = set(vec![p], vec![w]);
        let h = pnp_feature(&x, &s, PnpFeatureKind::Compact).unwrap().to_dense();

        // Hand expansion: rows of X s~, residual, bins, then the 12 values.
        let sh = [w[0], w[1], w[2], 1.0];
        let dot = |r: usize| (0..4).map(|c| x[4 * r + c] * sh[c]).sum::<f64>();
        let (u, v, z) = (dot(0), dot(1), dot(2));
        let g = [p[0] - u / z, p[1] - v / z];
        let bin = |y: f64| ((((y + 1.0) / 0.2).floor() as i64).clamp(0, 9)) as usize;
        let cell = bin(g[0]) * 10 + bin(g[1]);
        let mut naive = vec![0.0; 1200];
        for c in 0..4 {
            naive[c * 100 + cell] = -sh[c] / z;
            naive[(4 + c) * 100 + cell] = sh[c] * u / (z * z);
            naive[(8 + c) * 100 + cell] = sh[c] * v / (z * z);
        }
        let n = naive.iter().map(|a| a * a).sum::<f64>().sqrt();
        for (a, b) in h.iter().zip(&naive) {
            assert!((a - b / n).abs() < 1e-14);
        }
    }

    #[test]
    fn unit_norm_and_scale_invariant() {
        let mut rng = rng::stream(32, 0, 0);
        let pts: Vec<[f64; 2]> = (0..50).map(|_| [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)]).collect();
        let wps: Vec<[f64; 3]> = (0..50)
            .map(|_| [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)])
            .collect();
        let s = set(pts, wps);
        let mut x = vec![0.0; 12];
        x[11] = 1.0;
        x[0] = 0.3;
        x[5] = -0.2;
        for kind in [PnpFeatureKind::Compact, PnpFeatureKind::Full] {
            let h = pnp_feature(&x, &s, kind).unwrap();
            assert!((h.norm() - 1.0).abs() < 1e-12);
            // Doubling X halves every Jacobian entry and keeps residuals.
            let x2: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
            let h2 = pnp_feature(&x2, &s, kind).unwrap();
            for (a, b) in h.to_dense().iter().zip(h2.to_dense()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
