use kiddo::SquaredEuclidean;
use nalgebra::{DVector, Vector3};

use super::cloud::{build_tree, compute_normals, PointCloud, Tree};
use super::lie::{lie_exp, param_len};
use crate::sum::{FeatureMap, SparseVec, UpdateMapSequence};
use crate::{Error, Result};

pub const DEFAULT_NORMAL_K: usize = 10;
/// Kernel support in units of `sigma`; weights beyond it are below `e^-9`.
pub const DEFAULT_KERNEL_SIGMAS: f64 = 3.0;

/// A model cloud with normals, kernel width and (once trained) its SUM.
#[derive(Clone)]
pub struct RegistrationModel {
    cloud: PointCloud,
    normals: Vec<Vector3<f64>>,
    sigma2: f64,
    kernel_radius: Option<f64>,
    tree: Tree,
    sum: Option<UpdateMapSequence>,
}

impl std::fmt::Debug for RegistrationModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RegistrationModel")
            .field("dim", &self.cloud.dim())
            .field("points", &self.cloud.len())
            .field("sigma2", &self.sigma2)
            .field("kernel_radius", &self.kernel_radius)
            .field("maps", &self.sum.as_ref().map(|s| s.len()))
            .finish()
    }
}

impl RegistrationModel {
    /// Normals from `DEFAULT_NORMAL_K` neighbours; kernel truncated at
    /// `DEFAULT_KERNEL_SIGMAS`.
    pub fn new(cloud: PointCloud, sigma2: f64) -> Result<Self> {
        let normals = compute_normals(&cloud, DEFAULT_NORMAL_K)?;
        Self::with_normals(cloud, normals, sigma2)
    }

    pub fn with_normals(cloud: PointCloud, normals: Vec<Vector3<f64>>, sigma2: f64) -> Result<Self> {
        Error::check_dim("normals", cloud.len(), normals.len())?;
        if !(sigma2 > 0.0) || !sigma2.is_finite() {
            return Err(Error::invalid("sigma2 must be positive"));
        }
        if cloud.is_empty() {
            return Err(Error::invalid("model cloud is empty"));
        }
        for n in &normals {
            if (n.norm() - 1.0).abs() > 1e-9 {
                return Err(Error::invalid("normals must have unit length"));
            }
        }
        let tree = build_tree(cloud.points());
        Ok(Self {
            cloud,
            normals,
            sigma2,
            kernel_radius: Some(DEFAULT_KERNEL_SIGMAS * sigma2.sqrt()),
            tree,
            sum: None,
        })
    }

    /// Truncates the kernel beyond `radius`; `None` sums over every pair.
    pub fn with_kernel_radius(mut self, radius: Option<f64>) -> Self {
        self.kernel_radius = radius;
        self
    }

    pub fn with_sum(mut self, sum: UpdateMapSequence) -> Result<Self> {
        Error::check_dim("SUM parameter dimension", self.param_dim(), sum.param_dim())?;
        Error::check_dim("SUM feature dimension", self.feature_dim(), sum.feature_dim())?;
        self.sum = Some(sum);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.cloud.dim()
    }

    pub fn param_dim(&self) -> usize {
        param_len(self.dim())
    }

    pub fn feature_dim(&self) -> usize {
        2 * self.cloud.len()
    }

    pub fn cloud(&self) -> &PointCloud {
        &self.cloud
    }

    pub fn normals(&self) -> &[Vector3<f64>] {
        &self.normals
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn kernel_radius(&self) -> Option<f64> {
        self.kernel_radius
    }

    pub fn sum(&self) -> Option<&UpdateMapSequence> {
        self.sum.as_ref()
    }

    /// Front/back kernel histogram of `scene` moved by `x`, normalized to
    /// sum to one (all zero when no mass is found).
    pub fn feature(&self, x: &DVector<f64>, scene: &PointCloud) -> Result<SparseVec> {
        Error::check_dim("rigid parameters", self.param_dim(), x.len())?;
        if scene.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                what: "scene dimension",
                expected: self.dim(),
                found: scene.dim(),
            });
        }
        let g = lie_exp(x)?;
        let n_m = self.cloud.len();
        let mut h = vec![0.0; 2 * n_m];
        let inv = 1.0 / self.sigma2;
        let model = self.cloud.points();
        let mut deposit = |a: usize, y: &Vector3<f64>| {
            let d = y - model[a];
            let w = (-d.norm_squared() * inv).exp();
            let slot = if self.normals[a].dot(&d) > 0.0 { a } else { a + n_m };
            h[slot] += w;
        };
        for s in scene.points() {
            let y = g.apply(s);
            match self.kernel_radius {
                Some(r) => {
                    for nb in self.tree.within_unsorted::<SquaredEuclidean>(&[y.x, y.y, y.z], r * r) {
                        deposit(nb.item as usize, &y);
                    }
                }
                None => (0..n_m).for_each(|a| deposit(a, &y)),
            }
        }
        let z: f64 = h.iter().sum();
        if !z.is_finite() {
            return Err(Error::NonFinite("registration feature".into()));
        }
        if z > 0.0 {
            h.iter_mut().for_each(|v| *v /= z);
        }
        Ok(SparseVec::from_dense(&h))
    }
}

/// `reg_feature(x, S, model)`.
pub fn reg_feature(x: &DVector<f64>, scene: &PointCloud, model: &RegistrationModel) -> Result<SparseVec> {
    model.feature(x, scene)
}

/// Binds a scene to a model as a feature map over rigid parameters.
#[derive(Clone, Copy, Debug)]
pub struct SceneFeatures<'a> {
    pub model: &'a RegistrationModel,
    pub scene: &'a PointCloud,
}

impl FeatureMap for SceneFeatures<'_> {
    fn feature_dim(&self) -> usize {
        self.model.feature_dim()
    }

    fn features(&self, x: &DVector<f64>) -> Result<SparseVec> {
        self.model.feature(x, self.scene)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registration::lie::Rigid;
    use crate::rng;
    use rand::Rng as _;

    fn naive(x: &DVector<f64>, scene: &PointCloud, model: &RegistrationModel) -> Vec<f64> {
        let g: Rigid = lie_exp(x).unwrap();
        let m = model.cloud().points();
        let n = m.len();
        let mut h = vec![0.0; 2 * n];
        for a in 0..n {
            for s in scene.points() {
                let y = g.apply(s);
                let w = (-(y - m[a]).norm_squared() / model.sigma2()).exp();
                if model.normals()[a].dot(&(y - m[a])) > 0.0 {
                    h[a] += w;
                } else {
                    h[a + n] += w;
                }
            }
        }
        let z: f64 = h.iter().sum();
        h.iter().map(|v| v / z).collect()
    }

    #[test]
    fn single_front_point() {
        let cloud = PointCloud::from_xyz(&[[0.0, 0.0, 0.0]]).unwrap();
        let model = RegistrationModel::with_normals(cloud, vec![Vector3::z()], 0.03).unwrap();
        let scene = PointCloud::from_xyz(&[[0.0, 0.0, 0.1]]).unwrap();
        let h = model.feature(&DVector::zeros(6), &scene).unwrap();
        assert_eq!(h.to_dense(), vec![1.0, 0.0]);

        let on_plane = PointCloud::from_xyz(&[[0.05, 0.0, 0.0]]).unwrap();
        let h = model.feature(&DVector::zeros(6), &on_plane).unwrap();
        assert_eq!(h.to_dense(), vec![0.0, 1.0]);

        let far = PointCloud::from_xyz(&[[50.0, 0.0, 0.0]]).unwrap();
        assert_eq!(model.feature(&DVector::zeros(6), &far).unwrap().nnz(), 0);
        let empty = PointCloud::new(3, vec![]).unwrap();
        assert_eq!(model.feature(&DVector::zeros(6), &empty).unwrap().nnz(), 0);
    }

    #[test]
    fn matches_naive_double_loop() {
        let mut rng = rng::stream(21, 0, 0);
        for trial in 0..20 {
            let dim = 2 + trial % 2;
            let pt = |rng: &mut crate::rng::Rng| {
                let z = if dim == 3 { rng.random_range(-1.0..1.0) } else { 0.0 };
                Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), z)
            };
            let m: Vec<_> = (0..10).map(|_| pt(&mut rng)).collect();
            let s: Vec<_> = (0..10).map(|_| pt(&mut rng)).collect();
            let model = RegistrationModel::new(PointCloud::new(dim, m).unwrap(), 0.3)
                .unwrap()
                .with_kernel_radius(None);
            let scene = PointCloud::new(dim, s).unwrap();
            let x = DVector::from_fn(param_len(dim), |_, _| rng.random_range(-0.3..0.3));
            let h = model.feature(&x, &scene).unwrap().to_dense();
            let oracle = naive(&x, &scene, &model);
            assert!((h.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (a, b) in h.iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-12, "{a} {b}");
                assert!(*a >= 0.0);
            }
        }
    }

    #[test]
    fn truncated_kernel_is_close_to_exact() {
        let mut rng = rng::stream(22, 0, 0);
        let m: Vec<_> = (0..200)
            .map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let cloud = PointCloud::new(3, m).unwrap();
        let exact = RegistrationModel::new(cloud.clone(), 0.03).unwrap().with_kernel_radius(None);
        let cut = RegistrationModel::new(cloud.clone(), 0.03).unwrap();
        let x = DVector::from_vec(vec![0.1, 0.0, -0.1, 0.05, 0.0, 0.0]);
        let a = exact.feature(&x, &cloud).unwrap().to_dense();
        let b = cut.feature(&x, &cloud).unwrap().to_dense();
        let err: f64 = a.iter().zip(&b).map(|(u, v)| (u - v).abs()).sum();
        assert!(err < 1e-2, "{err}");
    }

    #[test]
    fn invariant_to_scene_order() {
        let mut rng = rng::stream(23, 0, 0);
        let m: Vec<_> = (0..30)
            .map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let model = RegistrationModel::new(PointCloud::new(3, m.clone()).unwrap(), 0.1).unwrap();
        let mut rev = m.clone();
        rev.reverse();
        let x = DVector::from_vec(vec![0.05, 0.1, 0.0, 0.0, 0.02, 0.0]);
        let a = model.feature(&x, &PointCloud::new(3, m).unwrap()).unwrap().to_dense();
        let b = model.feature(&x, &PointCloud::new(3, rev).unwrap()).unwrap().to_dense();
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-14);
        }
    }
}
