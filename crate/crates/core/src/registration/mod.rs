//! Rigid registration of planar and spatial point clouds with a learned
//! SUM over a front/back kernel histogram of the scene around each model
//! point.

mod cloud;
mod feature;
pub mod io;
pub mod lie;
mod scene;
pub mod shapes;

use nalgebra::{DVector, Matrix3, Vector3};
use rayon::prelude::*;

pub use cloud::{compute_normals, PointCloud};
pub use feature::{reg_feature, RegistrationModel, SceneFeatures, DEFAULT_KERNEL_SIGMAS, DEFAULT_NORMAL_K};
pub use lie::{lie_exp, lie_log, Rigid};
pub use scene::{gen_perturbed_scene, Scene, SceneConfig, SceneCounts};

use crate::rng;
use crate::sum::{infer, train_sum, InferenceOutcome, InferenceSettings, TrainOptions, TrainReport, TrainingInstance};
use crate::{Error, Result};

const DOMAIN_TRAIN: u64 = 0x5e_0001;

#[derive(Clone, Debug, PartialEq)]
pub struct RegTrainConfig {
    pub n_train: usize,
    pub maps: usize,
    pub lambda: f64,
    pub sigma2: f64,
    pub normalize_features: bool,
    pub scene: SceneConfig,
    pub seed: u64,
}

impl RegTrainConfig {
    /// 30000 scenes, 30 maps, `lambda = 3e-4`, `sigma^2 = 0.03`.
    pub fn spatial() -> Self {
        Self {
            n_train: 30_000,
            maps: 30,
            lambda: 3e-4,
            sigma2: 0.03,
            normalize_features: false,
            scene: SceneConfig::training_3d(),
            seed: 0,
        }
    }

    /// 10000 scenes, 30 maps, `lambda = 2e-2`, `sigma^2 = 0.5`, with
    /// per-element feature scaling.
    pub fn planar(model_points: usize) -> Self {
        Self {
            n_train: 10_000,
            maps: 30,
            lambda: 2e-2,
            sigma2: 0.5,
            normalize_features: true,
            scene: SceneConfig::training_2d(model_points),
            seed: 0,
        }
    }
}

/// Trains a SUM for `cloud` (already normalized) on synthetic scenes.
pub fn train_registration(cloud: &PointCloud, config: &RegTrainConfig) -> Result<(RegistrationModel, TrainReport)> {
    if config.n_train == 0 || config.maps == 0 {
        return Err(Error::invalid("need at least one training scene and one map"));
    }
    let model = RegistrationModel::new(cloud.clone(), config.sigma2)?;
    let scenes: Vec<Scene> = (0..config.n_train)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::stream(config.seed, DOMAIN_TRAIN, i as u64);
            gen_perturbed_scene(cloud, &config.scene, &mut rng)
        })
        .collect::<Result<_>>()?;
    let p = model.param_dim();
    let instances: Vec<_> = scenes
        .iter()
        .map(|s| {
            TrainingInstance::new(
                DVector::zeros(p),
                s.x_star.clone(),
                SceneFeatures {
                    model: &model,
                    scene: &s.cloud,
                },
            )
        })
        .collect();
    let mut options = TrainOptions::new(config.maps, config.lambda);
    options.normalize_features = config.normalize_features;
    let (sum, report) = train_sum(&instances, &options)?;
    drop(instances);
    Ok((model.with_sum(sum)?, report))
}

/// Default test-time settings: up to 1000 updates, `epsilon = 1e-3`.
pub fn default_settings() -> InferenceSettings {
    InferenceSettings::new(1000, 1e-3)
}

/// Runs the trained SUM on `scene` from `x0`.
pub fn register(
    model: &RegistrationModel,
    scene: &PointCloud,
    x0: &DVector<f64>,
    settings: &InferenceSettings,
) -> Result<InferenceOutcome> {
    let sum = model
        .sum()
        .ok_or_else(|| Error::invalid("registration model has no trained SUM"))?;
    infer(x0, &SceneFeatures { model, scene }, sum, settings)
}

/// Mean distance between model points moved by `x_est` and by `x_star`, and
/// whether it is below 5% of the model's largest bounding-box side.
pub fn success_metric(model: &PointCloud, x_est: &DVector<f64>, x_star: &DVector<f64>) -> Result<(f64, bool)> {
    let a = lie_exp(x_est)?;
    let b = lie_exp(x_star)?;
    if model.is_empty() {
        return Ok((0.0, true));
    }
    let err = model
        .points()
        .iter()
        .map(|m| (a.apply(m) - b.apply(m)).norm())
        .sum::<f64>()
        / model.len() as f64;
    Ok((err, err < 0.05 * model.largest_side()))
}

/// Least-squares rigid motion taking `src[i]` to `dst[i]`.
pub fn kabsch(src: &[Vector3<f64>], dst: &[Vector3<f64>], dim: usize) -> Result<Rigid> {
    Error::check_dim("correspondences", src.len(), dst.len())?;
    if src.is_empty() {
        return Err(Error::invalid("no correspondences"));
    }
    let n = src.len() as f64;
    let cs = src.iter().sum::<Vector3<f64>>() / n;
    let cd = dst.iter().sum::<Vector3<f64>>() / n;
    let rotation = if dim == 2 {
        let (mut sin, mut cos) = (0.0, 0.0);
        for (s, d) in src.iter().zip(dst) {
            let (a, b) = (s - cs, d - cd);
            sin += a.x * b.y - a.y * b.x;
            cos += a.x * b.x + a.y * b.y;
        }
        lie::axis_angle(&Vector3::z(), sin.atan2(cos))
    } else {
        let mut h = Matrix3::zeros();
        for (s, d) in src.iter().zip(dst) {
            h += (s - cs) * (d - cd).transpose();
        }
        let svd = h.svd(true, true);
        let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
        let v = v_t.transpose();
        let d = (v * u.transpose()).determinant().signum();
        v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose()
    };
    let mut translation = cd - rotation * cs;
    if dim == 2 {
        translation.z = 0.0;
    }
    Ok(Rigid::new(rotation, translation))
}

/// Point-to-point ICP from `x0`: match every scene point to its nearest
/// model point and solve for the rigid motion in closed form, until the
/// motion stops changing or `max_iter` rounds.
pub fn icp_baseline(model: &PointCloud, scene: &PointCloud, x0: &DVector<f64>, max_iter: usize) -> Result<DVector<f64>> {
    if scene.dim() != model.dim() {
        return Err(Error::invalid("model and scene dimensions differ"));
    }
    let dim = model.dim();
    let mut g = lie_exp(x0)?;
    if scene.is_empty() || model.is_empty() {
        return lie_log(&g, dim);
    }
    let tree = cloud::build_tree(model.points());
    let mut prev_err = f64::INFINITY;
    for _ in 0..max_iter {
        let moved: Vec<Vector3<f64>> = scene.points().iter().map(|s| g.apply(s)).collect();
        let mut err = 0.0;
        let targets: Vec<Vector3<f64>> = moved
            .iter()
            .map(|y| {
                let (i, d2) = cloud::nearest(&tree, y);
                err += d2;
                model.points()[i]
            })
            .collect();
        let step = kabsch(&moved, &targets, dim)?;
        g = step.compose(&g);
        err /= moved.len() as f64;
        let small = (step.rotation - Matrix3::identity()).amax() < 1e-12 && step.translation.amax() < 1e-12;
        if small || (prev_err.is_finite() && (prev_err - err).abs() <= 1e-14 * prev_err) {
            break;
        }
        prev_err = err;
    }
    lie_log(&g, dim)
}

/// Perturbation varied in a sweep; the others keep their test defaults.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Perturbation {
    ScenePoints,
    Noise,
    InitialAngle,
    Outliers,
    Incomplete,
}

impl Perturbation {
    pub fn name(self) -> &'static str {
        match self {
            Perturbation::ScenePoints => "points",
            Perturbation::Noise => "noise",
            Perturbation::InitialAngle => "angle",
            Perturbation::Outliers => "outliers",
            Perturbation::Incomplete => "incomplete",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "points" => Perturbation::ScenePoints,
            "noise" => Perturbation::Noise,
            "angle" => Perturbation::InitialAngle,
            "outliers" => Perturbation::Outliers,
            "incomplete" => Perturbation::Incomplete,
            other => return Err(Error::invalid(format!("unknown perturbation '{other}'"))),
        })
    }

    /// Values swept by default.
    pub fn default_values(self) -> Vec<f64> {
        match self {
            Perturbation::ScenePoints => vec![100.0, 250.0, 500.0, 1000.0, 2000.0, 4000.0],
            Perturbation::Noise => vec![0.0, 0.02, 0.04, 0.06, 0.08, 0.1],
            Perturbation::InitialAngle => (0..=6).map(|k| 30.0 * k as f64).collect(),
            Perturbation::Outliers => (0..=6).map(|k| 100.0 * k as f64).collect(),
            Perturbation::Incomplete => (0..=7).map(|k| 0.1 * k as f64).collect(),
        }
    }

    /// Test scene configuration with this perturbation set to `value`.
    pub fn apply(self, base: &SceneConfig, value: f64) -> SceneConfig {
        let mut c = base.clone();
        match self {
            Perturbation::ScenePoints => c.points = (value as usize, value as usize),
            Perturbation::Noise => c.noise_sd = (value, value),
            Perturbation::InitialAngle => c.angle_deg = (value, value),
            Perturbation::Outliers => c.sparse_outliers = (value as usize, value as usize),
            Perturbation::Incomplete => c.incomplete = (value, value),
        }
        c
    }
}

/// Success counts of the learned registration and ICP at one setting.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub value: f64,
    pub trials: usize,
    pub do_success: usize,
    pub icp_success: usize,
    pub do_mean_error: f64,
    pub icp_mean_error: f64,
    /// Wall-clock seconds spent in each method, summed over trials.
    pub do_seconds: f64,
    pub icp_seconds: f64,
}

impl SweepPoint {
    pub fn do_rate(&self) -> f64 {
        self.do_success as f64 / self.trials.max(1) as f64
    }

    pub fn icp_rate(&self) -> f64 {
        self.icp_success as f64 / self.trials.max(1) as f64
    }
}

const DOMAIN_TEST: u64 = 0x5e_0002;

/// Errors (mean model-point distance) and wall-clock seconds of one trial.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegTrial {
    pub do_error: f64,
    pub icp_error: f64,
    pub do_seconds: f64,
    pub icp_seconds: f64,
}

impl SweepPoint {
    pub fn from_trials(value: f64, threshold: f64, runs: &[RegTrial]) -> Self {
        let n = runs.len().max(1) as f64;
        SweepPoint {
            value,
            trials: runs.len(),
            do_success: runs.iter().filter(|r| r.do_error < threshold).count(),
            icp_success: runs.iter().filter(|r| r.icp_error < threshold).count(),
            do_mean_error: runs.iter().map(|r| r.do_error).sum::<f64>() / n,
            icp_mean_error: runs.iter().map(|r| r.icp_error).sum::<f64>() / n,
            do_seconds: runs.iter().map(|r| r.do_seconds).sum(),
            icp_seconds: runs.iter().map(|r| r.icp_seconds).sum(),
        }
    }
}

/// Per-trial results of `trials` scenes per value, both methods from `x0 = 0`.
#[allow(clippy::too_many_arguments)]
pub fn sweep_trials(
    model: &RegistrationModel,
    base: &SceneConfig,
    perturbation: Perturbation,
    values: &[f64],
    trials: usize,
    settings: &InferenceSettings,
    icp_iterations: usize,
    seed: u64,
) -> Result<Vec<Vec<RegTrial>>> {
    let cloud = model.cloud();
    let p = model.param_dim();
    values
        .iter()
        .enumerate()
        .map(|(k, &value)| {
            let config = perturbation.apply(base, value);
            (0..trials)
                .into_par_iter()
                .map(|i| {
                    let mut rng = rng::stream(seed, DOMAIN_TEST + k as u64, i as u64);
                    let scene = gen_perturbed_scene(cloud, &config, &mut rng)?;
                    let x0 = DVector::zeros(p);
                    let start = std::time::Instant::now();
                    let est = register(model, &scene.cloud, &x0, settings)?;
                    let do_seconds = start.elapsed().as_secs_f64();
                    let start = std::time::Instant::now();
                    let icp = icp_baseline(cloud, &scene.cloud, &x0, icp_iterations)?;
                    let icp_seconds = start.elapsed().as_secs_f64();
                    Ok(RegTrial {
                        do_error: success_metric(cloud, &est.x, &scene.x_star)?.0,
                        icp_error: success_metric(cloud, &icp, &scene.x_star)?.0,
                        do_seconds,
                        icp_seconds,
                    })
                })
                .collect()
        })
        .collect()
}

/// Success counts per value; see [`sweep_trials`].
#[allow(clippy::too_many_arguments)]
pub fn run_sweep(
    model: &RegistrationModel,
    base: &SceneConfig,
    perturbation: Perturbation,
    values: &[f64],
    trials: usize,
    settings: &InferenceSettings,
    icp_iterations: usize,
    seed: u64,
) -> Result<Vec<SweepPoint>> {
    let runs = sweep_trials(model, base, perturbation, values, trials, settings, icp_iterations, seed)?;
    let threshold = 0.05 * model.cloud().largest_side();
    Ok(values
        .iter()
        .zip(&runs)
        .map(|(&v, r)| SweepPoint::from_trials(v, threshold, r))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn model() -> PointCloud {
        shapes::bunny_like(3000, 150, 7).unwrap()
    }

    #[test]
    fn success_metric_examples() {
        let m = model();
        let x = DVector::from_vec(vec![0.1, -0.2, 0.3, 0.0, 0.1, 0.0]);
        assert_eq!(success_metric(&m, &x, &x).unwrap(), (0.0, true));
        let shifted = DVector::from_vec(vec![0.1, -0.2, 0.3, 0.0, 0.1, 0.0]);
        let mut t = lie_exp(&shifted).unwrap();
        t.translation.x += 0.1;
        let (err, ok) = success_metric(&m, &lie_log(&t, 3).unwrap(), &shifted).unwrap();
        assert!((err - 0.1).abs() < 1e-9);
        assert!(!ok);

        let one_degree = DVector::from_vec(vec![0.0, 0.0, 1f64.to_radians(), 0.0, 0.0, 0.0]);
        let (err, _) = success_metric(&m, &one_degree, &DVector::zeros(6)).unwrap();
        let r = lie::axis_angle(&Vector3::z(), 1f64.to_radians());
        let direct = m.points().iter().map(|p| (r * p - p).norm()).sum::<f64>() / m.len() as f64;
        assert!((err - direct).abs() < 1e-12);
    }

    #[test]
    fn kabsch_recovers_motion() {
        let m = model();
        let g = lie_exp(&DVector::from_vec(vec![0.4, -1.0, 0.2, 0.3, -0.1, 0.2])).unwrap();
        let moved: Vec<_> = m.points().iter().map(|p| g.apply(p)).collect();
        let est = kabsch(m.points(), &moved, 3).unwrap();
        assert!((est.to_homogeneous() - g.to_homogeneous()).amax() < 1e-9);
    }

    #[test]
    fn icp_on_identical_and_small_rotation() {
        let m = shapes::bunny_like(20_000, 472, 7).unwrap();
        let x = icp_baseline(&m, &m, &DVector::zeros(6), 50).unwrap();
        assert!(x.amax() < 1e-9, "{x}");

        let r = lie::axis_angle(&Vector3::new(0.2, 1.0, -0.3), 5f64.to_radians());
        let scene = m.transformed(&Rigid::new(r, Vector3::zeros()));
        let x = icp_baseline(&m, &scene, &DVector::zeros(6), 200).unwrap();
        let residual = lie_exp(&x).unwrap().rotation * r;
        let a = Rigid::new(residual, Vector3::zeros()).angle_deg();
        assert!(a < 0.1, "{a} {x}");
    }

    #[test]
    fn icp_fails_on_half_turn() {
        let m = model();
        let r = lie::axis_angle(&Vector3::z(), 170f64.to_radians());
        let scene = m.transformed(&Rigid::new(r, Vector3::zeros()));
        let x_star = lie_log(&Rigid::new(r.transpose(), Vector3::zeros()), 3).unwrap();
        let x = icp_baseline(&m, &scene, &DVector::zeros(6), 200).unwrap();
        assert!(!success_metric(&m, &x, &x_star).unwrap().1);
    }

    #[test]
    fn training_decreases_error_and_registers() {
        let m = model();
        let mut config = RegTrainConfig::spatial();
        config.n_train = 300;
        config.maps = 8;
        let (trained, report) = train_registration(&m, &config).unwrap();
        for w in report.rmse.windows(2) {
            assert!(w[1] < w[0] - 1e-10, "{:?}", report.rmse);
        }
        let settings = default_settings();
        let x = register(&trained, &m, &DVector::zeros(6), &settings).unwrap();
        assert!(success_metric(&m, &x.x, &DVector::zeros(6)).unwrap().0 < 0.01, "{}", x.x);
        let again = register(&trained, &m, &DVector::zeros(6), &settings).unwrap();
        assert_eq!(x, again);
        let capped = register(&trained, &m, &DVector::zeros(6), &InferenceSettings::new(8, 1e-300)).unwrap();
        assert_eq!(capped.iterations, 8);

        let mut one = config.clone();
        one.maps = 1;
        one.n_train = 20;
        assert_eq!(train_registration(&m, &one).unwrap().0.sum().unwrap().len(), 1);
    }

    #[test]
    fn planar_training_with_scaling() {
        let m = shapes::fish_outline(60).unwrap();
        let mut config = RegTrainConfig::planar(m.len());
        config.n_train = 200;
        config.maps = 5;
        let (trained, report) = train_registration(&m, &config).unwrap();
        assert!(report.rmse.last().unwrap() < &report.rmse[0]);
        let mut rng = rng::stream(9, 0, 0);
        let scene = gen_perturbed_scene(&m, &SceneConfig::test_2d(m.len()), &mut rng).unwrap();
        let out = register(&trained, &scene.cloud, &DVector::zeros(3), &InferenceSettings::new(100, 1e-3)).unwrap();
        assert_eq!(out.x.len(), 3);
    }
}
