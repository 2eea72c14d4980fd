//! Camera pose from 2D-3D matches with outliers: a learned SUM over a
//! homogeneous 3x4 pose picks the inliers, which are then re-fit linearly.

mod generate;
pub mod io;
mod residual;

use std::time::Instant;

use nalgebra::{DMatrix, DVector, Matrix3, Matrix3x4, Matrix4, UnitQuaternion, Vector2, Vector3};
use rayon::prelude::*;

pub use generate::{gen_pnp_instance, random_rotation, sample_shape, PnpConfig, PnpInstance, ShapeKind};
pub use residual::{
    geometric_residual, pnp_feature, residual_grid, PnpFeatureKind, PnpFeatures, Residual, MIN_DEPTH, PARAMS,
    RESIDUAL_BINS,
};

use crate::rng;
use crate::sum::{infer, train_sum, InferenceSettings, TrainOptions, TrainReport, TrainingInstance, UpdateMapSequence};
use crate::{Error, Result};

pub const MIN_CORRESPONDENCES: usize = 6;
pub const DEFAULT_INLIER_PX: f64 = 10.0;
/// Rotation error counted as a success in sweeps.
pub const SUCCESS_DEG: f64 = 5.0;

/// Matched image points (pixels) and world points under intrinsics `K`.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrespondenceSet {
    image: Vec<Vector2<f64>>,
    world: Vec<Vector3<f64>>,
    intrinsics: Matrix3<f64>,
}

impl CorrespondenceSet {
    pub fn new(image: Vec<Vector2<f64>>, world: Vec<Vector3<f64>>, intrinsics: Matrix3<f64>) -> Result<Self> {
        Error::check_dim("world points", image.len(), world.len())?;
        if image.len() < MIN_CORRESPONDENCES {
            return Err(Error::invalid(format!(
                "need at least {MIN_CORRESPONDENCES} correspondences, got {}",
                image.len()
            )));
        }
        let k = &intrinsics;
        if k[(1, 0)] != 0.0 || k[(2, 0)] != 0.0 || k[(2, 1)] != 0.0 {
            return Err(Error::invalid("intrinsics must be upper triangular"));
        }
        if !(k[(0, 0)] > 0.0 && k[(1, 1)] > 0.0 && k[(2, 2)] != 0.0) || k.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("intrinsics need positive focal entries"));
        }
        if image.iter().any(|p| !p.iter().all(|v| v.is_finite())) || world.iter().any(|s| !s.iter().all(|v| v.is_finite())) {
            return Err(Error::NonFinite("correspondences".into()));
        }
        Ok(Self { image, world, intrinsics })
    }

    pub fn len(&self) -> usize {
        self.image.len()
    }

    pub fn is_empty(&self) -> bool {
        self.image.is_empty()
    }

    pub fn image(&self) -> &[Vector2<f64>] {
        &self.image
    }

    pub fn world(&self) -> &[Vector3<f64>] {
        &self.world
    }

    pub fn intrinsics(&self) -> &Matrix3<f64> {
        &self.intrinsics
    }
}

/// Calibrated, box-normalized correspondences.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedSet {
    pub image: Vec<Vector2<f64>>,
    pub world: Vec<Vector3<f64>>,
}

impl NormalizedSet {
    pub fn len(&self) -> usize {
        self.image.len()
    }

    pub fn is_empty(&self) -> bool {
        self.image.is_empty()
    }
}

/// Maps between pixel/world coordinates and the normalized frame:
/// `q = A K^-1 p` and `s' = B s` with similarities `A`, `B`.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalization {
    pub intrinsics: Matrix3<f64>,
    pub image: Matrix3<f64>,
    pub world: Matrix4<f64>,
}

/// Center and isotropic scale taking the bounding box into `[-0.5, 0.5]^d`
/// with its longest side spanning the full interval.
fn box_fit<const D: usize>(points: impl Iterator<Item = nalgebra::SVector<f64, D>>) -> Result<(nalgebra::SVector<f64, D>, f64)> {
    let mut lo = nalgebra::SVector::<f64, D>::repeat(f64::INFINITY);
    let mut hi = nalgebra::SVector::<f64, D>::repeat(f64::NEG_INFINITY);
    for p in points {
        lo = lo.inf(&p);
        hi = hi.sup(&p);
    }
    let side = (hi - lo).max();
    let size = lo.amax().max(hi.amax()).max(1.0);
    if !(side > 1e-12 * size) {
        return Err(Error::Degenerate("all points coincide".into()));
    }
    Ok(((lo + hi) / 2.0, 1.0 / side))
}

pub fn normalize_inputs(set: &CorrespondenceSet) -> Result<(NormalizedSet, Normalization)> {
    let k = set.intrinsics();
    let k_inv = k.try_inverse().ok_or_else(|| Error::Degenerate("intrinsics not invertible".into()))?;
    let calibrated: Vec<Vector2<f64>> = set
        .image()
        .iter()
        .map(|p| {
            let c = k_inv * p.push(1.0);
            Vector2::new(c.x / c.z, c.y / c.z)
        })
        .collect();
    let (mi, a) = box_fit(calibrated.iter().copied())?;
    let (mw, b) = box_fit(set.world().iter().copied())?;
    let image = Matrix3::new(a, 0.0, -a * mi.x, 0.0, a, -a * mi.y, 0.0, 0.0, 1.0);
    let mut world = Matrix4::identity() * b;
    world[(3, 3)] = 1.0;
    world.fixed_view_mut::<3, 1>(0, 3).copy_from(&(-b * mw));
    let normalized = NormalizedSet {
        image: calibrated.iter().map(|c| (c - mi) * a).collect(),
        world: set.world().iter().map(|s| (s - mw) * b).collect(),
    };
    Ok((
        normalized,
        Normalization {
            intrinsics: *k,
            image,
            world,
        },
    ))
}

impl Normalization {
    pub fn denormalize_image(&self, q: &Vector2<f64>) -> Vector2<f64> {
        let a_inv = self.image.try_inverse().expect("similarity");
        let p = self.intrinsics * (a_inv * q.push(1.0));
        Vector2::new(p.x / p.z, p.y / p.z)
    }

    pub fn denormalize_world(&self, s: &Vector3<f64>) -> Vector3<f64> {
        let b_inv = self.world.try_inverse().expect("similarity");
        (b_inv * s.push(1.0)).xyz()
    }

    /// Calibrated pose `[R|t]` (up to scale) to the normalized frame,
    /// unit Frobenius norm.
    pub fn to_normalized_pose(&self, pose: &Matrix3x4<f64>) -> Matrix3x4<f64> {
        let b_inv = self.world.try_inverse().expect("similarity");
        unit_pose(&(self.image * pose * b_inv))
    }

    /// Inverse of [`Normalization::to_normalized_pose`].
    pub fn to_calibrated_pose(&self, pose: &Matrix3x4<f64>) -> Matrix3x4<f64> {
        let a_inv = self.image.try_inverse().expect("similarity");
        unit_pose(&(a_inv * pose * self.world))
    }
}

pub fn unit_pose(m: &Matrix3x4<f64>) -> Matrix3x4<f64> {
    let n = m.norm();
    if n > 0.0 {
        m / n
    } else {
        *m
    }
}

/// Row-major parameters `(x_1, x_2, x_3)` of a pose matrix.
pub fn pose_params(m: &Matrix3x4<f64>) -> DVector<f64> {
    DVector::from_iterator(PARAMS, m.transpose().iter().copied())
}

pub fn pose_from_params(x: &DVector<f64>) -> Result<Matrix3x4<f64>> {
    Error::check_dim("pose parameters", PARAMS, x.len())?;
    Ok(Matrix3x4::from_row_slice(x.as_slice()))
}

/// Starting pose: every point at unit depth projecting to the origin.
pub fn initial_pose() -> DVector<f64> {
    let mut x = DVector::zeros(PARAMS);
    x[11] = 1.0;
    x
}

/// Flips the sign of a homogeneous pose so that most `points` lie in front.
pub fn orient_pose(m: &Matrix3x4<f64>, points: &[Vector3<f64>]) -> Matrix3x4<f64> {
    let row = m.row(2);
    let front = points
        .iter()
        .filter(|s| row.dot(&s.push(1.0).transpose()) > 0.0)
        .count();
    if 2 * front < points.len() {
        -m
    } else {
        *m
    }
}

/// Nearest rotation to the left 3x3 block (determinant fixed to +1 by
/// flipping the smallest singular direction) and the last column divided by
/// the mean singular value. The pose must already face the points.
pub fn project_to_pose(m: &Matrix3x4<f64>) -> Result<(Matrix3<f64>, Vector3<f64>)> {
    let block: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
    let svd = block.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let sv = svd.singular_values;
    let scale = sv.mean();
    if !(sv.min() > 1e-12 * sv.max().max(1e-300)) || !scale.is_finite() {
        return Err(Error::Degenerate("pose rotation block is singular".into()));
    }
    // Order columns by singular value so the flip hits the smallest.
    let small = sv.imin();
    let d = (u * v_t).determinant().signum();
    let mut diag = Vector3::repeat(1.0);
    diag[small] = d;
    let r = u * Matrix3::from_diagonal(&diag) * v_t;
    Ok((r, m.column(3) / scale))
}

/// Angle of `R_true^T R_est` in degrees.
pub fn rotation_error(r_true: &Matrix3<f64>, r_est: &Matrix3<f64>) -> f64 {
    let c = (((r_true.transpose() * r_est).trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    c.acos().to_degrees()
}

/// Pixel reprojection error of each correspondence under a calibrated pose;
/// points behind the camera get infinity.
pub fn reprojection_errors(pose: &Matrix3x4<f64>, set: &CorrespondenceSet) -> Vec<f64> {
    let p = set.intrinsics() * pose;
    set.image()
        .iter()
        .zip(set.world())
        .map(|(q, s)| {
            let c = p * s.push(1.0);
            let depth = pose.row(2).dot(&s.push(1.0).transpose());
            if depth <= 0.0 || c.z == 0.0 {
                f64::INFINITY
            } else {
                (Vector2::new(c.x / c.z, c.y / c.z) - q).norm()
            }
        })
        .collect()
}

/// Indices whose reprojection error is below `threshold_px`.
pub fn select_inliers(pose: &Matrix3x4<f64>, set: &CorrespondenceSet, threshold_px: f64) -> Vec<usize> {
    let pose = orient_pose(pose, set.world());
    reprojection_errors(&pose, set)
        .iter()
        .enumerate()
        .filter(|(_, &e)| e < threshold_px || (threshold_px == f64::INFINITY))
        .map(|(i, _)| i)
        .collect()
}

/// Direct linear transform: the unit 3x4 `X` minimizing the algebraic error
/// `q x (X s)` over the given matches.
pub fn dlt(image: &[Vector2<f64>], world: &[Vector3<f64>]) -> Result<Matrix3x4<f64>> {
    Error::check_dim("world points", image.len(), world.len())?;
    if image.len() < MIN_CORRESPONDENCES {
        return Err(Error::invalid(format!("DLT needs at least {MIN_CORRESPONDENCES} matches")));
    }
    let mut a = DMatrix::zeros(2 * image.len(), PARAMS);
    for (j, (q, s)) in image.iter().zip(world).enumerate() {
        let sh = s.push(1.0);
        for c in 0..4 {
            a[(2 * j, c)] = sh[c];
            a[(2 * j, 8 + c)] = -q.x * sh[c];
            a[(2 * j + 1, 4 + c)] = sh[c];
            a[(2 * j + 1, 8 + c)] = -q.y * sh[c];
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| Error::Numerical("DLT SVD failed".into()))?;
    let k = svd.singular_values.imin();
    let row: Vec<f64> = v_t.row(k).iter().copied().collect();
    Ok(unit_pose(&Matrix3x4::from_row_slice(&row)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PnpTrainConfig {
    pub n_train: usize,
    pub maps: usize,
    pub lambda: f64,
    pub kind: PnpFeatureKind,
    pub instance: PnpConfig,
    pub seed: u64,
}

impl PnpTrainConfig {
    /// 5000 instances, 30 maps, `lambda = 1e-4`.
    pub fn desk() -> Self {
        Self {
            n_train: 5000,
            maps: 30,
            lambda: 1e-4,
            kind: PnpFeatureKind::Compact,
            instance: PnpConfig::training(),
            seed: 0,
        }
    }

    /// 50000 instances.
    pub fn full() -> Self {
        Self {
            n_train: 50_000,
            ..Self::desk()
        }
    }
}

const DOMAIN_TRAIN: u64 = 0x9a_0001;
const DOMAIN_TEST: u64 = 0x9a_0002;

/// Ground-truth parameters of an instance in its normalized frame.
pub fn normalized_truth(inst: &PnpInstance, norm: &Normalization) -> DVector<f64> {
    let mut pose = Matrix3x4::zeros();
    pose.fixed_view_mut::<3, 3>(0, 0).copy_from(&inst.rotation);
    pose.set_column(3, &inst.translation);
    pose_params(&norm.to_normalized_pose(&pose))
}

pub fn train_pnp(config: &PnpTrainConfig) -> Result<(UpdateMapSequence, TrainReport)> {
    if config.n_train == 0 || config.maps == 0 {
        return Err(Error::invalid("need at least one training instance and one map"));
    }
    let data: Vec<(NormalizedSet, DVector<f64>)> = (0..config.n_train)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::stream(config.seed, DOMAIN_TRAIN, i as u64);
            let inst = gen_pnp_instance(&config.instance, &mut rng)?;
            let (set, norm) = normalize_inputs(&inst.set)?;
            let truth = normalized_truth(&inst, &norm);
            Ok((set, truth))
        })
        .collect::<Result<_>>()?;
    let instances: Vec<_> = data
        .iter()
        .map(|(set, truth)| TrainingInstance::new(initial_pose(), truth.clone(), PnpFeatures { set, kind: config.kind }))
        .collect();
    train_sum(&instances, &TrainOptions::new(config.maps, config.lambda))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PnpSolveOptions {
    pub kind: PnpFeatureKind,
    pub settings: InferenceSettings,
    pub threshold_px: f64,
    /// Select-and-refit rounds after the learned estimate; 0 keeps it.
    pub refit_rounds: usize,
}

impl Default for PnpSolveOptions {
    fn default() -> Self {
        Self {
            kind: PnpFeatureKind::Compact,
            settings: InferenceSettings::new(100, 1e-3),
            threshold_px: DEFAULT_INLIER_PX,
            refit_rounds: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PnpSolution {
    /// Learned estimate in the normalized frame.
    pub x: DVector<f64>,
    pub iterations: usize,
    /// Learned estimate as a calibrated pose, facing the points.
    pub do_pose: Matrix3x4<f64>,
    pub do_rotation: Matrix3<f64>,
    /// Final pose (after refitting when it happened).
    pub pose: Matrix3x4<f64>,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub inliers: Vec<usize>,
    pub refit: bool,
}

pub fn solve_pnp(set: &CorrespondenceSet, sum: &UpdateMapSequence, options: &PnpSolveOptions) -> Result<PnpSolution> {
    let (normalized, norm) = normalize_inputs(set)?;
    let features = PnpFeatures {
        set: &normalized,
        kind: options.kind,
    };
    let out = infer(&initial_pose(), &features, sum, &options.settings)?;
    let do_pose = orient_pose(&norm.to_calibrated_pose(&pose_from_params(&out.x)?), set.world());
    let (do_rotation, _) = project_to_pose(&do_pose)?;

    let mut pose = do_pose;
    let mut inliers = select_inliers(&pose, set, options.threshold_px);
    let mut refit = false;
    for _ in 0..options.refit_rounds {
        if inliers.len() < MIN_CORRESPONDENCES {
            break;
        }
        let q: Vec<Vector2<f64>> = inliers.iter().map(|&i| normalized.image[i]).collect();
        let s: Vec<Vector3<f64>> = inliers.iter().map(|&i| normalized.world[i]).collect();
        let fitted = dlt(&q, &s)?;
        let inlier_world: Vec<Vector3<f64>> = inliers.iter().map(|&i| set.world()[i]).collect();
        let candidate = orient_pose(&norm.to_calibrated_pose(&fitted), &inlier_world);
        let next = select_inliers(&candidate, set, options.threshold_px);
        pose = candidate;
        refit = true;
        if next == inliers || next.len() < MIN_CORRESPONDENCES {
            break;
        }
        inliers = next;
    }
    let (rotation, translation) = project_to_pose(&pose)?;
    Ok(PnpSolution {
        x: out.x,
        iterations: out.iterations,
        do_pose,
        do_rotation,
        pose,
        rotation,
        translation,
        inliers,
        refit,
    })
}

/// Quantity varied in a sweep; the others keep their test defaults.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PnpVary {
    Outliers,
    Noise,
    Points,
}

impl PnpVary {
    pub fn name(self) -> &'static str {
        match self {
            PnpVary::Outliers => "outliers",
            PnpVary::Noise => "noise",
            PnpVary::Points => "points",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "outliers" => Ok(PnpVary::Outliers),
            "noise" => Ok(PnpVary::Noise),
            "points" => Ok(PnpVary::Points),
            other => Err(Error::invalid(format!("unknown PnP sweep axis '{other}'"))),
        }
    }

    pub fn default_values(self) -> Vec<f64> {
        match self {
            PnpVary::Outliers => (0..=9).map(|k| 0.1 * k as f64).collect(),
            PnpVary::Noise => (0..=5).map(|k| 2.0 * k as f64).collect(),
            PnpVary::Points => vec![200.0, 400.0, 800.0, 1200.0, 1600.0, 2000.0],
        }
    }

    pub fn apply(self, base: &PnpConfig, value: f64) -> PnpConfig {
        let mut c = base.clone();
        match self {
            PnpVary::Outliers => c.outlier_fraction = (value, value),
            PnpVary::Noise => c.noise_sd = value,
            PnpVary::Points => c.points = (value as usize, value as usize),
        }
        c
    }
}

/// One trial's outcome against the generator's pose.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PnpTrial {
    pub do_rotation_error: f64,
    pub rotation_error: f64,
    /// Mean pixel error of the true inliers under the final pose.
    pub inlier_reprojection: f64,
    pub seconds: f64,
}

pub fn run_pnp_trial(
    sum: &UpdateMapSequence,
    config: &PnpConfig,
    options: &PnpSolveOptions,
    rng: &mut rng::Rng,
) -> Result<PnpTrial> {
    let inst = gen_pnp_instance(config, rng)?;
    let start = Instant::now();
    let sol = solve_pnp(&inst.set, sum, options)?;
    let seconds = start.elapsed().as_secs_f64();
    let errs = reprojection_errors(&sol.pose, &inst.set);
    let (sum_err, count) = errs
        .iter()
        .zip(&inst.outliers)
        .filter(|(_, &o)| !o)
        .fold((0.0, 0usize), |(s, n), (e, _)| (s + e, n + 1));
    Ok(PnpTrial {
        do_rotation_error: rotation_error(&inst.rotation, &sol.do_rotation),
        rotation_error: rotation_error(&inst.rotation, &sol.rotation),
        inlier_reprojection: if count > 0 { sum_err / count as f64 } else { 0.0 },
        seconds,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PnpSweepPoint {
    pub value: f64,
    pub trials: usize,
    /// Trials with final rotation error below `SUCCESS_DEG`.
    pub successes: usize,
    pub do_mean_rotation_error: f64,
    pub mean_rotation_error: f64,
    pub median_rotation_error: f64,
    pub mean_inlier_reprojection: f64,
    pub seconds: f64,
}

impl PnpSweepPoint {
    pub fn success_rate(&self) -> f64 {
        self.successes as f64 / self.trials.max(1) as f64
    }

    pub fn from_trials(value: f64, runs: &[PnpTrial]) -> Self {
        let n = runs.len().max(1) as f64;
        let mut errs: Vec<f64> = runs.iter().map(|r| r.rotation_error).collect();
        errs.sort_by(f64::total_cmp);
        let median = match errs.len() {
            0 => 0.0,
            m if m % 2 == 1 => errs[m / 2],
            m => 0.5 * (errs[m / 2 - 1] + errs[m / 2]),
        };
        PnpSweepPoint {
            value,
            trials: runs.len(),
            successes: runs.iter().filter(|r| r.rotation_error < SUCCESS_DEG).count(),
            do_mean_rotation_error: runs.iter().map(|r| r.do_rotation_error).sum::<f64>() / n,
            mean_rotation_error: runs.iter().map(|r| r.rotation_error).sum::<f64>() / n,
            median_rotation_error: median,
            mean_inlier_reprojection: runs.iter().map(|r| r.inlier_reprojection).sum::<f64>() / n,
            seconds: runs.iter().map(|r| r.seconds).sum(),
        }
    }
}

/// Per-trial results for each value of `vary`.
pub fn pnp_sweep_trials(
    sum: &UpdateMapSequence,
    base: &PnpConfig,
    vary: PnpVary,
    values: &[f64],
    trials: usize,
    options: &PnpSolveOptions,
    seed: u64,
) -> Result<Vec<Vec<PnpTrial>>> {
    values
        .iter()
        .enumerate()
        .map(|(k, &value)| {
            let config = vary.apply(base, value);
            (0..trials)
                .into_par_iter()
                .map(|i| {
                    let mut rng = rng::stream(seed, DOMAIN_TEST + k as u64, i as u64);
                    run_pnp_trial(sum, &config, options, &mut rng)
                })
                .collect()
        })
        .collect()
}

pub fn run_pnp_sweep(
    sum: &UpdateMapSequence,
    base: &PnpConfig,
    vary: PnpVary,
    values: &[f64],
    trials: usize,
    options: &PnpSolveOptions,
    seed: u64,
) -> Result<Vec<PnpSweepPoint>> {
    let runs = pnp_sweep_trials(sum, base, vary, values, trials, options, seed)?;
    Ok(values
        .iter()
        .zip(&runs)
        .map(|(&v, r)| PnpSweepPoint::from_trials(v, r))
        .collect())
}

/// Rotation angle via unit quaternions, for cross-checking.
pub fn quaternion_angle_deg(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let qa = UnitQuaternion::from_matrix(a);
    let qb = UnitQuaternion::from_matrix(b);
    qa.angle_to(&qb).to_degrees()
}
