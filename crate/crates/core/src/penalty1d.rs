//! Estimating a location `x` from a set `X` under one of six penalties
//! `phi`, where the target is `argmin_x sum_j phi(x - x_j)`.
//!
//! A SUM is trained per penalty on sets with known minimizers and compared
//! with the exact minimizers of every penalty on held-out sets.

use nalgebra::DVector;
use rand::Rng as _;
use rayon::prelude::*;

use crate::feature::{build_feature, GridFeature, GridSpec, ResidualModel};
use crate::rng::{self, Rng};
use crate::sum::{
    infer, train_sum, FeatureMap, InferenceSettings, SparseVec, TrainOptions, TrainReport,
    TrainingInstance, UpdateMapSequence,
};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Penalty {
    /// `|x|`
    Abs,
    /// `0.35|x|^4.32 + 0.15|x|^1.23`
    MixedPower,
    /// `(3 + sgn(x)) x^2 / 4`
    Asymmetric,
    /// `|x|^0.7`
    SubLinear,
    /// `1 - exp(-2x^2)`
    WideGaussian,
    /// `1 - exp(-8x^2)`
    NarrowGaussian,
}

impl Penalty {
    pub const ALL: [Penalty; 6] = [
        Penalty::Abs,
        Penalty::MixedPower,
        Penalty::Asymmetric,
        Penalty::SubLinear,
        Penalty::WideGaussian,
        Penalty::NarrowGaussian,
    ];

    pub fn from_beta(beta: usize) -> Result<Self> {
        beta.checked_sub(1)
            .and_then(|i| Self::ALL.get(i).copied())
            .ok_or_else(|| Error::invalid(format!("penalty index must be 1..6, got {beta}")))
    }

    pub fn beta(self) -> usize {
        Self::ALL.iter().position(|&p| p == self).unwrap() + 1
    }

    pub fn is_convex(self) -> bool {
        matches!(self, Penalty::Abs | Penalty::MixedPower | Penalty::Asymmetric)
    }

    pub fn eval(self, x: f64) -> f64 {
        let a = x.abs();
        match self {
            Penalty::Abs => a,
            Penalty::MixedPower => 0.35 * a.powf(4.32) + 0.15 * a.powf(1.23),
            Penalty::Asymmetric => (3.0 + sgn(x)) * x * x / 4.0,
            Penalty::SubLinear => a.powf(0.7),
            Penalty::WideGaussian => 1.0 - (-2.0 * x * x).exp(),
            Penalty::NarrowGaussian => 1.0 - (-8.0 * x * x).exp(),
        }
    }

    /// Derivative, with 0 at the kink of the nonsmooth penalties.
    pub fn derivative(self, x: f64) -> f64 {
        let a = x.abs();
        let s = sgn(x);
        match self {
            Penalty::Abs => s,
            Penalty::MixedPower => s * (0.35 * 4.32 * a.powf(3.32) + 0.15 * 1.23 * a.powf(0.23)),
            Penalty::Asymmetric => (3.0 + s) * x / 2.0,
            Penalty::SubLinear => {
                if a == 0.0 {
                    0.0
                } else {
                    s * 0.7 * a.powf(-0.3)
                }
            }
            Penalty::WideGaussian => 4.0 * x * (-2.0 * x * x).exp(),
            Penalty::NarrowGaussian => 16.0 * x * (-8.0 * x * x).exp(),
        }
    }
}

fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn eval_penalty(beta: usize, x: f64) -> Result<f64> {
    Ok(Penalty::from_beta(beta)?.eval(x))
}

/// `sum_j phi(x - x_j)`.
pub fn total_cost(penalty: Penalty, x: f64, data: &[f64]) -> f64 {
    data.iter().map(|&xj| penalty.eval(x - xj)).sum()
}

const SEARCH_LO: f64 = -1.0;
const SEARCH_HI: f64 = 1.0;
const CONVEX_TOL: f64 = 1e-6;
/// Grid step 1e-4 over [-1, 1].
const GRID_STEPS: usize = 20_000;

/// Grid point `k` of the exhaustive search, `-1 + k * 1e-4`.
pub fn grid_point(k: usize) -> f64 {
    (k as f64 - (GRID_STEPS / 2) as f64) / (GRID_STEPS / 2) as f64
}

/// Exact minimizer of `sum_j phi(x - x_j)` over `[-1, 1]`.
///
/// Convex penalties use golden-section search to `1e-6`; the others return
/// the argmin over the grid `{-1, -1 + 1e-4, ..., 1}` (first index on ties).
pub fn oracle_minimize(penalty: Penalty, data: &[f64]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::invalid("oracle needs a nonempty data set"));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("oracle data".into()));
    }
    Ok(match penalty {
        Penalty::Abs | Penalty::MixedPower | Penalty::Asymmetric => {
            golden_section(|x| total_cost(penalty, x, data), SEARCH_LO, SEARCH_HI, CONVEX_TOL)
        }
        Penalty::SubLinear => grid_point(concave_pieces_argmin(penalty, data)),
        Penalty::WideGaussian => grid_point(gaussian_grid_argmin(2.0, data)),
        Penalty::NarrowGaussian => grid_point(gaussian_grid_argmin(8.0, data)),
    })
}

fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Grid argmin for a penalty that is concave on each side of zero.
///
/// Between consecutive data points the total cost is concave, so its minimum
/// over any set of grid points there is attained at the outermost ones. Only
/// grid points adjacent to data points and the two ends need evaluating.
fn concave_pieces_argmin(penalty: Penalty, data: &[f64]) -> usize {
    let half = (GRID_STEPS / 2) as f64;
    let mut candidates = vec![0, GRID_STEPS];
    for &xj in data {
        let pos = (xj + 1.0) * half;
        if pos.is_nan() {
            continue;
        }
        let base = pos.floor().clamp(0.0, GRID_STEPS as f64) as usize;
        for k in base.saturating_sub(1)..=(base + 2).min(GRID_STEPS) {
            candidates.push(k);
        }
    }
    candidates.sort_unstable();
    candidates.dedup();
    let mut best = (f64::INFINITY, 0);
    for k in candidates {
        let cost = total_cost(penalty, grid_point(k), data);
        if cost < best.0 {
            best = (cost, k);
        }
    }
    best.1
}

/// Grid argmin of `sum_j (1 - exp(-a (x - x_j)^2))`.
///
/// Each term is advanced along the grid by the exact recurrence
/// `t(x + s) = t(x) q(x)`, `q(x + s) = q(x) exp(-2 a s^2)`, re-anchored with a
/// direct evaluation every `ANCHOR` steps to bound rounding drift.
fn gaussian_grid_argmin(a: f64, data: &[f64]) -> usize {
    const ANCHOR: usize = 250;
    let step = 1.0 / (GRID_STEPS / 2) as f64;
    let c = (-2.0 * a * step * step).exp();
    let n = data.len() as f64;
    let mut terms = vec![0.0; data.len()];
    let mut ratios = vec![0.0; data.len()];
    let mut best = (f64::INFINITY, 0);
    for k in 0..=GRID_STEPS {
        if k % ANCHOR == 0 {
            let x = grid_point(k);
            for ((t, q), &xj) in terms.iter_mut().zip(ratios.iter_mut()).zip(data) {
                let u = x - xj;
                *t = (-a * u * u).exp();
                *q = (-a * (2.0 * u * step + step * step)).exp();
            }
        }
        let cost = n - terms.iter().sum::<f64>();
        if cost < best.0 {
            best = (cost, k);
        }
        for (t, q) in terms.iter_mut().zip(ratios.iter_mut()) {
            *t *= *q;
            *q *= c;
        }
    }
    best.1
}

/// Residuals `g_j(x) = x - x_j` with unit Jacobian.
#[derive(Clone, Debug)]
pub struct ShiftResiduals {
    pub data: Vec<f64>,
}

impl ResidualModel for ShiftResiduals {
    fn param_dim(&self) -> usize {
        1
    }
    fn residual_dim(&self) -> usize {
        1
    }
    fn num_terms(&self) -> usize {
        self.data.len()
    }
    fn evaluate(&self, j: usize, x: &[f64], g: &mut [f64], jac: &mut [f64]) -> bool {
        g[0] = x[0] - self.data[j];
        jac[0] = 1.0;
        true
    }
}

/// The 40-bin grid over `[-2, 2]` used for this task.
pub fn default_grid() -> GridSpec {
    GridSpec::uniform(1, 40, -2.0, 2.0).expect("static grid is valid")
}

/// `(1/J) sum_j e_{bin(x - x_j)}`.
pub fn feature_1d(x: f64, data: &[f64], grid: &GridSpec) -> Result<SparseVec> {
    build_feature(
        &[x],
        &ShiftResiduals {
            data: data.to_vec(),
        },
        grid,
    )
}

/// One estimation problem: data, start at 0, and the oracle minimizer.
#[derive(Clone, Debug)]
pub struct Instance1D {
    pub data: Vec<f64>,
    pub x0: f64,
    pub x_star: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table1Config {
    pub n_train: usize,
    pub n_test: usize,
    pub max_maps: usize,
    pub lambda: f64,
    pub early_stop_rmse_delta: f64,
    pub epsilon: f64,
    pub max_iter: usize,
    /// Inclusive range of set sizes `J`.
    pub set_size: (usize, usize),
    pub seed: u64,
}

impl Default for Table1Config {
    fn default() -> Self {
        Self {
            n_train: 10_000,
            n_test: 1_000,
            max_maps: 15,
            lambda: 1e-5,
            early_stop_rmse_delta: 0.005,
            epsilon: 1e-3,
            max_iter: 100,
            set_size: (10, 100),
            seed: 0,
        }
    }
}

const DOMAIN_TRAIN: u64 = 0x1d_0001;
const DOMAIN_TEST: u64 = 0x1d_0002;

fn sample_set(rng: &mut Rng, set_size: (usize, usize)) -> Vec<f64> {
    let j = rng.random_range(set_size.0..=set_size.1);
    (0..j).map(|_| rng.random_range(-1.0..=1.0)).collect()
}

/// Draws `n` data sets (uniform on `[-1, 1]`, `J` uniform in `set_size`) and
/// labels them with the oracle minimizer of `penalty`.
pub fn generate_instances(
    penalty: Penalty,
    n: usize,
    set_size: (usize, usize),
    seed: u64,
    domain: u64,
) -> Result<Vec<Instance1D>> {
    if set_size.0 == 0 || set_size.0 > set_size.1 {
        return Err(Error::invalid(format!("bad set size range {set_size:?}")));
    }
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::stream(seed, domain, i as u64);
            let data = sample_set(&mut rng, set_size);
            let x_star = oracle_minimize(penalty, &data)?;
            Ok(Instance1D {
                data,
                x0: 0.0,
                x_star,
            })
        })
        .collect()
}

fn feature_map(data: &[f64]) -> GridFeature<ShiftResiduals> {
    GridFeature::new(
        ShiftResiduals {
            data: data.to_vec(),
        },
        default_grid(),
    )
    .expect("shift residuals match the 1D grid")
}

/// Number of leading maps kept: maps are added while each improves the
/// training RMSE by more than `delta`, and the first one that does not is
/// kept as the final map.
pub fn select_map_count(rmse: &[f64], delta: f64) -> usize {
    let maps = rmse.len().saturating_sub(1);
    rmse.windows(2)
        .position(|w| w[0] - w[1] <= delta)
        .map_or(maps, |t| t + 1)
        .max(1)
}

/// A trained SUM for one penalty.
#[derive(Clone, Debug)]
pub struct PenaltySum {
    pub penalty: Penalty,
    /// All trained maps.
    pub full: UpdateMapSequence,
    /// Maps kept for testing.
    pub sum: UpdateMapSequence,
    pub report: TrainReport,
}

pub fn train_penalty_sum(
    penalty: Penalty,
    instances: &[Instance1D],
    config: &Table1Config,
) -> Result<PenaltySum> {
    let training: Vec<_> = instances
        .iter()
        .map(|inst| {
            TrainingInstance::new(
                DVector::from_element(1, inst.x0),
                DVector::from_element(1, inst.x_star),
                feature_map(&inst.data),
            )
        })
        .collect();
    let (full, report) = train_sum(&training, &TrainOptions::new(config.max_maps, config.lambda))?;
    let kept = select_map_count(&report.rmse, config.early_stop_rmse_delta);
    let sum = full.truncated(kept)?;
    Ok(PenaltySum {
        penalty,
        full,
        sum,
        report,
    })
}

/// Runs a trained SUM on one data set from `x0 = 0`.
pub fn solve_with_sum(
    sum: &UpdateMapSequence,
    data: &[f64],
    settings: &InferenceSettings,
) -> Result<f64> {
    let features = feature_map(data);
    debug_assert_eq!(features.feature_dim(), sum.feature_dim());
    Ok(infer(&DVector::zeros(1), &features, sum, settings)?.x[0])
}

/// Fraction of bins with `|center|` in `[0.1, 1]` where the sign of the
/// map entry matches the sign of `phi'(center)`.
pub fn gradient_sign_agreement(penalty: Penalty, map: &nalgebra::DMatrix<f64>) -> f64 {
    let grid = default_grid();
    let axis = grid.axis(0);
    let mut total = 0;
    let mut agree = 0;
    for k in 1..=axis.bins {
        let c = axis.center(k);
        if !(0.1..=1.0).contains(&c.abs()) {
            continue;
        }
        total += 1;
        if sgn(map[(0, k - 1)]) == sgn(penalty.derivative(c)) {
            agree += 1;
        }
    }
    agree as f64 / total as f64
}

/// Mean absolute error table: rows are the penalty generating ground truth,
/// columns the oracle of each penalty followed by the trained SUM.
#[derive(Clone, Debug)]
pub struct Table1 {
    pub mae: [[f64; 7]; 6],
    pub maps_used: [usize; 6],
    pub training_rmse: Vec<Vec<f64>>,
    pub last_maps: Vec<nalgebra::DMatrix<f64>>,
}

impl Table1 {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("beta,oracle_1,oracle_2,oracle_3,oracle_4,oracle_5,oracle_6,sum_beta\n");
        for (b, row) in self.mae.iter().enumerate() {
            out.push_str(&(b + 1).to_string());
            for v in row {
                out.push_str(&format!(",{v:.6}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Trains and evaluates the SUM of `penalty`, filling one row of the table.
pub fn run_table1_row(
    penalty: Penalty,
    config: &Table1Config,
) -> Result<(PenaltySum, [f64; 7])> {
    let beta = penalty.beta() as u64;
    let train = generate_instances(
        penalty,
        config.n_train,
        config.set_size,
        config.seed,
        DOMAIN_TRAIN + 16 * beta,
    )?;
    let trained = train_penalty_sum(penalty, &train, config)?;

    let test = generate_instances(
        penalty,
        config.n_test,
        config.set_size,
        config.seed,
        DOMAIN_TEST + 16 * beta,
    )?;
    let settings = InferenceSettings::new(config.max_iter.max(trained.sum.len()), config.epsilon);
    let n = test.len().max(1) as f64;

    let mut row = [0.0; 7];
    for (col, &other) in Penalty::ALL.iter().enumerate() {
        let err: Result<Vec<f64>> = test
            .par_iter()
            .map(|inst| {
                let est = if other == penalty {
                    inst.x_star
                } else {
                    oracle_minimize(other, &inst.data)?
                };
                Ok((est - inst.x_star).abs())
            })
            .collect();
        row[col] = err?.iter().sum::<f64>() / n;
    }
    let err: Result<Vec<f64>> = test
        .par_iter()
        .map(|inst| Ok((solve_with_sum(&trained.sum, &inst.data, &settings)? - inst.x_star).abs()))
        .collect();
    row[6] = err?.iter().sum::<f64>() / n;
    Ok((trained, row))
}

/// Builds the full 6 x 7 table.
pub fn run_table1(config: &Table1Config) -> Result<Table1> {
    let mut mae = [[0.0; 7]; 6];
    let mut maps_used = [0; 6];
    let mut training_rmse = Vec::new();
    let mut last_maps = Vec::new();
    for (b, &penalty) in Penalty::ALL.iter().enumerate() {
        let (trained, row) = run_table1_row(penalty, config)?;
        mae[b] = row;
        maps_used[b] = trained.sum.len();
        training_rmse.push(trained.report.rmse.clone());
        last_maps.push(trained.sum.last_map().clone());
    }
    Ok(Table1 {
        mae,
        maps_used,
        training_rmse,
        last_maps,
    })
}
