//! Task dispatch for `disco run` and the sweep subcommands.
//!
//! Files written next to the result CSV `dir/stem.csv`:
//! - `stem.config.json`: the resolved configuration;
//! - `stem.timing.csv`: wall times keyed like the result rows;
//! - `stem.training.csv`: `model,map,rmse` for every SUM trained here,
//!   including maps dropped by early stopping;
//! - `stem.<model>.dosum`: those SUMs, reusable through the `sum` keys.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use disco_core::denoise::{self, GrayImage, NoiseType, TrainMode};
use disco_core::penalty1d::{run_table1_row, Penalty, Table1Config};
use disco_core::pnp::{self, PnpConfig, PnpFeatureKind, PnpSolveOptions, PnpSweepPoint, PnpTrainConfig, PnpVary};
use disco_core::registration::{self as reg, Perturbation, PointCloud, RegTrainConfig, RegistrationModel, SceneConfig, SweepPoint};
use disco_core::sum::{load_sum, save_sum, InferenceSettings, UpdateMapSequence};
use disco_core::Error as CoreError;

use crate::config::{DenoiseParams, ExperimentConfig, OneDParams, PnpParams, RegParams, Task};
use crate::error::{CliError, CliResult};
use crate::results::{sidecar, write_file, ResultTable};

/// Seed of the procedural registration model; the shape is fixed, not part
/// of an experiment's randomness.
pub const MODEL_SEED: u64 = 7;
const MODEL_DENSE_POINTS: usize = 20_000;

#[derive(Debug)]
pub struct ExperimentOutput {
    pub config: ExperimentConfig,
    pub results: PathBuf,
    /// Long-format rows; empty for the 1D table.
    pub table: ResultTable,
    /// One line per sweep value or table row.
    pub summary: Vec<String>,
}

#[derive(Default)]
struct Artifacts {
    csv: String,
    timing: String,
    table: ResultTable,
    summary: Vec<String>,
    /// Name, SUM to save and its full training curve.
    trained: Vec<(String, UpdateMapSequence, Vec<f64>)>,
}

impl Artifacts {
    fn from_table(table: ResultTable, summary: Vec<String>, trained: Vec<(String, UpdateMapSequence)>) -> Self {
        let trained = trained
            .into_iter()
            .map(|(name, sum)| {
                let rmse = sum.training_rmse().to_vec();
                (name, sum, rmse)
            })
            .collect();
        Self {
            csv: table.to_csv(),
            timing: table.timing_csv(),
            table,
            summary,
            trained,
        }
    }
}

pub fn run_experiment(config: &ExperimentConfig) -> CliResult<ExperimentOutput> {
    let c = config.resolve()?;
    let out = c.output.clone().expect("resolved config has an output");
    write_file(&sidecar(&out, "config.json"), c.to_json())?;

    let art = match c.task {
        Task::OneD => one_d(c.one_d.as_ref().unwrap(), c.seed)?,
        Task::Reg2d | Task::Reg3d => registration(&c, c.registration.as_ref().unwrap())?,
        Task::Pnp => pnp_sweep(&c, c.pnp.as_ref().unwrap())?,
        Task::Denoise => denoise_sweep(&c, c.denoise.as_ref().unwrap())?,
    };

    write_file(&out, &art.csv)?;
    write_file(&sidecar(&out, "timing.csv"), &art.timing)?;
    if !art.trained.is_empty() {
        let mut s = String::from("model,map,rmse\n");
        for (name, sum, rmse) in &art.trained {
            for (t, r) in rmse.iter().enumerate() {
                let _ = writeln!(s, "{name},{t},{r}");
            }
            save_sum(sum, sidecar(&out, &format!("{name}.dosum")))?;
        }
        write_file(&sidecar(&out, "training.csv"), s)?;
    }
    Ok(ExperimentOutput {
        config: c,
        results: out,
        table: art.table,
        summary: art.summary,
    })
}

fn one_d(p: &OneDParams, seed: u64) -> CliResult<Artifacts> {
    let config = Table1Config {
        n_train: p.n_train,
        n_test: p.n_test,
        max_maps: p.max_maps,
        lambda: p.lambda,
        early_stop_rmse_delta: p.early_stop_delta,
        epsilon: p.epsilon,
        max_iter: p.max_iter,
        set_size: (p.set_size[0], p.set_size[1]),
        seed,
    };
    let mut art = Artifacts {
        csv: String::from("beta,oracle_1,oracle_2,oracle_3,oracle_4,oracle_5,oracle_6,sum_beta\n"),
        timing: String::from("beta,wall_ms\n"),
        ..Default::default()
    };
    for &beta in &p.betas {
        let start = Instant::now();
        let (trained, row) = run_table1_row(Penalty::from_beta(beta)?, &config)?;
        let ms = start.elapsed().as_secs_f64() * 1e3;
        art.csv.push_str(&beta.to_string());
        for v in row {
            let _ = write!(art.csv, ",{v:.6}");
        }
        art.csv.push('\n');
        let _ = writeln!(art.timing, "{beta},{ms:.3}");
        let best_other = (0..6).filter(|&k| k != beta - 1).map(|k| row[k]).fold(f64::INFINITY, f64::min);
        art.summary.push(format!(
            "beta {beta}: SUM MAE {:.4} ({} maps), best other oracle {best_other:.4}",
            row[6],
            trained.sum.len()
        ));
        art.trained.push((format!("beta{beta}"), trained.sum, trained.report.rmse));
    }
    Ok(art)
}

/// The procedural model used when no model file is given.
pub fn default_model(dim: usize, points: usize) -> CliResult<PointCloud> {
    Ok(match dim {
        3 => reg::shapes::bunny_like(MODEL_DENSE_POINTS.max(points), points, MODEL_SEED)?,
        _ => reg::shapes::fish_outline(points)?,
    })
}

/// Loads a model file, checks its dimension and normalizes it; returns the
/// removed mean and scale too.
pub fn load_model(path: &Path, dim: usize) -> CliResult<(PointCloud, nalgebra::Vector3<f64>, f64)> {
    let cloud = reg::io::load_cloud(path)?;
    if cloud.dim() != dim {
        return Err(CliError::config(format!(
            "{} is a {}D cloud but the task is {dim}D",
            path.display(),
            cloud.dim()
        )));
    }
    Ok(cloud.normalized()?)
}

pub fn reg_train_config(dim: usize, model_points: usize, p: &RegParams, seed: u64) -> RegTrainConfig {
    let mut tc = if dim == 3 {
        RegTrainConfig::spatial()
    } else {
        RegTrainConfig::planar(model_points)
    };
    tc.n_train = p.n_train;
    tc.maps = p.maps;
    tc.lambda = p.lambda.unwrap_or(tc.lambda);
    tc.sigma2 = p.sigma2.unwrap_or(tc.sigma2);
    tc.seed = seed;
    tc
}

fn registration(c: &ExperimentConfig, p: &RegParams) -> CliResult<Artifacts> {
    let dim = c.dim();
    let cloud = match &p.model {
        Some(path) => load_model(path, dim)?.0,
        None => default_model(dim, p.model_points.unwrap_or(472))?,
    };
    let tc = reg_train_config(dim, cloud.len(), p, c.seed);
    let mut trained = Vec::new();
    let model = match &p.sum {
        Some(path) => RegistrationModel::new(cloud, tc.sigma2)?.with_sum(load_sum(path)?)?,
        None => {
            let (model, _) = reg::train_registration(&cloud, &tc)?;
            trained.push(("reg".to_string(), model.sum().expect("trained").clone()));
            model
        }
    };
    let cloud = model.cloud();
    let sweep = c.sweep.as_ref().unwrap();
    let axis = Perturbation::parse(sweep.axis.as_deref().unwrap())?;
    let values = sweep.values.clone().unwrap();
    let base = if dim == 3 { SceneConfig::test_3d() } else { SceneConfig::test_2d(cloud.len()) };
    let settings = InferenceSettings::new(p.max_iter, p.epsilon);
    let runs = reg::sweep_trials(&model, &base, axis, &values, p.trials, &settings, p.icp_iterations, c.seed)?;

    let threshold = 0.05 * cloud.largest_side();
    let mut table = ResultTable::default();
    let mut summary = Vec::new();
    for (&value, trials) in values.iter().zip(&runs) {
        for (i, r) in trials.iter().enumerate() {
            table.push(value, i, "do_error", r.do_error, r.do_seconds * 1e3);
            table.push(value, i, "do_success", f64::from(u8::from(r.do_error < threshold)), r.do_seconds * 1e3);
            table.push(value, i, "icp_error", r.icp_error, r.icp_seconds * 1e3);
            table.push(value, i, "icp_success", f64::from(u8::from(r.icp_error < threshold)), r.icp_seconds * 1e3);
        }
        let pt = SweepPoint::from_trials(value, threshold, trials);
        summary.push(format!(
            "{}={value}: DO {}/{} ICP {}/{}",
            axis.name(),
            pt.do_success,
            pt.trials,
            pt.icp_success,
            pt.trials
        ));
    }
    Ok(Artifacts::from_table(table, summary, trained))
}

pub fn pnp_train_config(p: &PnpParams, seed: u64) -> CliResult<PnpTrainConfig> {
    Ok(PnpTrainConfig {
        n_train: p.n_train,
        maps: p.maps,
        lambda: p.lambda,
        kind: PnpFeatureKind::parse(&p.feature)?,
        seed,
        ..PnpTrainConfig::desk()
    })
}

pub fn pnp_solve_options(p: &PnpParams) -> CliResult<PnpSolveOptions> {
    Ok(PnpSolveOptions {
        kind: PnpFeatureKind::parse(&p.feature)?,
        settings: InferenceSettings::new(p.max_iter, p.epsilon),
        threshold_px: p.threshold_px,
        refit_rounds: p.refit_rounds,
    })
}

/// Checks that a loaded SUM fits the PnP feature variant.
pub fn check_pnp_sum(sum: &UpdateMapSequence, kind: PnpFeatureKind) -> CliResult<()> {
    if sum.param_dim() != pnp::PARAMS || sum.feature_dim() != kind.dim() {
        return Err(CoreError::DimensionMismatch {
            what: "PnP SUM feature dimension",
            expected: kind.dim(),
            found: sum.feature_dim(),
        }
        .into());
    }
    Ok(())
}

fn pnp_sweep(c: &ExperimentConfig, p: &PnpParams) -> CliResult<Artifacts> {
    let options = pnp_solve_options(p)?;
    let mut trained = Vec::new();
    let sum = match &p.sum {
        Some(path) => load_sum(path)?,
        None => {
            let (sum, _) = pnp::train_pnp(&pnp_train_config(p, c.seed)?)?;
            trained.push(("pnp".to_string(), sum.clone()));
            sum
        }
    };
    check_pnp_sum(&sum, options.kind)?;
    let sweep = c.sweep.as_ref().unwrap();
    let vary = PnpVary::parse(sweep.axis.as_deref().unwrap())?;
    let values = sweep.values.clone().unwrap();
    let base = PnpConfig {
        points: (p.points, p.points),
        outlier_fraction: (p.outlier_fraction, p.outlier_fraction),
        noise_sd: p.noise_sd,
        ..PnpConfig::test()
    };
    let runs = pnp::pnp_sweep_trials(&sum, &base, vary, &values, p.trials, &options, c.seed)?;

    let mut table = ResultTable::default();
    let mut summary = Vec::new();
    for (&value, trials) in values.iter().zip(&runs) {
        for (i, r) in trials.iter().enumerate() {
            let ms = r.seconds * 1e3;
            table.push(value, i, "rotation_error_deg", r.rotation_error, ms);
            table.push(value, i, "success", f64::from(u8::from(r.rotation_error < pnp::SUCCESS_DEG)), ms);
            table.push(value, i, "do_rotation_error_deg", r.do_rotation_error, ms);
            table.push(value, i, "inlier_reprojection_px", r.inlier_reprojection, ms);
        }
        let pt = PnpSweepPoint::from_trials(value, trials);
        summary.push(format!(
            "{}={value}: success {}/{}, median rotation error {:.3} deg",
            vary.name(),
            pt.successes,
            pt.trials,
            pt.median_rotation_error
        ));
    }
    Ok(Artifacts::from_table(table, summary, trained))
}

/// Every `.pgm` file of `dir`, in file-name order.
pub fn load_pgm_dir(dir: &Path) -> CliResult<Vec<GrayImage>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")));
    paths.sort();
    if paths.is_empty() {
        return Err(CoreError::Parse(format!("no .pgm files in {}", dir.display())).into());
    }
    paths.iter().map(|p| Ok(denoise::load_pgm(p)?)).collect()
}

pub fn denoise_train_config(p: &DenoiseParams, mode: TrainMode, seed: u64) -> denoise::DenoiseTrainConfig {
    denoise::DenoiseTrainConfig {
        patches: p.patches,
        patch_size: (p.patch_size[0], p.patch_size[1]),
        rate: (p.rate[0], p.rate[1]),
        maps: p.maps,
        lambda: p.lambda,
        mode,
        seed,
    }
}

/// Training images: the corpus directory or procedural images from `seed`.
pub fn training_corpus(p: &DenoiseParams, seed: u64) -> CliResult<Vec<GrayImage>> {
    match &p.corpus {
        Some(dir) => load_pgm_dir(dir),
        None => Ok(denoise::synthetic_corpus(p.corpus_images, p.corpus_size, p.corpus_size, seed)?),
    }
}

fn denoise_sweep(c: &ExperimentConfig, p: &DenoiseParams) -> CliResult<Artifacts> {
    let corpus = training_corpus(p, c.seed)?;
    let test = match &p.test {
        Some(dir) => load_pgm_dir(dir)?,
        None => denoise::synthetic_corpus(p.test_images, p.test_size, p.test_size, c.seed.wrapping_add(1))?,
    };
    let mut models = Vec::new();
    for m in &p.modes {
        let mode = TrainMode::parse(m)?;
        let sum = denoise::train_denoiser(&corpus, &denoise_train_config(p, mode, c.seed))?;
        models.push((format!("do-{}", mode.name()), sum));
    }
    let noises: Vec<NoiseType> = p.noises.iter().map(|n| NoiseType::parse(n)).collect::<Result<_, _>>()?;
    let rates = c.sweep.as_ref().unwrap().values.clone().unwrap();
    let rows = denoise::run_denoise_sweep(&models, &test, &noises, &rates, p.max_iter, c.seed)?;

    let mut table = ResultTable::default();
    for r in &rows {
        table.push(r.rate, r.image, &format!("psnr_{}_{}", r.noise.name(), r.method), r.psnr, r.seconds * 1e3);
    }
    let mut summary = Vec::new();
    for &noise in &noises {
        for &rate in &rates {
            let mut line = format!("{} rate={rate}:", noise.name());
            for method in std::iter::once("noisy").chain(models.iter().map(|(n, _)| n.as_str())) {
                let v: Vec<f64> = rows
                    .iter()
                    .filter(|r| r.noise == noise && r.rate == rate && r.method == method)
                    .map(|r| r.psnr)
                    .collect();
                let _ = write!(line, " {method} {:.2} dB", v.iter().sum::<f64>() / v.len().max(1) as f64);
            }
            summary.push(line);
        }
    }
    Ok(Artifacts::from_table(table, summary, models))
}
