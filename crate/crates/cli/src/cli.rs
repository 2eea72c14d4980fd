//! Command-line surface. Experiment subcommands (`run`, `1d run`, the three
//! `sweep`s) go through [`ExperimentConfig`]: a `--config` file is read
//! first, then explicit flags override its keys.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::{DVector, Vector3};
use serde_json::json;

use disco_core::denoise::{self, NoiseType, NoisyImage, TrainMode};
use disco_core::pnp::{self, PnpConfig};
use disco_core::registration::{self as reg, lie_exp, lie_log, PointCloud, RegistrationModel, Rigid, SceneConfig};
use disco_core::rng;
use disco_core::sum::{load_sum, save_sum, InferenceSettings, UpdateMapSequence};

use crate::config::{parse_values, ExperimentConfig, RegParams, Task};
use crate::error::{CliError, CliResult};
use crate::experiment::{self, run_experiment};
use crate::results::{sidecar, write_file};

const CSV_HELP: &str = "\
Output files of experiment commands, next to the result CSV dir/stem.csv:
  stem.csv           value,trial,metric,metric_value  (one metric per row)
  stem.timing.csv    value,trial,metric,wall_ms       (same keys as stem.csv)
  stem.config.json   resolved configuration; rerunning it reproduces stem.csv
  stem.training.csv  model,map,rmse                   (training error per map)
  stem.<model>.dosum trained update maps
The 1d table instead writes beta,oracle_1..oracle_6,sum_beta (mean absolute
errors) and a beta,wall_ms timing file.

Metrics: registration do_error, do_success, icp_error, icp_success; pnp
rotation_error_deg, success, do_rotation_error_deg, inlier_reprojection_px;
denoise psnr_<noise>_<method> with trial = image index.

DISCO_THREADS caps the worker pool. Exit codes: 0 success, 2 configuration
error, 3 data I/O error, 4 numerical failure.";

#[derive(Debug, Parser)]
#[command(name = "disco", version, about = "Learned update maps for estimation problems", after_long_help = CSV_HELP)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the experiment described by a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Robust 1D location estimation under unknown penalties.
    #[command(name = "1d", alias = "do1d")]
    OneD {
        #[command(subcommand)]
        action: OneDAction,
    },
    /// Rigid point cloud registration (2D or 3D).
    #[command(alias = "doreg")]
    Reg {
        #[command(subcommand)]
        action: RegAction,
    },
    /// Camera pose from 2D-3D correspondences.
    #[command(alias = "dopnp")]
    Pnp {
        #[command(subcommand)]
        action: PnpAction,
    },
    /// Impulse-noise removal for grayscale images.
    #[command(alias = "dodenoise")]
    Denoise {
        #[command(subcommand)]
        action: DenoiseAction,
    },
}

/// Flags shared by every experiment command.
#[derive(Debug, Args)]
pub struct Common {
    /// Root seed of all random streams.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Result CSV path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// JSON config read before the flags below are applied.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Subcommand)]
pub enum OneDAction {
    /// Train one SUM per penalty and tabulate mean absolute errors.
    Run {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// `all` or a comma-separated list of exponents in 1..=6.
        #[arg(long)]
        beta: Option<String>,
        #[arg(long)]
        train: Option<usize>,
        #[arg(long)]
        test: Option<usize>,
        #[arg(long)]
        max_maps: Option<usize>,
    },
}

#[derive(Debug, Subcommand)]
pub enum RegAction {
    /// Train a SUM for a model on synthetic scenes.
    Train {
        /// PLY or CSV model; the procedural shape when absent.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u8).range(2..=3))]
        dim: u8,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n_train: Option<usize>,
        #[arg(long)]
        maps: Option<usize>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        sigma2: Option<f64>,
        /// Size of the procedural model.
        #[arg(long)]
        points: Option<usize>,
    },
    /// Align a scene to a model with a trained SUM; writes pose JSON.
    Solve {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        sum: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Kernel width used at training time (default by dimension).
        #[arg(long)]
        sigma2: Option<f64>,
        /// Ground-truth parameters, comma separated, for the error report.
        #[arg(long, allow_hyphen_values = true)]
        truth: Option<String>,
        #[arg(long, default_value_t = 1000)]
        max_iter: usize,
        #[arg(long, default_value_t = 1e-3)]
        epsilon: f64,
    },
    /// Success rates of the SUM and ICP while one perturbation varies.
    Sweep {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long, value_parser = clap::value_parser!(u8).range(2..=3))]
        dim: Option<u8>,
        /// points | noise | angle | outliers | incomplete
        #[arg(long)]
        perturb: Option<String>,
        /// `start:step:end` or a comma-separated list.
        #[arg(long)]
        values: Option<String>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        sum: Option<PathBuf>,
        #[arg(long)]
        n_train: Option<usize>,
    },
    /// Write the procedural model.
    Model {
        #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u8).range(2..=3))]
        dim: u8,
        #[arg(long)]
        points: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw a perturbed test scene; prints its ground-truth parameters.
    Scene {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Subcommand)]
pub enum PnpAction {
    /// Train a SUM on synthetic correspondence sets.
    Train {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n_train: Option<usize>,
        #[arg(long)]
        maps: Option<usize>,
        #[arg(long)]
        lambda: Option<f64>,
        /// compact | full
        #[arg(long)]
        feature: Option<String>,
    },
    /// Estimate a pose from `u,v,X,Y,Z` matches and a 3x3 intrinsics file.
    Solve {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        k: PathBuf,
        #[arg(long)]
        sum: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        feature: Option<String>,
        /// Inlier threshold in pixels.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Rotation errors while one property of the test sets varies.
    Sweep {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// outliers | noise | points
        #[arg(long)]
        vary: Option<String>,
        #[arg(long)]
        values: Option<String>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        sum: Option<PathBuf>,
        #[arg(long)]
        n_train: Option<usize>,
        #[arg(long)]
        feature: Option<String>,
    },
    /// Write a synthetic correspondence set and its intrinsics.
    Gen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        k: PathBuf,
        #[arg(long, default_value_t = 400)]
        points: usize,
        #[arg(long, default_value_t = 0.3)]
        outliers: f64,
        #[arg(long, default_value_t = 2.0)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the generating pose as JSON.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum DenoiseAction {
    /// Train a per-pixel SUM on noisy patches.
    Train {
        /// Directory of PGM images; procedural images when absent.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// sp | rv | sprv
        #[arg(long, default_value = "sp")]
        mode: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        patches: Option<usize>,
        #[arg(long)]
        maps: Option<usize>,
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Denoise one PGM image.
    Run {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        sum: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Noise model deciding which pixels are trusted: sp | rv.
        #[arg(long, default_value = "sp")]
        noise: String,
        #[arg(long, default_value_t = denoise::DEFAULT_MAX_ITER)]
        max_iter: usize,
    },
    /// PSNR of the noisy input and each trained model across noise rates.
    Sweep {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// `start:step:end` or a comma-separated list.
        #[arg(long)]
        rates: Option<String>,
        /// Comma-separated training modes.
        #[arg(long)]
        modes: Option<String>,
        /// Comma-separated noise types.
        #[arg(long)]
        noises: Option<String>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        patches: Option<usize>,
    },
    /// Corrupt a PGM image with impulse noise.
    Noise {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "sp")]
        noise: String,
        #[arg(long)]
        rate: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn base_config(path: Option<&Path>, task: Task) -> CliResult<ExperimentConfig> {
    match path {
        None => Ok(ExperimentConfig::new(task)),
        Some(p) => {
            let c = ExperimentConfig::load(p)?;
            let compatible = c.task == task || matches!((c.task, task), (Task::Reg2d, Task::Reg3d) | (Task::Reg3d, Task::Reg2d));
            if !compatible {
                return Err(CliError::config(format!(
                    "{} describes task {}, not {}",
                    p.display(),
                    c.task.name(),
                    task.name()
                )));
            }
            Ok(c)
        }
    }
}

fn apply_common(c: &mut ExperimentConfig, common: &Common) {
    if let Some(s) = common.seed {
        c.seed = s;
    }
    if let Some(o) = &common.out {
        c.output = Some(o.clone());
    }
}

fn split_list(s: &str) -> Vec<String> {
    s.split(',').map(|t| t.trim().to_string()).filter(|t| !t.is_empty()).collect()
}

fn parse_betas(s: &str) -> CliResult<Vec<usize>> {
    if s == "all" {
        return Ok((1..=6).collect());
    }
    split_list(s)
        .iter()
        .map(|t| t.parse().map_err(|_| CliError::config(format!("'{t}' is not an exponent"))))
        .collect()
}

/// Builds the experiment config of an experiment subcommand.
pub fn experiment_config(command: &Command) -> CliResult<Option<ExperimentConfig>> {
    let c = match command {
        Command::Run { config, common } => {
            let mut c = ExperimentConfig::load(config)?;
            apply_common(&mut c, common);
            c
        }
        Command::OneD {
            action: OneDAction::Run { exp, beta, train, test, max_maps },
        } => {
            let mut c = base_config(exp.config.as_deref(), Task::OneD)?;
            apply_common(&mut c, &exp.common);
            let p = c.one_d_mut();
            if let Some(b) = beta {
                p.betas = parse_betas(b)?;
            }
            set(&mut p.n_train, *train);
            set(&mut p.n_test, *test);
            set(&mut p.max_maps, *max_maps);
            c
        }
        Command::Reg {
            action: RegAction::Sweep { exp, dim, perturb, values, trials, model, sum, n_train },
        } => {
            let mut c = base_config(exp.config.as_deref(), Task::Reg3d)?;
            match dim {
                Some(2) => c.task = Task::Reg2d,
                Some(_) => c.task = Task::Reg3d,
                None => {}
            }
            apply_common(&mut c, &exp.common);
            let p = c.registration_mut();
            set(&mut p.trials, *trials);
            set(&mut p.n_train, *n_train);
            if model.is_some() {
                p.model = model.clone();
            }
            if sum.is_some() {
                p.sum = sum.clone();
            }
            sweep_flags(&mut c, perturb.as_deref(), values.as_deref())?;
            c
        }
        Command::Pnp {
            action: PnpAction::Sweep { exp, vary, values, trials, sum, n_train, feature },
        } => {
            let mut c = base_config(exp.config.as_deref(), Task::Pnp)?;
            apply_common(&mut c, &exp.common);
            let p = c.pnp_mut();
            set(&mut p.trials, *trials);
            set(&mut p.n_train, *n_train);
            set(&mut p.feature, feature.clone());
            if sum.is_some() {
                p.sum = sum.clone();
            }
            sweep_flags(&mut c, vary.as_deref(), values.as_deref())?;
            c
        }
        Command::Denoise {
            action: DenoiseAction::Sweep { exp, rates, modes, noises, corpus, test, patches },
        } => {
            let mut c = base_config(exp.config.as_deref(), Task::Denoise)?;
            apply_common(&mut c, &exp.common);
            let p = c.denoise_mut();
            set(&mut p.modes, modes.as_deref().map(split_list));
            set(&mut p.noises, noises.as_deref().map(split_list));
            set(&mut p.patches, *patches);
            if corpus.is_some() {
                p.corpus = corpus.clone();
            }
            if test.is_some() {
                p.test = test.clone();
            }
            sweep_flags(&mut c, None, rates.as_deref())?;
            c
        }
        _ => return Ok(None),
    };
    Ok(Some(c))
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn sweep_flags(c: &mut ExperimentConfig, axis: Option<&str>, values: Option<&str>) -> CliResult<()> {
    if axis.is_none() && values.is_none() {
        return Ok(());
    }
    let s = c.sweep_mut();
    if let Some(a) = axis {
        if s.axis.as_deref() != Some(a) {
            // A new axis invalidates values meant for the old one.
            s.values = None;
        }
        s.axis = Some(a.to_string());
    }
    if let Some(v) = values {
        s.values = Some(parse_values(v)?);
    }
    Ok(())
}

pub fn execute(cli: Cli) -> CliResult<()> {
    if let Some(config) = experiment_config(&cli.command)? {
        let out = run_experiment(&config)?;
        for line in &out.summary {
            println!("{line}");
        }
        println!("wrote {}", out.results.display());
        return Ok(());
    }
    match cli.command {
        Command::Reg { action } => reg_action(action),
        Command::Pnp { action } => pnp_action(action),
        Command::Denoise { action } => denoise_action(action),
        Command::Run { .. } | Command::OneD { .. } => unreachable!("handled as experiments"),
    }
}

fn print_training(sum: &UpdateMapSequence) {
    let rmse = sum.training_rmse();
    println!(
        "trained {} maps, training RMSE {:.6} -> {:.6}",
        sum.len(),
        rmse[0],
        rmse[rmse.len() - 1]
    );
}

fn save_trained(sum: &UpdateMapSequence, out: &Path) -> CliResult<()> {
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    save_sum(sum, out)?;
    let mut s = String::from("map,rmse\n");
    for (t, r) in sum.training_rmse().iter().enumerate() {
        s.push_str(&format!("{t},{r}\n"));
    }
    write_file(&sidecar(out, "training.csv"), s)?;
    print_training(sum);
    println!("wrote {}", out.display());
    Ok(())
}

/// Moves a motion of the normalized frame `(p - mean) / scale` to the
/// original frame.
pub fn denormalize_motion(g: &Rigid, mean: &Vector3<f64>, scale: f64) -> Rigid {
    Rigid::new(g.rotation, scale * g.translation + mean - g.rotation * mean)
}

pub fn normalize_motion(g: &Rigid, mean: &Vector3<f64>, scale: f64) -> Rigid {
    Rigid::new(g.rotation, (g.translation - mean + g.rotation * mean) / scale)
}

fn parse_vector(s: &str) -> CliResult<DVector<f64>> {
    let v: Vec<f64> = parse_values(s)?;
    Ok(DVector::from_vec(v))
}

fn matrix_rows(m: &nalgebra::Matrix3<f64>) -> Vec<Vec<f64>> {
    (0..3).map(|r| (0..3).map(|c| m[(r, c)]).collect()).collect()
}

fn write_json(path: &Path, value: &serde_json::Value) -> CliResult<()> {
    let mut s = serde_json::to_string_pretty(value).expect("json serializes");
    s.push('\n');
    write_file(path, s)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn reg_action(action: RegAction) -> CliResult<()> {
    match action {
        RegAction::Train { model, dim, out, seed, n_train, maps, lambda, sigma2, points } => {
            let dim = usize::from(dim);
            let cloud = match &model {
                Some(path) => experiment::load_model(path, dim)?.0,
                None => experiment::default_model(dim, points.unwrap_or(if dim == 3 { 472 } else { 100 }))?,
            };
            let mut p = RegParams::default();
            set(&mut p.n_train, n_train);
            set(&mut p.maps, maps);
            p.lambda = lambda;
            p.sigma2 = sigma2;
            let tc = experiment::reg_train_config(dim, cloud.len(), &p, seed.unwrap_or(0));
            let (trained, _) = reg::train_registration(&cloud, &tc)?;
            save_trained(trained.sum().expect("trained"), &out)
        }
        RegAction::Solve { model, scene, sum, out, sigma2, truth, max_iter, epsilon } => {
            let raw = reg::io::load_cloud(&model)?;
            let dim = raw.dim();
            let (cloud, mean, scale) = raw.normalized()?;
            let scene = reg::io::load_cloud(&scene)?;
            if scene.dim() != dim {
                return Err(CliError::config("model and scene dimensions differ"));
            }
            let scene_n = PointCloud::new(dim, scene.points().iter().map(|p| (p - mean) / scale).collect())?;
            let sigma2 = sigma2.unwrap_or(if dim == 3 { 0.03 } else { 0.5 });
            let model = RegistrationModel::new(cloud, sigma2)?.with_sum(load_sum(&sum)?)?;
            let x0 = DVector::zeros(model.param_dim());
            let outcome = reg::register(&model, &scene_n, &x0, &InferenceSettings::new(max_iter, epsilon))?;
            let g = denormalize_motion(&lie_exp(&outcome.x)?, &mean, scale);
            let se = lie_log(&g, dim)?;
            let mut pose = json!({
                "se": se.as_slice(),
                "rotation": matrix_rows(&g.rotation),
                "translation": g.translation.as_slice()[..dim].to_vec(),
                "iterations": outcome.iterations,
            });
            if let Some(t) = truth {
                let x_true = parse_vector(&t)?;
                let x_true_n = lie_log(&normalize_motion(&lie_exp(&x_true)?, &mean, scale), dim)?;
                let (err, ok) = reg::success_metric(model.cloud(), &outcome.x, &x_true_n)?;
                pose["mean_error"] = json!(err * scale);
                pose["success"] = json!(ok);
            }
            write_json(&out, &pose)
        }
        RegAction::Model { dim, points, out } => {
            let dim = usize::from(dim);
            let cloud = experiment::default_model(dim, points.unwrap_or(if dim == 3 { 472 } else { 100 }))?;
            reg::io::save_cloud(&cloud, &out)?;
            println!("wrote {}", out.display());
            Ok(())
        }
        RegAction::Scene { model, out, seed } => {
            let raw = reg::io::load_cloud(&model)?;
            let dim = raw.dim();
            let (cloud, mean, scale) = raw.normalized()?;
            let config = if dim == 3 { SceneConfig::test_3d() } else { SceneConfig::test_2d(cloud.len()) };
            let scene = reg::gen_perturbed_scene(&cloud, &config, &mut rng::stream(seed, 0x5e_00c1, 0))?;
            let pts = scene.cloud.points().iter().map(|p| p * scale + mean).collect();
            reg::io::save_cloud(&PointCloud::new(dim, pts)?, &out)?;
            let truth = lie_log(&denormalize_motion(&lie_exp(&scene.x_star)?, &mean, scale), dim)?;
            let list: Vec<String> = truth.iter().map(|v| v.to_string()).collect();
            println!("truth {}", list.join(","));
            println!("wrote {}", out.display());
            Ok(())
        }
        RegAction::Sweep { .. } => unreachable!("handled as an experiment"),
    }
}

fn pnp_action(action: PnpAction) -> CliResult<()> {
    let mut p = crate::config::PnpParams::default();
    match action {
        PnpAction::Train { out, seed, n_train, maps, lambda, feature } => {
            set(&mut p.n_train, n_train);
            set(&mut p.maps, maps);
            set(&mut p.lambda, lambda);
            set(&mut p.feature, feature);
            let (sum, _) = pnp::train_pnp(&experiment::pnp_train_config(&p, seed.unwrap_or(0))?)?;
            save_trained(&sum, &out)
        }
        PnpAction::Solve { input, k, sum, out, feature, threshold } => {
            set(&mut p.feature, feature);
            set(&mut p.threshold_px, threshold);
            let options = experiment::pnp_solve_options(&p)?;
            let sum = load_sum(&sum)?;
            experiment::check_pnp_sum(&sum, options.kind)?;
            let set = pnp::io::load_correspondences(&input, &k)?;
            let sol = pnp::solve_pnp(&set, &sum, &options)?;
            write_json(
                &out,
                &json!({
                    "rotation": matrix_rows(&sol.rotation),
                    "translation": sol.translation.as_slice(),
                    "iterations": sol.iterations,
                    "refit": sol.refit,
                    "inliers": sol.inliers,
                }),
            )
        }
        PnpAction::Gen { out, k, points, outliers, noise, seed, truth } => {
            let config = PnpConfig {
                points: (points, points),
                outlier_fraction: (outliers, outliers),
                noise_sd: noise,
                ..PnpConfig::test()
            };
            let inst = pnp::gen_pnp_instance(&config, &mut rng::stream(seed, 0x9a_00c1, 0))?;
            for path in [&out, &k] {
                if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                    std::fs::create_dir_all(dir)?;
                }
            }
            pnp::io::save_correspondences(&inst.set, &out, &k)?;
            println!("wrote {} and {}", out.display(), k.display());
            if let Some(t) = truth {
                let outlier_idx: Vec<usize> = inst.outliers.iter().enumerate().filter(|(_, &o)| o).map(|(i, _)| i).collect();
                write_json(
                    &t,
                    &json!({
                        "rotation": matrix_rows(&inst.rotation),
                        "translation": inst.translation.as_slice(),
                        "outliers": outlier_idx,
                    }),
                )?;
            }
            Ok(())
        }
        PnpAction::Sweep { .. } => unreachable!("handled as an experiment"),
    }
}

fn denoise_action(action: DenoiseAction) -> CliResult<()> {
    match action {
        DenoiseAction::Train { corpus, mode, out, seed, patches, maps, lambda } => {
            let mut p = crate::config::DenoiseParams { corpus, ..Default::default() };
            set(&mut p.patches, patches);
            set(&mut p.maps, maps);
            set(&mut p.lambda, lambda);
            let seed = seed.unwrap_or(0);
            let images = experiment::training_corpus(&p, seed)?;
            let mode = TrainMode::parse(&mode).map_err(|e| CliError::config(e.to_string()))?;
            let sum = denoise::train_denoiser(&images, &experiment::denoise_train_config(&p, mode, seed))?;
            save_trained(&sum, &out)
        }
        DenoiseAction::Run { input, sum, out, noise, max_iter } => {
            let noise = NoiseType::parse(&noise).map_err(|e| CliError::config(e.to_string()))?;
            let image = denoise::load_pgm(&input)?;
            let sum = load_sum(&sum)?;
            let noisy = NoisyImage::with_mask_rule(image, noise);
            let clean = denoise::denoise(&noisy, &sum, max_iter)?;
            write_file(&out, denoise::format_pgm(&clean))?;
            println!("wrote {}", out.display());
            Ok(())
        }
        DenoiseAction::Noise { input, noise, rate, out, seed } => {
            let noise = NoiseType::parse(&noise).map_err(|e| CliError::config(e.to_string()))?;
            if !(0.0..=1.0).contains(&rate) {
                return Err(CliError::config("rate must lie in [0, 1]"));
            }
            let image = denoise::load_pgm(&input)?;
            let noisy = denoise::gen_noisy(&image, noise, rate, &mut rng::stream(seed, 0xd3_00c1, 0))?;
            write_file(&out, denoise::format_pgm(&noisy.observed))?;
            println!("wrote {}", out.display());
            Ok(())
        }
        DenoiseAction::Sweep { .. } => unreachable!("handled as an experiment"),
    }
}

/// Caps the global worker pool at `DISCO_THREADS` when it is set.
pub fn configure_threads() -> CliResult<()> {
    let Ok(v) = std::env::var("DISCO_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::config(format!("DISCO_THREADS must be a positive integer, got '{v}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::config(e.to_string()))
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match configure_threads().and_then(|_| execute(cli)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aliases_and_flags_parse() {
        for name in ["doreg", "reg"] {
            let cli = Cli::try_parse_from(["disco", name, "sweep", "--perturb", "outliers", "--trials", "5", "--values", "0,100"]).unwrap();
            let c = experiment_config(&cli.command).unwrap().unwrap().resolve().unwrap();
            assert_eq!(c.task, Task::Reg3d);
            assert_eq!(c.registration.as_ref().unwrap().trials, 5);
            assert_eq!(c.sweep.as_ref().unwrap().values.as_deref(), Some(&[0.0, 100.0][..]));
        }
        let cli = Cli::try_parse_from(["disco", "do1d", "run", "--beta", "1,3", "--seed", "9"]).unwrap();
        let c = experiment_config(&cli.command).unwrap().unwrap();
        assert_eq!((c.seed, c.one_d.unwrap().betas), (9, vec![1, 3]));
        assert!(Cli::try_parse_from(["disco", "dopnp", "solve", "--in", "m.csv"]).is_err());
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"task":"pnp","seed":4,"pnp":{"trials":7,"n_train":50},"sweep":{"axis":"noise"}}"#).unwrap();
        let cli = Cli::try_parse_from([
            "disco", "pnp", "sweep", "--config", path.to_str().unwrap(), "--trials", "3", "--vary", "outliers",
        ])
        .unwrap();
        let c = experiment_config(&cli.command).unwrap().unwrap().resolve().unwrap();
        let p = c.pnp.as_ref().unwrap();
        assert_eq!((c.seed, p.trials, p.n_train), (4, 3, 50));
        assert_eq!(c.sweep.as_ref().unwrap().axis.as_deref(), Some("outliers"));

        let cli = Cli::try_parse_from(["disco", "denoise", "sweep", "--config", path.to_str().unwrap()]).unwrap();
        assert_eq!(experiment_config(&cli.command).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn motion_frames_commute_with_normalization() {
        let g = lie_exp(&DVector::from_vec(vec![0.3, -0.2, 0.5, 0.1, 0.4, -0.3])).unwrap();
        let (mean, scale) = (Vector3::new(1.0, -2.0, 0.5), 3.5);
        let p = Vector3::new(0.2, 0.7, -1.1);
        let orig = denormalize_motion(&g, &mean, scale);
        let via_norm = g.apply(&((p - mean) / scale)) * scale + mean;
        assert!((orig.apply(&p) - via_norm).norm() < 1e-12);
        let back = normalize_motion(&orig, &mean, scale);
        assert!((back.translation - g.translation).norm() < 1e-12);
    }
}
