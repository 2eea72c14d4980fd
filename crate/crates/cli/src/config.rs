//! Experiment configuration as read from JSON. Every section rejects unknown
//! keys; [`ExperimentConfig::resolve`] fills task defaults so the echoed file
//! fully determines a rerun.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use disco_core::denoise::{NoiseType, TrainMode};
use disco_core::pnp::{PnpFeatureKind, PnpVary};
use disco_core::registration::Perturbation;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
pub enum Task {
    #[serde(rename = "1d")]
    #[value(name = "1d")]
    OneD,
    #[serde(rename = "reg2d")]
    Reg2d,
    #[serde(rename = "reg3d")]
    Reg3d,
    #[serde(rename = "pnp")]
    Pnp,
    #[serde(rename = "denoise")]
    Denoise,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::OneD => "1d",
            Task::Reg2d => "reg2d",
            Task::Reg3d => "reg3d",
            Task::Pnp => "pnp",
            Task::Denoise => "denoise",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    #[serde(default)]
    pub seed: u64,
    /// Result CSV; sidecar files are written next to it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub one_d: Option<OneDParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub registration: Option<RegParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pnp: Option<PnpParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub denoise: Option<DenoiseParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Sweep>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OneDParams {
    pub betas: Vec<usize>,
    pub n_train: usize,
    pub n_test: usize,
    pub max_maps: usize,
    pub lambda: f64,
    pub early_stop_delta: f64,
    pub epsilon: f64,
    pub max_iter: usize,
    pub set_size: [usize; 2],
}

impl Default for OneDParams {
    fn default() -> Self {
        Self {
            betas: (1..=6).collect(),
            n_train: 10_000,
            n_test: 1_000,
            max_maps: 15,
            lambda: 1e-5,
            early_stop_delta: 0.005,
            epsilon: 1e-3,
            max_iter: 100,
            set_size: [10, 100],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegParams {
    /// PLY or CSV model; a procedural shape when absent.
    pub model: Option<PathBuf>,
    /// Size of the procedural model.
    pub model_points: Option<usize>,
    /// Pre-trained SUM; trained from scratch when absent.
    pub sum: Option<PathBuf>,
    pub n_train: usize,
    pub maps: usize,
    pub lambda: Option<f64>,
    pub sigma2: Option<f64>,
    pub trials: usize,
    pub max_iter: usize,
    pub epsilon: f64,
    pub icp_iterations: usize,
}

impl Default for RegParams {
    fn default() -> Self {
        Self {
            model: None,
            model_points: None,
            sum: None,
            n_train: 3000,
            maps: 30,
            lambda: None,
            sigma2: None,
            trials: 30,
            max_iter: 1000,
            epsilon: 1e-3,
            icp_iterations: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PnpParams {
    pub sum: Option<PathBuf>,
    pub n_train: usize,
    pub maps: usize,
    pub lambda: f64,
    pub feature: String,
    pub trials: usize,
    pub threshold_px: f64,
    pub refit_rounds: usize,
    pub max_iter: usize,
    pub epsilon: f64,
    /// Test instances before the swept quantity is applied.
    pub points: usize,
    pub outlier_fraction: f64,
    pub noise_sd: f64,
}

impl Default for PnpParams {
    fn default() -> Self {
        Self {
            sum: None,
            n_train: 5000,
            maps: 30,
            lambda: 1e-4,
            feature: "compact".into(),
            trials: 100,
            threshold_px: 10.0,
            refit_rounds: 5,
            max_iter: 100,
            epsilon: 1e-3,
            points: 400,
            outlier_fraction: 0.3,
            noise_sd: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiseParams {
    /// Directory of training PGMs; procedural images when absent.
    pub corpus: Option<PathBuf>,
    pub corpus_images: usize,
    pub corpus_size: usize,
    /// Directory of held-out PGMs; procedural images when absent.
    pub test: Option<PathBuf>,
    pub test_images: usize,
    pub test_size: usize,
    /// One model is trained per mode (`sp`, `rv`, `sprv`).
    pub modes: Vec<String>,
    pub noises: Vec<String>,
    pub patches: usize,
    pub patch_size: [usize; 2],
    pub rate: [f64; 2],
    pub maps: usize,
    pub lambda: f64,
    pub max_iter: usize,
}

impl Default for DenoiseParams {
    fn default() -> Self {
        Self {
            corpus: None,
            corpus_images: 30,
            corpus_size: 256,
            test: None,
            test_images: 10,
            test_size: 128,
            modes: vec!["sp".into(), "rv".into()],
            noises: vec!["sp".into(), "rv".into()],
            patches: 1000,
            patch_size: [40, 80],
            rate: [0.0, 0.8],
            maps: 30,
            lambda: 1e-2,
            max_iter: 200,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Sweep {
    pub axis: Option<String>,
    pub values: Option<Vec<f64>>,
}

fn check(cond: bool, msg: &str) -> CliResult<()> {
    if cond {
        Ok(())
    } else {
        Err(CliError::config(msg))
    }
}

fn core_to_config(e: disco_core::Error) -> CliError {
    CliError::config(e.to_string())
}

impl ExperimentConfig {
    pub fn new(task: Task) -> Self {
        Self {
            task,
            seed: 0,
            output: None,
            one_d: None,
            registration: None,
            pnp: None,
            denoise: None,
            sweep: None,
        }
    }

    pub fn from_json(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> CliResult<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn dim(&self) -> usize {
        if self.task == Task::Reg2d {
            2
        } else {
            3
        }
    }

    pub fn one_d_mut(&mut self) -> &mut OneDParams {
        self.one_d.get_or_insert_with(Default::default)
    }

    pub fn registration_mut(&mut self) -> &mut RegParams {
        self.registration.get_or_insert_with(Default::default)
    }

    pub fn pnp_mut(&mut self) -> &mut PnpParams {
        self.pnp.get_or_insert_with(Default::default)
    }

    pub fn denoise_mut(&mut self) -> &mut DenoiseParams {
        self.denoise.get_or_insert_with(Default::default)
    }

    pub fn sweep_mut(&mut self) -> &mut Sweep {
        self.sweep.get_or_insert_with(Default::default)
    }

    /// Fills every default that depends on the task and validates the
    /// result. Sections belonging to other tasks are rejected.
    pub fn resolve(&self) -> CliResult<Self> {
        let mut c = self.clone();
        let task = c.task;
        let foreign = [
            ("one_d", c.one_d.is_some() && task != Task::OneD),
            (
                "registration",
                c.registration.is_some() && !matches!(task, Task::Reg2d | Task::Reg3d),
            ),
            ("pnp", c.pnp.is_some() && task != Task::Pnp),
            ("denoise", c.denoise.is_some() && task != Task::Denoise),
            ("sweep", c.sweep.is_some() && task == Task::OneD),
        ];
        if let Some((name, _)) = foreign.iter().find(|(_, bad)| *bad) {
            return Err(CliError::config(format!(
                "section '{name}' does not apply to task {}",
                task.name()
            )));
        }
        if c.output.is_none() {
            let file = if task == Task::OneD { "table1.csv" } else { "results.csv" };
            c.output = Some(Path::new("results").join(task.name()).join(file));
        }
        match task {
            Task::OneD => {
                let p = c.one_d_mut();
                check(!p.betas.is_empty(), "one_d.betas is empty")?;
                check(p.betas.iter().all(|b| (1..=6).contains(b)), "one_d.betas must lie in 1..=6")?;
                check(p.n_train > 0 && p.n_test > 0, "one_d needs training and test instances")?;
                check(p.max_maps > 0, "one_d.max_maps must be positive")?;
                check(p.set_size[0] > 0 && p.set_size[0] <= p.set_size[1], "one_d.set_size must be an ordered positive range")?;
            }
            Task::Reg2d | Task::Reg3d => {
                let dim = c.dim();
                let p = c.registration_mut();
                if p.model.is_none() {
                    p.model_points.get_or_insert(if dim == 3 { 472 } else { 100 });
                }
                p.lambda.get_or_insert(if dim == 3 { 3e-4 } else { 2e-2 });
                p.sigma2.get_or_insert(if dim == 3 { 0.03 } else { 0.5 });
                check(p.n_train > 0 && p.maps > 0, "registration needs training scenes and maps")?;
                check(p.trials > 0, "registration.trials must be positive")?;
                let s = c.sweep_mut();
                let axis = Perturbation::parse(s.axis.get_or_insert_with(|| "outliers".into())).map_err(core_to_config)?;
                s.values.get_or_insert_with(|| axis.default_values());
            }
            Task::Pnp => {
                let p = c.pnp_mut();
                PnpFeatureKind::parse(&p.feature).map_err(core_to_config)?;
                check(p.n_train > 0 && p.maps > 0, "pnp needs training instances and maps")?;
                check(p.trials > 0, "pnp.trials must be positive")?;
                check((0.0..1.0).contains(&p.outlier_fraction), "pnp.outlier_fraction must lie in [0, 1)")?;
                let s = c.sweep_mut();
                let axis = PnpVary::parse(s.axis.get_or_insert_with(|| "outliers".into())).map_err(core_to_config)?;
                s.values.get_or_insert_with(|| axis.default_values());
            }
            Task::Denoise => {
                let p = c.denoise_mut();
                check(!p.modes.is_empty(), "denoise.modes is empty")?;
                check(!p.noises.is_empty(), "denoise.noises is empty")?;
                for m in &p.modes {
                    TrainMode::parse(m).map_err(core_to_config)?;
                }
                for n in &p.noises {
                    NoiseType::parse(n).map_err(core_to_config)?;
                }
                let s = c.sweep_mut();
                let axis = s.axis.get_or_insert_with(|| "rate".into());
                check(axis == "rate", "the denoise sweep axis is 'rate'")?;
                let values = s.values.get_or_insert_with(|| (1..=9).map(|k| k as f64 / 10.0).collect());
                check(values.iter().all(|r| (0.0..=1.0).contains(r)), "noise rates must lie in [0, 1]")?;
            }
        }
        if let Some(values) = c.sweep.as_ref().and_then(|s| s.values.as_ref()) {
            check(!values.is_empty(), "sweep.values is empty")?;
            check(values.iter().all(|v| v.is_finite()), "sweep.values must be finite")?;
        }
        Ok(c)
    }
}

/// Parses `start:step:end` (inclusive) or a comma-separated list.
pub fn parse_values(s: &str) -> CliResult<Vec<f64>> {
    let num = |t: &str| {
        t.trim()
            .parse::<f64>()
            .map_err(|_| CliError::config(format!("'{t}' is not a number")))
    };
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        [start, step, end] => {
            let (start, step, end) = (num(start)?, num(step)?, num(end)?);
            check(step > 0.0 && end >= start, "range needs step > 0 and end >= start")?;
            let n = ((end - start) / step + 1e-9).floor() as usize;
            // Rounding keeps 0.1:0.1:0.3 from producing 0.30000000000000004.
            Ok((0..=n).map(|k| ((start + k as f64 * step) * 1e12).round() / 1e12).collect())
        }
        [_] => s.split(',').map(num).collect(),
        _ => Err(CliError::config(format!("cannot parse value list '{s}'"))),
    }
}
