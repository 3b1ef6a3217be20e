mod calibrate;
mod evaluate;
mod mine;
mod simulate;
mod sweep;

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;

use ladcalib::baselines::{AverageMode, Method};
use ladcalib::experiment::MethodContext;
use ladcalib::synthetic::{self, GeneratorConfig, PRESET_NAMES};
use ladcalib::{CalibrationOptions, CalibrationProfile, DebiasConfig, InferenceTrace, LayerStrategy};

use crate::config::{self, usage, GlobalConfig, GlobalFlags};
use crate::output::OutputDir;

pub use calibrate::{calibrate, CalibrateArgs};
pub use evaluate::{diagnose, evaluate, predict, DiagnoseArgs, EvaluateArgs, PredictArgs};
pub use mine::{mine, MineArgs};
pub use simulate::{simulate, SimulateArgs};
pub use sweep::{sweep, SweepArgs};

pub const RUN_CONFIG: &str = "run_config.toml";

/// Settings shared by every command of one invocation.
pub struct Run {
    file: toml::Table,
    pub global: GlobalConfig,
}

impl Run {
    pub fn new(config: Option<&Path>, flags: &GlobalFlags) -> Result<Self> {
        let file = config::load_file(config)?;
        let global = config::resolve_global(&file, flags)?;
        Ok(Run { file, global })
    }

    fn resolve<C: DeserializeOwned>(&self, section: &str, args: &impl Serialize) -> Result<C> {
        config::resolve_command(&self.file, section, args)
    }

    fn output(&self) -> Result<OutputDir> {
        OutputDir::create(&self.global.out_dir)
    }

    /// Write the effective configuration next to the outputs.
    fn record(&self, out: &OutputDir, section: &str, cfg: &impl Serialize) -> Result<()> {
        out.write(RUN_CONFIG, config::render(&self.global, section, cfg)?.as_bytes())?;
        Ok(())
    }
}

/// Flags shared by commands that run the correction.
#[derive(Debug, Clone, Default, clap::Args, Serialize)]
pub struct DebiasArgs {
    /// Informative layers kept per instance.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    k: Option<usize>,
    /// Posterior temperature.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    tau: Option<f64>,
    /// Layer selection: `dynamic` (top-K) or `all`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    strategy: Option<String>,
    /// Divide attention by the static attention prior.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    attention_prior: Option<bool>,
}

/// Where calibration comes from: raw traces, a saved profile, or nothing.
#[derive(Debug, Clone, Default, clap::Args, Serialize)]
pub struct CalibrationArgs {
    /// Symmetrized calibration traces (JSONL).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    calibration: Option<PathBuf>,
    /// Profile written by `calibrate`; used when no calibration traces are given.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    profile: Option<PathBuf>,
    /// Smoothing weight applied when calibrating from traces.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    smoothing: Option<f64>,
}

fn default_k() -> usize {
    ladcalib::debias::DEFAULT_TOP_K
}

fn default_tau() -> f64 {
    ladcalib::debias::DEFAULT_TAU
}

fn default_true() -> bool {
    true
}

fn default_smoothing() -> f64 {
    ladcalib::calibration::DEFAULT_SMOOTHING
}

fn default_preset() -> String {
    "stripe-n4".into()
}

fn default_t() -> usize {
    5
}

fn default_cal_size() -> usize {
    5
}

fn debias_config(
    k: usize,
    tau: f64,
    strategy: LayerStrategy,
    attention_prior: bool,
) -> Result<DebiasConfig> {
    let cfg = DebiasConfig {
        k,
        tau,
        strategy,
        attention_prior,
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!("input file {} does not exist", path.display())))
    }
}

fn read_trace_file(path: &Path) -> Result<Vec<InferenceTrace>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let traces = ladcalib::read_traces(BufReader::new(file))
        .with_context(|| format!("reading traces from {}", path.display()))?;
    if traces.is_empty() {
        anyhow::bail!("{} contains no traces", path.display());
    }
    Ok(traces)
}

fn read_profile(path: &Path) -> Result<CalibrationProfile> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    CalibrationProfile::read(BufReader::new(file))
        .with_context(|| format!("reading profile {}", path.display()))
}

/// Build the predictor context from calibration traces or a saved profile.
fn method_context(
    calibration: Option<&Path>,
    profile: Option<&Path>,
    smoothing: f64,
    debias: DebiasConfig,
    average: AverageMode,
) -> Result<MethodContext> {
    let mut ctx = match (calibration, profile) {
        (Some(_), Some(_)) => {
            return Err(usage("give either calibration traces or a profile, not both"))
        }
        (Some(path), None) => {
            let traces = read_trace_file(path)?;
            let opts = CalibrationOptions {
                smoothing,
                ..CalibrationOptions::default()
            };
            MethodContext::from_calibration(&traces, &opts, debias)?
        }
        (None, Some(path)) => {
            let mut ctx = MethodContext::uncalibrated(debias)?;
            ctx.profile = Some(read_profile(path)?);
            ctx
        }
        (None, None) => MethodContext::uncalibrated(debias)?,
    };
    ctx.average = average;
    Ok(ctx)
}

/// Expand `all` and parse method names, keeping the given order.
fn parse_methods(names: &[String]) -> Result<Vec<Method>> {
    let mut out = Vec::new();
    for name in names {
        let parsed: Vec<Method> = if name == "all" {
            Method::ALL.to_vec()
        } else {
            vec![name.parse().map_err(|e: ladcalib::Error| usage(e.to_string()))?]
        };
        for m in parsed {
            if !out.contains(&m) {
                out.push(m);
            }
        }
    }
    if out.is_empty() {
        return Err(usage("no methods selected"));
    }
    Ok(out)
}

/// Generator from a file, else from a preset; the run seed always wins.
fn generator(preset: &str, file: Option<&Path>, seed: u64) -> Result<GeneratorConfig> {
    let mut cfg = match file {
        Some(path) => {
            require_file(path)?;
            let src = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            GeneratorConfig::from_toml(&src)
                .map_err(|e| usage(format!("{}: {e}", path.display())))?
        }
        None => {
            if !PRESET_NAMES.contains(&preset) {
                return Err(usage(format!(
                    "unknown preset {preset:?}; available presets: {}",
                    PRESET_NAMES.join(", ")
                )));
            }
            synthetic::preset(preset)?
        }
    };
    cfg.seed = seed;
    Ok(cfg)
}
