use std::path::PathBuf;

use anyhow::Result;
use serde::{Deserialize, Serialize};

use ladcalib::baselines::{AverageMode, Method};
use ladcalib::evaluation::{episodes_from_traces, Episode, EvalReport};
use ladcalib::experiment::MethodContext;
use ladcalib::synthetic::{generate_calibration_set, generate_eval_episodes, BiasProfile, GeneratorConfig};
use ladcalib::{CalibrationOptions, DebiasConfig, LayerStrategy};

use super::{
    debias_config, default_cal_size, default_k, default_preset, default_smoothing, default_t,
    default_tau, default_true, generator, parse_methods, DebiasArgs, Run,
};
use crate::config::usage;
use crate::plot;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum Axis {
    Tau,
    K,
    CalSize,
    N,
    Strategy,
    AttnPrior,
}

impl Axis {
    fn default_values(self) -> Vec<String> {
        let v: &[&str] = match self {
            Axis::Tau => &["1", "2", "5", "10"],
            Axis::K => &["1", "2", "3", "4"],
            Axis::CalSize => &["1", "2", "5", "10", "50"],
            Axis::N => &["2", "3", "4", "5", "6", "7", "8", "9", "10", "11", "12"],
            Axis::Strategy => &["dynamic", "all"],
            Axis::AttnPrior => &["true", "false"],
        };
        v.iter().map(|s| s.to_string()).collect()
    }

    /// Whether points along this axis need their own synthetic data.
    fn changes_data(self) -> bool {
        matches!(self, Axis::CalSize | Axis::N)
    }
}

#[derive(Debug, Clone, Default, clap::Args, Serialize)]
pub struct SweepArgs {
    /// Swept parameter: tau, k, cal-size, n, strategy or attn-prior.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    axis: Option<String>,
    /// Values along the axis, comma separated.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    values: Option<Vec<String>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    preset: Option<String>,
    /// Generator TOML file; takes precedence over --preset.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    generator: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    episodes: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    t: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    cal_size: Option<usize>,
    /// Predictors to run, comma separated, or `all`.
    #[arg(long = "method", value_delimiter = ',')]
    #[serde(rename = "methods", skip_serializing_if = "Option::is_none")]
    methods: Option<Vec<String>>,
    #[command(flatten)]
    #[serde(flatten)]
    debias: DebiasArgs,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    smoothing: Option<f64>,
    /// perm-avg combination: `probability` or `log-probability`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    average: Option<String>,
    /// Also write sweep.png.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    plots: Option<bool>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepConfig {
    axis: Axis,
    #[serde(default)]
    values: Option<Vec<String>>,
    #[serde(default = "default_preset")]
    preset: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    generator: Option<PathBuf>,
    #[serde(default = "default_episodes")]
    episodes: usize,
    #[serde(default = "default_t")]
    t: usize,
    #[serde(default = "default_cal_size")]
    cal_size: usize,
    #[serde(default = "default_methods")]
    methods: Vec<String>,
    #[serde(default = "default_k")]
    k: usize,
    #[serde(default = "default_tau")]
    tau: f64,
    #[serde(default)]
    strategy: LayerStrategy,
    #[serde(default = "default_true")]
    attention_prior: bool,
    #[serde(default = "default_smoothing")]
    smoothing: f64,
    #[serde(default)]
    average: AverageMode,
    #[serde(default)]
    plots: bool,
}

fn default_episodes() -> usize {
    200
}

fn default_methods() -> Vec<String> {
    vec!["ours".into()]
}

/// One setting along the axis.
struct Point {
    label: String,
    gen: GeneratorConfig,
    cal_size: usize,
    debias: DebiasConfig,
}

fn parse_value<T: std::str::FromStr>(axis: Axis, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| usage(format!("bad value {v:?} for sweep axis {axis:?}")))
}

/// The generator resized to `n` candidates; stripe positions beyond `n` are
/// dropped.
fn resized(base: &GeneratorConfig, n: usize) -> Result<GeneratorConfig> {
    let bias = match &base.bias {
        BiasProfile::Uniform => BiasProfile::Uniform,
        BiasProfile::Stripe { preferred, weight } => BiasProfile::Stripe {
            preferred: preferred.iter().copied().filter(|&p| p <= n).collect(),
            weight: *weight,
        },
        BiasProfile::HomogenizedTail { .. } => {
            return Err(usage("the n axis needs a uniform or stripe bias profile"))
        }
    };
    let cfg = GeneratorConfig {
        n,
        bias,
        ..base.clone()
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn points(cfg: &SweepConfig, base: &GeneratorConfig, base_debias: DebiasConfig) -> Result<Vec<Point>> {
    let values = cfg.values.clone().unwrap_or_else(|| cfg.axis.default_values());
    if values.is_empty() {
        return Err(usage("sweep needs at least one value"));
    }
    values
        .iter()
        .map(|v| {
            let mut p = Point {
                label: v.trim().to_string(),
                gen: base.clone(),
                cal_size: cfg.cal_size,
                debias: base_debias,
            };
            match cfg.axis {
                Axis::Tau => p.debias.tau = parse_value(cfg.axis, v)?,
                Axis::K => p.debias.k = parse_value(cfg.axis, v)?,
                Axis::CalSize => p.cal_size = parse_value(cfg.axis, v)?,
                Axis::N => p.gen = resized(base, parse_value(cfg.axis, v)?)?,
                Axis::Strategy => {
                    p.debias.strategy = toml::Value::String(p.label.clone())
                        .try_into()
                        .map_err(|_| usage(format!("bad strategy {v:?}")))?
                }
                Axis::AttnPrior => p.debias.attention_prior = parse_value(cfg.axis, v)?,
            }
            p.debias.validate().map_err(|e| usage(e.to_string()))?;
            if p.cal_size == 0 {
                return Err(usage("cal_size must be at least 1"));
            }
            Ok(p)
        })
        .collect()
}

struct Data {
    cal: Vec<ladcalib::InferenceTrace>,
    episodes: Vec<Episode>,
}

fn synthesize(gen: &GeneratorConfig, cal_size: usize, episodes: usize, t: usize, orbits: bool) -> Result<Data> {
    let cal = generate_calibration_set(gen, cal_size)?;
    let (_, traces) = generate_eval_episodes(gen, episodes, t, orbits)?;
    Ok(Data {
        cal,
        episodes: episodes_from_traces(traces)?,
    })
}

pub fn sweep(run: &Run, args: &SweepArgs) -> Result<()> {
    let cfg: SweepConfig = run.resolve("sweep", args)?;
    let methods = parse_methods(&cfg.methods)?;
    let base_debias = debias_config(cfg.k, cfg.tau, cfg.strategy, cfg.attention_prior)?;
    if cfg.episodes == 0 || cfg.t == 0 {
        return Err(usage("episodes and t must be at least 1"));
    }
    let base = generator(&cfg.preset, cfg.generator.as_deref(), run.global.seed)?;
    let points = points(&cfg, &base, base_debias)?;
    let orbits = methods.contains(&Method::PermAvg);

    let shared = if cfg.axis.changes_data() {
        None
    } else {
        Some(synthesize(&base, cfg.cal_size, cfg.episodes, cfg.t, orbits)?)
    };
    let mut rows: Vec<(String, Vec<(String, EvalReport)>)> = Vec::new();
    for p in &points {
        log::info!("sweep {:?} = {}", cfg.axis, p.label);
        let own;
        let data = match &shared {
            Some(d) => d,
            None => {
                own = synthesize(&p.gen, p.cal_size, cfg.episodes, cfg.t, orbits)?;
                &own
            }
        };
        let opts = CalibrationOptions {
            smoothing: cfg.smoothing,
            ..CalibrationOptions::default()
        };
        let mut ctx = MethodContext::from_calibration(&data.cal, &opts, p.debias)?;
        ctx.average = cfg.average;
        rows.push((p.label.clone(), ctx.evaluate_all(&methods, &data.episodes)?));
    }

    let out = run.output()?;
    let axis_name = toml::Value::try_from(cfg.axis)?
        .as_str()
        .unwrap_or_default()
        .to_string();
    out.write_with("sweep.csv", |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["axis", "value", "method", "acc_mean", "acc_std", "rstd", "consistency", "samples"])?;
        for (label, reports) in &rows {
            for (method, r) in reports {
                w.write_record([
                    axis_name.clone(),
                    label.clone(),
                    method.clone(),
                    format!("{:.2}", r.acc_mean),
                    format!("{:.2}", r.acc_std),
                    format!("{:.2}", r.rstd),
                    format!("{:.2}", r.consistency),
                    r.samples.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    })?;
    if cfg.plots {
        let series: Vec<Vec<f64>> = (0..methods.len())
            .map(|m| rows.iter().map(|(_, reports)| reports[m].1.acc_mean).collect())
            .collect();
        out.write("sweep.png", &plot::png_bytes(&plot::curves(&series))?)?;
    }
    run.record(&out, "sweep", &cfg)?;

    for (label, reports) in &rows {
        for (method, r) in reports {
            println!(
                "{axis_name}={label} {method}: acc {:.2} +- {:.2}, rstd {:.2}, consistency {:.2}",
                r.acc_mean, r.acc_std, r.rstd, r.consistency
            );
        }
    }
    Ok(())
}
