use std::io::Write;
use std::path::PathBuf;

use anyhow::Result;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use ladcalib::baselines::AverageMode;
use ladcalib::evaluation::{
    divergence_report, episodes_from_traces, logit_profile_report, write_confusion_csv,
    write_divergence_csv, write_profiles_csv, write_recalls_csv, write_summary_csv, EvalReport,
};
use ladcalib::{DebiasResult, LayerStrategy};

use super::{
    debias_config, default_k, default_smoothing, default_tau, default_true, method_context,
    parse_methods, read_trace_file, require_file, CalibrationArgs, DebiasArgs, Run,
};
use crate::config::usage;
use crate::plot;

#[derive(Debug, Clone, Default, clap::Args, Serialize)]
pub struct EvaluateArgs {
    /// Evaluation traces (JSONL) with ground truth.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    traces: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    calibration: CalibrationArgs,
    /// Predictors to run, comma separated, or `all`.
    #[arg(long = "method", value_delimiter = ',')]
    #[serde(rename = "methods", skip_serializing_if = "Option::is_none")]
    methods: Option<Vec<String>>,
    #[command(flatten)]
    #[serde(flatten)]
    debias: DebiasArgs,
    /// perm-avg combination: `probability` or `log-probability`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    average: Option<String>,
    /// Also write one confusion heatmap PNG per method.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    plots: Option<bool>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvaluateConfig {
    traces: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    calibration: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    profile: Option<PathBuf>,
    #[serde(default = "default_smoothing")]
    smoothing: f64,
    #[serde(default)]
    methods: Option<Vec<String>>,
    #[serde(default = "default_k")]
    k: usize,
    #[serde(default = "default_tau")]
    tau: f64,
    #[serde(default)]
    strategy: LayerStrategy,
    #[serde(default = "default_true")]
    attention_prior: bool,
    #[serde(default)]
    average: AverageMode,
    #[serde(default)]
    plots: bool,
}

#[derive(Serialize)]
struct MethodReport<'a> {
    method: &'a str,
    #[serde(flatten)]
    report: &'a EvalReport,
}

pub fn evaluate(run: &Run, section: &str, args: &EvaluateArgs, default_methods: &[&str]) -> Result<()> {
    let mut cfg: EvaluateConfig = run.resolve(section, args)?;
    let names = cfg
        .methods
        .get_or_insert_with(|| default_methods.iter().map(|s| s.to_string()).collect())
        .clone();
    let methods = parse_methods(&names)?;
    let debias = debias_config(cfg.k, cfg.tau, cfg.strategy, cfg.attention_prior)?;
    for path in [Some(&cfg.traces), cfg.calibration.as_ref(), cfg.profile.as_ref()]
        .into_iter()
        .flatten()
    {
        require_file(path)?;
    }

    let ctx = method_context(
        cfg.calibration.as_deref(),
        cfg.profile.as_deref(),
        cfg.smoothing,
        debias,
        cfg.average,
    )?;
    let episodes = episodes_from_traces(read_trace_file(&cfg.traces)?)?;
    let reports = ctx.evaluate_all(&methods, &episodes)?;

    let out = run.output()?;
    out.write_with("summary.csv", |buf| write_summary_csv(buf, &reports))?;
    out.write_with("confusion.csv", |buf| write_confusion_csv(buf, &reports))?;
    out.write_with("recalls.csv", |buf| write_recalls_csv(buf, &reports))?;
    let listing: Vec<MethodReport> = reports
        .iter()
        .map(|(method, report)| MethodReport { method, report })
        .collect();
    let mut json = serde_json::to_vec_pretty(&listing)?;
    json.push(b'\n');
    out.write("report.json", &json)?;
    if cfg.plots {
        for (method, report) in &reports {
            let png = plot::png_bytes(&plot::confusion_heatmap(&report.confusion))?;
            out.write(&format!("confusion-{method}.png"), &png)?;
        }
    }
    run.record(&out, section, &cfg)?;

    let mut table = Vec::new();
    write_summary_csv(&mut table, &reports)?;
    std::io::stdout().write_all(&table)?;
    Ok(())
}

#[derive(Debug, Clone, Default, clap::Args, Serialize)]
pub struct PredictArgs {
    /// Traces (JSONL) to correct; ground truth is optional.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    traces: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    calibration: CalibrationArgs,
    #[command(flatten)]
    #[serde(flatten)]
    debias: DebiasArgs,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictConfig {
    traces: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    calibration: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    profile: Option<PathBuf>,
    #[serde(default = "default_smoothing")]
    smoothing: f64,
    #[serde(default = "default_k")]
    k: usize,
    #[serde(default = "default_tau")]
    tau: f64,
    #[serde(default)]
    strategy: LayerStrategy,
    #[serde(default = "default_true")]
    attention_prior: bool,
}

#[derive(Serialize)]
struct PredictionRecord<'a> {
    instance_id: &'a str,
    shuffle_id: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    gt: Option<usize>,
    #[serde(flatten)]
    result: DebiasResult,
}

pub fn predict(run: &Run, args: &PredictArgs) -> Result<()> {
    let cfg: PredictConfig = run.resolve("predict", args)?;
    let debias = debias_config(cfg.k, cfg.tau, cfg.strategy, cfg.attention_prior)?;
    if cfg.calibration.is_none() && cfg.profile.is_none() {
        return Err(usage("predict needs --calibration or --profile"));
    }
    for path in [Some(&cfg.traces), cfg.calibration.as_ref(), cfg.profile.as_ref()]
        .into_iter()
        .flatten()
    {
        require_file(path)?;
    }
    let ctx = method_context(
        cfg.calibration.as_deref(),
        cfg.profile.as_deref(),
        cfg.smoothing,
        debias,
        AverageMode::default(),
    )?;
    let profile = ctx.profile.as_ref().expect("calibration source checked above");
    let traces = read_trace_file(&cfg.traces)?;
    let lines: Vec<String> = traces
        .par_iter()
        .map(|t| {
            let record = PredictionRecord {
                instance_id: t.instance_id(),
                shuffle_id: t.shuffle_id(),
                gt: t.gt(),
                result: ladcalib::predict(t, profile, &debias)?,
            };
            Ok(serde_json::to_string(&record)?)
        })
        .collect::<Result<_>>()?;
    let mut body = lines.join("\n");
    body.push('\n');

    let out = run.output()?;
    out.write("predictions.jsonl", body.as_bytes())?;
    run.record(&out, "predict", &cfg)?;
    println!("{} predictions", lines.len());
    Ok(())
}

#[derive(Debug, Clone, Default, clap::Args, Serialize)]
pub struct DiagnoseArgs {
    /// Traces (JSONL) with ground truth.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    traces: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    calibration: CalibrationArgs,
    #[command(flatten)]
    #[serde(flatten)]
    debias: DebiasArgs,
}

type DiagnoseConfig = PredictConfig;

pub fn diagnose(run: &Run, args: &DiagnoseArgs) -> Result<()> {
    let cfg: DiagnoseConfig = run.resolve("diagnose", args)?;
    let debias = debias_config(cfg.k, cfg.tau, cfg.strategy, cfg.attention_prior)?;
    for path in [Some(&cfg.traces), cfg.calibration.as_ref(), cfg.profile.as_ref()]
        .into_iter()
        .flatten()
    {
        require_file(path)?;
    }
    let ctx = method_context(
        cfg.calibration.as_deref(),
        cfg.profile.as_deref(),
        cfg.smoothing,
        debias,
        AverageMode::default(),
    )?;
    let traces = read_trace_file(&cfg.traces)?;
    let profiles = logit_profile_report(&traces)?;
    let prior = ctx.profile.as_ref().map(|p| &p.attn_prior);
    let divergence = divergence_report(&traces, &debias, prior)?;

    let out = run.output()?;
    out.write_with("profiles.csv", |buf| write_profiles_csv(buf, &profiles))?;
    out.write_with("divergence.csv", |buf| write_divergence_csv(buf, &divergence))?;
    run.record(&out, "diagnose", &cfg)?;
    print!(
        "attention argmax accuracy {:.2}, logit argmax accuracy {:.2}",
        divergence.attention_accuracy, divergence.logit_accuracy
    );
    match divergence.purified_accuracy {
        Some(p) => println!(", purified attention accuracy {p:.2}"),
        None => println!(),
    }
    Ok(())
}
