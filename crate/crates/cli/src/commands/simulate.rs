use std::path::PathBuf;

use anyhow::Result;
use serde::{Deserialize, Serialize};

use ladcalib::manifest::write_manifest;
use ladcalib::synthetic::{generate_calibration_set, generate_eval_episodes};
use ladcalib::trace::write_traces;

use super::{default_cal_size, default_preset, default_t, generator, Run};
use crate::config::usage;

#[derive(Debug, Clone, Default, clap::Args, Serialize)]
pub struct SimulateArgs {
    /// Shipped generator preset.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    preset: Option<String>,
    /// Generator TOML file; takes precedence over --preset.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    generator: Option<PathBuf>,
    /// Evaluation episodes.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    episodes: Option<usize>,
    /// Shuffled presentations per episode.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    t: Option<usize>,
    /// Base calibration instances, each replicated under all N shifts.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    cal_size: Option<usize>,
    /// Emit every cyclic shift of each presentation (needed by perm-avg).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    orbits: Option<bool>,
    /// Turn off logit and attention noise.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    noiseless: Option<bool>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateConfig {
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
    #[serde(default)]
    orbits: bool,
    #[serde(default)]
    noiseless: bool,
}

fn default_episodes() -> usize {
    1000
}

pub fn simulate(run: &Run, args: &SimulateArgs) -> Result<()> {
    let cfg: SimulateConfig = run.resolve("simulate", args)?;
    if cfg.episodes == 0 || cfg.t == 0 || cfg.cal_size == 0 {
        return Err(usage("episodes, t and cal_size must all be at least 1"));
    }
    let mut gen = generator(&cfg.preset, cfg.generator.as_deref(), run.global.seed)?;
    if cfg.noiseless {
        gen = gen.noiseless();
    }

    let cal = generate_calibration_set(&gen, cfg.cal_size)?;
    let (specs, eval) = generate_eval_episodes(&gen, cfg.episodes, cfg.t, cfg.orbits)?;

    let out = run.output()?;
    out.write_with("cal_traces.jsonl", |buf| write_traces(buf, &cal))?;
    out.write_with("eval_traces.jsonl", |buf| write_traces(buf, &eval))?;
    out.write_with("manifest.jsonl", |buf| write_manifest(buf, &specs))?;
    out.write("generator.toml", gen.to_toml()?.as_bytes())?;
    run.record(&out, "simulate", &cfg)?;
    println!(
        "{} calibration traces, {} evaluation traces ({} episodes x {} shuffles{})",
        cal.len(),
        eval.len(),
        cfg.episodes,
        cfg.t,
        if cfg.orbits { ", full orbits" } else { "" }
    );
    Ok(())
}
