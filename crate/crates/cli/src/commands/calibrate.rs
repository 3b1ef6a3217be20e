use std::path::PathBuf;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Result;
use serde::{Deserialize, Serialize};

use ladcalib::{build_profile, CalibrationOptions};

use super::{default_smoothing, read_trace_file, require_file, Run};
use crate::config::usage;

#[derive(Debug, Clone, Default, clap::Args, Serialize)]
pub struct CalibrateArgs {
    /// Symmetrized calibration traces (JSONL).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    traces: Option<PathBuf>,
    /// Weight of the uniform mixture applied to degenerate rows.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    smoothing: Option<f64>,
    /// Timestamp stored in the profile; defaults to now.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    created_unix: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CalibrateConfig {
    traces: PathBuf,
    #[serde(default = "default_smoothing")]
    smoothing: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    created_unix: Option<u64>,
}

pub fn calibrate(run: &Run, args: &CalibrateArgs) -> Result<()> {
    let mut cfg: CalibrateConfig = run.resolve("calibrate", args)?;
    require_file(&cfg.traces)?;
    if !(0.0..1.0).contains(&cfg.smoothing) {
        return Err(usage(format!("smoothing {} outside [0, 1)", cfg.smoothing)));
    }
    let created_unix = *cfg.created_unix.get_or_insert_with(|| {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs())
    });

    let traces = read_trace_file(&cfg.traces)?;
    let profile = build_profile(
        &traces,
        &CalibrationOptions {
            smoothing: cfg.smoothing,
            created_unix,
        },
    )?;

    let out = run.output()?;
    out.write_with("profile.json", |buf| profile.write(buf))?;
    run.record(&out, "calibrate", &cfg)?;
    println!(
        "gamma = {:.4} (N = {}, {} layers, {} base instances)",
        profile.gamma, profile.n, profile.layers, profile.meta.cal_size
    );
    Ok(())
}
