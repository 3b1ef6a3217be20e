use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use ladcalib::benchgen::{
    build_benchmark, mean_visual_cosine, read_embeddings, verify_filters, BenchmarkMode,
    MiningParams, DEFAULT_TXT_THRESHOLD,
};
use ladcalib::manifest::{assign_shuffles, write_manifest};
use ladcalib::seeds::derive_seed;

use super::{default_t, default_true, require_file, Run};
use crate::config::usage;

#[derive(Debug, Clone, Default, clap::Args, Serialize)]
pub struct MineArgs {
    /// Embedding file, JSONL records or the EMB1 binary format.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    embeddings: Option<PathBuf>,
    /// Episodes to build.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    count: Option<usize>,
    /// Candidates per episode, anchor included.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    n: Option<usize>,
    /// `adversarial` (nearest neighbours) or `random` distractors.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    mode: Option<String>,
    /// Distractors must have text cosine to the anchor below this.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    txt_threshold: Option<f64>,
    /// Reject distractors whose category set equals the anchor's.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    category_filter: Option<bool>,
    /// Shuffled presentations per episode.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    t: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MineConfig {
    embeddings: PathBuf,
    #[serde(default = "default_count")]
    count: usize,
    #[serde(default = "default_n")]
    n: usize,
    #[serde(default = "default_mode")]
    mode: String,
    #[serde(default = "default_txt_threshold")]
    txt_threshold: f64,
    #[serde(default = "default_true")]
    category_filter: bool,
    #[serde(default = "default_t")]
    t: usize,
}

fn default_count() -> usize {
    100
}

fn default_n() -> usize {
    4
}

fn default_mode() -> String {
    BenchmarkMode::Adversarial.to_string()
}

fn default_txt_threshold() -> f64 {
    DEFAULT_TXT_THRESHOLD
}

pub fn mine(run: &Run, args: &MineArgs) -> Result<()> {
    let cfg: MineConfig = run.resolve("mine", args)?;
    require_file(&cfg.embeddings)?;
    let mode: BenchmarkMode = cfg
        .mode
        .parse()
        .map_err(|e: ladcalib::Error| usage(e.to_string()))?;
    if cfg.n < 2 || cfg.t == 0 {
        return Err(usage("n must be at least 2 and t at least 1"));
    }
    let params = MiningParams {
        num_negatives: cfg.n - 1,
        txt_threshold: cfg.txt_threshold,
        exclude_identical_categories: cfg.category_filter,
    };
    params.validate().map_err(|e| usage(e.to_string()))?;

    let file = File::open(&cfg.embeddings)
        .with_context(|| format!("opening {}", cfg.embeddings.display()))?;
    let pool = read_embeddings(BufReader::new(file))
        .with_context(|| format!("reading {}", cfg.embeddings.display()))?;
    let seed = run.global.seed;
    let mut specs = build_benchmark(&pool, cfg.count, cfg.n, mode, seed, &params)?;
    if mode == BenchmarkMode::Adversarial {
        verify_filters(&specs, &pool, &params)?;
    }
    assign_shuffles(&mut specs, cfg.t, derive_seed(seed, "mine-shuffle", &[]));
    let cosine = mean_visual_cosine(&specs, &pool)?;

    let out = run.output()?;
    out.write_with("manifest.jsonl", |buf| write_manifest(buf, &specs))?;
    run.record(&out, "mine", &cfg)?;
    println!(
        "{} {mode} episodes of {} images from {} records; mean anchor-distractor visual cosine {cosine:.4}",
        specs.len(),
        cfg.n,
        pool.len()
    );
    Ok(())
}
