//! Inference-time attention-guided correction.
//!
//! For a test trace:
//!
//! 1. score each layer by the total attention mass it sends to the images and
//!    keep the top `K` layers,
//! 2. divide the raw per-image attention by the static prior (a difference in
//!    log space), average over the kept layers and sharpen with `tau` to get a
//!    visual posterior `pi` over candidate positions,
//! 3. mix the conditional bias rows under `pi` to get an instance-specific
//!    prior over output positions,
//! 4. subtract that prior from the observed candidate log-probabilities.

use serde::{Deserialize, Serialize};

use crate::calibration::{AttentionPrior, CalibrationProfile, ConditionalBiasMatrix, ATTENTION_FLOOR};
use crate::error::{Error, Result};
use crate::numeric::{argmax, logsumexp, softmax, sum};
use crate::scoring::{score_candidates, CandidateProbabilities};
use crate::trace::InferenceTrace;

pub const DEFAULT_TOP_K: usize = 2;
pub const DEFAULT_TAU: f64 = 5.0;

/// How informative layers are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerStrategy {
    /// Top-`K` layers by image attention mass, chosen per instance.
    #[default]
    Dynamic,
    /// Every layer.
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DebiasConfig {
    pub k: usize,
    pub tau: f64,
    #[serde(default)]
    pub strategy: LayerStrategy,
    /// Divide attention by the static prior before forming the posterior.
    #[serde(default = "default_true")]
    pub attention_prior: bool,
}

fn default_true() -> bool {
    true
}

impl Default for DebiasConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_TOP_K,
            tau: DEFAULT_TAU,
            strategy: LayerStrategy::Dynamic,
            attention_prior: true,
        }
    }
}

impl DebiasConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("K must be >= 1".into()));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("tau must be > 0, got {}", self.tau)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VisualPosterior {
    pub pi: Vec<f64>,
    /// Selected layers, 1-based, ascending.
    pub selected_layers: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DebiasResult {
    /// 1-based.
    pub predicted_index: usize,
    pub calibrated_log_scores: Vec<f64>,
    pub calibrated_probs: Vec<f64>,
    pub posterior: VisualPosterior,
    pub expected_prior: Vec<f64>,
    pub raw_probs: CandidateProbabilities,
}

/// Per-layer image attention mass `S^(l) = sum_k a^(l)_k`.
pub fn layer_strength(trace: &InferenceTrace) -> Vec<f64> {
    trace
        .attention()
        .iter()
        .map(|row| sum(row.iter().copied()))
        .collect()
}

/// 0-based indices of the `k` largest strengths, ties toward lower index,
/// returned ascending. `k >= len` selects everything.
pub fn select_layers(strength: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..strength.len()).collect();
    order.sort_by(|&a, &b| strength[b].total_cmp(&strength[a]).then(a.cmp(&b)));
    order.truncate(k.min(strength.len()));
    order.sort_unstable();
    order
}

fn chosen_layers(trace: &InferenceTrace, cfg: &DebiasConfig) -> Vec<usize> {
    match cfg.strategy {
        LayerStrategy::Dynamic => select_layers(&layer_strength(trace), cfg.k),
        LayerStrategy::All => (0..trace.layers()).collect(),
    }
}

/// Averaged log attention-to-prior ratio over the given layers.
pub fn purified_log_evidence(
    attention: &[Vec<f64>],
    prior: Option<&AttentionPrior>,
    layers: &[usize],
) -> Vec<f64> {
    let n = attention.first().map_or(0, Vec::len);
    let scale = 1.0 / layers.len() as f64;
    (0..n)
        .map(|k| {
            let total = sum(layers.iter().map(|&l| {
                let a = attention[l][k].max(ATTENTION_FLOOR).ln();
                let p = prior.map_or(0.0, |p| p.rows[l][k].ln());
                a - p
            }));
            total * scale
        })
        .collect()
}

/// Temperature-sharpened posterior over candidate positions.
pub fn visual_posterior(
    trace: &InferenceTrace,
    prior: &AttentionPrior,
    cfg: &DebiasConfig,
) -> Result<VisualPosterior> {
    cfg.validate()?;
    if prior.layers() != trace.layers() || prior.width() != trace.n() {
        return Err(Error::Shape(format!(
            "attention prior is {}x{}, trace attention is {}x{}",
            prior.layers(),
            prior.width(),
            trace.layers(),
            trace.n()
        )));
    }
    let layers = chosen_layers(trace, cfg);
    let evidence = purified_log_evidence(
        trace.attention(),
        cfg.attention_prior.then_some(prior),
        &layers,
    );
    Ok(VisualPosterior {
        pi: posterior_from_evidence(&evidence, cfg.tau),
        selected_layers: layers.iter().map(|l| l + 1).collect(),
    })
}

/// `softmax(tau * v)`.
pub fn posterior_from_evidence(evidence: &[f64], tau: f64) -> Vec<f64> {
    let scaled: Vec<f64> = evidence.iter().map(|v| v * tau).collect();
    softmax(&scaled)
}

/// `P_prior(j | x) = sum_k pi_k P_bias(j | k)`.
pub fn expected_prior(pi: &[f64], bias: &ConditionalBiasMatrix) -> Result<Vec<f64>> {
    let n = bias.n();
    if pi.len() != n {
        return Err(Error::Shape(format!(
            "posterior has {} entries, bias matrix is {n}x{n}",
            pi.len()
        )));
    }
    Ok((0..n)
        .map(|j| sum(pi.iter().zip(&bias.rows).map(|(w, row)| w * row[j])))
        .collect())
}

/// Calibrated log-scores `log P_obs(c_j|x) - log P_prior(j|x)` and their
/// softmax.
pub fn debias_scores(
    raw: &CandidateProbabilities,
    prior: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    if prior.len() != raw.len() {
        return Err(Error::Shape(format!(
            "prior has {} entries, {} candidates",
            prior.len(),
            raw.len()
        )));
    }
    if let Some(j) = prior.iter().position(|p| p.is_nan() || *p <= 0.0) {
        return Err(Error::Calibration(format!(
            "expected prior entry {} is not positive ({})",
            j + 1,
            prior[j]
        )));
    }
    let scores: Vec<f64> = raw
        .log_probs
        .iter()
        .zip(prior)
        .map(|(lp, p)| lp - p.ln())
        .collect();
    let lse = logsumexp(&scores);
    let probs = scores.iter().map(|s| (s - lse).exp()).collect();
    Ok((scores, probs))
}

/// Full correction for one trace.
pub fn predict(
    trace: &InferenceTrace,
    profile: &CalibrationProfile,
    cfg: &DebiasConfig,
) -> Result<DebiasResult> {
    profile.check_compatible(trace)?;
    let raw_probs = score_candidates(trace)?;
    let posterior = visual_posterior(trace, &profile.attn_prior, cfg)?;
    let prior = expected_prior(&posterior.pi, &profile.bias)?;
    let (scores, probs) = debias_scores(&raw_probs, &prior)?;
    Ok(DebiasResult {
        predicted_index: argmax(&scores) + 1,
        calibrated_log_scores: scores,
        calibrated_probs: probs,
        posterior,
        expected_prior: prior,
        raw_probs,
    })
}
