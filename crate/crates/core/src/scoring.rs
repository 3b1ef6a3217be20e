//! Joint candidate probabilities from restricted step logits.
//!
//! Each candidate identifier is a token path through a prefix-shared tree.
//! At every step the logit of the taken token is normalized only over the
//! tokens that continue some candidate (the restricted softmax), and the
//! per-step log-probabilities are summed along the path. Because every
//! interior node normalizes over exactly its children, the candidate
//! probabilities sum to one regardless of how identifiers tokenize.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numeric::logsumexp;
use crate::trace::{InferenceTrace, EOS_TOKEN};

/// Floor applied to candidate probabilities before any downstream log.
pub const PROB_FLOOR: f64 = 1e-300;

/// Normalized distribution over the `N` candidates of a trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateProbabilities {
    pub probs: Vec<f64>,
    pub log_probs: Vec<f64>,
}

impl CandidateProbabilities {
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Builds from unnormalized log-scores, normalizing in the log domain
    /// and applying [`PROB_FLOOR`].
    pub fn from_log_scores(scores: &[f64]) -> Self {
        let lse = logsumexp(scores);
        let floor_log = PROB_FLOOR.ln();
        let log_probs: Vec<f64> = scores.iter().map(|s| (s - lse).max(floor_log)).collect();
        let probs = log_probs.iter().map(|l| l.exp().max(PROB_FLOOR)).collect();
        CandidateProbabilities { probs, log_probs }
    }
}

fn restricted_log_prob(tokens: &[i64], logits: &[f64], token: i64) -> Option<f64> {
    let pos = tokens.iter().position(|&t| t == token)?;
    Some(logits[pos] - logsumexp(logits))
}

/// Compute `P(c_k | x)` for every candidate of the trace.
pub fn score_candidates(trace: &InferenceTrace) -> Result<CandidateProbabilities> {
    let first = trace.first_step();
    if first.logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("first-step logits"));
    }
    let first_norm = logsumexp(&first.logits);

    let mut scores = Vec::with_capacity(trace.n());
    for (k, cand) in trace.cand_tokens().iter().enumerate() {
        let t0 = cand.ids[0];
        let pos = first
            .tokens
            .iter()
            .position(|&t| t == t0)
            .ok_or_else(|| {
                Error::ScoringTree(format!(
                    "first token {t0} of candidate {} not in the first step",
                    k + 1
                ))
            })?;
        let mut lp = first.logits[pos] - first_norm;

        let steps = cand.ids.len() - 1 + usize::from(cand.eos);
        for j in 1..=steps {
            let prefix = &cand.ids[..j];
            let token = cand.ids.get(j).copied().unwrap_or(EOS_TOKEN);
            let cont = trace.continuation(prefix).ok_or_else(|| {
                Error::ScoringTree(format!("missing continuation for prefix {prefix:?}"))
            })?;
            lp += restricted_log_prob(&cont.tokens, &cont.logits, token).ok_or_else(|| {
                Error::ScoringTree(format!(
                    "token {token} not valid after prefix {prefix:?}"
                ))
            })?;
        }
        if !lp.is_finite() {
            return Err(Error::NonFinite("candidate log-probability"));
        }
        scores.push(lp);
    }
    Ok(CandidateProbabilities::from_log_scores(&scores))
}
