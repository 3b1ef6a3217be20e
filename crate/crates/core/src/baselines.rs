//! Reference predictors the correction is compared against.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::calibration::{smooth_degenerate_rows, AttentionPrior};
use crate::debias::{select_layers, visual_posterior, DebiasConfig};
use crate::error::{Error, Result};
use crate::numeric::{argmax, sum, CompensatedSum};
use crate::scoring::score_candidates;
use crate::trace::{rotation_between, InferenceTrace};

/// Static position prior used by the PriDe-style baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalPrior {
    pub p: Vec<f64>,
}

/// Predictors addressable by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Vanilla,
    Pride,
    PermAvg,
    AttnRaw,
    AttnPure,
    Ours,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Vanilla,
        Method::Pride,
        Method::PermAvg,
        Method::AttnRaw,
        Method::AttnPure,
        Method::Ours,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Vanilla => "vanilla",
            Method::Pride => "pride",
            Method::PermAvg => "perm-avg",
            Method::AttnRaw => "attn-raw",
            Method::AttnPure => "attn-pure",
            Method::Ours => "ours",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Method::ALL.iter().map(|m| m.as_str()).collect();
                Error::Config(format!("unknown method '{s}', expected one of {names:?}"))
            })
    }
}

/// How Permutation Averaging combines identity-aligned candidate scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AverageMode {
    #[default]
    Probability,
    LogProbability,
}

/// Argmax of the raw candidate distribution, 1-based.
pub fn vanilla_predict(trace: &InferenceTrace) -> Result<usize> {
    Ok(argmax(&score_candidates(trace)?.probs) + 1)
}

/// Positionwise mean candidate distribution over the calibration set.
pub fn estimate_global_prior(traces: &[InferenceTrace], smoothing: f64) -> Result<GlobalPrior> {
    let first = traces
        .first()
        .ok_or_else(|| Error::Calibration("calibration set is empty".into()))?;
    let n = first.n();
    let mut acc = vec![CompensatedSum::new(); n];
    for t in traces {
        if t.n() != n {
            return Err(Error::Calibration(format!(
                "mixed candidate counts: {n} and {}",
                t.n()
            )));
        }
        for (a, p) in acc.iter_mut().zip(score_candidates(t)?.probs) {
            a.add(p);
        }
    }
    let count = traces.len() as f64;
    let mut rows = vec![acc.iter().map(|s| s.value() / count).collect::<Vec<_>>()];
    smooth_degenerate_rows(&mut rows, smoothing);
    let p = rows.pop().unwrap_or_default();
    Ok(GlobalPrior { p })
}

/// `argmax_j log P(c_j|x) - log p_j`.
pub fn pride_predict(trace: &InferenceTrace, prior: &GlobalPrior) -> Result<usize> {
    let raw = score_candidates(trace)?;
    if prior.p.len() != raw.len() {
        return Err(Error::Shape(format!(
            "global prior has {} entries, trace has {} candidates",
            prior.p.len(),
            raw.len()
        )));
    }
    if prior.p.iter().any(|p| p.is_nan() || *p <= 0.0) {
        return Err(Error::Calibration("global prior has a non-positive entry".into()));
    }
    let scores: Vec<f64> = raw
        .log_probs
        .iter()
        .zip(&prior.p)
        .map(|(lp, p)| lp - p.ln())
        .collect();
    Ok(argmax(&scores) + 1)
}

/// Average each image's candidate score over a full cyclic orbit and pick
/// the best image identity (lexicographically smallest on ties).
pub fn permutation_average_predict(orbit: &[InferenceTrace], mode: AverageMode) -> Result<String> {
    let base = orbit
        .first()
        .ok_or_else(|| Error::Orbit("orbit is empty".into()))?;
    let n = base.n();
    if orbit.len() != n {
        return Err(Error::Orbit(format!(
            "orbit has {} traces, expected one per cyclic shift ({n})",
            orbit.len()
        )));
    }
    let mut seen = vec![false; n];
    for t in orbit {
        let s = rotation_between(base.images(), t.images()).ok_or_else(|| {
            Error::Orbit(format!(
                "trace {}#{} is not a cyclic shift of the orbit's first ordering",
                t.instance_id(),
                t.shuffle_id()
            ))
        })?;
        if std::mem::replace(&mut seen[s], true) {
            return Err(Error::Orbit(format!("shift {s} appears twice")));
        }
    }

    let mut per_identity: BTreeMap<&str, CompensatedSum> = BTreeMap::new();
    for t in orbit {
        let raw = score_candidates(t)?;
        let values = match mode {
            AverageMode::Probability => &raw.probs,
            AverageMode::LogProbability => &raw.log_probs,
        };
        for (image, v) in t.images().iter().zip(values) {
            per_identity.entry(image.as_str()).or_default().add(*v);
        }
    }
    // BTreeMap iterates identities in lexicographic order; strict `>` keeps
    // the first (smallest) identity on ties.
    let mut best: Option<(&str, f64)> = None;
    for (image, acc) in &per_identity {
        let mean = acc.value() / n as f64;
        if best.is_none_or(|(_, b)| mean > b) {
            best = Some((image, mean));
        }
    }
    Ok(best.map(|(id, _)| id.to_string()).unwrap_or_default())
}

/// Argmax of attention mass summed over the top-`k` layers.
pub fn attention_readout_predict(trace: &InferenceTrace, k: usize) -> usize {
    let layers = select_layers(&crate::debias::layer_strength(trace), k.max(1));
    let totals: Vec<f64> = (0..trace.n())
        .map(|j| sum(layers.iter().map(|&l| trace.attention()[l][j])))
        .collect();
    argmax(&totals) + 1
}

/// Argmax of the visual posterior alone.
pub fn purified_attention_predict(
    trace: &InferenceTrace,
    prior: &AttentionPrior,
    cfg: &DebiasConfig,
) -> Result<usize> {
    Ok(argmax(&visual_posterior(trace, prior, cfg)?.pi) + 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{CandidateTokenization, Continuation, LabelScheme, StepLogits, TraceRecord, EOS_TOKEN};

    /// Single-token trace whose candidate distribution is `probs` exactly.
    fn trace_with(images: &[&str], probs: &[f64], attn: Vec<Vec<f64>>) -> InferenceTrace {
        let n = probs.len();
        let tokens: Vec<i64> = (0..n as i64).map(|k| 100 + k).collect();
        TraceRecord {
            v: 1,
            instance_id: "x".into(),
            shuffle_id: 0,
            n,
            scheme: LabelScheme::UpperAlpha,
            labels: LabelScheme::UpperAlpha.labels(n).unwrap(),
            images: images.iter().map(|s| s.to_string()).collect(),
            gt: None,
            first_step: StepLogits {
                tokens: tokens.clone(),
                logits: probs.iter().map(|p| p.ln()).collect(),
            },
            continuations: tokens
                .iter()
                .map(|&t| Continuation {
                    prefix: vec![t],
                    tokens: vec![EOS_TOKEN],
                    logits: vec![0.0],
                })
                .collect(),
            cand_tokens: tokens
                .iter()
                .map(|&t| CandidateTokenization {
                    ids: vec![t],
                    eos: true,
                })
                .collect(),
            attn,
        }
        .try_into()
        .unwrap()
    }

    #[test]
    fn vanilla_argmax_and_tie_break() {
        let t = trace_with(&["a", "b"], &[0.7, 0.3], vec![vec![0.1, 0.1]]);
        assert_eq!(vanilla_predict(&t).unwrap(), 1);
        let t = trace_with(&["a", "b"], &[0.5, 0.5], vec![vec![0.1, 0.1]]);
        assert_eq!(vanilla_predict(&t).unwrap(), 1);
    }

    #[test]
    fn global_prior_averages() {
        let ts = vec![
            trace_with(&["a", "b"], &[0.9, 0.1], vec![vec![0.1, 0.1]]),
            trace_with(&["a", "b"], &[0.5, 0.5], vec![vec![0.1, 0.1]]),
        ];
        let g = estimate_global_prior(&ts, 1e-4).unwrap();
        assert!((g.p[0] - 0.7).abs() < 1e-12);
        assert!((g.p[1] - 0.3).abs() < 1e-12);
        assert!(estimate_global_prior(&[], 1e-4).is_err());
    }

    #[test]
    fn pride_examples() {
        let t = trace_with(&["a", "b"], &[0.6, 0.4], vec![vec![0.1, 0.1]]);
        let p = GlobalPrior { p: vec![0.75, 0.25] };
        assert_eq!(pride_predict(&t, &p).unwrap(), 2);
        let u = GlobalPrior { p: vec![0.5, 0.5] };
        assert_eq!(pride_predict(&t, &u).unwrap(), vanilla_predict(&t).unwrap());
    }

    #[test]
    fn permutation_average_aligns_identities() {
        let orbit = vec![
            trace_with(&["A", "B"], &[0.9, 0.1], vec![vec![0.1, 0.1]]),
            trace_with(&["B", "A"], &[0.4, 0.6], vec![vec![0.1, 0.1]]),
        ];
        assert_eq!(
            permutation_average_predict(&orbit, AverageMode::Probability).unwrap(),
            "A"
        );
        let reversed: Vec<_> = orbit.iter().rev().cloned().collect();
        assert_eq!(
            permutation_average_predict(&reversed, AverageMode::Probability).unwrap(),
            "A"
        );
        assert_eq!(
            permutation_average_predict(&orbit, AverageMode::LogProbability).unwrap(),
            "A"
        );
    }

    #[test]
    fn permutation_average_rejects_bad_orbits() {
        let a = trace_with(&["A", "B", "C"], &[0.4, 0.3, 0.3], vec![vec![0.1; 3]]);
        let b = trace_with(&["B", "C", "A"], &[0.4, 0.3, 0.3], vec![vec![0.1; 3]]);
        let swapped = trace_with(&["A", "C", "B"], &[0.4, 0.3, 0.3], vec![vec![0.1; 3]]);
        assert!(permutation_average_predict(&[a.clone(), b.clone()], AverageMode::Probability).is_err());
        assert!(permutation_average_predict(
            &[a.clone(), b.clone(), swapped],
            AverageMode::Probability
        )
        .is_err());
        assert!(permutation_average_predict(&[a.clone(), b, a], AverageMode::Probability).is_err());
    }

    #[test]
    fn attention_readout() {
        let t = trace_with(
            &["a", "b", "c"],
            &[0.3, 0.3, 0.4],
            vec![vec![0.01, 0.02, 0.5], vec![0.1, 0.1, 0.1], vec![0.0, 0.0, 0.0]],
        );
        assert_eq!(attention_readout_predict(&t, 2), 3);
        let u = trace_with(&["a", "b"], &[0.3, 0.7], vec![vec![0.2, 0.2]]);
        assert_eq!(attention_readout_predict(&u, 2), 1);
    }

    #[test]
    fn purified_attention_is_tau_invariant() {
        let t = trace_with(
            &["a", "b", "c"],
            &[0.3, 0.3, 0.4],
            vec![vec![0.4, 0.1, 0.2]],
        );
        let prior = AttentionPrior {
            rows: vec![vec![0.5, 0.05, 0.1]],
        };
        let picks: Vec<usize> = [1.0, 5.0, 50.0]
            .iter()
            .map(|&tau| {
                let cfg = DebiasConfig {
                    tau,
                    ..Default::default()
                };
                purified_attention_predict(&t, &prior, &cfg).unwrap()
            })
            .collect();
        assert_eq!(picks, vec![2, 2, 2]);
        assert_eq!(attention_readout_predict(&t, 2), 1);

        let same = AttentionPrior {
            rows: t.attention().to_vec(),
        };
        assert_eq!(
            purified_attention_predict(&t, &same, &DebiasConfig::default()).unwrap(),
            1
        );
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("sofa".parse::<Method>().is_err());
    }
}
