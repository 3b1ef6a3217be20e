//! Conditional position-bias and attention-prior estimation.
//!
//! Input is a symmetrized calibration set: every base instance appears once
//! under each cyclic shift, so the ground truth visits every position equally
//! often. From it we estimate
//!
//! * the observed conditional choice matrix `P_obs(j | i)` (mean candidate
//!   distribution over traces whose ground truth sits at `i`),
//! * the visual gain `gamma`, the largest diagonal-to-off-diagonal ratio in
//!   `P_obs` (the bias is assumed never to favour the ground truth),
//! * the conditional bias `P_bias(j | i)`, i.e. `P_obs` with the diagonal
//!   divided by `gamma`, rows renormalized,
//! * the static attention prior, the mean per-layer attention vector.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{sum, CompensatedSum};
use crate::scoring::score_candidates;
use crate::trace::{InferenceTrace, LabelScheme};

pub const PROFILE_VERSION: u32 = 1;

/// Default mixing weight toward the uniform row.
pub const DEFAULT_SMOOTHING: f64 = 1e-4;

/// Floor for attention-prior entries.
pub const ATTENTION_FLOOR: f64 = 1e-12;

const ROW_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOptions {
    /// Mixing weight `lambda` in `P <- (1 - lambda) P + lambda / N`.
    pub smoothing: f64,
    /// Recorded verbatim in the profile metadata.
    pub created_unix: u64,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            smoothing: DEFAULT_SMOOTHING,
            created_unix: 0,
        }
    }
}

/// `P_obs(j | i)` with the number of traces behind each row.
#[derive(Debug, Clone, PartialEq)]
pub struct ObsMatrix {
    pub rows: Vec<Vec<f64>>,
    pub counts: Vec<usize>,
}

impl ObsMatrix {
    pub fn n(&self) -> usize {
        self.rows.len()
    }
}

/// Row-stochastic `P_bias(j | i)`, row `i` is the bias profile when the
/// ground truth is at position `i + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConditionalBiasMatrix {
    pub rows: Vec<Vec<f64>>,
}

impl ConditionalBiasMatrix {
    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            rows: vec![vec![1.0 / n as f64; n]; n],
        }
    }
}

/// Static per-layer attention prior, `L x N`, strictly positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AttentionPrior {
    pub rows: Vec<Vec<f64>>,
}

impl AttentionPrior {
    pub fn layers(&self) -> usize {
        self.rows.len()
    }

    pub fn width(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }
}

/// Outcome of the visual-gain estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaEstimate {
    /// Estimate after clamping at 1.
    pub gamma: f64,
    /// Largest observed ratio before clamping.
    pub raw: f64,
    /// `(i, j)` (0-based) attaining the maximum ratio.
    pub argmax: (usize, usize),
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileMeta {
    pub cal_size: usize,
    pub layers: usize,
    pub smoothing: f64,
    pub created_unix: u64,
}

/// Everything inference-time correction needs from calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationProfile {
    pub v: u32,
    pub n: usize,
    pub scheme: LabelScheme,
    pub layers: usize,
    pub gamma: f64,
    pub bias: ConditionalBiasMatrix,
    pub attn_prior: AttentionPrior,
    pub meta: ProfileMeta,
}

impl CalibrationProfile {
    /// Validate shapes and component invariants.
    pub fn validate(&self) -> Result<()> {
        if self.v != PROFILE_VERSION {
            return Err(Error::Calibration(format!(
                "unsupported profile version {}",
                self.v
            )));
        }
        let n = self.n;
        if n < 2 {
            return Err(Error::Calibration(format!("n must be >= 2, got {n}")));
        }
        if !(self.gamma >= 1.0 && self.gamma.is_finite()) {
            return Err(Error::Calibration(format!(
                "gamma must be finite and >= 1, got {}",
                self.gamma
            )));
        }
        if self.bias.n() != n || self.bias.rows.iter().any(|r| r.len() != n) {
            return Err(Error::Shape(format!("bias matrix is not {n}x{n}")));
        }
        for (i, row) in self.bias.rows.iter().enumerate() {
            if row.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                return Err(Error::Calibration(format!(
                    "bias row {} has a non-positive entry",
                    i + 1
                )));
            }
            let s = sum(row.iter().copied());
            if (s - 1.0).abs() > ROW_TOLERANCE {
                return Err(Error::Calibration(format!(
                    "bias row {} sums to {s}",
                    i + 1
                )));
            }
        }
        if self.attn_prior.layers() != self.layers
            || self.layers == 0
            || self.attn_prior.rows.iter().any(|r| r.len() != n)
        {
            return Err(Error::Shape(format!(
                "attention prior is not {}x{n}",
                self.layers
            )));
        }
        if self
            .attn_prior
            .rows
            .iter()
            .flatten()
            .any(|x| !(x.is_finite() && *x >= ATTENTION_FLOOR))
        {
            return Err(Error::Calibration(
                "attention prior has an entry below the floor".into(),
            ));
        }
        Ok(())
    }

    /// Hard error unless the trace has this profile's `(N, scheme, L)` key.
    pub fn check_compatible(&self, trace: &InferenceTrace) -> Result<()> {
        if trace.n() != self.n {
            return Err(Error::ProfileMismatch(format!(
                "trace has n = {}, profile n = {}",
                trace.n(),
                self.n
            )));
        }
        if trace.scheme() != self.scheme {
            return Err(Error::ProfileMismatch(format!(
                "trace scheme {} vs profile scheme {}",
                trace.scheme(),
                self.scheme
            )));
        }
        if trace.layers() != self.layers {
            return Err(Error::ProfileMismatch(format!(
                "trace has {} layers, profile {}",
                trace.layers(),
                self.layers
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let all_finite = self.gamma.is_finite()
            && self.bias.rows.iter().flatten().all(|x| x.is_finite())
            && self.attn_prior.rows.iter().flatten().all(|x| x.is_finite());
        if !all_finite {
            return Err(Error::NonFinite("profile"));
        }
        Ok(serde_json::to_string(self)?)
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(self.to_json()?.as_bytes())?;
        out.write_all(b"\n")?;
        Ok(())
    }

    pub fn read<R: Read>(input: R) -> Result<Self> {
        let profile: CalibrationProfile = serde_json::from_reader(input)?;
        profile.validate()?;
        Ok(profile)
    }
}

/// Mix a distribution toward uniform: `(1 - lambda) p + lambda / N`.
pub fn smooth_row(row: &[f64], lambda: f64) -> Vec<f64> {
    let n = row.len() as f64;
    row.iter().map(|p| (1.0 - lambda) * p + lambda / n).collect()
}

/// Applies [`smooth_row`] only to rows that have an entry below `lambda`,
/// which is where ratios and logs downstream would blow up. Rows away from
/// zero pass through untouched.
pub fn smooth_degenerate_rows(rows: &mut [Vec<f64>], lambda: f64) {
    if lambda <= 0.0 {
        return;
    }
    for row in rows.iter_mut() {
        if row.iter().any(|&p| p < lambda) {
            *row = smooth_row(row, lambda);
        }
    }
}

/// Build `P_obs` from `(gt_position, candidate distribution)` pairs.
pub fn obs_matrix_from_distributions(
    samples: &[(usize, Vec<f64>)],
    n: usize,
    smoothing: f64,
) -> Result<ObsMatrix> {
    if n < 2 {
        return Err(Error::Calibration(format!("n must be >= 2, got {n}")));
    }
    let mut sums = vec![vec![CompensatedSum::new(); n]; n];
    let mut counts = vec![0usize; n];
    for (gt, dist) in samples {
        if !(1..=n).contains(gt) {
            return Err(Error::Calibration(format!("gt {gt} outside 1..={n}")));
        }
        if dist.len() != n {
            return Err(Error::Calibration(format!(
                "distribution has {} entries, expected {n}",
                dist.len()
            )));
        }
        counts[gt - 1] += 1;
        for (acc, p) in sums[gt - 1].iter_mut().zip(dist) {
            acc.add(*p);
        }
    }
    if let Some(i) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Calibration(format!(
            "no calibration trace has its ground truth at position {}",
            i + 1
        )));
    }
    let (min, max) = (
        *counts.iter().min().unwrap(),
        *counts.iter().max().unwrap(),
    );
    if max > 2 * min {
        warn!("unequal ground-truth coverage in calibration set: counts {counts:?}");
    }
    let mut rows: Vec<Vec<f64>> = sums
        .iter()
        .zip(&counts)
        .map(|(row, &c)| row.iter().map(|s| s.value() / c as f64).collect())
        .collect();
    smooth_degenerate_rows(&mut rows, smoothing);
    Ok(ObsMatrix { rows, counts })
}

fn check_homogeneous(traces: &[InferenceTrace]) -> Result<(usize, LabelScheme, usize)> {
    let first = traces
        .first()
        .ok_or_else(|| Error::Calibration("calibration set is empty".into()))?;
    let key = (first.n(), first.scheme(), first.layers());
    for t in traces {
        if t.n() != key.0 {
            return Err(Error::Calibration(format!(
                "mixed candidate counts: {} and {}",
                key.0,
                t.n()
            )));
        }
        if t.scheme() != key.1 {
            return Err(Error::Calibration(format!(
                "mixed label schemes: {} and {}",
                key.1,
                t.scheme()
            )));
        }
        if t.layers() != key.2 {
            return Err(Error::Calibration(format!(
                "mixed layer counts: {} and {}",
                key.2,
                t.layers()
            )));
        }
    }
    Ok(key)
}

/// `P_obs` from calibration traces; every trace must carry its ground truth.
pub fn estimate_obs_matrix(traces: &[InferenceTrace], smoothing: f64) -> Result<ObsMatrix> {
    let (n, _, _) = check_homogeneous(traces)?;
    let samples = traces
        .par_iter()
        .map(|t| {
            let gt = t.gt().ok_or_else(|| {
                Error::Calibration(format!(
                    "trace {}#{} has no ground truth",
                    t.instance_id(),
                    t.shuffle_id()
                ))
            })?;
            Ok((gt, score_candidates(t)?.probs))
        })
        .collect::<Result<Vec<_>>>()?;
    obs_matrix_from_distributions(&samples, n, smoothing)
}

/// Largest `P_obs(i|i) / P_obs(j|i)` over `j != i`, clamped below at 1.
pub fn estimate_gamma(obs: &ObsMatrix) -> Result<GammaEstimate> {
    let n = obs.n();
    if n < 2 {
        return Err(Error::Calibration(format!("n must be >= 2, got {n}")));
    }
    let mut raw = f64::NEG_INFINITY;
    let mut argmax = (0, 1);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let ratio = obs.rows[i][i] / obs.rows[i][j];
            if ratio > raw {
                raw = ratio;
                argmax = (i, j);
            }
        }
    }
    if !raw.is_finite() {
        return Err(Error::Calibration(format!(
            "visual gain ratio is not finite ({raw}); is an off-diagonal probability zero?"
        )));
    }
    let clamped = raw < 1.0;
    if clamped {
        warn!("maximum diagonal ratio {raw} is below 1; clamping visual gain to 1");
    }
    Ok(GammaEstimate {
        gamma: raw.max(1.0),
        raw,
        argmax,
        clamped,
    })
}

/// `P_obs` with each diagonal entry divided by `gamma`, before renormalizing.
pub fn recover_bias_unnormalized(obs: &ObsMatrix, gamma: f64) -> Vec<Vec<f64>> {
    obs.rows
        .iter()
        .enumerate()
        .map(|(i, row)| {
            row.iter()
                .enumerate()
                .map(|(j, &p)| if i == j { p / gamma } else { p })
                .collect()
        })
        .collect()
}

pub fn recover_bias(obs: &ObsMatrix, gamma: f64) -> Result<ConditionalBiasMatrix> {
    if !(gamma >= 1.0 && gamma.is_finite()) {
        return Err(Error::Calibration(format!(
            "gamma must be finite and >= 1, got {gamma}"
        )));
    }
    let rows = recover_bias_unnormalized(obs, gamma)
        .into_iter()
        .map(|row| {
            let s = sum(row.iter().copied());
            row.into_iter().map(|p| p / s).collect()
        })
        .collect();
    Ok(ConditionalBiasMatrix { rows })
}

/// Mean per-layer attention over the set, floored at [`ATTENTION_FLOOR`].
pub fn estimate_attention_prior(traces: &[InferenceTrace]) -> Result<AttentionPrior> {
    let (n, _, layers) = check_homogeneous(traces)?;
    let mut acc = vec![vec![CompensatedSum::new(); n]; layers];
    for t in traces {
        for (acc_row, row) in acc.iter_mut().zip(t.attention()) {
            for (a, x) in acc_row.iter_mut().zip(row) {
                a.add(*x);
            }
        }
    }
    let count = traces.len() as f64;
    let rows = acc
        .iter()
        .map(|row| {
            row.iter()
                .map(|s| (s.value() / count).max(ATTENTION_FLOOR))
                .collect()
        })
        .collect();
    Ok(AttentionPrior { rows })
}

fn check_symmetrized(traces: &[InferenceTrace], n: usize) {
    let mut per_instance: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for t in traces {
        if let Some(gt) = t.gt() {
            per_instance.entry(t.instance_id()).or_default().push(gt);
        }
    }
    for (id, mut gts) in per_instance {
        gts.sort_unstable();
        if gts != (1..=n).collect::<Vec<_>>() {
            warn!("calibration instance {id} is not a full cyclic orbit (gt positions {gts:?})");
        }
    }
}

/// Run the full estimation pipeline on a symmetrized calibration set.
pub fn build_profile(
    traces: &[InferenceTrace],
    opts: &CalibrationOptions,
) -> Result<CalibrationProfile> {
    let (n, scheme, layers) = check_homogeneous(traces)?;
    check_symmetrized(traces, n);
    let obs = estimate_obs_matrix(traces, opts.smoothing)?;
    let gamma = estimate_gamma(&obs)?;
    let bias = recover_bias(&obs, gamma.gamma)?;
    let attn_prior = estimate_attention_prior(traces)?;
    let base_instances = traces
        .iter()
        .map(InferenceTrace::instance_id)
        .collect::<std::collections::BTreeSet<_>>()
        .len();
    let profile = CalibrationProfile {
        v: PROFILE_VERSION,
        n,
        scheme,
        layers,
        gamma: gamma.gamma,
        bias,
        attn_prior,
        meta: ProfileMeta {
            cal_size: base_instances,
            layers,
            smoothing: opts.smoothing,
            created_unix: opts.created_unix,
        },
    };
    profile.validate()?;
    Ok(profile)
}
