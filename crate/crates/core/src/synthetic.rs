//! A parametric biased model that emits traces with known ground truth.
//!
//! Candidate log-scores follow `log B(j|gt) + 1[j = gt] log gamma + noise`,
//! so the calibration estimators can be checked against the generator's own
//! parameters. Attention on each layer is a sink profile multiplied by a
//! semantic boost at the ground truth, rescaled to the sink's total mass.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::{assign_shuffles, EpisodeSpec};
use crate::numeric::logsumexp;
use crate::seeds::{derive_seed, stream_rng};
use crate::trace::{
    cyclic_shift, CandidateTokenization, Continuation, InferenceTrace, LabelScheme, StepLogits,
    TraceRecord, EOS_TOKEN, TRACE_VERSION,
};

pub const PRESET_NAMES: [&str; 4] = ["stripe-n4", "stripe-n8", "homog-tail-n8", "sink-boundary"];

fn preset_source(name: &str) -> Option<&'static str> {
    Some(match name {
        "stripe-n4" => include_str!("../presets/stripe-n4.toml"),
        "stripe-n8" => include_str!("../presets/stripe-n8.toml"),
        "homog-tail-n8" => include_str!("../presets/homog-tail-n8.toml"),
        "sink-boundary" => include_str!("../presets/sink-boundary.toml"),
        _ => return None,
    })
}

/// Load a shipped preset by name.
pub fn preset(name: &str) -> Result<GeneratorConfig> {
    let src = preset_source(name).ok_or_else(|| {
        Error::Config(format!(
            "unknown preset {name:?}; available presets: {}",
            PRESET_NAMES.join(", ")
        ))
    })?;
    GeneratorConfig::from_toml(src)
}

/// Shape of the conditional bias `B(j | i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BiasProfile {
    Uniform,
    /// Every row favours the `preferred` positions by `1 + weight`.
    Stripe { preferred: Vec<usize>, weight: f64 },
    /// Rows for the last `tail` gt positions are built so that their
    /// observed distributions coincide exactly.
    HomogenizedTail { weights: Vec<f64>, tail: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SinkProfile {
    /// Total image attention mass on ordinary layers.
    pub base_mass: f64,
    /// Total image attention mass on semantic layers.
    pub semantic_mass: f64,
    /// Elevation of positions 1 and N relative to interior positions.
    pub boundary_factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub n: usize,
    pub layers: usize,
    /// 1-based layer indices that carry the visual boost.
    pub semantic_layers: Vec<usize>,
    pub gamma_true: f64,
    pub attn_boost: f64,
    pub noise_sigma: f64,
    #[serde(default)]
    pub hardness: f64,
    #[serde(default = "default_scheme")]
    pub scheme: LabelScheme,
    #[serde(default)]
    pub seed: u64,
    pub bias: BiasProfile,
    pub sink: SinkProfile,
}

fn default_scheme() -> LabelScheme {
    LabelScheme::Numeric
}

impl GeneratorConfig {
    pub fn from_toml(src: &str) -> Result<Self> {
        let cfg: GeneratorConfig =
            toml::from_str(src).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// The same model without logit or attention noise.
    pub fn noiseless(&self) -> Self {
        GeneratorConfig {
            noise_sigma: 0.0,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n < 2 {
            return bad(format!("n = {} must be at least 2", self.n));
        }
        if self.n > self.scheme.max_candidates() {
            return bad(format!(
                "scheme {} supports at most {} candidates",
                self.scheme,
                self.scheme.max_candidates()
            ));
        }
        if self.layers == 0 {
            return bad("layers must be at least 1".into());
        }
        if let Some(l) = self
            .semantic_layers
            .iter()
            .find(|&&l| l == 0 || l > self.layers)
        {
            return bad(format!("semantic layer {l} outside 1..={}", self.layers));
        }
        if !(self.gamma_true >= 1.0 && self.gamma_true.is_finite()) {
            return bad(format!("gamma_true = {} must be >= 1", self.gamma_true));
        }
        if !(self.attn_boost >= 1.0 && self.attn_boost.is_finite()) {
            return bad(format!("attn_boost = {} must be >= 1", self.attn_boost));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma = {} must be >= 0", self.noise_sigma));
        }
        if !(0.0..=1.0).contains(&self.hardness) {
            return bad(format!("hardness = {} outside [0, 1]", self.hardness));
        }
        for (name, m) in [
            ("base_mass", self.sink.base_mass),
            ("semantic_mass", self.sink.semantic_mass),
        ] {
            if !(m > 0.0 && m <= 1.0) {
                return bad(format!("sink {name} = {m} outside (0, 1]"));
            }
        }
        if !(self.sink.boundary_factor > 0.0 && self.sink.boundary_factor.is_finite()) {
            return bad("sink boundary_factor must be positive".into());
        }
        match &self.bias {
            BiasProfile::Uniform => {}
            BiasProfile::Stripe { preferred, weight } => {
                if let Some(p) = preferred.iter().find(|&&p| p == 0 || p > self.n) {
                    return bad(format!("preferred position {p} outside 1..={}", self.n));
                }
                if !(*weight >= 0.0 && weight.is_finite()) {
                    return bad(format!("stripe weight {weight} must be >= 0"));
                }
            }
            BiasProfile::HomogenizedTail { weights, tail } => {
                if weights.len() != self.n {
                    return bad(format!("{} tail weights for n = {}", weights.len(), self.n));
                }
                if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
                    return bad("tail weights must be positive".into());
                }
                if *tail == 0 || *tail > self.n {
                    return bad(format!("tail = {tail} outside 1..={}", self.n));
                }
                for i in self.n - tail..self.n {
                    let min_other = min_except(weights, i);
                    if weights[i] / self.gamma_true > min_other * (1.0 + 1e-12) {
                        return bad(format!(
                            "tail row {} needs weight / gamma_true <= smallest other weight",
                            i + 1
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    fn position_weights(&self) -> Vec<f64> {
        match &self.bias {
            BiasProfile::Uniform => vec![1.0; self.n],
            BiasProfile::Stripe { preferred, weight } => (1..=self.n)
                .map(|j| if preferred.contains(&j) { 1.0 + weight } else { 1.0 })
                .collect(),
            BiasProfile::HomogenizedTail { weights, .. } => weights.clone(),
        }
    }

    fn is_tail_row(&self, i: usize) -> bool {
        match &self.bias {
            BiasProfile::HomogenizedTail { tail, .. } => i >= self.n - tail,
            _ => false,
        }
    }

    /// Unnormalized bias row for 0-based gt `i`. The diagonal never exceeds
    /// the smallest off-diagonal entry, with equality outside the tail.
    fn raw_bias_row(&self, i: usize) -> Vec<f64> {
        let w = self.position_weights();
        let mut row = w.clone();
        row[i] = if self.is_tail_row(i) {
            w[i] / self.gamma_true
        } else {
            min_except(&w, i)
        };
        row
    }

    /// Unnormalized noiseless log-scores for 0-based gt `i`. Tail rows are
    /// the raw weights themselves, so homogenized rows agree bit for bit.
    fn observed_log_row(&self, i: usize) -> Vec<f64> {
        if self.is_tail_row(i) {
            return self.position_weights().iter().map(|w| w.ln()).collect();
        }
        let bias = self.raw_bias_row(i);
        (0..self.n)
            .map(|j| {
                let gain = if j == i { self.gamma_true.ln() } else { 0.0 };
                bias[j].ln() + gain
            })
            .collect()
    }

    /// Row-normalized `B_true`.
    pub fn bias_matrix(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| normalized(self.raw_bias_row(i))).collect()
    }

    /// Noiseless observed distribution per gt row.
    pub fn observed_matrix(&self) -> Vec<Vec<f64>> {
        (0..self.n)
            .map(|i| {
                let mut row = self.raw_bias_row(i);
                row[i] *= self.gamma_true;
                normalized(row)
            })
            .collect()
    }

    fn sink_row(&self, layer: usize) -> Vec<f64> {
        let mass = if self.is_semantic(layer) {
            self.sink.semantic_mass
        } else {
            self.sink.base_mass
        };
        let shape: Vec<f64> = (0..self.n)
            .map(|k| {
                if k == 0 || k == self.n - 1 {
                    self.sink.boundary_factor
                } else {
                    1.0
                }
            })
            .collect();
        let total: f64 = shape.iter().sum();
        shape.iter().map(|s| mass * s / total).collect()
    }

    fn is_semantic(&self, layer: usize) -> bool {
        self.semantic_layers.contains(&(layer + 1))
    }

    /// Attention for 0-based gt `gt`, with `noise[l][k]` added in log domain.
    fn attention(&self, gt: usize, noise: Option<&[Vec<f64>]>) -> Vec<Vec<f64>> {
        let distractor_boost = self.attn_boost.powf(self.hardness);
        (0..self.layers)
            .map(|l| {
                let sink = self.sink_row(l);
                let mass: f64 = sink.iter().sum();
                let raw: Vec<f64> = sink
                    .iter()
                    .enumerate()
                    .map(|(k, s)| {
                        let boost = match (self.is_semantic(l), k == gt) {
                            (false, _) => 1.0,
                            (true, true) => self.attn_boost,
                            (true, false) => distractor_boost,
                        };
                        let eps = noise.map_or(0.0, |n| n[l][k]);
                        s * boost * eps.exp()
                    })
                    .collect();
                let total: f64 = raw.iter().sum();
                raw.iter().map(|x| mass * x / total).collect()
            })
            .collect()
    }

    /// Noiseless attention when the ground truth sits at 1-based `gt`.
    pub fn noiseless_attention(&self, gt: usize) -> Vec<Vec<f64>> {
        self.attention(gt - 1, None)
    }

    /// Mean noiseless attention over uniformly covered gt positions; what a
    /// symmetrized calibration set should recover.
    pub fn expected_attention_prior(&self) -> Vec<Vec<f64>> {
        let mut acc = vec![vec![0.0; self.n]; self.layers];
        for gt in 1..=self.n {
            for (a, row) in acc.iter_mut().zip(self.noiseless_attention(gt)) {
                for (x, y) in a.iter_mut().zip(row) {
                    *x += y;
                }
            }
        }
        for row in &mut acc {
            for x in row.iter_mut() {
                *x /= self.n as f64;
            }
        }
        acc
    }
}

fn min_except(w: &[f64], i: usize) -> f64 {
    w.iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &x)| x)
        .fold(f64::INFINITY, f64::min)
}

fn normalized(row: Vec<f64>) -> Vec<f64> {
    let total: f64 = row.iter().sum();
    row.into_iter().map(|x| x / total).collect()
}

/// Split a label into synthetic tokenizer pieces.
fn label_pieces(scheme: LabelScheme, label: &str) -> Vec<String> {
    match scheme {
        LabelScheme::Numeric | LabelScheme::Roman => label.chars().map(String::from).collect(),
        LabelScheme::UpperAlpha | LabelScheme::LowerAlpha => vec![label.to_string()],
        LabelScheme::OrdinalWord => label
            .chars()
            .collect::<Vec<_>>()
            .chunks(4)
            .map(|c| c.iter().collect())
            .collect(),
    }
}

const PIECE_ID_OFFSET: i64 = 1000;

/// Token paths and EOS flags for the labels of `scheme`. A candidate scores
/// a terminal EOS step when it is a single token or a proper prefix of
/// another candidate.
pub fn tokenize_labels(scheme: LabelScheme, labels: &[String]) -> Vec<CandidateTokenization> {
    let pieces: Vec<Vec<String>> = labels.iter().map(|l| label_pieces(scheme, l)).collect();
    let vocab: BTreeMap<&String, i64> = {
        let mut all: Vec<&String> = pieces.iter().flatten().collect();
        all.sort();
        all.dedup();
        all.into_iter()
            .enumerate()
            .map(|(i, p)| (p, PIECE_ID_OFFSET + i as i64))
            .collect()
    };
    let paths: Vec<Vec<i64>> = pieces
        .iter()
        .map(|p| p.iter().map(|s| vocab[s]).collect())
        .collect();
    paths
        .iter()
        .map(|p| {
            let is_prefix = paths
                .iter()
                .any(|q| q.len() > p.len() && q.starts_with(p));
            CandidateTokenization {
                ids: p.clone(),
                eos: p.len() == 1 || is_prefix,
            }
        })
        .collect()
}

/// First-step and continuation logits whose restricted-softmax product
/// reproduces `log_mass` for every candidate. Each node's logits are its
/// children's subtree log-masses plus a random per-node offset.
pub fn scoring_tree(
    cands: &[CandidateTokenization],
    log_mass: &[f64],
    rng: &mut ChaCha8Rng,
) -> (StepLogits, Vec<Continuation>) {
    let mut children: BTreeMap<Vec<i64>, BTreeMap<i64, Vec<f64>>> = BTreeMap::new();
    for (c, &lm) in cands.iter().zip(log_mass) {
        for j in 0..c.ids.len() {
            children
                .entry(c.ids[..j].to_vec())
                .or_default()
                .entry(c.ids[j])
                .or_default()
                .push(lm);
        }
        if c.eos {
            children
                .entry(c.ids.clone())
                .or_default()
                .entry(EOS_TOKEN)
                .or_default()
                .push(lm);
        }
    }
    let mut first = None;
    let mut continuations = Vec::with_capacity(children.len());
    for (prefix, kids) in children {
        let offset: f64 = rng.random_range(-2.0..2.0);
        let tokens: Vec<i64> = kids.keys().copied().collect();
        let logits: Vec<f64> = kids.values().map(|m| logsumexp(m) + offset).collect();
        if prefix.is_empty() {
            first = Some(StepLogits { tokens, logits });
        } else {
            continuations.push(Continuation {
                prefix,
                tokens,
                logits,
            });
        }
    }
    (first.expect("at least one candidate"), continuations)
}

/// A validated generator with its label tokenization resolved.
#[derive(Debug, Clone)]
pub struct SyntheticModel {
    cfg: GeneratorConfig,
    labels: Vec<String>,
    cand_tokens: Vec<CandidateTokenization>,
}

impl SyntheticModel {
    pub fn new(cfg: GeneratorConfig) -> Result<Self> {
        cfg.validate()?;
        let labels = cfg.scheme.labels(cfg.n)?;
        let cand_tokens = tokenize_labels(cfg.scheme, &labels);
        Ok(SyntheticModel {
            cfg,
            labels,
            cand_tokens,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    /// One trace for images shown in `order` with the gt at 1-based `gt`.
    pub fn generate_trace(
        &self,
        instance_id: &str,
        shuffle_id: u64,
        order: &[String],
        gt: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<InferenceTrace> {
        let cfg = &self.cfg;
        if order.len() != cfg.n {
            return Err(Error::Config(format!(
                "order has {} images, generator n = {}",
                order.len(),
                cfg.n
            )));
        }
        if !(1..=cfg.n).contains(&gt) {
            return Err(Error::Config(format!("gt {gt} outside 1..={}", cfg.n)));
        }
        let i = gt - 1;
        let normal = |rng: &mut ChaCha8Rng| -> f64 {
            let z: f64 = rng.sample(StandardNormal);
            cfg.noise_sigma * z
        };
        let scores: Vec<f64> = cfg
            .observed_log_row(i)
            .into_iter()
            .map(|s| s + normal(rng))
            .collect();
        let lse = logsumexp(&scores);
        let log_mass: Vec<f64> = scores.iter().map(|s| s - lse).collect();

        let noise: Vec<Vec<f64>> = (0..cfg.layers)
            .map(|_| (0..cfg.n).map(|_| normal(rng)).collect())
            .collect();
        let attn = cfg.attention(i, Some(&noise));

        let (first_step, continuations) = scoring_tree(&self.cand_tokens, &log_mass, rng);
        TraceRecord {
            v: TRACE_VERSION,
            instance_id: instance_id.to_string(),
            shuffle_id,
            n: cfg.n,
            scheme: cfg.scheme,
            labels: self.labels.clone(),
            images: order.to_vec(),
            gt: Some(gt),
            first_step,
            continuations,
            cand_tokens: self.cand_tokens.clone(),
            attn,
        }
        .try_into()
    }

    /// `m` base instances, each under every cyclic shift.
    pub fn calibration_set(&self, m: usize) -> Result<Vec<InferenceTrace>> {
        let n = self.cfg.n;
        let jobs: Vec<(usize, usize)> = (0..m).flat_map(|b| (0..n).map(move |s| (b, s))).collect();
        jobs.par_iter()
            .map(|&(b, s)| {
                let id = format!("cal-{b:05}");
                let images: Vec<String> = (1..=n).map(|k| format!("{id}-img{k}")).collect();
                let shifted = cyclic_shift(&images, 1, s)?;
                let mut rng = stream_rng(self.cfg.seed, "cal", &[b as u64, s as u64]);
                self.generate_trace(&id, s as u64, &shifted.order, shifted.gt, &mut rng)
            })
            .collect()
    }

    /// Episode specs with a seeded gt identity and `t` shuffled presentations.
    pub fn eval_specs(&self, count: usize, t: usize) -> Vec<EpisodeSpec> {
        let n = self.cfg.n;
        let mut specs: Vec<EpisodeSpec> = (0..count)
            .map(|e| {
                let id = format!("ep-{e:05}");
                let images: Vec<String> = (1..=n).map(|k| format!("{id}-img{k}")).collect();
                let g = stream_rng(self.cfg.seed, "gt", &[e as u64]).random_range(0..n);
                EpisodeSpec {
                    instance_id: id,
                    gt: images[g].clone(),
                    images,
                    presentations: Vec::new(),
                }
            })
            .collect();
        assign_shuffles(&mut specs, t, derive_seed(self.cfg.seed, "eval-shuffle", &[]));
        specs
    }

    /// Traces for every presentation of `specs`. With `orbits`, each
    /// presentation is followed by its `N - 1` further cyclic shifts;
    /// `shuffle_id = round * N + shift`.
    pub fn traces_for(&self, specs: &[EpisodeSpec], orbits: bool) -> Result<Vec<InferenceTrace>> {
        let n = self.cfg.n;
        let shifts = if orbits { n } else { 1 };
        for spec in specs {
            spec.validate()?;
            if spec.images.len() != n {
                return Err(Error::Episode(format!(
                    "episode {} has {} images, generator n = {n}",
                    spec.instance_id,
                    spec.images.len()
                )));
            }
        }
        let per_episode: Vec<Vec<InferenceTrace>> = specs
            .par_iter()
            .enumerate()
            .map(|(e, spec)| {
                let mut out = Vec::with_capacity(spec.presentations.len() * shifts);
                for (t, p) in spec.presentations.iter().enumerate() {
                    for s in 0..shifts {
                        let shifted = cyclic_shift(&p.order, spec.gt_position(t), s)?;
                        let mut rng =
                            stream_rng(self.cfg.seed, "eval", &[e as u64, t as u64, s as u64]);
                        out.push(self.generate_trace(
                            &spec.instance_id,
                            (t * n + s) as u64,
                            &shifted.order,
                            shifted.gt,
                            &mut rng,
                        )?);
                    }
                }
                Ok(out)
            })
            .collect::<Result<_>>()?;
        Ok(per_episode.into_iter().flatten().collect())
    }
}

/// `m x N` traces: the full cyclic orbit of `m` base instances.
pub fn generate_calibration_set(cfg: &GeneratorConfig, m: usize) -> Result<Vec<InferenceTrace>> {
    if m == 0 {
        return Err(Error::Config("calibration set needs at least one instance".into()));
    }
    SyntheticModel::new(cfg.clone())?.calibration_set(m)
}

/// `count` seeded episodes with `t` shuffled presentations each.
pub fn generate_eval_episodes(
    cfg: &GeneratorConfig,
    count: usize,
    t: usize,
    orbits: bool,
) -> Result<(Vec<EpisodeSpec>, Vec<InferenceTrace>)> {
    if count == 0 || t == 0 {
        return Err(Error::Config("need at least one episode and one shuffle".into()));
    }
    let model = SyntheticModel::new(cfg.clone())?;
    let specs = model.eval_specs(count, t);
    let traces = model.traces_for(&specs, orbits)?;
    Ok((specs, traces))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::score_candidates;
    use rand::SeedableRng;

    fn uniform(n: usize, gamma: f64) -> GeneratorConfig {
        GeneratorConfig {
            n,
            layers: 2,
            semantic_layers: vec![2],
            gamma_true: gamma,
            attn_boost: 2.0,
            noise_sigma: 0.0,
            hardness: 0.0,
            scheme: LabelScheme::Numeric,
            seed: 3,
            bias: BiasProfile::Uniform,
            sink: SinkProfile {
                base_mass: 0.2,
                semantic_mass: 0.5,
                boundary_factor: 1.0,
            },
        }
    }

    fn order(n: usize) -> Vec<String> {
        (1..=n).map(|k| format!("x{k}")).collect()
    }

    #[test]
    fn two_candidates_gamma_four() {
        let model = SyntheticModel::new(uniform(2, 4.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = model.generate_trace("a", 0, &order(2), 1, &mut rng).unwrap();
        let p = score_candidates(&t).unwrap().probs;
        assert!((p[0] - 0.8).abs() < 1e-12);
        assert!((p[1] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn unit_gamma_is_uniform() {
        let model = SyntheticModel::new(uniform(5, 1.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = model.generate_trace("a", 0, &order(5), 3, &mut rng).unwrap();
        for p in score_candidates(&t).unwrap().probs {
            assert!((p - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn regeneration_is_bitwise_identical() {
        let cfg = preset("stripe-n4").unwrap();
        let a = generate_calibration_set(&cfg, 2).unwrap();
        let b = generate_calibration_set(&cfg, 2).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(
                crate::trace::write_trace(x).unwrap(),
                crate::trace::write_trace(y).unwrap()
            );
        }
    }

    #[test]
    fn every_preset_loads() {
        for name in PRESET_NAMES {
            preset(name).unwrap();
        }
        let err = preset("nope").unwrap_err().to_string();
        assert!(err.contains("stripe-n4") && err.contains("sink-boundary"), "{err}");
    }

    #[test]
    fn calibration_counts() {
        let cal = generate_calibration_set(&preset("stripe-n4").unwrap(), 5).unwrap();
        assert_eq!(cal.len(), 20);
        let mut counts = [0; 4];
        for t in &cal {
            counts[t.gt().unwrap() - 1] += 1;
        }
        assert_eq!(counts, [5, 5, 5, 5]);
    }

    #[test]
    fn tail_rows_observe_identically() {
        let cfg = preset("homog-tail-n8").unwrap();
        let obs = cfg.observed_matrix();
        for j in 0..8 {
            assert!((obs[5][j] - obs[6][j]).abs() < 1e-15);
            assert!((obs[6][j] - obs[7][j]).abs() < 1e-15);
        }
    }

    #[test]
    fn ordinal_words_share_prefixes() {
        let labels = LabelScheme::OrdinalWord.labels(20).unwrap();
        let toks = tokenize_labels(LabelScheme::OrdinalWord, &labels);
        // "sixth" = sixt|h, "sixteenth" = sixt|eent|h
        assert_eq!(toks[5].ids[0], toks[15].ids[0]);
        assert!(!toks[5].eos);
        let numeric = tokenize_labels(LabelScheme::Numeric, &LabelScheme::Numeric.labels(12).unwrap());
        assert!(numeric[0].eos && numeric[0].ids.len() == 1);
        assert_eq!(numeric[9].ids.len(), 2);
        assert!(!numeric[9].eos);
    }
}
