//! Inference trace data contract.
//!
//! A trace carries everything the engine needs from one model pass over one
//! presentation of a retrieval instance: the restricted step logits needed to
//! score each candidate identifier, and the per-layer attention mass that the
//! final query token sends to each candidate image. Attention is stored
//! pre-aggregated (heads averaged, image token spans summed) by the producer.
//!
//! Positions are 1-based in every public API and in the wire format.
//!
//! Wire format: one JSON object per line, `v: 1`, field order fixed by
//! [`TraceRecord`]. Floats are written in shortest round-trip form so a record
//! written, read and written again is byte-identical.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TRACE_VERSION: u32 = 1;

/// Token id standing for end-of-sequence inside continuation records.
pub const EOS_TOKEN: i64 = -1;

/// Largest allowed per-layer image attention mass.
pub const ATTENTION_ROW_TOLERANCE: f64 = 1e-6;

const ORDINAL_WORDS: [&str; 20] = [
    "first",
    "second",
    "third",
    "fourth",
    "fifth",
    "sixth",
    "seventh",
    "eighth",
    "ninth",
    "tenth",
    "eleventh",
    "twelfth",
    "thirteenth",
    "fourteenth",
    "fifteenth",
    "sixteenth",
    "seventeenth",
    "eighteenth",
    "nineteenth",
    "twentieth",
];

/// Family of candidate identifiers presented to the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelScheme {
    Numeric,
    UpperAlpha,
    LowerAlpha,
    Roman,
    OrdinalWord,
}

impl LabelScheme {
    pub const ALL: [LabelScheme; 5] = [
        LabelScheme::Numeric,
        LabelScheme::UpperAlpha,
        LabelScheme::LowerAlpha,
        LabelScheme::Roman,
        LabelScheme::OrdinalWord,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LabelScheme::Numeric => "numeric",
            LabelScheme::UpperAlpha => "upper-alpha",
            LabelScheme::LowerAlpha => "lower-alpha",
            LabelScheme::Roman => "roman",
            LabelScheme::OrdinalWord => "ordinal-word",
        }
    }

    pub fn max_candidates(self) -> usize {
        match self {
            LabelScheme::Numeric | LabelScheme::Roman => 3999,
            LabelScheme::UpperAlpha | LabelScheme::LowerAlpha => 26,
            LabelScheme::OrdinalWord => ORDINAL_WORDS.len(),
        }
    }

    /// Identifier strings `c_1..c_n`.
    pub fn labels(self, n: usize) -> Result<Vec<String>> {
        if n > self.max_candidates() {
            return Err(Error::Invariant(format!(
                "scheme {self} supports at most {} candidates, got {n}",
                self.max_candidates()
            )));
        }
        Ok((1..=n).map(|k| self.label(k)).collect())
    }

    fn label(self, k: usize) -> String {
        match self {
            LabelScheme::Numeric => k.to_string(),
            LabelScheme::UpperAlpha => char::from(b'A' + (k - 1) as u8).to_string(),
            LabelScheme::LowerAlpha => char::from(b'a' + (k - 1) as u8).to_string(),
            LabelScheme::Roman => roman(k),
            LabelScheme::OrdinalWord => ORDINAL_WORDS[k - 1].to_string(),
        }
    }
}

fn roman(mut k: usize) -> String {
    const TABLE: [(usize, &str); 13] = [
        (1000, "M"),
        (900, "CM"),
        (500, "D"),
        (400, "CD"),
        (100, "C"),
        (90, "XC"),
        (50, "L"),
        (40, "XL"),
        (10, "X"),
        (9, "IX"),
        (5, "V"),
        (4, "IV"),
        (1, "I"),
    ];
    let mut out = String::new();
    for &(value, glyph) in &TABLE {
        while k >= value {
            out.push_str(glyph);
            k -= value;
        }
    }
    out
}

impl fmt::Display for LabelScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LabelScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LabelScheme::ALL
            .into_iter()
            .find(|scheme| scheme.as_str() == s)
            .ok_or_else(|| Error::Invariant(format!("unknown label scheme '{s}'")))
    }
}

/// Restricted logits for one generation step: the valid token set `T_j` and
/// the raw scores aligned with it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLogits {
    pub tokens: Vec<i64>,
    pub logits: Vec<f64>,
}

/// Step logits after a given candidate-identifier prefix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Continuation {
    pub prefix: Vec<i64>,
    pub tokens: Vec<i64>,
    pub logits: Vec<f64>,
}

/// Token sequence of one candidate identifier. When `eos` is set, a terminal
/// end-of-sequence step after the last token is part of the candidate's
/// joint probability.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateTokenization {
    pub ids: Vec<i64>,
    pub eos: bool,
}

/// Wire form of a trace. Converting into [`InferenceTrace`] validates every
/// invariant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRecord {
    pub v: u32,
    pub instance_id: String,
    pub shuffle_id: u64,
    pub n: usize,
    pub scheme: LabelScheme,
    pub labels: Vec<String>,
    pub images: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt: Option<usize>,
    pub first_step: StepLogits,
    pub continuations: Vec<Continuation>,
    pub cand_tokens: Vec<CandidateTokenization>,
    pub attn: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct TraceRecordRef<'a> {
    v: u32,
    instance_id: &'a str,
    shuffle_id: u64,
    n: usize,
    scheme: LabelScheme,
    labels: &'a [String],
    images: &'a [String],
    #[serde(skip_serializing_if = "Option::is_none")]
    gt: Option<usize>,
    first_step: &'a StepLogits,
    continuations: &'a [Continuation],
    cand_tokens: &'a [CandidateTokenization],
    attn: &'a [Vec<f64>],
}

/// One validated inference trace.
#[derive(Debug, Clone, PartialEq)]
pub struct InferenceTrace {
    instance_id: String,
    shuffle_id: u64,
    scheme: LabelScheme,
    labels: Vec<String>,
    images: Vec<String>,
    gt: Option<usize>,
    first_step: StepLogits,
    continuations: Vec<Continuation>,
    cand_tokens: Vec<CandidateTokenization>,
    attn: Vec<Vec<f64>>,
    continuation_index: HashMap<Vec<i64>, usize>,
}

impl InferenceTrace {
    pub fn instance_id(&self) -> &str {
        &self.instance_id
    }

    pub fn shuffle_id(&self) -> u64 {
        self.shuffle_id
    }

    pub fn n(&self) -> usize {
        self.images.len()
    }

    pub fn scheme(&self) -> LabelScheme {
        self.scheme
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn images(&self) -> &[String] {
        &self.images
    }

    /// Ground-truth position (1-based), when known.
    pub fn gt(&self) -> Option<usize> {
        self.gt
    }

    pub fn first_step(&self) -> &StepLogits {
        &self.first_step
    }

    pub fn continuations(&self) -> &[Continuation] {
        &self.continuations
    }

    pub fn continuation(&self, prefix: &[i64]) -> Option<&Continuation> {
        self.continuation_index
            .get(prefix)
            .map(|&i| &self.continuations[i])
    }

    pub fn cand_tokens(&self) -> &[CandidateTokenization] {
        &self.cand_tokens
    }

    /// Per-layer image attention mass, `layers() x n()`.
    pub fn attention(&self) -> &[Vec<f64>] {
        &self.attn
    }

    pub fn layers(&self) -> usize {
        self.attn.len()
    }

    /// Image identity at 1-based `position`.
    pub fn image_at(&self, position: usize) -> &str {
        &self.images[position - 1]
    }

    pub fn to_record(&self) -> TraceRecord {
        TraceRecord {
            v: TRACE_VERSION,
            instance_id: self.instance_id.clone(),
            shuffle_id: self.shuffle_id,
            n: self.n(),
            scheme: self.scheme,
            labels: self.labels.clone(),
            images: self.images.clone(),
            gt: self.gt,
            first_step: self.first_step.clone(),
            continuations: self.continuations.clone(),
            cand_tokens: self.cand_tokens.clone(),
            attn: self.attn.clone(),
        }
    }

    fn as_record_ref(&self) -> TraceRecordRef<'_> {
        TraceRecordRef {
            v: TRACE_VERSION,
            instance_id: &self.instance_id,
            shuffle_id: self.shuffle_id,
            n: self.n(),
            scheme: self.scheme,
            labels: &self.labels,
            images: &self.images,
            gt: self.gt,
            first_step: &self.first_step,
            continuations: &self.continuations,
            cand_tokens: &self.cand_tokens,
            attn: &self.attn,
        }
    }
}

impl TryFrom<TraceRecord> for InferenceTrace {
    type Error = Error;

    fn try_from(rec: TraceRecord) -> Result<Self> {
        if rec.v != TRACE_VERSION {
            return Err(Error::Invariant(format!(
                "unsupported trace version {} (expected {TRACE_VERSION})",
                rec.v
            )));
        }
        let n = rec.n;
        if n < 2 {
            return Err(Error::Invariant(format!("n must be >= 2, got {n}")));
        }
        check_len("labels", rec.labels.len(), n)?;
        check_len("images", rec.images.len(), n)?;
        check_len("cand_tokens", rec.cand_tokens.len(), n)?;
        check_distinct("labels", &rec.labels)?;
        check_distinct("images", &rec.images)?;
        if let Some(gt) = rec.gt {
            if !(1..=n).contains(&gt) {
                return Err(Error::Invariant(format!("gt {gt} outside 1..={n}")));
            }
        }
        check_attention(&rec.attn, n)?;
        check_step("first_step", &rec.first_step.tokens, &rec.first_step.logits)?;
        for c in &rec.continuations {
            check_step("continuation", &c.tokens, &c.logits)?;
        }
        let continuation_index = check_scoring_tree(&rec)?;

        Ok(InferenceTrace {
            instance_id: rec.instance_id,
            shuffle_id: rec.shuffle_id,
            scheme: rec.scheme,
            labels: rec.labels,
            images: rec.images,
            gt: rec.gt,
            first_step: rec.first_step,
            continuations: rec.continuations,
            cand_tokens: rec.cand_tokens,
            attn: rec.attn,
            continuation_index,
        })
    }
}

fn check_len(field: &str, got: usize, n: usize) -> Result<()> {
    if got != n {
        return Err(Error::Invariant(format!(
            "{field} has {got} entries, expected n = {n}"
        )));
    }
    Ok(())
}

fn check_distinct(field: &str, values: &[String]) -> Result<()> {
    let set: BTreeSet<&String> = values.iter().collect();
    if set.len() != values.len() {
        return Err(Error::Invariant(format!("{field} are not distinct")));
    }
    Ok(())
}

fn check_attention(attn: &[Vec<f64>], n: usize) -> Result<()> {
    if attn.is_empty() {
        return Err(Error::Invariant("attention needs at least one layer".into()));
    }
    for (l, row) in attn.iter().enumerate() {
        let layer = l + 1;
        if row.len() != n {
            return Err(Error::Invariant(format!(
                "attention layer {layer} has {} entries, expected {n}",
                row.len()
            )));
        }
        if row.iter().any(|a| !a.is_finite() || *a < 0.0) {
            return Err(Error::Invariant(format!(
                "attention layer {layer} has a negative or non-finite entry"
            )));
        }
        let total: f64 = row.iter().sum();
        if total > 1.0 + ATTENTION_ROW_TOLERANCE {
            return Err(Error::Invariant(format!(
                "attention layer {layer} sums to {total}, above 1"
            )));
        }
    }
    Ok(())
}

fn check_step(what: &'static str, tokens: &[i64], logits: &[f64]) -> Result<()> {
    if tokens.is_empty() {
        return Err(Error::Invariant(format!("{what} has no valid tokens")));
    }
    if tokens.len() != logits.len() {
        return Err(Error::Invariant(format!(
            "{what} has {} tokens but {} logits",
            tokens.len(),
            logits.len()
        )));
    }
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("step logits"));
    }
    let distinct: BTreeSet<i64> = tokens.iter().copied().collect();
    if distinct.len() != tokens.len() {
        return Err(Error::Invariant(format!("{what} repeats a token id")));
    }
    Ok(())
}

/// Validates that the prefix-shared scoring tree covers exactly the valid
/// continuations of the candidate identifiers, and returns a prefix lookup.
fn check_scoring_tree(rec: &TraceRecord) -> Result<HashMap<Vec<i64>, usize>> {
    let cands = &rec.cand_tokens;
    for (k, c) in cands.iter().enumerate() {
        if c.ids.is_empty() {
            return Err(Error::ScoringTree(format!(
                "candidate {} has an empty token sequence",
                k + 1
            )));
        }
        if c.ids.contains(&EOS_TOKEN) {
            return Err(Error::ScoringTree(format!(
                "candidate {} uses the reserved end-of-sequence id",
                k + 1
            )));
        }
    }

    for (a, ca) in cands.iter().enumerate() {
        for (b, cb) in cands.iter().enumerate().skip(a + 1) {
            if ca == cb {
                return Err(Error::ScoringTree(format!(
                    "candidates {} and {} share an identical token path",
                    a + 1,
                    b + 1
                )));
            }
        }
    }
    // A candidate without a terminal step must be a leaf of the token tree.
    for (a, ca) in cands.iter().enumerate() {
        if ca.eos {
            continue;
        }
        for (b, cb) in cands.iter().enumerate() {
            if a != b && cb.ids.starts_with(&ca.ids) {
                return Err(Error::ScoringTree(format!(
                    "candidate {} is a prefix of candidate {} but declares no end-of-sequence step",
                    a + 1,
                    b + 1
                )));
            }
        }
    }

    // Required children for every interior node of the tree.
    let mut required: HashMap<Vec<i64>, BTreeSet<i64>> = HashMap::new();
    let mut first: BTreeSet<i64> = BTreeSet::new();
    for c in cands {
        first.insert(c.ids[0]);
        for j in 1..c.ids.len() {
            required
                .entry(c.ids[..j].to_vec())
                .or_default()
                .insert(c.ids[j]);
        }
        if c.eos {
            required.entry(c.ids.clone()).or_default().insert(EOS_TOKEN);
        }
    }

    let declared: BTreeSet<i64> = rec.first_step.tokens.iter().copied().collect();
    if declared != first {
        return Err(Error::ScoringTree(format!(
            "first-step token set {declared:?} differs from candidate first tokens {first:?}"
        )));
    }

    let mut index = HashMap::with_capacity(rec.continuations.len());
    for (i, cont) in rec.continuations.iter().enumerate() {
        let Some(expected) = required.get(&cont.prefix) else {
            return Err(Error::ScoringTree(format!(
                "continuation for prefix {:?} is not a prefix of any candidate",
                cont.prefix
            )));
        };
        let got: BTreeSet<i64> = cont.tokens.iter().copied().collect();
        if &got != expected {
            return Err(Error::ScoringTree(format!(
                "continuation for prefix {:?} has tokens {got:?}, expected {expected:?}",
                cont.prefix
            )));
        }
        if index.insert(cont.prefix.clone(), i).is_some() {
            return Err(Error::ScoringTree(format!(
                "duplicate continuation for prefix {:?}",
                cont.prefix
            )));
        }
    }
    if let Some(missing) = required.keys().find(|p| !index.contains_key(*p)) {
        return Err(Error::ScoringTree(format!(
            "missing continuation for prefix {missing:?}"
        )));
    }
    Ok(index)
}

/// Serialize a trace as one canonical JSON line (no trailing newline).
pub fn write_trace(trace: &InferenceTrace) -> Result<String> {
    // Validation already rejects non-finite values; serde_json would quietly
    // turn them into `null`, so keep the guard at the write boundary too.
    let finite = trace.first_step.logits.iter().all(|x| x.is_finite())
        && trace
            .continuations
            .iter()
            .all(|c| c.logits.iter().all(|x| x.is_finite()))
        && trace.attn.iter().flatten().all(|x| x.is_finite());
    if !finite {
        return Err(Error::NonFinite("trace"));
    }
    Ok(serde_json::to_string(&trace.as_record_ref())?)
}

pub fn write_traces<'a, W: Write>(
    mut out: W,
    traces: impl IntoIterator<Item = &'a InferenceTrace>,
) -> Result<()> {
    for t in traces {
        out.write_all(write_trace(t)?.as_bytes())?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn parse_trace(line: &str) -> Result<InferenceTrace> {
    let rec: TraceRecord = serde_json::from_str(line)?;
    InferenceTrace::try_from(rec)
}

/// Read every trace from a line-delimited stream. Blank lines are skipped;
/// errors carry the 1-based line number.
pub fn read_traces<R: BufRead>(input: R) -> Result<Vec<InferenceTrace>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_trace(&line).map_err(|e| Error::at_line(i + 1, e))?);
    }
    Ok(out)
}

/// Result of cyclically left-shifting a presentation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShiftSpec {
    pub shift: usize,
    pub order: Vec<String>,
    pub gt: usize,
}

/// Rotate `order` left by `shift` and track where the ground truth lands.
pub fn cyclic_shift(order: &[String], gt: usize, shift: usize) -> Result<ShiftSpec> {
    let n = order.len();
    if shift >= n {
        return Err(Error::Invariant(format!("shift {shift} outside 0..{n}")));
    }
    if !(1..=n).contains(&gt) {
        return Err(Error::Invariant(format!("gt {gt} outside 1..={n}")));
    }
    let mut rotated = order.to_vec();
    rotated.rotate_left(shift);
    Ok(ShiftSpec {
        shift,
        order: rotated,
        gt: shifted_position(gt, shift, n),
    })
}

/// Position of 1-based `position` after a left rotation by `shift`.
pub fn shifted_position(position: usize, shift: usize, n: usize) -> usize {
    (position + n - 1 - shift % n) % n + 1
}

/// Left-rotation amount that turns `base` into `other`, if any.
pub fn rotation_between(base: &[String], other: &[String]) -> Option<usize> {
    let n = base.len();
    if n == 0 || other.len() != n {
        return None;
    }
    let s = base.iter().position(|x| *x == other[0])?;
    (0..n)
        .all(|j| other[j] == base[(j + s) % n])
        .then_some(s)
}
