//! Retrieval episode manifests from precomputed embeddings.
//!
//! `random` episodes draw distractors uniformly. `adversarial` episodes take
//! the visually closest records after removing those that share the anchor's
//! category set or whose caption embedding is too close to the anchor's.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::EpisodeSpec;
use crate::numeric::sum;
use crate::seeds::stream_rng;

pub const EMBEDDING_MAGIC: &[u8; 4] = b"EMB1";
pub const NORM_TOLERANCE: f64 = 1e-6;
pub const DEFAULT_TXT_THRESHOLD: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingRecord {
    pub id: String,
    pub vis: Vec<f64>,
    pub txt: Vec<f64>,
    #[serde(default)]
    pub cats: BTreeSet<String>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    sum(a.iter().zip(b).map(|(x, y)| x * y))
}

impl EmbeddingRecord {
    pub fn visual_cosine(&self, other: &EmbeddingRecord) -> f64 {
        dot(&self.vis, &other.vis)
    }

    pub fn text_cosine(&self, other: &EmbeddingRecord) -> f64 {
        dot(&self.txt, &other.txt)
    }

    fn check_norms(&self) -> Result<()> {
        for (name, v) in [("vis", &self.vis), ("txt", &self.txt)] {
            let norm = dot(v, v).sqrt();
            if (norm - 1.0).abs() > NORM_TOLERANCE {
                return Err(Error::Embedding(format!(
                    "record {}: {name} norm {norm} is not 1",
                    self.id
                )));
            }
        }
        Ok(())
    }
}

/// Check norms, id uniqueness and consistent dimensions.
pub fn validate_pool(pool: &[EmbeddingRecord]) -> Result<()> {
    let mut seen = HashSet::with_capacity(pool.len());
    let dims = pool.first().map(|r| (r.vis.len(), r.txt.len()));
    for r in pool {
        if !seen.insert(r.id.as_str()) {
            return Err(Error::Embedding(format!("duplicate id {}", r.id)));
        }
        if Some((r.vis.len(), r.txt.len())) != dims {
            return Err(Error::Embedding(format!("record {} has mismatched dimensions", r.id)));
        }
        r.check_norms()?;
    }
    Ok(())
}

/// Read either the binary `EMB1` format or one JSON record per line.
pub fn read_embeddings<R: Read>(mut input: R) -> Result<Vec<EmbeddingRecord>> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let records = if bytes.starts_with(EMBEDDING_MAGIC) {
        decode_binary(&bytes)?
    } else {
        let text = std::str::from_utf8(&bytes)
            .map_err(|e| Error::Embedding(format!("not UTF-8 and no EMB1 header: {e}")))?;
        let mut out = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            out.push(
                serde_json::from_str(line).map_err(|e| Error::at_line(i + 1, e.into()))?,
            );
        }
        out
    };
    validate_pool(&records)?;
    Ok(records)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self.pos + len;
        let slice = self.bytes.get(self.pos..end).ok_or_else(|| {
            Error::Embedding(format!("truncated binary file at byte {}", self.pos))
        })?;
        self.pos = end;
        Ok(slice)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u16()? as usize;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|e| Error::Embedding(format!("invalid UTF-8 string: {e}")))
    }

    fn floats(&mut self, count: usize) -> Result<Vec<f64>> {
        Ok(self
            .take(count * 4)?
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
            .collect())
    }
}

fn decode_binary(bytes: &[u8]) -> Result<Vec<EmbeddingRecord>> {
    let mut cur = Cursor { bytes, pos: 4 };
    let count = cur.u32()? as usize;
    let vis_dim = cur.u32()? as usize;
    let txt_dim = cur.u32()? as usize;
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let id = cur.string()?;
        let vis = cur.floats(vis_dim)?;
        let txt = cur.floats(txt_dim)?;
        let n_cats = cur.u16()? as usize;
        let cats = (0..n_cats).map(|_| cur.string()).collect::<Result<_>>()?;
        records.push(EmbeddingRecord { id, vis, txt, cats });
    }
    if cur.pos != bytes.len() {
        return Err(Error::Embedding(format!(
            "{} trailing bytes after {count} records",
            bytes.len() - cur.pos
        )));
    }
    Ok(records)
}

/// Write records in the binary format (floats narrowed to f32).
pub fn write_embeddings_binary<W: Write>(mut out: W, records: &[EmbeddingRecord]) -> Result<()> {
    let (vis_dim, txt_dim) = records.first().map_or((0, 0), |r| (r.vis.len(), r.txt.len()));
    let u32_of = |x: usize| {
        u32::try_from(x).map_err(|_| Error::Embedding(format!("{x} does not fit in u32")))
    };
    let u16_of = |x: usize| {
        u16::try_from(x).map_err(|_| Error::Embedding(format!("{x} does not fit in u16")))
    };
    out.write_all(EMBEDDING_MAGIC)?;
    for x in [records.len(), vis_dim, txt_dim] {
        out.write_all(&u32_of(x)?.to_le_bytes())?;
    }
    for r in records {
        if r.vis.len() != vis_dim || r.txt.len() != txt_dim {
            return Err(Error::Embedding(format!("record {} has mismatched dimensions", r.id)));
        }
        out.write_all(&u16_of(r.id.len())?.to_le_bytes())?;
        out.write_all(r.id.as_bytes())?;
        for x in r.vis.iter().chain(&r.txt) {
            out.write_all(&(*x as f32).to_le_bytes())?;
        }
        out.write_all(&u16_of(r.cats.len())?.to_le_bytes())?;
        for c in &r.cats {
            out.write_all(&u16_of(c.len())?.to_le_bytes())?;
            out.write_all(c.as_bytes())?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiningParams {
    pub num_negatives: usize,
    pub txt_threshold: f64,
    pub exclude_identical_categories: bool,
}

impl MiningParams {
    pub fn new(num_negatives: usize) -> Self {
        MiningParams {
            num_negatives,
            txt_threshold: DEFAULT_TXT_THRESHOLD,
            exclude_identical_categories: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_negatives == 0 {
            return Err(Error::Mining("num_negatives must be at least 1".into()));
        }
        if !(self.txt_threshold > 0.0 && self.txt_threshold <= 1.0) {
            return Err(Error::Mining(format!(
                "txt_threshold {} outside (0, 1]",
                self.txt_threshold
            )));
        }
        Ok(())
    }

    /// Whether `candidate` may serve as a distractor for `anchor`. A record
    /// with no categories never triggers the category filter.
    pub fn admits(&self, anchor: &EmbeddingRecord, candidate: &EmbeddingRecord) -> bool {
        self.passes_category(anchor, candidate) && self.passes_text(anchor, candidate)
    }

    fn passes_category(&self, anchor: &EmbeddingRecord, candidate: &EmbeddingRecord) -> bool {
        !(self.exclude_identical_categories
            && !anchor.cats.is_empty()
            && candidate.cats == anchor.cats)
    }

    fn passes_text(&self, anchor: &EmbeddingRecord, candidate: &EmbeddingRecord) -> bool {
        anchor.text_cosine(candidate) < self.txt_threshold
    }
}

/// The `num_negatives` visually closest admissible records, most similar
/// first, ties broken by id.
pub fn mine(
    anchor: &EmbeddingRecord,
    pool: &[EmbeddingRecord],
    params: &MiningParams,
) -> Result<Vec<String>> {
    params.validate()?;
    let others: Vec<&EmbeddingRecord> = pool.iter().filter(|r| r.id != anchor.id).collect();
    let after_category: Vec<&EmbeddingRecord> = others
        .iter()
        .copied()
        .filter(|r| params.passes_category(anchor, r))
        .collect();
    let mut admitted: Vec<(f64, &EmbeddingRecord)> = after_category
        .iter()
        .filter(|r| params.passes_text(anchor, r))
        .map(|r| (anchor.visual_cosine(r), *r))
        .collect();
    if admitted.len() < params.num_negatives {
        return Err(Error::Mining(format!(
            "anchor {}: need {} negatives; {} candidates, {} after the category filter, {} after the text filter",
            anchor.id,
            params.num_negatives,
            others.len(),
            after_category.len(),
            admitted.len()
        )));
    }
    admitted.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.id.cmp(&b.1.id)));
    Ok(admitted
        .into_iter()
        .take(params.num_negatives)
        .map(|(_, r)| r.id.clone())
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchmarkMode {
    Random,
    Adversarial,
}

impl BenchmarkMode {
    pub fn as_str(self) -> &'static str {
        match self {
            BenchmarkMode::Random => "random",
            BenchmarkMode::Adversarial => "adversarial",
        }
    }
}

impl fmt::Display for BenchmarkMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BenchmarkMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(BenchmarkMode::Random),
            "adversarial" => Ok(BenchmarkMode::Adversarial),
            other => Err(Error::Mining(format!(
                "unknown mode {other:?}; expected random or adversarial"
            ))),
        }
    }
}

/// Pool indices of the `count` anchors for `seed`.
pub fn sample_anchors(pool_len: usize, count: usize, seed: u64) -> Result<Vec<usize>> {
    if count > pool_len {
        return Err(Error::Mining(format!(
            "pool exhausted: {count} anchors requested from {pool_len} records"
        )));
    }
    Ok(sample(&mut stream_rng(seed, "anchors", &[]), pool_len, count).into_vec())
}

/// `n - 1` uniform distractor indices for episode `e`, never the anchor.
pub fn sample_random_distractors(
    pool_len: usize,
    anchor: usize,
    n: usize,
    seed: u64,
    e: usize,
) -> Vec<usize> {
    let mut rng = stream_rng(seed, "distractors", &[e as u64]);
    sample(&mut rng, pool_len - 1, n - 1)
        .into_iter()
        .map(|i| if i >= anchor { i + 1 } else { i })
        .collect()
}

/// Episodes whose first image is the anchor and gt. Presentations are left
/// empty for the evaluation shuffler to fill.
pub fn build_benchmark(
    pool: &[EmbeddingRecord],
    count: usize,
    n: usize,
    mode: BenchmarkMode,
    seed: u64,
    params: &MiningParams,
) -> Result<Vec<EpisodeSpec>> {
    if n < 2 {
        return Err(Error::Mining(format!("n = {n} must be at least 2")));
    }
    if pool.len() < n {
        return Err(Error::Mining(format!(
            "pool exhausted: {} records cannot fill episodes of {n}",
            pool.len()
        )));
    }
    let params = MiningParams {
        num_negatives: n - 1,
        ..params.clone()
    };
    params.validate()?;
    let anchors = sample_anchors(pool.len(), count, seed)?;
    anchors
        .par_iter()
        .enumerate()
        .map(|(e, &a)| {
            let anchor = &pool[a];
            let distractors = match mode {
                BenchmarkMode::Random => sample_random_distractors(pool.len(), a, n, seed, e)
                    .into_iter()
                    .map(|i| pool[i].id.clone())
                    .collect(),
                BenchmarkMode::Adversarial => mine(anchor, pool, &params)?,
            };
            let images: Vec<String> = std::iter::once(anchor.id.clone())
                .chain(distractors)
                .collect();
            Ok(EpisodeSpec {
                instance_id: format!("{mode}-{e:05}"),
                gt: anchor.id.clone(),
                images,
                presentations: Vec::new(),
            })
        })
        .collect()
}

/// Post-hoc check that every distractor passes both mining filters.
pub fn verify_filters(
    specs: &[EpisodeSpec],
    pool: &[EmbeddingRecord],
    params: &MiningParams,
) -> Result<()> {
    let by_id: HashMap<&str, &EmbeddingRecord> = pool.iter().map(|r| (r.id.as_str(), r)).collect();
    let lookup = |id: &str| {
        by_id
            .get(id)
            .copied()
            .ok_or_else(|| Error::Mining(format!("id {id} not in pool")))
    };
    for spec in specs {
        let anchor = lookup(&spec.gt)?;
        for id in spec.images.iter().filter(|id| **id != spec.gt) {
            if !params.admits(anchor, lookup(id)?) {
                return Err(Error::Mining(format!(
                    "episode {}: distractor {id} violates a filter",
                    spec.instance_id
                )));
            }
        }
    }
    Ok(())
}

/// Mean anchor-distractor visual cosine over all episodes.
pub fn mean_visual_cosine(specs: &[EpisodeSpec], pool: &[EmbeddingRecord]) -> Result<f64> {
    let by_id: HashMap<&str, &EmbeddingRecord> = pool.iter().map(|r| (r.id.as_str(), r)).collect();
    let mut sims = Vec::new();
    for spec in specs {
        let anchor = by_id
            .get(spec.gt.as_str())
            .ok_or_else(|| Error::Mining(format!("id {} not in pool", spec.gt)))?;
        for id in spec.images.iter().filter(|id| **id != spec.gt) {
            let r = by_id
                .get(id.as_str())
                .ok_or_else(|| Error::Mining(format!("id {id} not in pool")))?;
            sims.push(anchor.visual_cosine(r));
        }
    }
    Ok(crate::numeric::mean(&sims))
}
