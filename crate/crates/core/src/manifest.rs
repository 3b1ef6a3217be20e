//! Episode manifests: which images an episode shows, which one is correct,
//! and the seeded orderings it is presented in.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds::{derive_seed, stream_rng};

/// One presented ordering and the seed that produced it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PresentationSpec {
    pub order: Vec<String>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeSpec {
    pub instance_id: String,
    pub images: Vec<String>,
    pub gt: String,
    #[serde(default)]
    pub presentations: Vec<PresentationSpec>,
}

impl EpisodeSpec {
    pub fn validate(&self) -> Result<()> {
        let ids: BTreeSet<&String> = self.images.iter().collect();
        if ids.len() != self.images.len() || self.images.len() < 2 {
            return Err(Error::Episode(format!(
                "episode {}: need at least two distinct images",
                self.instance_id
            )));
        }
        if !ids.contains(&self.gt) {
            return Err(Error::Episode(format!(
                "episode {}: gt {} is not among its images",
                self.instance_id, self.gt
            )));
        }
        for (t, p) in self.presentations.iter().enumerate() {
            let shown: BTreeSet<&String> = p.order.iter().collect();
            if shown != ids || p.order.len() != self.images.len() {
                return Err(Error::Episode(format!(
                    "episode {} presentation {t} is not a permutation of its images",
                    self.instance_id
                )));
            }
        }
        Ok(())
    }

    /// 1-based position of the gt image in presentation `t`.
    pub fn gt_position(&self, t: usize) -> usize {
        self.presentations[t]
            .order
            .iter()
            .position(|id| *id == self.gt)
            .expect("validated presentation")
            + 1
    }
}

/// Replace the presentations of every episode with `t` uniformly shuffled
/// orderings. Each ordering is drawn from its own recorded seed.
pub fn assign_shuffles(specs: &mut [EpisodeSpec], t: usize, seed: u64) {
    for (e, spec) in specs.iter_mut().enumerate() {
        spec.presentations = (0..t)
            .map(|round| {
                let s = derive_seed(seed, "shuffle", &[e as u64, round as u64]);
                PresentationSpec {
                    order: shuffled(&spec.images, s),
                    seed: s,
                }
            })
            .collect();
    }
}

/// The ordering recorded under `seed`.
pub fn shuffled(images: &[String], seed: u64) -> Vec<String> {
    let mut order = images.to_vec();
    order.shuffle(&mut stream_rng(seed, "permutation", &[]));
    order
}

pub fn write_manifest<W: Write>(mut out: W, specs: &[EpisodeSpec]) -> Result<()> {
    for spec in specs {
        serde_json::to_writer(&mut out, spec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_manifest<R: BufRead>(input: R) -> Result<Vec<EpisodeSpec>> {
    let mut specs = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let spec: EpisodeSpec =
            serde_json::from_str(&line).map_err(|e| Error::at_line(i + 1, e.into()))?;
        spec.validate().map_err(|e| Error::at_line(i + 1, e))?;
        specs.push(spec);
    }
    Ok(specs)
}
