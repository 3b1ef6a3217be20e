//! Permutation-robustness evaluation and diagnostics.
//!
//! An [`Episode`] is one retrieval instance shown under `T` shuffled
//! orderings. A predictor maps each presentation to a 1-based position; from
//! those predictions we report mean accuracy over shuffle rounds, the spread
//! of per-position recall (RStd), and how often the selected image identity
//! survives reshuffling (consistency).

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::baselines::{attention_readout_predict, vanilla_predict};
use crate::calibration::AttentionPrior;
use crate::debias::{layer_strength, select_layers, visual_posterior, DebiasConfig};
use crate::error::{Error, Result};
use crate::numeric::{argmax, mean, population_std, sum, CompensatedSum};
use crate::scoring::score_candidates;
use crate::trace::InferenceTrace;

/// One shuffled presentation; `orbit` optionally holds the other `N - 1`
/// cyclic shifts of the same ordering (needed by Permutation Averaging).
#[derive(Debug, Clone)]
pub struct Presentation {
    pub trace: InferenceTrace,
    pub orbit: Vec<InferenceTrace>,
}

impl Presentation {
    pub fn new(trace: InferenceTrace) -> Self {
        Self {
            trace,
            orbit: Vec::new(),
        }
    }

    /// The presentation followed by its orbit shifts.
    pub fn full_orbit(&self) -> Vec<InferenceTrace> {
        std::iter::once(self.trace.clone())
            .chain(self.orbit.iter().cloned())
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Episode {
    pub id: String,
    pub images: Vec<String>,
    pub gt_image: String,
    pub presentations: Vec<Presentation>,
}

impl Episode {
    pub fn new(
        id: impl Into<String>,
        images: Vec<String>,
        gt_image: impl Into<String>,
        presentations: Vec<Presentation>,
    ) -> Result<Self> {
        let ep = Episode {
            id: id.into(),
            images,
            gt_image: gt_image.into(),
            presentations,
        };
        ep.validate()?;
        Ok(ep)
    }

    pub fn n(&self) -> usize {
        self.images.len()
    }

    pub fn t(&self) -> usize {
        self.presentations.len()
    }

    fn validate(&self) -> Result<()> {
        if self.presentations.is_empty() {
            return Err(Error::Episode(format!("episode {} has no presentations", self.id)));
        }
        let ids: BTreeSet<&String> = self.images.iter().collect();
        if ids.len() != self.images.len() {
            return Err(Error::Episode(format!("episode {} repeats an image", self.id)));
        }
        if !ids.contains(&self.gt_image) {
            return Err(Error::Episode(format!(
                "episode {}: ground-truth image {} is not a candidate",
                self.id, self.gt_image
            )));
        }
        for (t, p) in self.presentations.iter().enumerate() {
            for trace in std::iter::once(&p.trace).chain(&p.orbit) {
                let shown: BTreeSet<&String> = trace.images().iter().collect();
                if shown != ids {
                    return Err(Error::Episode(format!(
                        "episode {} presentation {t}: identity set differs from the episode's",
                        self.id
                    )));
                }
                let gt = trace.gt().ok_or_else(|| {
                    Error::Episode(format!(
                        "episode {} presentation {t}: trace has no ground truth",
                        self.id
                    ))
                })?;
                if trace.image_at(gt) != self.gt_image {
                    return Err(Error::Episode(format!(
                        "episode {} presentation {t}: gt position {gt} holds {}, expected {}",
                        self.id,
                        trace.image_at(gt),
                        self.gt_image
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Group traces into episodes. Traces of one episode share `instance_id`;
/// `shuffle_id = t * N + s` encodes presentation `t` and cyclic shift `s`,
/// where `s = 0` is the presentation itself.
pub fn episodes_from_traces(traces: Vec<InferenceTrace>) -> Result<Vec<Episode>> {
    let mut grouped: BTreeMap<String, BTreeMap<u64, Vec<(u64, InferenceTrace)>>> = BTreeMap::new();
    for t in traces {
        let n = t.n() as u64;
        let (round, shift) = (t.shuffle_id() / n, t.shuffle_id() % n);
        grouped
            .entry(t.instance_id().to_string())
            .or_default()
            .entry(round)
            .or_default()
            .push((shift, t));
    }
    let mut episodes = Vec::with_capacity(grouped.len());
    for (id, rounds) in grouped {
        let mut presentations = Vec::with_capacity(rounds.len());
        for (round, mut shifts) in rounds {
            shifts.sort_by_key(|(s, _)| *s);
            let mut iter = shifts.into_iter();
            let (s0, trace) = iter.next().expect("non-empty group");
            if s0 != 0 {
                return Err(Error::Episode(format!(
                    "episode {id} round {round}: no unshifted presentation (shuffle_id {})",
                    round * trace.n() as u64
                )));
            }
            presentations.push(Presentation {
                trace,
                orbit: iter.map(|(_, t)| t).collect(),
            });
        }
        let first = &presentations[0].trace;
        let gt = first.gt().ok_or_else(|| {
            Error::Episode(format!("episode {id}: evaluation traces need a ground truth"))
        })?;
        let gt_image = first.image_at(gt).to_string();
        let mut images = first.images().to_vec();
        images.sort();
        episodes.push(Episode::new(id, images, gt_image, presentations)?);
    }
    Ok(episodes)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub n: usize,
    pub t: usize,
    pub episodes: usize,
    /// Accuracy (%) of each shuffle round.
    pub round_accuracy: Vec<f64>,
    pub acc_mean: f64,
    /// Population std of `round_accuracy`.
    pub acc_std: f64,
    pub rstd: f64,
    pub consistency: f64,
    /// Selection rate (%) by ground-truth position (row) and predicted
    /// position (column).
    pub confusion: Vec<Vec<f64>>,
    pub confusion_counts: Vec<Vec<usize>>,
    pub per_position_recall: Vec<f64>,
    pub samples: usize,
}

/// Population standard deviation of per-position recall percentages.
pub fn recall_std(recalls: &[f64]) -> f64 {
    population_std(recalls)
}

/// Percentage of episodes whose selected identities agree across shuffles.
pub fn consistency<S: PartialEq>(selections: &[Vec<S>]) -> f64 {
    if selections.is_empty() {
        return 0.0;
    }
    let stable = selections
        .iter()
        .filter(|sel| sel.windows(2).all(|w| w[0] == w[1]))
        .count();
    100.0 * stable as f64 / selections.len() as f64
}

/// Run `predictor` over every presentation of every episode.
pub fn evaluate<F>(predictor: F, episodes: &[Episode]) -> Result<EvalReport>
where
    F: Fn(&Presentation) -> Result<usize> + Sync,
{
    let first = episodes
        .first()
        .ok_or_else(|| Error::Episode("no episodes to evaluate".into()))?;
    let (n, t) = (first.n(), first.t());
    for ep in episodes {
        if ep.n() != n || ep.t() != t {
            return Err(Error::Episode(format!(
                "episode {} has N={}, T={}; expected N={n}, T={t}",
                ep.id,
                ep.n(),
                ep.t()
            )));
        }
    }

    let predictions: Vec<Vec<usize>> = episodes
        .par_iter()
        .map(|ep| {
            ep.presentations
                .iter()
                .map(|p| {
                    let pos = predictor(p)?;
                    if !(1..=n).contains(&pos) {
                        return Err(Error::Episode(format!(
                            "predictor returned position {pos} outside 1..={n}"
                        )));
                    }
                    Ok(pos)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let mut counts = vec![vec![0usize; n]; n];
    let mut correct_by_round = vec![0usize; t];
    let mut selections = Vec::with_capacity(episodes.len());
    for (ep, preds) in episodes.iter().zip(&predictions) {
        let mut chosen = Vec::with_capacity(t);
        for (round, (p, &pred)) in ep.presentations.iter().zip(preds).enumerate() {
            let gt = p.trace.gt().expect("validated episode");
            counts[gt - 1][pred - 1] += 1;
            if pred == gt {
                correct_by_round[round] += 1;
            }
            chosen.push(p.trace.image_at(pred));
        }
        selections.push(chosen);
    }

    let e = episodes.len() as f64;
    let round_accuracy: Vec<f64> = correct_by_round
        .iter()
        .map(|&c| 100.0 * c as f64 / e)
        .collect();
    let confusion: Vec<Vec<f64>> = counts
        .iter()
        .map(|row| {
            let total: usize = row.iter().sum();
            if total == 0 {
                log::warn!("a ground-truth position never occurs; its confusion row is zero");
                return vec![0.0; n];
            }
            row.iter()
                .map(|&c| 100.0 * c as f64 / total as f64)
                .collect()
        })
        .collect();
    let per_position_recall: Vec<f64> = (0..n).map(|i| confusion[i][i]).collect();

    Ok(EvalReport {
        n,
        t,
        episodes: episodes.len(),
        acc_mean: mean(&round_accuracy),
        acc_std: population_std(&round_accuracy),
        round_accuracy,
        rstd: recall_std(&per_position_recall),
        consistency: consistency(&selections),
        confusion,
        confusion_counts: counts,
        per_position_recall,
        samples: episodes.len() * t,
    })
}

/// Candidate log-probability profiles for one ground-truth position.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogitProfile {
    pub gt: usize,
    pub mean: Vec<f64>,
    pub samples: Vec<Vec<f64>>,
}

/// Per-gt mean and individual candidate log-probability vectors.
pub fn logit_profile_report(traces: &[InferenceTrace]) -> Result<Vec<LogitProfile>> {
    let mut groups: BTreeMap<usize, Vec<Vec<f64>>> = BTreeMap::new();
    for t in traces {
        let gt = t
            .gt()
            .ok_or_else(|| Error::Episode("logit profiles need traces with ground truth".into()))?;
        groups
            .entry(gt)
            .or_default()
            .push(score_candidates(t)?.log_probs);
    }
    Ok(groups
        .into_iter()
        .map(|(gt, samples)| {
            let n = samples[0].len();
            let mean = (0..n)
                .map(|j| sum(samples.iter().map(|s| s[j])) / samples.len() as f64)
                .collect();
            LogitProfile { gt, mean, samples }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DivergenceRow {
    pub gt: usize,
    pub count: usize,
    /// Mean attention over the selected layers, normalized per trace.
    pub mean_attention: Vec<f64>,
    pub mean_probs: Vec<f64>,
    /// Rates (%) at which each readout picks the ground truth.
    pub attention_argmax_rate: f64,
    pub logit_argmax_rate: f64,
    pub purified_argmax_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DivergenceReport {
    pub rows: Vec<DivergenceRow>,
    pub attention_accuracy: f64,
    pub logit_accuracy: f64,
    pub purified_accuracy: Option<f64>,
}

/// Compare where attention points against what the logits pick, per gt.
pub fn divergence_report(
    traces: &[InferenceTrace],
    cfg: &DebiasConfig,
    prior: Option<&AttentionPrior>,
) -> Result<DivergenceReport> {
    cfg.validate()?;
    struct Acc {
        count: usize,
        attention: Vec<CompensatedSum>,
        probs: Vec<CompensatedSum>,
        attn_hits: usize,
        logit_hits: usize,
        pure_hits: usize,
    }
    let mut groups: BTreeMap<usize, Acc> = BTreeMap::new();
    for t in traces {
        let gt = t
            .gt()
            .ok_or_else(|| Error::Episode("divergence needs traces with ground truth".into()))?;
        let n = t.n();
        let layers = select_layers(&layer_strength(t), cfg.k);
        let attn: Vec<f64> = (0..n)
            .map(|j| sum(layers.iter().map(|&l| t.attention()[l][j])))
            .collect();
        let total: f64 = sum(attn.iter().copied());
        let probs = score_candidates(t)?.probs;
        let pure_hit = match prior {
            Some(p) => argmax(&visual_posterior(t, p, cfg)?.pi) + 1 == gt,
            None => false,
        };

        let acc = groups.entry(gt).or_insert_with(|| Acc {
            count: 0,
            attention: vec![CompensatedSum::new(); n],
            probs: vec![CompensatedSum::new(); n],
            attn_hits: 0,
            logit_hits: 0,
            pure_hits: 0,
        });
        acc.count += 1;
        for (a, x) in acc.attention.iter_mut().zip(&attn) {
            a.add(if total > 0.0 { x / total } else { 1.0 / n as f64 });
        }
        for (a, x) in acc.probs.iter_mut().zip(&probs) {
            a.add(*x);
        }
        acc.attn_hits += usize::from(attention_readout_predict(t, cfg.k) == gt);
        acc.logit_hits += usize::from(vanilla_predict(t)? == gt);
        acc.pure_hits += usize::from(pure_hit);
    }

    let pct = |hits: usize, count: usize| 100.0 * hits as f64 / count as f64;
    let total: usize = groups.values().map(|a| a.count).sum();
    let rows: Vec<DivergenceRow> = groups
        .iter()
        .map(|(&gt, a)| DivergenceRow {
            gt,
            count: a.count,
            mean_attention: a.attention.iter().map(|s| s.value() / a.count as f64).collect(),
            mean_probs: a.probs.iter().map(|s| s.value() / a.count as f64).collect(),
            attention_argmax_rate: pct(a.attn_hits, a.count),
            logit_argmax_rate: pct(a.logit_hits, a.count),
            purified_argmax_rate: prior.map(|_| pct(a.pure_hits, a.count)),
        })
        .collect();
    let hits = |f: fn(&Acc) -> usize| groups.values().map(f).sum::<usize>();
    let (attention_accuracy, logit_accuracy, purified_accuracy) = if total == 0 {
        (0.0, 0.0, prior.map(|_| 0.0))
    } else {
        (
            pct(hits(|a| a.attn_hits), total),
            pct(hits(|a| a.logit_hits), total),
            prior.map(|_| pct(hits(|a| a.pure_hits), total)),
        )
    };
    Ok(DivergenceReport {
        rows,
        attention_accuracy,
        logit_accuracy,
        purified_accuracy,
    })
}

fn pct2(x: f64) -> String {
    format!("{x:.2}")
}

/// `method,acc_mean,acc_std,rstd,consistency,samples`
pub fn write_summary_csv<W: Write>(out: W, reports: &[(String, EvalReport)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "acc_mean", "acc_std", "rstd", "consistency", "samples"])?;
    for (name, r) in reports {
        w.write_record([
            name.clone(),
            pct2(r.acc_mean),
            pct2(r.acc_std),
            pct2(r.rstd),
            pct2(r.consistency),
            r.samples.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `method,gt_position,pred_1..pred_N` selection rates.
pub fn write_confusion_csv<W: Write>(out: W, reports: &[(String, EvalReport)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let n = reports.first().map_or(0, |(_, r)| r.n);
    let mut header = vec!["method".to_string(), "gt_position".to_string()];
    header.extend((1..=n).map(|j| format!("pred_{j}")));
    w.write_record(&header)?;
    for (name, r) in reports {
        for (i, row) in r.confusion.iter().enumerate() {
            let mut rec = vec![name.clone(), (i + 1).to_string()];
            rec.extend(row.iter().map(|&x| pct2(x)));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `method,position,recall`
pub fn write_recalls_csv<W: Write>(out: W, reports: &[(String, EvalReport)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "position", "recall"])?;
    for (name, r) in reports {
        for (i, x) in r.per_position_recall.iter().enumerate() {
            w.write_record([name.clone(), (i + 1).to_string(), pct2(*x)])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `gt,kind,sample,lp_1..lp_N` with `kind` either `mean` or `sample`.
pub fn write_profiles_csv<W: Write>(out: W, profiles: &[LogitProfile]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let n = profiles.first().map_or(0, |p| p.mean.len());
    let mut header = vec!["gt".to_string(), "kind".into(), "sample".into()];
    header.extend((1..=n).map(|j| format!("lp_{j}")));
    w.write_record(&header)?;
    for p in profiles {
        let mut rec = vec![p.gt.to_string(), "mean".into(), String::new()];
        rec.extend(p.mean.iter().map(|x| format!("{x:.6}")));
        w.write_record(&rec)?;
        for (s, sample) in p.samples.iter().enumerate() {
            let mut rec = vec![p.gt.to_string(), "sample".into(), s.to_string()];
            rec.extend(sample.iter().map(|x| format!("{x:.6}")));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One row per gt position with mean attention, mean probabilities and the
/// readout agreement rates.
pub fn write_divergence_csv<W: Write>(out: W, report: &DivergenceReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let n = report.rows.first().map_or(0, |r| r.mean_probs.len());
    let mut header = vec![
        "gt".to_string(),
        "count".into(),
        "attention_argmax_rate".into(),
        "logit_argmax_rate".into(),
        "purified_argmax_rate".into(),
    ];
    header.extend((1..=n).map(|j| format!("attn_{j}")));
    header.extend((1..=n).map(|j| format!("prob_{j}")));
    w.write_record(&header)?;
    for r in &report.rows {
        let mut rec = vec![
            r.gt.to_string(),
            r.count.to_string(),
            pct2(r.attention_argmax_rate),
            pct2(r.logit_argmax_rate),
            r.purified_argmax_rate.map(pct2).unwrap_or_default(),
        ];
        rec.extend(r.mean_attention.iter().map(|x| format!("{x:.6}")));
        rec.extend(r.mean_probs.iter().map(|x| format!("{x:.6}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
