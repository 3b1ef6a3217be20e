//! Acceptance criteria for the engine. Each criterion prints one PASS/FAIL
//! line; the binary exits non-zero if any criterion fails.

use std::collections::{BTreeSet, HashMap};
use std::time::{Duration, Instant};

use ladcalib::baselines::{
    estimate_global_prior, permutation_average_predict, pride_predict, AverageMode, Method,
};
use ladcalib::benchgen::{
    build_benchmark, mean_visual_cosine, mine, verify_filters, BenchmarkMode, EmbeddingRecord,
    MiningParams,
};
use ladcalib::calibration::{build_profile, CalibrationOptions};
use ladcalib::debias::{predict, DebiasConfig};
use ladcalib::evaluation::{
    consistency, divergence_report, episodes_from_traces, recall_std, Episode, EvalReport,
};
use ladcalib::experiment::MethodContext;
use ladcalib::scoring::score_candidates;
use ladcalib::synthetic::{
    generate_calibration_set, generate_eval_episodes, preset, tokenize_labels, GeneratorConfig,
    SyntheticModel, PRESET_NAMES,
};
use ladcalib::trace::{
    CandidateTokenization, Continuation, InferenceTrace, LabelScheme, StepLogits, TraceRecord,
    EOS_TOKEN,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn single_threaded<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .expect("thread pool")
        .install(f)
}

fn secs(d: Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}

/// Every confusion row of every report sums to 100.
fn rows_sum_to_100(reports: &[&EvalReport]) -> bool {
    reports.iter().all(|r| {
        r.confusion
            .iter()
            .all(|row| (row.iter().sum::<f64>() - 100.0).abs() <= 1e-6)
    })
}

fn eval_setup(
    cfg: &GeneratorConfig,
    episodes: usize,
    t: usize,
    orbits: bool,
) -> (Vec<InferenceTrace>, Vec<Episode>) {
    let cal = generate_calibration_set(cfg, 5).expect("calibration set");
    let (_, traces) = generate_eval_episodes(cfg, episodes, t, orbits).expect("episodes");
    (cal, episodes_from_traces(traces).expect("grouping"))
}

fn estimator_exactness() -> Outcome {
    let start = Instant::now();
    let mut worst = (0.0f64, 0.0f64, 0.0f64);
    for name in PRESET_NAMES {
        let cfg = preset(name).unwrap().noiseless();
        let cal = generate_calibration_set(&cfg, 5).unwrap();
        let profile = build_profile(&cal, &CalibrationOptions::default()).unwrap();
        let gamma_err = (profile.gamma - cfg.gamma_true).abs() / cfg.gamma_true;
        let bias_err = profile
            .bias
            .rows
            .iter()
            .zip(cfg.bias_matrix())
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()).collect::<Vec<_>>())
            .fold(0.0, f64::max);
        let prior_err = profile
            .attn_prior
            .rows
            .iter()
            .zip(cfg.expected_attention_prior())
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()).collect::<Vec<_>>())
            .fold(0.0, f64::max);
        worst = (
            worst.0.max(gamma_err),
            worst.1.max(bias_err),
            worst.2.max(prior_err),
        );
    }
    let elapsed = start.elapsed();
    check(
        worst.0 <= 1e-6 && worst.1 <= 1e-6 && worst.2 <= 1e-9 && elapsed < Duration::from_secs(1),
        format!(
            "max gamma rel err {:.2e}, bias err {:.2e}, prior err {:.2e} over {} presets in {}",
            worst.0,
            worst.1,
            worst.2,
            PRESET_NAMES.len(),
            secs(elapsed)
        ),
    )
}

/// Random candidate paths: distinct, lengths 1..=3 over a small alphabet.
fn random_paths(n: usize, rng: &mut ChaCha8Rng) -> Vec<CandidateTokenization> {
    let mut seen = BTreeSet::new();
    let mut paths = Vec::with_capacity(n);
    while paths.len() < n {
        let len = rng.random_range(1..=3);
        let path: Vec<i64> = (0..len).map(|_| rng.random_range(1..=4)).collect();
        if seen.insert(path.clone()) {
            paths.push(path);
        }
    }
    paths
        .iter()
        .map(|p| {
            let is_prefix = paths.iter().any(|q| q.len() > p.len() && q.starts_with(p));
            CandidateTokenization {
                ids: p.clone(),
                eos: p.len() == 1 || is_prefix || rng.random_bool(0.5),
            }
        })
        .collect()
}

/// Builds a trace with random logits at every node of the candidate tree.
fn random_tree_trace(
    scheme: LabelScheme,
    cands: Vec<CandidateTokenization>,
    rng: &mut ChaCha8Rng,
) -> InferenceTrace {
    let n = cands.len();
    let mut children: HashMap<Vec<i64>, BTreeSet<i64>> = HashMap::new();
    for c in &cands {
        for j in 0..c.ids.len() {
            children.entry(c.ids[..j].to_vec()).or_default().insert(c.ids[j]);
        }
        if c.eos {
            children.entry(c.ids.clone()).or_default().insert(EOS_TOKEN);
        }
    }
    let mut logits_for = |set: &BTreeSet<i64>| -> (Vec<i64>, Vec<f64>) {
        let tokens: Vec<i64> = set.iter().copied().collect();
        let logits = tokens.iter().map(|_| rng.random_range(-6.0..6.0)).collect();
        (tokens, logits)
    };
    let (tokens, logits) = logits_for(&children[&Vec::new()]);
    let mut prefixes: Vec<&Vec<i64>> = children.keys().filter(|p| !p.is_empty()).collect();
    prefixes.sort();
    let continuations = prefixes
        .into_iter()
        .map(|p| {
            let (tokens, logits) = logits_for(&children[p]);
            Continuation {
                prefix: p.clone(),
                tokens,
                logits,
            }
        })
        .collect();
    TraceRecord {
        v: 1,
        instance_id: "tree".into(),
        shuffle_id: 0,
        n,
        scheme,
        labels: (1..=n).map(|k| format!("c{k}")).collect(),
        images: (1..=n).map(|k| format!("i{k}")).collect(),
        gt: None,
        first_step: StepLogits { tokens, logits },
        continuations,
        cand_tokens: cands,
        attn: vec![vec![0.0; n]],
    }
    .try_into()
    .expect("valid random tree")
}

/// Enumerates every root-to-leaf path with plain softmax at each node.
fn brute_force_probs(trace: &InferenceTrace) -> Vec<f64> {
    fn softmax_at(tokens: &[i64], logits: &[f64]) -> Vec<(i64, f64)> {
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        tokens.iter().zip(logits).map(|(&t, l)| (t, l.exp() / z)).collect()
    }
    fn walk(
        trace: &InferenceTrace,
        prefix: Vec<i64>,
        prob: f64,
        leaves: &mut HashMap<Vec<i64>, f64>,
    ) {
        let step = if prefix.is_empty() {
            let f = trace.first_step();
            softmax_at(&f.tokens, &f.logits)
        } else {
            match trace.continuations().iter().find(|c| c.prefix == prefix) {
                Some(c) => softmax_at(&c.tokens, &c.logits),
                None => {
                    leaves.insert(prefix, prob);
                    return;
                }
            }
        };
        for (t, p) in step {
            let mut next = prefix.clone();
            next.push(t);
            if t == EOS_TOKEN {
                leaves.insert(next, prob * p);
            } else {
                walk(trace, next, prob * p, leaves);
            }
        }
    }
    let mut leaves = HashMap::new();
    walk(trace, Vec::new(), 1.0, &mut leaves);
    trace
        .cand_tokens()
        .iter()
        .map(|c| {
            let mut path = c.ids.clone();
            if c.eos {
                path.push(EOS_TOKEN);
            }
            leaves[&path]
        })
        .collect()
}

fn restricted_softmax() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    let mut multi_token = 0;
    for i in 0..1000 {
        let n = rng.random_range(2..=12);
        let (scheme, cands) = if i % 2 == 0 {
            let scheme = LabelScheme::ALL[(i / 2) % LabelScheme::ALL.len()];
            let n = n.min(scheme.max_candidates());
            (scheme, tokenize_labels(scheme, &scheme.labels(n).unwrap()))
        } else {
            (LabelScheme::Numeric, random_paths(n, &mut rng))
        };
        multi_token += usize::from(cands.iter().any(|c| c.ids.len() > 1));
        let trace = random_tree_trace(scheme, cands, &mut rng);
        let got = score_candidates(&trace).unwrap().probs;
        for (g, w) in got.iter().zip(brute_force_probs(&trace)) {
            worst = worst.max((g - w).abs());
        }
    }
    let elapsed = start.elapsed();
    check(
        worst <= 1e-9 && elapsed < Duration::from_secs(5),
        format!(
            "1000 trees ({multi_token} with multi-token ids), max abs err {worst:.2e} in {}",
            secs(elapsed)
        ),
    )
}

fn diagonal_restoration(reports: &mut Vec<EvalReport>) -> Outcome {
    let start = Instant::now();
    let (vanilla, ours) = single_threaded(|| {
        let cfg = preset("stripe-n8").unwrap();
        let (cal, episodes) = eval_setup(&cfg, 1000, 5, false);
        let ctx = MethodContext::from_calibration(
            &cal,
            &CalibrationOptions::default(),
            DebiasConfig::default(),
        )
        .unwrap();
        (
            ctx.evaluate(Method::Vanilla, &episodes).unwrap(),
            ctx.evaluate(Method::Ours, &episodes).unwrap(),
        )
    });
    let elapsed = start.elapsed();
    let detail = format!(
        "vanilla acc {:.2} rstd {:.2}; ours acc {:.2} rstd {:.2} consistency {:.2}; {}",
        vanilla.acc_mean,
        vanilla.rstd,
        ours.acc_mean,
        ours.rstd,
        ours.consistency,
        secs(elapsed)
    );
    let ok = vanilla.acc_mean <= 25.0
        && vanilla.rstd >= 25.0
        && ours.acc_mean >= 95.0
        && ours.rstd <= 5.0
        && ours.consistency >= 90.0
        && elapsed < Duration::from_secs(30);
    reports.push(vanilla);
    reports.push(ours);
    check(ok, detail)
}

fn homogenization() -> Outcome {
    let cfg = preset("homog-tail-n8").unwrap().noiseless();
    let model = SyntheticModel::new(cfg.clone()).unwrap();
    let cal = generate_calibration_set(&cfg, 5).unwrap();
    let opts = CalibrationOptions::default();
    let profile = build_profile(&cal, &opts).unwrap();
    let global = estimate_global_prior(&cal, opts.smoothing).unwrap();
    let order: Vec<String> = (1..=8).map(|k| format!("img{k}")).collect();
    let a = model
        .generate_trace("pair", 0, &order, 6, &mut ChaCha8Rng::seed_from_u64(5))
        .unwrap();
    let b = model
        .generate_trace("pair", 1, &order, 7, &mut ChaCha8Rng::seed_from_u64(5))
        .unwrap();
    let pa = score_candidates(&a).unwrap().probs;
    let pb = score_candidates(&b).unwrap().probs;
    let gap = pa.iter().zip(&pb).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let pride = (pride_predict(&a, &global).unwrap(), pride_predict(&b, &global).unwrap());
    let cfg_d = DebiasConfig::default();
    let ours = (
        predict(&a, &profile, &cfg_d).unwrap().predicted_index,
        predict(&b, &profile, &cfg_d).unwrap().predicted_index,
    );
    check(
        gap == 0.0 && pride.0 == pride.1 && ours == (6, 7),
        format!(
            "observed gap {gap:.1e}; pride picks {:?} for gts (6, 7); ours picks {ours:?}",
            pride
        ),
    )
}

fn divergence() -> Outcome {
    let stripe = preset("stripe-n8").unwrap();
    let cal = generate_calibration_set(&stripe, 5).unwrap();
    let profile = build_profile(&cal, &CalibrationOptions::default()).unwrap();
    let (_, traces) = generate_eval_episodes(&stripe, 1000, 1, false).unwrap();
    let cfg = DebiasConfig::default();
    let div = divergence_report(&traces, &cfg, Some(&profile.attn_prior)).unwrap();

    let sink = preset("sink-boundary").unwrap();
    let sink_cal = generate_calibration_set(&sink, 5).unwrap();
    let sink_profile = build_profile(&sink_cal, &CalibrationOptions::default()).unwrap();
    let (_, sink_traces) = generate_eval_episodes(&sink, 1000, 1, false).unwrap();
    let sink_div = divergence_report(&sink_traces, &cfg, Some(&sink_profile.attn_prior)).unwrap();
    let purified = sink_div.purified_accuracy.unwrap();
    check(
        stripe.attn_boost >= 4.0
            && div.attention_accuracy >= 90.0
            && div.logit_accuracy <= 30.0
            && purified >= sink_div.attention_accuracy,
        format!(
            "stripe-n8 attention {:.2} vs logit {:.2}; sink-boundary purified {:.2} vs raw {:.2}",
            div.attention_accuracy, div.logit_accuracy, purified, sink_div.attention_accuracy
        ),
    )
}

fn perm_avg(reports: &mut Vec<EvalReport>) -> Outcome {
    let cfg = preset("stripe-n4").unwrap();
    let (cal, episodes) = eval_setup(&cfg, 500, 5, true);
    let mut unstable = 0;
    let mut orbits = 0;
    for ep in &episodes {
        for p in &ep.presentations {
            let orbit = p.full_orbit();
            let reference =
                permutation_average_predict(&orbit, AverageMode::Probability).unwrap();
            for r in 1..orbit.len() {
                let mut rotated = orbit.clone();
                rotated.rotate_left(r);
                if permutation_average_predict(&rotated, AverageMode::Probability).unwrap()
                    != reference
                {
                    unstable += 1;
                }
            }
            orbits += 1;
        }
    }
    let ctx = MethodContext::from_calibration(
        &cal,
        &CalibrationOptions::default(),
        DebiasConfig::default(),
    )
    .unwrap();
    let pa = ctx.evaluate(Method::PermAvg, &episodes).unwrap();
    let ours = ctx.evaluate(Method::Ours, &episodes).unwrap();
    let gap = (ours.acc_mean - pa.acc_mean).abs();
    let detail = format!(
        "{unstable} identity changes over {orbits} orbits; perm-avg acc {:.2}, ours {:.2} (gap {gap:.2})",
        pa.acc_mean, ours.acc_mean
    );
    reports.push(pa);
    reports.push(ours);
    check(unstable == 0 && gap <= 3.0, detail)
}

fn sample_efficiency(reports: &mut Vec<EvalReport>) -> Outcome {
    let cfg = preset("stripe-n4").unwrap();
    let (_, traces) = generate_eval_episodes(&cfg, 1000, 5, false).unwrap();
    let episodes = episodes_from_traces(traces).unwrap();
    let opts = CalibrationOptions::default();
    let run = |cal_size: usize, tau: f64| {
        let cal = generate_calibration_set(&cfg, cal_size).unwrap();
        let ctx = MethodContext::from_calibration(
            &cal,
            &opts,
            DebiasConfig {
                tau,
                ..DebiasConfig::default()
            },
        )
        .unwrap();
        ctx.evaluate(Method::Ours, &episodes).unwrap()
    };
    let small = run(5, 5.0);
    let large = run(50, 5.0);
    let taus = [1.0, 2.0, 3.0, 4.0, 5.0];
    let sweep: Vec<EvalReport> = taus.iter().map(|&t| run(5, t)).collect();
    let accs: Vec<f64> = sweep.iter().map(|r| r.acc_mean).collect();
    let monotone = accs.windows(2).all(|w| w[1] >= w[0] - 1.0);
    let gap = (small.acc_mean - large.acc_mean).abs();
    let detail = format!(
        "cal 5 acc {:.2} vs cal 50 {:.2} (gap {gap:.2}); tau 1..5 acc {:?}",
        small.acc_mean,
        large.acc_mean,
        accs.iter().map(|a| format!("{a:.2}")).collect::<Vec<_>>()
    );
    reports.push(small);
    reports.push(large);
    reports.extend(sweep);
    check(gap <= 2.0 && monotone, detail)
}

fn metric_fixtures(reports: &[EvalReport]) -> Outcome {
    let r = recall_std(&[100.0, 0.0, 0.0, 0.0]);
    let c = consistency(&[
        vec!["A"; 5],
        vec!["B", "B", "B", "B", "C"],
        vec!["D"; 5],
    ]);
    let refs: Vec<&EvalReport> = reports.iter().collect();
    check(
        (r - 43.30).abs() <= 0.01 && (c - 66.67).abs() <= 0.01 && rows_sum_to_100(&refs),
        format!(
            "recall_std {r:.4}, consistency {c:.4}, confusion rows sum to 100 in {} reports",
            reports.len()
        ),
    )
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
        .collect()
}

/// Clustered pool: records in one cluster look and read alike.
fn seeded_pool(size: usize, seed: u64) -> Vec<EmbeddingRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clusters = 60;
    let vis_c: Vec<Vec<f64>> = (0..clusters).map(|_| gaussian(&mut rng, 16)).collect();
    let txt_c: Vec<Vec<f64>> = (0..clusters).map(|_| gaussian(&mut rng, 8)).collect();
    (0..size)
        .map(|i| {
            let c = rng.random_range(0..clusters);
            let mix = |center: &[f64], spread: f64, rng: &mut ChaCha8Rng| {
                let noise = gaussian(rng, center.len());
                unit(center.iter().zip(noise).map(|(a, b)| a + spread * b).collect())
            };
            let mut cats = BTreeSet::new();
            cats.insert(format!("cat{}", c % 25));
            if rng.random_bool(0.3) {
                cats.insert(format!("cat{}", rng.random_range(0..25)));
            }
            EmbeddingRecord {
                id: format!("r{i:05}"),
                vis: mix(&vis_c[c], 0.6, &mut rng),
                txt: mix(&txt_c[c], 0.35, &mut rng),
                cats,
            }
        })
        .collect()
}

fn mining() -> Outcome {
    let rec = |id: &str, vis: [f64; 2], t: f64, cat: &str| EmbeddingRecord {
        id: id.into(),
        vis: unit(vis.to_vec()),
        txt: vec![t, (1.0 - t * t).sqrt()],
        cats: [cat.to_string()].into_iter().collect(),
    };
    let anchor = rec("anchor", [1.0, 0.0], 1.0, "a");
    let fixture = vec![
        rec("c1", [0.99, 0.141], 0.95, "b"),
        rec("c2", [0.9, 0.436], 0.5, "b"),
        rec("c3", [0.5, 0.866], 0.2, "c"),
    ];
    let picked = mine(&anchor, &fixture, &MiningParams::new(1)).unwrap();

    let params = MiningParams::new(3);
    let mut violations = 0;
    let mut cosines = Vec::new();
    for seed in [1u64, 2, 3] {
        let pool = seeded_pool(10_000, seed);
        let adv = build_benchmark(&pool, 200, 4, BenchmarkMode::Adversarial, seed, &params).unwrap();
        let rnd = build_benchmark(&pool, 200, 4, BenchmarkMode::Random, seed, &params).unwrap();
        violations += usize::from(verify_filters(&adv, &pool, &params).is_err());
        cosines.push((
            mean_visual_cosine(&adv, &pool).unwrap(),
            mean_visual_cosine(&rnd, &pool).unwrap(),
        ));
    }
    let harder = cosines.iter().all(|(a, r)| a > r);
    check(
        picked == ["c2"] && violations == 0 && harder,
        format!(
            "fixture picks {picked:?}; {violations} filter violations on three 10k pools; mean vis cosine adversarial vs random {:?}",
            cosines
                .iter()
                .map(|(a, r)| format!("{a:.3}/{r:.3}"))
                .collect::<Vec<_>>()
        ),
    )
}

fn throughput() -> Outcome {
    let cfg = preset("stripe-n8").unwrap();
    let cal = generate_calibration_set(&cfg, 5).unwrap();
    let (_, traces) = generate_eval_episodes(&cfg, 1000, 1, false).unwrap();
    let layers = traces[0].layers();
    let start = Instant::now();
    let correct = single_threaded(|| {
        let profile = build_profile(&cal, &CalibrationOptions::default()).unwrap();
        let dc = DebiasConfig::default();
        traces
            .iter()
            .filter(|t| predict(t, &profile, &dc).unwrap().predicted_index == t.gt().unwrap())
            .count()
    });
    let elapsed = start.elapsed();
    check(
        traces.len() == 1000 && traces[0].n() == 8 && layers == 32 && elapsed < Duration::from_secs(10),
        format!(
            "{} traces (N=8, L={layers}) calibrated and corrected in {} ({correct} correct)",
            traces.len(),
            secs(elapsed)
        ),
    )
}

fn main() {
    let mut reports = Vec::new();
    let results: Vec<(&str, Outcome)> = vec![
        ("estimator exactness", estimator_exactness()),
        ("restricted-softmax correctness", restricted_softmax()),
        ("diagonal restoration", diagonal_restoration(&mut reports)),
        ("homogenization failure of static priors", homogenization()),
        ("logit-attention divergence", divergence()),
        ("permutation averaging invariance", perm_avg(&mut reports)),
        ("sample efficiency", sample_efficiency(&mut reports)),
        ("metric fixtures", metric_fixtures(&reports)),
        ("mining correctness", mining()),
        ("throughput", throughput()),
    ];
    let mut failed = 0;
    for (name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
