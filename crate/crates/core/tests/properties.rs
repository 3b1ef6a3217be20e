use std::collections::BTreeSet;

use ladcalib::benchgen::{mine, EmbeddingRecord, MiningParams};
use ladcalib::calibration::{
    build_profile, AttentionPrior, CalibrationOptions, CalibrationProfile, ConditionalBiasMatrix,
};
use ladcalib::debias::{predict, visual_posterior, DebiasConfig};
use ladcalib::evaluation::{episodes_from_traces, evaluate};
use ladcalib::scoring::score_candidates;
use ladcalib::synthetic::{
    generate_calibration_set, generate_eval_episodes, preset, BiasProfile, GeneratorConfig,
    SinkProfile, SyntheticModel,
};
use ladcalib::trace::{
    cyclic_shift, parse_trace, shifted_position, write_trace, CandidateTokenization,
    InferenceTrace, LabelScheme, StepLogits, TraceRecord, Continuation, EOS_TOKEN,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn scheme_strategy() -> impl Strategy<Value = LabelScheme> {
    prop::sample::select(LabelScheme::ALL.to_vec())
}

fn config(n: usize, scheme: LabelScheme, seed: u64, noise: f64) -> GeneratorConfig {
    GeneratorConfig {
        n,
        layers: 4,
        semantic_layers: vec![2, 3],
        gamma_true: 3.0,
        attn_boost: 3.0,
        noise_sigma: noise,
        hardness: 0.2,
        scheme,
        seed,
        bias: BiasProfile::Stripe {
            preferred: vec![1],
            weight: 2.0,
        },
        sink: SinkProfile {
            base_mass: 0.3,
            semantic_mass: 0.5,
            boundary_factor: 2.0,
        },
    }
}

fn generated(n: usize, scheme: LabelScheme, seed: u64, gt: usize) -> InferenceTrace {
    let model = SyntheticModel::new(config(n, scheme, seed, 0.5)).unwrap();
    let order: Vec<String> = (1..=n).map(|k| format!("img{k}")).collect();
    model
        .generate_trace("p", seed, &order, gt, &mut ChaCha8Rng::seed_from_u64(seed))
        .unwrap()
}

/// Single-token trace whose candidate distribution is exactly `probs`.
fn direct_trace(probs: &[f64], attn: Vec<Vec<f64>>, images: Vec<String>) -> InferenceTrace {
    let n = probs.len();
    let tokens: Vec<i64> = (0..n as i64).map(|k| 10 + k).collect();
    TraceRecord {
        v: 1,
        instance_id: "d".into(),
        shuffle_id: 0,
        n,
        scheme: LabelScheme::Numeric,
        labels: (1..=n).map(|k| k.to_string()).collect(),
        images,
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

fn distribution(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.05f64..1.0, n).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn trace_round_trip(n in 2usize..=12, scheme in scheme_strategy(), seed in any::<u64>(), gt_raw in 0usize..12) {
        let n = n.min(scheme.max_candidates());
        let trace = generated(n, scheme, seed, gt_raw % n + 1);
        let line = write_trace(&trace).unwrap();
        let back = parse_trace(&line).unwrap();
        prop_assert_eq!(back.to_record(), trace.to_record());
        prop_assert_eq!(write_trace(&back).unwrap(), line);
    }

    #[test]
    fn shift_composition_and_bijection(n in 2usize..=12, s1 in 0usize..12, s2 in 0usize..12, gt_raw in 0usize..12) {
        let (s1, s2, gt) = (s1 % n, s2 % n, gt_raw % n + 1);
        let order: Vec<String> = (0..n).map(|k| format!("x{k}")).collect();
        let a = cyclic_shift(&order, gt, s1).unwrap();
        let b = cyclic_shift(&a.order, a.gt, s2).unwrap();
        let c = cyclic_shift(&order, gt, (s1 + s2) % n).unwrap();
        prop_assert_eq!(&b.order, &c.order);
        prop_assert_eq!(b.gt, c.gt);
        prop_assert_eq!(&a.order[a.gt - 1], &order[gt - 1]);
        let image: BTreeSet<usize> = (1..=n).map(|p| shifted_position(p, s1, n)).collect();
        prop_assert_eq!(image.len(), n);
    }

    #[test]
    fn scoring_normalizes_and_ignores_step_offsets(n in 2usize..=12, scheme in scheme_strategy(), seed in any::<u64>(), offset in -50.0f64..50.0) {
        let n = n.min(scheme.max_candidates());
        let trace = generated(n, scheme, seed, 1);
        let p = score_candidates(&trace).unwrap();
        prop_assert!((p.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let mut rec = trace.to_record();
        for x in &mut rec.first_step.logits {
            *x += offset;
        }
        if let Some(c) = rec.continuations.first_mut() {
            for x in &mut c.logits {
                *x -= offset;
            }
        }
        let shifted = score_candidates(&InferenceTrace::try_from(rec).unwrap()).unwrap();
        for (a, b) in p.probs.iter().zip(&shifted.probs) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn calibration_ignores_trace_order(seed in any::<u64>(), rot in 0usize..20) {
        let cal = generate_calibration_set(&config(4, LabelScheme::Numeric, seed, 0.3), 5).unwrap();
        let mut shuffled = cal.clone();
        shuffled.rotate_left(rot % cal.len());
        shuffled.reverse();
        let a = build_profile(&cal, &CalibrationOptions::default()).unwrap();
        let b = build_profile(&shuffled, &CalibrationOptions::default()).unwrap();
        prop_assert!((a.gamma - b.gamma).abs() <= 1e-12 * a.gamma);
        for (ra, rb) in a.bias.rows.iter().zip(&b.bias.rows) {
            for (x, y) in ra.iter().zip(rb) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn posterior_invariant_to_attention_scale(seed in any::<u64>(), scale in 0.01f64..1.0, prior_scale in 0.1f64..10.0) {
        let trace = generated(5, LabelScheme::Numeric, seed, 3);
        let prior = AttentionPrior { rows: trace.attention().iter().map(|r| r.iter().map(|x| x * 0.5 + 0.01).collect()).collect() };
        let cfg = DebiasConfig::default();
        let base = visual_posterior(&trace, &prior, &cfg).unwrap();

        let mut rec = trace.to_record();
        for row in &mut rec.attn {
            for x in row.iter_mut() {
                *x *= scale;
            }
        }
        let scaled = InferenceTrace::try_from(rec).unwrap();
        let prior2 = AttentionPrior { rows: prior.rows.iter().map(|r| r.iter().map(|x| x * prior_scale).collect()).collect() };
        let other = visual_posterior(&scaled, &prior2, &cfg).unwrap();
        prop_assert_eq!(&base.selected_layers, &other.selected_layers);
        for (a, b) in base.pi.iter().zip(&other.pi) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn prediction_equivariant_under_relabeling(
        probs in distribution(5),
        attn in prop::collection::vec(prop::collection::vec(0.01f64..0.19, 5), 3),
        bias_rows in prop::collection::vec(distribution(5), 5),
        prior_rows in prop::collection::vec(prop::collection::vec(0.01f64..0.19, 5), 3),
        perm in Just((0..5).collect::<Vec<usize>>()).prop_shuffle(),
    ) {
        let images: Vec<String> = (1..=5).map(|k| format!("i{k}")).collect();
        let n = 5;
        let profile = |bias: Vec<Vec<f64>>, prior: Vec<Vec<f64>>| CalibrationProfile {
            v: 1,
            n,
            scheme: LabelScheme::Numeric,
            layers: 3,
            gamma: 2.0,
            bias: ConditionalBiasMatrix { rows: bias },
            attn_prior: AttentionPrior { rows: prior },
            meta: ladcalib::calibration::ProfileMeta { cal_size: 1, layers: 3, smoothing: 0.0, created_unix: 0 },
        };
        let original = direct_trace(&probs, attn.clone(), images.clone());
        let p0 = profile(bias_rows.clone(), prior_rows.clone());
        let cfg = DebiasConfig::default();
        let r0 = predict(&original, &p0, &cfg).unwrap();

        // position k moves to perm[k]
        let move_vec = |v: &[f64]| {
            let mut out = vec![0.0; n];
            for k in 0..n {
                out[perm[k]] = v[k];
            }
            out
        };
        let mut images2 = vec![String::new(); n];
        for k in 0..n {
            images2[perm[k]] = images[k].clone();
        }
        let mut bias2 = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                bias2[perm[i]][perm[j]] = bias_rows[i][j];
            }
        }
        let permuted = direct_trace(
            &move_vec(&probs),
            attn.iter().map(|r| move_vec(r)).collect(),
            images2,
        );
        let p1 = profile(bias2, prior_rows.iter().map(|r| move_vec(r)).collect());
        let r1 = predict(&permuted, &p1, &cfg).unwrap();

        let mut sorted = r0.calibrated_log_scores.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        prop_assume!(sorted[0] - sorted[1] > 1e-9);
        prop_assert_eq!(r1.predicted_index, perm[r0.predicted_index - 1] + 1);
        for k in 0..n {
            prop_assert!((r0.calibrated_probs[k] - r1.calibrated_probs[perm[k]]).abs() < 1e-9);
        }
    }

    #[test]
    fn mining_ignores_pool_order(seed in any::<u64>(), rot in 0usize..40) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let unit = |v: Vec<f64>| { let n = v.iter().map(|x| x * x).sum::<f64>().sqrt(); v.into_iter().map(|x| x / n).collect::<Vec<_>>() };
        // coarse values force visual-cosine ties
        let mut pool: Vec<EmbeddingRecord> = (0..40).map(|i| EmbeddingRecord {
            id: format!("r{i:02}"),
            vis: unit(vec![1.0, f64::from(rng.random_range(0..4u8))]),
            txt: unit(vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)]),
            cats: [format!("c{}", rng.random_range(0..3u8))].into_iter().collect(),
        }).collect();
        let anchor = pool.remove(0);
        let params = MiningParams::new(3);
        let a = mine(&anchor, &pool, &params);
        let len = pool.len();
        pool.rotate_left(rot % len);
        pool.reverse();
        let b = mine(&anchor, &pool, &params);
        match (a, b) {
            (Ok(a), Ok(b)) => prop_assert_eq!(a, b),
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "outcome depends on pool order"),
        }
    }
}

#[test]
fn evaluate_ignores_episode_order() {
    let cfg = preset("stripe-n4").unwrap();
    let (_, traces) = generate_eval_episodes(&cfg, 40, 3, false).unwrap();
    let mut episodes = episodes_from_traces(traces).unwrap();
    let predictor = |p: &ladcalib::evaluation::Presentation| ladcalib::baselines::vanilla_predict(&p.trace);
    let a = evaluate(predictor, &episodes).unwrap();
    episodes.reverse();
    let b = evaluate(predictor, &episodes).unwrap();
    assert_eq!(a.confusion_counts, b.confusion_counts);
    assert!((a.acc_mean - b.acc_mean).abs() < 1e-12);
    assert_eq!(a.consistency, b.consistency);
}
