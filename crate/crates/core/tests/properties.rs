mod common;

use std::path::Path;

use branchy::cost::{expected_complexity, ExitDistribution};
use branchy::data::{parse_tsv, split, synth_generate, TsvOptions};
use branchy::engine::{calibrate_thresholds, entropy, forward_all, joint_loss, route, AlphaSchedule, ThresholdSet};
use branchy::metrics::{accuracy, macro_f1, per_class_scores};
use branchy::models::{exit_logits, FeatureCursor, ModelKind};
use branchy::tensor::{argmax, softmax, Tape};
use common::cases::{metric_case, oracle_accuracy, oracle_macro_f1, random_distribution};
use common::model;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn logits() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-30.0f64..30.0, 2..25)
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn softmax_is_a_distribution(z in logits()) {
        let p = softmax(&z);
        let s: f64 = p.iter().sum();
        prop_assert!((s - 1.0).abs() <= 1e-12);
        prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    /// Strictly inside (0, 1) while the logit spread keeps every
    /// `exp(z_i - max)` above f64 resolution (spread < ~36).
    #[test]
    fn softmax_entries_are_open_interval(z in prop::collection::vec(-15.0f64..15.0, 2..25)) {
        prop_assert!(softmax(&z).iter().all(|&x| x > 0.0 && x < 1.0));
    }

    #[test]
    fn softmax_and_argmax_ignore_shifts(z in logits(), c in -100.0f64..100.0) {
        let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
        let (p, q) = (softmax(&z), softmax(&shifted));
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
        prop_assert_eq!(argmax(&p), argmax(&q));
    }

    #[test]
    fn entropy_is_permutation_invariant(z in logits(), seed in any::<u64>()) {
        let p = softmax(&z);
        let mut q = p.clone();
        use rand::seq::SliceRandom;
        q.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert!((entropy(&p) - entropy(&q)).abs() <= 1e-12);
    }

    #[test]
    fn cooling_logits_raises_entropy_toward_ln_c(z in logits()) {
        let c = z.len() as f64;
        let cool: Vec<f64> = z.iter().map(|v| v * 1e-9).collect();
        prop_assert!((entropy(&softmax(&cool)) - c.ln()).abs() < 1e-6);
        prop_assert!(entropy(&softmax(&cool)) >= entropy(&softmax(&z)) - 1e-12);
    }

    #[test]
    fn expected_complexity_drops_when_mass_moves_earlier(
        raw in prop::collection::vec(0.0f64..1.0, 2..6),
        steps in prop::collection::vec(1.0f64..1e4, 2..6),
        from in any::<prop::sample::Index>(),
        frac in 0.0f64..1.0,
    ) {
        let n = raw.len().min(steps.len());
        let total: f64 = raw[..n].iter().sum::<f64>() + 1e-3;
        let mut probs: Vec<f64> = raw[..n].iter().map(|x| x / total).collect();
        probs[0] += 1.0 - probs.iter().sum::<f64>();
        let flops: Vec<f64> = steps[..n].iter().scan(0.0, |acc, s| { *acc += s; Some(*acc) }).collect();
        let before = expected_complexity(&flops, &ExitDistribution::with_tolerance(probs.clone(), 1e-9).unwrap()).unwrap();
        let j = from.index(n - 1) + 1;
        let moved = probs[j] * frac;
        probs[j] -= moved;
        probs[j - 1] += moved;
        let after = expected_complexity(&flops, &ExitDistribution::with_tolerance(probs, 1e-9).unwrap()).unwrap();
        prop_assert!(after <= before + 1e-9 * before.abs());
    }
}

#[test]
fn entropy_bounds_over_ten_thousand_distributions() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for i in 0..10_000 {
        let p = random_distribution(&mut rng, i);
        let c = p.len();
        let h = entropy(&p);
        assert!((0.0..=(c as f64).ln()).contains(&h), "case {i}: {h}");
    }
    for c in 2..=30 {
        let mut one_hot = vec![0.0; c];
        one_hot[c / 2] = 1.0;
        assert_eq!(entropy(&one_hot), 0.0);
        let uniform = softmax(&vec![0.0; c]);
        assert_eq!(entropy(&uniform), (c as f64).ln(), "C = {c}");
    }
    assert!((entropy(&[0.04; 25]) - 3.2189).abs() < 1e-4);
}

#[test]
fn raising_thresholds_never_delays_exit() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for seed in 0..40 {
        let kind = if seed % 2 == 0 {
            ModelKind::Dnn
        } else {
            ModelKind::StackedLstm
        };
        let m = model(kind, 15, 4, vec![5, 4, 6], 4, seed);
        let tokens: Vec<usize> = (0..rng.random_range(1..6)).map(|_| rng.random_range(0..15)).collect();
        let ln_c = 4f64.ln();
        let low: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..ln_c)).collect();
        let high: Vec<f64> = low.iter().map(|t| t + rng.random_range(0.0..0.5)).collect();
        let a = route(&m, &tokens, &ThresholdSet::new(low.clone()).unwrap()).unwrap();
        let b = route(&m, &tokens, &ThresholdSet::new(high.clone()).unwrap()).unwrap();
        assert!(b.chosen_exit <= a.chosen_exit, "seed {seed}");
        a.check_routing(&ThresholdSet::new(low).unwrap(), 3).unwrap();
        b.check_routing(&ThresholdSet::new(high).unwrap(), 3).unwrap();
        // Thresholds above ln C fire at exit 1 for any non-uniform output.
        let top = route(&m, &tokens, &ThresholdSet::new(vec![ln_c + 1e-9; 3]).unwrap()).unwrap();
        assert_eq!(top.chosen_exit, 1);
    }
}

#[test]
fn joint_loss_is_linear_in_alpha() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for seed in 0..30 {
        let kind = if seed % 2 == 0 {
            ModelKind::Dnn
        } else {
            ModelKind::StackedLstm
        };
        let m = model(kind, 10, 3, vec![4, 4, 3], 3, seed);
        let tokens = [1, 4, 7];
        let label = seed as usize % 3;
        let loss_with = |w: Vec<f64>| {
            let net = &m.network;
            let mut t = Tape::new(&net.params);
            let mut cur = FeatureCursor::new(&mut t, net, &tokens, 32).unwrap();
            let mut logits = Vec::new();
            for h in &net.heads {
                let f = cur.advance(&mut t).unwrap().unwrap();
                logits.push(exit_logits(&mut t, f, h).unwrap());
            }
            let l = joint_loss(&mut t, &logits, label, &AlphaSchedule::from_weights(w)).unwrap();
            t.scalar(l)
        };
        let a1: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..2.0)).collect();
        let a2: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..2.0)).collect();
        let (x, y) = (rng.random_range(0.0..3.0), rng.random_range(0.0..3.0));
        let mix: Vec<f64> = a1.iter().zip(&a2).map(|(p, q)| x * p + y * q).collect();
        let lhs = loss_with(mix);
        let rhs = x * loss_with(a1) + y * loss_with(a2);
        assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
    }
}

#[test]
fn metrics_match_a_confusion_matrix_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    for case in 0..1000 {
        let (pred, gold, c) = metric_case(&mut rng);
        assert_eq!(
            accuracy(&pred, &gold).unwrap(),
            oracle_accuracy(&pred, &gold),
            "case {case}"
        );
        let (m, f1) = oracle_macro_f1(&pred, &gold, c);
        assert_eq!(macro_f1(&pred, &gold, c).unwrap(), m, "case {case}");
        let scores = per_class_scores(&pred, &gold, c).unwrap();
        assert_eq!(scores.iter().map(|s| s.f1).collect::<Vec<_>>(), f1);
    }
    assert_eq!(accuracy(&[0, 1, 1, 0], &[0, 1, 0, 0]).unwrap(), 0.75);
    assert!((macro_f1(&[0, 0, 0, 0], &[0, 0, 1, 1], 2).unwrap() - 1.0 / 3.0).abs() < 1e-12);
}

#[test]
fn calibration_identity() {
    let data = synth_generate(4, 15, 5, 0.3, 9).unwrap();
    for kind in [ModelKind::Dnn, ModelKind::StackedLstm] {
        let m = model(kind, data.vocab.len(), 6, vec![8, 6, 5], 4, 2);
        let th = calibrate_thresholds(&m, &data).unwrap();
        let mut sums = [0.0; 3];
        for ex in &data.examples {
            for (s, (_, h)) in sums.iter_mut().zip(forward_all(&m, &ex.tokens).unwrap()) {
                *s += h;
            }
        }
        for (s, t) in sums.iter().zip(th.values()) {
            assert!((s / data.len() as f64 - t).abs() <= 1e-9);
        }
        let ln_c = 4f64.ln();
        assert!(th.values().iter().all(|&t| (0.0..=ln_c).contains(&t)));
    }
}

#[test]
fn split_is_a_partition() {
    let data = synth_generate(5, 23, 4, 0.2, 4).unwrap();
    for (seed, fr) in [(0, (0.8, 0.1, 0.1)), (1, (0.6, 0.2, 0.2)), (2, (0.5, 0.25, 0.25))] {
        let (tr, dv, te) = split(&data, fr, seed).unwrap();
        let n = data.len();
        assert_eq!(dv.len(), (n as f64 * fr.1 + 1e-9).floor() as usize);
        assert_eq!(te.len(), (n as f64 * fr.2 + 1e-9).floor() as usize);
        assert_eq!(tr.len() + dv.len() + te.len(), n);
        let mut all: Vec<String> = [&tr, &dv, &te]
            .iter()
            .flat_map(|d| d.examples.iter().map(|e| format!("{}|{}", e.raw_text, e.label)))
            .collect();
        let mut orig: Vec<String> = data
            .examples
            .iter()
            .map(|e| format!("{}|{}", e.raw_text, e.label))
            .collect();
        all.sort();
        orig.sort();
        assert_eq!(all, orig);
        assert_eq!(split(&data, fr, seed).unwrap().1, dv);
    }
}

#[test]
fn tsv_round_trip_is_idempotent() {
    let data = synth_generate(3, 10, 4, 0.4, 5).unwrap();
    let text = data.to_tsv();
    let p = Path::new("mem.tsv");
    let once = parse_tsv(&text, p, TsvOptions::default()).unwrap();
    assert_eq!(once.to_tsv(), text);
    let twice = parse_tsv(
        &once.to_tsv(),
        p,
        TsvOptions {
            vocab: Some(&once.vocab),
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(twice.examples, once.examples);
}
