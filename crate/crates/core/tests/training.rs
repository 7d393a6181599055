mod common;

use std::collections::HashMap;

use common::{flatten, naive_averaged};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spatiotag_core::corpus::{evaluate, Label};
use spatiotag_core::features::{FeatureConfig, FeatureId, TemplateKind};
use spatiotag_core::fhmm::{write_model, MarkovOrder, WeightTable};
use spatiotag_core::perceptron::{perceptron_update, train, train_both, EncodedExample, TrainerConfig};
use spatiotag_core::synthetic::{Planted, PlantedConfig};

fn planted(seed: u64, noisy: bool) -> Planted {
    let mut c = PlantedConfig::default();
    if noisy {
        // weaker words and stronger transitions give non-trivial training runs
        c.home_weight = (1.0, 3.0);
        c.transition = 2.5;
        c.margin = 0.5;
    }
    Planted::new(c, seed).unwrap()
}

#[test]
fn lazy_averaging_matches_snapshot_mean() {
    for seed in 0..6u64 {
        let p = planted(seed, true);
        let corpus = p.sample(5 + 3 * seed as usize, seed, "s");
        assert!(corpus.len() <= 20);
        let fc = FeatureConfig::new(vec![TemplateKind::Word, TemplateKind::WindowWord(-1)]).unwrap();
        for order in [MarkovOrder::First, MarkovOrder::Second] {
            let tc = TrainerConfig {
                max_epochs: 7,
                shuffle_seed: seed,
                markov_order: order,
                ..Default::default()
            };
            let (model, stats) = train(&corpus, &tc, &fc).unwrap();
            let got = flatten(model.weights());
            let want = naive_averaged(&corpus, &fc, &tc);
            assert_eq!(got.len(), want.len());
            assert!(stats.updates > 0);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() <= 1e-12, "seed {seed}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn converges_on_planted_corpora() {
    let fc = FeatureConfig::new(vec![TemplateKind::Word]).unwrap();
    let mut converged = 0;
    let mut f1s = Vec::new();
    for seed in 0..10u64 {
        let p = planted(seed, false);
        let tr = p.sample(50, 100 + seed, "tr");
        let te = p.sample(50, 200 + seed, "te");
        let (model, raw, stats) = train_both(&tr, &TrainerConfig::default(), &fc).unwrap();
        if stats.final_error_rate() == Some(0.0) {
            converged += 1;
            // the weights that separated the corpus, not their average
            for s in &tr.sentences {
                assert_eq!(raw.viterbi(s).0, s.gold().unwrap());
            }
        }
        let pred: Vec<_> = te.sentences.iter().map(|s| model.viterbi(s).0).collect();
        f1s.push(evaluate(&te, &pred).unwrap().micro.f1);
    }
    assert!(converged >= 9, "{converged}/10 runs reached zero training error");
    let good = f1s.iter().filter(|&&f| f >= 0.95).count();
    let mean = f1s.iter().sum::<f64>() / 10.0;
    assert!(good >= 9 && mean >= 0.95, "held-out F1 per seed {f1s:?}");
}

#[test]
fn averaged_and_raw_both_fit_separable_data() {
    let p = planted(3, false);
    let tr = p.sample(30, 1, "tr");
    let fc = FeatureConfig::new(vec![TemplateKind::Word]).unwrap();
    let (avg, raw, stats) = train_both(&tr, &TrainerConfig::default(), &fc).unwrap();
    assert_eq!(stats.final_error_rate(), Some(0.0));
    let f1 = |m: &spatiotag_core::fhmm::FhmmModel| {
        let pred: Vec<_> = tr.sentences.iter().map(|s| m.viterbi(s).0).collect();
        evaluate(&tr, &pred).unwrap().micro.f1
    };
    assert_eq!(f1(&raw), 1.0);
    assert!(f1(&avg) >= 0.95);
}

#[test]
fn fixed_seed_gives_bit_identical_models() {
    let p = planted(8, true);
    let tr = p.sample(20, 8, "tr");
    let fc = FeatureConfig::new(vec![TemplateKind::Word, TemplateKind::WindowWord(1)]).unwrap();
    let tc = TrainerConfig {
        shuffle_seed: 77,
        ..Default::default()
    };
    let a = write_model(&train(&tr, &tc, &fc).unwrap().0);
    let b = write_model(&train(&tr, &tc, &fc).unwrap().0);
    assert_eq!(a, b);
}

/// Squared norm of φ(gold) − φ(pred) with φ counting emissions and transitions.
fn delta_norm(t: &WeightTable, ex: &EncodedExample, pred: &[Label]) -> f64 {
    let mut d: HashMap<(u8, usize, usize), i64> = HashMap::new();
    for (seq, sign) in [(&ex.gold[..], 1), (pred, -1)] {
        for (p, feats) in ex.features.iter().enumerate() {
            for f in feats {
                *d.entry((0, f.index(), seq[p].index())).or_default() += sign;
            }
        }
        for p in 1..seq.len() {
            let p2 = if p >= 2 { Some(seq[p - 2]) } else { None };
            *d.entry((1, t.transition_index(p2, seq[p - 1], seq[p]), 0)).or_default() += sign;
        }
    }
    d.values().map(|v| (v * v) as f64).sum()
}

#[test]
fn update_increases_gold_margin_by_feature_difference() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut checked_formula = 0;
    for case in 0..300 {
        let order = if case % 2 == 0 {
            MarkovOrder::First
        } else {
            MarkovOrder::Second
        };
        let labels = rng.gen_range(2..5);
        let model = common::random_model(&mut rng, labels, order, 2.0);
        let len = rng.gen_range(1..7);
        let s = common::random_sentence(&mut rng, len);
        let l = model.labels().len();
        let gold: Vec<Label> = (0..len).map(|_| Label::new(rng.gen_range(0..l))).collect();
        let ex = EncodedExample {
            features: model.encode(&s),
            gold: gold.clone(),
        };
        let mut w = model.weights().clone();
        let (pred, _) = w.lattice(&ex.features).viterbi();
        let before = w.lattice(&ex.features).score(&gold) - w.lattice(&ex.features).score(&pred);
        perceptron_update(&mut w, &ex, &pred);
        let after = w.lattice(&ex.features).score(&gold) - w.lattice(&ex.features).score(&pred);
        let expected = if pred == gold { 0.0 } else { delta_norm(&w, &ex, &pred) };
        assert!((after - before - expected).abs() < 1e-9, "case {case}");
        if pred != gold {
            assert!(after > before);
        }
    }

    // One distinct feature per position, first order: the gain is
    // 2 × mismatched positions + 2 × mismatched transitions whenever no
    // transition pair occurs in both sequences at different positions.
    let fc = FeatureConfig::new(vec![TemplateKind::Word]).unwrap();
    for case in 0..300 {
        let len = rng.gen_range(1..7);
        let words: Vec<String> = (0..len).map(|i| format!("x{i}")).collect();
        let s = spatiotag_core::corpus::Sentence::from_words("s", &words);
        let mut interner = fc.new_interner();
        let features = fc.encode(&s, &mut interner);
        let l = 4;
        let mut w = WeightTable::new(l, interner.len(), MarkovOrder::First);
        for f in 0..interner.len() {
            for b in 0..l {
                w.set_emission(FeatureId(f as u32), Label::new(b), rng.gen_range(-2.0..2.0));
            }
        }
        let gold: Vec<Label> = (0..len).map(|_| Label::new(rng.gen_range(0..l))).collect();
        let ex = EncodedExample {
            features,
            gold: gold.clone(),
        };
        let (pred, _) = w.lattice(&ex.features).viterbi();
        let gp: Vec<_> = (1..len).map(|p| (gold[p - 1], gold[p])).collect();
        let pp: Vec<_> = (1..len).map(|p| (pred[p - 1], pred[p])).collect();
        let mismatched_t = gp.iter().zip(&pp).filter(|(a, b)| a != b).count();
        let crossing = gp
            .iter()
            .zip(&pp)
            .any(|(g, p)| g != p && (pp.contains(g) || gp.contains(p)));
        let repeated = (1..gp.len()).any(|i| gp[..i].contains(&gp[i]) || pp[..i].contains(&pp[i]));
        if pred == gold || crossing || repeated {
            continue;
        }
        let mismatched_p = gold.iter().zip(&pred).filter(|(a, b)| a != b).count();
        let score = |w: &WeightTable| w.lattice(&ex.features).score(&gold) - w.lattice(&ex.features).score(&pred);
        let before = score(&w);
        perceptron_update(&mut w, &ex, &pred);
        let gain = score(&w) - before;
        let want = (2 * mismatched_p + 2 * mismatched_t) as f64;
        assert!((gain - want).abs() < 1e-9, "case {case}: gain {gain}, formula {want}");
        checked_formula += 1;
    }
    assert!(checked_formula > 50);
}
