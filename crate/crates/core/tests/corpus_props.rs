use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spatiotag_core::corpus::{
    evaluate, extract_spans, parse_conll, write_conll, ColumnMap, Corpus, Label, LabelSet, Sentence, Token,
};

/// Spans as (start, end, label) found by walking the sequence once.
fn naive_spans(labels: &[Label], outside: Label) -> Vec<(usize, usize, Label)> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < labels.len() {
        let mut j = i;
        while j + 1 < labels.len() && labels[j + 1] == labels[i] {
            j += 1;
        }
        if labels[i] != outside {
            out.push((i, j, labels[i]));
        }
        i = j + 1;
    }
    out
}

fn random_corpus(seed: u64, n: usize) -> (Corpus, Vec<Vec<Label>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = LabelSet::new(["O", "G", "L", "T"], "O").unwrap();
    let mut sentences = Vec::new();
    let mut predicted = Vec::new();
    for i in 0..n {
        let len = rng.gen_range(1..12);
        let gold: Vec<Label> = (0..len).map(|_| Label(rng.gen_range(0..4))).collect();
        let pred: Vec<Label> = gold
            .iter()
            .map(|&g| {
                if rng.gen_bool(0.2) {
                    Label(rng.gen_range(0..4))
                } else {
                    g
                }
            })
            .collect();
        let tokens = gold
            .iter()
            .enumerate()
            .map(|(j, &g)| Token::new(format!("w{j}")).with_gold(g))
            .collect();
        sentences.push(Sentence::new(format!("s{i}"), tokens));
        predicted.push(pred);
    }
    (Corpus::new(sentences, labels).unwrap(), predicted)
}

#[test]
fn evaluate_matches_naive_matcher() {
    for seed in 0..20 {
        let (gold, pred) = random_corpus(seed, 50);
        let e = evaluate(&gold, &pred).unwrap();
        let out = gold.labels.outside();
        let (mut correct, mut np, mut ng) = (0usize, 0usize, 0usize);
        let mut per: std::collections::HashMap<Label, (usize, usize, usize)> = Default::default();
        for (s, p) in gold.sentences.iter().zip(&pred) {
            let gs = naive_spans(&s.gold().unwrap(), out);
            let ps = naive_spans(p, out);
            for sp in &ps {
                per.entry(sp.2).or_default().1 += 1;
                if gs.contains(sp) {
                    correct += 1;
                    per.entry(sp.2).or_default().0 += 1;
                }
            }
            for sp in &gs {
                per.entry(sp.2).or_default().2 += 1;
            }
            np += ps.len();
            ng += gs.len();
        }
        let p = correct as f64 / np as f64;
        let r = correct as f64 / ng as f64;
        let f = 2.0 * p * r / (p + r);
        assert!((e.micro.precision - p).abs() < 1e-12);
        assert!((e.micro.recall - r).abs() < 1e-12);
        assert!((e.micro.f1 - f).abs() < 1e-12);
        for (name, prf) in &e.per_type {
            let l = gold.labels.get(name).unwrap();
            let (c, pp, gg) = per.get(&l).copied().unwrap_or_default();
            assert_eq!((prf.correct, prf.predicted, prf.gold), (c, pp, gg));
        }
        let perfect: Vec<_> = gold.sentences.iter().map(|s| s.gold().unwrap()).collect();
        assert_eq!(evaluate(&gold, &perfect).unwrap().micro.f1, 1.0);
    }
}

fn word() -> impl Strategy<Value = String> {
    "[A-Za-z0-9.,'-]{1,8}"
}

proptest! {
    #[test]
    fn conll_round_trip(
        blocks in prop::collection::vec(
            prop::collection::vec((word(), "[A-Z]{2,3}", 0u16..4), 1..8),
            0..6,
        )
    ) {
        let names = ["O", "G", "L", "T"];
        let mut text = String::new();
        for b in &blocks {
            for (w, pos, l) in b {
                text.push_str(&format!("{w} {pos} {}\n", names[*l as usize]));
            }
            text.push('\n');
        }
        let map = ColumnMap::conll2000();
        let c = parse_conll(&text, &map).unwrap();
        prop_assert_eq!(c.len(), blocks.len());
        let back = parse_conll(&write_conll(&c, &map), &map).unwrap();
        prop_assert_eq!(back, c);
    }

    #[test]
    fn spans_are_disjoint_sorted_and_cover_entities(labels in prop::collection::vec(0u16..4, 0..30)) {
        let labels: Vec<Label> = labels.into_iter().map(Label).collect();
        let outside = Label(0);
        let spans = extract_spans(&labels, outside);
        let mut covered = vec![false; labels.len()];
        let mut last_end: Option<usize> = None;
        for sp in &spans {
            prop_assert!(sp.start <= sp.end);
            if let Some(e) = last_end {
                prop_assert!(sp.start > e);
            }
            last_end = Some(sp.end);
            for c in covered.iter_mut().take(sp.end + 1).skip(sp.start) {
                *c = true;
            }
            prop_assert!(labels[sp.start..=sp.end].iter().all(|&l| l == sp.label));
        }
        for (i, &l) in labels.iter().enumerate() {
            prop_assert_eq!(covered[i], l != outside);
        }
        let naive: Vec<_> = naive_spans(&labels, outside);
        prop_assert_eq!(spans.iter().map(|s| (s.start, s.end, s.label)).collect::<Vec<_>>(), naive);
    }

    #[test]
    fn metrics_are_bounded(seed in any::<u64>()) {
        let (gold, pred) = random_corpus(seed, 10);
        let e = evaluate(&gold, &pred).unwrap();
        for p in std::iter::once(&e.micro).chain(e.per_type.iter().map(|(_, p)| p)) {
            for v in [p.precision, p.recall, p.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}
