//! Brute-force reference implementations. Everything here enumerates the
//! full label space and reads weights straight from the weight table, without
//! going through the lattice code under test.

#![allow(dead_code)]

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spatiotag_core::corpus::{Corpus, Label, LabelSet, Sentence};
use spatiotag_core::ensemble::EnsembleModel;
use spatiotag_core::features::{FeatureConfig, FeatureId, TemplateKind};
use spatiotag_core::fhmm::{FhmmModel, MarkovOrder, WeightTable};
use spatiotag_core::perceptron::{epoch_order, EncodedExample, TrainerConfig};

pub struct Instance {
    pub model: FhmmModel,
    pub sentence: Sentence,
}

const VOCAB: [&str; 6] = ["west", "of", "Boston", "3", "days", "before"];

pub fn features() -> FeatureConfig {
    FeatureConfig::new(vec![TemplateKind::Word, TemplateKind::WindowWord(-1)]).unwrap()
}

pub fn label_set(n: usize) -> LabelSet {
    LabelSet::new((0..n).map(|i| format!("T{i}")), "T0").unwrap()
}

pub fn random_sentence(rng: &mut ChaCha8Rng, len: usize) -> Sentence {
    let words: Vec<&str> = (0..len).map(|_| VOCAB[rng.gen_range(0..VOCAB.len())]).collect();
    Sentence::from_words("r", &words)
}

/// A model with weights in `[-w, w]` over every feature of `vocabulary`
/// windows, sharing one interner.
pub fn random_model(rng: &mut ChaCha8Rng, labels: usize, order: MarkovOrder, w: f64) -> FhmmModel {
    let config = features();
    let mut interner = config.new_interner();
    let every: Vec<&str> = VOCAB.to_vec();
    interner.absorb(&config, &[Sentence::from_words("v", &every)]);
    // also the boundary cells and every left neighbour
    for a in VOCAB {
        for b in VOCAB {
            interner.absorb(&config, &[Sentence::from_words("v", &[a, b])]);
        }
    }
    interner.freeze();
    let mut table = WeightTable::new(labels, interner.len(), order);
    for f in 0..interner.len() {
        for l in 0..labels {
            table.set_emission(FeatureId(f as u32), Label::new(l), rng.gen_range(-w..=w));
        }
    }
    let prevs: Vec<Option<Label>> = match order {
        MarkovOrder::First => vec![None],
        MarkovOrder::Second => std::iter::once(None)
            .chain((0..labels).map(|l| Some(Label::new(l))))
            .collect(),
    };
    for &p2 in &prevs {
        for a in 0..labels {
            for b in 0..labels {
                table.set_transition(p2, Label::new(a), Label::new(b), rng.gen_range(-w..=w));
            }
        }
    }
    FhmmModel::new(label_set(labels), config, Arc::new(interner), table).unwrap()
}

/// Up to `max_len` tokens and `max_labels` labels, weights in [-5, 5].
pub fn random_instance(seed: u64, max_len: usize, max_labels: usize, order: MarkovOrder) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = rng.gen_range(1..=max_labels);
    let len = rng.gen_range(1..=max_len);
    let model = random_model(&mut rng, labels, order, 5.0);
    let sentence = random_sentence(&mut rng, len);
    Instance { model, sentence }
}

/// Per-position label scores summed from the weight table.
pub fn naive_emissions(model: &FhmmModel, sentence: &Sentence) -> Vec<Vec<f64>> {
    let l = model.labels().len();
    model
        .encode(sentence)
        .iter()
        .map(|feats| {
            (0..l)
                .map(|b| feats.iter().map(|&f| model.weights().emission(f, Label::new(b))).sum())
                .collect()
        })
        .collect()
}

/// Emissions summed left to right, then transitions left to right. Using the
/// same order as the lattice keeps exact ties exact.
fn scored(model: &FhmmModel, em: &[Vec<f64>], labels: &[Label]) -> f64 {
    let mut s = 0.0;
    for (p, &b) in labels.iter().enumerate() {
        s += em[p][b.index()];
    }
    for p in 1..labels.len() {
        let p2 = if p >= 2 { Some(labels[p - 2]) } else { None };
        s += model.weights().transition(p2, labels[p - 1], labels[p]);
    }
    s
}

pub fn naive_score(model: &FhmmModel, sentence: &Sentence, labels: &[Label]) -> f64 {
    scored(model, &naive_emissions(model, sentence), labels)
}

/// Calls `f(sequence, score)` for every label sequence in lexicographic order.
pub fn enumerate(model: &FhmmModel, sentence: &Sentence, mut f: impl FnMut(&[Label], f64)) {
    let em = naive_emissions(model, sentence);
    let l = model.labels().len();
    let n = sentence.len();
    if n == 0 {
        f(&[], 0.0);
        return;
    }
    let mut seq = vec![Label(0); n];
    loop {
        f(&seq, scored(model, &em, &seq));
        // odometer increment, last position fastest
        let mut p = n;
        loop {
            if p == 0 {
                return;
            }
            p -= 1;
            if seq[p].index() + 1 < l {
                seq[p] = Label::new(seq[p].index() + 1);
                break;
            }
            seq[p] = Label(0);
        }
    }
}

pub fn all_scored(model: &FhmmModel, sentence: &Sentence) -> Vec<(Vec<Label>, f64)> {
    let mut out = Vec::new();
    enumerate(model, sentence, |s, v| out.push((s.to_vec(), v)));
    out
}

/// First maximum in lexicographic order.
pub fn brute_viterbi(model: &FhmmModel, sentence: &Sentence) -> (Vec<Label>, f64) {
    let mut best: Option<(Vec<Label>, f64)> = None;
    enumerate(model, sentence, |s, v| {
        if best.as_ref().is_none_or(|(_, b)| v > *b) {
            best = Some((s.to_vec(), v));
        }
    });
    best.unwrap()
}

pub fn brute_nbest(model: &FhmmModel, sentence: &Sentence, n: usize) -> Vec<(Vec<Label>, f64)> {
    let mut all = all_scored(model, sentence);
    all.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    all.truncate(n);
    all
}

fn lse(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn brute_log_partition(model: &FhmmModel, sentence: &Sentence) -> f64 {
    let scores: Vec<f64> = all_scored(model, sentence).into_iter().map(|(_, s)| s).collect();
    lse(&scores)
}

pub fn brute_marginals(model: &FhmmModel, sentence: &Sentence) -> (Vec<Vec<f64>>, f64) {
    let all = all_scored(model, sentence);
    let scores: Vec<f64> = all.iter().map(|(_, s)| *s).collect();
    let z = lse(&scores);
    let mut m = vec![vec![0.0; model.labels().len()]; sentence.len()];
    for (seq, s) in &all {
        let p = (s - z).exp();
        for (pos, l) in seq.iter().enumerate() {
            m[pos][l.index()] += p;
        }
    }
    (m, z)
}

/// True when `got` lists the same sequences as `want` up to reordering of
/// entries whose scores are within `tol`, and every score is within `tol`.
pub fn nbest_matches(got: &[(Vec<Label>, f64)], want: &[(Vec<Label>, f64)], tol: f64) -> bool {
    if got.len() != want.len() {
        return false;
    }
    for (i, ((gs, gv), (ws, wv))) in got.iter().zip(want).enumerate() {
        if (gv - wv).abs() > tol {
            return false;
        }
        if gs != ws {
            let near = |j: usize| want.get(j).is_some_and(|(s, v)| s == gs && (v - gv).abs() <= tol);
            if !(near(i.wrapping_sub(1)) || near(i + 1)) {
                return false;
            }
        }
    }
    true
}

fn pooled(ens: &EnsembleModel, s: &Sentence, n: usize) -> Vec<Vec<Label>> {
    let mut pool: Vec<Vec<Label>> = ens
        .members()
        .iter()
        .flat_map(|m| brute_nbest(m, s, n).into_iter().map(|(q, _)| q))
        .collect();
    pool.sort();
    pool.dedup();
    pool
}

/// Member-normalised probabilities over the pool, `[member][sequence]`.
fn pool_probs(ens: &EnsembleModel, s: &Sentence, pool: &[Vec<Label>]) -> Vec<Vec<f64>> {
    ens.members()
        .iter()
        .map(|m| {
            let probs: Vec<f64> = pool
                .iter()
                .map(|q| (naive_score(m, s, q) - brute_log_partition(m, s)).exp())
                .collect();
            let total: f64 = probs.iter().sum();
            probs.into_iter().map(|p| p / total).collect()
        })
        .collect()
}

/// Lowest index whose value is within 1e-12 of the maximum.
fn first_near_max(values: &[f64]) -> usize {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (0..values.len()).find(|&i| values[i] >= max - 1e-12).unwrap()
}

pub fn brute_bvs(ens: &EnsembleModel, s: &Sentence, n: usize) -> Vec<Label> {
    let pool = pooled(ens, s, n);
    let probs = pool_probs(ens, s, &pool);
    let sums: Vec<f64> = (0..pool.len()).map(|j| probs.iter().map(|r| r[j]).sum()).collect();
    pool[first_near_max(&sums)].clone()
}

pub fn brute_bps(ens: &EnsembleModel, s: &Sentence) -> Vec<Label> {
    let l = ens.labels().len();
    let mut total = vec![vec![0.0; l]; s.len()];
    for m in ens.members() {
        let (marg, _) = brute_marginals(m, s);
        for (t, r) in total.iter_mut().zip(marg) {
            for (a, b) in t.iter_mut().zip(r) {
                *a += b;
            }
        }
    }
    total.iter().map(|row| Label::new(first_near_max(row))).collect()
}

/// Sequence vote entropy and the pool size.
pub fn brute_sve(ens: &EnsembleModel, s: &Sentence, n: usize) -> (f64, usize) {
    let pool = pooled(ens, s, n);
    if pool.len() == 1 {
        return (0.0, 1);
    }
    let probs = pool_probs(ens, s, &pool);
    let c = ens.k() as f64;
    let avg: Vec<f64> = (0..pool.len())
        .map(|j| probs.iter().map(|r| r[j]).sum::<f64>() / c)
        .collect();
    let total: f64 = avg.iter().sum();
    let h = -avg
        .iter()
        .map(|a| a / total)
        .filter(|&p| p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>();
    (h, pool.len())
}

/// A random ensemble of `k` members sharing labels and features.
pub fn random_ensemble(seed: u64, k: usize, labels: usize, w: f64) -> EnsembleModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let members = (0..k)
        .map(|_| random_model(&mut rng, labels, MarkovOrder::First, w))
        .collect();
    EnsembleModel::new(members, 0.8, seed).unwrap()
}

/// Every weight as a flat vector: emissions feature-major, then transitions.
pub fn flatten(t: &WeightTable) -> Vec<f64> {
    let l = t.num_labels();
    let mut v = Vec::new();
    for f in 0..t.num_features() {
        for b in 0..l {
            v.push(t.emission(FeatureId(f as u32), Label::new(b)));
        }
    }
    let prevs: Vec<Option<Label>> = match t.order() {
        MarkovOrder::First => vec![None],
        MarkovOrder::Second => std::iter::once(None)
            .chain((0..l).map(|i| Some(Label::new(i))))
            .collect(),
    };
    for p2 in prevs {
        for a in 0..l {
            for b in 0..l {
                v.push(t.transition(p2, Label::new(a), Label::new(b)));
            }
        }
    }
    v
}

/// Algorithm 1 as printed: keep every snapshot, average at the end.
#[allow(clippy::needless_range_loop)]
pub fn naive_averaged(corpus: &Corpus, fc: &FeatureConfig, tc: &TrainerConfig) -> Vec<f64> {
    let mut interner = fc.new_interner();
    interner.absorb(fc, &corpus.sentences);
    interner.freeze();
    let examples: Vec<EncodedExample> = corpus
        .sentences
        .iter()
        .map(|s| EncodedExample::new(s, fc, &interner).unwrap())
        .collect();
    let l = corpus.labels.len();
    let mut w = WeightTable::new(l, interner.len(), tc.markov_order);
    let tokens: usize = examples.iter().map(|e| e.gold.len()).sum();
    let mut snapshots: Vec<Vec<f64>> = Vec::new();
    for epoch in 0..tc.max_epochs {
        let mut wrong = 0;
        for i in epoch_order(tc.shuffle_seed, epoch, examples.len()) {
            let ex = &examples[i];
            let (z, _) = w.lattice(&ex.features).viterbi();
            for p in 0..z.len() {
                if z[p] != ex.gold[p] {
                    wrong += 1;
                    for &f in &ex.features[p] {
                        w.add_emission(f, z[p], -1.0);
                        w.add_emission(f, ex.gold[p], 1.0);
                    }
                }
            }
            if z != ex.gold {
                for p in 1..z.len() {
                    let zp2 = if p >= 2 { Some(z[p - 2]) } else { None };
                    let gp2 = if p >= 2 { Some(ex.gold[p - 2]) } else { None };
                    w.add_transition(zp2, z[p - 1], z[p], -1.0);
                    w.add_transition(gp2, ex.gold[p - 1], ex.gold[p], 1.0);
                }
            }
            snapshots.push(flatten(&w));
        }
        if wrong as f64 / tokens as f64 <= tc.error_threshold {
            break;
        }
    }
    let m = snapshots.len() as f64;
    let mut mean = vec![0.0; snapshots[0].len()];
    for s in &snapshots {
        for (a, b) in mean.iter_mut().zip(s) {
            *a += b;
        }
    }
    mean.iter_mut().for_each(|a| *a /= m);
    mean
}
