use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::corpus::Label;
use crate::features::FeatureId;

use super::{MarkovOrder, WeightTable};

/// Per-position label scores of one sentence plus the model's transitions.
///
/// Decoding runs over a trellis of states. Under a first-order model a state
/// is a label. Under a second-order model a state is the pair
/// `(previous label, label)`, numbered `prev * L + label`, where `prev = L`
/// is the start symbol and only occurs at position 0. In both cases the
/// transition weight from state `s` into a state with label `b` sits at
/// index `s * L + b` of the transition vector.
#[derive(Clone, Debug)]
pub struct Lattice<'a> {
    len: usize,
    num_labels: usize,
    order: MarkovOrder,
    emissions: Vec<f64>,
    transitions: &'a [f64],
}

/// Up to `n` distinct label sequences, best first.
#[derive(Clone, Debug, PartialEq)]
pub struct NBestList {
    pub entries: Vec<(Vec<Label>, f64)>,
}

impl NBestList {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn best(&self) -> Option<&(Vec<Label>, f64)> {
        self.entries.first()
    }
}

/// Posterior label distribution at every position.
#[derive(Clone, Debug, PartialEq)]
pub struct Marginals {
    /// `probs[p][l]` is the probability that position `p` has label `l`.
    pub probs: Vec<Vec<f64>>,
    pub log_partition: f64,
}

impl Marginals {
    /// Per-position argmax, lowest label index on ties (see [`argmax_tolerant`]).
    pub fn argmax(&self) -> Vec<Label> {
        self.probs.iter().map(|row| argmax_first(row)).collect()
    }
}

/// Values this close to the maximum count as tied with it.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Index of the maximum; among values within [`TIE_TOLERANCE`] of it, the
/// lowest index wins. Sums of probabilities that are equal in exact
/// arithmetic can differ in the last bits, so exact comparison would break
/// ties by rounding noise.
pub fn argmax_tolerant(values: &[f64]) -> usize {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    values.iter().position(|&v| v >= max - TIE_TOLERANCE).unwrap_or(0)
}

pub(crate) fn argmax_first(row: &[f64]) -> Label {
    Label::new(argmax_tolerant(row))
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

impl<'a> Lattice<'a> {
    pub(super) fn new(weights: &'a WeightTable, features: &[Vec<FeatureId>]) -> Self {
        let l = weights.num_labels();
        let mut emissions = vec![0.0; features.len() * l];
        for (p, feats) in features.iter().enumerate() {
            let cell = &mut emissions[p * l..(p + 1) * l];
            for &f in feats {
                if let Some(row) = weights.emission_row(f) {
                    for (c, w) in cell.iter_mut().zip(row) {
                        *c += w;
                    }
                }
            }
        }
        Lattice {
            len: features.len(),
            num_labels: l,
            order: weights.order(),
            emissions,
            transitions: weights.transitions(),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    #[inline]
    pub fn emission(&self, position: usize, label: Label) -> f64 {
        self.emissions[position * self.num_labels + label.index()]
    }

    #[inline]
    fn emit(&self, position: usize, label: usize) -> f64 {
        self.emissions[position * self.num_labels + label]
    }

    fn num_states(&self) -> usize {
        match self.order {
            MarkovOrder::First => self.num_labels,
            MarkovOrder::Second => (self.num_labels + 1) * self.num_labels,
        }
    }

    #[inline]
    fn state_label(&self, s: usize) -> usize {
        s % self.num_labels
    }

    /// States allowed at position 0, in label order.
    fn initial_state(&self, label: usize) -> usize {
        match self.order {
            MarkovOrder::First => label,
            MarkovOrder::Second => self.num_labels * self.num_labels + label,
        }
    }

    /// First successor state of `s`; successors are contiguous and in label order.
    #[inline]
    fn successor_base(&self, s: usize) -> usize {
        match self.order {
            MarkovOrder::First => 0,
            MarkovOrder::Second => self.state_label(s) * self.num_labels,
        }
    }

    #[inline]
    fn transition(&self, from: usize, label: usize) -> f64 {
        self.transitions[from * self.num_labels + label]
    }

    /// Calls `f(pred)` for every state that may precede `s`.
    fn for_each_pred(&self, s: usize, mut f: impl FnMut(usize)) {
        let l = self.num_labels;
        match self.order {
            MarkovOrder::First => (0..l).for_each(f),
            MarkovOrder::Second => {
                let prev = s / l;
                if prev < l {
                    for x in 0..=l {
                        f(x * l + prev);
                    }
                }
            }
        }
    }

    /// Sum of emission and transition weights along `labels`.
    pub fn score(&self, labels: &[Label]) -> f64 {
        assert_eq!(labels.len(), self.len, "label sequence length must match the lattice");
        let mut total = 0.0;
        for (p, &l) in labels.iter().enumerate() {
            total += self.emission(p, l);
        }
        for p in 1..labels.len() {
            let from = match self.order {
                MarkovOrder::First => labels[p - 1].index(),
                MarkovOrder::Second => {
                    let prev2 = if p >= 2 { labels[p - 2].index() } else { self.num_labels };
                    prev2 * self.num_labels + labels[p - 1].index()
                }
            };
            total += self.transition(from, labels[p].index());
        }
        total
    }

    /// `best[p][s]`: highest score obtainable from positions `p+1..` given
    /// state `s` at `p`.
    fn best_suffix(&self) -> Vec<Vec<f64>> {
        let ns = self.num_states();
        let l = self.num_labels;
        let mut best = vec![vec![0.0; ns]; self.len];
        for p in (0..self.len.saturating_sub(1)).rev() {
            let (head, tail) = best.split_at_mut(p + 1);
            let next = &tail[0];
            for (s, slot) in head[p].iter_mut().enumerate() {
                let base = self.successor_base(s);
                let mut m = f64::NEG_INFINITY;
                for b in 0..l {
                    let v = self.transition(s, b) + self.emit(p + 1, b) + next[base + b];
                    if v > m {
                        m = v;
                    }
                }
                *slot = m;
            }
        }
        best
    }

    /// Highest-scoring sequence; ties go to the lexicographically smallest
    /// label sequence.
    pub fn viterbi(&self) -> (Vec<Label>, f64) {
        if self.len == 0 {
            return (Vec::new(), 0.0);
        }
        let best = self.best_suffix();
        let l = self.num_labels;
        let mut state = self.initial_state(0);
        let mut top = self.emit(0, 0) + best[0][state];
        for b in 1..l {
            let s = self.initial_state(b);
            let v = self.emit(0, b) + best[0][s];
            if v > top {
                top = v;
                state = s;
            }
        }
        let mut labels = vec![Label::new(self.state_label(state))];
        for (p, suffix) in best.iter().enumerate().skip(1) {
            let base = self.successor_base(state);
            let mut pick = base;
            let mut top = f64::NEG_INFINITY;
            for b in 0..l {
                let v = self.transition(state, b) + self.emit(p, b) + suffix[base + b];
                if v > top {
                    top = v;
                    pick = base + b;
                }
            }
            state = pick;
            labels.push(Label::new(self.state_label(state)));
        }
        let score = self.score(&labels);
        (labels, score)
    }

    /// Exact top-`n` sequences by best-first search with the exact suffix
    /// bound as heuristic. Equal scores are ordered lexicographically.
    pub fn nbest(&self, n: usize) -> NBestList {
        assert!(n >= 1, "n-best needs n >= 1");
        if self.len == 0 {
            return NBestList {
                entries: vec![(Vec::new(), 0.0)],
            };
        }
        let best = self.best_suffix();
        let l = self.num_labels;
        let mut heap = BinaryHeap::new();
        for b in 0..l {
            let s = self.initial_state(b);
            let score = self.emit(0, b);
            heap.push(Node {
                priority: score + best[0][s],
                score,
                state: s,
                labels: vec![Label::new(b)],
            });
        }
        // The search order depends on partial sums whose rounding differs
        // from `score`. Once n sequences are found, sequences within a small
        // tolerance of the n-th are still collected so that the final cut is
        // made on recomputed scores with the lexicographic tie-break.
        let mut entries: Vec<(Vec<Label>, f64)> = Vec::with_capacity(n);
        let mut cutoff = f64::NEG_INFINITY;
        while let Some(node) = heap.pop() {
            if entries.len() >= n && node.priority < cutoff {
                break;
            }
            let p = node.labels.len();
            if p == self.len {
                let s = self.score(&node.labels);
                entries.push((node.labels, s));
                if entries.len() == n {
                    let nth = entries.iter().map(|e| e.1).fold(f64::INFINITY, f64::min);
                    cutoff = nth - 1e-9 * (1.0 + nth.abs());
                }
                continue;
            }
            let base = self.successor_base(node.state);
            for b in 0..l {
                let score = node.score + self.transition(node.state, b) + self.emit(p, b);
                if score == f64::NEG_INFINITY {
                    continue;
                }
                let mut labels = Vec::with_capacity(self.len);
                labels.extend_from_slice(&node.labels);
                labels.push(Label::new(b));
                heap.push(Node {
                    priority: score + best[p][base + b],
                    score,
                    state: base + b,
                    labels,
                });
            }
        }
        entries.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        entries.truncate(n);
        NBestList { entries }
    }

    fn forward(&self) -> Vec<Vec<f64>> {
        let ns = self.num_states();
        let mut alpha = vec![vec![f64::NEG_INFINITY; ns]; self.len];
        for b in 0..self.num_labels {
            alpha[0][self.initial_state(b)] = self.emit(0, b);
        }
        let mut terms = Vec::with_capacity(self.num_labels + 1);
        for p in 1..self.len {
            let (head, tail) = alpha.split_at_mut(p);
            let prev = &head[p - 1];
            for (s, slot) in tail[0].iter_mut().enumerate() {
                let b = self.state_label(s);
                terms.clear();
                self.for_each_pred(s, |q| terms.push(prev[q] + self.transition(q, b)));
                let lse = log_sum_exp(terms.iter().copied());
                *slot = lse + self.emit(p, b);
            }
        }
        alpha
    }

    fn backward(&self) -> Vec<Vec<f64>> {
        let ns = self.num_states();
        let l = self.num_labels;
        let mut beta = vec![vec![0.0; ns]; self.len];
        for p in (0..self.len.saturating_sub(1)).rev() {
            let (head, tail) = beta.split_at_mut(p + 1);
            let next = &tail[0];
            for (s, slot) in head[p].iter_mut().enumerate() {
                let base = self.successor_base(s);
                *slot = log_sum_exp((0..l).map(|b| self.transition(s, b) + self.emit(p + 1, b) + next[base + b]));
            }
        }
        beta
    }

    pub fn log_partition(&self) -> f64 {
        if self.len == 0 {
            return 0.0;
        }
        let alpha = self.forward();
        log_sum_exp(alpha[self.len - 1].iter().copied())
    }

    /// Exact per-position marginals, computed in log space.
    pub fn forward_backward(&self) -> Marginals {
        if self.len == 0 {
            return Marginals {
                probs: Vec::new(),
                log_partition: 0.0,
            };
        }
        let alpha = self.forward();
        let beta = self.backward();
        let log_z = log_sum_exp(alpha[self.len - 1].iter().copied());
        let mut probs = vec![vec![0.0; self.num_labels]; self.len];
        for p in 0..self.len {
            for s in 0..self.num_states() {
                let a = alpha[p][s];
                if a == f64::NEG_INFINITY {
                    continue;
                }
                probs[p][self.state_label(s)] += (a + beta[p][s] - log_z).exp();
            }
        }
        Marginals {
            probs,
            log_partition: log_z,
        }
    }

    /// `exp(score - log Z)`, clamped to 1 against rounding in large scores.
    pub fn sequence_probability(&self, labels: &[Label]) -> f64 {
        (self.score(labels) - self.log_partition()).exp().min(1.0)
    }
}

#[derive(Debug)]
struct Node {
    priority: f64,
    score: f64,
    state: usize,
    labels: Vec<Label>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Node {}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Node {
    // max-heap: higher priority first, then the lexicographically smaller prefix
    fn cmp(&self, other: &Self) -> Ordering {
        self.priority
            .total_cmp(&other.priority)
            .then_with(|| other.labels.cmp(&self.labels))
    }
}
