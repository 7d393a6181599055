//! The featurized HMM: a chain model whose score for a label sequence is the
//! sum of per-token feature weights under each label plus label-transition
//! weights. There is no normalisation in the score itself; probabilities
//! come from the globally normalised distribution `exp(score) / Z`.

mod format;
mod lattice;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::{Label, LabelSet, Sentence};
use crate::error::{Error, Result};
use crate::features::{FeatureConfig, FeatureId, Interner};

pub use format::{read_model, write_model, MODEL_FORMAT_VERSION};
pub use lattice::{argmax_tolerant, Lattice, Marginals, NBestList, TIE_TOLERANCE};

/// How many previous labels a transition weight looks at.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum MarkovOrder {
    #[default]
    First,
    /// Transitions keyed by the two previous labels; the label before the
    /// first token is a distinguished start symbol.
    Second,
}

impl MarkovOrder {
    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            1 => Ok(MarkovOrder::First),
            2 => Ok(MarkovOrder::Second),
            other => Err(Error::config(format!("markov order must be 1 or 2, got {other}"))),
        }
    }

    pub fn number(self) -> u8 {
        match self {
            MarkovOrder::First => 1,
            MarkovOrder::Second => 2,
        }
    }
}

impl TryFrom<u8> for MarkovOrder {
    type Error = Error;

    fn try_from(n: u8) -> Result<Self> {
        MarkovOrder::from_number(n)
    }
}

impl From<MarkovOrder> for u8 {
    fn from(order: MarkovOrder) -> u8 {
        order.number()
    }
}

/// Emission weights per (feature, label) and transition weights per label
/// pair (or triple). Missing entries read as zero.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightTable {
    num_labels: usize,
    order: MarkovOrder,
    /// Feature-major: row `f` holds the weights of feature `f` under every label.
    emissions: Vec<f64>,
    transitions: Vec<f64>,
}

impl WeightTable {
    pub fn new(num_labels: usize, num_features: usize, order: MarkovOrder) -> Self {
        assert!(num_labels > 0, "a weight table needs at least one label");
        let transitions = match order {
            MarkovOrder::First => num_labels * num_labels,
            MarkovOrder::Second => (num_labels + 1) * num_labels * num_labels,
        };
        WeightTable {
            num_labels,
            order,
            emissions: vec![0.0; num_features * num_labels],
            transitions: vec![0.0; transitions],
        }
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn num_features(&self) -> usize {
        self.emissions.len() / self.num_labels
    }

    pub fn order(&self) -> MarkovOrder {
        self.order
    }

    pub fn emission(&self, feature: FeatureId, label: Label) -> f64 {
        self.emission_row(feature).map_or(0.0, |row| row[label.index()])
    }

    pub fn emission_row(&self, feature: FeatureId) -> Option<&[f64]> {
        let start = feature.index() * self.num_labels;
        self.emissions.get(start..start + self.num_labels)
    }

    fn ensure_feature(&mut self, feature: FeatureId) {
        let needed = (feature.index() + 1) * self.num_labels;
        if self.emissions.len() < needed {
            self.emissions.resize(needed, 0.0);
        }
    }

    pub fn set_emission(&mut self, feature: FeatureId, label: Label, weight: f64) {
        self.ensure_feature(feature);
        self.emissions[feature.index() * self.num_labels + label.index()] = weight;
    }

    pub fn add_emission(&mut self, feature: FeatureId, label: Label, delta: f64) {
        self.ensure_feature(feature);
        self.emissions[feature.index() * self.num_labels + label.index()] += delta;
    }

    /// Index into the transition vector. `prev2` is ignored for first-order
    /// tables; `None` stands for the start symbol.
    pub fn transition_index(&self, prev2: Option<Label>, prev: Label, cur: Label) -> usize {
        let l = self.num_labels;
        match self.order {
            MarkovOrder::First => prev.index() * l + cur.index(),
            MarkovOrder::Second => {
                let p2 = prev2.map_or(l, Label::index);
                (p2 * l + prev.index()) * l + cur.index()
            }
        }
    }

    pub fn transition(&self, prev2: Option<Label>, prev: Label, cur: Label) -> f64 {
        self.transitions[self.transition_index(prev2, prev, cur)]
    }

    pub fn set_transition(&mut self, prev2: Option<Label>, prev: Label, cur: Label, weight: f64) {
        let i = self.transition_index(prev2, prev, cur);
        self.transitions[i] = weight;
    }

    pub fn add_transition(&mut self, prev2: Option<Label>, prev: Label, cur: Label, delta: f64) {
        let i = self.transition_index(prev2, prev, cur);
        self.transitions[i] += delta;
    }

    pub(crate) fn emissions(&self) -> &[f64] {
        &self.emissions
    }

    pub(crate) fn transitions(&self) -> &[f64] {
        &self.transitions
    }

    pub(crate) fn emissions_mut(&mut self) -> &mut Vec<f64> {
        &mut self.emissions
    }

    pub(crate) fn transitions_mut(&mut self) -> &mut Vec<f64> {
        &mut self.transitions
    }

    pub fn is_finite(&self) -> bool {
        self.emissions.iter().chain(&self.transitions).all(|w| w.is_finite())
    }

    /// Score tables for one encoded sentence.
    pub fn lattice(&self, features: &[Vec<FeatureId>]) -> Lattice<'_> {
        Lattice::new(self, features)
    }
}

/// A trained (or hand-built) model. Immutable once constructed.
#[derive(Clone, Debug, PartialEq)]
pub struct FhmmModel {
    labels: LabelSet,
    features: FeatureConfig,
    interner: Arc<Interner>,
    weights: WeightTable,
}

impl FhmmModel {
    pub fn new(
        labels: LabelSet,
        features: FeatureConfig,
        interner: Arc<Interner>,
        weights: WeightTable,
    ) -> Result<Self> {
        if weights.num_labels() != labels.len() {
            return Err(Error::contract(format!(
                "weight table has {} labels, label set has {}",
                weights.num_labels(),
                labels.len()
            )));
        }
        if !weights.is_finite() {
            return Err(Error::contract("weights must be finite"));
        }
        Ok(FhmmModel {
            labels,
            features,
            interner,
            weights,
        })
    }

    pub fn labels(&self) -> &LabelSet {
        &self.labels
    }

    pub fn feature_config(&self) -> &FeatureConfig {
        &self.features
    }

    pub fn interner(&self) -> &Arc<Interner> {
        &self.interner
    }

    pub fn weights(&self) -> &WeightTable {
        &self.weights
    }

    pub fn markov_order(&self) -> MarkovOrder {
        self.weights.order()
    }

    /// Feature ids of every token; values unknown to the model are dropped.
    pub fn encode(&self, sentence: &Sentence) -> Vec<Vec<FeatureId>> {
        self.features.encode_frozen(sentence, &self.interner)
    }

    pub fn lattice(&self, sentence: &Sentence) -> Lattice<'_> {
        self.weights.lattice(&self.encode(sentence))
    }

    pub fn score_sequence(&self, sentence: &Sentence, labels: &[Label]) -> f64 {
        assert_eq!(
            labels.len(),
            sentence.len(),
            "label sequence length must match the sentence"
        );
        self.lattice(sentence).score(labels)
    }

    pub fn viterbi(&self, sentence: &Sentence) -> (Vec<Label>, f64) {
        self.lattice(sentence).viterbi()
    }

    pub fn viterbi_nbest(&self, sentence: &Sentence, n: usize) -> NBestList {
        self.lattice(sentence).nbest(n)
    }

    pub fn forward_backward(&self, sentence: &Sentence) -> Marginals {
        self.lattice(sentence).forward_backward()
    }

    pub fn sequence_probability(&self, sentence: &Sentence, labels: &[Label]) -> f64 {
        assert_eq!(
            labels.len(),
            sentence.len(),
            "label sequence length must match the sentence"
        );
        self.lattice(sentence).sequence_probability(labels)
    }
}
