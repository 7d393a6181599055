//! Structured perceptron training with parameter averaging.
//!
//! Every example is decoded with the current weights; when the prediction
//! differs from the gold sequence, each active feature loses one unit under
//! the predicted label and gains one under the gold label, and the same is
//! done for the transitions along both sequences. The returned model is the
//! mean of the weight vector over every per-example snapshot. The mean is
//! kept lazily: alongside the raw weights `w` we accumulate
//! `u = Σ m·δ_m` over updates `δ_m` made at step `m`, and after `M` steps
//! the mean is `((M + 1)·w − u) / M`.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Label, LabelSet, Sentence};
use crate::error::{Error, Result};
use crate::features::{FeatureConfig, FeatureId, Interner};
use crate::fhmm::{FhmmModel, MarkovOrder, WeightTable};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub max_epochs: usize,
    /// Training stops once an epoch's token error rate is at or below this.
    pub error_threshold: f64,
    pub shuffle_seed: u64,
    pub markov_order: MarkovOrder,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            max_epochs: 100,
            error_threshold: 1e-10,
            shuffle_seed: 0,
            markov_order: MarkovOrder::First,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 {
            return Err(Error::config("max_epochs must be at least 1"));
        }
        if self.error_threshold.is_nan() || self.error_threshold < 0.0 {
            return Err(Error::config("error_threshold must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub token_error_rate: f64,
    /// Examples whose prediction differed from gold.
    pub updates: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingStats {
    pub epochs: Vec<EpochStats>,
    pub updates: usize,
    pub snapshots: usize,
}

impl TrainingStats {
    pub fn epochs_run(&self) -> usize {
        self.epochs.len()
    }

    pub fn final_error_rate(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.token_error_rate)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,token_error_rate,updates\n");
        for e in &self.epochs {
            let _ = writeln!(out, "{},{},{}", e.epoch, e.token_error_rate, e.updates);
        }
        out
    }
}

/// A training sentence reduced to feature ids and gold labels.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedExample {
    pub features: Vec<Vec<FeatureId>>,
    pub gold: Vec<Label>,
}

impl EncodedExample {
    pub fn new(sentence: &Sentence, config: &FeatureConfig, interner: &Interner) -> Result<Self> {
        let gold = sentence
            .gold()
            .ok_or_else(|| Error::contract(format!("sentence {} has no gold labels", sentence.id)))?;
        Ok(EncodedExample {
            features: config.encode_frozen(sentence, interner),
            gold,
        })
    }
}

/// Raw and averaged weights from one training run.
#[derive(Clone, Debug)]
pub struct Trained {
    pub averaged: WeightTable,
    pub raw: WeightTable,
    pub stats: TrainingStats,
}

/// The order in which examples are visited during `epoch` (0-based).
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Calls `f(transition index, label at p)` for every transition of `labels`.
fn for_each_transition(weights: &WeightTable, labels: &[Label], mut f: impl FnMut(usize)) {
    for p in 1..labels.len() {
        let prev2 = if p >= 2 { Some(labels[p - 2]) } else { None };
        f(weights.transition_index(prev2, labels[p - 1], labels[p]));
    }
}

struct Averager {
    w: WeightTable,
    /// Step-weighted sums of updates, same layout as `w`.
    u_emissions: Vec<f64>,
    u_transitions: Vec<f64>,
}

impl Averager {
    fn bump_emission(&mut self, i: usize, delta: f64, step: f64) {
        self.w.emissions_mut()[i] += delta;
        self.u_emissions[i] += step * delta;
    }

    fn bump_transition(&mut self, i: usize, delta: f64, step: f64) {
        self.w.transitions_mut()[i] += delta;
        self.u_transitions[i] += step * delta;
    }

    fn averaged(&self, steps: usize) -> WeightTable {
        let mut avg = self.w.clone();
        if steps == 0 {
            return avg;
        }
        let m = steps as f64;
        for (a, u) in avg.emissions_mut().iter_mut().zip(&self.u_emissions) {
            *a = ((m + 1.0) * *a - u) / m;
        }
        for (a, u) in avg.transitions_mut().iter_mut().zip(&self.u_transitions) {
            *a = ((m + 1.0) * *a - u) / m;
        }
        avg
    }
}

/// Applies one perceptron update for `example` given prediction `predicted`.
/// Returns the number of mismatched positions.
pub fn perceptron_update(weights: &mut WeightTable, example: &EncodedExample, predicted: &[Label]) -> usize {
    let mut mismatches = 0;
    for (p, feats) in example.features.iter().enumerate() {
        let (z, g) = (predicted[p], example.gold[p]);
        if z != g {
            mismatches += 1;
            for &f in feats {
                weights.add_emission(f, z, -1.0);
                weights.add_emission(f, g, 1.0);
            }
        }
    }
    if mismatches > 0 {
        let mut idx = Vec::new();
        for_each_transition(weights, predicted, |i| idx.push((i, -1.0)));
        for_each_transition(weights, &example.gold, |i| idx.push((i, 1.0)));
        for (i, d) in idx {
            weights.transitions_mut()[i] += d;
        }
    }
    mismatches
}

/// Trains on already-encoded examples. Feature ids must be below `num_features`.
pub fn train_encoded(
    examples: &[&EncodedExample],
    num_labels: usize,
    num_features: usize,
    config: &TrainerConfig,
) -> Result<Trained> {
    config.validate()?;
    if examples.is_empty() {
        return Err(Error::config("cannot train on an empty corpus"));
    }
    let tokens: usize = examples.iter().map(|e| e.gold.len()).sum();
    let mut acc = Averager {
        w: WeightTable::new(num_labels, num_features, config.markov_order),
        u_emissions: vec![0.0; num_features * num_labels],
        u_transitions: vec![0.0; WeightTable::new(num_labels, 0, config.markov_order).transitions().len()],
    };
    let mut stats = TrainingStats::default();
    let mut step = 0usize;
    for epoch in 0..config.max_epochs {
        let mut errors = 0;
        let mut updates = 0;
        for i in epoch_order(config.shuffle_seed, epoch, examples.len()) {
            let ex = examples[i];
            step += 1;
            let (predicted, _) = acc.w.lattice(&ex.features).viterbi();
            let s = step as f64;
            let mut wrong = 0;
            for (p, feats) in ex.features.iter().enumerate() {
                let (z, g) = (predicted[p], ex.gold[p]);
                if z == g {
                    continue;
                }
                wrong += 1;
                for &f in feats {
                    acc.bump_emission(f.index() * num_labels + z.index(), -1.0, s);
                    acc.bump_emission(f.index() * num_labels + g.index(), 1.0, s);
                }
            }
            if wrong > 0 {
                let mut idx = Vec::new();
                for_each_transition(&acc.w, &predicted, |t| idx.push((t, -1.0)));
                for_each_transition(&acc.w, &ex.gold, |t| idx.push((t, 1.0)));
                for (t, d) in idx {
                    acc.bump_transition(t, d, s);
                }
                updates += 1;
            }
            errors += wrong;
        }
        let rate = errors as f64 / tokens as f64;
        stats.epochs.push(EpochStats {
            epoch: epoch + 1,
            token_error_rate: rate,
            updates,
        });
        stats.updates += updates;
        if rate <= config.error_threshold {
            break;
        }
    }
    stats.snapshots = step;
    Ok(Trained {
        averaged: acc.averaged(step),
        raw: acc.w,
        stats,
    })
}

fn prepare(corpus: &Corpus, fconfig: &FeatureConfig) -> Result<(Arc<Interner>, Vec<EncodedExample>)> {
    if corpus.is_empty() {
        return Err(Error::config("cannot train on an empty corpus"));
    }
    fconfig.check(corpus)?;
    let mut interner = fconfig.new_interner();
    interner.absorb(fconfig, &corpus.sentences);
    interner.freeze();
    let examples = corpus
        .sentences
        .iter()
        .map(|s| EncodedExample::new(s, fconfig, &interner))
        .collect::<Result<Vec<_>>>()?;
    Ok((Arc::new(interner), examples))
}

fn run(corpus: &Corpus, tconfig: &TrainerConfig, fconfig: &FeatureConfig) -> Result<(Arc<Interner>, Trained)> {
    let (interner, examples) = prepare(corpus, fconfig)?;
    let refs: Vec<&EncodedExample> = examples.iter().collect();
    let trained = train_encoded(&refs, corpus.labels.len(), interner.len(), tconfig)?;
    Ok((interner, trained))
}

fn model(
    labels: &LabelSet,
    fconfig: &FeatureConfig,
    interner: Arc<Interner>,
    weights: WeightTable,
) -> Result<FhmmModel> {
    FhmmModel::new(labels.clone(), fconfig.clone(), interner, weights)
}

/// Trains the averaged model.
pub fn train(corpus: &Corpus, tconfig: &TrainerConfig, fconfig: &FeatureConfig) -> Result<(FhmmModel, TrainingStats)> {
    let (interner, trained) = run(corpus, tconfig, fconfig)?;
    Ok((
        model(&corpus.labels, fconfig, interner, trained.averaged)?,
        trained.stats,
    ))
}

/// Trains and returns the final raw weights instead of the average.
pub fn train_unaveraged(corpus: &Corpus, tconfig: &TrainerConfig, fconfig: &FeatureConfig) -> Result<FhmmModel> {
    let (interner, trained) = run(corpus, tconfig, fconfig)?;
    model(&corpus.labels, fconfig, interner, trained.raw)
}

/// Both models from a single run, plus statistics.
pub fn train_both(
    corpus: &Corpus,
    tconfig: &TrainerConfig,
    fconfig: &FeatureConfig,
) -> Result<(FhmmModel, FhmmModel, TrainingStats)> {
    let (interner, trained) = run(corpus, tconfig, fconfig)?;
    let averaged = model(&corpus.labels, fconfig, interner.clone(), trained.averaged)?;
    let raw = model(&corpus.labels, fconfig, interner, trained.raw)?;
    Ok((averaged, raw, trained.stats))
}
