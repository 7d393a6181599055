//! Query-by-bagging active learning.
//!
//! [`ActiveLearner`] is a resumable state machine. Round 0 labels the first
//! `I` pool sentences and trains the first ensemble; each later round labels
//! the `K` unlabeled sentences ranked highest by the configured utility,
//! re-weights the labeled set, retrains, and records test scores. Labels come
//! in one sentence at a time through [`ActiveLearner::submit`], so the same
//! machine serves both the simulated oracle and a human annotator.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{evaluate, Corpus, Label, LabelSet, Sentence};
use crate::ensemble::{bag_train_encoded, decode_all, EnsembleModel, SampleWeights};
use crate::error::{Error, Result};
use crate::features::{FeatureConfig, FeatureId, Interner};
use crate::perceptron::{EncodedExample, TrainerConfig};

macro_rules! flag_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $text)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($name::$variant),)+
                    other => Err(Error::config(format!(
                        concat!("unknown ", stringify!($name), " {:?}"),
                        other
                    ))),
                }
            }
        }
    };
}

flag_enum!(Decoder { Viterbi => "vt", Bp => "bp" });
flag_enum!(Reweight { Rw => "rw", Nrw => "nrw" });
flag_enum!(Selection { Utility => "utl", Random => "rnd" });

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ALConfig {
    /// `I`: sentences labeled before the first ensemble is trained.
    pub initial_seed_count: usize,
    /// `K`: sentences labeled per round.
    pub batch_size: usize,
    /// Query rounds after round 0.
    pub rounds: usize,
    pub sample_rate: f64,
    /// Length of each member's n-best list for BVS and SVE.
    pub nbest: usize,
    pub ensemble_size: usize,
    pub decoder: Decoder,
    pub reweight: Reweight,
    pub selection: Selection,
    /// Use Algorithm 3's formula as printed instead of per-round decay.
    pub literal_reweight: bool,
    pub seed: u64,
    /// Record wall-clock seconds per round. Off keeps curves reproducible.
    pub record_time: bool,
    pub trainer: TrainerConfig,
}

impl Default for ALConfig {
    fn default() -> Self {
        ALConfig {
            initial_seed_count: 10,
            batch_size: 1,
            rounds: 20,
            sample_rate: 0.8,
            nbest: 5,
            ensemble_size: 5,
            decoder: Decoder::Bp,
            reweight: Reweight::Rw,
            selection: Selection::Utility,
            literal_reweight: false,
            seed: 0,
            record_time: false,
            trainer: TrainerConfig::default(),
        }
    }
}

impl ALConfig {
    pub fn validate(&self) -> Result<()> {
        if self.initial_seed_count == 0 {
            return Err(Error::config("initial_seed_count must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if !(self.sample_rate > 0.0 && self.sample_rate <= 1.0) {
            return Err(Error::config("sample_rate must be in (0, 1]"));
        }
        if self.nbest == 0 {
            return Err(Error::config("nbest must be at least 1"));
        }
        if self.ensemble_size == 0 {
            return Err(Error::config("ensemble_size must be at least 1"));
        }
        self.trainer.validate()
    }

    /// Short name such as `bp-rw-utl`.
    pub fn label(&self) -> String {
        format!("{}-{}-{}", self.decoder, self.reweight, self.selection)
    }
}

/// Seed streams derived from the run seed.
#[derive(Clone, Copy, Debug)]
pub enum Purpose {
    Bagging = 1,
    Selection = 2,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn round_seed(seed: u64, round: usize, purpose: Purpose) -> u64 {
    splitmix(splitmix(splitmix(seed) ^ round as u64) ^ purpose as u64)
}

/// Weight decay step for round `t`: `2(1 − r)/(t − 1)`, zero for `t ≤ 1`.
pub fn alpha(t: usize, r: f64) -> f64 {
    if t <= 1 {
        0.0
    } else {
        2.0 * (1.0 - r) / (t - 1) as f64
    }
}

/// Weights after round `t`: existing weights decay, `newly` new examples are
/// appended at weight 1. With `literal`, existing weights become
/// `max(1 − α_t·(t − 1), r)` as Algorithm 3 prints it.
pub fn reweight(weights: &[f64], newly: usize, t: usize, r: f64, literal: bool) -> Vec<f64> {
    let a = alpha(t, r);
    let mut out: Vec<f64> = weights
        .iter()
        .map(|&w| {
            let next = if literal && t > 1 {
                1.0 - a * (t - 1) as f64
            } else {
                w - a
            };
            next.max(r).min(1.0)
        })
        .collect();
    out.extend(std::iter::repeat_n(1.0, newly));
    out
}

pub fn sve_utility(ensemble: &EnsembleModel, sentence: &Sentence, n: usize) -> f64 {
    ensemble.sve(sentence, n)
}

/// Uniform in `[0, 1)`.
pub fn random_utility<R: Rng>(rng: &mut R, _sentence: &Sentence) -> f64 {
    rng.gen::<f64>()
}

/// Unlabeled pool sentences. Gold labels are stripped on construction.
#[derive(Clone, Debug, PartialEq)]
pub struct Pool {
    pub sentences: Vec<Sentence>,
    pub labels: LabelSet,
}

impl Pool {
    pub fn new(corpus: &Corpus) -> Self {
        let mut sentences = corpus.sentences.clone();
        sentences.iter_mut().for_each(Sentence::clear_gold);
        Pool {
            sentences,
            labels: corpus.labels.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

/// Supplies labels for pool sentences. Returning `None` suspends the run.
pub trait Oracle {
    fn label(&mut self, index: usize, sentence: &Sentence) -> Option<Vec<Label>>;
}

/// Answers from the hidden gold labels of the original corpus.
#[derive(Clone, Debug)]
pub struct SimulatedOracle {
    gold: Vec<Vec<Label>>,
    answered: Vec<usize>,
}

impl SimulatedOracle {
    pub fn new(corpus: &Corpus) -> Result<Self> {
        let gold = corpus
            .sentences
            .iter()
            .map(|s| {
                s.gold()
                    .ok_or_else(|| Error::contract(format!("sentence {} has no gold labels", s.id)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SimulatedOracle {
            gold,
            answered: Vec::new(),
        })
    }

    /// Pool indices in the order they were asked about.
    pub fn answered(&self) -> &[usize] {
        &self.answered
    }

    pub fn gold(&self, index: usize) -> &[Label] {
        &self.gold[index]
    }
}

impl Oracle for SimulatedOracle {
    fn label(&mut self, index: usize, _sentence: &Sentence) -> Option<Vec<Label>> {
        self.answered.push(index);
        self.gold.get(index).cloned()
    }
}

impl<F: FnMut(usize, &Sentence) -> Option<Vec<Label>>> Oracle for F {
    fn label(&mut self, index: usize, sentence: &Sentence) -> Option<Vec<Label>> {
        self(index, sentence)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub round: usize,
    pub labeled_count: usize,
    pub decoder: Decoder,
    pub reweight: Reweight,
    pub selection: Selection,
    pub micro_f1: f64,
    pub type_f1: Vec<(String, f64)>,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub rows: Vec<CurveRow>,
}

impl LearningCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("round,labeled_count,decoder,reweight,selection,micro_f1");
        if let Some(first) = self.rows.first() {
            for (name, _) in &first.type_f1 {
                let _ = write!(out, ",f1_{name}");
            }
        }
        out.push_str(",seconds\n");
        for r in &self.rows {
            let _ = write!(
                out,
                "{},{},{},{},{},{:.6}",
                r.round, r.labeled_count, r.decoder, r.reweight, r.selection, r.micro_f1
            );
            for (_, f) in &r.type_f1 {
                let _ = write!(out, ",{f:.6}");
            }
            let _ = writeln!(out, ",{:.3}", r.seconds);
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |line: usize, message: String| Error::Parse { line, message };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| bad(1, "empty curve file".into()))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() < 7 || cols[..6] != ["round", "labeled_count", "decoder", "reweight", "selection", "micro_f1"] {
            return Err(bad(1, "not a learning-curve header".into()));
        }
        let types: Vec<String> = cols[6..cols.len() - 1]
            .iter()
            .map(|c| {
                c.strip_prefix("f1_")
                    .map(str::to_owned)
                    .ok_or_else(|| bad(1, format!("bad column {c:?}")))
            })
            .collect::<Result<_>>()?;
        let mut rows = Vec::new();
        for (i, line) in lines.filter(|(_, l)| !l.is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != cols.len() {
                return Err(bad(i + 1, "wrong number of fields".into()));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(i + 1, format!("bad number {s:?}")));
            let int = |s: &str| s.parse::<usize>().map_err(|_| bad(i + 1, format!("bad integer {s:?}")));
            rows.push(CurveRow {
                round: int(f[0])?,
                labeled_count: int(f[1])?,
                decoder: f[2].parse()?,
                reweight: f[3].parse()?,
                selection: f[4].parse()?,
                micro_f1: num(f[5])?,
                type_f1: types
                    .iter()
                    .zip(&f[6..f.len() - 1])
                    .map(|(t, v)| Ok((t.clone(), num(v)?)))
                    .collect::<Result<_>>()?,
                seconds: num(f[f.len() - 1])?,
            });
        }
        Ok(LearningCurve { rows })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledEntry {
    pub index: usize,
    pub labels: Vec<Label>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PendingQuery {
    pub index: usize,
    /// Utility at selection time; absent for the round-0 seed set.
    pub utility: Option<f64>,
}

/// Everything needed to resume a run; the ensemble is retrained on load.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnerState {
    /// Current round; 0 while the seed set is being labeled.
    pub round: usize,
    /// Labeled sentences in labeling order.
    pub labeled: Vec<LabeledEntry>,
    /// Sampling weights of the first `weights.len()` labeled sentences, the
    /// ones the current ensemble was trained on.
    pub weights: Vec<f64>,
    /// Unlabeled pool indices in insertion order.
    pub unlabeled: Vec<usize>,
    /// The current batch still awaiting labels; the head is the outstanding query.
    pub pending: Vec<PendingQuery>,
    pub curve: LearningCurve,
    pub done: bool,
}

/// Outcome of driving a learner with an oracle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DriveOutcome {
    Completed,
    /// The oracle declined the given pool index; state is unchanged.
    Suspended(usize),
}

pub struct ActiveLearner {
    config: ALConfig,
    pool: Pool,
    test: Corpus,
    features: FeatureConfig,
    interner: Arc<Interner>,
    encoded: Vec<Vec<Vec<FeatureId>>>,
    state: LearnerState,
    ensemble: Option<EnsembleModel>,
}

impl ActiveLearner {
    pub fn new(pool: Pool, test: Corpus, features: FeatureConfig, config: ALConfig) -> Result<Self> {
        config.validate()?;
        if pool.is_empty() {
            return Err(Error::config("the unlabeled pool is empty"));
        }
        if config.initial_seed_count > pool.len() {
            return Err(Error::config(format!(
                "initial_seed_count {} exceeds the pool size {}",
                config.initial_seed_count,
                pool.len()
            )));
        }
        let state = LearnerState {
            round: 0,
            labeled: Vec::new(),
            weights: Vec::new(),
            unlabeled: (0..pool.len()).collect(),
            pending: (0..config.initial_seed_count)
                .map(|index| PendingQuery { index, utility: None })
                .collect(),
            curve: LearningCurve::default(),
            done: false,
        };
        ActiveLearner::build(pool, test, features, config, state)
    }

    /// Rebuilds a learner from saved state, retraining the current ensemble.
    pub fn restore(
        pool: Pool,
        test: Corpus,
        features: FeatureConfig,
        config: ALConfig,
        state: LearnerState,
    ) -> Result<Self> {
        config.validate()?;
        let n = pool.len();
        let mut seen = vec![false; n];
        for i in state
            .labeled
            .iter()
            .map(|e| e.index)
            .chain(state.unlabeled.iter().copied())
        {
            if i >= n || std::mem::replace(&mut seen[i], true) {
                return Err(Error::contract(format!(
                    "saved state has a bad or repeated pool index {i}"
                )));
            }
        }
        if seen.iter().any(|s| !s) || state.weights.len() > state.labeled.len() {
            return Err(Error::contract("saved state does not match the pool"));
        }
        for e in &state.labeled {
            check_labels(&pool, e.index, &e.labels)?;
        }
        let mut learner = ActiveLearner::build(pool, test, features, config, state)?;
        if !learner.state.weights.is_empty() {
            let round = learner.state.curve.rows.last().map_or(0, |r| r.round);
            learner.ensemble = Some(learner.train(round)?);
        }
        Ok(learner)
    }

    fn build(pool: Pool, test: Corpus, features: FeatureConfig, config: ALConfig, state: LearnerState) -> Result<Self> {
        if test.labels != pool.labels {
            return Err(Error::config("test corpus and pool use different label sets"));
        }
        if !test.is_fully_labeled() {
            return Err(Error::config("the test corpus must be fully labeled"));
        }
        features.check(&Corpus::new(pool.sentences.clone(), pool.labels.clone())?)?;
        features.check(&test)?;
        let mut interner = features.new_interner();
        interner.absorb(&features, &pool.sentences);
        interner.absorb(&features, &test.sentences);
        interner.freeze();
        let encoded = pool
            .sentences
            .iter()
            .map(|s| features.encode_frozen(s, &interner))
            .collect();
        Ok(ActiveLearner {
            config,
            pool,
            test,
            features,
            interner: Arc::new(interner),
            encoded,
            state,
            ensemble: None,
        })
    }

    pub fn config(&self) -> &ALConfig {
        &self.config
    }

    pub fn pool(&self) -> &Pool {
        &self.pool
    }

    pub fn state(&self) -> &LearnerState {
        &self.state
    }

    pub fn curve(&self) -> &LearningCurve {
        &self.state.curve
    }

    pub fn ensemble(&self) -> Option<&EnsembleModel> {
        self.ensemble.as_ref()
    }

    pub fn labels(&self) -> &LabelSet {
        &self.pool.labels
    }

    pub fn round(&self) -> usize {
        self.state.round
    }

    pub fn is_done(&self) -> bool {
        self.state.done
    }

    pub fn labeled_count(&self) -> usize {
        self.state.labeled.len()
    }

    pub fn unlabeled_count(&self) -> usize {
        self.state.unlabeled.len()
    }

    /// The sentence awaiting a label, if any.
    pub fn outstanding(&self) -> Option<&PendingQuery> {
        if self.state.done {
            None
        } else {
            self.state.pending.first()
        }
    }

    /// True when the batch is fully labeled and the round can be closed.
    pub fn needs_training(&self) -> bool {
        !self.state.done && self.state.pending.is_empty()
    }

    /// Labeled sentences not yet seen by the current ensemble.
    pub fn untrained_count(&self) -> usize {
        self.state.labeled.len() - self.state.weights.len()
    }

    /// Records labels for the outstanding query.
    pub fn submit(&mut self, index: usize, labels: Vec<Label>) -> Result<()> {
        match self.outstanding() {
            Some(q) if q.index == index => {}
            Some(q) => {
                return Err(Error::Conflict(format!(
                    "sentence {} is not the outstanding query (expected {})",
                    self.sentence_id(index),
                    self.pool.sentences[q.index].id
                )))
            }
            None => return Err(Error::Conflict("no query is outstanding".into())),
        }
        check_labels(&self.pool, index, &labels)?;
        self.state.pending.remove(0);
        self.state.unlabeled.retain(|&i| i != index);
        self.state.labeled.push(LabeledEntry { index, labels });
        Ok(())
    }

    fn sentence_id(&self, index: usize) -> String {
        self.pool
            .sentences
            .get(index)
            .map_or_else(|| format!("#{index}"), |s| s.id.clone())
    }

    /// Closes the round early with whatever part of the batch is labeled.
    /// Does nothing when no new labels arrived since the last training.
    pub fn finish_partial_round(&mut self) -> Result<Option<CurveRow>> {
        if self.state.done || self.untrained_count() == 0 {
            return Ok(None);
        }
        self.state.pending.clear();
        self.finish_round().map(Some)
    }

    fn train(&self, round: usize) -> Result<EnsembleModel> {
        let trained = &self.state.labeled[..self.state.weights.len()];
        let examples: Vec<EncodedExample> = trained
            .iter()
            .map(|e| EncodedExample {
                features: self.encoded[e.index].clone(),
                gold: e.labels.clone(),
            })
            .collect();
        let weights = SampleWeights::new(self.state.weights.clone())?;
        let (ensemble, _) = bag_train_encoded(
            &examples,
            &weights,
            self.config.ensemble_size,
            &self.config.trainer,
            &self.pool.labels,
            &self.features,
            &self.interner,
            self.config.sample_rate,
            round_seed(self.config.seed, round, Purpose::Bagging),
        )?;
        Ok(ensemble)
    }

    /// Re-weights, retrains, evaluates, and selects the next batch.
    pub fn finish_round(&mut self) -> Result<CurveRow> {
        if self.state.done {
            return Err(Error::Conflict("the run is finished".into()));
        }
        if !self.state.pending.is_empty() {
            return Err(Error::Conflict("the current batch is not fully labeled".into()));
        }
        let started = Instant::now();
        let t = self.state.round;
        let r = self.config.sample_rate;
        let newly = self.untrained_count();
        self.state.weights = match self.config.reweight {
            Reweight::Rw => reweight(&self.state.weights, newly, t, r, self.config.literal_reweight),
            Reweight::Nrw => vec![r; self.state.labeled.len()],
        };
        let ensemble = self.train(t)?;

        let predicted = decode_all(
            &ensemble,
            &self.test.sentences,
            self.config.decoder == Decoder::Bp,
            self.config.nbest,
        );
        let eval = evaluate(&self.test, &predicted)?;
        let row = CurveRow {
            round: t,
            labeled_count: self.state.labeled.len(),
            decoder: self.config.decoder,
            reweight: self.config.reweight,
            selection: self.config.selection,
            micro_f1: eval.micro.f1,
            type_f1: eval.per_type.iter().map(|(n, p)| (n.clone(), p.f1)).collect(),
            seconds: 0.0,
        };
        self.state.curve.rows.push(row);

        if t < self.config.rounds && !self.state.unlabeled.is_empty() {
            self.state.pending = self.select(&ensemble, t + 1);
            self.state.round = t + 1;
        } else {
            self.state.done = true;
        }
        self.ensemble = Some(ensemble);
        let row = self.state.curve.rows.last_mut().expect("row was just pushed");
        if self.config.record_time {
            row.seconds = started.elapsed().as_secs_f64();
        }
        Ok(row.clone())
    }

    fn select(&self, ensemble: &EnsembleModel, round: usize) -> Vec<PendingQuery> {
        let candidates = &self.state.unlabeled;
        let utilities: Vec<f64> = match self.config.selection {
            Selection::Utility => candidates
                .par_iter()
                .map(|&i| sve_utility(ensemble, &self.pool.sentences[i], self.config.nbest))
                .collect(),
            Selection::Random => {
                let mut rng = ChaCha8Rng::seed_from_u64(round_seed(self.config.seed, round, Purpose::Selection));
                candidates
                    .iter()
                    .map(|&i| random_utility(&mut rng, &self.pool.sentences[i]))
                    .collect()
            }
        };
        let mut order: Vec<usize> = (0..candidates.len()).collect();
        order.sort_by(|&a, &b| utilities[b].total_cmp(&utilities[a]));
        order
            .into_iter()
            .take(self.config.batch_size)
            .map(|j| PendingQuery {
                index: candidates[j],
                utility: Some(utilities[j]),
            })
            .collect()
    }

    /// Runs until finished or until the oracle declines.
    pub fn drive(&mut self, oracle: &mut dyn Oracle) -> Result<DriveOutcome> {
        loop {
            if self.state.done {
                return Ok(DriveOutcome::Completed);
            }
            if self.needs_training() {
                self.finish_round()?;
                continue;
            }
            let index = self.state.pending[0].index;
            match oracle.label(index, &self.pool.sentences[index]) {
                Some(labels) => self.submit(index, labels)?,
                None => return Ok(DriveOutcome::Suspended(index)),
            }
        }
    }
}

fn check_labels(pool: &Pool, index: usize, labels: &[Label]) -> Result<()> {
    let s = pool
        .sentences
        .get(index)
        .ok_or_else(|| Error::contract(format!("pool index {index} out of range")))?;
    if labels.len() != s.len() {
        return Err(Error::contract(format!(
            "sentence {} has {} tokens but {} labels were given",
            s.id,
            s.len(),
            labels.len()
        )));
    }
    if let Some(l) = labels.iter().find(|l| l.index() >= pool.labels.len()) {
        return Err(Error::contract(format!("label index {} is outside the label set", l.0)));
    }
    Ok(())
}

/// Algorithm 2 end to end with the given oracle. The returned learner holds
/// the curve and the final ensemble; it is unfinished if the oracle declined.
pub fn run_active_learning(
    pool: &Corpus,
    test: &Corpus,
    features: &FeatureConfig,
    config: &ALConfig,
    oracle: &mut dyn Oracle,
) -> Result<(ActiveLearner, DriveOutcome)> {
    let mut learner = ActiveLearner::new(Pool::new(pool), test.clone(), features.clone(), config.clone())?;
    let outcome = learner.drive(oracle)?;
    Ok((learner, outcome))
}
