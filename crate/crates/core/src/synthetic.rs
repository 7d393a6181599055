//! Synthetic corpora for experiments and tests.
//!
//! [`Planted`] draws a random FHMM over current-word features and labels
//! random word sequences with its Viterbi output, keeping only sentences whose
//! best sequence beats the runner-up by a fixed margin. [`cooccurrence_corpus`]
//! builds spatiotemporal sentences in which `G` and `T` phrases are only
//! recognisable from the named entity next to them.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, Label, LabelSet, Sentence, Token};
use crate::error::{Error, Result};
use crate::features::{FeatureConfig, TemplateKind};
use crate::fhmm::{FhmmModel, MarkovOrder, WeightTable};

#[derive(Clone, Debug, PartialEq)]
pub struct PlantedConfig {
    /// Entity labels; the outside label `O` comes on top.
    pub entity_labels: usize,
    pub vocabulary: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Required score gap between the best and second-best sequence.
    pub margin: f64,
    /// Share of words whose strongest label is the outside label.
    pub outside_share: f64,
    /// Home-label emission weights are drawn from `[low, high)`.
    pub home_weight: (f64, f64),
    /// Other emission weights and transitions are drawn from `[-x, x)`.
    pub noise: f64,
    pub transition: f64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig {
            entity_labels: 3,
            vocabulary: 40,
            min_len: 5,
            max_len: 12,
            margin: 3.0,
            outside_share: 0.5,
            home_weight: (3.0, 6.0),
            noise: 0.5,
            transition: 1.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Planted {
    model: FhmmModel,
    config: PlantedConfig,
}

const ENTITY_NAMES: [&str; 12] = ["G", "L", "T", "E", "P", "D", "B", "W", "ST", "UL", "US", "UB"];

impl Planted {
    pub fn new(config: PlantedConfig, seed: u64) -> Result<Self> {
        if config.entity_labels == 0 || config.entity_labels > ENTITY_NAMES.len() {
            return Err(Error::config(format!(
                "entity_labels must be in 1..={}",
                ENTITY_NAMES.len()
            )));
        }
        if config.vocabulary == 0 || config.min_len == 0 || config.min_len > config.max_len {
            return Err(Error::config(
                "vocabulary and sentence lengths must be positive and ordered",
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let names = std::iter::once("O").chain(ENTITY_NAMES[..config.entity_labels].iter().copied());
        let labels = LabelSet::new(names, "O")?;
        let n = labels.len();
        let features = FeatureConfig::new(vec![TemplateKind::Word])?;
        let mut interner = features.new_interner();
        for w in 0..config.vocabulary {
            interner.intern(0, &word(w));
        }
        interner.freeze();
        let mut weights = WeightTable::new(n, config.vocabulary, MarkovOrder::First);
        let (lo, hi) = config.home_weight;
        for w in 0..config.vocabulary {
            let home = if rng.gen::<f64>() < config.outside_share {
                0
            } else {
                rng.gen_range(1..n)
            };
            for l in 0..n {
                let v = if l == home {
                    rng.gen_range(lo..hi)
                } else {
                    rng.gen_range(-config.noise..config.noise)
                };
                weights.set_emission(crate::features::FeatureId(w as u32), Label::new(l), v);
            }
        }
        for a in 0..n {
            for b in 0..n {
                let v = rng.gen_range(-config.transition..config.transition);
                weights.set_transition(None, Label::new(a), Label::new(b), v);
            }
        }
        let model = FhmmModel::new(labels, features, Arc::new(interner), weights)?;
        Ok(Planted { model, config })
    }

    pub fn model(&self) -> &FhmmModel {
        &self.model
    }

    pub fn labels(&self) -> &LabelSet {
        self.model.labels()
    }

    /// `n` sentences labeled by the planted model, ids `{prefix}1..`.
    pub fn sample(&self, n: usize, seed: u64, prefix: &str) -> Corpus {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sentences = Vec::with_capacity(n);
        while sentences.len() < n {
            let len = rng.gen_range(self.config.min_len..=self.config.max_len);
            let words: Vec<String> = (0..len)
                .map(|_| word(rng.gen_range(0..self.config.vocabulary)))
                .collect();
            let mut s = Sentence::from_words(format!("{prefix}{}", sentences.len() + 1), &words);
            let best = self.model.viterbi_nbest(&s, 2);
            let margin = match best.entries.as_slice() {
                [(_, a), (_, b)] => a - b,
                _ => f64::INFINITY,
            };
            if margin >= self.config.margin {
                s.set_gold(&best.entries[0].0);
                sentences.push(s);
            }
        }
        Corpus::new(sentences, self.labels().clone()).expect("planted sentences are valid")
    }
}

fn word(i: usize) -> String {
    format!("w{i}")
}

fn name(rng: &mut ChaCha8Rng, initial: char) -> String {
    const SYLLABLES: [&str; 16] = [
        "ba", "lo", "ri", "ta", "ne", "mu", "ko", "sa", "vi", "de", "ga", "po", "le", "zu", "fi", "ro",
    ];
    let mut s = String::new();
    s.push(initial);
    for _ in 0..rng.gen_range(2..4) {
        s.push_str(SYLLABLES.choose(rng).expect("non-empty"));
    }
    s
}

/// EST-tagged sentences where `G` words ("west of") precede a location name
/// and `T` words ("days before") precede an event name. The same trigger
/// words also occur outside any phrase, and names are drawn from a large
/// space, so telling the cases apart needs to know where the entities are.
pub fn cooccurrence_corpus(n: usize, seed: u64) -> Corpus {
    let labels = LabelSet::est();
    let tag = |name: &str| labels.get(name).expect("EST tag");
    let (g, t, l, e, p, o) = (tag("G"), tag("T"), tag("L"), tag("E"), tag("P"), labels.outside());
    let spatial = [["west", "of"], ["north", "of"], ["near", "the"], ["outside", "of"]];
    let temporal = [
        ["days", "before"],
        ["weeks", "after"],
        ["days", "after"],
        ["hours", "before"],
    ];
    let filler = [
        "the", "people", "said", "that", "we", "went", "and", "met", "a", "friend",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sentences = Vec::with_capacity(n);
    for i in 0..n {
        let mut tokens: Vec<Token> = Vec::new();
        let mut push = |w: &str, label: Label| tokens.push(Token::new(w).with_gold(label));
        for _ in 0..rng.gen_range(2..4) {
            match rng.gen_range(0..6) {
                0 => {
                    let [a, b] = spatial.choose(&mut rng).expect("non-empty");
                    push(a, g);
                    push(b, g);
                    push(&name(&mut rng, 'L'), l);
                }
                1 => {
                    let [a, b] = temporal.choose(&mut rng).expect("non-empty");
                    push(a, t);
                    push(b, t);
                    push(&name(&mut rng, 'E'), e);
                    push("Day", e);
                }
                2 => {
                    // triggers without an entity are outside
                    let [a, b] = if rng.gen() {
                        spatial.choose(&mut rng).expect("non-empty")
                    } else {
                        temporal.choose(&mut rng).expect("non-empty")
                    };
                    push(a, o);
                    push(b, o);
                    push(filler.choose(&mut rng).expect("non-empty"), o);
                }
                3 => push(&name(&mut rng, 'P'), p),
                _ => push(filler.choose(&mut rng).expect("non-empty"), o),
            }
            push(filler.choose(&mut rng).expect("non-empty"), o);
        }
        sentences.push(Sentence::new(format!("c{}", i + 1), tokens));
    }
    Corpus::new(sentences, labels).expect("generated sentences are valid")
}
