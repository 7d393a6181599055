//! Corpus loading for the commands.

use std::path::Path;

use anyhow::{bail, Context, Result};
use spatiotag_core::corpus::{parse_conll_with_labels, ColumnMap, Corpus, Label, LabelSet};
use spatiotag_core::synthetic::{cooccurrence_corpus, Planted, PlantedConfig};

use crate::config::{RunConfig, SyntheticKind};

pub fn read_corpus(path: &Path, columns: &ColumnMap, labels: Option<LabelSet>) -> Result<Corpus> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_conll_with_labels(&text, columns, labels).with_context(|| format!("parsing {}", path.display()))
}

/// The configured label set, if one is fixed.
pub fn configured_labels(config: &RunConfig) -> Result<Option<LabelSet>> {
    match &config.data.labels {
        Some(names) => Ok(Some(LabelSet::new(names, &config.data.outside)?)),
        None => Ok(None),
    }
}

fn required<'a>(path: &'a Option<std::path::PathBuf>, key: &str) -> Result<&'a Path> {
    match path {
        Some(p) => Ok(p),
        None => bail!("data.{key} is not set"),
    }
}

pub fn training_corpus(config: &RunConfig) -> Result<Corpus> {
    let path = required(&config.data.train, "train")?;
    let corpus = read_corpus(path, &config.columns()?, configured_labels(config)?)?;
    if corpus.is_empty() {
        bail!("{} holds no sentences", path.display());
    }
    if !corpus.is_fully_labeled() {
        bail!("{} has tokens without gold labels", path.display());
    }
    Ok(corpus)
}

pub fn test_corpus(config: &RunConfig, labels: Option<LabelSet>) -> Result<Corpus> {
    let path = required(&config.data.test, "test")?;
    let labels = match labels {
        Some(l) => Some(l),
        None => configured_labels(config)?,
    };
    read_corpus(path, &config.columns()?, labels)
}

pub fn input_corpus(config: &RunConfig) -> Result<Corpus> {
    let path = required(&config.data.input, "input")?;
    read_corpus(path, &config.columns()?.without_gold(), configured_labels(config)?)
}

/// Pool and test set sharing one label set. The test set is `data.test` when
/// given and otherwise split off the pool.
pub fn pool_and_test(config: &RunConfig) -> Result<(Corpus, Corpus)> {
    if let Some(s) = &config.data.synthetic {
        return Ok(match s.kind {
            SyntheticKind::Planted => {
                let p = Planted::new(PlantedConfig::default(), s.seed)?;
                (
                    p.sample(s.pool, s.seed.wrapping_add(1), "p"),
                    p.sample(s.test, s.seed.wrapping_add(2), "t"),
                )
            }
            SyntheticKind::Cooccurrence => {
                let test = cooccurrence_corpus(s.test, s.seed.wrapping_add(1));
                let mut pool = cooccurrence_corpus(s.pool, s.seed);
                for (i, sentence) in pool.sentences.iter_mut().enumerate() {
                    sentence.id = format!("p{}", i + 1);
                }
                (pool, test)
            }
        });
    }
    let columns = config.columns()?;
    let pool_path = required(&config.data.pool, "pool")?;
    let mut pool = read_corpus(pool_path, &columns, configured_labels(config)?)?;
    let test = match &config.data.test {
        Some(path) => {
            let test = read_corpus(path, &columns, Some(pool.labels.clone()))?;
            if test.labels != pool.labels {
                // the test file introduced labels; re-read the pool against them
                pool = read_corpus(pool_path, &columns, Some(test.labels.clone()))?;
            }
            test
        }
        None => {
            let (rest, test) = spatiotag_core::corpus::split(&pool, config.data.test_fraction, config.data.split_seed)?;
            pool = rest;
            test
        }
    };
    if pool.is_empty() {
        bail!("the pool holds no sentences");
    }
    Ok((pool, test))
}

/// Maps predicted label names onto `gold`'s label set, appending names the
/// gold data never uses. Returns the corpus with the extended label set.
pub fn align_predictions(gold: &Corpus, predicted: &[Vec<String>]) -> Result<(Corpus, Vec<Vec<Label>>)> {
    let mut names: Vec<String> = gold.labels.names().to_vec();
    let mut out = Vec::with_capacity(predicted.len());
    for seq in predicted {
        let mut labels = Vec::with_capacity(seq.len());
        for name in seq {
            let i = match names.iter().position(|n| n == name) {
                Some(i) => i,
                None => {
                    names.push(name.clone());
                    names.len() - 1
                }
            };
            labels.push(Label::new(i));
        }
        out.push(labels);
    }
    let outside = gold.labels.name(gold.labels.outside()).to_owned();
    let labels = LabelSet::new(&names, &outside)?;
    Ok((Corpus::new(gold.sentences.clone(), labels)?, out))
}
