//! The two-stage FHMM-G model. Stage 1 learns every tag except the excluded
//! ones (by default the unnamed spatial and temporal tags `G` and `T`); its
//! predictions fill the `ne_tag` field, which the entity-tag window
//! templates of stage 2 read.

use anyhow::{bail, Result};
use spatiotag_core::active::Decoder;
use spatiotag_core::corpus::{Corpus, Label, LabelSet, Sentence};
use spatiotag_core::ensemble::{bag_train, decode_all, EnsembleModel, SampleWeights};
use spatiotag_core::features::{FeatureConfig, Field, TemplateKind};
use spatiotag_core::perceptron::{TrainerConfig, TrainingStats};

/// How an ensemble turns a sentence into labels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Decoding {
    pub decoder: Decoder,
    pub nbest: usize,
}

impl Decoding {
    pub fn decode(&self, ensemble: &EnsembleModel, sentences: &[Sentence]) -> Vec<Vec<Label>> {
        decode_all(ensemble, sentences, self.decoder == Decoder::Bp, self.nbest)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSettings {
    pub features: FeatureConfig,
    pub trainer: TrainerConfig,
    pub k: usize,
    pub sample_rate: f64,
    pub seed: u64,
}

/// Per-member training statistics tagged with the stage they belong to.
pub type StageStats = Vec<(String, TrainingStats)>;

/// A bagged ensemble over the whole corpus with uniform weights.
pub fn train_ensemble(corpus: &Corpus, settings: &TrainSettings) -> Result<(EnsembleModel, Vec<TrainingStats>)> {
    let weights = SampleWeights::uniform(corpus.len(), settings.sample_rate)?;
    Ok(bag_train(
        corpus,
        &weights,
        settings.k,
        &settings.trainer,
        &settings.features,
        settings.seed,
    )?)
}

pub fn stage1_labels(labels: &LabelSet, excluded: &[String]) -> Result<LabelSet> {
    let outside = labels.name(labels.outside());
    if excluded.iter().any(|e| e == outside) {
        bail!("the outside tag {outside} cannot be excluded from stage 1");
    }
    let names = labels.names().iter().filter(|n| !excluded.contains(n)).cloned();
    Ok(LabelSet::new(names, outside)?)
}

/// The corpus with excluded tags mapped to outside, over the stage-1 label set.
pub fn stage1_corpus(corpus: &Corpus, excluded: &[String]) -> Result<Corpus> {
    let labels = stage1_labels(&corpus.labels, excluded)?;
    let map: Vec<Label> = corpus
        .labels
        .names()
        .iter()
        .map(|n| labels.get(n).unwrap_or(labels.outside()))
        .collect();
    let mut sentences = corpus.sentences.clone();
    for s in &mut sentences {
        for t in &mut s.tokens {
            t.gold = t.gold.map(|g| map[g.index()]);
        }
    }
    Ok(Corpus::new(sentences, labels)?)
}

/// Copies of `sentences` whose `ne_tag` is the predicted tag name, or unset
/// where the prediction is outside.
pub fn with_ne_tags(sentences: &[Sentence], predictions: &[Vec<Label>], labels: &LabelSet) -> Vec<Sentence> {
    sentences
        .iter()
        .zip(predictions)
        .map(|(s, pred)| {
            let mut s = s.clone();
            for (t, &p) in s.tokens.iter_mut().zip(pred) {
                t.ne_tag = (p != labels.outside()).then(|| labels.name(p).to_owned());
            }
            s
        })
        .collect()
}

/// The corpus with `ne_tag` taken from its own gold labels, as a perfect
/// stage-1 model would predict them.
pub fn gold_ne_tags(corpus: &Corpus, excluded: &[String]) -> Result<Corpus> {
    let stage1 = stage1_corpus(corpus, excluded)?;
    let gold: Vec<Vec<Label>> = stage1
        .sentences
        .iter()
        .map(|s| {
            s.gold()
                .ok_or_else(|| anyhow::anyhow!("sentence {} has no gold labels", s.id))
        })
        .collect::<Result<_>>()?;
    Ok(corpus.with_sentences(with_ne_tags(&corpus.sentences, &gold, &stage1.labels)))
}

/// `config` without its entity-tag templates.
pub fn without_ne_templates(config: &FeatureConfig) -> Result<FeatureConfig> {
    let kept: Vec<TemplateKind> = config
        .templates()
        .iter()
        .copied()
        .filter(|t| t.required_field() != Some(Field::NeTag))
        .collect();
    Ok(FeatureConfig::new(kept)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FhmmG {
    pub stage1: EnsembleModel,
    pub stage2: EnsembleModel,
    pub excluded: Vec<String>,
}

impl FhmmG {
    /// Stage 2 trains on stage-1 predictions over the training corpus itself.
    pub fn train(
        corpus: &Corpus,
        settings: &TrainSettings,
        excluded: &[String],
        decoding: Decoding,
    ) -> Result<(FhmmG, StageStats)> {
        if !settings.features.uses(Field::NeTag) {
            bail!("the FHMM-G pipeline needs entity-tag window templates in the feature configuration");
        }
        let s1_corpus = stage1_corpus(corpus, excluded)?;
        let s1_settings = TrainSettings {
            features: without_ne_templates(&settings.features)?,
            ..settings.clone()
        };
        let (stage1, s1_stats) = train_ensemble(&s1_corpus, &s1_settings)?;
        let predicted = decoding.decode(&stage1, &corpus.sentences);
        let s2_corpus = corpus.with_sentences(with_ne_tags(&corpus.sentences, &predicted, stage1.labels()));
        let (stage2, s2_stats) = train_ensemble(&s2_corpus, settings)?;
        let stats = s1_stats
            .into_iter()
            .map(|s| ("stage1".to_owned(), s))
            .chain(s2_stats.into_iter().map(|s| ("stage2".to_owned(), s)))
            .collect();
        Ok((
            FhmmG {
                stage1,
                stage2,
                excluded: excluded.to_vec(),
            },
            stats,
        ))
    }

    /// Input sentences with `ne_tag` replaced by stage-1 predictions.
    pub fn annotate(&self, sentences: &[Sentence], decoding: Decoding) -> Vec<Sentence> {
        let predicted = decoding.decode(&self.stage1, sentences);
        with_ne_tags(sentences, &predicted, self.stage1.labels())
    }

    pub fn tag(&self, sentences: &[Sentence], decoding: Decoding) -> Vec<Vec<Label>> {
        decoding.decode(&self.stage2, &self.annotate(sentences, decoding))
    }
}
