//! Bagged FHMM ensembles and their two decoders.
//!
//! Best Viterbi Sequence (BVS) pools the members' n-best lists, rescores each
//! pooled sequence under every member, normalises each member's scores over
//! the pool and returns the sequence with the largest summed probability.
//! Best BP Sequence (BPS) sums the members' token marginals and takes the
//! per-token argmax, so its output need not be any member's sequence.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::corpus::{Corpus, Label, LabelSet, Sentence};
use crate::error::{Error, Result};
use crate::features::{FeatureConfig, Interner};
use crate::fhmm::{argmax_tolerant, read_model, write_model, FhmmModel};
use crate::perceptron::{train_encoded, EncodedExample, TrainerConfig, TrainingStats};

pub const MANIFEST_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleModel {
    members: Vec<FhmmModel>,
    sample_rate: f64,
    seed: u64,
}

/// Per-example inclusion probabilities for bagging.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleWeights(Vec<f64>);

impl SampleWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0 && **w <= 1.0)) {
            return Err(Error::config(format!("sample weight {w} is outside (0, 1]")));
        }
        Ok(SampleWeights(weights))
    }

    pub fn uniform(n: usize, weight: f64) -> Result<Self> {
        SampleWeights::new(vec![weight; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn expected_size(&self) -> f64 {
        self.0.iter().sum()
    }
}

/// Unique sequences from all members' n-best lists, in lexicographic order.
#[derive(Clone, Debug, PartialEq)]
pub struct PooledSequences {
    pub sequences: Vec<Vec<Label>>,
}

impl PooledSequences {
    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }
}

/// Indices of the examples member `member` trains on. Each example is kept
/// with probability equal to its weight; an empty draw falls back to one
/// uniformly chosen example.
pub fn draw_subset(weights: &SampleWeights, member: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(member as u64);
    let mut picked: Vec<usize> = weights
        .as_slice()
        .iter()
        .enumerate()
        .filter(|&(_, &w)| rng.gen::<f64>() < w)
        .map(|(i, _)| i)
        .collect();
    if picked.is_empty() && !weights.is_empty() {
        picked.push(rng.gen_range(0..weights.len()));
    }
    picked
}

/// Normalises scores into probabilities by exponentiating and dividing.
fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

impl EnsembleModel {
    pub fn new(members: Vec<FhmmModel>, sample_rate: f64, seed: u64) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::config("an ensemble needs at least one member"))?;
        if !(sample_rate > 0.0 && sample_rate <= 1.0) {
            return Err(Error::config(format!("sample rate {sample_rate} is outside (0, 1]")));
        }
        for m in &members[1..] {
            if m.labels() != first.labels() || m.feature_config() != first.feature_config() {
                return Err(Error::config(
                    "ensemble members must share labels and feature templates",
                ));
            }
        }
        Ok(EnsembleModel {
            members,
            sample_rate,
            seed,
        })
    }

    pub fn members(&self) -> &[FhmmModel] {
        &self.members
    }

    pub fn k(&self) -> usize {
        self.members.len()
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn labels(&self) -> &LabelSet {
        self.members[0].labels()
    }

    pub fn feature_config(&self) -> &FeatureConfig {
        self.members[0].feature_config()
    }

    pub fn pooled(&self, sentence: &Sentence, n: usize) -> PooledSequences {
        let mut sequences: Vec<Vec<Label>> = self
            .members
            .iter()
            .flat_map(|m| m.viterbi_nbest(sentence, n).entries.into_iter().map(|(s, _)| s))
            .collect();
        sequences.sort();
        sequences.dedup();
        PooledSequences { sequences }
    }

    /// `P[k][j]`: member `k`'s probability of pooled sequence `j`, normalised
    /// over the pool.
    pub fn member_probabilities(&self, sentence: &Sentence, pool: &PooledSequences) -> Vec<Vec<f64>> {
        self.members
            .iter()
            .map(|m| {
                let lattice = m.lattice(sentence);
                let scores: Vec<f64> = pool.sequences.iter().map(|s| lattice.score(s)).collect();
                softmax(&scores)
            })
            .collect()
    }

    /// The pool and each pooled sequence's summed member probability.
    pub fn bvs_scores(&self, sentence: &Sentence, n: usize) -> (PooledSequences, Vec<f64>) {
        let pool = self.pooled(sentence, n);
        let probs = self.member_probabilities(sentence, &pool);
        let mut sums = vec![0.0; pool.len()];
        for row in &probs {
            for (s, p) in sums.iter_mut().zip(row) {
                *s += p;
            }
        }
        (pool, sums)
    }

    pub fn decode_bvs(&self, sentence: &Sentence, n: usize) -> Vec<Label> {
        assert!(n >= 1, "n-best needs n >= 1");
        let (mut pool, sums) = self.bvs_scores(sentence, n);
        let best = argmax_tolerant(&sums);
        pool.sequences.swap_remove(best)
    }

    /// Summed member marginals, `[position][label]`.
    pub fn bps_scores(&self, sentence: &Sentence) -> Vec<Vec<f64>> {
        let mut total = vec![vec![0.0; self.labels().len()]; sentence.len()];
        for m in &self.members {
            let marg = m.forward_backward(sentence);
            for (t, row) in total.iter_mut().zip(&marg.probs) {
                for (a, p) in t.iter_mut().zip(row) {
                    *a += p;
                }
            }
        }
        total
    }

    pub fn decode_bps(&self, sentence: &Sentence) -> Vec<Label> {
        self.bps_scores(sentence)
            .iter()
            .map(|row| Label::new(argmax_tolerant(row)))
            .collect()
    }

    /// Sequence vote entropy over the pooled n-best set.
    pub fn sve(&self, sentence: &Sentence, n: usize) -> f64 {
        let pool = self.pooled(sentence, n);
        if pool.len() <= 1 {
            return 0.0;
        }
        let probs = self.member_probabilities(sentence, &pool);
        let c = self.k() as f64;
        let mut avg = vec![0.0; pool.len()];
        for row in &probs {
            for (a, p) in avg.iter_mut().zip(row) {
                *a += p / c;
            }
        }
        let total: f64 = avg.iter().sum();
        -avg.iter()
            .map(|a| a / total)
            .filter(|&p| p > 0.0)
            .map(|p| p * p.ln())
            .sum::<f64>()
    }
}

/// Trains `k` members on Bernoulli draws from already-encoded examples.
/// All members share `interner`; every member uses the same trainer seed.
#[allow(clippy::too_many_arguments)]
pub fn bag_train_encoded(
    examples: &[EncodedExample],
    weights: &SampleWeights,
    k: usize,
    trainer: &TrainerConfig,
    labels: &LabelSet,
    features: &FeatureConfig,
    interner: &Arc<Interner>,
    sample_rate: f64,
    seed: u64,
) -> Result<(EnsembleModel, Vec<TrainingStats>)> {
    if examples.is_empty() {
        return Err(Error::config("cannot bag an empty labeled set"));
    }
    if k == 0 {
        return Err(Error::config("ensemble size k must be at least 1"));
    }
    if weights.len() != examples.len() {
        return Err(Error::contract(format!(
            "{} sample weights for {} examples",
            weights.len(),
            examples.len()
        )));
    }
    let trained = (0..k)
        .into_par_iter()
        .map(|m| {
            let subset: Vec<&EncodedExample> = draw_subset(weights, m, seed)
                .into_iter()
                .map(|i| &examples[i])
                .collect();
            let t = train_encoded(&subset, labels.len(), interner.len(), trainer)?;
            let model = FhmmModel::new(labels.clone(), features.clone(), interner.clone(), t.averaged)?;
            Ok((model, t.stats))
        })
        .collect::<Result<Vec<_>>>()?;
    let (members, stats) = trained.into_iter().unzip();
    Ok((EnsembleModel::new(members, sample_rate, seed)?, stats))
}

/// Bags `k` members over a labeled corpus. The interner covers the corpus.
pub fn bag_train(
    labeled: &Corpus,
    weights: &SampleWeights,
    k: usize,
    trainer: &TrainerConfig,
    features: &FeatureConfig,
    seed: u64,
) -> Result<(EnsembleModel, Vec<TrainingStats>)> {
    if labeled.is_empty() {
        return Err(Error::config("cannot bag an empty labeled set"));
    }
    features.check(labeled)?;
    let mut interner = features.new_interner();
    interner.absorb(features, &labeled.sentences);
    interner.freeze();
    let examples = labeled
        .sentences
        .iter()
        .map(|s| EncodedExample::new(s, features, &interner))
        .collect::<Result<Vec<_>>>()?;
    let rate = weights.expected_size() / weights.len().max(1) as f64;
    bag_train_encoded(
        &examples,
        weights,
        k,
        trainer,
        &labeled.labels,
        features,
        &Arc::new(interner),
        rate.clamp(f64::MIN_POSITIVE, 1.0),
        seed,
    )
}

/// Decodes every sentence in parallel with the chosen decoder.
pub fn decode_all(ensemble: &EnsembleModel, sentences: &[Sentence], bp: bool, n: usize) -> Vec<Vec<Label>> {
    sentences
        .par_iter()
        .map(|s| {
            if bp {
                ensemble.decode_bps(s)
            } else {
                ensemble.decode_bvs(s, n)
            }
        })
        .collect()
}

/// Manifest contents: `k`, `r`, the bagging seed, and member file names
/// relative to the manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub sample_rate: f64,
    pub seed: u64,
    pub members: Vec<String>,
}

pub fn write_manifest(manifest: &Manifest) -> String {
    let mut out = format!("fhmm-ensemble\t{MANIFEST_FORMAT_VERSION}\n");
    let _ = writeln!(out, "k\t{}", manifest.members.len());
    let _ = writeln!(out, "sample_rate\t{:?}", manifest.sample_rate);
    let _ = writeln!(out, "seed\t{}", manifest.seed);
    for m in &manifest.members {
        let _ = writeln!(out, "member\t{m}");
    }
    out
}

pub fn read_manifest(text: &str) -> Result<Manifest> {
    let bad = |line: usize, message: String| Error::Parse { line, message };
    let mut version = None;
    let mut k = None;
    let mut sample_rate = None;
    let mut seed = None;
    let mut members = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.is_empty()) {
        let n = i + 1;
        let (key, value) = line
            .split_once('\t')
            .ok_or_else(|| bad(n, "expected key TAB value".into()))?;
        let num = |v: &str| v.parse::<u64>().map_err(|_| bad(n, format!("bad number {v:?}")));
        match key {
            "fhmm-ensemble" => version = Some(num(value)? as u32),
            "k" => k = Some(num(value)? as usize),
            "sample_rate" => {
                sample_rate = Some(
                    value
                        .parse::<f64>()
                        .map_err(|_| bad(n, format!("bad sample rate {value:?}")))?,
                )
            }
            "seed" => seed = Some(num(value)?),
            "member" => members.push(value.to_owned()),
            other => return Err(bad(n, format!("unknown manifest key {other:?}"))),
        }
    }
    let version = version.ok_or_else(|| bad(1, "not an ensemble manifest".into()))?;
    if version > MANIFEST_FORMAT_VERSION {
        return Err(Error::Version {
            kind: "ensemble manifest",
            found: version,
            supported: MANIFEST_FORMAT_VERSION,
        });
    }
    let k = k.ok_or_else(|| bad(0, "manifest lacks k".into()))?;
    if k != members.len() {
        return Err(bad(
            0,
            format!("manifest declares k = {k} but lists {} members", members.len()),
        ));
    }
    Ok(Manifest {
        sample_rate: sample_rate.ok_or_else(|| bad(0, "manifest lacks sample_rate".into()))?,
        seed: seed.ok_or_else(|| bad(0, "manifest lacks seed".into()))?,
        members,
    })
}

fn format_error(path: &Path, e: Error) -> Error {
    match e {
        Error::Parse { line, message } => Error::Format {
            path: path.display().to_string(),
            message: format!("line {line}: {message}"),
        },
        other => other,
    }
}

/// Writes the manifest at `path` and members next to it as
/// `<stem>.member<i>.fhmm`.
pub fn save_ensemble(ensemble: &EnsembleModel, path: &Path) -> Result<()> {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("ensemble");
    let dir = path.parent().unwrap_or(Path::new(""));
    let mut members = Vec::new();
    for (i, m) in ensemble.members().iter().enumerate() {
        let name = format!("{stem}.member{i}.fhmm");
        std::fs::write(dir.join(&name), write_model(m))?;
        members.push(name);
    }
    let manifest = Manifest {
        sample_rate: ensemble.sample_rate(),
        seed: ensemble.seed(),
        members,
    };
    std::fs::write(path, write_manifest(&manifest))?;
    Ok(())
}

pub fn load_ensemble(path: &Path) -> Result<EnsembleModel> {
    let manifest = read_manifest(&std::fs::read_to_string(path)?).map_err(|e| format_error(path, e))?;
    let dir = path.parent().unwrap_or(Path::new(""));
    let members = manifest
        .members
        .iter()
        .map(|name| {
            let p = dir.join(name);
            read_model(&std::fs::read_to_string(&p)?).map_err(|e| format_error(&p, e))
        })
        .collect::<Result<Vec<_>>>()?;
    EnsembleModel::new(members, manifest.sample_rate, manifest.seed)
}
