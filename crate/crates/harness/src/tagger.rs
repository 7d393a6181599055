//! A trained model as the commands see it: one ensemble, or the two-stage
//! pipeline. Both persist as a small text manifest next to the member files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use spatiotag_core::corpus::{Corpus, Label, LabelSet, Sentence};
use spatiotag_core::ensemble::{load_ensemble, save_ensemble, EnsembleModel};
use spatiotag_core::features::FeatureConfig;
use spatiotag_core::perceptron::TrainingStats;

use crate::config::RunConfig;
use crate::pipeline::{train_ensemble, Decoding, FhmmG, StageStats, TrainSettings};

pub const PIPELINE_FORMAT_VERSION: u32 = 1;
const PIPELINE_MAGIC: &str = "fhmm-pipeline";

#[derive(Clone, Debug, PartialEq)]
pub enum Tagger {
    Single(EnsembleModel),
    Pipeline(FhmmG),
}

pub fn settings(config: &RunConfig) -> Result<TrainSettings> {
    Ok(TrainSettings {
        features: config.features.build()?,
        trainer: config.trainer.clone(),
        k: config.ensemble.k,
        sample_rate: config.ensemble.sample_rate,
        seed: config.ensemble.seed,
    })
}

pub fn decoding(config: &RunConfig) -> Decoding {
    Decoding {
        decoder: config.ensemble.decoder,
        nbest: config.ensemble.nbest,
    }
}

impl Tagger {
    pub fn train(corpus: &Corpus, config: &RunConfig) -> Result<(Tagger, StageStats)> {
        let settings = settings(config)?;
        if config.pipeline.enabled {
            let (g, stats) = FhmmG::train(corpus, &settings, &config.pipeline.stage1_excluded, decoding(config))?;
            return Ok((Tagger::Pipeline(g), stats));
        }
        let (e, stats) = train_ensemble(corpus, &settings)?;
        Ok((
            Tagger::Single(e),
            stats.into_iter().map(|s| ("single".to_owned(), s)).collect(),
        ))
    }

    /// The model that produces the final labels.
    pub fn output_model(&self) -> &EnsembleModel {
        match self {
            Tagger::Single(e) => e,
            Tagger::Pipeline(g) => &g.stage2,
        }
    }

    pub fn labels(&self) -> &LabelSet {
        self.output_model().labels()
    }

    pub fn feature_config(&self) -> &FeatureConfig {
        self.output_model().feature_config()
    }

    pub fn tag(&self, sentences: &[Sentence], decoding: Decoding) -> Vec<Vec<Label>> {
        match self {
            Tagger::Single(e) => decoding.decode(e, sentences),
            Tagger::Pipeline(g) => g.tag(sentences, decoding),
        }
    }

    /// Writes the manifest at `path`; member files go next to it.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        match self {
            Tagger::Single(e) => save_ensemble(e, path).with_context(|| format!("writing {}", path.display())),
            Tagger::Pipeline(g) => {
                let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
                let (p1, p2) = (format!("{stem}.stage1.ens"), format!("{stem}.stage2.ens"));
                let dir = path.parent().unwrap_or(Path::new(""));
                save_ensemble(&g.stage1, &dir.join(&p1))?;
                save_ensemble(&g.stage2, &dir.join(&p2))?;
                let mut text = format!("{PIPELINE_MAGIC}\t{PIPELINE_FORMAT_VERSION}\n");
                let _ = writeln!(text, "excluded\t{}", g.excluded.join("\t"));
                let _ = writeln!(text, "stage1\t{p1}");
                let _ = writeln!(text, "stage2\t{p2}");
                std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
            }
        }
    }

    pub fn load(path: &Path) -> Result<Tagger> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading model {}", path.display()))?;
        let first = text.lines().next().unwrap_or_default();
        let Some(version) = first.strip_prefix(PIPELINE_MAGIC) else {
            let e = load_ensemble(path).with_context(|| format!("loading model {}", path.display()))?;
            return Ok(Tagger::Single(e));
        };
        let version: u32 = version
            .trim()
            .parse()
            .with_context(|| format!("{}: bad pipeline header {first:?}", path.display()))?;
        if version > PIPELINE_FORMAT_VERSION {
            return Err(spatiotag_core::Error::Version {
                kind: "pipeline manifest",
                found: version,
                supported: PIPELINE_FORMAT_VERSION,
            })
            .with_context(|| format!("loading model {}", path.display()));
        }
        let dir = path.parent().unwrap_or(Path::new(""));
        let (mut excluded, mut s1, mut s2): (Option<Vec<String>>, Option<PathBuf>, Option<PathBuf>) =
            (None, None, None);
        for line in text.lines().skip(1).filter(|l| !l.is_empty()) {
            let mut f = line.split('\t');
            match f.next() {
                Some("excluded") => excluded = Some(f.filter(|s| !s.is_empty()).map(str::to_owned).collect()),
                Some("stage1") => s1 = f.next().map(|p| dir.join(p)),
                Some("stage2") => s2 = f.next().map(|p| dir.join(p)),
                _ => bail!("{}: unexpected line {line:?}", path.display()),
            }
        }
        let (Some(excluded), Some(s1), Some(s2)) = (excluded, s1, s2) else {
            bail!("{}: pipeline manifest is incomplete", path.display());
        };
        Ok(Tagger::Pipeline(FhmmG {
            stage1: load_ensemble(&s1).with_context(|| format!("loading {}", s1.display()))?,
            stage2: load_ensemble(&s2).with_context(|| format!("loading {}", s2.display()))?,
            excluded,
        }))
    }
}

/// `stage,member,epoch,token_error_rate,updates` rows.
pub fn stats_csv(stats: &[(String, TrainingStats)]) -> String {
    let mut out = String::from("stage,member,epoch,token_error_rate,updates\n");
    let mut member = 0;
    let mut last_stage: Option<&str> = None;
    for (stage, s) in stats {
        if last_stage != Some(stage.as_str()) {
            member = 0;
            last_stage = Some(stage);
        }
        for line in s.to_csv().lines().skip(1) {
            let _ = writeln!(out, "{stage},{member},{line}");
        }
        member += 1;
    }
    out
}
