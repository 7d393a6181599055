//! Run configuration. A TOML file with one table per concern; every key has
//! a default, unknown keys are rejected, and `section.key=value` overrides
//! from the command line are applied before validation.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use spatiotag_core::active::{ALConfig, Decoder, Reweight, Selection};
use spatiotag_core::corpus::ColumnMap;
use spatiotag_core::features::{FeatureConfig, Profile};
use spatiotag_core::perceptron::TrainerConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub features: FeaturesConfig,
    pub trainer: TrainerConfig,
    pub ensemble: EnsembleConfig,
    pub active: ActiveConfig,
    pub output: OutputConfig,
    pub serve: ServeConfig,
    pub pipeline: PipelineConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Labeled training file for `train`.
    pub train: Option<PathBuf>,
    /// Labeled file for `eval`, and the test set of `al-simulate` and `serve`.
    pub test: Option<PathBuf>,
    /// Text to label with `tag`.
    pub input: Option<PathBuf>,
    /// Tagged output scored by `eval`; without it `eval` tags the test file
    /// with the model first.
    pub predictions: Option<PathBuf>,
    /// Sentence pool for `al-simulate` (labeled) and `serve`.
    pub pool: Option<PathBuf>,
    /// Comma-separated column kinds: surface, lemma, pos, ne_tag, gold, ignore.
    pub columns: String,
    pub outside: String,
    /// Fixed label set; by default labels are collected from the data.
    pub labels: Option<Vec<String>>,
    /// Share of the pool held out as test set when `test` is not given.
    pub test_fraction: f64,
    pub split_seed: u64,
    /// Generated data instead of files.
    pub synthetic: Option<SyntheticConfig>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train: None,
            test: None,
            input: None,
            predictions: None,
            pool: None,
            columns: "surface,pos,gold".into(),
            outside: "O".into(),
            labels: None,
            test_fraction: 0.2,
            split_seed: 0,
            synthetic: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SyntheticKind {
    /// Sentences labeled by a random planted FHMM.
    Planted,
    /// Spatiotemporal sentences with entity/trigger co-occurrence.
    Cooccurrence,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub kind: SyntheticKind,
    pub pool: usize,
    pub test: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturesConfig {
    pub profile: Profile,
    pub suffix_lengths: Vec<u8>,
    pub prefix_lengths: Vec<u8>,
    /// Explicit template names; replaces the profile when set.
    pub templates: Option<Vec<String>>,
}

impl Default for FeaturesConfig {
    fn default() -> Self {
        FeaturesConfig {
            profile: Profile::Chunk,
            suffix_lengths: vec![2, 3],
            prefix_lengths: vec![2, 3],
            templates: None,
        }
    }
}

impl FeaturesConfig {
    pub fn build(&self) -> Result<FeatureConfig> {
        Ok(match &self.templates {
            Some(names) => FeatureConfig::from_template_names(names)?,
            None => FeatureConfig::with_lengths(self.profile, &self.suffix_lengths, &self.prefix_lengths)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub k: usize,
    pub sample_rate: f64,
    pub seed: u64,
    pub nbest: usize,
    pub decoder: Decoder,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            k: 5,
            sample_rate: 0.8,
            seed: 0,
            nbest: 5,
            decoder: Decoder::Bp,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActiveConfig {
    pub initial_seed_count: usize,
    pub batch_size: usize,
    pub rounds: usize,
    pub reweight: Reweight,
    pub selection: Selection,
    pub literal_reweight: bool,
    pub record_time: bool,
    pub seeds: Vec<u64>,
    /// Run all eight decoder × reweight × selection combinations instead of
    /// only the configured one.
    pub grid: bool,
}

impl Default for ActiveConfig {
    fn default() -> Self {
        ActiveConfig {
            initial_seed_count: 10,
            batch_size: 1,
            rounds: 20,
            reweight: Reweight::Rw,
            selection: Selection::Utility,
            literal_reweight: false,
            record_time: false,
            seeds: vec![0],
            grid: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Text,
    /// One `key=value` line per metric.
    Kv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Model manifest written by `train` and read by `tag` and `eval`.
    pub model: PathBuf,
    /// Per-epoch training statistics.
    pub stats: Option<PathBuf>,
    /// Tagged output of `tag`; standard output when unset.
    pub tagged: Option<PathBuf>,
    /// Directory for learning curves and the comparison table.
    pub curves: PathBuf,
    /// Also draw the learning curves as SVG.
    pub plot: bool,
    pub report_format: ReportFormat,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            model: "model.ens".into(),
            stats: None,
            tagged: None,
            curves: "curves".into(),
            plot: false,
            report_format: ReportFormat::Text,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeConfig {
    pub addr: String,
    /// Holds the session state and the audit log.
    pub state_dir: PathBuf,
    /// Include per-token marginals in suggestions.
    pub marginals: bool,
}

impl Default for ServeConfig {
    fn default() -> Self {
        ServeConfig {
            addr: "127.0.0.1:8080".into(),
            state_dir: "session".into(),
            marginals: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Train the two-stage FHMM-G model.
    pub enabled: bool,
    /// Tags the stage-1 model does not learn; they become outside.
    pub stage1_excluded: Vec<String>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            enabled: false,
            stage1_excluded: vec!["G".into(), "T".into()],
        }
    }
}

impl RunConfig {
    /// Reads `path` (or starts from defaults) and applies overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str::<toml::Table>(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let config: RunConfig = toml::Value::Table(table).try_into().context("invalid configuration")?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_toml(text: &str) -> Result<RunConfig> {
        let config: RunConfig = toml::from_str(text).context("invalid configuration")?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.trainer.validate()?;
        self.features.build()?;
        self.columns()?;
        let e = &self.ensemble;
        if e.k == 0 {
            bail!("ensemble.k must be at least 1");
        }
        if !(e.sample_rate > 0.0 && e.sample_rate <= 1.0) {
            bail!("ensemble.sample_rate must be in (0, 1]");
        }
        if e.nbest == 0 {
            bail!("ensemble.nbest must be at least 1");
        }
        if !(self.data.test_fraction > 0.0 && self.data.test_fraction < 1.0) {
            bail!("data.test_fraction must be in (0, 1)");
        }
        if self.active.seeds.is_empty() {
            bail!("active.seeds must list at least one seed");
        }
        self.al_config(
            e.decoder,
            self.active.reweight,
            self.active.selection,
            self.active.seeds[0],
        )
        .validate()?;
        Ok(())
    }

    pub fn columns(&self) -> Result<ColumnMap> {
        Ok(ColumnMap::parse(&self.data.columns, self.data.outside.clone())?)
    }

    pub fn al_config(&self, decoder: Decoder, reweight: Reweight, selection: Selection, seed: u64) -> ALConfig {
        let a = &self.active;
        ALConfig {
            initial_seed_count: a.initial_seed_count,
            batch_size: a.batch_size,
            rounds: a.rounds,
            sample_rate: self.ensemble.sample_rate,
            nbest: self.ensemble.nbest,
            ensemble_size: self.ensemble.k,
            decoder,
            reweight,
            selection,
            literal_reweight: a.literal_reweight,
            seed,
            record_time: a.record_time,
            trainer: self.trainer.clone(),
        }
    }

    /// The configurations `al-simulate` runs for one seed.
    pub fn al_grid(&self, seed: u64) -> Vec<ALConfig> {
        if !self.active.grid {
            return vec![self.al_config(self.ensemble.decoder, self.active.reweight, self.active.selection, seed)];
        }
        let mut out = Vec::new();
        for &d in Decoder::ALL {
            for &r in Reweight::ALL {
                for &s in Selection::ALL {
                    out.push(self.al_config(d, r, s, seed));
                }
            }
        }
        out
    }
}

/// Sets `a.b.c=value` in `table`. The value is read as a TOML value when it
/// parses as one and as a bare string otherwise.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .with_context(|| format!("override {assignment:?} is not of the form section.key=value"))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        bail!("override {assignment:?} has an empty key segment");
    }
    let value = match toml::from_str::<toml::Table>(&format!("v = {}", raw.trim())) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.trim().to_owned()),
    };
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = match entry {
            toml::Value::Table(t) => t,
            _ => bail!("override {assignment:?}: {p} is not a table"),
        };
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
