#![allow(dead_code)]

use std::path::{Path, PathBuf};

use spatiotag_core::corpus::{write_conll, ColumnMap, Corpus};
use spatiotag_core::synthetic::{Planted, PlantedConfig};
use spatiotag_harness::config::RunConfig;

pub const COLUMNS: &str = "surface,gold";

/// Train and test sets from one planted model.
pub fn planted(train: usize, test: usize, seed: u64) -> (Corpus, Corpus) {
    let p = Planted::new(PlantedConfig::default(), seed).unwrap();
    (p.sample(train, seed + 1, "tr"), p.sample(test, seed + 2, "te"))
}

pub fn write_corpus(dir: &Path, name: &str, corpus: &Corpus) -> PathBuf {
    let map = ColumnMap::parse(COLUMNS, corpus.labels.name(corpus.labels.outside())).unwrap();
    let path = dir.join(name);
    std::fs::write(&path, write_conll(corpus, &map)).unwrap();
    path
}

/// Word-window features over two-column files, small ensembles.
pub fn base_toml() -> String {
    r#"
[data]
columns = "surface,gold"
outside = "O"

[features]
templates = ["word", "word[-1]", "word[+1]"]

[ensemble]
k = 3
sample_rate = 0.8
nbest = 3
"#
    .to_owned()
}

pub fn base_config() -> RunConfig {
    RunConfig::from_toml(&base_toml()).unwrap()
}
