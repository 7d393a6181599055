//! Text model format. Fields are tab-separated; the sample shows them as
//! two spaces.
//!
//! ```text
//! fhmm-model  1
//! markov_order  1
//! labels  O  G  L
//! outside  O
//! templates  word  lemma  ...
//! weights
//! word=west  G  1.5
//! TRANS  G  L  -0.25
//! ```
//!
//! Emission lines are `template=value TAB label TAB weight`, sorted by
//! feature string then label index. Second-order transition lines carry
//! three labels, the first of which may be `<START>`. Only non-zero weights
//! are written. Weights use Rust's shortest round-trip formatting, so
//! reading a file reproduces the written values bit for bit.

use std::fmt::Write as _;
use std::sync::Arc;

use crate::corpus::{Label, LabelSet};
use crate::error::{Error, Result};
use crate::features::FeatureConfig;

use super::{FhmmModel, MarkovOrder, WeightTable};

pub const MODEL_FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "fhmm-model";
const START: &str = "<START>";

pub fn write_model(model: &FhmmModel) -> String {
    let labels = model.labels();
    let weights = model.weights();
    let config = model.feature_config();
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC}\t{MODEL_FORMAT_VERSION}");
    let _ = writeln!(out, "markov_order\t{}", weights.order().number());
    let _ = writeln!(out, "labels\t{}", labels.names().join("\t"));
    let _ = writeln!(out, "outside\t{}", labels.name(labels.outside()));
    let _ = writeln!(out, "templates\t{}", config.template_names().join("\t"));
    out.push_str("weights\n");

    let l = weights.num_labels();
    let mut rows: Vec<(String, usize)> = Vec::new();
    for (f, row) in weights.emissions().chunks(l).enumerate() {
        if row.iter().any(|&w| w != 0.0) {
            let id = crate::features::FeatureId(f as u32);
            rows.push((config.feature_name(model.interner(), id), f));
        }
    }
    rows.sort();
    for (name, f) in rows {
        for (label, &w) in weights.emissions()[f * l..(f + 1) * l].iter().enumerate() {
            if w != 0.0 {
                let _ = writeln!(out, "{name}\t{}\t{w:?}", labels.names()[label]);
            }
        }
    }
    for (i, &w) in weights.transitions().iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let cur = labels.name(Label::new(i % l));
        let prev = labels.name(Label::new((i / l) % l));
        match weights.order() {
            MarkovOrder::First => {
                let _ = writeln!(out, "TRANS\t{prev}\t{cur}\t{w:?}");
            }
            MarkovOrder::Second => {
                let p2 = i / (l * l);
                let prev2 = if p2 == l { START } else { labels.name(Label::new(p2)) };
                let _ = writeln!(out, "TRANS\t{prev2}\t{prev}\t{cur}\t{w:?}");
            }
        }
    }
    out
}

fn bad(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn header<'a>(lines: &mut impl Iterator<Item = (usize, &'a str)>, key: &str) -> Result<(usize, Vec<&'a str>)> {
    let (n, line) = lines.next().ok_or_else(|| bad(0, format!("missing {key} line")))?;
    let mut fields = line.split('\t');
    if fields.next() != Some(key) {
        return Err(bad(n, format!("expected {key}")));
    }
    Ok((n, fields.collect()))
}

fn weight(n: usize, s: &str) -> Result<f64> {
    let w: f64 = s.parse().map_err(|_| bad(n, format!("bad weight {s:?}")))?;
    if !w.is_finite() {
        return Err(bad(n, "weights must be finite"));
    }
    Ok(w)
}

pub fn read_model(text: &str) -> Result<FhmmModel> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (n, magic) = header(&mut lines, MAGIC)?;
    let version: u32 = magic
        .first()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| bad(n, "missing format version"))?;
    if version > MODEL_FORMAT_VERSION {
        return Err(Error::Version {
            kind: "model",
            found: version,
            supported: MODEL_FORMAT_VERSION,
        });
    }
    let (n, order) = header(&mut lines, "markov_order")?;
    let order = order
        .first()
        .and_then(|v| v.parse::<u8>().ok())
        .ok_or_else(|| bad(n, "bad markov order"))
        .and_then(MarkovOrder::from_number)?;
    let (_, names) = header(&mut lines, "labels")?;
    let (n, outside) = header(&mut lines, "outside")?;
    let outside = outside.first().ok_or_else(|| bad(n, "missing outside label"))?;
    let labels = LabelSet::new(names.iter().copied(), outside)?;
    let (_, templates) = header(&mut lines, "templates")?;
    let config = FeatureConfig::from_template_names(&templates)?;
    header(&mut lines, "weights")?;

    let mut interner = config.new_interner();
    let mut emissions = Vec::new();
    let mut transitions = Vec::new();
    let label = |n: usize, name: &str| {
        labels
            .get(name)
            .ok_or_else(|| bad(n, format!("unknown label {name:?}")))
    };
    for (n, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields[0] == "TRANS" {
            let (prev2, prev, cur, w) = match (order, fields.as_slice()) {
                (MarkovOrder::First, [_, p, c, w]) => (None, label(n, p)?, label(n, c)?, weight(n, w)?),
                (MarkovOrder::Second, [_, p2, p, c, w]) => {
                    let p2 = if *p2 == START { None } else { Some(label(n, p2)?) };
                    (p2, label(n, p)?, label(n, c)?, weight(n, w)?)
                }
                _ => return Err(bad(n, "malformed transition line")),
            };
            transitions.push((prev2, prev, cur, w));
            continue;
        }
        let [feature, lab, w] = fields.as_slice() else {
            return Err(bad(n, "expected feature, label and weight"));
        };
        let (template, value) = feature
            .split_once('=')
            .ok_or_else(|| bad(n, format!("malformed feature {feature:?}")))?;
        let t = config
            .template_names()
            .iter()
            .position(|name| name == template)
            .ok_or_else(|| bad(n, format!("feature uses unknown template {template:?}")))?;
        let id = interner.intern(t, value).expect("interner is not frozen while reading");
        emissions.push((id, label(n, lab)?, weight(n, w)?));
    }
    interner.freeze();

    let mut weights = WeightTable::new(labels.len(), interner.len(), order);
    for (f, l, w) in emissions {
        weights.set_emission(f, l, w);
    }
    for (p2, p, c, w) in transitions {
        weights.set_transition(p2, p, c, w);
    }
    FhmmModel::new(labels, config, Arc::new(interner), weights)
}
