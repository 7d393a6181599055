//! Column-format corpora, the flat tag set and phrase-level scoring.
//!
//! Tags carry no B/I prefixes: every token of a phrase has the same bare
//! tag, and a phrase is a maximal run of one non-outside tag. Two adjacent
//! phrases of the same type therefore merge into one span.

use std::fmt::{self, Write as _};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense index of a tag within a [`LabelSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Label(pub u16);

impl Label {
    pub fn new(index: usize) -> Self {
        Label(u16::try_from(index).expect("label index exceeds u16"))
    }

    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Spatiotemporal tag set. `O` is the organization tag; `[O]` marks words
/// outside every phrase.
pub const EST_TAGS: [&str; 14] = [
    "L", "D", "G", "T", "O", "P", "ST", "B", "W", "UL", "US", "UB", "E", "[O]",
];
pub const EST_OUTSIDE: &str = "[O]";

/// Ordered tag names with exactly one designated outside tag.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    names: Vec<String>,
    outside: Label,
}

impl LabelSet {
    pub fn new<I, S>(names: I, outside: &str) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        for (i, name) in names.iter().enumerate() {
            if name.is_empty() || name.chars().any(char::is_whitespace) {
                return Err(Error::config(format!("invalid label name {name:?}")));
            }
            if names[..i].contains(name) {
                return Err(Error::config(format!("duplicate label {name}")));
            }
        }
        if names.len() > u16::MAX as usize {
            return Err(Error::config("too many labels"));
        }
        let outside = names
            .iter()
            .position(|n| n == outside)
            .map(Label::new)
            .ok_or_else(|| Error::config(format!("outside label {outside} is not in the label set")))?;
        Ok(LabelSet { names, outside })
    }

    /// The spatiotemporal tag set with `[O]` as the outside tag.
    pub fn est() -> Self {
        LabelSet::new(EST_TAGS, EST_OUTSIDE).expect("static tag set is valid")
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn outside(&self) -> Label {
        self.outside
    }

    pub fn name(&self, label: Label) -> &str {
        &self.names[label.index()]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, name: &str) -> Option<Label> {
        self.names.iter().position(|n| n == name).map(Label::new)
    }

    pub fn labels(&self) -> impl Iterator<Item = Label> + '_ {
        (0..self.names.len()).map(Label::new)
    }

    /// Every label except the outside one, in index order.
    pub fn entity_labels(&self) -> impl Iterator<Item = Label> + '_ {
        let outside = self.outside;
        self.labels().filter(move |&l| l != outside)
    }

    fn get_or_insert(&mut self, name: &str) -> Label {
        if let Some(label) = self.get(name) {
            return label;
        }
        self.names.push(name.to_owned());
        Label::new(self.names.len() - 1)
    }

    pub fn parse_sequence<S: AsRef<str>>(&self, names: &[S]) -> Result<Vec<Label>> {
        names
            .iter()
            .map(|n| {
                self.get(n.as_ref())
                    .ok_or_else(|| Error::config(format!("unknown label {:?}", n.as_ref())))
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    pub lemma: Option<String>,
    pub pos: Option<String>,
    /// Entity tag predicted by an earlier model, used as a stacked feature.
    pub ne_tag: Option<String>,
    pub gold: Option<Label>,
}

impl Token {
    pub fn new(surface: impl Into<String>) -> Self {
        Token {
            surface: surface.into(),
            lemma: None,
            pos: None,
            ne_tag: None,
            gold: None,
        }
    }

    pub fn with_gold(mut self, gold: Label) -> Self {
        self.gold = Some(gold);
        self
    }

    pub fn with_pos(mut self, pos: impl Into<String>) -> Self {
        self.pos = Some(pos.into());
        self
    }

    /// The lemma column, or the lowercased surface when there is none.
    pub fn lemma_or_default(&self) -> String {
        match &self.lemma {
            Some(l) => l.clone(),
            None => self.surface.to_lowercase(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub id: String,
    pub tokens: Vec<Token>,
}

impl Sentence {
    pub fn new(id: impl Into<String>, tokens: Vec<Token>) -> Self {
        Sentence { id: id.into(), tokens }
    }

    /// Unlabeled sentence from surface strings.
    pub fn from_words<S: AsRef<str>>(id: impl Into<String>, words: &[S]) -> Self {
        let tokens = words.iter().map(|w| Token::new(w.as_ref())).collect();
        Sentence::new(id, tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Gold labels if every token carries one.
    pub fn gold(&self) -> Option<Vec<Label>> {
        self.tokens.iter().map(|t| t.gold).collect()
    }

    pub fn set_gold(&mut self, labels: &[Label]) {
        assert_eq!(labels.len(), self.tokens.len(), "label count must match token count");
        for (t, &l) in self.tokens.iter_mut().zip(labels) {
            t.gold = Some(l);
        }
    }

    pub fn clear_gold(&mut self) {
        for t in &mut self.tokens {
            t.gold = None;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub sentences: Vec<Sentence>,
    pub labels: LabelSet,
}

impl Corpus {
    pub fn new(sentences: Vec<Sentence>, labels: LabelSet) -> Result<Self> {
        for s in &sentences {
            if s.is_empty() {
                return Err(Error::config(format!("sentence {} is empty", s.id)));
            }
            for t in &s.tokens {
                if t.surface.is_empty() {
                    return Err(Error::config(format!("sentence {} has an empty token", s.id)));
                }
                if let Some(g) = t.gold {
                    if g.index() >= labels.len() {
                        return Err(Error::config(format!(
                            "sentence {} uses label index {} outside the label set",
                            s.id, g.0
                        )));
                    }
                }
            }
            let labeled = s.tokens.iter().filter(|t| t.gold.is_some()).count();
            if labeled != 0 && labeled != s.len() {
                return Err(Error::config(format!("sentence {} is partially labeled", s.id)));
            }
        }
        Ok(Corpus { sentences, labels })
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(Sentence::len).sum()
    }

    pub fn is_fully_labeled(&self) -> bool {
        self.sentences.iter().all(|s| s.gold().is_some())
    }

    /// A corpus sharing this label set but holding other sentences.
    pub fn with_sentences(&self, sentences: Vec<Sentence>) -> Corpus {
        Corpus {
            sentences,
            labels: self.labels.clone(),
        }
    }
}

/// What a column of a column-format file holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Column {
    Surface,
    Lemma,
    Pos,
    NeTag,
    Gold,
    Ignore,
}

impl Column {
    fn parse(name: &str) -> Result<Self> {
        Ok(match name.trim().to_ascii_lowercase().as_str() {
            "surface" | "word" => Column::Surface,
            "lemma" => Column::Lemma,
            "pos" => Column::Pos,
            "ne" | "ne_tag" => Column::NeTag,
            "gold" | "label" => Column::Gold,
            "_" | "ignore" => Column::Ignore,
            other => return Err(Error::config(format!("unknown column kind {other:?}"))),
        })
    }

    fn name(self) -> &'static str {
        match self {
            Column::Surface => "surface",
            Column::Lemma => "lemma",
            Column::Pos => "pos",
            Column::NeTag => "ne_tag",
            Column::Gold => "gold",
            Column::Ignore => "ignore",
        }
    }
}

/// Maps column positions to token fields and names the outside tag.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMap {
    columns: Vec<Column>,
    outside: String,
}

impl ColumnMap {
    pub fn new(columns: Vec<Column>, outside: impl Into<String>) -> Result<Self> {
        let count = |c: Column| columns.iter().filter(|&&x| x == c).count();
        if count(Column::Surface) != 1 {
            return Err(Error::config("column map needs exactly one surface column"));
        }
        for c in [Column::Lemma, Column::Pos, Column::NeTag, Column::Gold] {
            if count(c) > 1 {
                return Err(Error::config(format!("column {} mapped twice", c.name())));
            }
        }
        Ok(ColumnMap {
            columns,
            outside: outside.into(),
        })
    }

    /// Comma-separated column kinds, e.g. `surface,pos,gold`.
    pub fn parse(spec: &str, outside: impl Into<String>) -> Result<Self> {
        let columns = spec.split(',').map(Column::parse).collect::<Result<Vec<_>>>()?;
        ColumnMap::new(columns, outside)
    }

    /// CoNLL-2000 layout: word, part of speech, tag.
    pub fn conll2000() -> Self {
        ColumnMap::new(vec![Column::Surface, Column::Pos, Column::Gold], "O").unwrap()
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn outside(&self) -> &str {
        &self.outside
    }

    pub fn has(&self, column: Column) -> bool {
        self.columns.contains(&column)
    }

    /// Same layout without the gold column, for reading raw text.
    pub fn without_gold(&self) -> ColumnMap {
        ColumnMap {
            columns: self.columns.iter().copied().filter(|&c| c != Column::Gold).collect(),
            outside: self.outside.clone(),
        }
    }
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap::conll2000()
    }
}

impl fmt::Display for ColumnMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<_> = self.columns.iter().map(|c| c.name()).collect();
        f.write_str(&names.join(","))
    }
}

const ABSENT: &str = "_";

/// Parses blank-line separated column text. Labels are collected in order of
/// first appearance; the outside label is appended if it never occurs.
pub fn parse_conll(text: &str, columns: &ColumnMap) -> Result<Corpus> {
    parse_conll_with_labels(text, columns, None)
}

/// Like [`parse_conll`] but starting from a known label set, which keeps
/// label indices aligned with an existing model. New labels are appended.
pub fn parse_conll_with_labels(text: &str, columns: &ColumnMap, labels: Option<LabelSet>) -> Result<Corpus> {
    let mut names: Vec<String> = labels.map(|l| l.names).unwrap_or_default();
    let mut sentences = Vec::new();
    let mut tokens: Vec<Token> = Vec::new();
    let mut expected_width: Option<usize> = None;

    let flush = |tokens: &mut Vec<Token>, sentences: &mut Vec<Sentence>| {
        if !tokens.is_empty() {
            let id = format!("s{}", sentences.len() + 1);
            sentences.push(Sentence::new(id, std::mem::take(tokens)));
        }
    };

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            flush(&mut tokens, &mut sentences);
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let width = *expected_width.get_or_insert(fields.len());
        if fields.len() != width {
            return Err(Error::Parse {
                line: lineno + 1,
                message: format!("expected {width} columns, found {}", fields.len()),
            });
        }
        if width < columns.columns.len() {
            return Err(Error::Parse {
                line: lineno + 1,
                message: format!(
                    "column map ({columns}) needs {} columns, found {width}",
                    columns.columns.len()
                ),
            });
        }
        let mut token = Token::new("");
        for (&kind, &value) in columns.columns.iter().zip(&fields) {
            match kind {
                Column::Surface => token.surface = value.to_owned(),
                Column::Lemma => token.lemma = Some(value.to_owned()),
                Column::Pos => token.pos = (value != ABSENT).then(|| value.to_owned()),
                Column::NeTag => token.ne_tag = (value != ABSENT).then(|| value.to_owned()),
                Column::Gold => {
                    let idx = match names.iter().position(|n| n == value) {
                        Some(i) => i,
                        None => {
                            names.push(value.to_owned());
                            names.len() - 1
                        }
                    };
                    token.gold = Some(Label::new(idx));
                }
                Column::Ignore => {}
            }
        }
        tokens.push(token);
    }
    flush(&mut tokens, &mut sentences);

    let mut set = LabelSet {
        names,
        outside: Label(0),
    };
    set.outside = set.get_or_insert(&columns.outside);
    Corpus::new(sentences, set)
}

fn write_token_fields(out: &mut String, token: &Token, columns: &ColumnMap, labels: &LabelSet) {
    for (i, kind) in columns.columns.iter().enumerate() {
        if i > 0 {
            out.push('\t');
        }
        let value = match kind {
            Column::Surface => token.surface.as_str(),
            Column::Lemma => token.lemma.as_deref().unwrap_or(ABSENT),
            Column::Pos => token.pos.as_deref().unwrap_or(ABSENT),
            Column::NeTag => token.ne_tag.as_deref().unwrap_or(ABSENT),
            Column::Gold => token.gold.map(|g| labels.name(g)).unwrap_or(ABSENT),
            Column::Ignore => ABSENT,
        };
        out.push_str(value);
    }
}

/// Writes a corpus back in the given column layout.
pub fn write_conll(corpus: &Corpus, columns: &ColumnMap) -> String {
    let mut out = String::new();
    for (i, s) in corpus.sentences.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        for t in &s.tokens {
            write_token_fields(&mut out, t, columns, &corpus.labels);
            out.push('\n');
        }
    }
    out
}

/// Writes a corpus with one predicted-label column appended.
pub fn write_tagged(
    corpus: &Corpus,
    columns: &ColumnMap,
    predictions: &[Vec<Label>],
    predicted_labels: &LabelSet,
) -> Result<String> {
    check_alignment(corpus, predictions)?;
    let mut out = String::new();
    for (i, (s, pred)) in corpus.sentences.iter().zip(predictions).enumerate() {
        if i > 0 {
            out.push('\n');
        }
        for (t, &p) in s.tokens.iter().zip(pred) {
            write_token_fields(&mut out, t, columns, &corpus.labels);
            out.push('\t');
            out.push_str(predicted_labels.name(p));
            out.push('\n');
        }
    }
    Ok(out)
}

/// Reads the last column of every token line as a label name.
pub fn parse_last_column(text: &str) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    let mut current = Vec::new();
    for line in text.lines() {
        match line.split_whitespace().last() {
            Some(last) => current.push(last.to_owned()),
            None => {
                if !current.is_empty() {
                    out.push(std::mem::take(&mut current));
                }
            }
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

/// Deterministic shuffled split; the test side receives
/// `round(test_fraction * len)` sentences. Corpus order is kept on both sides.
pub fn split(corpus: &Corpus, test_fraction: f64, seed: u64) -> Result<(Corpus, Corpus)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::config(format!(
            "test fraction {test_fraction} is outside (0, 1)"
        )));
    }
    if corpus.is_empty() {
        return Err(Error::config("cannot split an empty corpus"));
    }
    let n = corpus.len();
    let n_test = (test_fraction * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_test = vec![false; n];
    for &i in &order[..n_test] {
        is_test[i] = true;
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (s, t) in corpus.sentences.iter().zip(is_test) {
        if t {
            test.push(s.clone());
        } else {
            train.push(s.clone());
        }
    }
    Ok((corpus.with_sentences(train), corpus.with_sentences(test)))
}

/// Inclusive token range sharing one non-outside label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub label: Label,
}

/// Maximal runs of identical non-outside labels, left to right.
pub fn extract_spans(labels: &[Label], outside: Label) -> Vec<Span> {
    let mut spans = Vec::new();
    let mut i = 0;
    while i < labels.len() {
        let label = labels[i];
        let mut j = i;
        while j + 1 < labels.len() && labels[j + 1] == label {
            j += 1;
        }
        if label != outside {
            spans.push(Span {
                start: i,
                end: j,
                label,
            });
        }
        i = j + 1;
    }
    spans
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub correct: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl Prf {
    pub fn from_counts(correct: usize, predicted: usize, gold: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(correct, predicted);
        let recall = ratio(correct, gold);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Prf {
            precision,
            recall,
            f1,
            correct,
            predicted,
            gold,
        }
    }
}

/// Exact-match phrase scores, micro-averaged and per entity type.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub micro: Prf,
    /// One entry per non-outside label, in label-set order.
    pub per_type: Vec<(String, Prf)>,
}

impl Evaluation {
    pub fn type_f1(&self, name: &str) -> Option<f64> {
        self.per_type.iter().find(|(n, _)| n == name).map(|(_, p)| p.f1)
    }

    /// Aligned plain-text table.
    pub fn report(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<10} {:>9} {:>9} {:>9} {:>7} {:>7} {:>7}",
            "type", "precision", "recall", "f1", "gold", "pred", "correct"
        );
        let rows = self.per_type.iter().map(|(n, p)| (n.as_str(), p));
        for (name, p) in rows.chain(std::iter::once(("micro", &self.micro))) {
            let _ = writeln!(
                out,
                "{:<10} {:>9.4} {:>9.4} {:>9.4} {:>7} {:>7} {:>7}",
                name, p.precision, p.recall, p.f1, p.gold, p.predicted, p.correct
            );
        }
        out
    }

    /// `key=value` lines, one metric per line.
    pub fn key_values(&self) -> String {
        let mut out = String::new();
        let mut emit = |prefix: &str, p: &Prf| {
            let _ = writeln!(out, "{prefix}.precision={}", p.precision);
            let _ = writeln!(out, "{prefix}.recall={}", p.recall);
            let _ = writeln!(out, "{prefix}.f1={}", p.f1);
            let _ = writeln!(out, "{prefix}.gold={}", p.gold);
            let _ = writeln!(out, "{prefix}.predicted={}", p.predicted);
            let _ = writeln!(out, "{prefix}.correct={}", p.correct);
        };
        emit("micro", &self.micro);
        for (name, p) in &self.per_type {
            emit(&format!("type.{name}"), p);
        }
        out
    }
}

fn check_alignment(gold: &Corpus, predicted: &[Vec<Label>]) -> Result<()> {
    if predicted.len() != gold.len() {
        let sentence = gold
            .sentences
            .get(predicted.len().min(gold.len()))
            .map(|s| s.id.clone())
            .unwrap_or_else(|| format!("s{}", gold.len() + 1));
        return Err(Error::Evaluation {
            sentence,
            message: format!(
                "{} predicted sentences for {} gold sentences",
                predicted.len(),
                gold.len()
            ),
        });
    }
    for (s, p) in gold.sentences.iter().zip(predicted) {
        if s.len() != p.len() {
            return Err(Error::Evaluation {
                sentence: s.id.clone(),
                message: format!("{} predicted labels for {} tokens", p.len(), s.len()),
            });
        }
    }
    Ok(())
}

/// Phrase-level precision, recall and F1 of `predicted` against the gold
/// labels of `gold`. Predicted labels index into `gold.labels`.
pub fn evaluate(gold: &Corpus, predicted: &[Vec<Label>]) -> Result<Evaluation> {
    check_alignment(gold, predicted)?;
    let n = gold.labels.len();
    let outside = gold.labels.outside();
    let (mut correct, mut n_pred, mut n_gold) = (vec![0usize; n], vec![0usize; n], vec![0usize; n]);

    for (s, pred) in gold.sentences.iter().zip(predicted) {
        let g = s.gold().ok_or_else(|| Error::Evaluation {
            sentence: s.id.clone(),
            message: "gold labels missing".into(),
        })?;
        if let Some(bad) = pred.iter().find(|l| l.index() >= n) {
            return Err(Error::Evaluation {
                sentence: s.id.clone(),
                message: format!("predicted label index {} outside the label set", bad.0),
            });
        }
        let gold_spans = extract_spans(&g, outside);
        let pred_spans = extract_spans(pred, outside);
        for sp in &gold_spans {
            n_gold[sp.label.index()] += 1;
        }
        for sp in &pred_spans {
            n_pred[sp.label.index()] += 1;
        }
        // both lists are sorted and disjoint, so a merge finds exact matches
        let (mut i, mut j) = (0, 0);
        while i < gold_spans.len() && j < pred_spans.len() {
            let (a, b) = (gold_spans[i], pred_spans[j]);
            match (a.start, a.end).cmp(&(b.start, b.end)) {
                std::cmp::Ordering::Equal => {
                    if a.label == b.label {
                        correct[a.label.index()] += 1;
                    }
                    i += 1;
                    j += 1;
                }
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
            }
        }
    }

    let per_type = gold
        .labels
        .entity_labels()
        .map(|l| {
            let i = l.index();
            (
                gold.labels.name(l).to_owned(),
                Prf::from_counts(correct[i], n_pred[i], n_gold[i]),
            )
        })
        .collect();
    let micro = Prf::from_counts(correct.iter().sum(), n_pred.iter().sum(), n_gold.iter().sum());
    Ok(Evaluation { micro, per_type })
}
