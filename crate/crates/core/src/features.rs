//! Feature templates and the feature interner.
//!
//! Word-level templates look only at the current token (word, lemma, part of
//! speech, affixes). Global templates read a window of two tokens on either
//! side; cells outside the sentence yield per-offset boundary symbols
//! (`<S-1>`, `<S-2>`, `</S+1>`, `</S+2>`). Stacked entity-tag cells are the
//! exception: they fire only on real tokens that carry an entity tag, so a
//! corpus without entity tags extracts exactly as if the templates were off.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Sentence, Token};
use crate::error::{Error, Result};

/// Dense id of an interned (template, value) pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FeatureId(pub u32);

impl FeatureId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

pub const WINDOW: std::ops::RangeInclusive<i8> = -2..=2;

/// Task profiles with their template selections.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Chunk,
    Nlpba,
    OntoNotes,
    Est,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "chunk" => Ok(Profile::Chunk),
            "nlpba" => Ok(Profile::Nlpba),
            "ontonotes" => Ok(Profile::OntoNotes),
            "est" => Ok(Profile::Est),
            other => Err(Error::config(format!("unknown feature profile {other:?}"))),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Chunk => "chunk",
            Profile::Nlpba => "nlpba",
            Profile::OntoNotes => "ontonotes",
            Profile::Est => "est",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TemplateKind {
    Word,
    Lemma,
    Pos,
    Suffix(u8),
    WordSuffix(u8),
    PrefixSuffix {
        prefix: u8,
        suffix: u8,
    },
    PosSuffix(u8),
    WindowLemma(i8),
    WindowWord(i8),
    WindowPos(i8),
    WindowSuffix {
        offset: i8,
        len: u8,
    },
    WindowNeTag(i8),
    /// Pairs the cells at `offset` and `offset + 1`.
    PosBigram(i8),
    SuffixBigram {
        offset: i8,
        len: u8,
    },
    WordBigram(i8),
}

/// Token field a template reads beyond the surface form.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Field {
    Pos,
    NeTag,
}

fn off(o: i8) -> String {
    if o > 0 {
        format!("+{o}")
    } else {
        o.to_string()
    }
}

impl TemplateKind {
    /// Windowed templates are global; the rest are word-level.
    pub fn is_global(self) -> bool {
        use TemplateKind::*;
        matches!(
            self,
            WindowLemma(_)
                | WindowWord(_)
                | WindowPos(_)
                | WindowSuffix { .. }
                | WindowNeTag(_)
                | PosBigram(_)
                | SuffixBigram { .. }
                | WordBigram(_)
        )
    }

    pub fn required_field(self) -> Option<Field> {
        use TemplateKind::*;
        match self {
            Pos | PosSuffix(_) | WindowPos(_) | PosBigram(_) => Some(Field::Pos),
            WindowNeTag(_) => Some(Field::NeTag),
            _ => None,
        }
    }

    pub fn name(self) -> String {
        use TemplateKind::*;
        match self {
            Word => "word".into(),
            Lemma => "lemma".into(),
            Pos => "pos".into(),
            Suffix(n) => format!("suf{n}"),
            WordSuffix(n) => format!("word+suf{n}"),
            PrefixSuffix { prefix, suffix } => format!("pre{prefix}+suf{suffix}"),
            PosSuffix(n) => format!("pos+suf{n}"),
            WindowLemma(o) => format!("lemma[{}]", off(o)),
            WindowWord(o) => format!("word[{}]", off(o)),
            WindowPos(o) => format!("pos[{}]", off(o)),
            WindowSuffix { offset, len } => format!("suf{len}[{}]", off(offset)),
            WindowNeTag(o) => format!("ne[{}]", off(o)),
            PosBigram(o) => format!("pos[{},{}]", off(o), off(o + 1)),
            SuffixBigram { offset, len } => format!("suf{len}[{},{}]", off(offset), off(offset + 1)),
            WordBigram(o) => format!("word[{},{}]", off(o), off(o + 1)),
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        use TemplateKind::*;
        let parse_len = |s: &str| s.parse::<u8>().ok().filter(|&n| n > 0);
        if let Some((head, rest)) = name.split_once('[') {
            let inner = rest.strip_suffix(']')?;
            let offsets: Vec<i8> = inner
                .split(',')
                .map(|o| o.trim_start_matches('+').parse::<i8>().ok())
                .collect::<Option<_>>()?;
            if offsets.iter().any(|o| !WINDOW.contains(o)) {
                return None;
            }
            return match (head, offsets.as_slice()) {
                ("lemma", &[o]) => Some(WindowLemma(o)),
                ("word", &[o]) => Some(WindowWord(o)),
                ("pos", &[o]) => Some(WindowPos(o)),
                ("ne", &[o]) => Some(WindowNeTag(o)),
                ("pos", &[a, b]) if b == a + 1 => Some(PosBigram(a)),
                ("word", &[a, b]) if b == a + 1 => Some(WordBigram(a)),
                (h, &[o]) if h.starts_with("suf") => Some(WindowSuffix {
                    offset: o,
                    len: parse_len(&h[3..])?,
                }),
                (h, &[a, b]) if h.starts_with("suf") && b == a + 1 => Some(SuffixBigram {
                    offset: a,
                    len: parse_len(&h[3..])?,
                }),
                _ => None,
            };
        }
        match name {
            "word" => Some(Word),
            "lemma" => Some(Lemma),
            "pos" => Some(Pos),
            _ => {
                if let Some(n) = name.strip_prefix("word+suf") {
                    Some(WordSuffix(parse_len(n)?))
                } else if let Some(n) = name.strip_prefix("pos+suf") {
                    Some(PosSuffix(parse_len(n)?))
                } else if let Some(rest) = name.strip_prefix("pre") {
                    let (p, s) = rest.split_once("+suf")?;
                    Some(PrefixSuffix {
                        prefix: parse_len(p)?,
                        suffix: parse_len(s)?,
                    })
                } else {
                    Some(Suffix(parse_len(name.strip_prefix("suf")?)?))
                }
            }
        }
    }
}

/// Ordered template list; a template's id is its position.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureConfig {
    templates: Vec<TemplateKind>,
}

impl FeatureConfig {
    pub fn new(templates: Vec<TemplateKind>) -> Result<Self> {
        if templates.is_empty() {
            return Err(Error::config("feature config has no templates"));
        }
        for (i, t) in templates.iter().enumerate() {
            if templates[..i].contains(t) {
                return Err(Error::config(format!("template {} listed twice", t.name())));
            }
        }
        if templates.len() > u16::MAX as usize {
            return Err(Error::config("too many templates"));
        }
        Ok(FeatureConfig { templates })
    }

    /// Profile templates with suffix and prefix lengths 2 and 3.
    pub fn for_profile(profile: Profile) -> Self {
        FeatureConfig::with_lengths(profile, &[2, 3], &[2, 3]).expect("default lengths are valid")
    }

    pub fn with_lengths(profile: Profile, suffix_lengths: &[u8], prefix_lengths: &[u8]) -> Result<Self> {
        use TemplateKind::*;
        if suffix_lengths.is_empty() || suffix_lengths.contains(&0) || prefix_lengths.contains(&0) {
            return Err(Error::config(
                "affix lengths must be positive and at least one suffix length is needed",
            ));
        }
        let (pos, pre_suf, pos_suf, word_win, pos_win, suf_win, ne_win, pos_bi, suf_bi, word_bi) = match profile {
            Profile::Chunk => (true, true, true, false, true, true, false, false, false, false),
            Profile::Nlpba => (false, false, false, true, false, true, false, false, true, true),
            Profile::OntoNotes => (true, true, true, false, false, false, false, true, false, true),
            Profile::Est => (false, false, false, true, false, true, true, false, false, true),
        };

        let mut t = vec![Word, Lemma];
        if pos {
            t.push(Pos);
        }
        t.extend(suffix_lengths.iter().map(|&n| Suffix(n)));
        t.extend(suffix_lengths.iter().map(|&n| WordSuffix(n)));
        if pre_suf {
            for &p in prefix_lengths {
                t.extend(suffix_lengths.iter().map(|&s| PrefixSuffix { prefix: p, suffix: s }));
            }
        }
        if pos_suf {
            t.extend(suffix_lengths.iter().map(|&n| PosSuffix(n)));
        }
        t.extend(WINDOW.map(WindowLemma));
        if word_win {
            t.extend(WINDOW.map(WindowWord));
        }
        if pos_win {
            t.extend(WINDOW.map(WindowPos));
        }
        if suf_win {
            for &len in suffix_lengths {
                t.extend(WINDOW.map(|offset| WindowSuffix { offset, len }));
            }
        }
        if ne_win {
            t.extend(WINDOW.map(WindowNeTag));
        }
        let bigram_offsets = -2..=1i8;
        if pos_bi {
            t.extend(bigram_offsets.clone().map(PosBigram));
        }
        if suf_bi {
            for &len in suffix_lengths {
                t.extend(bigram_offsets.clone().map(|offset| SuffixBigram { offset, len }));
            }
        }
        if word_bi {
            t.extend(bigram_offsets.map(WordBigram));
        }
        FeatureConfig::new(t)
    }

    pub fn templates(&self) -> &[TemplateKind] {
        &self.templates
    }

    pub fn template_names(&self) -> Vec<String> {
        self.templates.iter().map(|t| t.name()).collect()
    }

    pub fn from_template_names<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        let templates = names
            .iter()
            .map(|n| {
                TemplateKind::from_name(n.as_ref())
                    .ok_or_else(|| Error::config(format!("unknown feature template {:?}", n.as_ref())))
            })
            .collect::<Result<Vec<_>>>()?;
        FeatureConfig::new(templates)
    }

    pub fn uses(&self, field: Field) -> bool {
        self.templates.iter().any(|t| t.required_field() == Some(field))
    }

    /// Rejects corpora missing a token field that an enabled template needs.
    /// Entity-tag templates are optional: they stay silent without tags.
    pub fn check(&self, corpus: &Corpus) -> Result<()> {
        if self.uses(Field::Pos) {
            for s in &corpus.sentences {
                if s.tokens.iter().any(|t| t.pos.is_none()) {
                    return Err(Error::config(format!(
                        "feature templates need part-of-speech tags, which sentence {} lacks",
                        s.id
                    )));
                }
            }
        }
        Ok(())
    }

    /// Calls `emit(template_id, value)` for every feature at `position`.
    pub fn visit(&self, sentence: &Sentence, position: usize, mut emit: impl FnMut(usize, &str)) {
        assert!(position < sentence.len(), "position {position} out of range");
        let cells = Cells {
            tokens: &sentence.tokens,
            position,
        };
        let current = &sentence.tokens[position];
        let mut buf = String::new();
        for (id, &template) in self.templates.iter().enumerate() {
            use TemplateKind::*;
            buf.clear();
            match template {
                Word => buf.push_str(&current.surface),
                Lemma => buf.push_str(&lemma(current)),
                Pos => buf.push_str(pos(current)),
                Suffix(n) => buf.push_str(suffix(&current.surface, n)),
                WordSuffix(n) => {
                    buf.push_str(&current.surface);
                    buf.push('|');
                    buf.push_str(suffix(&current.surface, n));
                }
                PrefixSuffix { prefix: p, suffix: s } => {
                    buf.push_str(prefix(&current.surface, p));
                    buf.push('|');
                    buf.push_str(suffix(&current.surface, s));
                }
                PosSuffix(n) => {
                    buf.push_str(pos(current));
                    buf.push('|');
                    buf.push_str(suffix(&current.surface, n));
                }
                WindowLemma(o) => cells.push(&mut buf, o, |t| lemma(t).into_owned()),
                WindowWord(o) => cells.push(&mut buf, o, |t| t.surface.clone()),
                WindowPos(o) => cells.push(&mut buf, o, |t| pos(t).to_owned()),
                WindowSuffix { offset, len } => cells.push(&mut buf, offset, |t| suffix(&t.surface, len).to_owned()),
                WindowNeTag(o) => match cells.token(o).and_then(|t| t.ne_tag.as_deref()) {
                    Some(tag) => buf.push_str(tag),
                    None => continue,
                },
                PosBigram(o) => cells.push_pair(&mut buf, o, |t| pos(t).to_owned()),
                SuffixBigram { offset, len } => {
                    cells.push_pair(&mut buf, offset, |t| suffix(&t.surface, len).to_owned())
                }
                WordBigram(o) => cells.push_pair(&mut buf, o, |t| t.surface.clone()),
            }
            emit(id, &buf);
        }
    }

    /// Feature ids at `position`, interning new values unless frozen.
    pub fn extract(&self, sentence: &Sentence, position: usize, interner: &mut Interner) -> Vec<FeatureId> {
        let mut out = Vec::with_capacity(self.templates.len());
        self.visit(sentence, position, |t, v| out.extend(interner.intern(t, v)));
        out
    }

    /// Feature ids at `position` using only already-interned values.
    pub fn extract_frozen(&self, sentence: &Sentence, position: usize, interner: &Interner) -> Vec<FeatureId> {
        let mut out = Vec::with_capacity(self.templates.len());
        self.visit(sentence, position, |t, v| out.extend(interner.get(t, v)));
        out
    }

    pub fn encode(&self, sentence: &Sentence, interner: &mut Interner) -> Vec<Vec<FeatureId>> {
        (0..sentence.len())
            .map(|p| self.extract(sentence, p, interner))
            .collect()
    }

    pub fn encode_frozen(&self, sentence: &Sentence, interner: &Interner) -> Vec<Vec<FeatureId>> {
        (0..sentence.len())
            .map(|p| self.extract_frozen(sentence, p, interner))
            .collect()
    }

    pub fn new_interner(&self) -> Interner {
        Interner::new(self.templates.len())
    }

    /// `template=value`, the form used in model files.
    pub fn feature_name(&self, interner: &Interner, id: FeatureId) -> String {
        let (t, v) = interner.entry(id);
        format!("{}={}", self.templates[t].name(), v)
    }

    /// One line per feature: `template-name TAB value TAB id`.
    pub fn dump(&self, interner: &Interner) -> String {
        let mut out = String::new();
        for (i, (t, v)) in interner.entries.iter().enumerate() {
            out.push_str(&self.templates[*t as usize].name());
            out.push('\t');
            out.push_str(v);
            out.push('\t');
            out.push_str(&i.to_string());
            out.push('\n');
        }
        out
    }
}

struct Cells<'a> {
    tokens: &'a [Token],
    position: usize,
}

impl Cells<'_> {
    fn token(&self, offset: i8) -> Option<&Token> {
        let q = self.position as isize + offset as isize;
        if q < 0 {
            None
        } else {
            self.tokens.get(q as usize)
        }
    }

    fn value(&self, offset: i8, f: &impl Fn(&Token) -> String) -> String {
        let q = self.position as isize + offset as isize;
        let n = self.tokens.len() as isize;
        if q < 0 {
            format!("<S{q}>")
        } else if q >= n {
            format!("</S+{}>", q - n + 1)
        } else {
            f(&self.tokens[q as usize])
        }
    }

    fn push(&self, buf: &mut String, offset: i8, f: impl Fn(&Token) -> String) {
        buf.push_str(&self.value(offset, &f));
    }

    fn push_pair(&self, buf: &mut String, offset: i8, f: impl Fn(&Token) -> String) {
        buf.push_str(&self.value(offset, &f));
        buf.push('|');
        buf.push_str(&self.value(offset + 1, &f));
    }
}

fn lemma(t: &Token) -> std::borrow::Cow<'_, str> {
    match &t.lemma {
        Some(l) => std::borrow::Cow::Owned(l.to_lowercase()),
        None => std::borrow::Cow::Owned(t.surface.to_lowercase()),
    }
}

fn pos(t: &Token) -> &str {
    t.pos.as_deref().unwrap_or("_")
}

fn suffix(word: &str, n: u8) -> &str {
    match word.char_indices().rev().nth(n as usize - 1) {
        Some((i, _)) => &word[i..],
        None => word,
    }
}

fn prefix(word: &str, n: u8) -> &str {
    match word.char_indices().nth(n as usize) {
        Some((i, _)) => &word[..i],
        None => word,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InternStats {
    /// Number of templates.
    pub templates: usize,
    /// Number of distinct interned (template, value) pairs.
    pub values: usize,
}

/// Maps (template, value) pairs to dense [`FeatureId`]s.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Interner {
    maps: Vec<HashMap<String, FeatureId>>,
    entries: Vec<(u16, String)>,
    frozen: bool,
}

impl Interner {
    pub fn new(templates: usize) -> Self {
        Interner {
            maps: vec![HashMap::new(); templates],
            entries: Vec::new(),
            frozen: false,
        }
    }

    pub fn get(&self, template: usize, value: &str) -> Option<FeatureId> {
        self.maps[template].get(value).copied()
    }

    /// Returns the id, allocating one unless the interner is frozen.
    pub fn intern(&mut self, template: usize, value: &str) -> Option<FeatureId> {
        if let Some(id) = self.get(template, value) {
            return Some(id);
        }
        if self.frozen {
            return None;
        }
        let id = FeatureId(u32::try_from(self.entries.len()).expect("feature space exceeds u32"));
        self.maps[template].insert(value.to_owned(), id);
        self.entries.push((template as u16, value.to_owned()));
        Some(id)
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, id: FeatureId) -> (usize, &str) {
        let (t, v) = &self.entries[id.index()];
        (*t as usize, v)
    }

    pub fn stats(&self) -> InternStats {
        InternStats {
            templates: self.maps.len(),
            values: self.entries.len(),
        }
    }

    /// Interns every feature of every sentence in the corpus.
    pub fn absorb(&mut self, config: &FeatureConfig, sentences: &[Sentence]) {
        for s in sentences {
            for p in 0..s.len() {
                config.visit(s, p, |t, v| {
                    self.intern(t, v);
                });
            }
        }
    }
}
