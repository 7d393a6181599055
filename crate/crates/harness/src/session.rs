//! The human-in-the-loop side of active learning. An [`AnnotationSession`]
//! wraps an [`ActiveLearner`], appends every accepted submission to an audit
//! log before applying it, and rewrites its state file after every mutation
//! so a restarted service resumes where it stopped.

use std::collections::{BTreeMap, HashMap};
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use spatiotag_core::active::{ALConfig, ActiveLearner, Decoder, LearnerState, Pool};
use spatiotag_core::corpus::{Corpus, Label};
use spatiotag_core::features::FeatureConfig;

pub const SESSION_FORMAT_VERSION: u32 = 1;
const SESSION_KIND: &str = "spatiotag-session";
const STATE_FILE: &str = "state.json";
const AUDIT_FILE: &str = "audit.jsonl";

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    /// The request does not fit the session state.
    #[error("{0}")]
    Conflict(String),
    /// The request itself is invalid.
    #[error("{0}")]
    Malformed(String),
    #[error(transparent)]
    Internal(#[from] anyhow::Error),
}

impl From<spatiotag_core::Error> for SessionError {
    fn from(e: spatiotag_core::Error) -> Self {
        match e {
            spatiotag_core::Error::Conflict(m) => SessionError::Conflict(m),
            spatiotag_core::Error::Contract(m) => SessionError::Malformed(m),
            other => SessionError::Internal(other.into()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Status {
    pub round: usize,
    pub labeled: usize,
    pub unlabeled: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub last_f1: Option<f64>,
    pub done: bool,
    /// True while an ensemble is being trained.
    pub training: bool,
    /// Tags accepted on the wire, in label-set order.
    pub labels: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryToken {
    pub surface: String,
    /// The ensemble's tag; absent before the first ensemble exists.
    pub suggestion: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub marginals: Option<BTreeMap<String, f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub sentence_id: String,
    pub tokens: Vec<QueryToken>,
    /// Selection utility; absent for the initial seed sentences.
    pub utility: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Submission {
    Accepted,
    /// The same labels were already recorded for this sentence.
    Duplicate,
}

#[derive(Serialize, Deserialize)]
struct SavedSession {
    kind: String,
    version: u32,
    state: LearnerState,
}

#[derive(Serialize)]
struct AuditEntry<'a> {
    unix_time: u64,
    round: usize,
    sentence_id: &'a str,
    labels: &'a [String],
}

pub struct AnnotationSession {
    learner: ActiveLearner,
    ids: HashMap<String, usize>,
    dir: PathBuf,
    marginals: bool,
}

impl AnnotationSession {
    /// Resumes from `dir` when it holds a saved state and starts fresh
    /// otherwise. A round whose batch was complete when the previous process
    /// stopped is closed now.
    pub fn open(
        pool: &Corpus,
        test: Corpus,
        features: FeatureConfig,
        config: ALConfig,
        dir: &Path,
        marginals: bool,
    ) -> anyhow::Result<Self> {
        let mut ids = HashMap::new();
        for (i, s) in pool.sentences.iter().enumerate() {
            if ids.insert(s.id.clone(), i).is_some() {
                bail!("sentence id {} occurs twice in the pool", s.id);
            }
        }
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let state_path = dir.join(STATE_FILE);
        let learner = if state_path.exists() {
            let state = read_state(&state_path)?;
            ActiveLearner::restore(Pool::new(pool), test, features, config, state)
                .with_context(|| format!("restoring {}", state_path.display()))?
        } else {
            ActiveLearner::new(Pool::new(pool), test, features, config)?
        };
        let mut session = AnnotationSession {
            learner,
            ids,
            dir: dir.to_owned(),
            marginals,
        };
        session.persist()?;
        session.advance()?;
        Ok(session)
    }

    pub fn learner(&self) -> &ActiveLearner {
        &self.learner
    }

    pub fn state_path(&self) -> PathBuf {
        self.dir.join(STATE_FILE)
    }

    pub fn audit_path(&self) -> PathBuf {
        self.dir.join(AUDIT_FILE)
    }

    pub fn status(&self) -> Status {
        let l = &self.learner;
        Status {
            round: l.round(),
            labeled: l.labeled_count(),
            unlabeled: l.unlabeled_count(),
            last_f1: l.curve().rows.last().map(|r| r.micro_f1),
            done: l.is_done(),
            training: false,
            labels: l.labels().names().to_vec(),
        }
    }

    /// The outstanding query with the current ensemble's suggestions.
    pub fn next(&self) -> Option<Query> {
        let q = self.learner.outstanding()?;
        let sentence = &self.learner.pool().sentences[q.index];
        let labels = self.learner.labels();
        let (suggestions, marginals) = match self.learner.ensemble() {
            Some(e) => {
                let config = self.learner.config();
                let suggested = match config.decoder {
                    Decoder::Bp => e.decode_bps(sentence),
                    Decoder::Viterbi => e.decode_bvs(sentence, config.nbest),
                };
                let marginals = self.marginals.then(|| {
                    e.bps_scores(sentence)
                        .into_iter()
                        .map(|row| {
                            labels
                                .names()
                                .iter()
                                .zip(row)
                                .map(|(n, p)| (n.clone(), p / e.k() as f64))
                                .collect::<BTreeMap<_, _>>()
                        })
                        .collect::<Vec<_>>()
                });
                (Some(suggested), marginals)
            }
            None => (None, None),
        };
        let tokens = sentence
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| QueryToken {
                surface: t.surface.clone(),
                suggestion: suggestions.as_ref().map(|s| labels.name(s[i]).to_owned()),
                marginals: marginals.as_ref().map(|m| m[i].clone()),
            })
            .collect();
        Some(Query {
            sentence_id: sentence.id.clone(),
            tokens,
            utility: q.utility,
        })
    }

    /// Validates and records labels for the outstanding query. The round is
    /// not closed here; call [`AnnotationSession::advance`] afterwards.
    pub fn submit(&mut self, sentence_id: &str, names: &[String]) -> Result<Submission, SessionError> {
        let index = *self
            .ids
            .get(sentence_id)
            .ok_or_else(|| SessionError::Conflict(format!("sentence {sentence_id} is not in the pool")))?;
        let labels: Vec<Label> = self
            .learner
            .labels()
            .parse_sequence(names)
            .map_err(|e| SessionError::Malformed(e.to_string()))?;
        let len = self.learner.pool().sentences[index].len();
        if labels.len() != len {
            return Err(SessionError::Malformed(format!(
                "sentence {sentence_id} has {len} tokens but {} labels were given",
                labels.len()
            )));
        }
        if let Some(done) = self.learner.state().labeled.iter().find(|e| e.index == index) {
            if done.labels == labels {
                return Ok(Submission::Duplicate);
            }
            return Err(SessionError::Conflict(format!(
                "sentence {sentence_id} is already labeled differently"
            )));
        }
        match self.learner.outstanding() {
            Some(q) if q.index == index => {}
            Some(_) => {
                return Err(SessionError::Conflict(format!(
                    "sentence {sentence_id} is not the outstanding query"
                )))
            }
            None => return Err(SessionError::Conflict("no query is outstanding".into())),
        }
        self.audit(sentence_id, names)?;
        self.learner.submit(index, labels)?;
        self.persist()?;
        Ok(Submission::Accepted)
    }

    /// Closes the round if its batch is complete. Returns whether it trained.
    pub fn advance(&mut self) -> anyhow::Result<bool> {
        if !self.learner.needs_training() {
            return Ok(false);
        }
        self.learner.finish_round()?;
        self.persist()?;
        Ok(true)
    }

    /// Closes the round with whatever part of the batch is labeled.
    pub fn retrain(&mut self) -> anyhow::Result<usize> {
        if self.learner.finish_partial_round()?.is_some() {
            self.persist()?;
        }
        Ok(self.learner.round())
    }

    fn audit(&self, sentence_id: &str, labels: &[String]) -> anyhow::Result<()> {
        let entry = AuditEntry {
            unix_time: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
            round: self.learner.round(),
            sentence_id,
            labels,
        };
        let path = self.audit_path();
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .with_context(|| format!("opening {}", path.display()))?;
        writeln!(f, "{}", serde_json::to_string(&entry)?)?;
        f.sync_data()?;
        Ok(())
    }

    fn persist(&self) -> anyhow::Result<()> {
        let saved = SavedSession {
            kind: SESSION_KIND.into(),
            version: SESSION_FORMAT_VERSION,
            state: self.learner.state().clone(),
        };
        let path = self.state_path();
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, serde_json::to_vec(&saved)?).with_context(|| format!("writing {}", tmp.display()))?;
        std::fs::rename(&tmp, &path).with_context(|| format!("replacing {}", path.display()))?;
        Ok(())
    }
}

fn read_state(path: &Path) -> anyhow::Result<LearnerState> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if value.get("kind").and_then(|k| k.as_str()) != Some(SESSION_KIND) {
        bail!("{} is not a session state file", path.display());
    }
    let version = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0);
    if version > SESSION_FORMAT_VERSION as u64 {
        return Err(spatiotag_core::Error::Version {
            kind: "session state",
            found: version as u32,
            supported: SESSION_FORMAT_VERSION,
        })
        .with_context(|| format!("reading {}", path.display()));
    }
    let saved: SavedSession = serde_json::from_value(value).with_context(|| format!("parsing {}", path.display()))?;
    Ok(saved.state)
}
