//! Trial lists, score files and the SVEB embedding store.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::ecapa::SpeakerEmbedding;
use crate::error::{Error, Result};
use crate::params::ByteReader;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trial {
    /// `Some(true)` for target trials; `None` in unlabeled lists.
    pub label: Option<bool>,
    pub enroll: String,
    pub test: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TrialList {
    pub trials: Vec<Trial>,
}

impl TrialList {
    pub fn new(trials: Vec<Trial>) -> Self {
        Self { trials }
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    /// Labels of every trial; errors if any is missing.
    pub fn labels(&self) -> Result<Vec<bool>> {
        self.trials
            .iter()
            .enumerate()
            .map(|(i, t)| t.label.ok_or_else(|| Error::invalid(format!("trial {} has no label", i + 1))))
            .collect()
    }

    /// `label enroll test` lines (label 1 = target), or `enroll test` when unlabeled.
    pub fn parse(text: &str, context: &str) -> Result<Self> {
        let mut trials = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let f: Vec<&str> = line.split_whitespace().collect();
            let trial = match f.as_slice() {
                [] => continue,
                [e, t] => Trial {
                    label: None,
                    enroll: e.to_string(),
                    test: t.to_string(),
                },
                [l, e, t] => {
                    let label = match *l {
                        "1" => true,
                        "0" => false,
                        other => {
                            return Err(Error::format(context, format!("line {}: label `{other}` is not 0 or 1", i + 1)))
                        }
                    };
                    Trial {
                        label: Some(label),
                        enroll: e.to_string(),
                        test: t.to_string(),
                    }
                }
                _ => return Err(Error::format(context, format!("line {}: expected 2 or 3 fields", i + 1))),
            };
            if let Some(first) = trials.first() {
                let first: &Trial = first;
                if first.label.is_some() != trial.label.is_some() {
                    return Err(Error::format(context, format!("line {}: mixes labeled and unlabeled rows", i + 1)));
                }
            }
            trials.push(trial);
        }
        Ok(Self { trials })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for t in &self.trials {
            match t.label {
                Some(l) => {
                    let _ = writeln!(out, "{} {} {}", u8::from(l), t.enroll, t.test);
                }
                None => {
                    let _ = writeln!(out, "{} {}", t.enroll, t.test);
                }
            }
        }
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreRow {
    pub enroll: String,
    pub test: String,
    pub score: f64,
}

/// Scores aligned with a trial list.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoreSet {
    pub rows: Vec<ScoreRow>,
}

impl ScoreSet {
    pub fn new(rows: Vec<ScoreRow>) -> Result<Self> {
        if let Some(r) = rows.iter().find(|r| !r.score.is_finite()) {
            return Err(Error::degenerate(format!("score for trial {} {} is not finite", r.enroll, r.test)));
        }
        Ok(Self { rows })
    }

    /// Pairs `trials` with `scores` one-to-one.
    pub fn from_trials(trials: &TrialList, scores: Vec<f64>) -> Result<Self> {
        if trials.len() != scores.len() {
            return Err(Error::invalid(format!("{} scores for {} trials", scores.len(), trials.len())));
        }
        Self::new(
            trials
                .trials
                .iter()
                .zip(scores)
                .map(|(t, score)| ScoreRow {
                    enroll: t.enroll.clone(),
                    test: t.test.clone(),
                    score,
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn scores(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.score).collect()
    }

    pub fn with_scores(&self, scores: Vec<f64>) -> Result<Self> {
        if scores.len() != self.len() {
            return Err(Error::invalid(format!("{} scores for {} trials", scores.len(), self.len())));
        }
        Self::new(
            self.rows
                .iter()
                .zip(scores)
                .map(|(r, score)| ScoreRow { score, ..r.clone() })
                .collect(),
        )
    }

    /// True when both sets list the same `(enroll, test)` pairs in the same order.
    pub fn same_trials(&self, other: &ScoreSet) -> bool {
        self.len() == other.len()
            && self
                .rows
                .iter()
                .zip(&other.rows)
                .all(|(a, b)| a.enroll == b.enroll && a.test == b.test)
    }

    /// Checks that the rows follow `trials`.
    pub fn check_aligned(&self, trials: &TrialList) -> Result<()> {
        if self.len() != trials.len() {
            return Err(Error::invalid(format!("{} scores for {} trials", self.len(), trials.len())));
        }
        for (i, (r, t)) in self.rows.iter().zip(&trials.trials).enumerate() {
            if r.enroll != t.enroll || r.test != t.test {
                return Err(Error::invalid(format!(
                    "score row {} ({} {}) does not match trial ({} {})",
                    i + 1,
                    r.enroll,
                    r.test,
                    t.enroll,
                    t.test
                )));
            }
        }
        Ok(())
    }

    pub fn parse(text: &str, context: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let f: Vec<&str> = line.split_whitespace().collect();
            match f.as_slice() {
                [] => continue,
                [e, t, s] => {
                    let score: f64 = s
                        .parse()
                        .map_err(|_| Error::format(context, format!("line {}: bad score `{s}`", i + 1)))?;
                    rows.push(ScoreRow {
                        enroll: e.to_string(),
                        test: t.to_string(),
                        score,
                    });
                }
                _ => return Err(Error::format(context, format!("line {}: expected `enroll test score`", i + 1))),
            }
        }
        Self::new(rows).map_err(|e| Error::format(context, e.to_string()))
    }

    /// `enroll test score` lines with 6-decimal scores.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            let _ = writeln!(out, "{} {} {:.6}", r.enroll, r.test, r.score);
        }
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

pub const SVEB_MAGIC: &[u8; 4] = b"SVEB";
pub const SVEB_VERSION: u32 = 1;

/// Utterance id → embedding, in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    ids: Vec<String>,
    values: Vec<Vec<f64>>,
    index: BTreeMap<String, usize>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ..Default::default()
        }
    }

    pub fn from_embeddings(embeddings: &[SpeakerEmbedding]) -> Result<Self> {
        let dim = embeddings.first().map_or(0, |e| e.values.len());
        let mut s = Self::new(dim);
        for e in embeddings {
            s.insert(e.utt_id.clone(), e.values.clone())?;
        }
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn insert(&mut self, id: String, values: Vec<f64>) -> Result<()> {
        if values.len() != self.dim {
            return Err(Error::invalid(format!("embedding `{id}` has dim {}, store has {}", values.len(), self.dim)));
        }
        if self.index.contains_key(&id) {
            return Err(Error::invalid(format!("duplicate embedding id `{id}`")));
        }
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.values.push(values);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.index.get(id).map(|&i| self.values[i].as_slice())
    }

    pub fn require(&self, id: &str) -> Result<&[f64]> {
        self.get(id)
            .ok_or_else(|| Error::invalid(format!("no embedding for utterance `{id}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.ids.iter().map(String::as_str).zip(self.values.iter().map(Vec::as_slice))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(SVEB_MAGIC);
        b.extend_from_slice(&SVEB_VERSION.to_le_bytes());
        b.extend_from_slice(&(self.dim as u32).to_le_bytes());
        b.extend_from_slice(&(self.len() as u32).to_le_bytes());
        for (id, v) in self.iter() {
            b.extend_from_slice(&(id.len() as u16).to_le_bytes());
            b.extend_from_slice(id.as_bytes());
            for x in v {
                b.extend_from_slice(&(*x as f32).to_le_bytes());
            }
        }
        b
    }

    pub fn from_bytes(bytes: &[u8], context: &str) -> Result<Self> {
        let mut r = ByteReader::new(bytes, context);
        if r.take(4)? != SVEB_MAGIC {
            return Err(Error::format(context, "bad magic"));
        }
        let version = r.u32()?;
        if version != SVEB_VERSION {
            return Err(Error::format(context, format!("unsupported version {version}")));
        }
        let dim = r.u32()? as usize;
        let count = r.u32()? as usize;
        let mut s = Self::new(dim);
        for _ in 0..count {
            let n = usize::from(r.u16()?);
            let id = std::str::from_utf8(r.take(n)?)
                .map_err(|_| Error::format(context, "id is not UTF-8"))?
                .to_string();
            let mut v = Vec::with_capacity(dim);
            for _ in 0..dim {
                v.push(f64::from(r.f32()?));
            }
            s.insert(id, v).map_err(|e| Error::format(context, e.to_string()))?;
        }
        if !r.is_done() {
            return Err(Error::format(context, "trailing bytes"));
        }
        Ok(s)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }
}
