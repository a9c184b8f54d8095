//! Adaptive symmetric score normalisation against a speaker-mean cohort.

use std::collections::BTreeMap;

use rayon::prelude::*;

use super::{cosine_score, EmbeddingStore, ScoreSet};
use crate::error::{Error, Result};
use crate::tensor::l2_norm;
use crate::upstream::Manifest;

pub const DEFAULT_TOP_K: usize = 600;

/// Unit-norm speaker-mean embeddings and the adaptive selection size.
#[derive(Clone, Debug, PartialEq)]
pub struct Cohort {
    speakers: Vec<String>,
    members: Vec<Vec<f64>>,
    top_k: usize,
}

impl Cohort {
    pub fn new(speakers: Vec<String>, members: Vec<Vec<f64>>, top_k: usize) -> Result<Self> {
        if members.len() < 2 {
            return Err(Error::invalid("cohort needs at least two members"));
        }
        if speakers.len() != members.len() {
            return Err(Error::invalid("cohort speaker and member counts differ"));
        }
        if top_k == 0 || top_k > members.len() {
            return Err(Error::invalid(format!("top_k {top_k} must be in 1..={}", members.len())));
        }
        Ok(Self { speakers, members, top_k })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn top_k(&self) -> usize {
        self.top_k
    }

    pub fn speakers(&self) -> &[String] {
        &self.speakers
    }

    pub fn members(&self) -> &[Vec<f64>] {
        &self.members
    }

    /// Cosine scores of `e` against every member.
    pub fn scores(&self, e: &[f64]) -> Result<Vec<f64>> {
        self.members.iter().map(|m| cosine_score(e, m)).collect()
    }

    /// Mean and population standard deviation of the `top_k` highest member scores.
    pub fn stats(&self, e: &[f64]) -> Result<(f64, f64)> {
        top_k_stats(&self.scores(e)?, self.top_k)
    }
}

pub fn top_k_stats(scores: &[f64], top_k: usize) -> Result<(f64, f64)> {
    if top_k == 0 || top_k > scores.len() {
        return Err(Error::invalid(format!("top_k {top_k} must be in 1..={}", scores.len())));
    }
    let mut s = scores.to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    let top = &s[..top_k];
    let k = top_k as f64;
    let mu = top.iter().sum::<f64>() / k;
    let var = top.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / k;
    Ok((mu, var.sqrt()))
}

/// Averages each speaker's embeddings in `store` (utterances absent from the
/// store are skipped), then unit-normalises. `top_k` is capped at the cohort size.
pub fn build_cohort(store: &EmbeddingStore, manifest: &Manifest, top_k: usize) -> Result<Cohort> {
    if store.is_empty() {
        return Err(Error::invalid("embedding store is empty"));
    }
    let mut sums: BTreeMap<&str, (Vec<f64>, usize)> = BTreeMap::new();
    for r in manifest.rows() {
        let entry = sums
            .entry(r.speaker_id.as_str())
            .or_insert_with(|| (vec![0.0; store.dim()], 0));
        if let Some(v) = store.get(&r.utt_id) {
            for (a, b) in entry.0.iter_mut().zip(v) {
                *a += b;
            }
            entry.1 += 1;
        }
    }
    let mut speakers = Vec::new();
    let mut members = Vec::new();
    for (spk, (sum, n)) in sums {
        if n == 0 {
            return Err(Error::invalid(format!("speaker `{spk}` has no embeddings in the store")));
        }
        let norm = l2_norm(&sum);
        if norm == 0.0 {
            return Err(Error::degenerate(format!("mean embedding of speaker `{spk}` is zero")));
        }
        speakers.push(spk.to_string());
        members.push(sum.iter().map(|v| v / norm).collect());
    }
    let k = top_k.min(members.len());
    Cohort::new(speakers, members, k)
}

/// `½[(s − μ_e)/σ_e + (s − μ_t)/σ_t]`.
pub fn snorm_value(s: f64, enroll: (f64, f64), test: (f64, f64)) -> f64 {
    0.5 * ((s - enroll.0) / enroll.1 + (s - test.0) / test.1)
}

/// Normalises every trial score using top-k cohort statistics of both sides.
pub fn adaptive_snorm(raw: &ScoreSet, store: &EmbeddingStore, cohort: &Cohort) -> Result<ScoreSet> {
    let mut ids: Vec<&str> = raw
        .rows
        .iter()
        .flat_map(|r| [r.enroll.as_str(), r.test.as_str()])
        .collect();
    ids.sort_unstable();
    ids.dedup();
    let stats: BTreeMap<&str, (f64, f64)> = ids
        .par_iter()
        .map(|id| Ok((*id, cohort.stats(store.require(id)?)?)))
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(raw.len());
    for (i, r) in raw.rows.iter().enumerate() {
        let (se, st) = (stats[r.enroll.as_str()], stats[r.test.as_str()]);
        for (side, id, (_, sigma)) in [("enroll", &r.enroll, se), ("test", &r.test, st)] {
            if sigma == 0.0 {
                return Err(Error::degenerate(format!(
                    "trial {} ({} {}): zero cohort spread on the {side} side (`{id}`)",
                    i + 1,
                    r.enroll,
                    r.test
                )));
            }
        }
        out.push(snorm_value(r.score, se, st));
    }
    raw.with_scores(out)
}
