//! Quality-aware logistic calibration: `s_cal = a·s + Σ b_i q_i + c` in the
//! log-odds domain.

use std::collections::BTreeMap;

use log::warn;
use rand::seq::SliceRandom;
use rand::Rng;

use super::{Trial, TrialList};
use crate::error::{Error, Result};
use crate::tape::sigmoid;
use crate::upstream::Manifest;

pub const FIT_TOLERANCE: f64 = 1e-8;
pub const FIT_MAX_ITERS: usize = 10_000;

#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationModel {
    pub a: f64,
    pub b: Vec<f64>,
    pub c: f64,
}

impl CalibrationModel {
    pub fn identity() -> Self {
        Self { a: 1.0, b: Vec::new(), c: 0.0 }
    }

    /// `[a, b_1 … b_k, c]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![self.a];
        v.extend_from_slice(&self.b);
        v.push(self.c);
        v
    }

    pub fn from_vec(v: &[f64]) -> Self {
        Self {
            a: v[0],
            b: v[1..v.len() - 1].to_vec(),
            c: v[v.len() - 1],
        }
    }

    pub fn calibrate(&self, score: f64, quality: &[f64]) -> f64 {
        self.a * score + self.b.iter().zip(quality).map(|(b, q)| b * q).sum::<f64>() + self.c
    }
}

/// `[ln min(d_e, d_t), ln d_e + ln d_t]` for durations in seconds.
pub fn quality_features(enroll_secs: f64, test_secs: f64) -> Result<Vec<f64>> {
    for d in [enroll_secs, test_secs] {
        if !(d > 0.0 && d.is_finite()) {
            return Err(Error::invalid(format!("duration {d} must be positive")));
        }
    }
    Ok(vec![enroll_secs.min(test_secs).ln(), enroll_secs.ln() + test_secs.ln()])
}

/// Quality rows for `trials` from a duration table.
pub fn trial_quality(trials: &TrialList, durations: &BTreeMap<String, f64>) -> Result<Vec<Vec<f64>>> {
    trials
        .trials
        .iter()
        .map(|t| {
            let d = |id: &str| {
                durations
                    .get(id)
                    .copied()
                    .ok_or_else(|| Error::invalid(format!("no duration known for `{id}`")))
            };
            quality_features(d(&t.enroll)?, d(&t.test)?)
        })
        .collect()
}

fn check_inputs(scores: &[f64], quality: &[Vec<f64>]) -> Result<usize> {
    if !quality.is_empty() && quality.len() != scores.len() {
        return Err(Error::invalid(format!("{} quality rows for {} scores", quality.len(), scores.len())));
    }
    let k = quality.first().map_or(0, Vec::len);
    if quality.iter().any(|q| q.len() != k) {
        return Err(Error::invalid("quality rows have different lengths"));
    }
    Ok(k)
}

fn features<'a>(quality: &'a [Vec<f64>], i: usize) -> &'a [f64] {
    quality.get(i).map_or(&[], Vec::as_slice)
}

/// Mean binary cross-entropy of the logistic model `params = [a, b…, c]`.
pub fn calibration_objective(params: &[f64], scores: &[f64], labels: &[bool], quality: &[Vec<f64>]) -> f64 {
    let m = CalibrationModel::from_vec(params);
    let total: f64 = scores
        .iter()
        .zip(labels)
        .enumerate()
        .map(|(i, (&s, &y))| {
            let z = m.calibrate(s, features(quality, i));
            // softplus(z) − y·z, written to avoid overflow
            let sp = z.max(0.0) + (-z.abs()).exp().ln_1p();
            sp - if y { z } else { 0.0 }
        })
        .sum();
    total / scores.len() as f64
}

/// Gradient of [`calibration_objective`].
pub fn calibration_gradient(params: &[f64], scores: &[f64], labels: &[bool], quality: &[Vec<f64>]) -> Vec<f64> {
    let m = CalibrationModel::from_vec(params);
    let k = params.len() - 2;
    let mut g = vec![0.0; params.len()];
    for (i, (&s, &y)) in scores.iter().zip(labels).enumerate() {
        let q = features(quality, i);
        let r = sigmoid(m.calibrate(s, q)) - if y { 1.0 } else { 0.0 };
        g[0] += r * s;
        for j in 0..k {
            g[1 + j] += r * q[j];
        }
        g[k + 1] += r;
    }
    let n = scores.len() as f64;
    g.iter_mut().for_each(|v| *v /= n);
    g
}

/// Logistic regression of `labels` on `[score, quality…]` by gradient descent
/// with backtracking, until the gradient max-norm drops below 1e-8 or 10k
/// iterations pass.
pub fn fit_calibration(scores: &[f64], labels: &[bool], quality: &[Vec<f64>]) -> Result<CalibrationModel> {
    if scores.len() != labels.len() {
        return Err(Error::invalid(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::degenerate("calibration scores must be finite"));
    }
    let k = check_inputs(scores, quality)?;
    let n_pos = labels.iter().filter(|&&y| y).count();
    if n_pos == 0 || n_pos == labels.len() {
        return Err(Error::degenerate("calibration needs both target and non-target trials"));
    }
    let f = |p: &[f64]| calibration_objective(p, scores, labels, quality);
    let mut p = CalibrationModel {
        a: 1.0,
        b: vec![0.0; k],
        c: 0.0,
    }
    .to_vec();
    let mut fp = f(&p);
    let mut step = 1.0;
    for _ in 0..FIT_MAX_ITERS {
        let g = calibration_gradient(&p, scores, labels, quality);
        let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if gmax < FIT_TOLERANCE {
            break;
        }
        let g2: f64 = g.iter().map(|v| v * v).sum();
        loop {
            let cand: Vec<f64> = p.iter().zip(&g).map(|(x, d)| x - step * d).collect();
            let fc = f(&cand);
            if fc <= fp - 0.5 * step * g2 {
                p = cand;
                fp = fc;
                step *= 2.0;
                break;
            }
            step *= 0.5;
            if step < 1e-30 {
                break;
            }
        }
        if step < 1e-30 {
            break;
        }
    }
    let model = CalibrationModel::from_vec(&p);
    if !(model.a > 0.0) {
        warn!("calibration weight on the raw score is {} (expected > 0)", model.a);
    }
    Ok(model)
}

pub fn apply_calibration(model: &CalibrationModel, scores: &[f64], quality: &[Vec<f64>]) -> Result<Vec<f64>> {
    let k = check_inputs(scores, quality)?;
    let k = if quality.is_empty() { 0 } else { k };
    if k != model.b.len() {
        return Err(Error::invalid(format!(
            "model has {} quality weights but {k} features were given",
            model.b.len()
        )));
    }
    Ok(scores
        .iter()
        .enumerate()
        .map(|(i, &s)| model.calibrate(s, features(quality, i)))
        .collect())
}

/// `n` labeled trials, half target (rounded down) and half non-target, with
/// no self-pairs.
pub fn generate_calibration_trials<R: Rng + ?Sized>(manifest: &Manifest, n: usize, rng: &mut R) -> Result<TrialList> {
    let mut by_spk: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for r in manifest.rows() {
        by_spk.entry(&r.speaker_id).or_default().push(&r.utt_id);
    }
    let speakers: Vec<&Vec<&str>> = by_spk.values().collect();
    if speakers.len() < 2 {
        return Err(Error::invalid("calibration trials need at least two speakers"));
    }
    let multi: Vec<&Vec<&str>> = speakers.iter().copied().filter(|u| u.len() >= 2).collect();
    if multi.is_empty() {
        return Err(Error::invalid("no speaker has two utterances, so no target trial can be formed"));
    }
    let n_target = n / 2;
    let mut trials = Vec::with_capacity(n);
    for _ in 0..n_target {
        let utts = multi[rng.random_range(0..multi.len())];
        let i = rng.random_range(0..utts.len());
        let mut j = rng.random_range(0..utts.len() - 1);
        if j >= i {
            j += 1;
        }
        trials.push(Trial {
            label: Some(true),
            enroll: utts[i].to_string(),
            test: utts[j].to_string(),
        });
    }
    for _ in n_target..n {
        let a = rng.random_range(0..speakers.len());
        let mut b = rng.random_range(0..speakers.len() - 1);
        if b >= a {
            b += 1;
        }
        let (ua, ub) = (speakers[a], speakers[b]);
        trials.push(Trial {
            label: Some(false),
            enroll: ua[rng.random_range(0..ua.len())].to_string(),
            test: ub[rng.random_range(0..ub.len())].to_string(),
        });
    }
    trials.shuffle(rng);
    Ok(TrialList::new(trials))
}
