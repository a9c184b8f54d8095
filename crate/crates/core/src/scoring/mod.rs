//! Trial scoring: cosine similarity, adaptive s-norm, calibration, fusion and EER.

pub mod calibration;
mod io;
mod snorm;

pub use calibration::{
    apply_calibration, fit_calibration, generate_calibration_trials, quality_features, trial_quality,
    CalibrationModel,
};
pub use io::{EmbeddingStore, ScoreRow, ScoreSet, Trial, TrialList, SVEB_MAGIC, SVEB_VERSION};
pub use snorm::{adaptive_snorm, build_cohort, snorm_value, top_k_stats, Cohort, DEFAULT_TOP_K};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{dot, l2_norm};

/// `e1·e2 / (‖e1‖‖e2‖)`, clamped to `[-1, 1]` against rounding.
pub fn cosine_score(e1: &[f64], e2: &[f64]) -> Result<f64> {
    if e1.len() != e2.len() {
        return Err(Error::invalid(format!("embedding dims differ ({} vs {})", e1.len(), e2.len())));
    }
    let (n1, n2) = (l2_norm(e1), l2_norm(e2));
    if n1 == 0.0 || n2 == 0.0 {
        return Err(Error::degenerate("cosine score of a zero-norm embedding"));
    }
    Ok((dot(e1, e2) / (n1 * n2)).clamp(-1.0, 1.0))
}

/// Cosine score for every trial, in trial order.
pub fn score_trials(trials: &TrialList, store: &EmbeddingStore) -> Result<ScoreSet> {
    let scores: Vec<f64> = trials
        .trials
        .par_iter()
        .map(|t| cosine_score(store.require(&t.enroll)?, store.require(&t.test)?))
        .collect::<Result<_>>()?;
    ScoreSet::from_trials(trials, scores)
}

/// Equal error rate and the threshold where it occurs.
///
/// Thresholds run over −∞, the midpoints between consecutive distinct scores,
/// and +∞. At threshold `t`, miss = fraction of targets below `t` and
/// false alarm = fraction of non-targets at or above `t`. The EER is read off
/// by linear interpolation between the two operating points that bracket the
/// crossing.
pub fn eer(scores: &[f64], labels: &[bool]) -> Result<(f64, f64)> {
    if scores.len() != labels.len() {
        return Err(Error::invalid(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::degenerate("EER needs finite scores"));
    }
    let n_t = labels.iter().filter(|&&l| l).count();
    let n_n = labels.len() - n_t;
    if n_t == 0 || n_n == 0 {
        return Err(Error::degenerate("EER needs at least one target and one non-target trial"));
    }
    let mut pairs: Vec<(f64, bool)> = scores.iter().cloned().zip(labels.iter().cloned()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

    // operating point below every score
    let (mut t_prev, mut miss_prev, mut fa_prev) = (f64::NEG_INFINITY, 0.0, 1.0);
    let mut targets_below = 0usize;
    let mut nontargets_below = 0usize;
    let mut i = 0;
    while i < pairs.len() {
        let s = pairs[i].0;
        while i < pairs.len() && pairs[i].0 == s {
            if pairs[i].1 {
                targets_below += 1;
            } else {
                nontargets_below += 1;
            }
            i += 1;
        }
        let t = if i < pairs.len() { 0.5 * (s + pairs[i].0) } else { f64::INFINITY };
        let miss = targets_below as f64 / n_t as f64;
        let fa = (n_n - nontargets_below) as f64 / n_n as f64;
        if miss >= fa {
            let d_prev = fa_prev - miss_prev;
            let d_cur = fa - miss;
            let alpha = d_prev / (d_prev - d_cur);
            let rate = miss_prev + alpha * (miss - miss_prev);
            let threshold = match (t_prev.is_finite(), t.is_finite()) {
                (true, true) => t_prev + alpha * (t - t_prev),
                (true, false) => t_prev,
                (false, true) => t,
                (false, false) => 0.0,
            };
            return Ok((rate, threshold));
        }
        (t_prev, miss_prev, fa_prev) = (t, miss, fa);
    }
    unreachable!("miss reaches 1 and false alarms reach 0 at +inf")
}

/// Per-trial weighted mean with weights renormalised to sum to 1.
pub fn ensemble(sets: &[ScoreSet], weights: &[f64]) -> Result<ScoreSet> {
    let Some(first) = sets.first() else {
        return Err(Error::invalid("ensemble needs at least one score set"));
    };
    if weights.len() != sets.len() {
        return Err(Error::invalid(format!("{} weights for {} score sets", weights.len(), sets.len())));
    }
    if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
        return Err(Error::invalid("ensemble weights must be finite and >= 0"));
    }
    let total: f64 = weights.iter().sum();
    if total == 0.0 {
        return Err(Error::invalid("ensemble weights are all zero"));
    }
    for (k, s) in sets.iter().enumerate().skip(1) {
        if !s.same_trials(first) {
            return Err(Error::invalid(format!("score set {} has a different trial list", k + 1)));
        }
    }
    let w: Vec<f64> = weights.iter().map(|w| w / total).collect();
    let fused = (0..first.len())
        .map(|i| {
            let mut acc = 0.0;
            for (s, wk) in sets.iter().zip(&w) {
                if *wk != 0.0 {
                    acc += wk * s.rows[i].score;
                }
            }
            acc
        })
        .collect();
    first.with_scores(fused)
}

/// Fusion weights proportional to `1 / EER` (EER floored at 1e-6), summing to 1.
pub fn weights_from_eer(eers: &[f64]) -> Result<Vec<f64>> {
    if eers.is_empty() || eers.iter().any(|e| !(*e >= 0.0 && e.is_finite())) {
        return Err(Error::invalid("EERs must be finite and >= 0"));
    }
    let inv: Vec<f64> = eers.iter().map(|e| 1.0 / e.max(1e-6)).collect();
    let s: f64 = inv.iter().sum();
    Ok(inv.into_iter().map(|v| v / s).collect())
}
