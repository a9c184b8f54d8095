//! Deterministic synthetic speakers: a pulse-train plus aspiration source
//! shaped by a per-speaker bank of formant resonators.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scoring::{Trial, TrialList};
use crate::seed;
use crate::signal::{write_wav, Waveform, SAMPLE_RATE};
use crate::upstream::{Manifest, ManifestRow};

pub const PEAK: f64 = 0.5;
pub const FORMANT_RANGE_HZ: (f64, f64) = (300.0, 3500.0);
pub const BANDWIDTH_RANGE_HZ: (f64, f64) = (50.0, 200.0);
pub const PITCH_RANGE_HZ: (f64, f64) = (80.0, 300.0);

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub n_speakers: usize,
    pub utts_per_speaker: usize,
    pub utt_seconds: f64,
    pub seed: u64,
    pub n_formants: usize,
    /// Relative spread of per-utterance formant and pitch variation.
    pub formant_jitter: f64,
    /// Utterances per speaker reserved for the trial list.
    pub heldout_per_speaker: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_speakers: 20,
            utts_per_speaker: 10,
            utt_seconds: 3.0,
            seed: 0,
            n_formants: 4,
            formant_jitter: 0.02,
            heldout_per_speaker: 3,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_speakers < 2 {
            return Err(Error::config("synth.n_speakers", "must be >= 2"));
        }
        if self.utts_per_speaker < 2 {
            return Err(Error::config("synth.utts_per_speaker", "must be >= 2"));
        }
        if !(self.utt_seconds >= 1.0 && self.utt_seconds.is_finite()) {
            return Err(Error::config("synth.utt_seconds", "must be >= 1"));
        }
        if self.n_formants < 1 {
            return Err(Error::config("synth.n_formants", "must be >= 1"));
        }
        if !(0.0..0.5).contains(&self.formant_jitter) {
            return Err(Error::config("synth.formant_jitter", "must be in [0, 0.5)"));
        }
        if self.heldout_per_speaker < 2 || self.heldout_per_speaker >= self.utts_per_speaker {
            return Err(Error::config(
                "synth.heldout_per_speaker",
                "must be >= 2 and leave at least one training utterance",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpeakerProfile {
    pub index: usize,
    pub speaker_id: String,
    /// `(center_hz, bandwidth_hz)`, sorted by center.
    pub formants: Vec<(f64, f64)>,
    pub pitch_hz: f64,
}

pub fn speaker_id(index: usize) -> String {
    format!("spk{index:03}")
}

pub fn utt_id(speaker: usize, utt: usize) -> String {
    format!("spk{speaker:03}_u{utt:02}")
}

pub fn synth_speaker(spec: &SynthSpec, index: usize) -> Result<SpeakerProfile> {
    if index >= spec.n_speakers {
        return Err(Error::invalid(format!("speaker index {index} out of range 0..{}", spec.n_speakers)));
    }
    let mut rng = seed::rng_indexed(spec.seed, "synth-speaker", index as u64);
    let mut formants: Vec<(f64, f64)> = (0..spec.n_formants)
        .map(|_| {
            (
                rng.random_range(FORMANT_RANGE_HZ.0..FORMANT_RANGE_HZ.1),
                rng.random_range(BANDWIDTH_RANGE_HZ.0..BANDWIDTH_RANGE_HZ.1),
            )
        })
        .collect();
    formants.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(SpeakerProfile {
        index,
        speaker_id: speaker_id(index),
        formants,
        pitch_hz: rng.random_range(PITCH_RANGE_HZ.0..PITCH_RANGE_HZ.1),
    })
}

/// Two-pole resonator normalised to unit gain at its center frequency.
fn resonate(x: &[f64], center: f64, bandwidth: f64) -> Vec<f64> {
    let fs = f64::from(SAMPLE_RATE);
    let r = (-PI * bandwidth / fs).exp();
    let theta = 2.0 * PI * center / fs;
    let (a1, a2) = (2.0 * r * theta.cos(), -r * r);
    // |1 - a1 e^{-jθ} - a2 e^{-2jθ}| at the center
    let re = 1.0 - a1 * theta.cos() - a2 * (2.0 * theta).cos();
    let im = a1 * theta.sin() + a2 * (2.0 * theta).sin();
    let g = (re * re + im * im).sqrt();
    let mut y = vec![0.0; x.len()];
    for n in 0..x.len() {
        let y1 = if n >= 1 { y[n - 1] } else { 0.0 };
        let y2 = if n >= 2 { y[n - 2] } else { 0.0 };
        y[n] = g * x[n] + a1 * y1 + a2 * y2;
    }
    y
}

/// One utterance of `seconds` for `profile`. Per-utterance formant and pitch
/// jitter, the pitch-contour phase, the aspiration noise and the noise floor
/// all come from `rng`; the output peak is exactly 0.5.
pub fn synth_utterance<R: Rng + ?Sized>(
    profile: &SpeakerProfile,
    utt_index: usize,
    seconds: f64,
    jitter: f64,
    rng: &mut R,
) -> Result<Waveform> {
    if !(seconds >= 1.0 && seconds.is_finite()) {
        return Err(Error::invalid("utterance length must be >= 1 s"));
    }
    let fs = f64::from(SAMPLE_RATE);
    let n = (seconds * fs).round() as usize;
    let jit = |rng: &mut R| if jitter > 0.0 { 1.0 + rng.random_range(-jitter..jitter) } else { 1.0 };
    let pitch = profile.pitch_hz * jit(rng);
    let formants: Vec<(f64, f64)> = profile.formants.iter().map(|&(c, b)| (c * jit(rng), b)).collect();
    // slow 3 % pitch vibrato, phase set by the utterance index
    let phase0 = 2.0 * PI * ((utt_index as f64 * 0.618_033_988_7) % 1.0);
    let vib_hz = 4.0;
    let mut source = vec![0.0; n];
    let mut acc = 0.0;
    for (i, s) in source.iter_mut().enumerate() {
        let f0 = pitch * (1.0 + 0.03 * (2.0 * PI * vib_hz * i as f64 / fs + phase0).sin());
        acc += f0 / fs;
        if acc >= 1.0 {
            acc -= 1.0;
            *s += 1.0;
        }
        let g: f64 = StandardNormal.sample(rng);
        *s += 0.1 * g;
    }
    let mut y = vec![0.0; n];
    for &(c, b) in &formants {
        for (o, v) in y.iter_mut().zip(resonate(&source, c, b)) {
            *o += v;
        }
    }
    let peak = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for v in y.iter_mut() {
        let g: f64 = StandardNormal.sample(rng);
        *v += 1e-3 * peak * g;
    }
    let peak = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak == 0.0 {
        return Err(Error::degenerate("synthesised utterance is silent"));
    }
    Waveform::new(y.into_iter().map(|v| v * PEAK / peak).collect())
}

/// Balanced labeled trials: every same-speaker pair plus an equal number of
/// distinct random cross-speaker pairs (or all of them, if fewer exist, with
/// targets trimmed to match).
pub fn balanced_trials<R: Rng + ?Sized>(manifest: &Manifest, rng: &mut R) -> TrialList {
    let rows = manifest.rows();
    let mut targets = Vec::new();
    let mut nontargets = Vec::new();
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            let pair = (rows[i].utt_id.clone(), rows[j].utt_id.clone());
            if rows[i].speaker_id == rows[j].speaker_id {
                targets.push(pair);
            } else {
                nontargets.push(pair);
            }
        }
    }
    nontargets.shuffle(rng);
    let k = targets.len().min(nontargets.len());
    targets.truncate(k);
    nontargets.truncate(k);
    let mut trials: Vec<Trial> = targets
        .into_iter()
        .map(|p| (true, p))
        .chain(nontargets.into_iter().map(|p| (false, p)))
        .map(|(l, (e, t))| Trial {
            label: Some(l),
            enroll: e,
            test: t,
        })
        .collect();
    trials.shuffle(rng);
    TrialList::new(trials)
}

#[derive(Clone, Debug)]
pub struct SynthCorpus {
    pub all: Manifest,
    pub train: Manifest,
    pub heldout: Manifest,
    pub trials: TrialList,
    pub dir: PathBuf,
}

pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const TRAIN_FILE: &str = "train.tsv";
pub const HELDOUT_FILE: &str = "heldout.tsv";
pub const TRIALS_FILE: &str = "trials.txt";

/// Writes `wav/<speaker>/<utt>.wav`, the full, train and held-out manifests,
/// and the held-out trial list into `out_dir`. The last
/// `heldout_per_speaker` utterances of each speaker are held out.
pub fn synth_corpus(spec: &SynthSpec, out_dir: &Path) -> Result<SynthCorpus> {
    spec.validate()?;
    let profiles: Vec<SpeakerProfile> = (0..spec.n_speakers).map(|i| synth_speaker(spec, i)).collect::<Result<_>>()?;
    let jobs: Vec<(usize, usize)> = (0..spec.n_speakers)
        .flat_map(|s| (0..spec.utts_per_speaker).map(move |u| (s, u)))
        .collect();
    let rows: Vec<ManifestRow> = jobs
        .par_iter()
        .map(|&(s, u)| {
            let mut rng = seed::rng_indexed(spec.seed, "synth-utterance", (s * spec.utts_per_speaker + u) as u64);
            let wav = synth_utterance(&profiles[s], u, spec.utt_seconds, spec.formant_jitter, &mut rng)?;
            let dir = out_dir.join("wav").join(speaker_id(s));
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let path = dir.join(format!("{}.wav", utt_id(s, u)));
            write_wav(&path, &wav)?;
            Ok(ManifestRow {
                utt_id: utt_id(s, u),
                speaker_id: speaker_id(s),
                path,
            })
        })
        .collect::<Result<_>>()?;
    let first_heldout = spec.utts_per_speaker - spec.heldout_per_speaker;
    let (mut train, mut heldout) = (Vec::new(), Vec::new());
    for (row, &(_, u)) in rows.iter().zip(&jobs) {
        if u >= first_heldout {
            heldout.push(row.clone());
        } else {
            train.push(row.clone());
        }
    }
    let all = Manifest::new(rows)?;
    let train = Manifest::new(train)?;
    let heldout = Manifest::new(heldout)?;
    let trials = balanced_trials(&heldout, &mut seed::rng(spec.seed, "synth-trials"));
    all.save(out_dir.join(MANIFEST_FILE))?;
    train.save(out_dir.join(TRAIN_FILE))?;
    heldout.save(out_dir.join(HELDOUT_FILE))?;
    trials.save(out_dir.join(TRIALS_FILE))?;
    Ok(SynthCorpus {
        all,
        train,
        heldout,
        trials,
        dir: out_dir.to_path_buf(),
    })
}
