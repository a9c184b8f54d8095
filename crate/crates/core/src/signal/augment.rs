//! Online waveform augmentation: additive noise at a target SNR and
//! reverberation by impulse-response convolution.

use std::path::Path;

use rand::Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::wav::{read_wav, rms, Waveform};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AugmentKind {
    Noise,
    Reverb,
}

impl AugmentKind {
    pub fn name(self) -> &'static str {
        match self {
            AugmentKind::Noise => "noise",
            AugmentKind::Reverb => "reverb",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "noise" => Some(AugmentKind::Noise),
            "reverb" => Some(AugmentKind::Reverb),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentConfig {
    pub probability: f64,
    pub noise_snr_db_range: (f64, f64),
    pub kinds: Vec<AugmentKind>,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            probability: 0.6,
            noise_snr_db_range: (0.0, 20.0),
            kinds: vec![AugmentKind::Noise, AugmentKind::Reverb],
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        Self {
            probability: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.probability) {
            return Err(Error::config("augment.probability", "must be in [0, 1]"));
        }
        let (lo, hi) = self.noise_snr_db_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::config("augment.snr_low_db", "need finite low <= high"));
        }
        Ok(())
    }
}

/// Noise and impulse-response recordings used by [`augment`].
#[derive(Clone, Debug, Default)]
pub struct AugmentBanks {
    pub noises: Vec<Waveform>,
    pub rirs: Vec<Waveform>,
}

impl AugmentBanks {
    /// Loads every `*.wav` in each directory, in sorted filename order.
    pub fn load(noise_dir: Option<&Path>, rir_dir: Option<&Path>) -> Result<Self> {
        let load_dir = |dir: Option<&Path>| -> Result<Vec<Waveform>> {
            let Some(dir) = dir else { return Ok(Vec::new()) };
            let mut paths: Vec<_> = std::fs::read_dir(dir)
                .map_err(|e| Error::io(dir, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
                .collect();
            paths.sort();
            paths.iter().map(read_wav).collect()
        };
        Ok(Self {
            noises: load_dir(noise_dir)?,
            rirs: load_dir(rir_dir)?,
        })
    }
}

/// Gain on the noise that yields `snr_db` between signal and scaled noise.
pub fn noise_gain(rms_signal: f64, rms_noise: f64, snr_db: f64) -> f64 {
    rms_signal / (rms_noise * 10f64.powf(snr_db / 20.0))
}

/// Adds `noise` at `snr_db` (RMS-based). A random window of the noise is used
/// when it is longer than `wav`; shorter noise is tiled from a random offset.
/// `snr_db = +∞` returns the input unchanged.
pub fn mix_noise<R: Rng + ?Sized>(wav: &Waveform, noise: &Waveform, snr_db: f64, rng: &mut R) -> Result<Waveform> {
    if snr_db == f64::INFINITY {
        return Ok(wav.clone());
    }
    let n = wav.len();
    let src = noise.samples();
    let crop: Vec<f64> = if src.len() >= n {
        let off = rng.random_range(0..=src.len() - n);
        src[off..off + n].to_vec()
    } else {
        let off = rng.random_range(0..src.len());
        (0..n).map(|i| src[(off + i) % src.len()]).collect()
    };
    let rms_n = rms(&crop);
    if rms_n == 0.0 {
        return Err(Error::degenerate("noise segment has zero energy; SNR undefined"));
    }
    let g = noise_gain(wav.rms(), rms_n, snr_db);
    let out = wav
        .samples()
        .iter()
        .zip(&crop)
        .map(|(s, v)| (s + g * v).clamp(-1.0, 1.0))
        .collect();
    Waveform::new(out)
}

/// Full linear convolution truncated to the input length, rescaled so the
/// output RMS equals the input RMS.
pub fn apply_rir(wav: &Waveform, ir: &Waveform) -> Result<Waveform> {
    if ir.rms() == 0.0 {
        return Err(Error::degenerate("impulse response has zero energy"));
    }
    let mut out = convolve_truncated(wav.samples(), ir.samples());
    let (before, after) = (wav.rms(), rms(&out));
    if after > 0.0 {
        let k = before / after;
        for v in &mut out {
            *v *= k;
        }
    }
    Waveform::new(out)
}

fn convolve_truncated(x: &[f64], h: &[f64]) -> Vec<f64> {
    let n = x.len();
    if h.len() <= 64 {
        let mut y = vec![0.0; n];
        for (i, yi) in y.iter_mut().enumerate() {
            let kmax = h.len().min(i + 1);
            *yi = (0..kmax).map(|k| h[k] * x[i - k]).sum();
        }
        return y;
    }
    let size = (n + h.len() - 1).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    let mut a: Vec<Complex<f64>> = (0..size).map(|i| Complex::new(*x.get(i).unwrap_or(&0.0), 0.0)).collect();
    let mut b: Vec<Complex<f64>> = (0..size).map(|i| Complex::new(*h.get(i).unwrap_or(&0.0), 0.0)).collect();
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (p, q) in a.iter_mut().zip(&b) {
        *p *= q;
    }
    inv.process(&mut a);
    a[..n].iter().map(|c| c.re / size as f64).collect()
}

/// With probability `cfg.probability`, applies one augmentation kind chosen
/// uniformly from `cfg.kinds`; otherwise returns the input. Reports which kind
/// (if any) was applied.
pub fn augment_traced<R: Rng + ?Sized>(
    wav: &Waveform,
    banks: &AugmentBanks,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<(Waveform, Option<AugmentKind>)> {
    for kind in &cfg.kinds {
        let empty = match kind {
            AugmentKind::Noise => banks.noises.is_empty(),
            AugmentKind::Reverb => banks.rirs.is_empty(),
        };
        if empty && cfg.probability > 0.0 {
            return Err(Error::invalid(format!("augmentation kind `{}` is enabled but its bank is empty", kind.name())));
        }
    }
    if cfg.kinds.is_empty() || rng.random::<f64>() >= cfg.probability {
        return Ok((wav.clone(), None));
    }
    let kind = cfg.kinds[rng.random_range(0..cfg.kinds.len())];
    let out = match kind {
        AugmentKind::Noise => {
            let noise = &banks.noises[rng.random_range(0..banks.noises.len())];
            let (lo, hi) = cfg.noise_snr_db_range;
            let snr = if hi > lo { rng.random_range(lo..=hi) } else { lo };
            mix_noise(wav, noise, snr, rng)?
        }
        AugmentKind::Reverb => {
            let ir = &banks.rirs[rng.random_range(0..banks.rirs.len())];
            apply_rir(wav, ir)?
        }
    };
    Ok((out, Some(kind)))
}

pub fn augment<R: Rng + ?Sized>(
    wav: &Waveform,
    banks: &AugmentBanks,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<Waveform> {
    augment_traced(wav, banks, cfg, rng).map(|(w, _)| w)
}
