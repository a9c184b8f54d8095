use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{FeatureMatrix, Waveform};
use crate::error::{Error, Result};
use crate::tensor::Mat;

#[derive(Clone, Debug, PartialEq)]
pub struct FbankConfig {
    pub n_mels: usize,
    pub win_ms: f64,
    pub hop_ms: f64,
    pub fft_size: usize,
    pub preemph: f64,
    pub mel_low_hz: f64,
    pub mel_high_hz: f64,
    pub log_floor: f64,
}

impl Default for FbankConfig {
    fn default() -> Self {
        Self {
            n_mels: 40,
            win_ms: 25.0,
            hop_ms: 10.0,
            fft_size: 512,
            preemph: 0.97,
            mel_low_hz: 20.0,
            mel_high_hz: 7600.0,
            log_floor: 1e-10,
        }
    }
}

impl FbankConfig {
    pub fn win_samples(&self) -> usize {
        (self.win_ms * 16.0).round() as usize
    }

    pub fn hop_samples(&self) -> usize {
        (self.hop_ms * 16.0).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_mels == 0 {
            return Err(Error::config("fbank.n_mels", "must be >= 1"));
        }
        if !(self.hop_ms > 0.0 && self.win_ms > self.hop_ms) {
            return Err(Error::config("fbank.win_ms", "need win_ms > hop_ms > 0"));
        }
        if self.hop_samples() == 0 {
            return Err(Error::config("fbank.hop_ms", "hop shorter than one sample"));
        }
        if self.fft_size < self.win_samples() {
            return Err(Error::config("fbank.fft_size", "must be >= window length in samples"));
        }
        if !(self.mel_low_hz >= 0.0 && self.mel_high_hz > self.mel_low_hz && self.mel_high_hz <= 8000.0) {
            return Err(Error::config("fbank.mel_high_hz", "need 0 <= mel_low_hz < mel_high_hz <= 8000"));
        }
        if !(self.log_floor > 0.0) {
            return Err(Error::config("fbank.log_floor", "must be > 0"));
        }
        if !(0.0..1.0).contains(&self.preemph) {
            return Err(Error::config("fbank.preemph", "must be in [0, 1)"));
        }
        Ok(())
    }

    /// Number of frames for `n` samples; `None` when shorter than one window.
    pub fn frame_count(&self, n: usize) -> Option<usize> {
        let win = self.win_samples();
        (n >= win).then(|| (n - win) / self.hop_samples() + 1)
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Center frequency (Hz) of every triangular filter.
pub fn mel_center_frequencies(cfg: &FbankConfig) -> Vec<f64> {
    mel_edges(cfg)[1..=cfg.n_mels].to_vec()
}

fn mel_edges(cfg: &FbankConfig) -> Vec<f64> {
    let lo = hz_to_mel(cfg.mel_low_hz);
    let hi = hz_to_mel(cfg.mel_high_hz);
    (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect()
}

/// Log mel-filterbank extractor with a cached FFT plan and filter matrix.
pub struct FbankExtractor {
    cfg: FbankConfig,
    window: Vec<f64>,
    /// `(fft_size/2 + 1) × n_mels`
    filters: Mat,
    fft: Arc<dyn Fft<f64>>,
}

impl FbankExtractor {
    pub fn new(cfg: FbankConfig) -> Result<Self> {
        cfg.validate()?;
        let win = cfg.win_samples();
        let window = (0..win)
            .map(|n| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * n as f64 / (win - 1) as f64).cos())
            .collect();
        let n_bins = cfg.fft_size / 2 + 1;
        let edges = mel_edges(&cfg);
        let mut filters = Mat::zeros(n_bins, cfg.n_mels);
        for k in 0..n_bins {
            let f = k as f64 * 16000.0 / cfg.fft_size as f64;
            for m in 0..cfg.n_mels {
                let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
                let w = if f > l && f <= c {
                    (f - l) / (c - l)
                } else if f > c && f < r {
                    (r - f) / (r - c)
                } else {
                    0.0
                };
                filters.set(k, m, w);
            }
        }
        let fft = FftPlanner::new().plan_fft_forward(cfg.fft_size);
        Ok(Self {
            cfg,
            window,
            filters,
            fft,
        })
    }

    pub fn config(&self) -> &FbankConfig {
        &self.cfg
    }

    pub fn compute(&self, wav: &Waveform) -> Result<FeatureMatrix> {
        let cfg = &self.cfg;
        let n = wav.len();
        let t_len = cfg.frame_count(n).ok_or_else(|| {
            Error::invalid(format!(
                "waveform of {n} samples is shorter than one {}-sample window",
                cfg.win_samples()
            ))
        })?;
        let x = wav.samples();
        let win = cfg.win_samples();
        let hop = cfg.hop_samples();
        let n_bins = cfg.fft_size / 2 + 1;

        let mut out = Mat::zeros(t_len, cfg.n_mels);
        let mut buf = vec![Complex::new(0.0, 0.0); cfg.fft_size];
        let mut power = vec![0.0; n_bins];
        for t in 0..t_len {
            let start = t * hop;
            buf.fill(Complex::new(0.0, 0.0));
            for i in 0..win {
                let idx = start + i;
                let prev = if idx == 0 { 0.0 } else { x[idx - 1] };
                let emph = x[idx] - cfg.preemph * prev;
                buf[i] = Complex::new(emph * self.window[i], 0.0);
            }
            self.fft.process(&mut buf);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            let row = out.row_mut(t);
            for (k, &p) in power.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                for (o, &w) in row.iter_mut().zip(self.filters.row(k)) {
                    *o += p * w;
                }
            }
            for v in row.iter_mut() {
                *v = v.max(cfg.log_floor).ln();
            }
        }
        FeatureMatrix::new(out, 1000.0 / cfg.hop_ms)
    }
}

pub fn fbank(wav: &Waveform, cfg: &FbankConfig) -> Result<FeatureMatrix> {
    FbankExtractor::new(cfg.clone())?.compute(wav)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tone(freq: f64, n: usize) -> Waveform {
        Waveform::new(
            (0..n)
                .map(|i| 0.5 * (2.0 * std::f64::consts::PI * freq * i as f64 / 16000.0).sin())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn one_second_gives_98_frames() {
        let f = fbank(&Waveform::zeros(16000).unwrap(), &FbankConfig::default()).unwrap();
        assert_eq!(f.frames().shape(), (98, 40));
        assert_eq!(f.frame_rate_hz(), 100.0);
    }

    #[test]
    fn silence_hits_the_log_floor() {
        let f = fbank(&Waveform::zeros(4000).unwrap(), &FbankConfig::default()).unwrap();
        let floor = 1e-10f64.ln();
        assert!(f.frames().data().iter().all(|&v| v == floor));
    }

    #[test]
    fn too_short_is_an_error() {
        assert!(fbank(&Waveform::zeros(399).unwrap(), &FbankConfig::default()).is_err());
        assert!(fbank(&Waveform::zeros(400).unwrap(), &FbankConfig::default()).is_ok());
    }

    #[test]
    fn tone_peaks_in_the_nearest_mel_bin() {
        let cfg = FbankConfig::default();
        let centers = mel_center_frequencies(&cfg);
        let expected = centers
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - 1000.0).abs().total_cmp(&(b.1 - 1000.0).abs()))
            .unwrap()
            .0;
        let f = fbank(&tone(1000.0, 8000), &cfg).unwrap();
        for t in 0..f.frames().rows() {
            let row = f.frames().row(t);
            let arg = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            assert_eq!(arg, expected, "frame {t}");
        }
    }

    #[test]
    fn config_validation() {
        let mut c = FbankConfig::default();
        c.n_mels = 0;
        assert!(c.validate().is_err());
        let mut c = FbankConfig::default();
        c.hop_ms = 30.0;
        assert!(c.validate().is_err());
        let mut c = FbankConfig::default();
        c.fft_size = 256;
        assert!(c.validate().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn frame_count_formula(n in 400usize..6000) {
            let wav = Waveform::new((0..n).map(|i| ((i * 7919) % 97) as f64 / 200.0 - 0.25).collect()).unwrap();
            let f = fbank(&wav, &FbankConfig::default()).unwrap();
            prop_assert_eq!(f.frames().rows(), (n - 400) / 160 + 1);
        }

        #[test]
        fn trailing_silence_shorter_than_hop_is_ignored(n in 400usize..4000, extra in 0usize..160) {
            let base: Vec<f64> = (0..n).map(|i| ((i * 31) % 17) as f64 / 40.0 - 0.2).collect();
            let full_frames = (n - 400) / 160 + 1;
            // only pad up to the point where no new frame appears
            let room = 400 + full_frames * 160 - n;
            let pad = extra.min(room.saturating_sub(1));
            let mut padded = base.clone();
            padded.extend(std::iter::repeat(0.0).take(pad));
            let a = fbank(&Waveform::new(base).unwrap(), &FbankConfig::default()).unwrap();
            let b = fbank(&Waveform::new(padded).unwrap(), &FbankConfig::default()).unwrap();
            prop_assert_eq!(a.frames(), b.frames());
        }
    }
}
