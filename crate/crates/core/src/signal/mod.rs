//! Waveform I/O, log mel-filterbank features and online augmentation.

mod augment;
mod fbank;
mod wav;

pub use augment::{
    apply_rir, augment, augment_traced, mix_noise, noise_gain, AugmentBanks, AugmentConfig, AugmentKind,
};
pub use fbank::{fbank, hz_to_mel, mel_center_frequencies, mel_to_hz, FbankConfig, FbankExtractor};
pub use wav::{read_wav, rms, write_wav, Waveform, SAMPLE_RATE};

use crate::error::{Error, Result};
use crate::tensor::Mat;

/// `T × F` frame-level features.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    frames: Mat,
    frame_rate_hz: f64,
}

impl FeatureMatrix {
    pub fn new(frames: Mat, frame_rate_hz: f64) -> Result<Self> {
        if frames.rows() == 0 {
            return Err(Error::invalid("feature matrix needs at least one frame"));
        }
        if !frames.is_finite() {
            return Err(Error::degenerate("feature matrix contains non-finite values"));
        }
        Ok(Self { frames, frame_rate_hz })
    }

    pub fn frames(&self) -> &Mat {
        &self.frames
    }

    pub fn into_frames(self) -> Mat {
        self.frames
    }

    pub fn frame_rate_hz(&self) -> f64 {
        self.frame_rate_hz
    }

    pub fn n_frames(&self) -> usize {
        self.frames.rows()
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }
}
