//! Fixed-length random crops. Inputs shorter than the crop are tiled.

use rand::Rng;

use crate::error::{Error, Result};
use crate::signal::{Waveform, SAMPLE_RATE};
use crate::upstream::LayerStack;

pub fn crop_len_samples(seconds: f64) -> Result<usize> {
    if !(seconds > 0.0 && seconds.is_finite()) {
        return Err(Error::invalid("crop length must be > 0 seconds"));
    }
    Ok(((seconds * f64::from(SAMPLE_RATE)).round() as usize).max(1))
}

/// Uniform-random contiguous crop of `seconds`; short inputs wrap from the start.
pub fn crop_random<R: Rng + ?Sized>(wav: &Waveform, seconds: f64, rng: &mut R) -> Result<Waveform> {
    let len = crop_len_samples(seconds)?;
    let src = wav.samples();
    if src.is_empty() {
        return Err(Error::invalid("cannot crop an empty waveform"));
    }
    if src.len() >= len {
        let start = rng.random_range(0..=src.len() - len);
        return Waveform::new(src[start..start + len].to_vec());
    }
    Waveform::new(src.iter().cycle().take(len).cloned().collect())
}

/// Frame-domain analogue of [`crop_random`] for imported layer stacks.
pub fn crop_stack_random<R: Rng + ?Sized>(stack: &LayerStack, seconds: f64, rng: &mut R) -> Result<LayerStack> {
    if !(seconds > 0.0 && seconds.is_finite()) {
        return Err(Error::invalid("crop length must be > 0 seconds"));
    }
    let len = ((seconds * f64::from(stack.frame_rate_hz())).round() as usize).max(1);
    let start = if stack.frames() >= len {
        rng.random_range(0..=stack.frames() - len)
    } else {
        0
    };
    Ok(stack.crop_frames(start, len))
}
