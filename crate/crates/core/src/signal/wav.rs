use std::path::Path;

use crate::error::{Error, Result, WavError};

pub const SAMPLE_RATE: u32 = 16_000;

/// Mono 16 kHz audio with samples in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
}

impl Waveform {
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("waveform must contain at least one sample"));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::invalid(format!("non-finite sample at index {i}")));
        }
        Ok(Self { samples })
    }

    pub fn zeros(len: usize) -> Result<Self> {
        Self::new(vec![0.0; len])
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_rate(&self) -> u32 {
        SAMPLE_RATE
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / f64::from(SAMPLE_RATE)
    }

    pub fn rms(&self) -> f64 {
        rms(&self.samples)
    }
}

pub fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// Reads a 16-bit PCM mono 16 kHz RIFF/WAVE file. Nothing is resampled or
/// down-mixed: any other layout is an error.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => wav_err(WavError::MalformedHeader(other.to_string())),
    })?;
    let spec = reader.spec();
    if spec.sample_rate != SAMPLE_RATE {
        return Err(wav_err(WavError::UnsupportedSampleRate(spec.sample_rate)));
    }
    if spec.channels != 1 {
        return Err(wav_err(WavError::UnsupportedChannels(spec.channels)));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(wav_err(WavError::UnsupportedBitDepth(spec.bits_per_sample)));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| f64::from(v) / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| wav_err(WavError::MalformedHeader(e.to_string())))?;
    Waveform::new(samples).map_err(|_| wav_err(WavError::MalformedHeader("no samples".into())))
}

/// Writes 16-bit PCM, rounding `sample·32768` and saturating at the int16 range.
pub fn write_wav(path: impl AsRef<Path>, wav: &Waveform) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let to_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::format(path.display().to_string(), other.to_string()),
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(to_err)?;
    for &s in wav.samples() {
        let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(q).map_err(to_err)?;
    }
    writer.finalize().map_err(to_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_raw(path: &Path, rate: u32, channels: u16, bits: u16, samples: &[i32]) {
        let spec = hound::WavSpec {
            channels,
            sample_rate: rate,
            bits_per_sample: bits,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(path, spec).unwrap();
        for &s in samples {
            if bits == 16 {
                w.write_sample(s as i16).unwrap();
            } else {
                w.write_sample(s).unwrap();
            }
        }
        w.finalize().unwrap();
    }

    #[test]
    fn silence_reads_as_zeros() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wav");
        write_raw(&p, 16000, 1, 16, &vec![0; 16000]);
        let w = read_wav(&p).unwrap();
        assert_eq!(w.len(), 16000);
        assert!(w.samples().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn full_scale_square_wave_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sq.wav");
        let raw: Vec<i32> = (0..320).map(|i| if (i / 40) % 2 == 0 { 32767 } else { -32767 }).collect();
        write_raw(&p, 16000, 1, 16, &raw);
        let w = read_wav(&p).unwrap();
        for (s, r) in w.samples().iter().zip(&raw) {
            assert_eq!(*s, f64::from(*r) / 32768.0);
        }
        assert_eq!(w.samples()[0], 32767.0 / 32768.0);
        assert_eq!(w.samples()[40], -32767.0 / 32768.0);
    }

    #[test]
    fn rejects_unsupported_layouts() {
        let dir = tempfile::tempdir().unwrap();
        let rate = dir.path().join("r.wav");
        write_raw(&rate, 44100, 1, 16, &[0; 10]);
        let err = read_wav(&rate).unwrap_err();
        assert!(err.to_string().contains("unsupported sample rate"), "{err}");
        assert!(matches!(err, Error::Wav { source: WavError::UnsupportedSampleRate(44100), .. }));

        let stereo = dir.path().join("c.wav");
        write_raw(&stereo, 16000, 2, 16, &[0; 10]);
        assert!(matches!(
            read_wav(&stereo).unwrap_err(),
            Error::Wav { source: WavError::UnsupportedChannels(2), .. }
        ));

        let deep = dir.path().join("b.wav");
        write_raw(&deep, 16000, 1, 24, &[0; 10]);
        assert!(matches!(
            read_wav(&deep).unwrap_err(),
            Error::Wav { source: WavError::UnsupportedBitDepth(24), .. }
        ));

        let junk = dir.path().join("j.wav");
        std::fs::write(&junk, b"RIFX0000WAVEjunk").unwrap();
        assert!(matches!(
            read_wav(&junk).unwrap_err(),
            Error::Wav { source: WavError::MalformedHeader(_), .. }
        ));
    }

    #[test]
    fn write_read_round_trip_is_quantised() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rt.wav");
        let w = Waveform::new(vec![0.5, -0.25, 0.0, 1.0 / 32768.0]).unwrap();
        write_wav(&p, &w).unwrap();
        assert_eq!(read_wav(&p).unwrap(), w);
    }
}
