//! Flat `section.key = value` run configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::ecapa::EcapaConfig;
use crate::error::{Error, Result};
use crate::model::{Frontend, ModelSpec, PlantConfig};
use crate::scoring::DEFAULT_TOP_K;
use crate::seed;
use crate::signal::{AugmentBanks, AugmentConfig, AugmentKind, FbankConfig};
use crate::synth::SynthSpec;
use crate::training::{AamConfig, TrainOptions, TrainSchedule};
use crate::upstream::MockUpstreamConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpstreamMode {
    Fbank,
    Mock,
    Import,
}

impl UpstreamMode {
    pub fn name(self) -> &'static str {
        match self {
            UpstreamMode::Fbank => "fbank",
            UpstreamMode::Mock => "mock",
            UpstreamMode::Import => "import",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub manifest: Option<PathBuf>,
    pub noise_dir: Option<PathBuf>,
    pub rir_dir: Option<PathBuf>,
    pub fbank: FbankConfig,
    pub mode: UpstreamMode,
    /// Shape of the layer stacks; the seed field is derived from `seed`.
    pub upstream: MockUpstreamConfig,
    pub plant: Option<PlantConfig>,
    /// `in_dim` follows the frontend.
    pub ecapa: EcapaConfig,
    pub aam_margin: f64,
    pub aam_scale: f64,
    pub schedule: TrainSchedule,
    pub augment: AugmentConfig,
    pub cohort_top_k: usize,
    pub calibration_trials: usize,
    pub synth: SynthSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        let upstream = MockUpstreamConfig::default();
        let aam = AamConfig::new(0);
        Self {
            seed: 0,
            manifest: None,
            noise_dir: None,
            rir_dir: None,
            fbank: FbankConfig::default(),
            mode: UpstreamMode::Mock,
            ecapa: EcapaConfig::voxceleb(upstream.dim),
            upstream,
            plant: None,
            aam_margin: aam.margin,
            aam_scale: aam.scale,
            schedule: TrainSchedule::default(),
            augment: AugmentConfig::default(),
            cohort_top_k: DEFAULT_TOP_K,
            calibration_trials: 30_000,
            synth: SynthSpec::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(key, format!("cannot parse `{value}`")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "run.seed" => self.seed = parse(key, v)?,
            "paths.manifest" => self.manifest = Some(PathBuf::from(v)),
            "paths.noise_dir" => self.noise_dir = Some(PathBuf::from(v)),
            "paths.rir_dir" => self.rir_dir = Some(PathBuf::from(v)),
            "fbank.n_mels" => self.fbank.n_mels = parse(key, v)?,
            "fbank.win_ms" => self.fbank.win_ms = parse(key, v)?,
            "fbank.hop_ms" => self.fbank.hop_ms = parse(key, v)?,
            "fbank.fft_size" => self.fbank.fft_size = parse(key, v)?,
            "fbank.preemph" => self.fbank.preemph = parse(key, v)?,
            "fbank.mel_low_hz" => self.fbank.mel_low_hz = parse(key, v)?,
            "fbank.mel_high_hz" => self.fbank.mel_high_hz = parse(key, v)?,
            "fbank.log_floor" => self.fbank.log_floor = parse(key, v)?,
            "upstream.mode" => {
                self.mode = match v {
                    "fbank" => UpstreamMode::Fbank,
                    "mock" => UpstreamMode::Mock,
                    "import" => UpstreamMode::Import,
                    _ => return Err(Error::config(key, format!("`{v}` is not one of fbank, mock, import"))),
                }
            }
            "upstream.n_layers" => self.upstream.n_layers = parse(key, v)?,
            "upstream.dim" => self.upstream.dim = parse(key, v)?,
            "upstream.conv_strides" => self.upstream.conv_strides = parse_list(key, v)?,
            "upstream.conv_width" => self.upstream.conv_width = parse(key, v)?,
            "upstream.mixing_smoothing" => self.upstream.mixing_smoothing = parse(key, v)?,
            "upstream.plant_layer" => {
                if v == "none" {
                    self.plant = None;
                } else {
                    let layer = parse(key, v)?;
                    let strength = self.plant.map_or(1.0, |p| p.strength);
                    self.plant = Some(PlantConfig { layer, strength });
                }
            }
            "upstream.plant_strength" => {
                let strength = parse(key, v)?;
                match &mut self.plant {
                    Some(p) => p.strength = strength,
                    None => return Err(Error::config(key, "set upstream.plant_layer first")),
                }
            }
            "ecapa.channels" => self.ecapa.channels = parse(key, v)?,
            "ecapa.res2_scale" => self.ecapa.res2_scale = parse(key, v)?,
            "ecapa.dilations" => {
                let d = parse_list(key, v)?;
                self.ecapa.dilations = d
                    .try_into()
                    .map_err(|_| Error::config(key, "needs exactly three values"))?;
            }
            "ecapa.se_bottleneck" => self.ecapa.se_bottleneck = parse(key, v)?,
            "ecapa.attention_channels" => self.ecapa.attention_channels = parse(key, v)?,
            "ecapa.embed_dim" => self.ecapa.embed_dim = parse(key, v)?,
            "ecapa.stem_kernel" => self.ecapa.stem_kernel = parse(key, v)?,
            "aam.margin" => self.aam_margin = parse(key, v)?,
            "aam.scale" => self.aam_scale = parse(key, v)?,
            "train.stage1_epochs" => self.schedule.stage1_epochs = parse(key, v)?,
            "train.stage2_epochs" => self.schedule.stage2_epochs = parse(key, v)?,
            "train.lmft_epochs" => self.schedule.lmft_epochs = parse(key, v)?,
            "train.crop_seconds" => self.schedule.crop_seconds = parse(key, v)?,
            "train.lmft_crop_seconds" => self.schedule.lmft_crop_seconds = parse(key, v)?,
            "train.lmft_margin" => self.schedule.lmft_margin = parse(key, v)?,
            "train.batch_size" => self.schedule.batch_size = parse(key, v)?,
            "train.lr_stage1" => self.schedule.lr_stage1 = parse(key, v)?,
            "train.lr_stage2" => self.schedule.lr_stage2 = parse(key, v)?,
            "train.lr_lmft" => self.schedule.lr_lmft = parse(key, v)?,
            "augment.probability" => self.augment.probability = parse(key, v)?,
            "augment.snr_min_db" => self.augment.noise_snr_db_range.0 = parse(key, v)?,
            "augment.snr_max_db" => self.augment.noise_snr_db_range.1 = parse(key, v)?,
            "augment.kinds" => {
                self.augment.kinds = if v.is_empty() || v == "none" {
                    Vec::new()
                } else {
                    v.split(',')
                        .map(|k| AugmentKind::parse(k.trim()).ok_or_else(|| Error::config(key, format!("unknown kind `{k}`"))))
                        .collect::<Result<_>>()?
                }
            }
            "scoring.cohort_top_k" => self.cohort_top_k = parse(key, v)?,
            "scoring.calibration_trials" => self.calibration_trials = parse(key, v)?,
            "synth.n_speakers" => self.synth.n_speakers = parse(key, v)?,
            "synth.utts_per_speaker" => self.synth.utts_per_speaker = parse(key, v)?,
            "synth.utt_seconds" => self.synth.utt_seconds = parse(key, v)?,
            "synth.n_formants" => self.synth.n_formants = parse(key, v)?,
            "synth.formant_jitter" => self.synth.formant_jitter = parse(key, v)?,
            "synth.heldout_per_speaker" => self.synth.heldout_per_speaker = parse(key, v)?,
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    /// Every effective setting as `(key, value)`, in file order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let mut e: Vec<(&'static str, String)> = vec![("run.seed", self.seed.to_string())];
        for (k, p) in [("paths.manifest", &self.manifest), ("paths.noise_dir", &self.noise_dir), ("paths.rir_dir", &self.rir_dir)] {
            if let Some(p) = p {
                e.push((k, p.display().to_string()));
            }
        }
        let f = &self.fbank;
        e.extend([
            ("fbank.n_mels", f.n_mels.to_string()),
            ("fbank.win_ms", f.win_ms.to_string()),
            ("fbank.hop_ms", f.hop_ms.to_string()),
            ("fbank.fft_size", f.fft_size.to_string()),
            ("fbank.preemph", f.preemph.to_string()),
            ("fbank.mel_low_hz", f.mel_low_hz.to_string()),
            ("fbank.mel_high_hz", f.mel_high_hz.to_string()),
            ("fbank.log_floor", f.log_floor.to_string()),
        ]);
        let u = &self.upstream;
        e.extend([
            ("upstream.mode", self.mode.name().to_string()),
            ("upstream.n_layers", u.n_layers.to_string()),
            ("upstream.dim", u.dim.to_string()),
            ("upstream.conv_strides", join(&u.conv_strides)),
            ("upstream.conv_width", u.conv_width.to_string()),
            ("upstream.mixing_smoothing", u.mixing_smoothing.to_string()),
        ]);
        match self.plant {
            Some(p) => e.extend([
                ("upstream.plant_layer", p.layer.to_string()),
                ("upstream.plant_strength", p.strength.to_string()),
            ]),
            None => e.push(("upstream.plant_layer", "none".to_string())),
        }
        let c = &self.ecapa;
        e.extend([
            ("ecapa.channels", c.channels.to_string()),
            ("ecapa.res2_scale", c.res2_scale.to_string()),
            ("ecapa.dilations", join(&c.dilations)),
            ("ecapa.se_bottleneck", c.se_bottleneck.to_string()),
            ("ecapa.attention_channels", c.attention_channels.to_string()),
            ("ecapa.embed_dim", c.embed_dim.to_string()),
            ("ecapa.stem_kernel", c.stem_kernel.to_string()),
            ("aam.margin", self.aam_margin.to_string()),
            ("aam.scale", self.aam_scale.to_string()),
        ]);
        let s = &self.schedule;
        e.extend([
            ("train.stage1_epochs", s.stage1_epochs.to_string()),
            ("train.stage2_epochs", s.stage2_epochs.to_string()),
            ("train.lmft_epochs", s.lmft_epochs.to_string()),
            ("train.crop_seconds", s.crop_seconds.to_string()),
            ("train.lmft_crop_seconds", s.lmft_crop_seconds.to_string()),
            ("train.lmft_margin", s.lmft_margin.to_string()),
            ("train.batch_size", s.batch_size.to_string()),
            ("train.lr_stage1", s.lr_stage1.to_string()),
            ("train.lr_stage2", s.lr_stage2.to_string()),
            ("train.lr_lmft", s.lr_lmft.to_string()),
        ]);
        let a = &self.augment;
        let kinds: Vec<&str> = a.kinds.iter().map(|k| k.name()).collect();
        e.extend([
            ("augment.probability", a.probability.to_string()),
            ("augment.snr_min_db", a.noise_snr_db_range.0.to_string()),
            ("augment.snr_max_db", a.noise_snr_db_range.1.to_string()),
            ("augment.kinds", if kinds.is_empty() { "none".to_string() } else { kinds.join(",") }),
            ("scoring.cohort_top_k", self.cohort_top_k.to_string()),
            ("scoring.calibration_trials", self.calibration_trials.to_string()),
        ]);
        let y = &self.synth;
        e.extend([
            ("synth.n_speakers", y.n_speakers.to_string()),
            ("synth.utts_per_speaker", y.utts_per_speaker.to_string()),
            ("synth.utt_seconds", y.utt_seconds.to_string()),
            ("synth.n_formants", y.n_formants.to_string()),
            ("synth.formant_jitter", y.formant_jitter.to_string()),
            ("synth.heldout_per_speaker", y.heldout_per_speaker.to_string()),
        ]);
        e
    }

    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Parses a config text over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::config(format!("line {}", i + 1), "expected `section.key = value`"));
            };
            cfg.set(k.trim(), v)?;
        }
        cfg.finish()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        // relative paths in a config file are relative to the file
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.manifest, &mut cfg.noise_dir, &mut cfg.rir_dir].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Re-derives dependent fields and validates everything.
    pub fn finish(&mut self) -> Result<()> {
        self.ecapa.in_dim = match self.mode {
            UpstreamMode::Fbank => self.fbank.n_mels,
            UpstreamMode::Mock | UpstreamMode::Import => self.upstream.dim,
        };
        self.upstream.seed = seed::derive(self.seed, "upstream");
        self.synth.seed = seed::derive(self.seed, "synth");
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        self.model_spec().validate()?;
        self.aam().validate()?;
        self.schedule.validate()?;
        self.augment
            .validate()
            .map_err(|e| Error::config("augment", e.to_string()))?;
        if self.cohort_top_k < 1 {
            return Err(Error::config("scoring.cohort_top_k", "must be >= 1"));
        }
        if self.calibration_trials < 2 {
            return Err(Error::config("scoring.calibration_trials", "must be >= 2"));
        }
        self.synth.validate()
    }

    pub fn aam(&self) -> AamConfig {
        AamConfig {
            margin: self.aam_margin,
            scale: self.aam_scale,
            n_classes: 1,
        }
    }

    pub fn model_spec(&self) -> ModelSpec {
        let frontend = match self.mode {
            UpstreamMode::Fbank => Frontend::Fbank(self.fbank.clone()),
            UpstreamMode::Mock => Frontend::Mock(self.upstream.clone()),
            UpstreamMode::Import => Frontend::Imported {
                n_layers: self.upstream.n_layers,
                dim: self.upstream.dim,
            },
        };
        ModelSpec {
            frontend,
            plant: self.plant,
            ecapa: self.ecapa.clone(),
        }
    }

    /// Training manifest path, required by training and cohort commands.
    pub fn require_manifest(&self) -> Result<&Path> {
        let p = self
            .manifest
            .as_deref()
            .ok_or_else(|| Error::config("paths.manifest", "missing; set it in the config or pass --manifest"))?;
        if !p.exists() {
            return Err(Error::config("paths.manifest", format!("{} does not exist", p.display())));
        }
        Ok(p)
    }

    /// Training options with augmentation banks loaded from the configured
    /// directories. Without any bank directory augmentation is skipped.
    pub fn train_options(&self) -> Result<TrainOptions> {
        let mut opts = TrainOptions::new(self.schedule.clone(), seed::derive(self.seed, "train"));
        opts.margin = self.aam_margin;
        opts.scale = self.aam_scale;
        if self.augment.probability > 0.0 && self.noise_dir.is_none() && self.rir_dir.is_none() {
            log::info!("no noise or RIR directory configured; training without augmentation");
            return Ok(opts);
        }
        let banks = AugmentBanks::load(self.noise_dir.as_deref(), self.rir_dir.as_deref())?;
        let mut augment = self.augment.clone();
        augment.kinds.retain(|k| match k {
            AugmentKind::Noise => !banks.noises.is_empty(),
            AugmentKind::Reverb => !banks.rirs.is_empty(),
        });
        opts.augment = augment;
        opts.banks = banks;
        Ok(opts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let text = "run.seed = 7\nupstream.plant_layer = 3\nupstream.plant_strength = 2.5\necapa.channels = 64\naugment.kinds = noise\n";
        let a = RunConfig::parse(text).unwrap();
        let b = RunConfig::parse(&a.dump()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dump(), b.dump());
        assert_eq!(a.plant, Some(PlantConfig { layer: 3, strength: 2.5 }));
    }

    #[test]
    fn unknown_and_invalid_keys_name_the_key() {
        let e = RunConfig::parse("train.epochs = 3\n").unwrap_err();
        assert!(e.to_string().contains("train.epochs") && e.exit_code() == 2);
        let e = RunConfig::parse("aam.margin = 2.0\n").unwrap_err();
        assert!(e.to_string().contains("aam.margin"));
        let e = RunConfig::parse("ecapa.channels = 60\necapa.res2_scale = 8\n").unwrap_err();
        assert!(e.to_string().contains("ecapa.channels"));
        let e = RunConfig::parse("upstream.mode = hubert\n").unwrap_err();
        assert!(e.to_string().contains("upstream.mode"));
        assert!(RunConfig::default().require_manifest().unwrap_err().to_string().contains("paths.manifest"));
    }

    #[test]
    fn mode_sets_ecapa_input() {
        let c = RunConfig::parse("upstream.mode = fbank\n").unwrap();
        assert_eq!(c.ecapa.in_dim, 40);
        assert!(RunConfig::parse("upstream.mode = fbank\nupstream.plant_layer = 1\n").is_err());
    }
}
