//! AAM-softmax training: random crops, online augmentation, and the
//! frozen-upstream / full fine-tune / large-margin schedule.

mod aam;
mod adam;
mod crop;
mod gradcheck;

pub use aam::{
    aam_loss, aam_loss_bound, aam_loss_tape, aam_loss_with_grads, check_labels, unit_rows, AamConfig, AamOutput,
    ClassWeights, ANCHORS_PARAM,
};
pub use adam::Adam;
pub use crop::{crop_len_samples, crop_random, crop_stack_random};
pub use gradcheck::{grad_check, GradCheckReport, GRADCHECK_COMPONENTS};

use std::collections::BTreeMap;
use std::fmt::Write as _;

use log::{info, warn};
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{load_items, EmbedItem, Frontend, Input, SpeakerModel};
use crate::params::Binder;
use crate::seed;
use crate::signal::{augment, AugmentBanks, AugmentConfig};
use crate::tape::Tape;
use crate::tensor::Mat;
use crate::upstream::Manifest;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSchedule {
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub lmft_epochs: usize,
    pub crop_seconds: f64,
    pub lmft_crop_seconds: f64,
    pub lmft_margin: f64,
    pub batch_size: usize,
    pub lr_stage1: f64,
    pub lr_stage2: f64,
    pub lr_lmft: f64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            stage1_epochs: 10,
            stage2_epochs: 5,
            lmft_epochs: 2,
            crop_seconds: 3.0,
            lmft_crop_seconds: 6.0,
            lmft_margin: 0.5,
            batch_size: 16,
            lr_stage1: 1e-3,
            lr_stage2: 1e-4,
            lr_lmft: 1e-4,
        }
    }
}

impl TrainSchedule {
    /// `(stage1, stage2, lmft)` epochs with the remaining fields at their defaults.
    pub fn epochs(stage1: usize, stage2: usize, lmft: usize) -> Self {
        Self {
            stage1_epochs: stage1,
            stage2_epochs: stage2,
            lmft_epochs: lmft,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (key, v) in [("train.crop_seconds", self.crop_seconds), ("train.lmft_crop_seconds", self.lmft_crop_seconds)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(key, "must be > 0"));
            }
        }
        if !(0.0..std::f64::consts::FRAC_PI_2).contains(&self.lmft_margin) {
            return Err(Error::config("train.lmft_margin", "must satisfy 0 <= m < pi/2"));
        }
        if self.batch_size < 1 {
            return Err(Error::config("train.batch_size", "must be >= 1"));
        }
        for (key, v) in [
            ("train.lr_stage1", self.lr_stage1),
            ("train.lr_stage2", self.lr_stage2),
            ("train.lr_lmft", self.lr_lmft),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(key, "must be > 0"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Stage1,
    Stage2,
    Lmft,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Stage1 => "stage1",
            Stage::Stage2 => "stage2",
            Stage::Lmft => "lmft",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub stage: Stage,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,stage,loss,lr\n");
        for r in &self.epochs {
            let _ = writeln!(out, "{},{},{:.6},{}", r.epoch, r.stage.name(), r.loss, r.lr);
        }
        out
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|r| r.loss)
    }
}

/// Training utterances held in memory with their class labels.
#[derive(Clone, Debug)]
pub struct TrainData {
    pub items: Vec<EmbedItem>,
    pub labels: Vec<usize>,
    pub speakers: Vec<String>,
}

impl TrainData {
    pub fn load(model: &SpeakerModel, manifest: &Manifest) -> Result<Self> {
        manifest.require_trainable()?;
        let index = manifest.speaker_index();
        let items = load_items(model.spec(), manifest)?;
        let labels = items.iter().map(|it| index[&it.speaker_id]).collect();
        Ok(Self {
            items,
            labels,
            speakers: manifest.speakers(),
        })
    }

    pub fn n_classes(&self) -> usize {
        self.speakers.len()
    }
}

#[derive(Clone, Debug)]
pub struct TrainOptions {
    pub schedule: TrainSchedule,
    pub margin: f64,
    pub scale: f64,
    pub augment: AugmentConfig,
    pub banks: AugmentBanks,
    pub seed: u64,
}

impl TrainOptions {
    pub fn new(schedule: TrainSchedule, seed: u64) -> Self {
        Self {
            schedule,
            margin: 0.2,
            scale: 30.0,
            augment: AugmentConfig::disabled(),
            banks: AugmentBanks::default(),
            seed,
        }
    }
}

/// Parameter-name prefixes updated in `stage`.
fn trainable_prefixes(model: &SpeakerModel, stage: Stage) -> Vec<&'static str> {
    let mut p = vec!["aggregator.", "ecapa.", "aam."];
    if stage != Stage::Stage1 {
        match model.spec().frontend {
            Frontend::Mock(_) => p.push("upstream."),
            Frontend::Imported { .. } => {}
            Frontend::Fbank(_) => {}
        }
    }
    p
}

/// Runs the schedule in place on `model`. Every random draw comes from a
/// sub-seed of `opts.seed` indexed by epoch and example, so results do not
/// depend on thread scheduling.
pub fn train(model: &mut SpeakerModel, data: &TrainData, opts: &TrainOptions) -> Result<TrainLog> {
    let s = &opts.schedule;
    s.validate()?;
    if data.n_classes() < 2 {
        return Err(Error::invalid("training needs at least two speakers"));
    }
    let augmenting = opts.augment.probability > 0.0 && !opts.augment.kinds.is_empty();
    if augmenting {
        opts.augment.validate()?;
    }
    let base = AamConfig {
        margin: opts.margin,
        scale: opts.scale,
        n_classes: data.n_classes(),
    };
    base.validate()?;
    let stages = [
        (Stage::Stage1, s.stage1_epochs, s.lr_stage1, s.crop_seconds, opts.margin),
        (Stage::Stage2, s.stage2_epochs, s.lr_stage2, s.crop_seconds, opts.margin),
        (Stage::Lmft, s.lmft_epochs, s.lr_lmft, s.lmft_crop_seconds, s.lmft_margin),
    ];
    let mut log = TrainLog::default();
    let mut global_epoch = 0usize;
    let n = data.items.len();
    for (stage, epochs, lr, crop, margin) in stages {
        if epochs == 0 {
            continue;
        }
        if stage != Stage::Stage1 && matches!(model.spec().frontend, Frontend::Imported { .. }) {
            info!("imported hidden states are fixed; {} keeps the upstream frozen", stage.name());
        }
        let prefixes = trainable_prefixes(model, stage);
        let aam = base.with_margin(margin);
        let mut opt = Adam::new(lr);
        for _ in 0..epochs {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut seed::rng_indexed(opts.seed, "train-order", global_epoch as u64));
            let mut total = 0.0;
            for batch in order.chunks(s.batch_size) {
                let b = batch.len() as f64;
                let params = model.params();
                let results: Vec<Result<(f64, BTreeMap<String, Mat>)>> = batch
                    .par_iter()
                    .map(|&idx| {
                        let mut rng = seed::rng_indexed(opts.seed, "train-example", (global_epoch * n + idx) as u64);
                        let item = &data.items[idx];
                        let mut input = model.spec().crop(&item.input, crop, &mut rng)?;
                        if augmenting {
                            if let Input::Wave(w) = &input {
                                input = Input::Wave(augment(w, &opts.banks, &opts.augment, &mut rng)?);
                            }
                        }
                        let trainable = |name: &str| prefixes.iter().any(|p| name.starts_with(p));
                        let mut tape = Tape::new();
                        let mut binder = Binder::new(params, &trainable);
                        let e = model.spec().forward_tape(&mut tape, &mut binder, &input, &item.speaker_id)?;
                        let loss = aam_loss_bound(&mut tape, &mut binder, e, &[data.labels[idx]], &aam)?;
                        let scaled = tape.scale(loss, 1.0 / b);
                        let grads = tape.backward(scaled);
                        Ok((tape.scalar(loss), binder.gradients(&grads)))
                    })
                    .collect();
                let mut sum: BTreeMap<String, Mat> = BTreeMap::new();
                for r in results {
                    let (loss, grads) = r?;
                    total += loss;
                    for (name, g) in grads {
                        match sum.get_mut(&name) {
                            Some(acc) => acc.add_assign(&g),
                            None => {
                                sum.insert(name, g);
                            }
                        }
                    }
                }
                opt.step(model.params_mut(), &sum);
            }
            global_epoch += 1;
            let loss = total / n as f64;
            if !loss.is_finite() {
                return Err(Error::degenerate(format!("training loss diverged in epoch {global_epoch}")));
            }
            info!("epoch {global_epoch} ({}) loss {loss:.6}", stage.name());
            log.epochs.push(EpochRecord { epoch: global_epoch, stage, loss, lr });
        }
    }
    if !model.params().is_finite() {
        warn!("parameters contain non-finite values after training");
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ecapa::EcapaConfig;
    use crate::model::{EmbedItem, ModelSpec, PlantConfig};
    use crate::signal::Waveform;
    use crate::upstream::MockUpstreamConfig;

    fn toy(n_spk: usize, per: usize) -> (SpeakerModel, TrainData) {
        let spec = ModelSpec {
            frontend: Frontend::Mock(MockUpstreamConfig {
                n_layers: 3,
                dim: 8,
                ..Default::default()
            }),
            plant: Some(PlantConfig { layer: 1, strength: 2.0 }),
            ecapa: EcapaConfig::tiny(8),
        };
        let mut items = Vec::new();
        let mut labels = Vec::new();
        for s in 0..n_spk {
            for u in 0..per {
                let f = 0.01 * (s + 1) as f64 + 0.001 * u as f64;
                items.push(EmbedItem {
                    utt_id: format!("s{s}u{u}"),
                    speaker_id: format!("s{s}"),
                    input: Input::Wave(Waveform::new((0..4000).map(|i| 0.3 * (i as f64 * f).sin()).collect()).unwrap()),
                });
                labels.push(s);
            }
        }
        let speakers = (0..n_spk).map(|s| format!("s{s}")).collect();
        let model = SpeakerModel::init(spec, n_spk, 4).unwrap();
        (model, TrainData { items, labels, speakers })
    }

    fn opts(s1: usize, s2: usize, l: usize) -> TrainOptions {
        let mut sched = TrainSchedule::epochs(s1, s2, l);
        sched.crop_seconds = 0.2;
        sched.lmft_crop_seconds = 0.3;
        sched.batch_size = 4;
        TrainOptions::new(sched, 11)
    }

    #[test]
    fn empty_schedule_is_a_no_op() {
        let (mut model, data) = toy(2, 2);
        let before = model.params().clone();
        let log = train(&mut model, &data, &opts(0, 0, 0)).unwrap();
        assert!(log.epochs.is_empty());
        assert_eq!(model.params(), &before);
    }

    #[test]
    fn stage1_freezes_upstream_and_stage2_does_not() {
        let (mut model, data) = toy(3, 2);
        let up = model.upstream_params().to_bytes();
        let ec = model.params().subset("ecapa.").to_bytes();
        train(&mut model, &data, &opts(1, 0, 0)).unwrap();
        assert_eq!(model.upstream_params().to_bytes(), up);
        assert_ne!(model.params().subset("ecapa.").to_bytes(), ec);
        train(&mut model, &data, &opts(0, 1, 0)).unwrap();
        assert_ne!(model.upstream_params().to_bytes(), up);
    }

    #[test]
    fn seeded_runs_are_identical_and_logged() {
        let (mut a, data) = toy(2, 3);
        let mut b = a.clone();
        let la = train(&mut a, &data, &opts(1, 1, 1)).unwrap();
        let lb = train(&mut b, &data, &opts(1, 1, 1)).unwrap();
        assert_eq!(a.params().to_bytes(), b.params().to_bytes());
        assert_eq!(la, lb);
        let csv = la.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "epoch,stage,loss,lr");
        assert!(lines[1].starts_with("1,stage1,") && lines[1].ends_with(",0.001"));
        assert!(lines[2].starts_with("2,stage2,") && lines[3].starts_with("3,lmft,"));
    }

    #[test]
    fn single_speaker_is_rejected() {
        let (mut model, mut data) = toy(2, 2);
        data.speakers.truncate(1);
        assert!(train(&mut model, &data, &opts(1, 0, 0)).is_err());
    }
}
