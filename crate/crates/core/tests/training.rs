use svkit::ecapa::EcapaConfig;
use svkit::model::{Frontend, ModelSpec, PlantConfig, SpeakerModel};
use svkit::synth::{synth_corpus, SynthSpec};
use svkit::training::{train, Stage, TrainData, TrainOptions, TrainSchedule};
use svkit::upstream::MockUpstreamConfig;

fn setup(dir: &std::path::Path) -> (SpeakerModel, TrainData) {
    let spec = SynthSpec {
        n_speakers: 20,
        utts_per_speaker: 4,
        utt_seconds: 1.0,
        heldout_per_speaker: 2,
        ..Default::default()
    };
    let corpus = synth_corpus(&spec, dir).unwrap();
    let mspec = ModelSpec {
        frontend: Frontend::Mock(MockUpstreamConfig {
            n_layers: 4,
            dim: 32,
            ..Default::default()
        }),
        plant: Some(PlantConfig { layer: 2, strength: 6.0 }),
        ecapa: EcapaConfig::desk(32),
    };
    let model = SpeakerModel::init(mspec, 20, 1).unwrap();
    let data = TrainData::load(&model, &corpus.train).unwrap();
    (model, data)
}

fn schedule() -> TrainSchedule {
    let mut s = TrainSchedule::epochs(4, 1, 1);
    s.batch_size = 4;
    s.crop_seconds = 0.5;
    s.lmft_crop_seconds = 1.0;
    s
}

#[test]
fn loss_falls_over_stage_one() {
    let dir = tempfile::tempdir().unwrap();
    let (mut model, data) = setup(dir.path());
    assert_eq!(data.n_classes(), 20);
    let log = train(&mut model, &data, &TrainOptions::new(schedule(), 2)).unwrap();
    assert_eq!(log.epochs.len(), 6);
    let s1: Vec<f64> = log.epochs.iter().filter(|e| e.stage == Stage::Stage1).map(|e| e.loss).collect();
    assert!(s1.iter().all(|l| l.is_finite()));
    assert!(s1.last().unwrap() < s1.first().unwrap(), "{s1:?}");
    let stages: Vec<Stage> = log.epochs.iter().map(|e| e.stage).collect();
    assert_eq!(stages[4], Stage::Stage2);
    assert_eq!(stages[5], Stage::Lmft);
}

#[test]
fn same_seed_same_log() {
    let dir = tempfile::tempdir().unwrap();
    let (m0, data) = setup(dir.path());
    let mut sched = schedule();
    sched.stage1_epochs = 2;
    sched.stage2_epochs = 0;
    sched.lmft_epochs = 0;
    let run = || {
        let mut m = m0.clone();
        let log = train(&mut m, &data, &TrainOptions::new(sched.clone(), 9)).unwrap();
        (log.to_csv(), m.aggregation_weights().unwrap().normalized())
    };
    assert_eq!(run(), run());
}
