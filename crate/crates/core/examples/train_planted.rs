//! Desk-scale training run: a mock upstream with speaker information planted
//! in layer 3. The learned layer weights should peak there.
//!
//! cargo run --release --example train_planted -- [epochs]

use svkit::aggregator::{AggregationWeights, LOGITS_PARAM};
use svkit::ecapa::EcapaConfig;
use svkit::model::{load_items, Frontend, ModelSpec, PlantConfig, SpeakerModel};
use svkit::scoring::{eer, score_trials, EmbeddingStore};
use svkit::synth::{synth_corpus, SynthCorpus, SynthSpec};
use svkit::training::{train, TrainData, TrainOptions, TrainSchedule};
use svkit::upstream::MockUpstreamConfig;

const PLANT_LAYER: usize = 3;

fn heldout_eer(model: &SpeakerModel, corpus: &SynthCorpus) -> svkit::Result<f64> {
    let items = load_items(model.spec(), &corpus.heldout)?;
    let store = EmbeddingStore::from_embeddings(&model.embed_all(&items)?)?;
    let scores = score_trials(&corpus.trials, &store)?;
    Ok(eer(&scores.scores(), &corpus.trials.labels()?)?.0)
}

fn main() -> svkit::Result<()> {
    let epochs = std::env::args().nth(1).map_or(4, |a| a.parse().expect("epochs"));
    let dir = std::env::temp_dir().join("svkit-train-planted");
    let spec = SynthSpec {
        n_speakers: 20,
        utts_per_speaker: 10,
        utt_seconds: 3.0,
        ..Default::default()
    };
    let corpus = synth_corpus(&spec, &dir)?;
    let mspec = ModelSpec {
        frontend: Frontend::Mock(MockUpstreamConfig::default()),
        plant: Some(PlantConfig {
            layer: PLANT_LAYER,
            strength: 6.0,
        }),
        ecapa: EcapaConfig::desk(64),
    };
    let mut model = SpeakerModel::init(mspec, spec.n_speakers, 0)?;
    let data = TrainData::load(&model, &corpus.train)?;

    let mut sched = TrainSchedule::epochs(epochs, 0, 0);
    sched.batch_size = 2;
    let log = train(&mut model, &data, &TrainOptions::new(sched, 0))?;
    for e in &log.epochs {
        println!("epoch {} {} loss {:.4}", e.epoch, e.stage.name(), e.loss);
    }

    let w = model.aggregation_weights().expect("mock frontend has weights").normalized();
    for (l, v) in w.iter().enumerate() {
        println!("layer {l:>2} {v:.4}{}", if l == PLANT_LAYER { "  <- planted" } else { "" });
    }
    println!("heldout EER {:.4}", heldout_eer(&model, &corpus)?);

    let mut one_hot = model.clone();
    one_hot
        .params_mut()
        .insert(LOGITS_PARAM, AggregationWeights::one_hot(w.len(), PLANT_LAYER).to_mat());
    println!("heldout EER with one-hot layer {PLANT_LAYER}: {:.4}", heldout_eer(&one_hot, &corpus)?);
    Ok(())
}
