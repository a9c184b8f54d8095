//! A complete speaker model: frontend (Fbank, mock upstream or imported
//! stacks) → optional layer aggregation → ECAPA-TDNN, with one parameter
//! store holding every tensor including the AAM class anchors.

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use crate::aggregator::{aggregate_tape, AggregationWeights, LOGITS_PARAM};
use crate::ecapa::{self, EcapaConfig, SpeakerEmbedding};
use crate::error::{Error, Result};
use crate::params::{Binder, ParamStore};
use crate::seed;
use crate::signal::{fbank, read_wav, FbankConfig, Waveform};
use crate::tape::{Tape, Var};
use crate::tensor::Mat;
use crate::training::{crop_random, crop_stack_random, ClassWeights, ANCHORS_PARAM};
use crate::upstream::{
    init_mock_params, load_stack, mock_forward_tape, plant_speaker_info, speaker_direction, LayerStack,
    MockUpstreamConfig,
};

#[derive(Clone, Debug, PartialEq)]
pub enum Frontend {
    Fbank(FbankConfig),
    Mock(MockUpstreamConfig),
    /// Hidden states read from SVHS files; the shape is fixed up front.
    Imported { n_layers: usize, dim: usize },
}

impl Frontend {
    pub fn name(&self) -> &'static str {
        match self {
            Frontend::Fbank(_) => "fbank",
            Frontend::Mock(_) => "mock",
            Frontend::Imported { .. } => "import",
        }
    }

    /// `L + 1` for layer-stack frontends.
    pub fn n_hidden_states(&self) -> Option<usize> {
        match self {
            Frontend::Fbank(_) => None,
            Frontend::Mock(c) => Some(c.n_layers + 1),
            Frontend::Imported { n_layers, .. } => Some(n_layers + 1),
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self {
            Frontend::Fbank(c) => c.n_mels,
            Frontend::Mock(c) => c.dim,
            Frontend::Imported { dim, .. } => *dim,
        }
    }
}

/// Adds a speaker-dependent constant offset to one hidden layer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlantConfig {
    pub layer: usize,
    pub strength: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub frontend: Frontend,
    pub plant: Option<PlantConfig>,
    pub ecapa: EcapaConfig,
}

/// Raw model input for one utterance.
#[derive(Clone, Debug, PartialEq)]
pub enum Input {
    Wave(Waveform),
    Stack(LayerStack),
}

impl Input {
    pub fn duration_secs(&self) -> f64 {
        match self {
            Input::Wave(w) => w.duration_secs(),
            Input::Stack(s) => s.frames() as f64 / f64::from(s.frame_rate_hz()),
        }
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        self.ecapa.validate()?;
        match &self.frontend {
            Frontend::Fbank(c) => c.validate()?,
            Frontend::Mock(c) => c.validate()?,
            Frontend::Imported { n_layers, dim } => {
                if *n_layers < 1 {
                    return Err(Error::config("upstream.n_layers", "must be >= 1"));
                }
                if *dim < 1 {
                    return Err(Error::config("upstream.dim", "must be >= 1"));
                }
            }
        }
        if self.ecapa.in_dim != self.frontend.feature_dim() {
            return Err(Error::config(
                "ecapa.in_dim",
                format!("{} does not match the {} frontend dimension {}", self.ecapa.in_dim, self.frontend.name(), self.frontend.feature_dim()),
            ));
        }
        if let Some(p) = &self.plant {
            let Some(n) = self.frontend.n_hidden_states() else {
                return Err(Error::config("upstream.plant_layer", "planting needs a layer-stack frontend"));
            };
            if p.layer >= n {
                return Err(Error::config("upstream.plant_layer", format!("{} out of range 0..{n}", p.layer)));
            }
            if !(p.strength >= 0.0 && p.strength.is_finite()) {
                return Err(Error::config("upstream.plant_strength", "must be finite and >= 0"));
            }
        }
        Ok(())
    }

    pub fn load_input(&self, path: &Path) -> Result<Input> {
        match &self.frontend {
            Frontend::Fbank(_) | Frontend::Mock(_) => Ok(Input::Wave(read_wav(path)?)),
            Frontend::Imported { n_layers, dim } => {
                let s = load_stack(path)?;
                if s.n_layers() != *n_layers || s.dim() != *dim {
                    return Err(Error::format(
                        path.display().to_string(),
                        format!(
                            "stack has {} layers of dim {}, config expects {n_layers} of dim {dim}",
                            s.n_layers(),
                            s.dim()
                        ),
                    ));
                }
                Ok(Input::Stack(s))
            }
        }
    }

    pub fn crop<R: Rng + ?Sized>(&self, input: &Input, seconds: f64, rng: &mut R) -> Result<Input> {
        Ok(match input {
            Input::Wave(w) => Input::Wave(crop_random(w, seconds, rng)?),
            Input::Stack(s) => Input::Stack(crop_stack_random(s, seconds, rng)?),
        })
    }

    /// Fresh parameters: seeded ECAPA weights, uniform aggregation, random
    /// anchors for `n_classes` speakers, and the mock encoder's fixed weights.
    pub fn init_params(&self, n_classes: usize, master_seed: u64) -> Result<ParamStore> {
        self.validate()?;
        let mut store = ecapa::init_params(&self.ecapa, &mut seed::rng(master_seed, "ecapa-init"))?;
        if let Some(n) = self.frontend.n_hidden_states() {
            store.insert(LOGITS_PARAM, AggregationWeights::uniform(n).to_mat());
        }
        if let Frontend::Mock(c) = &self.frontend {
            store.extend(init_mock_params(c)?);
        }
        if n_classes > 0 {
            let anchors = ClassWeights::random(n_classes, self.ecapa.embed_dim, &mut seed::rng(master_seed, "aam-init"));
            store.insert(ANCHORS_PARAM, anchors.into_mat());
        }
        Ok(store)
    }

    /// Records the forward pass and returns the `1 × E` embedding node.
    pub fn forward_tape(&self, tape: &mut Tape, binder: &mut Binder<'_>, input: &Input, speaker_id: &str) -> Result<Var> {
        let x = match (&self.frontend, input) {
            (Frontend::Fbank(c), Input::Wave(w)) => tape.constant(fbank(w, c)?.into_frames()),
            (Frontend::Mock(c), Input::Wave(w)) => {
                let mut layers = mock_forward_tape(c, binder, tape, w)?;
                if let Some(p) = self.plant.filter(|p| p.strength > 0.0) {
                    let v: Vec<f64> = speaker_direction(speaker_id, c.dim).iter().map(|d| p.strength * d).collect();
                    let offset = tape.constant(Mat::row_vector(v));
                    layers[p.layer] = tape.add_row(layers[p.layer], offset);
                }
                let logits = binder.get(tape, LOGITS_PARAM);
                aggregate_tape(tape, &layers, logits)
            }
            (Frontend::Imported { .. }, Input::Stack(s)) => {
                let planted;
                let s = match self.plant {
                    Some(p) => {
                        planted = plant_speaker_info(s, speaker_id, p.layer, p.strength)?;
                        &planted
                    }
                    None => s,
                };
                let layers: Vec<Var> = s.layers().into_iter().map(|m| tape.constant(m)).collect();
                let logits = binder.get(tape, LOGITS_PARAM);
                aggregate_tape(tape, &layers, logits)
            }
            (f, _) => return Err(Error::invalid(format!("input kind does not match the {} frontend", f.name()))),
        };
        Ok(ecapa::forward_tape(tape, binder, &self.ecapa, x))
    }
}

/// One utterance to embed.
#[derive(Clone, Debug)]
pub struct EmbedItem {
    pub utt_id: String,
    pub speaker_id: String,
    pub input: Input,
}

#[derive(Clone, Debug)]
pub struct SpeakerModel {
    spec: ModelSpec,
    params: ParamStore,
}

impl SpeakerModel {
    pub fn init(spec: ModelSpec, n_classes: usize, master_seed: u64) -> Result<Self> {
        let params = spec.init_params(n_classes, master_seed)?;
        Ok(Self { spec, params })
    }

    /// Wraps loaded parameters after checking every tensor the spec needs.
    pub fn from_params(spec: ModelSpec, params: ParamStore) -> Result<Self> {
        let reference = spec.init_params(0, 0)?;
        for (name, m) in reference.iter() {
            match params.get(name) {
                Some(p) if p.shape() == m.shape() => {}
                Some(p) => {
                    return Err(Error::invalid(format!(
                        "checkpoint tensor `{name}` has shape {:?}, config implies {:?}",
                        p.shape(),
                        m.shape()
                    )))
                }
                None => return Err(Error::invalid(format!("checkpoint is missing `{name}`"))),
            }
        }
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore {
        self.params
    }

    pub fn aggregation_weights(&self) -> Option<AggregationWeights> {
        let m = self.params.get(LOGITS_PARAM)?;
        AggregationWeights::from_logits(m.data().to_vec()).ok()
    }

    /// Mock-encoder tensors only.
    pub fn upstream_params(&self) -> ParamStore {
        self.params.subset("upstream.")
    }

    pub fn embed_values(&self, input: &Input, speaker_id: &str) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let mut binder = Binder::frozen(&self.params);
        let e = self.spec.forward_tape(&mut tape, &mut binder, input, speaker_id)?;
        Ok(tape.value(e).data().to_vec())
    }

    pub fn embed(&self, item: &EmbedItem) -> Result<SpeakerEmbedding> {
        SpeakerEmbedding::new(item.utt_id.clone(), self.embed_values(&item.input, &item.speaker_id)?)
    }

    /// Embeds all items in parallel; output order follows input order.
    pub fn embed_all(&self, items: &[EmbedItem]) -> Result<Vec<SpeakerEmbedding>> {
        items.par_iter().map(|it| self.embed(it)).collect()
    }
}

/// Loads every manifest row as an [`EmbedItem`], in parallel.
pub fn load_items(spec: &ModelSpec, manifest: &crate::upstream::Manifest) -> Result<Vec<EmbedItem>> {
    manifest
        .rows()
        .par_iter()
        .map(|r| {
            Ok(EmbedItem {
                utt_id: r.utt_id.clone(),
                speaker_id: r.speaker_id.clone(),
                input: spec.load_input(&r.path)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mock_spec(plant: Option<PlantConfig>) -> ModelSpec {
        let up = MockUpstreamConfig {
            n_layers: 3,
            dim: 8,
            ..Default::default()
        };
        ModelSpec {
            frontend: Frontend::Mock(up),
            plant,
            ecapa: EcapaConfig::tiny(8),
        }
    }

    fn tone() -> Input {
        Input::Wave(Waveform::new((0..6400).map(|i| 0.3 * (i as f64 * 0.03).sin()).collect()).unwrap())
    }

    #[test]
    fn init_has_all_groups() {
        let m = SpeakerModel::init(mock_spec(None), 4, 1).unwrap();
        let p = m.params();
        assert!(p.contains(LOGITS_PARAM) && p.contains(ANCHORS_PARAM) && p.contains("upstream.conv0.w"));
        assert_eq!(m.aggregation_weights().unwrap().normalized(), vec![0.25; 4]);
        assert!(SpeakerModel::from_params(mock_spec(None), p.clone()).is_ok());
        assert!(SpeakerModel::from_params(mock_spec(None), p.subset("ecapa.")).is_err());
    }

    #[test]
    fn planted_tape_path_matches_stack_fixture() {
        // tape-side planting must agree with plant_speaker_info on the exported stack
        let spec = mock_spec(Some(PlantConfig { layer: 2, strength: 3.0 }));
        let model = SpeakerModel::init(spec.clone(), 0, 2).unwrap();
        let Frontend::Mock(up) = &spec.frontend else { unreachable!() };
        let Input::Wave(w) = tone() else { unreachable!() };
        let stack = crate::upstream::MockUpstream::with_params(up.clone(), model.upstream_params())
            .unwrap()
            .forward(&w)
            .unwrap();
        let planted = plant_speaker_info(&stack, "spk3", 2, 3.0).unwrap();
        let imported = ModelSpec {
            frontend: Frontend::Imported { n_layers: 3, dim: 8 },
            plant: None,
            ..spec.clone()
        };
        let a = model.embed_values(&tone(), "spk3").unwrap();
        let mut tape = Tape::new();
        let mut binder = Binder::frozen(model.params());
        let e = imported.forward_tape(&mut tape, &mut binder, &Input::Stack(planted), "spk3").unwrap();
        for (x, y) in a.iter().zip(tape.value(e).data()) {
            assert!((x - y).abs() < 1e-3, "{x} vs {y}");
        }
        assert_ne!(a, model.embed_values(&tone(), "spk4").unwrap());
    }

    #[test]
    fn validation() {
        let mut s = mock_spec(Some(PlantConfig { layer: 4, strength: 1.0 }));
        assert!(s.validate().is_err());
        s.plant = None;
        s.ecapa.in_dim = 40;
        assert!(s.validate().is_err());
        let f = ModelSpec {
            frontend: Frontend::Fbank(FbankConfig::default()),
            plant: Some(PlantConfig { layer: 0, strength: 1.0 }),
            ecapa: EcapaConfig::tiny(40),
        };
        assert!(f.validate().is_err());
    }
}
