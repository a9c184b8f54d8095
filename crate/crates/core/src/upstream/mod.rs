//! Layer stacks `H_0 … H_L`: the mock encoder, SVHS import/export, manifests,
//! and the planted-speaker fixture.

mod manifest;
mod mock;
mod stack;

pub use manifest::{Manifest, ManifestRow};
pub use mock::{
    conv_bias_name, conv_weight_name, init_mock_params, layer_bias_name, layer_weight_name, mock_forward,
    mock_forward_tape, MockUpstream, MockUpstreamConfig,
};
pub use stack::{load_stack, save_stack, LayerStack, SVHS_MAGIC, SVHS_VERSION};

use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::seed;

/// Unit vector in `dim` dimensions determined by a hash of the speaker id.
pub fn speaker_direction(speaker_id: &str, dim: usize) -> Vec<f64> {
    let mut rng = seed::Rng::seed_from_u64(seed::derive(seed::fnv1a(speaker_id.as_bytes()), "planted-speaker"));
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = crate::tensor::l2_norm(&v);
        if norm > 0.0 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Adds `strength · v(speaker_id)` to every frame of layer `layer_k`.
pub fn plant_speaker_info(stack: &LayerStack, speaker_id: &str, layer_k: usize, strength: f64) -> Result<LayerStack> {
    if layer_k >= stack.n_layers_plus_1() {
        return Err(Error::invalid(format!(
            "layer index {layer_k} out of range 0..={}",
            stack.n_layers()
        )));
    }
    if !(strength >= 0.0 && strength.is_finite()) {
        return Err(Error::invalid("plant strength must be finite and >= 0"));
    }
    let mut out = stack.clone();
    if strength == 0.0 {
        return Ok(out);
    }
    let dim = stack.dim();
    let v = speaker_direction(speaker_id, dim);
    for frame in out.layer_slice_mut(layer_k).chunks_exact_mut(dim) {
        for (x, d) in frame.iter_mut().zip(&v) {
            *x = (f64::from(*x) + strength * d) as f32;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::Waveform;

    fn stack() -> LayerStack {
        let wav = Waveform::new((0..6400).map(|i| 0.2 * (i as f64 * 0.01).sin()).collect()).unwrap();
        mock_forward(&wav, &MockUpstreamConfig { n_layers: 4, dim: 16, ..Default::default() }).unwrap()
    }

    #[test]
    fn zero_strength_is_identity() {
        let s = stack();
        assert_eq!(plant_speaker_info(&s, "spk1", 2, 0.0).unwrap(), s);
    }

    #[test]
    fn same_speaker_same_offset_only_on_target_layer() {
        let s = stack();
        let a = plant_speaker_info(&s, "spk7", 3, 2.0).unwrap();
        let v = speaker_direction("spk7", 16);
        assert!((crate::tensor::l2_norm(&v) - 1.0).abs() < 1e-12);
        for l in 0..s.n_layers_plus_1() {
            let (orig, got) = (s.layer(l), a.layer(l));
            for t in 0..s.frames() {
                for d in 0..16 {
                    let want = if l == 3 { orig.get(t, d) + 2.0 * v[d] } else { orig.get(t, d) };
                    assert!((got.get(t, d) - want).abs() < 1e-5);
                }
            }
        }
        assert_ne!(speaker_direction("spk7", 16), speaker_direction("spk8", 16));
    }

    #[test]
    fn layer_out_of_range() {
        let s = stack();
        assert!(plant_speaker_info(&s, "x", s.n_layers() + 3, 1.0).is_err());
    }

    #[test]
    fn planting_commutes_across_layers() {
        let s = stack();
        let ab = plant_speaker_info(&plant_speaker_info(&s, "a", 1, 1.5).unwrap(), "b", 3, 0.7).unwrap();
        let ba = plant_speaker_info(&plant_speaker_info(&s, "b", 3, 0.7).unwrap(), "a", 1, 1.5).unwrap();
        assert_eq!(ab, ba);
    }
}
