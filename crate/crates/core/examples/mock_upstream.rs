//! Run the mock upstream, plant a speaker offset in one layer, and round-trip
//! the hidden states through an SVHS file.

use svkit::signal::Waveform;
use svkit::upstream::{load_stack, mock_forward, plant_speaker_info, save_stack, MockUpstreamConfig};

fn main() -> svkit::Result<()> {
    let cfg = MockUpstreamConfig::default();
    let samples: Vec<f64> = (0..16_000).map(|i| (i as f64 * 0.07).sin() * 0.3).collect();
    let stack = mock_forward(&Waveform::new(samples)?, &cfg)?;
    println!(
        "{} hidden states, {} frames, dim {}, {} Hz",
        stack.n_layers_plus_1(),
        stack.frames(),
        stack.dim(),
        stack.frame_rate_hz()
    );

    let planted = plant_speaker_info(&stack, "spk003", 3, 6.0)?;
    for l in 0..stack.n_layers_plus_1() {
        let moved = stack
            .layer_slice(l)
            .iter()
            .zip(planted.layer_slice(l))
            .any(|(a, b)| a != b);
        if moved {
            println!("layer {l} carries the planted offset");
        }
    }

    let path = std::env::temp_dir().join("svkit-example.svhs");
    save_stack(&planted, &path)?;
    assert_eq!(load_stack(&path)?, planted);
    println!("round trip through {} ok", path.display());
    Ok(())
}
