//! Softmax layer aggregation and the weight export format.

use svkit::aggregator::{aggregate, export_weights, AggregationWeights};
use svkit::signal::Waveform;
use svkit::upstream::{mock_forward, MockUpstreamConfig};

fn main() -> svkit::Result<()> {
    let cfg = MockUpstreamConfig {
        n_layers: 4,
        ..Default::default()
    };
    let samples: Vec<f64> = (0..8_000).map(|i| ((i * 7919) % 97) as f64 / 97.0 - 0.5).collect();
    let stack = mock_forward(&Waveform::new(samples)?, &cfg)?;

    let labels: Vec<String> = (0..stack.n_layers_plus_1()).map(|l| format!("layer_{l}")).collect();
    let uniform = AggregationWeights::uniform(stack.n_layers_plus_1());
    print!("{}", export_weights(&uniform, &labels)?);

    let learned = AggregationWeights::from_logits(vec![0.0, 0.5, 2.0, 0.5, -1.0])?;
    print!("{}", export_weights(&learned, &labels)?);

    let feats = aggregate(&stack, &learned)?;
    println!("aggregated features: {} x {}", feats.n_frames(), feats.dim());
    Ok(())
}
