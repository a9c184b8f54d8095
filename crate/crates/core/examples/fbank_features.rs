//! Log-mel filterbank of a synthetic utterance.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use svkit::signal::{fbank, mel_center_frequencies, FbankConfig};
use svkit::synth::{synth_speaker, synth_utterance, SynthSpec};

fn main() -> svkit::Result<()> {
    let spec = SynthSpec::default();
    let speaker = synth_speaker(&spec, 0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let wav = synth_utterance(&speaker, 0, 1.5, spec.formant_jitter, &mut rng)?;

    let cfg = FbankConfig::default();
    let f = fbank(&wav, &cfg)?;
    println!("{:.2} s -> {} frames x {} bins at {} Hz", wav.duration_secs(), f.n_frames(), f.dim(), f.frame_rate_hz());

    // average energy per mel band; the formants show up as the peaks
    let m = f.frames();
    let centres = mel_center_frequencies(&cfg);
    for c in 0..m.cols() {
        let mean = (0..m.rows()).map(|r| m.get(r, c)).sum::<f64>() / m.rows() as f64;
        let bar = "#".repeat(((mean + 12.0).max(0.0) * 2.0) as usize);
        println!("{:>6.0} Hz {mean:>7.2} {bar}", centres[c]);
    }
    Ok(())
}
