//! Generate a small formant-speaker corpus and print its layout.
//!
//! cargo run --example synth_corpus -- [out_dir]

use svkit::synth::{synth_corpus, synth_speaker, SynthSpec};

fn main() -> svkit::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| std::env::temp_dir().join("svkit-synth"));
    let spec = SynthSpec {
        n_speakers: 5,
        utts_per_speaker: 4,
        utt_seconds: 1.0,
        heldout_per_speaker: 2,
        ..Default::default()
    };
    for s in 0..spec.n_speakers {
        let p = synth_speaker(&spec, s)?;
        let f: Vec<String> = p.formants.iter().map(|(c, _)| format!("{c:.0}")).collect();
        println!("speaker {s}: formants {} Hz", f.join("/"));
    }
    let c = synth_corpus(&spec, &out)?;
    println!(
        "{} utterances ({} train, {} heldout), {} trials in {}",
        c.all.len(),
        c.train.len(),
        c.heldout.len(),
        c.trials.len(),
        out.display()
    );
    Ok(())
}
