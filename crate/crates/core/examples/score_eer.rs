//! Cosine scoring of a trial list and the equal error rate.

use svkit::ecapa::SpeakerEmbedding;
use svkit::scoring::{eer, score_trials, EmbeddingStore, Trial, TrialList};

fn main() -> svkit::Result<()> {
    let emb = [
        ("a1", vec![1.0, 0.1, 0.0]),
        ("a2", vec![0.9, 0.2, 0.1]),
        ("b1", vec![0.0, 1.0, 0.2]),
        ("b2", vec![0.1, 0.8, 0.0]),
        ("c1", vec![0.5, 0.5, 0.7]),
    ];
    let store = EmbeddingStore::from_embeddings(
        &emb.iter()
            .map(|(id, v)| SpeakerEmbedding::new(*id, v.clone()))
            .collect::<svkit::Result<Vec<_>>>()?,
    )?;
    let pairs = [("a1", "a2", true), ("b1", "b2", true), ("a1", "b1", false), ("a2", "c1", false), ("b2", "c1", false)];
    let trials = TrialList::new(
        pairs
            .iter()
            .map(|(e, t, l)| Trial {
                label: Some(*l),
                enroll: e.to_string(),
                test: t.to_string(),
            })
            .collect(),
    );
    let scores = score_trials(&trials, &store)?;
    print!("{}", scores.to_text());
    let (rate, threshold) = eer(&scores.scores(), &trials.labels()?)?;
    println!("EER {rate:.4} at threshold {threshold:.4}");
    Ok(())
}
