//! Adaptive symmetric score normalisation against a speaker cohort.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use svkit::scoring::{adaptive_snorm, score_trials, Cohort, EmbeddingStore, Trial, TrialList};

fn randv(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

fn main() -> svkit::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let d = 8;
    let speakers: Vec<String> = (0..40).map(|i| format!("coh{i:02}")).collect();
    let members: Vec<Vec<f64>> = speakers.iter().map(|_| randv(&mut rng, d)).collect();
    let cohort = Cohort::new(speakers, members, 10)?;

    let mut store = EmbeddingStore::new(d);
    for id in ["x", "y", "z"] {
        store.insert(id.to_string(), randv(&mut rng, d))?;
    }
    let trials = TrialList::new(
        [("x", "y"), ("x", "z"), ("y", "z")]
            .iter()
            .map(|(e, t)| Trial {
                label: None,
                enroll: e.to_string(),
                test: t.to_string(),
            })
            .collect(),
    );
    let raw = score_trials(&trials, &store)?;
    let norm = adaptive_snorm(&raw, &store, &cohort)?;
    for (r, n) in raw.rows.iter().zip(&norm.rows) {
        println!("{} {}  raw {:+.4}  s-norm {:+.4}", r.enroll, r.test, r.score, n.score);
    }
    Ok(())
}
