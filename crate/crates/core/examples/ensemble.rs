//! Fuse two systems' scores with weights inversely proportional to EER.

use svkit::scoring::{eer, ensemble, weights_from_eer, ScoreSet, TrialList};

fn main() -> svkit::Result<()> {
    let trials = TrialList::parse("1 a b\n0 a c\n1 d e\n0 d f\n1 g h\n0 g i\n", "trials")?;
    let labels = trials.labels()?;
    let s1 = ScoreSet::from_trials(&trials, vec![0.9, 0.2, 0.4, 0.5, 0.7, 0.1])?;
    let s2 = ScoreSet::from_trials(&trials, vec![0.6, 0.5, 0.8, 0.1, 0.3, 0.4])?;
    let eers = [eer(&s1.scores(), &labels)?.0, eer(&s2.scores(), &labels)?.0];
    let w = weights_from_eer(&eers)?;
    let fused = ensemble(&[s1, s2], &w)?;
    println!("system EERs {eers:.3?}, weights {w:.3?}");
    print!("{}", fused.to_text());
    println!("fused EER {:.3}", eer(&fused.scores(), &labels)?.0);
    Ok(())
}
