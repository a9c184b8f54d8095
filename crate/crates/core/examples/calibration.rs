//! Logistic calibration with duration quality features.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use svkit::scoring::{apply_calibration, eer, fit_calibration, quality_features};

fn main() -> svkit::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut scores, mut labels, mut quality) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..400 {
        let target = i % 2 == 0;
        // short utterances give noisier scores
        let secs: f64 = if i % 3 == 0 { 1.5 } else { 8.0 };
        let noise = Normal::new(0.0, 0.6 / secs.sqrt()).unwrap().sample(&mut rng);
        scores.push(if target { 0.5 } else { 0.1 } + noise);
        labels.push(target);
        quality.push(quality_features(secs, 6.0)?);
    }
    let model = fit_calibration(&scores, &labels, &quality)?;
    println!("a {:.4}  b {:?}  c {:.4}", model.a, model.b, model.c);
    let calibrated = apply_calibration(&model, &scores, &quality)?;
    println!("EER raw {:.4}, calibrated {:.4}", eer(&scores, &labels)?.0, eer(&calibrated, &labels)?.0);

    let score_only = fit_calibration(&scores, &labels, &vec![Vec::new(); scores.len()])?;
    println!("score-only a {:.4} c {:.4}", score_only.a, score_only.c);
    Ok(())
}
