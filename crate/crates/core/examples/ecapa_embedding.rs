//! ECAPA-TDNN embedding of a feature matrix, plus parameter counts.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use svkit::ecapa::{init_params, EcapaConfig, EcapaModel};
use svkit::signal::FeatureMatrix;
use svkit::tensor::Mat;

fn main() -> svkit::Result<()> {
    for d in [40, 80, 768] {
        println!("voxceleb width, {d}-d input: {} params", EcapaConfig::voxceleb(d).param_count());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = EcapaConfig::desk(40);
    let model = EcapaModel::new(cfg.clone(), init_params(&cfg, &mut rng)?)?;
    let feats = FeatureMatrix::new(Mat::randn(200, 40, 1.0, &mut rng), 100.0)?;
    let e = model.embed_values(&feats)?;
    let norm = e.iter().map(|v| v * v).sum::<f64>().sqrt();
    println!("desk model: {} params, {}-d embedding, norm {norm:.3}", cfg.param_count(), e.len());
    Ok(())
}
