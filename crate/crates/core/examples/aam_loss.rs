//! Additive angular margin softmax on random embeddings.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use svkit::tensor::Mat;
use svkit::training::{aam_loss, aam_loss_with_grads, AamConfig, ClassWeights};

fn main() -> svkit::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let anchors = ClassWeights::random(5, 16, &mut rng);
    let emb = Mat::randn(8, 16, 1.0, &mut rng);
    let labels = [0, 1, 2, 3, 4, 0, 1, 2];

    let cfg = AamConfig::new(5);
    for m in [0.0, 0.2, 0.5] {
        println!("margin {m}: loss {:.4}", aam_loss(&emb, &labels, &anchors, &cfg.with_margin(m))?);
    }
    let out = aam_loss_with_grads(&emb, &labels, &anchors, &cfg)?;
    let g = out.grad_embeddings.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    println!("loss {:.4}, |dL/de| {g:.4}", out.loss);
    Ok(())
}
