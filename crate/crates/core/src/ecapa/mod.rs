//! ECAPA-TDNN embedding extractor.
//!
//! Architecture: stem TDNN (k=5) → 3 × SE-Res2Block (dilations 2, 3, 4) →
//! multi-layer feature aggregation (concat + 1×1 conv) → attentive statistics
//! pooling → affine projection to the embedding.
//!
//! Every TDNN unit is conv → ReLU → per-frame channel normalisation with a
//! learnable gain and bias, so the network never mixes statistics across
//! utterances in a batch.

mod config;

pub use config::EcapaConfig;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::params::{Binder, ParamStore};
use crate::signal::FeatureMatrix;
use crate::tape::{Tape, Var};
use crate::tensor::{l2_norm, Mat};

pub const NORM_EPS: f64 = 1e-5;
pub const POOL_VAR_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct SpeakerEmbedding {
    pub utt_id: String,
    pub values: Vec<f64>,
}

impl SpeakerEmbedding {
    pub fn new(utt_id: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        let utt_id = utt_id.into();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::degenerate(format!("embedding for `{utt_id}` is not finite")));
        }
        if l2_norm(&values) == 0.0 {
            return Err(Error::degenerate(format!("embedding for `{utt_id}` has zero norm")));
        }
        Ok(Self { utt_id, values })
    }
}

/// Seeded initial parameters for `cfg`.
pub fn init_params<R: Rng + ?Sized>(cfg: &EcapaConfig, rng: &mut R) -> Result<ParamStore> {
    cfg.validate()?;
    let mut store = ParamStore::new();
    for (name, (rows, cols)) in cfg.param_shapes() {
        let m = if name.ends_with(".norm.g") {
            Mat::filled(rows, cols, 1.0)
        } else if name.ends_with(".b") || name.ends_with(".b1") || name.ends_with(".b2") {
            Mat::zeros(rows, cols)
        } else if name.ends_with("pool.v") {
            Mat::randn(rows, cols, 1.0 / (rows as f64).sqrt(), rng)
        } else {
            // ReLU-facing layers get He scaling; the rest unit-variance scaling.
            let relu_facing = !(name.contains(".se.") || name.contains("pool.") || name.contains("proj."));
            let gain = if relu_facing { 2.0 } else { 1.0 };
            Mat::randn(rows, cols, (gain / rows as f64).sqrt(), rng)
        };
        store.insert(name, m);
    }
    Ok(store)
}

/// conv → ReLU → per-frame normalisation with gain/bias under `prefix`.
pub fn tdnn_unit(tape: &mut Tape, binder: &mut Binder<'_>, prefix: &str, x: Var, kernel: usize, dilation: usize) -> Var {
    let w = binder.get(tape, &format!("{prefix}.w"));
    let b = binder.get(tape, &format!("{prefix}.b"));
    let g = binder.get(tape, &format!("{prefix}.norm.g"));
    let beta = binder.get(tape, &format!("{prefix}.norm.b"));
    let h = tape.conv1d(x, w, Some(b), kernel, dilation);
    let h = tape.relu(h);
    let h = tape.norm_rows(h, NORM_EPS);
    let h = tape.mul_row(h, g);
    tape.add_row(h, beta)
}

/// Squeeze-excitation: `x ∘ sigmoid(W2·relu(W1·mean_t(x) + b1) + b2)`.
pub fn se_gate(tape: &mut Tape, binder: &mut Binder<'_>, prefix: &str, x: Var) -> Var {
    let w1 = binder.get(tape, &format!("{prefix}.w1"));
    let b1 = binder.get(tape, &format!("{prefix}.b1"));
    let w2 = binder.get(tape, &format!("{prefix}.w2"));
    let b2 = binder.get(tape, &format!("{prefix}.b2"));
    let m = tape.mean_rows(x);
    let z = tape.matmul(m, w1);
    let z = tape.add_row(z, b1);
    let z = tape.relu(z);
    let z = tape.matmul(z, w2);
    let z = tape.add_row(z, b2);
    let s = tape.sigmoid(z);
    tape.mul_row(x, s)
}

/// Hierarchical multi-scale convolution: group 0 passes through, group 1 is
/// convolved directly, group `i ≥ 2` adds the previous group's output first.
fn res2(tape: &mut Tape, binder: &mut Binder<'_>, cfg: &EcapaConfig, prefix: &str, x: Var, dilation: usize) -> Var {
    let w = cfg.group_width();
    let mut outs = Vec::with_capacity(cfg.res2_scale);
    outs.push(tape.slice_cols(x, 0, w));
    for j in 1..cfg.res2_scale {
        let part = tape.slice_cols(x, j * w, w);
        let input = if j >= 2 { tape.add(part, outs[j - 1]) } else { part };
        outs.push(tdnn_unit(tape, binder, &format!("{prefix}.res2.{j}"), input, 3, dilation));
    }
    tape.concat_cols(&outs)
}

/// 1×1 TDNN → Res2 dilated convolutions → 1×1 TDNN → SE gate → residual add.
pub fn se_res2_block(
    tape: &mut Tape,
    binder: &mut Binder<'_>,
    cfg: &EcapaConfig,
    prefix: &str,
    x: Var,
    dilation: usize,
) -> Var {
    let h = tdnn_unit(tape, binder, &format!("{prefix}.conv1"), x, 1, 1);
    let h = res2(tape, binder, cfg, prefix, h, dilation);
    let h = tdnn_unit(tape, binder, &format!("{prefix}.conv2"), h, 1, 1);
    let h = se_gate(tape, binder, &format!("{prefix}.se"), h);
    tape.add(h, x)
}

/// Attention-weighted mean and standard deviation over time, `1 × 2C'`.
/// One attention distribution is shared by all channels.
pub fn attentive_stats_pool(tape: &mut Tape, binder: &mut Binder<'_>, prefix: &str, x: Var) -> Var {
    let w = binder.get(tape, &format!("{prefix}.w"));
    let b = binder.get(tape, &format!("{prefix}.b"));
    let v = binder.get(tape, &format!("{prefix}.v"));
    let h = tape.matmul(x, w);
    let h = tape.add_row(h, b);
    let h = tape.tanh(h);
    let scores = tape.matmul(h, v);
    let alpha = tape.softmax_cols(scores);
    let alpha_t = tape.transpose(alpha);
    let mu = tape.matmul(alpha_t, x);
    let x2 = tape.square(x);
    let ex2 = tape.matmul(alpha_t, x2);
    let mu2 = tape.square(mu);
    let var = tape.sub(ex2, mu2);
    let var = tape.clamp_min(var, POOL_VAR_FLOOR);
    let sigma = tape.sqrt(var);
    tape.concat_cols(&[mu, sigma])
}

/// Embedding `1 × E` for a `T × F` input node.
pub fn forward_tape(tape: &mut Tape, binder: &mut Binder<'_>, cfg: &EcapaConfig, x: Var) -> Var {
    let mut h = tdnn_unit(tape, binder, "ecapa.stem", x, cfg.stem_kernel, 1);
    let mut outs = Vec::with_capacity(3);
    for (i, &d) in cfg.dilations.iter().enumerate() {
        h = se_res2_block(tape, binder, cfg, &format!("ecapa.block{i}"), h, d);
        outs.push(h);
    }
    let cat = tape.concat_cols(&outs);
    let wm = binder.get(tape, "ecapa.mfa.w");
    let bm = binder.get(tape, "ecapa.mfa.b");
    let m = tape.matmul(cat, wm);
    let m = tape.add_row(m, bm);
    let m = tape.relu(m);
    let pooled = attentive_stats_pool(tape, binder, "ecapa.pool", m);
    let wp = binder.get(tape, "ecapa.proj.w");
    let bp = binder.get(tape, "ecapa.proj.b");
    let e = tape.matmul(pooled, wp);
    tape.add_row(e, bp)
}

/// ECAPA-TDNN with fixed parameters, for inference.
#[derive(Clone, Debug)]
pub struct EcapaModel {
    cfg: EcapaConfig,
    params: ParamStore,
}

impl EcapaModel {
    pub fn new(cfg: EcapaConfig, params: ParamStore) -> Result<Self> {
        cfg.validate()?;
        for (name, shape) in cfg.param_shapes() {
            match params.get(&name) {
                Some(m) if m.shape() == shape => {}
                Some(m) => {
                    return Err(Error::invalid(format!("parameter `{name}` has shape {:?}, expected {shape:?}", m.shape())))
                }
                None => return Err(Error::invalid(format!("missing parameter `{name}`"))),
            }
        }
        Ok(Self { cfg, params })
    }

    pub fn config(&self) -> &EcapaConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn embed_values(&self, features: &FeatureMatrix) -> Result<Vec<f64>> {
        if features.dim() != self.cfg.in_dim {
            return Err(Error::invalid(format!(
                "feature dimension {} does not match ecapa.in_dim {}",
                features.dim(),
                self.cfg.in_dim
            )));
        }
        let mut tape = Tape::new();
        let mut binder = Binder::frozen(&self.params);
        let x = tape.constant(features.frames().clone());
        let e = forward_tape(&mut tape, &mut binder, &self.cfg, x);
        Ok(tape.value(e).data().to_vec())
    }

    pub fn embed(&self, utt_id: &str, features: &FeatureMatrix) -> Result<SpeakerEmbedding> {
        SpeakerEmbedding::new(utt_id, self.embed_values(features)?)
    }

    /// Embeds each input independently (in parallel); output order follows input order.
    pub fn embed_batch(&self, inputs: &[(String, FeatureMatrix)]) -> Result<Vec<SpeakerEmbedding>> {
        inputs.par_iter().map(|(id, f)| self.embed(id, f)).collect()
    }
}
