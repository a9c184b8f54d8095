//! Additive angular margin softmax.

use std::f64::consts::FRAC_PI_2;

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::Binder;
use crate::tape::{Tape, Var};
use crate::tensor::{l2_norm, Mat};

pub const ANCHORS_PARAM: &str = "aam.anchors";

#[derive(Clone, Debug, PartialEq)]
pub struct AamConfig {
    pub margin: f64,
    pub scale: f64,
    pub n_classes: usize,
}

impl AamConfig {
    pub fn new(n_classes: usize) -> Self {
        Self {
            margin: 0.2,
            scale: 30.0,
            n_classes,
        }
    }

    pub fn with_margin(&self, margin: f64) -> Self {
        Self { margin, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..FRAC_PI_2).contains(&self.margin) {
            return Err(Error::config("aam.margin", "must satisfy 0 <= m < pi/2"));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::config("aam.scale", "must be > 0"));
        }
        if self.n_classes < 1 {
            return Err(Error::invalid("AAM needs at least one class"));
        }
        Ok(())
    }
}

/// `n_classes × E` class anchors. Rows are unit-normalised inside the loss,
/// so the stored scale is irrelevant.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassWeights {
    anchors: Mat,
}

impl ClassWeights {
    pub fn new(anchors: Mat) -> Result<Self> {
        if anchors.rows() == 0 || anchors.cols() == 0 {
            return Err(Error::invalid("class anchors must be non-empty"));
        }
        if !anchors.is_finite() {
            return Err(Error::degenerate("class anchors are not finite"));
        }
        Ok(Self { anchors })
    }

    pub fn random<R: Rng + ?Sized>(n_classes: usize, dim: usize, rng: &mut R) -> Self {
        Self {
            anchors: Mat::randn(n_classes, dim, 1.0 / (dim as f64).sqrt(), rng),
        }
    }

    pub fn n_classes(&self) -> usize {
        self.anchors.rows()
    }

    pub fn dim(&self) -> usize {
        self.anchors.cols()
    }

    pub fn as_mat(&self) -> &Mat {
        &self.anchors
    }

    pub fn into_mat(self) -> Mat {
        self.anchors
    }
}

fn check_rows_nonzero(m: &Mat, what: &str) -> Result<()> {
    for r in 0..m.rows() {
        if l2_norm(m.row(r)) == 0.0 {
            return Err(Error::degenerate(format!("{what} row {r} has zero norm")));
        }
    }
    Ok(())
}

pub fn check_labels(labels: &[usize], n_classes: usize) -> Result<()> {
    if labels.is_empty() {
        return Err(Error::invalid("AAM loss needs at least one embedding"));
    }
    if let Some(bad) = labels.iter().find(|&&y| y >= n_classes) {
        return Err(Error::invalid(format!("label {bad} out of range 0..{n_classes}")));
    }
    Ok(())
}

/// Rows of `x` scaled to unit norm.
pub fn unit_rows(tape: &mut Tape, x: Var) -> Var {
    let sq = tape.square(x);
    let n2 = tape.sum_cols(sq);
    let n = tape.sqrt(n2);
    let inv = tape.recip(n);
    tape.mul_col(x, inv)
}

/// Records the AAM loss of `embeddings` (B × E) against `anchors` (n × E).
/// Callers validate labels and norms first; see [`aam_loss`].
pub fn aam_loss_tape(tape: &mut Tape, embeddings: Var, anchors: Var, labels: &[usize], cfg: &AamConfig) -> Var {
    let e = unit_rows(tape, embeddings);
    let a = unit_rows(tape, anchors);
    let at = tape.transpose(a);
    let cos = tape.matmul(e, at);
    let logits = tape.aam_logits(cos, labels, cfg.scale, cfg.margin);
    tape.cross_entropy(logits, labels)
}

/// Loss and gradients with respect to embeddings and anchors.
#[derive(Clone, Debug)]
pub struct AamOutput {
    pub loss: f64,
    pub grad_embeddings: Mat,
    pub grad_anchors: Mat,
}

pub fn aam_loss_with_grads(embeddings: &Mat, labels: &[usize], anchors: &ClassWeights, cfg: &AamConfig) -> Result<AamOutput> {
    cfg.validate()?;
    check_labels(labels, anchors.n_classes())?;
    if embeddings.rows() != labels.len() {
        return Err(Error::invalid(format!("{} embeddings for {} labels", embeddings.rows(), labels.len())));
    }
    if embeddings.cols() != anchors.dim() {
        return Err(Error::invalid(format!(
            "embedding dimension {} does not match anchors {}",
            embeddings.cols(),
            anchors.dim()
        )));
    }
    check_rows_nonzero(embeddings, "embedding")?;
    check_rows_nonzero(anchors.as_mat(), "anchor")?;
    let mut tape = Tape::new();
    let e = tape.param(embeddings.clone());
    let a = tape.param(anchors.as_mat().clone());
    let loss = aam_loss_tape(&mut tape, e, a, labels, cfg);
    let grads = tape.backward(loss);
    Ok(AamOutput {
        loss: tape.scalar(loss),
        grad_embeddings: grads.get_or_zeros(e, embeddings),
        grad_anchors: grads.get_or_zeros(a, anchors.as_mat()),
    })
}

/// Mean AAM cross-entropy over the batch.
pub fn aam_loss(embeddings: &Mat, labels: &[usize], anchors: &ClassWeights, cfg: &AamConfig) -> Result<f64> {
    aam_loss_with_grads(embeddings, labels, anchors, cfg).map(|o| o.loss)
}

/// Binds the anchors parameter and records the loss for one batch.
pub fn aam_loss_bound(
    tape: &mut Tape,
    binder: &mut Binder<'_>,
    embeddings: Var,
    labels: &[usize],
    cfg: &AamConfig,
) -> Result<Var> {
    check_labels(labels, cfg.n_classes)?;
    check_rows_nonzero(tape.value(embeddings), "embedding")?;
    let anchors = binder.get(tape, ANCHORS_PARAM);
    if tape.value(anchors).rows() != cfg.n_classes {
        return Err(Error::invalid(format!(
            "checkpoint has {} class anchors, training needs {}",
            tape.value(anchors).rows(),
            cfg.n_classes
        )));
    }
    Ok(aam_loss_tape(tape, embeddings, anchors, labels, cfg))
}
