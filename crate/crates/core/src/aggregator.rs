//! Learnable weighted average over hidden layers: `o_t = Σ_l w_l · h_{l,t}`
//! with `w = softmax(logits)`, layer 0 included.

use crate::error::{Error, Result};
use crate::signal::FeatureMatrix;
use crate::tape::{softmax_in_place, Tape, Var};
use crate::tensor::Mat;
use crate::upstream::LayerStack;

/// Parameter-store key of the aggregation logits.
pub const LOGITS_PARAM: &str = "aggregator.logits";

#[derive(Clone, Debug, PartialEq)]
pub struct AggregationWeights {
    logits: Vec<f64>,
}

impl AggregationWeights {
    /// All-zero logits, i.e. uniform weights over `n` layers.
    pub fn uniform(n: usize) -> Self {
        Self { logits: vec![0.0; n] }
    }

    pub fn from_logits(logits: Vec<f64>) -> Result<Self> {
        if logits.is_empty() {
            return Err(Error::invalid("aggregation needs at least one layer"));
        }
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("aggregation logits must be finite"));
        }
        Ok(Self { logits })
    }

    /// Logits that put (numerically) all weight on layer `k`.
    pub fn one_hot(n: usize, k: usize) -> Self {
        let mut logits = vec![0.0; n];
        logits[k] = 40.0;
        Self { logits }
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }

    pub fn normalized(&self) -> Vec<f64> {
        let mut w = self.logits.clone();
        softmax_in_place(&mut w);
        w
    }

    pub fn to_mat(&self) -> Mat {
        Mat::row_vector(self.logits.clone())
    }
}

pub fn normalized_weights(logits: &[f64]) -> Result<Vec<f64>> {
    Ok(AggregationWeights::from_logits(logits.to_vec())?.normalized())
}

/// Weighted sum of the stack's layers as a `T × D` feature matrix.
pub fn aggregate(stack: &LayerStack, weights: &AggregationWeights) -> Result<FeatureMatrix> {
    if weights.len() != stack.n_layers_plus_1() {
        return Err(Error::invalid(format!(
            "{} weights for {} hidden states",
            weights.len(),
            stack.n_layers_plus_1()
        )));
    }
    let w = weights.normalized();
    let mut out = Mat::zeros(stack.frames(), stack.dim());
    for (l, wl) in w.iter().enumerate() {
        for (o, &v) in out.data_mut().iter_mut().zip(stack.layer_slice(l)) {
            *o += wl * f64::from(v);
        }
    }
    FeatureMatrix::new(out, f64::from(stack.frame_rate_hz()))
}

/// Differentiable form of [`aggregate`]; `logits` is a `1 × (L+1)` node.
pub fn aggregate_tape(tape: &mut Tape, layers: &[Var], logits: Var) -> Var {
    let w = tape.softmax_rows(logits);
    tape.mix(layers, w)
}

/// CSV table `layer,weight` with one row per layer (layer 0 first) and
/// 6-decimal weights. Empty `labels` yields `layer_0 … layer_L`.
pub fn export_weights(weights: &AggregationWeights, labels: &[String]) -> Result<String> {
    if !labels.is_empty() && labels.len() != weights.len() {
        return Err(Error::invalid(format!("{} labels for {} weights", labels.len(), weights.len())));
    }
    let mut out = String::from("layer,weight\n");
    for (i, w) in weights.normalized().iter().enumerate() {
        let label = labels.get(i).cloned().unwrap_or_else(|| format!("layer_{i}"));
        out.push_str(&format!("{label},{w:.6}\n"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn stack_from(layers: &[Mat]) -> LayerStack {
        LayerStack::from_layers(layers, 50.0).unwrap()
    }

    #[test]
    fn closed_form_softmax_values() {
        let w = normalized_weights(&[0.0, 0.0, 0.0]).unwrap();
        for v in w {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let w = normalized_weights(&[0.0, 0.0, 2f64.ln()]).unwrap();
        assert!((w[0] - 0.25).abs() < 1e-15 && (w[1] - 0.25).abs() < 1e-15 && (w[2] - 0.5).abs() < 1e-15);
        assert!(normalized_weights(&[0.0, f64::NAN]).is_err());
    }

    #[test]
    fn identical_layers_reduce_to_that_layer() {
        let h = Mat::from_rows(&[vec![0.5, -1.0], vec![2.0, 0.25]]);
        let s = stack_from(&[h.clone(), h.clone(), h.clone()]);
        let w = AggregationWeights::from_logits(vec![0.3, -1.2, 2.0]).unwrap();
        let out = aggregate(&s, &w).unwrap();
        for (a, b) in out.frames().data().iter().zip(h.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn two_orthogonal_layers_average() {
        let a = Mat::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]);
        let b = Mat::from_rows(&[vec![0.0, 1.0], vec![0.0, 1.0]]);
        let out = aggregate(&stack_from(&[a, b]), &AggregationWeights::uniform(2)).unwrap();
        assert!(out.frames().data().iter().all(|&v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn saturated_one_hot_selects_layer() {
        let layers: Vec<Mat> = (0..5).map(|l| Mat::filled(3, 2, l as f64 + 0.5)).collect();
        let s = stack_from(&layers);
        let out = aggregate(&s, &AggregationWeights::one_hot(5, 2)).unwrap();
        assert!(out.frames().data().iter().all(|&v| (v - 2.5).abs() < 1e-6));
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let s = stack_from(&[Mat::zeros(1, 1), Mat::zeros(1, 1)]);
        assert!(aggregate(&s, &AggregationWeights::uniform(3)).is_err());
    }

    #[test]
    fn export_format() {
        let csv = export_weights(&AggregationWeights::uniform(3), &[]).unwrap();
        assert_eq!(csv, "layer,weight\nlayer_0,0.333333\nlayer_1,0.333333\nlayer_2,0.333333\n");
        let csv13 = export_weights(&AggregationWeights::uniform(13), &[]).unwrap();
        assert_eq!(csv13.lines().filter(|l| l.ends_with(",0.076923")).count(), 13);
    }

    proptest! {
        #[test]
        fn shift_invariance(logits in proptest::collection::vec(-5.0f64..5.0, 1..14), c in -20.0f64..20.0) {
            let a = normalized_weights(&logits).unwrap();
            let shifted: Vec<f64> = logits.iter().map(|v| v + c).collect();
            let b = normalized_weights(&shifted).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
            prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!(a.iter().all(|&w| w > 0.0 && w < 1.0 || logits.len() == 1));
        }

        #[test]
        // worst-case rounding is n · 5e-7, so up to 20 rows stay within 1e-5
        fn exported_rows_sum_to_one(logits in proptest::collection::vec(-4.0f64..4.0, 1..21)) {
            let csv = export_weights(&AggregationWeights::from_logits(logits).unwrap(), &[]).unwrap();
            let total: f64 = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap()).sum();
            prop_assert!((total - 1.0).abs() <= 1e-5);
        }

        #[test]
        fn aggregate_is_linear_in_the_stack(
            seed in 0u64..500, alpha in -2.0f64..2.0, beta in -2.0f64..2.0
        ) {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let la: Vec<Mat> = (0..4).map(|_| Mat::randn(3, 5, 0.3, &mut rng)).collect();
            let lb: Vec<Mat> = (0..4).map(|_| Mat::randn(3, 5, 0.3, &mut rng)).collect();
            let lc: Vec<Mat> = la.iter().zip(&lb).map(|(a, b)| a.zip_map(b, |x, y| alpha * x + beta * y)).collect();
            let w = AggregationWeights::from_logits(vec![0.1, -0.4, 1.0, 0.3]).unwrap();
            let oa = aggregate(&stack_from(&la), &w).unwrap();
            let ob = aggregate(&stack_from(&lb), &w).unwrap();
            let oc = aggregate(&stack_from(&lc), &w).unwrap();
            for i in 0..oc.frames().len() {
                let want = alpha * oa.frames().data()[i] + beta * ob.frames().data()[i];
                prop_assert!((oc.frames().data()[i] - want).abs() < 1e-6);
            }
        }
    }
}
