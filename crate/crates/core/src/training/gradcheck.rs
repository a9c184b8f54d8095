//! Central-difference verification of analytic gradients.

use std::collections::BTreeMap;

use rand::Rng;

use super::aam::{aam_loss_tape, AamConfig};
use crate::aggregator::aggregate_tape;
use crate::ecapa::{self, EcapaConfig};
use crate::error::{Error, Result};
use crate::params::{Binder, ParamStore};
use crate::scoring::calibration::{calibration_gradient, calibration_objective};
use crate::seed;
use crate::signal::Waveform;
use crate::tape::{Tape, Var};
use crate::tensor::Mat;
use crate::upstream::{init_mock_params, mock_forward_tape, MockUpstreamConfig};

pub const GRADCHECK_COMPONENTS: [&str; 5] = ["aggregator", "ecapa", "aam", "upstream", "calibration"];

/// Coordinates sampled per tensor and trial.
const COORDS_PER_TENSOR: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub component: String,
    /// Largest relative error per parameter tensor over all trials.
    pub errors: BTreeMap<String, f64>,
    /// Sampled coordinates dropped because the ±ε step moved a relu input
    /// across zero.
    pub skipped: usize,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.errors.values().cloned().fold(0.0, f64::max)
    }
}

/// Scalar loss over a parameter store, with or without analytic gradients.
trait Problem {
    fn params(&self) -> &ParamStore;
    fn loss(&self, p: &ParamStore) -> f64;
    fn grads(&self, p: &ParamStore) -> BTreeMap<String, Mat>;
    fn kinks(&self, _p: &ParamStore) -> Vec<bool> {
        Vec::new()
    }
}

/// A tape-recorded problem: every parameter trainable, loss = Σ output ⊙ probe.
struct TapeProblem<F: Fn(&mut Tape, &mut Binder<'_>) -> Var> {
    params: ParamStore,
    build: F,
}

impl<F: Fn(&mut Tape, &mut Binder<'_>) -> Var> TapeProblem<F> {
    fn run(&self, p: &ParamStore) -> (f64, BTreeMap<String, Mat>, Vec<bool>) {
        let all = |_: &str| true;
        let mut tape = Tape::new();
        let mut binder = Binder::new(p, &all);
        let loss = (self.build)(&mut tape, &mut binder);
        let grads = tape.backward(loss);
        (tape.scalar(loss), binder.gradients(&grads), tape.relu_pattern())
    }
}

impl<F: Fn(&mut Tape, &mut Binder<'_>) -> Var> Problem for TapeProblem<F> {
    fn params(&self) -> &ParamStore {
        &self.params
    }
    fn loss(&self, p: &ParamStore) -> f64 {
        self.run(p).0
    }
    fn grads(&self, p: &ParamStore) -> BTreeMap<String, Mat> {
        self.run(p).1
    }
    fn kinks(&self, p: &ParamStore) -> Vec<bool> {
        self.run(p).2
    }
}

fn probe_loss(tape: &mut Tape, out: Var, probe: &Mat) -> Var {
    let r = tape.constant(probe.clone());
    let prod = tape.mul(out, r);
    tape.sum_all(prod)
}

struct Calibration {
    params: ParamStore,
    scores: Vec<f64>,
    labels: Vec<bool>,
    quality: Vec<Vec<f64>>,
}

impl Problem for Calibration {
    fn params(&self) -> &ParamStore {
        &self.params
    }
    fn loss(&self, p: &ParamStore) -> f64 {
        calibration_objective(p.expect("calibration").data(), &self.scores, &self.labels, &self.quality)
    }
    fn grads(&self, p: &ParamStore) -> BTreeMap<String, Mat> {
        let g = calibration_gradient(p.expect("calibration").data(), &self.scores, &self.labels, &self.quality);
        [("calibration".to_string(), Mat::row_vector(g))].into()
    }
}

fn check<P: Problem, R: Rng>(problem: &P, eps: f64, rng: &mut R, errors: &mut BTreeMap<String, f64>) -> usize {
    let analytic = problem.grads(problem.params());
    let base = problem.kinks(problem.params());
    let mut skipped = 0;
    for (name, a) in &analytic {
        let n = a.len();
        // exhaustive for small tensors, otherwise a random sample with a few retries
        let candidates: Vec<usize> = if n <= COORDS_PER_TENSOR {
            (0..n).collect()
        } else {
            (0..4 * COORDS_PER_TENSOR).map(|_| rng.random_range(0..n)).collect()
        };
        let mut coords = Vec::new();
        let mut numeric = Vec::new();
        for &i in &candidates {
            if coords.len() == COORDS_PER_TENSOR {
                break;
            }
            let mut p = problem.params().clone();
            let x = p.expect(name).data()[i];
            p.get_mut(name).unwrap().data_mut()[i] = x + eps;
            let hi = problem.loss(&p);
            let hi_kinks = problem.kinks(&p);
            p.get_mut(name).unwrap().data_mut()[i] = x - eps;
            let lo = problem.loss(&p);
            if hi_kinks != base || problem.kinks(&p) != base {
                skipped += 1;
                continue;
            }
            coords.push(i);
            numeric.push((hi - lo) / (2.0 * eps));
        }
        let scale = numeric
            .iter()
            .fold(a.max_abs(), |m, v| m.max(v.abs()))
            .max(1e-12);
        let worst = coords
            .iter()
            .zip(&numeric)
            .map(|(&i, nv)| (a.data()[i] - nv).abs() / scale)
            .fold(0.0, f64::max);
        let e = errors.entry(name.clone()).or_insert(0.0);
        *e = e.max(worst);
    }
    skipped
}

fn randomized(store: ParamStore, std: f64, rng: &mut impl Rng) -> ParamStore {
    let mut out = ParamStore::new();
    for (name, m) in store.iter() {
        let noise = Mat::randn(m.rows(), m.cols(), std, rng);
        out.insert(name.clone(), m.zip_map(&noise, |a, b| a + b));
    }
    out
}

/// Compares analytic and central-difference gradients of `component` on
/// `trials` random small problems. Relative error per tensor is
/// `|analytic − numeric| / max(‖analytic‖∞, ‖numeric‖∞)` over sampled coordinates.
pub fn grad_check(component: &str, trials: usize, eps: f64, master_seed: u64) -> Result<GradCheckReport> {
    if !GRADCHECK_COMPONENTS.contains(&component) {
        return Err(Error::invalid(format!(
            "component `{component}` has no parameters to check (choose from {})",
            GRADCHECK_COMPONENTS.join(", ")
        )));
    }
    if !(eps > 0.0) {
        return Err(Error::invalid("epsilon must be > 0"));
    }
    let mut errors = BTreeMap::new();
    let mut skipped = 0;
    for trial in 0..trials {
        let mut rng = seed::rng_indexed(master_seed, "gradcheck", trial as u64);
        match component {
            "aggregator" => {
                let layers: Vec<Mat> = (0..4).map(|_| Mat::randn(6, 5, 1.0, &mut rng)).collect();
                let probe = Mat::randn(6, 5, 1.0, &mut rng);
                let mut params = ParamStore::new();
                params.insert(crate::aggregator::LOGITS_PARAM, Mat::randn(1, 4, 1.0, &mut rng));
                let problem = TapeProblem {
                    params,
                    build: |tape: &mut Tape, b: &mut Binder<'_>| {
                        let ls: Vec<Var> = layers.iter().map(|m| tape.constant(m.clone())).collect();
                        let logits = b.get(tape, crate::aggregator::LOGITS_PARAM);
                        let out = aggregate_tape(tape, &ls, logits);
                        probe_loss(tape, out, &probe)
                    },
                };
                skipped += check(&problem, eps, &mut rng, &mut errors);
            }
            "ecapa" => {
                let cfg = EcapaConfig::tiny(8);
                let params = randomized(ecapa::init_params(&cfg, &mut rng)?, 0.1, &mut rng);
                let x = Mat::randn(5, 8, 1.0, &mut rng);
                let probe = Mat::randn(1, cfg.embed_dim, 1.0, &mut rng);
                let problem = TapeProblem {
                    params,
                    build: |tape: &mut Tape, b: &mut Binder<'_>| {
                        let xv = tape.constant(x.clone());
                        let e = ecapa::forward_tape(tape, b, &cfg, xv);
                        probe_loss(tape, e, &probe)
                    },
                };
                skipped += check(&problem, eps, &mut rng, &mut errors);
            }
            "aam" => {
                let cfg = AamConfig::new(5);
                let mut params = ParamStore::new();
                params.insert("embeddings", Mat::randn(4, 6, 1.0, &mut rng));
                params.insert(super::ANCHORS_PARAM, Mat::randn(5, 6, 1.0, &mut rng));
                let labels: Vec<usize> = (0..4).map(|_| rng.random_range(0..5)).collect();
                let problem = TapeProblem {
                    params,
                    build: |tape: &mut Tape, b: &mut Binder<'_>| {
                        let e = b.get(tape, "embeddings");
                        let a = b.get(tape, super::ANCHORS_PARAM);
                        aam_loss_tape(tape, e, a, &labels, &cfg)
                    },
                };
                skipped += check(&problem, eps, &mut rng, &mut errors);
            }
            "upstream" => {
                let cfg = MockUpstreamConfig {
                    n_layers: 2,
                    dim: 4,
                    seed: rng.random(),
                    conv_strides: vec![5, 4],
                    conv_width: 3,
                    mixing_smoothing: 3,
                };
                let params = init_mock_params(&cfg)?;
                let wav = Waveform::new((0..200).map(|_| rng.random_range(-0.5..0.5)).collect())?;
                let probes: Vec<Mat> = (0..3).map(|_| Mat::randn(10, 4, 1.0, &mut rng)).collect();
                let problem = TapeProblem {
                    params,
                    build: |tape: &mut Tape, b: &mut Binder<'_>| {
                        let layers = mock_forward_tape(&cfg, b, tape, &wav).expect("valid mock input");
                        let parts: Vec<Var> = layers.iter().zip(&probes).map(|(l, p)| probe_loss(tape, *l, p)).collect();
                        let mut acc = parts[0];
                        for p in &parts[1..] {
                            acc = tape.add(acc, *p);
                        }
                        acc
                    },
                };
                skipped += check(&problem, eps, &mut rng, &mut errors);
            }
            "calibration" => {
                let n = 40;
                let labels: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
                let scores: Vec<f64> = labels
                    .iter()
                    .map(|&l| rng.random_range(-1.0..1.0) + if l { 0.5 } else { 0.0 })
                    .collect();
                let quality: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(0.0..2.0), rng.random_range(0.0..4.0)]).collect();
                let mut params = ParamStore::new();
                params.insert("calibration", Mat::randn(1, 4, 1.0, &mut rng));
                let problem = Calibration {
                    params,
                    scores,
                    labels,
                    quality,
                };
                skipped += check(&problem, eps, &mut rng, &mut errors);
            }
            _ => unreachable!(),
        }
    }
    Ok(GradCheckReport {
        component: component.to_string(),
        errors,
        skipped,
    })
}
