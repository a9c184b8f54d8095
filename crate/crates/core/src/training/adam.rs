use std::collections::BTreeMap;

use crate::params::ParamStore;
use crate::tensor::Mat;

/// Adaptive-moment gradient descent over named parameters. Updated values are
/// rounded to `f32` so checkpoints reload bit-exactly.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: BTreeMap<String, Mat>,
    v: BTreeMap<String, Mat>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Mat>) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        for (name, g) in grads {
            let p = params.get_mut(name).expect("gradient for unknown parameter");
            let m = self.m.entry(name.clone()).or_insert_with(|| Mat::zeros(g.rows(), g.cols()));
            let v = self.v.entry(name.clone()).or_insert_with(|| Mat::zeros(g.rows(), g.cols()));
            for i in 0..g.len() {
                let gi = g.data()[i];
                let mi = self.beta1 * m.data()[i] + (1.0 - self.beta1) * gi;
                let vi = self.beta2 * v.data()[i] + (1.0 - self.beta2) * gi * gi;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let upd = self.lr * (mi / bc1) / ((vi / bc2).sqrt() + self.eps);
                p.data_mut()[i] -= upd;
            }
            p.round_f32();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimises_a_quadratic() {
        let mut p = ParamStore::new();
        p.insert("x", Mat::row_vector(vec![3.0, -2.0]));
        let mut opt = Adam::new(0.1);
        for _ in 0..500 {
            let g: BTreeMap<String, Mat> = [("x".to_string(), p.expect("x").scale(2.0))].into();
            opt.step(&mut p, &g);
        }
        assert!(p.expect("x").max_abs() < 1e-2);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = ParamStore::new();
        p.insert("x", Mat::row_vector(vec![1.0]));
        let g: BTreeMap<String, Mat> = [("x".to_string(), Mat::row_vector(vec![123.0]))].into();
        Adam::new(0.5).step(&mut p, &g);
        assert!((p.expect("x").get(0, 0) - 0.5).abs() < 1e-6);
    }
}
