use serde::{Deserialize, Serialize};

use super::{ParamStore, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moments are allocated lazily per parameter
/// and shaped like it.
#[derive(Clone, Debug)]
pub struct Adam<R: Real = f32> {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Option<Tensor<R>>>,
    v: Vec<Option<Tensor<R>>>,
}

impl<R: Real> Adam<R> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update. `grads[i]` belongs to parameter `i`; `None` leaves that
    /// parameter and its moments untouched.
    pub fn step(&mut self, params: &mut ParamStore<R>, grads: &[Option<Tensor<R>>]) {
        assert_eq!(grads.len(), params.len(), "one gradient slot per parameter");
        self.m.resize(params.len(), None);
        self.v.resize(params.len(), None);
        self.step += 1;
        let c = self.config;
        let b1 = R::of(c.beta1);
        let b2 = R::of(c.beta2);
        let bc1 = R::of(1.0 - c.beta1.powi(self.step as i32));
        let bc2 = R::of(1.0 - c.beta2.powi(self.step as i32));
        let lr = R::of(c.lr);
        let eps = R::of(c.eps);
        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            let p = params.tensor_mut(i);
            assert_eq!(p.shape(), g.shape(), "gradient shape for parameter {i}");
            let m = self.m[i].get_or_insert_with(|| Tensor::zeros(g.shape()));
            let v = self.v[i].get_or_insert_with(|| Tensor::zeros(g.shape()));
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = b1 * *mv + (R::one() - b1) * gv;
                *vv = b2 * *vv + (R::one() - b2) * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv = *pv - lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(v: f32) -> ParamStore<f32> {
        let mut p = ParamStore::new();
        p.insert("x", Tensor::full(&[1], v)).unwrap();
        p
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = store(0.7);
        let mut opt = Adam::new(AdamConfig::default());
        for _ in 0..5 {
            opt.step(&mut p, &[Some(Tensor::zeros(&[1]))]);
        }
        assert_eq!(p.tensor(0).data(), &[0.7]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // mhat = 1, vhat = 1, so the step is lr / (1 + eps)
        let mut p = store(1.0);
        let mut opt = Adam::new(AdamConfig::default());
        opt.step(&mut p, &[Some(Tensor::full(&[1], 1.0))]);
        let moved = 1.0 - p.tensor(0).data()[0] as f64;
        assert!((moved - 3e-4 / (1.0 + 1e-8)).abs() < 1e-7, "{moved}");
    }
}
