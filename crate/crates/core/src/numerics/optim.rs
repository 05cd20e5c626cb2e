use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.98, eps: 1e-9 }
    }
}

/// Bias-corrected Adam. Moment buffers are sized lazily on first update and
/// parameters without a gradient buffer are skipped.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Self { cfg, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn config(&self) -> AdamConfig {
        self.cfg
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update using the gradients stored on each parameter.
    /// Nothing is modified if any gradient is non-finite.
    pub fn step(&mut self, params: &mut ParamStore<f32>, lr: f32) -> Result<()> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate must be positive, got {lr}")));
        }
        for (_, name, t) in params.iter() {
            if let Some(g) = &t.grad {
                if g.len() != t.numel() {
                    return Err(Error::shape("adam", format!("gradient of `{name}` has wrong length")));
                }
                if let Some(index) = g.iter().position(|x| !x.is_finite()) {
                    return Err(Error::NonFiniteGradient { param: name.to_string(), index });
                }
            }
        }

        self.step += 1;
        if self.m.len() < params.len() {
            self.m.resize(params.len(), Vec::new());
            self.v.resize(params.len(), Vec::new());
        }
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let bc1 = 1.0 - b1.powi(self.step as i32);
        let bc2 = 1.0 - b2.powi(self.step as i32);
        let step_size = lr as f64 / bc1;
        let (b1f, b2f, eps) = (b1 as f32, b2 as f32, self.cfg.eps);

        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let t = params.get_mut(id);
            let Some(grad) = t.grad.take() else { continue };
            let i = id.index();
            if self.m[i].len() != grad.len() {
                self.m[i] = vec![0.0; grad.len()];
                self.v[i] = vec![0.0; grad.len()];
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((p, &g), m), v) in t.data_mut().iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1f * *m + (1.0 - b1f) * g;
                *v = b2f * *v + (1.0 - b2f) * g * g;
                let denom = (*v as f64 / bc2).sqrt() + eps;
                *p -= (step_size * *m as f64 / denom) as f32;
            }
            t.grad = Some(grad);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn store_with(vals: &[f32]) -> ParamStore<f32> {
        let mut s = ParamStore::new();
        for (i, &v) in vals.iter().enumerate() {
            s.add(format!("p{i}"), Tensor::new([1], vec![v]).unwrap());
        }
        s
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut s = store_with(&[1.5, -2.0]);
        let mut adam = Adam::new(AdamConfig::default());
        for _ in 0..3 {
            for id in s.ids().collect::<Vec<_>>() {
                s.get_mut(id).grad = Some(vec![0.0]);
            }
            adam.step(&mut s, 0.1).unwrap();
        }
        assert_eq!(s.get(s.id("p0").unwrap()).data(), &[1.5]);
        assert_eq!(s.get(s.id("p1").unwrap()).data(), &[-2.0]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = g and v̂ = g² after one step, so the update is lr·g/(|g|+ε).
        let mut s = store_with(&[0.0]);
        let mut adam = Adam::new(AdamConfig::default());
        s.get_mut(s.id("p0").unwrap()).grad = Some(vec![1.0]);
        adam.step(&mut s, 1e-3).unwrap();
        let p = s.get(s.id("p0").unwrap()).data()[0];
        assert!((p + 1e-3).abs() < 1e-6, "{p}");
        assert_eq!(adam.steps_taken(), 1);
    }

    #[test]
    fn identical_params_stay_identical() {
        let mut s = store_with(&[0.7, 0.7]);
        let mut adam = Adam::new(AdamConfig::default());
        for k in 0..25 {
            let g = ((k as f32) * 0.37).sin();
            for id in s.ids().collect::<Vec<_>>() {
                s.get_mut(id).grad = Some(vec![g]);
            }
            adam.step(&mut s, 0.01).unwrap();
        }
        let a = s.get(s.id("p0").unwrap()).data()[0];
        let b = s.get(s.id("p1").unwrap()).data()[0];
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn non_finite_gradient_aborts_with_location() {
        let mut s = ParamStore::new();
        s.add("w", Tensor::new([3], vec![0.0; 3]).unwrap());
        s.get_mut(s.id("w").unwrap()).grad = Some(vec![0.0, f32::NAN, 1.0]);
        let mut adam = Adam::new(AdamConfig::default());
        match adam.step(&mut s, 0.1) {
            Err(Error::NonFiniteGradient { param, index }) => assert_eq!((param.as_str(), index), ("w", 1)),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(s.get(s.id("w").unwrap()).data(), &[0.0; 3]);
        assert_eq!(adam.steps_taken(), 0);
    }
}
