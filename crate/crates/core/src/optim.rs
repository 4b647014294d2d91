//! Adam on flat parameter vectors, and learning-rate schedules.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::datasets::Container;
use crate::error::{ensure, Error, Result};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T: Real> {
    pub config: AdamConfig,
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub steps: u64,
}

impl<T: Real> Adam<T> {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        Self {
            config,
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            steps: 0,
        }
    }

    /// One bias-corrected update with learning rate `lr`.
    pub fn step(&mut self, params: &mut [T], grad: &[T], lr: f64) -> Result<()> {
        ensure!(
            params.len() == self.m.len() && grad.len() == self.m.len(),
            "optimizer state has {} entries, got {} params and {} gradients",
            self.m.len(),
            params.len(),
            grad.len()
        );
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numerical("non-finite gradient".into()));
        }
        self.steps += 1;
        let c = self.config;
        let t = self.steps as i32;
        let step = lr / (1.0 - c.beta1.powi(t));
        let v_corr = 1.0 / (1.0 - c.beta2.powi(t));
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (a1, a2) = (T::of(1.0 - c.beta1), T::of(1.0 - c.beta2));
        let (step, v_corr, eps) = (T::of(step), T::of(v_corr), T::of(c.eps));
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + a1 * g;
            *v = b2 * *v + a2 * g * g;
            *p -= step * *m / ((*v * v_corr).sqrt() + eps);
        }
        Ok(())
    }

    pub fn write_into(&self, c: &mut Container, prefix: &str) -> Result<()> {
        c.set_meta(&format!("{prefix}adam"), serde_json::to_value(self.config)?);
        c.set_meta(&format!("{prefix}adam_steps"), self.steps);
        c.push(&format!("{prefix}adam.m"), vec![self.m.len()], T::wrap(self.m.clone()))?;
        c.push(&format!("{prefix}adam.v"), vec![self.v.len()], T::wrap(self.v.clone()))?;
        Ok(())
    }

    pub fn read_from(c: &Container, prefix: &str) -> Result<Self> {
        let config: AdamConfig = serde_json::from_value(c.meta(&format!("{prefix}adam"))?.clone())?;
        let read = |name: &str| {
            T::unwrap(&c.get(&format!("{prefix}{name}"))?.data)
                .ok_or_else(|| Error::Validation(format!("{name} has the wrong element type")))
        };
        let (m, v) = (read("adam.m")?, read("adam.v")?);
        ensure!(m.len() == v.len(), "optimizer moment lengths differ");
        Ok(Self {
            config,
            m,
            v,
            steps: c.meta_u64(&format!("{prefix}adam_steps"))?,
        })
    }
}

/// Cosine decay from `base` at step 0 to `base * floor` at `total`.
pub fn cosine_lr(base: f64, step: usize, total: usize, floor: f64) -> f64 {
    if total == 0 {
        return base;
    }
    let x = (step.min(total) as f64 / total as f64 * PI).cos();
    base * (floor + (1.0 - floor) * 0.5 * (1.0 + x))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        // with bias correction the first update is lr * sign(g) (up to eps)
        let mut opt = Adam::<f64>::new(3, AdamConfig::default());
        let mut p = vec![1.0, 1.0, 1.0];
        opt.step(&mut p, &[2.0, -0.5, 1e-3], 0.1).unwrap();
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] - 1.1).abs() < 1e-6);
        assert!((p[2] - 0.9).abs() < 1e-4);
    }

    #[test]
    fn minimises_quadratic() {
        let mut opt = Adam::<f64>::new(2, AdamConfig::default());
        let mut p = vec![3.0, -2.0];
        for _ in 0..2000 {
            let g = vec![2.0 * (p[0] - 1.0), 2.0 * (p[1] + 0.5)];
            opt.step(&mut p, &g, 0.01).unwrap();
        }
        assert!((p[0] - 1.0).abs() < 1e-3 && (p[1] + 0.5).abs() < 1e-3);
    }

    #[test]
    fn state_round_trip() {
        let mut opt = Adam::<f32>::new(4, AdamConfig::default());
        let mut p = vec![0.5f32; 4];
        opt.step(&mut p, &[0.1, 0.2, 0.3, 0.4], 0.01).unwrap();
        let mut c = Container::new();
        opt.write_into(&mut c, "x.").unwrap();
        assert_eq!(Adam::<f32>::read_from(&c, "x.").unwrap(), opt);
    }

    #[test]
    fn rejects_nan_gradient() {
        let mut opt = Adam::<f64>::new(1, AdamConfig::default());
        assert!(opt.step(&mut [0.0], &[f64::NAN], 0.1).is_err());
        assert_eq!(opt.steps, 0);
    }

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(1.0, 0, 10, 0.1), 1.0);
        assert!((cosine_lr(1.0, 10, 10, 0.1) - 0.1).abs() < 1e-12);
        assert!((cosine_lr(1.0, 5, 10, 0.0) - 0.5).abs() < 1e-12);
    }
}
