//! Parameter update rules: SGD with momentum and Adam.

use crate::error::{Error, Result};
use crate::model::GradPair;
use crate::tensor::Scalar;

pub const DEFAULT_LR: f64 = 1e-3;
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    Sgd { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

/// Optimizer state: hyperparameters, step counter and per-parameter moment
/// buffers (allocated on the first step, shape-checked afterwards).
#[derive(Debug, Clone)]
pub struct Optimizer<T = f32> {
    kind: Kind,
    lr: f64,
    step_count: u64,
    first_moment: Vec<Vec<T>>,
    second_moment: Vec<Vec<T>>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn sgd(lr: f64, momentum: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {lr}"
            )));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::InvalidArgument(format!(
                "momentum must be in [0, 1), got {momentum}"
            )));
        }
        Ok(Optimizer {
            kind: Kind::Sgd { momentum },
            lr,
            step_count: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        })
    }

    pub fn adam(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {lr}"
            )));
        }
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || eps <= 0.0 {
            return Err(Error::InvalidArgument(
                "adam betas must be in [0, 1) and eps positive".into(),
            ));
        }
        Ok(Optimizer {
            kind: Kind::Adam { beta1, beta2, eps },
            lr,
            step_count: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        })
    }

    pub fn default_adam() -> Self {
        Self::adam(DEFAULT_LR, ADAM_BETA1, ADAM_BETA2, ADAM_EPS).expect("default hyperparameters")
    }

    #[inline]
    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) -> Result<()> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {lr}"
            )));
        }
        self.lr = lr;
        Ok(())
    }

    #[inline]
    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    fn ensure_buffers(&mut self, pairs: &[GradPair<T>], second: bool) -> Result<()> {
        if self.first_moment.is_empty() {
            self.first_moment = pairs.iter().map(|p| vec![T::ZERO; p.value.len()]).collect();
            if second {
                self.second_moment = pairs.iter().map(|p| vec![T::ZERO; p.value.len()]).collect();
            }
            return Ok(());
        }
        if self.first_moment.len() != pairs.len()
            || self
                .first_moment
                .iter()
                .zip(pairs)
                .any(|(m, p)| m.len() != p.value.len())
        {
            return Err(Error::ShapeMismatch(
                "optimizer state does not match the parameter set".into(),
            ));
        }
        Ok(())
    }

    /// Applies one deterministic update to every (parameter, gradient)
    /// pair.
    pub fn step(&mut self, pairs: &mut [GradPair<T>]) -> Result<()> {
        match self.kind {
            Kind::Sgd { momentum } => {
                self.ensure_buffers(pairs, false)?;
                self.step_count += 1;
                let lr = T::from_f64(self.lr);
                let mu = T::from_f64(momentum);
                for (pair, vel) in pairs.iter_mut().zip(&mut self.first_moment) {
                    for ((p, &g), v) in pair.value.iter_mut().zip(pair.grad).zip(vel.iter_mut()) {
                        *v = mu * *v + g;
                        *p -= lr * *v;
                    }
                }
            }
            Kind::Adam { beta1, beta2, eps } => {
                self.ensure_buffers(pairs, true)?;
                self.step_count += 1;
                let t = self.step_count as i32;
                let bc1 = 1.0 - beta1.powi(t);
                let bc2 = 1.0 - beta2.powi(t);
                let lr = T::from_f64(self.lr);
                let b1 = T::from_f64(beta1);
                let b2 = T::from_f64(beta2);
                let one_m_b1 = T::from_f64(1.0 - beta1);
                let one_m_b2 = T::from_f64(1.0 - beta2);
                let inv_bc1 = T::from_f64(1.0 / bc1);
                let inv_bc2 = T::from_f64(1.0 / bc2);
                let eps_t = T::from_f64(eps);
                for ((pair, m), v) in pairs
                    .iter_mut()
                    .zip(&mut self.first_moment)
                    .zip(&mut self.second_moment)
                {
                    for (((p, &g), mi), vi) in pair
                        .value
                        .iter_mut()
                        .zip(pair.grad)
                        .zip(m.iter_mut())
                        .zip(v.iter_mut())
                    {
                        *mi = b1 * *mi + one_m_b1 * g;
                        *vi = b2 * *vi + one_m_b2 * g * g;
                        let m_hat = *mi * inv_bc1;
                        let v_hat = *vi * inv_bc2;
                        *p -= lr * m_hat / (v_hat.sqrt() + eps_t);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single<'a>(value: &'a mut [f32], grad: &'a [f32]) -> Vec<GradPair<'a, f32>> {
        vec![GradPair { value, grad }]
    }

    #[test]
    fn zero_gradient_zero_momentum_is_identity() {
        let mut w = [0.5f32, -0.25];
        let g = [0.0f32, 0.0];
        let mut opt = Optimizer::sgd(0.1, 0.0).unwrap();
        let before = w;
        opt.step(&mut single(&mut w, &g)).unwrap();
        assert_eq!(w, before);
    }

    #[test]
    fn sgd_definition_on_a_scalar() {
        let mut w = [0.0f32];
        let g = [1.0f32];
        let mut opt = Optimizer::sgd(0.1, 0.0).unwrap();
        opt.step(&mut single(&mut w, &g)).unwrap();
        assert!((w[0] + 0.1).abs() < 1e-7, "w = {}", w[0]);
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        // f(w) = w^2, grad = 2w, from w=1 with lr 0.1 for 200 steps
        let mut w = [1.0f32];
        let mut opt = Optimizer::adam(0.1, ADAM_BETA1, ADAM_BETA2, ADAM_EPS).unwrap();
        for _ in 0..200 {
            let g = [2.0 * w[0]];
            opt.step(&mut single(&mut w, &g)).unwrap();
        }
        assert!(w[0].abs() < 1e-2, "w = {}", w[0]);
    }

    #[test]
    fn updates_are_deterministic() {
        let run = || {
            let mut w = [1.0f32, -2.0, 0.3];
            let mut opt = Optimizer::<f32>::default_adam();
            for i in 0..50 {
                let g = [0.1 * (i as f32), -0.2, 0.05];
                opt.step(&mut single(&mut w, &g)).unwrap();
            }
            w
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn shape_drift_rejected() {
        let mut w = [1.0f32, 2.0];
        let g = [0.1f32, 0.1];
        let mut opt = Optimizer::sgd(0.1, 0.9).unwrap();
        opt.step(&mut single(&mut w, &g)).unwrap();
        let mut w2 = [1.0f32];
        let g2 = [0.1f32];
        assert!(opt.step(&mut single(&mut w2, &g2)).is_err());
    }

    #[test]
    fn invalid_hyperparameters_rejected() {
        assert!(Optimizer::<f32>::sgd(0.0, 0.0).is_err());
        assert!(Optimizer::<f32>::sgd(0.1, 1.0).is_err());
        assert!(Optimizer::<f32>::adam(0.1, 1.0, 0.999, 1e-8).is_err());
    }
}
