//! Bias-corrected Adam.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig::with_lr(1e-5)
    }
}

#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new<P: ParamSet<T>>(params: &P, config: AdamConfig) -> Self {
        let zeros = || -> Vec<Vec<T>> { params.tensors().iter().map(|t| vec![T::zero(); t.data.len()]).collect() };
        AdamState {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }
}

/// One Adam update. Fails without touching anything if a gradient is not finite.
pub fn adam_step<T: Scalar, P: ParamSet<T>>(params: &mut P, grads: &P, state: &mut AdamState<T>) -> Result<()> {
    let gts = grads.tensors();
    if gts.len() != state.m.len() {
        return Err(Error::Shape("optimizer state does not match parameters".into()));
    }
    if let Some(bad) = gts.iter().find(|t| t.data.iter().any(|x| !x.is_finite())) {
        return Err(Error::NonFinite(format!("gradient of {}", bad.name)));
    }
    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
    let bc1 = T::of(1.0 - c.beta1.powi(t));
    let bc2 = T::of(1.0 - c.beta2.powi(t));
    let (lr, eps) = (T::of(c.lr), T::of(c.eps));
    for (((p, g), m), v) in params
        .tensors_mut()
        .into_iter()
        .zip(&gts)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        if p.data.len() != g.data.len() || m.len() != g.data.len() {
            return Err(Error::Shape(format!("gradient shape for {}", p.name)));
        }
        for (((x, &gi), mi), vi) in p.data.iter_mut().zip(g.data).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + (T::one() - b1) * gi;
            *vi = b2 * *vi + (T::one() - b2) * gi * gi;
            let mhat = *mi / bc1;
            let vhat = *vi / bc2;
            *x -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm<T: Scalar, P: ParamSet<T>>(grads: &mut P, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm > 0.0 {
        grads.scale(T::of(max_norm / norm));
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Linear;

    fn scalar_param(v: f64) -> Linear<f64> {
        let mut l = Linear::zeros(1, 1);
        l.weight[[0, 0]] = v;
        l
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = scalar_param(0.7);
        let g = Linear::zeros(1, 1);
        let mut s = AdamState::new(&p, AdamConfig::with_lr(0.1));
        adam_step(&mut p, &g, &mut s).unwrap();
        assert_eq!(p.weight[[0, 0]], 0.7);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m̂ = g, v̂ = g², so the step is lr · g / (|g| + eps)
        let lr = 0.01;
        let mut p = scalar_param(0.0);
        let g = scalar_param(1.0);
        let mut s = AdamState::new(&p, AdamConfig::with_lr(lr));
        adam_step(&mut p, &g, &mut s).unwrap();
        let expected = -lr / (1.0 + 1e-8);
        assert!((p.weight[[0, 0]] - expected).abs() < 1e-15);
    }

    #[test]
    fn identical_params_stay_identical() {
        let mut p = Linear::<f64>::zeros(2, 1);
        p.weight.fill(0.3);
        let mut g = Linear::<f64>::zeros(2, 1);
        let mut s = AdamState::new(&p, AdamConfig::with_lr(0.05));
        for k in 0..5 {
            g.weight.fill(0.1 * f64::from(k) - 0.2);
            adam_step(&mut p, &g, &mut s).unwrap();
            assert_eq!(p.weight[[0, 0]], p.weight[[1, 0]]);
        }
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut p = scalar_param(1.0);
        let g = scalar_param(f64::NAN);
        let mut s = AdamState::new(&p, AdamConfig::default());
        assert!(adam_step(&mut p, &g, &mut s).is_err());
        assert_eq!(p.weight[[0, 0]], 1.0);
        assert_eq!(s.step, 0);
    }

    #[test]
    fn clipping() {
        let mut g = Linear::<f64>::zeros(1, 1);
        g.weight[[0, 0]] = 3.0;
        g.bias[0] = 4.0;
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g.global_norm() - 1.0).abs() < 1e-12);
    }
}
