use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment estimates for a fixed list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>, config: AdamConfig) -> Self {
        let m: Vec<Tensor> = params.into_iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            step: 0,
            v: m.clone(),
            m,
            config,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdamError {
    #[error("parameter {index}: shape {param:?} disagrees with gradient {grad:?} or state")]
    Shape {
        index: usize,
        param: Vec<usize>,
        grad: Vec<usize>,
    },
    #[error("expected {expected} tensors, got {actual}")]
    Count { expected: usize, actual: usize },
    #[error("non-finite gradient in parameter {index}; step rejected")]
    NonFinite { index: usize },
}

/// One bias-corrected Adam update. Entries whose `frozen` flag is set are
/// left untouched, moments included.
///
/// On error neither `params` nor `state` is modified.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    frozen: &[bool],
    state: &mut AdamState,
) -> Result<(), AdamError> {
    let n = params.len();
    for what in [grads.len(), frozen.len(), state.m.len(), state.v.len()] {
        if what != n {
            return Err(AdamError::Count { expected: n, actual: what });
        }
    }
    for (i, p) in params.iter().enumerate() {
        if p.shape() != grads[i].shape()
            || p.shape() != state.m[i].shape()
            || p.shape() != state.v[i].shape()
        {
            return Err(AdamError::Shape {
                index: i,
                param: p.shape().to_vec(),
                grad: grads[i].shape().to_vec(),
            });
        }
        if !frozen[i] && !grads[i].is_finite() {
            return Err(AdamError::NonFinite { index: i });
        }
    }

    state.step += 1;
    let cfg = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - f64::from(cfg.beta1).powi(t);
    let bc2 = 1.0 - f64::from(cfg.beta2).powi(t);
    let step_size = (f64::from(cfg.lr) / bc1) as f32;
    let bc2_sqrt = bc2.sqrt() as f32;
    for (i, p) in params.iter_mut().enumerate() {
        if frozen[i] {
            continue;
        }
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mv = cfg.beta1 * *mv + (1.0 - cfg.beta1) * gv;
            *vv = cfg.beta2 * *vv + (1.0 - cfg.beta2) * gv * gv;
            *pv -= step_size * *mv / (vv.sqrt() / bc2_sqrt + cfg.epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_keeps_params() {
        let mut p = Tensor::from_slice(&[3], &[1.0, -2.0, 3.0]).unwrap();
        let before = p.clone();
        let mut state = AdamState::new([&p], AdamConfig::default());
        adam_step(&mut [&mut p], &[Tensor::zeros(&[3])], &[false], &mut state).unwrap();
        assert_eq!(p, before);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = Tensor::from_slice(&[2], &[0.0, 0.0]).unwrap();
        let g = Tensor::from_slice(&[2], &[0.3, -5.0]).unwrap();
        let mut state = AdamState::new([&p], AdamConfig::default());
        adam_step(&mut [&mut p], &[g], &[false], &mut state).unwrap();
        // bias-corrected m/sqrt(v) equals sign(g) on the first step
        assert!((p.data()[0] + 1e-3).abs() < 1e-8);
        assert!((p.data()[1] - 1e-3).abs() < 1e-8);
    }

    #[test]
    fn moments_follow_recurrence() {
        let mut p = Tensor::from_slice(&[1], &[1.0]).unwrap();
        let g = Tensor::from_slice(&[1], &[2.0]).unwrap();
        let mut state = AdamState::new([&p], AdamConfig::default());
        adam_step(&mut [&mut p], &[g.clone()], &[false], &mut state).unwrap();
        adam_step(&mut [&mut p], &[g], &[false], &mut state).unwrap();
        assert_eq!(state.step, 2);
        // hand recurrence with the f32-rounded betas
        let (b1, b2) = (f64::from(0.9f32), f64::from(0.999f32));
        let m2 = b1 * ((1.0 - b1) * 2.0) + (1.0 - b1) * 2.0;
        let v2 = b2 * ((1.0 - b2) * 4.0) + (1.0 - b2) * 4.0;
        assert!((f64::from(state.m[0].data()[0]) - m2).abs() < 1e-6);
        assert!((f64::from(state.v[0].data()[0]) / v2 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn non_finite_rejected_without_side_effects() {
        let mut p = Tensor::from_slice(&[2], &[1.0, 2.0]).unwrap();
        let before = p.clone();
        let mut state = AdamState::new([&p], AdamConfig::default());
        let snapshot = state.clone();
        let g = Tensor::from_slice(&[2], &[f32::NAN, 1.0]).unwrap();
        let err = adam_step(&mut [&mut p], &[g], &[false], &mut state).unwrap_err();
        assert_eq!(err, AdamError::NonFinite { index: 0 });
        assert_eq!(p, before);
        assert_eq!(state, snapshot);
    }

    #[test]
    fn frozen_skipped() {
        let mut a = Tensor::from_slice(&[1], &[1.0]).unwrap();
        let mut b = Tensor::from_slice(&[1], &[1.0]).unwrap();
        let mut state = AdamState::new([&a, &b], AdamConfig::default());
        let g = Tensor::from_slice(&[1], &[1.0]).unwrap();
        adam_step(&mut [&mut a, &mut b], &[g.clone(), g], &[true, false], &mut state).unwrap();
        assert_eq!(a.data()[0], 1.0);
        assert!(b.data()[0] < 1.0);
        assert_eq!(state.m[0].data()[0], 0.0);
    }
}
