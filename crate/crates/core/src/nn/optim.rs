//! Adam optimizer with bias correction.

use crate::error::{Error, Result};
use crate::nn::tensor::Scalar;

#[derive(Debug, Clone, Copy)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates, one pair of buffers per parameter
/// slice, plus the step counter used for bias correction.
pub struct AdamState<T> {
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    step: u64,
}

impl<T: Scalar> AdamState<T> {
    /// Zero state shaped like the given parameter slices.
    pub fn new(params: &[&[T]]) -> Self {
        AdamState {
            m: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update over all parameter slices.
///
/// Deterministic given identical inputs; rejects non-finite gradients so
/// a diverged training run aborts instead of silently poisoning the
/// parameters.
pub fn adam_step<T: Scalar>(
    params: &mut [&mut [T]],
    grads: &[&[T]],
    state: &mut AdamState<T>,
    hp: &AdamParams,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::config(format!(
            "adam: {} parameter slices, {} gradient slices, state has {}",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() {
            return Err(Error::config(format!(
                "adam: parameter slice {i} has {} elements but gradient has {}",
                p.len(),
                g.len()
            )));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical(format!(
                "adam: non-finite gradient in parameter slice {i}"
            )));
        }
    }

    state.step += 1;
    let t = state.step;
    let beta1 = T::from_real(hp.beta1);
    let beta2 = T::from_real(hp.beta2);
    let lr = T::from_real(hp.lr);
    let eps = T::from_real(hp.eps);
    let bias1 = T::from_real(1.0 - hp.beta1.powi(t as i32));
    let bias2 = T::from_real(1.0 - hp.beta2.powi(t as i32));

    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for j in 0..p.len() {
            let grad = g[j];
            m[j] = beta1 * m[j] + (T::one() - beta1) * grad;
            v[j] = beta2 * v[j] + (T::one() - beta2) * grad * grad;
            let m_hat = m[j] / bias1;
            let v_hat = v[j] / bias2;
            p[j] = p[j] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = vec![1.5f64, -2.0, 0.25];
        let g = vec![0.0f64; 3];
        let mut state = AdamState::new(&[&p.clone()]);
        let hp = AdamParams::default();
        for _ in 0..10 {
            let mut refs: Vec<&mut [f64]> = vec![&mut p];
            adam_step(&mut refs, &[&g], &mut state, &hp).unwrap();
        }
        assert_eq!(p, vec![1.5, -2.0, 0.25]);
    }

    #[test]
    fn first_step_moves_by_about_lr_times_sign() {
        let mut p = vec![1.0f64];
        let g = vec![0.003f64];
        let mut state = AdamState::new(&[&p.clone()]);
        let hp = AdamParams { lr: 0.01, ..AdamParams::default() };
        let mut refs: Vec<&mut [f64]> = vec![&mut p];
        adam_step(&mut refs, &[&g], &mut state, &hp).unwrap();
        // After bias correction the first update is lr * g / (|g| + eps).
        assert!((p[0] - (1.0 - 0.01)).abs() < 1e-4, "got {}", p[0]);
    }

    #[test]
    fn descends_quadratic() {
        // f(x) = x^2 from x = 1 with lr = 0.1: |x| strictly decreases.
        let mut x = vec![1.0f64];
        let mut state = AdamState::new(&[&x.clone()]);
        let hp = AdamParams { lr: 0.1, ..AdamParams::default() };
        let mut prev = x[0].abs();
        for _ in 0..10 {
            let g = vec![2.0 * x[0]];
            let mut refs: Vec<&mut [f64]> = vec![&mut x];
            adam_step(&mut refs, &[&g], &mut state, &hp).unwrap();
            assert!(x[0].abs() < prev, "|x| did not decrease: {} -> {}", prev, x[0].abs());
            prev = x[0].abs();
        }
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut p = vec![1.0f32];
        let g = vec![f32::NAN];
        let mut state = AdamState::new(&[&p.clone()]);
        let mut refs: Vec<&mut [f32]> = vec![&mut p];
        let err = adam_step(&mut refs, &[&g], &mut state, &AdamParams::default()).unwrap_err();
        assert!(matches!(err, Error::Numerical(_)));
    }
}
