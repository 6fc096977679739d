//! Central finite-difference verification of analytic gradients.
//!
//! All checks run in f64 with perturbation 1e-5; finite differences are
//! too noisy at f32 to verify against a 1e-4 relative tolerance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::layers::{
    batchnorm_backward, batchnorm_forward_train, conv2d_backward, conv2d_forward, relu_backward,
    relu_forward,
};
use crate::nn::tensor::Tensor;

pub const FD_EPSILON: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;

/// Relative error between an analytic and a numerical derivative.
///
/// Pairs where both magnitudes sit below the central-difference noise
/// floor (loss scale * f64 epsilon / perturbation, comfortably under
/// 1e-6 here) compare as equal; everything else is relative.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < 1e-6 {
        return 0.0;
    }
    (analytic - numeric).abs() / scale
}

/// Check an analytic gradient of `f` against central finite differences.
///
/// `x` is the flattened input, `analytic` the gradient under test, `f`
/// evaluates the scalar loss at a perturbed input. Returns the maximum
/// relative error over all coordinates.
pub fn max_fd_error(x: &[f64], analytic: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    assert_eq!(x.len(), analytic.len());
    let mut buf = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let orig = buf[i];
        buf[i] = orig + FD_EPSILON;
        let plus = f(&buf);
        buf[i] = orig - FD_EPSILON;
        let minus = f(&buf);
        buf[i] = orig;
        let numeric = (plus - minus) / (2.0 * FD_EPSILON);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    worst
}

/// Outcome of one named gradient check.
#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: String,
    pub max_rel_error: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < FD_TOLERANCE
    }
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let data = (0..shape.iter().product::<usize>())
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    Tensor::from_vec(shape, data).expect("shape and data agree")
}

/// Scalar probe loss: weighted sum of the output with fixed random
/// weights, so every output element contributes to the gradient.
fn probe_loss(out: &Tensor<f64>, probe: &[f64]) -> f64 {
    out.data().iter().zip(probe).map(|(&o, &p)| o * p).sum()
}

/// Gradient checks for one conv layer: input, weights and bias.
pub fn check_conv2d(seed: u64) -> Result<Vec<CheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input = rand_tensor(&mut rng, &[2, 3, 7, 7]);
    let weights = rand_tensor(&mut rng, &[4, 3, 3, 3]);
    let bias: Vec<f64> = (0..4).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let stride = 2;
    let out = conv2d_forward(&input, &weights, &bias, stride)?;
    let probe: Vec<f64> = (0..out.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let grad_out = Tensor::from_vec(out.shape(), probe.clone())?;
    let grads = conv2d_backward(&input, &weights, stride, &grad_out)?;

    let e_in = max_fd_error(input.data(), grads.input.data(), |x| {
        let t = Tensor::from_vec(input.shape(), x.to_vec()).unwrap();
        probe_loss(&conv2d_forward(&t, &weights, &bias, stride).unwrap(), &probe)
    });
    let e_w = max_fd_error(weights.data(), grads.weights.data(), |x| {
        let t = Tensor::from_vec(weights.shape(), x.to_vec()).unwrap();
        probe_loss(&conv2d_forward(&input, &t, &bias, stride).unwrap(), &probe)
    });
    let e_b = max_fd_error(&bias, &grads.bias, |x| {
        probe_loss(&conv2d_forward(&input, &weights, x, stride).unwrap(), &probe)
    });
    Ok(vec![
        CheckReport { name: format!("conv2d/input seed={seed}"), max_rel_error: e_in },
        CheckReport { name: format!("conv2d/weights seed={seed}"), max_rel_error: e_w },
        CheckReport { name: format!("conv2d/bias seed={seed}"), max_rel_error: e_b },
    ])
}

/// Gradient checks for training-mode batchnorm: input, gamma and beta.
pub fn check_batchnorm(seed: u64) -> Result<Vec<CheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x1000));
    let input = rand_tensor(&mut rng, &[3, 4, 5, 5]);
    let gamma: Vec<f64> = (0..4).map(|_| rng.gen_range(0.5..1.5)).collect();
    let beta: Vec<f64> = (0..4).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let eps = 1e-5;

    let fwd = |x: &Tensor<f64>, g: &[f64], b: &[f64]| -> Tensor<f64> {
        let mut rm = vec![0.0; 4];
        let mut rv = vec![1.0; 4];
        batchnorm_forward_train(x, g, b, &mut rm, &mut rv, eps, 0.1)
            .expect("shapes agree")
            .0
    };

    let out = fwd(&input, &gamma, &beta);
    let probe: Vec<f64> = (0..out.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let grad_out = Tensor::from_vec(out.shape(), probe.clone())?;

    let mut rm = vec![0.0; 4];
    let mut rv = vec![1.0; 4];
    let (_, cache) = batchnorm_forward_train(&input, &gamma, &beta, &mut rm, &mut rv, eps, 0.1)?;
    let grads = batchnorm_backward(&cache, &gamma, &grad_out)?;

    let e_in = max_fd_error(input.data(), grads.input.data(), |x| {
        let t = Tensor::from_vec(input.shape(), x.to_vec()).unwrap();
        probe_loss(&fwd(&t, &gamma, &beta), &probe)
    });
    let e_gamma = max_fd_error(&gamma, &grads.gamma, |g| probe_loss(&fwd(&input, g, &beta), &probe));
    let e_beta = max_fd_error(&beta, &grads.beta, |b| probe_loss(&fwd(&input, &gamma, b), &probe));
    Ok(vec![
        CheckReport { name: format!("batchnorm/input seed={seed}"), max_rel_error: e_in },
        CheckReport { name: format!("batchnorm/gamma seed={seed}"), max_rel_error: e_gamma },
        CheckReport { name: format!("batchnorm/beta seed={seed}"), max_rel_error: e_beta },
    ])
}

/// Gradient check for ReLU. Inputs are nudged away from the kink, where
/// the derivative genuinely does not exist.
pub fn check_relu(seed: u64) -> Result<Vec<CheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x2000));
    let mut input = rand_tensor(&mut rng, &[2, 2, 6, 6]);
    for v in input.data_mut() {
        if v.abs() < 10.0 * FD_EPSILON {
            *v = 10.0 * FD_EPSILON * if *v < 0.0 { -1.0 } else { 1.0 };
        }
    }
    let out = relu_forward(&input);
    let probe: Vec<f64> = (0..out.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let grad_out = Tensor::from_vec(out.shape(), probe.clone())?;
    let grad_in = relu_backward(&input, &grad_out)?;
    let e = max_fd_error(input.data(), grad_in.data(), |x| {
        let t = Tensor::from_vec(input.shape(), x.to_vec()).unwrap();
        probe_loss(&relu_forward(&t), &probe)
    });
    Ok(vec![CheckReport { name: format!("relu/input seed={seed}"), max_rel_error: e }])
}

/// Run the per-layer suite over several seeds, returning every report.
pub fn layer_suite(seeds: &[u64]) -> Result<Vec<CheckReport>> {
    let mut reports = Vec::new();
    for &seed in seeds {
        reports.extend(check_conv2d(seed)?);
        reports.extend(check_batchnorm(seed)?);
        reports.extend(check_relu(seed)?);
    }
    Ok(reports)
}

/// Fail with a numerical error if any report exceeds the tolerance.
pub fn require_all_pass(reports: &[CheckReport]) -> Result<()> {
    let failed: Vec<&CheckReport> = reports.iter().filter(|r| !r.passed()).collect();
    if failed.is_empty() {
        return Ok(());
    }
    let detail = failed
        .iter()
        .map(|r| format!("{} (rel err {:.3e})", r.name, r.max_rel_error))
        .collect::<Vec<_>>()
        .join(", ");
    Err(Error::numerical(format!("gradient checks failed: {detail}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn per_layer_gradients_match_finite_differences_over_five_seeds() {
        let reports = layer_suite(&[1, 2, 3, 4, 5]).unwrap();
        for r in &reports {
            assert!(
                r.passed(),
                "{} exceeded tolerance: {:.3e}",
                r.name,
                r.max_rel_error
            );
        }
    }

    #[test]
    fn relative_error_handles_near_zero() {
        assert!(relative_error(0.0, 1e-12) < FD_TOLERANCE);
        assert!(relative_error(1.0, 1.1) > FD_TOLERANCE);
    }
}
