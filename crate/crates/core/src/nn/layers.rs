//! Forward and backward passes of the three layer kinds the embedding
//! network is built from: valid-padding strided convolution, batch
//! normalization and ReLU.
//!
//! Convolution is im2col + GEMM. All layers are plain functions over
//! tensors; what a layer needs to remember between forward and backward
//! is returned explicitly (and threaded through [`super::network::Tape`]),
//! so a backward call without a matching forward cannot be expressed.

use crate::error::{Error, Result};
use crate::nn::tensor::{Scalar, Tensor};

/// Output extent of a valid-padding convolution along one axis.
///
/// Errors when the kernel does not fit or the stride is zero.
pub fn conv_output_extent(input: usize, kernel: usize, stride: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::config("convolution stride must be >= 1".to_string()));
    }
    if kernel == 0 || kernel > input {
        return Err(Error::config(format!(
            "kernel extent {kernel} does not fit input extent {input}"
        )));
    }
    Ok((input - kernel) / stride + 1)
}

fn conv_check(input: &Tensor<impl Scalar>, weights: &Tensor<impl Scalar>, bias_len: usize, stride: usize) -> Result<(usize, usize, usize, usize, usize, usize, usize)> {
    let (n, c_in, h, w) = input.dims4()?;
    let (c_out, wc_in, kh, kw) = weights.dims4()?;
    if kh != kw {
        return Err(Error::config(format!("only square kernels are supported, got {kh}x{kw}")));
    }
    if c_in != wc_in {
        return Err(Error::config(format!(
            "conv2d channel mismatch: input shape {:?} vs weight shape {:?}",
            input.shape(),
            weights.shape()
        )));
    }
    if bias_len != c_out {
        return Err(Error::config(format!(
            "conv2d bias length {bias_len} does not match {c_out} output channels"
        )));
    }
    let oh = conv_output_extent(h, kh, stride)?;
    let ow = conv_output_extent(w, kw, stride)?;
    Ok((n, c_in, h, w, c_out, oh, ow))
}

/// Gather the receptive fields of sample `n` into a `(c_in*k*k) x (oh*ow)`
/// row-major matrix.
fn im2col<T: Scalar>(
    input: &Tensor<T>,
    n: usize,
    kernel: usize,
    stride: usize,
    oh: usize,
    ow: usize,
    col: &mut [T],
) {
    let (_, c_in, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]);
    debug_assert_eq!(col.len(), c_in * kernel * kernel * oh * ow);
    let sample = input.sample(n);
    let _ = h;
    let mut row = 0;
    for c in 0..c_in {
        let plane = &sample[c * input.shape()[2] * w..(c + 1) * input.shape()[2] * w];
        for ky in 0..kernel {
            for kx in 0..kernel {
                let dst = &mut col[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let src_row = oy * stride + ky;
                    let src = &plane[src_row * w + kx..];
                    let dst_row = &mut dst[oy * ow..(oy + 1) * ow];
                    if stride == 1 {
                        dst_row.copy_from_slice(&src[..ow]);
                    } else {
                        for ox in 0..ow {
                            dst_row[ox] = src[ox * stride];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Scatter-add the column matrix back onto sample `n` of `grad_input`,
/// inverting [`im2col`].
fn col2im_add<T: Scalar>(
    col: &[T],
    n: usize,
    kernel: usize,
    stride: usize,
    oh: usize,
    ow: usize,
    grad_input: &mut Tensor<T>,
) {
    let c_in = grad_input.shape()[1];
    let w = grad_input.shape()[3];
    let h = grad_input.shape()[2];
    let sample = grad_input.sample_mut(n);
    let mut row = 0;
    for c in 0..c_in {
        let plane = &mut sample[c * h * w..(c + 1) * h * w];
        for ky in 0..kernel {
            for kx in 0..kernel {
                let src = &col[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let dst_row = oy * stride + ky;
                    let dst = &mut plane[dst_row * w + kx..];
                    let src_row = &src[oy * ow..(oy + 1) * ow];
                    for ox in 0..ow {
                        dst[ox * stride] = dst[ox * stride] + src_row[ox];
                    }
                }
                row += 1;
            }
        }
    }
}

/// Valid-padding strided convolution.
///
/// `input` is `(n, c_in, h, w)`, `weights` is `(c_out, c_in, k, k)`,
/// `bias` has length `c_out`. The output extent per axis is
/// `(in - k) / stride + 1`; no implicit padding anywhere.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &[T],
    stride: usize,
) -> Result<Tensor<T>> {
    let (n, c_in, _, _, c_out, oh, ow) = conv_check(input, weights, bias.len(), stride)?;
    let kernel = weights.shape()[2];
    let k2c = c_in * kernel * kernel;
    let mut out = Tensor::zeros(&[n, c_out, oh, ow]);
    let mut col = vec![T::zero(); k2c * oh * ow];
    for i in 0..n {
        im2col(input, i, kernel, stride, oh, ow, &mut col);
        // (c_out x k2c) @ (k2c x oh*ow)
        T::gemm(c_out, k2c, oh * ow, T::one(), weights.data(), &col, T::zero(), out.sample_mut(i));
        let sample = out.sample_mut(i);
        for o in 0..c_out {
            let b = bias[o];
            for v in &mut sample[o * oh * ow..(o + 1) * oh * ow] {
                *v = *v + b;
            }
        }
    }
    Ok(out)
}

/// Gradients produced by [`conv2d_backward`].
pub struct Conv2dGrads<T> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Vec<T>,
}

/// Backward pass of [`conv2d_forward`] given the original input and the
/// gradient with respect to the output.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    stride: usize,
    grad_out: &Tensor<T>,
) -> Result<Conv2dGrads<T>> {
    let (n, c_in, _, _, c_out, oh, ow) = conv_check(input, weights, c_out_of(weights), stride)?;
    let (gn, gc, gh, gw_) = grad_out.dims4()?;
    if (gn, gc, gh, gw_) != (n, c_out, oh, ow) {
        return Err(Error::config(format!(
            "conv2d grad shape {:?} does not match expected {:?}",
            grad_out.shape(),
            [n, c_out, oh, ow]
        )));
    }
    let kernel = weights.shape()[2];
    let k2c = c_in * kernel * kernel;

    let mut grad_input = Tensor::zeros(input.shape());
    let mut grad_weights = Tensor::zeros(weights.shape());
    let mut grad_bias = vec![T::zero(); c_out];
    let mut col = vec![T::zero(); k2c * oh * ow];
    let mut dcol = vec![T::zero(); k2c * oh * ow];

    for i in 0..n {
        let gout = grad_out.sample(i);
        // Bias: plain sum per output channel.
        for o in 0..c_out {
            let mut acc = T::zero();
            for &g in &gout[o * oh * ow..(o + 1) * oh * ow] {
                acc = acc + g;
            }
            grad_bias[o] = grad_bias[o] + acc;
        }
        // dW += gout (c_out x oh*ow) @ col^T (oh*ow x k2c)
        im2col(input, i, kernel, stride, oh, ow, &mut col);
        T::gemm_nt(c_out, oh * ow, k2c, T::one(), gout, &col, T::one(), grad_weights.data_mut());
        // dcol = W^T (k2c x c_out) @ gout (c_out x oh*ow)
        T::gemm_tn(k2c, c_out, oh * ow, T::one(), weights.data(), gout, T::zero(), &mut dcol);
        col2im_add(&dcol, i, kernel, stride, oh, ow, &mut grad_input);
    }
    Ok(Conv2dGrads {
        input: grad_input,
        weights: grad_weights,
        bias: grad_bias,
    })
}

fn c_out_of(weights: &Tensor<impl Scalar>) -> usize {
    weights.shape()[0]
}

pub fn relu_forward<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Backward pass of ReLU; needs the forward input to know which units
/// were active.
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if input.shape() != grad_out.shape() {
        return Err(Error::config(format!(
            "relu grad shape {:?} does not match input shape {:?}",
            grad_out.shape(),
            input.shape()
        )));
    }
    let mut g = grad_out.clone();
    for (g, &x) in g.data_mut().iter_mut().zip(input.data()) {
        if x <= T::zero() {
            *g = T::zero();
        }
    }
    Ok(g)
}

/// What batchnorm's backward pass needs from its forward pass.
pub struct BatchNormCache<T> {
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
}

/// Batch-normalization forward in training mode.
///
/// Normalizes each channel by the batch statistics over `(n, h, w)`,
/// applies the learned affine `gamma * xhat + beta`, and folds the batch
/// statistics into the running estimates
/// (`running = (1 - momentum) * running + momentum * batch`; the running
/// variance uses the unbiased estimate).
pub fn batchnorm_forward_train<T: Scalar>(
    input: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    running_mean: &mut [T],
    running_var: &mut [T],
    eps: T,
    momentum: T,
) -> Result<(Tensor<T>, BatchNormCache<T>)> {
    let (n, c, h, w) = input.dims4()?;
    check_bn_params(c, gamma.len(), beta.len())?;
    let count = n * h * w;
    let count_t = T::from_real(count as f64);

    let mut out = Tensor::zeros(input.shape());
    let mut xhat = Tensor::zeros(input.shape());
    let mut inv_std = vec![T::zero(); c];

    for ch in 0..c {
        let mut sum = T::zero();
        for i in 0..n {
            let plane = &input.sample(i)[ch * h * w..(ch + 1) * h * w];
            for &v in plane {
                sum = sum + v;
            }
        }
        let mean = sum / count_t;
        let mut var_sum = T::zero();
        for i in 0..n {
            let plane = &input.sample(i)[ch * h * w..(ch + 1) * h * w];
            for &v in plane {
                let d = v - mean;
                var_sum = var_sum + d * d;
            }
        }
        let var = var_sum / count_t;
        let istd = T::one() / (var + eps).sqrt();
        inv_std[ch] = istd;

        let g = gamma[ch];
        let b = beta[ch];
        for i in 0..n {
            let base = (i * c + ch) * h * w;
            for j in 0..h * w {
                let v = input.data()[base + j];
                let xh = (v - mean) * istd;
                xhat.data_mut()[base + j] = xh;
                out.data_mut()[base + j] = g * xh + b;
            }
        }

        let unbiased = if count > 1 {
            var * count_t / T::from_real((count - 1) as f64)
        } else {
            var
        };
        running_mean[ch] = (T::one() - momentum) * running_mean[ch] + momentum * mean;
        running_var[ch] = (T::one() - momentum) * running_var[ch] + momentum * unbiased;
    }
    Ok((out, BatchNormCache { xhat, inv_std }))
}

/// Batch-normalization forward in eval mode: the running statistics are
/// frozen and used as-is.
pub fn batchnorm_forward_eval<T: Scalar>(
    input: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    running_mean: &[T],
    running_var: &[T],
    eps: T,
) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.dims4()?;
    check_bn_params(c, gamma.len(), beta.len())?;
    let mut out = Tensor::zeros(input.shape());
    for ch in 0..c {
        let istd = T::one() / (running_var[ch] + eps).sqrt();
        let scale = gamma[ch] * istd;
        let shift = beta[ch] - running_mean[ch] * scale;
        for i in 0..n {
            let base = (i * c + ch) * h * w;
            for j in 0..h * w {
                out.data_mut()[base + j] = input.data()[base + j] * scale + shift;
            }
        }
    }
    Ok(out)
}

/// Gradients produced by [`batchnorm_backward`].
pub struct BatchNormGrads<T> {
    pub input: Tensor<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

/// Backward pass of training-mode batchnorm (gradients flow through the
/// batch statistics).
pub fn batchnorm_backward<T: Scalar>(
    cache: &BatchNormCache<T>,
    gamma: &[T],
    grad_out: &Tensor<T>,
) -> Result<BatchNormGrads<T>> {
    let (n, c, h, w) = grad_out.dims4()?;
    if cache.xhat.shape() != grad_out.shape() {
        return Err(Error::config(format!(
            "batchnorm grad shape {:?} does not match cached shape {:?}",
            grad_out.shape(),
            cache.xhat.shape()
        )));
    }
    let count_t = T::from_real((n * h * w) as f64);
    let mut grad_input = Tensor::zeros(grad_out.shape());
    let mut grad_gamma = vec![T::zero(); c];
    let mut grad_beta = vec![T::zero(); c];

    for ch in 0..c {
        let mut sum_dy = T::zero();
        let mut sum_dy_xhat = T::zero();
        for i in 0..n {
            let base = (i * c + ch) * h * w;
            for j in 0..h * w {
                let dy = grad_out.data()[base + j];
                sum_dy = sum_dy + dy;
                sum_dy_xhat = sum_dy_xhat + dy * cache.xhat.data()[base + j];
            }
        }
        grad_beta[ch] = sum_dy;
        grad_gamma[ch] = sum_dy_xhat;

        let mean_dy = sum_dy / count_t;
        let mean_dy_xhat = sum_dy_xhat / count_t;
        let scale = gamma[ch] * cache.inv_std[ch];
        for i in 0..n {
            let base = (i * c + ch) * h * w;
            for j in 0..h * w {
                let dy = grad_out.data()[base + j];
                let xh = cache.xhat.data()[base + j];
                grad_input.data_mut()[base + j] = scale * (dy - mean_dy - xh * mean_dy_xhat);
            }
        }
    }
    Ok(BatchNormGrads {
        input: grad_input,
        gamma: grad_gamma,
        beta: grad_beta,
    })
}

fn check_bn_params(c: usize, gamma_len: usize, beta_len: usize) -> Result<()> {
    if gamma_len != c || beta_len != c {
        return Err(Error::config(format!(
            "batchnorm parameter lengths ({gamma_len}, {beta_len}) do not match {c} channels"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t4(shape: [usize; 4], data: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(&shape, data).unwrap()
    }

    #[test]
    fn conv_zero_input_gives_bias_only_output() {
        let input = Tensor::<f64>::zeros(&[1, 1, 3, 3]);
        let weights = t4([2, 1, 3, 3], (0..18).map(|v| v as f64).collect());
        let out = conv2d_forward(&input, &weights, &[0.0, 0.0], 1).unwrap();
        assert_eq!(out.shape(), &[1, 2, 1, 1]);
        assert_eq!(out.data(), &[0.0, 0.0]);
    }

    #[test]
    fn conv_scalar_case_is_v_w_plus_b() {
        let input = t4([1, 1, 1, 1], vec![3.0]);
        let weights = t4([1, 1, 1, 1], vec![-2.0]);
        let out = conv2d_forward(&input, &weights, &[0.5], 1).unwrap();
        assert_eq!(out.data(), &[3.0 * -2.0 + 0.5]);
    }

    #[test]
    fn conv_ramp_with_averaging_kernel_yields_block_means() {
        // 4x4 ramp 0..15, 2x2 kernel of 0.25, stride 2 -> 2x2 block means.
        let input = t4([1, 1, 4, 4], (0..16).map(|v| v as f64).collect());
        let weights = t4([1, 1, 2, 2], vec![0.25; 4]);
        let out = conv2d_forward(&input, &weights, &[0.0], 2).unwrap();
        assert_eq!(out.shape(), &[1, 1, 2, 2]);
        // Block means computed by hand: mean(0,1,4,5)=2.5, mean(2,3,6,7)=4.5, ...
        assert_eq!(out.data(), &[2.5, 4.5, 10.5, 12.5]);
    }

    #[test]
    fn conv_matches_direct_loop_oracle() {
        // Brute-force direct convolution over a random-ish input.
        let input = t4([2, 3, 5, 6], (0..180).map(|v| ((v * 37 % 19) as f64) - 9.0).collect());
        let weights = t4([4, 3, 3, 3], (0..108).map(|v| ((v * 53 % 23) as f64) / 7.0 - 1.5).collect());
        let bias = [0.1, -0.2, 0.3, -0.4];
        let stride = 2;
        let out = conv2d_forward(&input, &weights, &bias, stride).unwrap();
        assert_eq!(out.shape(), &[2, 4, 2, 2]);
        for n in 0..2 {
            for o in 0..4 {
                for oy in 0..2 {
                    for ox in 0..2 {
                        let mut acc = bias[o];
                        for c in 0..3 {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    acc += weights.at4(o, c, ky, kx)
                                        * input.at4(n, c, oy * stride + ky, ox * stride + kx);
                                }
                            }
                        }
                        let got = out.at4(n, o, oy, ox);
                        assert!((got - acc).abs() < 1e-12, "mismatch at {n},{o},{oy},{ox}: {got} vs {acc}");
                    }
                }
            }
        }
    }

    #[test]
    fn conv_shape_mismatch_reports_both_shapes() {
        let input = Tensor::<f64>::zeros(&[1, 2, 4, 4]);
        let weights = Tensor::<f64>::zeros(&[1, 3, 3, 3]);
        let err = conv2d_forward(&input, &weights, &[0.0], 1).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[1, 2, 4, 4]") && msg.contains("[1, 3, 3, 3]"), "{msg}");
    }

    #[test]
    fn relu_clamps_negatives() {
        let input = Tensor::from_vec(&[1, 1, 1, 3], vec![-1.0, 0.0, 2.0]).unwrap();
        let out = relu_forward(&input);
        assert_eq!(out.data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn batchnorm_zero_variance_channel_outputs_zero() {
        // Constant channel (exactly representable) -> xhat is exactly 0.
        let input = Tensor::from_vec(&[2, 1, 2, 2], vec![2.5; 8]).unwrap();
        let mut rm = vec![0.0f64];
        let mut rv = vec![1.0f64];
        let (out, _) =
            batchnorm_forward_train(&input, &[1.0], &[0.0], &mut rm, &mut rv, 1e-5, 0.1).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
        assert!((rm[0] - 0.25).abs() < 1e-12); // 0.9 * 0 + 0.1 * 2.5
    }

    #[test]
    fn batchnorm_eval_uses_frozen_stats() {
        let input = Tensor::from_vec(&[1, 1, 1, 2], vec![1.0, 3.0]).unwrap();
        let out = batchnorm_forward_eval(&input, &[2.0f64], &[1.0], &[1.0], &[4.0 - 1e-5], 1e-5).unwrap();
        // (x - 1) / 2 * 2 + 1 = x
        assert!((out.data()[0] - 1.0).abs() < 1e-9);
        assert!((out.data()[1] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn conv_backward_rejects_wrong_grad_shape() {
        let input = Tensor::<f64>::zeros(&[1, 1, 4, 4]);
        let weights = Tensor::<f64>::zeros(&[1, 1, 3, 3]);
        let grad = Tensor::<f64>::zeros(&[1, 1, 3, 3]);
        assert!(conv2d_backward(&input, &weights, 1, &grad).is_err());
    }
}
