//! The fully-convolutional embedding network: a configurable stack of
//! conv / batchnorm / relu layers described by a [`LayerSpec`] profile.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::nn::layers::{
    batchnorm_backward, batchnorm_forward_eval, batchnorm_forward_train, conv2d_backward,
    conv2d_forward, conv_output_extent, relu_backward, relu_forward, BatchNormCache,
};
use crate::nn::tensor::{Scalar, Tensor};

/// One layer of the network profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerSpec {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    BatchNorm {
        eps: f64,
        momentum: f64,
    },
    Relu,
}

pub const BN_DEFAULT_EPS: f64 = 1e-5;
pub const BN_DEFAULT_MOMENTUM: f64 = 0.1;

/// Default embedding profile: five conv layers with batchnorm + relu after
/// every conv except the last, total stride 4, receptive field 39.
pub fn default_profile() -> Vec<LayerSpec> {
    let conv = |i, o, k, s| LayerSpec::Conv2d {
        in_channels: i,
        out_channels: o,
        kernel: k,
        stride: s,
    };
    let bn = LayerSpec::BatchNorm {
        eps: BN_DEFAULT_EPS,
        momentum: BN_DEFAULT_MOMENTUM,
    };
    vec![
        conv(1, 16, 7, 2),
        bn,
        LayerSpec::Relu,
        conv(16, 32, 5, 2),
        bn,
        LayerSpec::Relu,
        conv(32, 32, 3, 1),
        bn,
        LayerSpec::Relu,
        conv(32, 32, 3, 1),
        bn,
        LayerSpec::Relu,
        conv(32, 16, 3, 1),
    ]
}

/// Tiny two-conv profile for fast tests and end-to-end gradient checks.
pub fn toy_profile() -> Vec<LayerSpec> {
    vec![
        LayerSpec::Conv2d {
            in_channels: 1,
            out_channels: 4,
            kernel: 3,
            stride: 2,
        },
        LayerSpec::BatchNorm {
            eps: BN_DEFAULT_EPS,
            momentum: BN_DEFAULT_MOMENTUM,
        },
        LayerSpec::Relu,
        LayerSpec::Conv2d {
            in_channels: 4,
            out_channels: 3,
            kernel: 3,
            stride: 1,
        },
    ]
}

/// Parse a profile string like
/// `conv:1:16:7:2,bn,relu,conv:16:32:5:2,...`.
///
/// `bn` accepts optional `bn:<eps>:<momentum>`.
pub fn parse_profile(text: &str) -> Result<Vec<LayerSpec>> {
    let mut specs = Vec::new();
    for (i, item) in text.split(',').enumerate() {
        let item = item.trim();
        let mut parts = item.split(':');
        match parts.next().unwrap_or("") {
            "conv" => {
                let nums: Vec<usize> = parts
                    .map(|p| {
                        p.parse::<usize>().map_err(|_| {
                            Error::config(format!("bad conv field {p:?} in profile item {i}"))
                        })
                    })
                    .collect::<Result<_>>()?;
                if nums.len() != 4 {
                    return Err(Error::config(format!(
                        "conv item {i} needs in:out:kernel:stride, got {item:?}"
                    )));
                }
                specs.push(LayerSpec::Conv2d {
                    in_channels: nums[0],
                    out_channels: nums[1],
                    kernel: nums[2],
                    stride: nums[3],
                });
            }
            "bn" => {
                let rest: Vec<&str> = parts.collect();
                let (eps, momentum) = match rest.as_slice() {
                    [] => (BN_DEFAULT_EPS, BN_DEFAULT_MOMENTUM),
                    [e, m] => (
                        e.parse().map_err(|_| Error::config(format!("bad bn eps {e:?}")))?,
                        m.parse().map_err(|_| Error::config(format!("bad bn momentum {m:?}")))?,
                    ),
                    _ => {
                        return Err(Error::config(format!(
                            "bn item {i} takes either no fields or eps:momentum"
                        )))
                    }
                };
                specs.push(LayerSpec::BatchNorm { eps, momentum });
            }
            "relu" => specs.push(LayerSpec::Relu),
            other => {
                return Err(Error::config(format!(
                    "unknown layer kind {other:?} in profile item {i}"
                )))
            }
        }
    }
    Ok(specs)
}

pub fn format_profile(specs: &[LayerSpec]) -> String {
    specs
        .iter()
        .map(|s| match s {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => format!("conv:{in_channels}:{out_channels}:{kernel}:{stride}"),
            LayerSpec::BatchNorm { eps, momentum } => {
                if *eps == BN_DEFAULT_EPS && *momentum == BN_DEFAULT_MOMENTUM {
                    "bn".to_string()
                } else {
                    format!("bn:{eps}:{momentum}")
                }
            }
            LayerSpec::Relu => "relu".to_string(),
        })
        .collect::<Vec<_>>()
        .join(",")
}

/// Forward / backward mode. Training mode uses batch statistics in
/// batchnorm and updates the running estimates; eval mode freezes them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone)]
enum Layer<T> {
    Conv {
        weights: Tensor<T>,
        bias: Vec<T>,
        stride: usize,
    },
    BatchNorm {
        gamma: Vec<T>,
        beta: Vec<T>,
        running_mean: Vec<T>,
        running_var: Vec<T>,
        eps: f64,
        momentum: f64,
    },
    Relu,
}

/// Per-layer state saved by a training-mode forward pass, consumed by
/// [`Network::backward`]. Backward without a forward is unrepresentable.
pub struct Tape<T> {
    caches: Vec<LayerCache<T>>,
    output_shape: Vec<usize>,
}

impl<T: Scalar> Tape<T> {
    /// Smallest |input| seen by any ReLU in this pass. Finite-difference
    /// checks use it to reject configurations that would straddle a kink.
    pub fn min_abs_relu_input(&self) -> f64 {
        let mut min = f64::INFINITY;
        for cache in &self.caches {
            if let LayerCache::Relu { input } = cache {
                for v in input.data() {
                    min = min.min(v.to_real().abs());
                }
            }
        }
        min
    }
}

enum LayerCache<T> {
    Conv { input: Tensor<T> },
    BatchNorm(BatchNormCache<T>),
    Relu { input: Tensor<T> },
}

/// Per-parameter gradients, aligned with the network's parameter order.
pub struct Gradients<T> {
    grads: Vec<Vec<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn add_assign(&mut self, other: &Gradients<T>) {
        assert_eq!(self.grads.len(), other.grads.len());
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            assert_eq!(a.len(), b.len());
            for (x, &y) in a.iter_mut().zip(b) {
                *x = *x + y;
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for g in &mut self.grads {
            for v in g {
                *v = *v * s;
            }
        }
    }

    /// Gradient slices in canonical parameter order.
    pub fn slices(&self) -> Vec<&[T]> {
        self.grads.iter().map(|g| g.as_slice()).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().all(|g| g.iter().all(|v| v.is_finite()))
    }
}

/// The embedding network. Template and search branches share one
/// instance, so weight sharing is structural rather than copied.
#[derive(Clone)]
pub struct Network<T> {
    specs: Vec<LayerSpec>,
    layers: Vec<Layer<T>>,
}

impl<T: Scalar> Network<T> {
    /// Build a network with zeroed conv weights and identity batchnorm
    /// from a profile. Validates channel chaining and that the profile
    /// ends in a conv layer (no activation or normalization after the
    /// final conv).
    pub fn new(specs: Vec<LayerSpec>) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::config("network profile is empty".to_string()));
        }
        match specs.last() {
            Some(LayerSpec::Conv2d { .. }) => {}
            _ => {
                return Err(Error::config(
                    "network profile must end with a conv layer".to_string(),
                ))
            }
        }
        let mut channels: Option<usize> = None;
        let mut layers = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            match *spec {
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                } => {
                    if in_channels == 0 || out_channels == 0 || kernel == 0 {
                        return Err(Error::config(format!("layer {i}: zero extent in conv spec")));
                    }
                    if stride == 0 {
                        return Err(Error::config(format!("layer {i}: conv stride must be >= 1")));
                    }
                    if let Some(c) = channels {
                        if c != in_channels {
                            return Err(Error::config(format!(
                                "layer {i}: conv expects {in_channels} input channels but previous layer produces {c}"
                            )));
                        }
                    }
                    channels = Some(out_channels);
                    layers.push(Layer::Conv {
                        weights: Tensor::zeros(&[out_channels, in_channels, kernel, kernel]),
                        bias: vec![T::zero(); out_channels],
                        stride,
                    });
                }
                LayerSpec::BatchNorm { eps, momentum } => {
                    let c = channels.ok_or_else(|| {
                        Error::config(format!("layer {i}: batchnorm before any conv layer"))
                    })?;
                    if eps <= 0.0 {
                        return Err(Error::config(format!("layer {i}: batchnorm eps must be > 0")));
                    }
                    if !(0.0..=1.0).contains(&momentum) {
                        return Err(Error::config(format!(
                            "layer {i}: batchnorm momentum must be in [0, 1]"
                        )));
                    }
                    layers.push(Layer::BatchNorm {
                        gamma: vec![T::one(); c],
                        beta: vec![T::zero(); c],
                        running_mean: vec![T::zero(); c],
                        running_var: vec![T::one(); c],
                        eps,
                        momentum,
                    });
                }
                LayerSpec::Relu => {
                    if channels.is_none() {
                        return Err(Error::config(format!("layer {i}: relu before any conv layer")));
                    }
                    layers.push(Layer::Relu);
                }
            }
        }
        Ok(Network { specs, layers })
    }

    /// Kaiming-style fan-in initialization of the conv weights, seeded.
    pub fn init_kaiming(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut self.layers {
            if let Layer::Conv { weights, bias, .. } = layer {
                let shape = weights.shape();
                let fan_in = (shape[1] * shape[2] * shape[3]) as f64;
                let std = (2.0 / fan_in).sqrt();
                let dist = Normal::new(0.0, std).expect("std is finite and positive");
                for w in weights.data_mut() {
                    *w = T::from_real(dist.sample(&mut rng));
                }
                for b in bias.iter_mut() {
                    *b = T::zero();
                }
            }
        }
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    /// Number of input channels the first conv layer expects.
    pub fn input_channels(&self) -> usize {
        self.specs
            .iter()
            .find_map(|s| match s {
                LayerSpec::Conv2d { in_channels, .. } => Some(*in_channels),
                _ => None,
            })
            .unwrap_or(1)
    }

    /// Product of all conv strides.
    pub fn total_stride(&self) -> usize {
        self.specs
            .iter()
            .map(|s| match s {
                LayerSpec::Conv2d { stride, .. } => *stride,
                _ => 1,
            })
            .product()
    }

    /// Receptive field extent of one output unit, in input pixels.
    pub fn receptive_field(&self) -> usize {
        let mut rf = 1usize;
        let mut jump = 1usize;
        for s in &self.specs {
            if let LayerSpec::Conv2d { kernel, stride, .. } = s {
                rf += (kernel - 1) * jump;
                jump *= stride;
            }
        }
        rf
    }

    /// Output spatial extent for a given input extent (valid padding
    /// shape law applied per conv layer).
    pub fn output_extent(&self, input: usize) -> Result<usize> {
        let mut e = input;
        for s in &self.specs {
            if let LayerSpec::Conv2d { kernel, stride, .. } = s {
                e = conv_output_extent(e, *kernel, *stride)?;
            }
        }
        Ok(e)
    }

    /// Training-mode forward pass. Updates batchnorm running statistics
    /// and returns the output together with the tape backward needs.
    pub fn forward_train(&mut self, input: &Tensor<T>) -> Result<(Tensor<T>, Tape<T>)> {
        let mut x = input.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &mut self.layers {
            match layer {
                Layer::Conv { weights, bias, stride } => {
                    let out = conv2d_forward(&x, weights, bias, *stride)?;
                    caches.push(LayerCache::Conv { input: x });
                    x = out;
                }
                Layer::BatchNorm {
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                    eps,
                    momentum,
                } => {
                    let (out, cache) = batchnorm_forward_train(
                        &x,
                        gamma,
                        beta,
                        running_mean,
                        running_var,
                        T::from_real(*eps),
                        T::from_real(*momentum),
                    )?;
                    caches.push(LayerCache::BatchNorm(cache));
                    x = out;
                }
                Layer::Relu => {
                    let out = relu_forward(&x);
                    caches.push(LayerCache::Relu { input: x });
                    x = out;
                }
            }
        }
        x.check_finite("network forward output")?;
        let output_shape = x.shape().to_vec();
        Ok((x, Tape { caches, output_shape }))
    }

    /// Eval-mode forward pass: batchnorm running statistics are frozen,
    /// nothing is recorded.
    pub fn forward_eval(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let mut x = input.clone();
        for layer in &self.layers {
            x = match layer {
                Layer::Conv { weights, bias, stride } => conv2d_forward(&x, weights, bias, *stride)?,
                Layer::BatchNorm {
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                    eps,
                    ..
                } => batchnorm_forward_eval(&x, gamma, beta, running_mean, running_var, T::from_real(*eps))?,
                Layer::Relu => relu_forward(&x),
            };
        }
        x.check_finite("network forward output")?;
        Ok(x)
    }

    /// Backward pass over a recorded tape. Returns the gradient with
    /// respect to the pass input plus per-parameter gradients.
    pub fn backward(&self, tape: &Tape<T>, grad_output: &Tensor<T>) -> Result<(Tensor<T>, Gradients<T>)> {
        if grad_output.shape() != tape.output_shape.as_slice() {
            return Err(Error::config(format!(
                "backward grad shape {:?} does not match forward output shape {:?}",
                grad_output.shape(),
                tape.output_shape
            )));
        }
        let mut grads: Vec<Vec<T>> = Vec::new();
        let mut g = grad_output.clone();
        // Parameter grads are collected walking backwards, then reversed
        // into canonical (forward) order.
        let mut rev_param_grads: Vec<Vec<T>> = Vec::new();
        for (layer, cache) in self.layers.iter().zip(&tape.caches).rev() {
            match (layer, cache) {
                (Layer::Conv { weights, stride, .. }, LayerCache::Conv { input }) => {
                    let out = conv2d_backward(input, weights, *stride, &g)?;
                    rev_param_grads.push(out.bias);
                    rev_param_grads.push(out.weights.into_data());
                    g = out.input;
                }
                (Layer::BatchNorm { gamma, .. }, LayerCache::BatchNorm(cache)) => {
                    let out = batchnorm_backward(cache, gamma, &g)?;
                    rev_param_grads.push(out.beta);
                    rev_param_grads.push(out.gamma);
                    g = out.input;
                }
                (Layer::Relu, LayerCache::Relu { input }) => {
                    g = relu_backward(input, &g)?;
                }
                _ => {
                    return Err(Error::config(
                        "tape does not match network structure".to_string(),
                    ))
                }
            }
        }
        rev_param_grads.reverse();
        grads.append(&mut rev_param_grads);
        g.check_finite("network backward input gradient")?;
        Ok((g, Gradients { grads }))
    }

    /// Zeroed gradients matching this network's parameters.
    pub fn zero_gradients(&self) -> Gradients<T> {
        Gradients {
            grads: self
                .param_slices()
                .iter()
                .map(|p| vec![T::zero(); p.len()])
                .collect(),
        }
    }

    /// Parameter slices in canonical order: for each layer in profile
    /// order, conv -> (weights, bias), batchnorm -> (gamma, beta).
    pub fn param_slices(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv { weights, bias, .. } => {
                    out.push(weights.data());
                    out.push(bias);
                }
                Layer::BatchNorm { gamma, beta, .. } => {
                    out.push(gamma);
                    out.push(beta);
                }
                Layer::Relu => {}
            }
        }
        out
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv { weights, bias, .. } => {
                    out.push(weights.data_mut());
                    out.push(bias);
                }
                Layer::BatchNorm { gamma, beta, .. } => {
                    out.push(gamma);
                    out.push(beta);
                }
                Layer::Relu => {}
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    /// Running batchnorm statistics in layer order (mean, var per layer).
    pub(crate) fn bn_state(&self) -> Vec<(&[T], &[T])> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                Layer::BatchNorm {
                    running_mean,
                    running_var,
                    ..
                } => Some((running_mean.as_slice(), running_var.as_slice())),
                _ => None,
            })
            .collect()
    }

    pub(crate) fn bn_state_mut(&mut self) -> Vec<(&mut Vec<T>, &mut Vec<T>)> {
        self.layers
            .iter_mut()
            .filter_map(|l| match l {
                Layer::BatchNorm {
                    running_mean,
                    running_var,
                    ..
                } => Some((running_mean, running_var)),
                _ => None,
            })
            .collect()
    }

    /// Convert to a different scalar type (used to run gradient checks
    /// in f64 on an f32 network's structure).
    pub fn cast<U: Scalar>(&self) -> Network<U> {
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::Conv { weights, bias, stride } => Layer::Conv {
                    weights: weights.cast(),
                    bias: bias.iter().map(|&v| U::from_real(v.to_real())).collect(),
                    stride: *stride,
                },
                Layer::BatchNorm {
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                    eps,
                    momentum,
                } => Layer::BatchNorm {
                    gamma: gamma.iter().map(|&v| U::from_real(v.to_real())).collect(),
                    beta: beta.iter().map(|&v| U::from_real(v.to_real())).collect(),
                    running_mean: running_mean.iter().map(|&v| U::from_real(v.to_real())).collect(),
                    running_var: running_var.iter().map(|&v| U::from_real(v.to_real())).collect(),
                    eps: *eps,
                    momentum: *momentum,
                },
                Layer::Relu => Layer::Relu,
            })
            .collect();
        Network {
            specs: self.specs.clone(),
            layers,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_profile_geometry() {
        let net = Network::<f32>::new(default_profile()).unwrap();
        assert_eq!(net.total_stride(), 4);
        assert_eq!(net.receptive_field(), 39);
        // Shape law for the 127 template: 127 -> 61 -> 29 -> 27 -> 25 -> 23.
        assert_eq!(net.output_extent(127).unwrap(), 23);
        assert_eq!(net.output_extent(407).unwrap(), 93);
    }

    #[test]
    fn profile_must_end_with_conv() {
        let mut specs = toy_profile();
        specs.push(LayerSpec::Relu);
        assert!(Network::<f32>::new(specs).is_err());
    }

    #[test]
    fn profile_channel_chain_is_validated() {
        let specs = vec![
            LayerSpec::Conv2d { in_channels: 1, out_channels: 4, kernel: 3, stride: 1 },
            LayerSpec::Conv2d { in_channels: 8, out_channels: 4, kernel: 3, stride: 1 },
        ];
        assert!(Network::<f32>::new(specs).is_err());
    }

    #[test]
    fn profile_round_trips_through_text() {
        let specs = default_profile();
        let text = format_profile(&specs);
        assert_eq!(parse_profile(&text).unwrap(), specs);
    }

    #[test]
    fn forward_is_deterministic() {
        let mut net = Network::<f32>::new(toy_profile()).unwrap();
        net.init_kaiming(7);
        let input = Tensor::filled(&[1, 1, 9, 9], 0.3f32);
        let a = net.forward_eval(&input).unwrap();
        let b = net.forward_eval(&input).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn train_forward_shapes_match_shape_law() {
        let mut net = Network::<f32>::new(toy_profile()).unwrap();
        net.init_kaiming(3);
        let input = Tensor::filled(&[2, 1, 11, 11], 0.5f32);
        let (out, _tape) = net.forward_train(&input).unwrap();
        let e = net.output_extent(11).unwrap();
        assert_eq!(out.shape(), &[2, 3, e, e]);
    }
}
