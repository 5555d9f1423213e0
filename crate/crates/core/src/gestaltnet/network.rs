//! Parameterized network realizing an [`ArchitectureDescriptor`].

use rand_chacha::ChaCha8Rng;

use super::arch::{ArchitectureDescriptor, LayerSpec, PoolWindow};
use crate::error::{GestaltError, Result};
use crate::nn::batchnorm::BatchNormCache;
use crate::nn::pool::{pool2d_backward_rect, pool2d_rect, PoolCache};
use crate::nn::{
    batchnorm_backward, batchnorm_forward, conv2d_backward, conv2d_forward, dropout,
    dropout_backward, fc_backward, fc_forward, init_he_normal, init_xavier_modified, relu,
    relu_backward, BatchNormParams, Mode, PoolKind, Scalar, Tensor4,
};
use crate::rng::derive_seed;

#[derive(Debug, Clone, PartialEq)]
pub enum LayerState<T> {
    Conv {
        weight: Tensor4<T>,
        bias: Vec<T>,
        bn: Option<BatchNormParams<T>>,
    },
    Pool,
    Dropout,
    Dense {
        /// `(outputs, features, 1, 1)`
        weight: Tensor4<T>,
        bias: Vec<T>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    arch: ArchitectureDescriptor,
    layers: Vec<LayerState<T>>,
}

enum Trace<T> {
    Conv {
        input: Tensor4<T>,
        bn: Option<BatchNormCache<T>>,
        activated: Option<Tensor4<T>>,
    },
    Pool {
        cache: PoolCache,
        kind: PoolKind,
        window: (usize, usize),
        stride: (usize, usize),
    },
    Dropout {
        mask: Option<Vec<T>>,
        shape: [usize; 4],
    },
    Dense {
        input: Tensor4<T>,
    },
}

/// Cached activations of a train-mode forward pass.
pub struct ForwardTrace<T> {
    traces: Vec<Trace<T>>,
}

/// Parameter gradients in [`Network::params`] order.
pub type Gradients<T> = Vec<Vec<T>>;

fn pool_extent(window: PoolWindow, shape: [usize; 4]) -> ((usize, usize), (usize, usize)) {
    match window {
        PoolWindow::Fixed { window, stride } => ((window, window), (stride, stride)),
        PoolWindow::Global => ((shape[2], shape[3]), (shape[2], shape[3])),
    }
}

impl<T: Scalar> Network<T> {
    /// He-normal weights, zero biases, identity batch norm.
    pub fn new(arch: ArchitectureDescriptor, seed: u64) -> Result<Self> {
        arch.validate()?;
        let trace = arch.shape_trace()?;
        let mut channels = arch.input_channels;
        let mut layers = Vec::with_capacity(arch.layers.len());
        let mut features = 0;
        for (i, spec) in arch.layers.iter().enumerate() {
            let layer_seed = derive_seed(seed, &[i as u64]);
            let state = match *spec {
                LayerSpec::Conv {
                    out_channels,
                    geometry,
                    bn_relu,
                } => {
                    let k = geometry.kernel;
                    let weight = init_he_normal([out_channels, channels, k, k], layer_seed);
                    let bn = bn_relu.then(|| {
                        BatchNormParams::new(
                            out_channels,
                            T::from_f64_lossy(arch.bn_momentum),
                            T::from_f64_lossy(arch.bn_epsilon),
                        )
                    });
                    LayerState::Conv {
                        weight,
                        bias: vec![T::zero(); out_channels],
                        bn,
                    }
                }
                LayerSpec::Pool { .. } => LayerState::Pool,
                LayerSpec::Dropout { .. } => LayerState::Dropout,
                LayerSpec::Dense { outputs } => LayerState::Dense {
                    weight: init_he_normal([outputs, features, 1, 1], layer_seed),
                    bias: vec![T::zero(); outputs],
                },
            };
            let (c, h, w) = trace[i];
            channels = c;
            features = c * h * w;
            layers.push(state);
        }
        Ok(Self { arch, layers })
    }

    pub fn from_parts(arch: ArchitectureDescriptor, layers: Vec<LayerState<T>>) -> Result<Self> {
        arch.validate()?;
        let net = Self { arch, layers };
        net.check_shapes()?;
        Ok(net)
    }

    fn check_shapes(&self) -> Result<()> {
        let reference = Network::<T>::new(self.arch.clone(), 0)?;
        if reference.layers.len() != self.layers.len() {
            return Err(GestaltError::ShapeMismatch("layer count differs from descriptor".into()));
        }
        for (i, (a, b)) in reference.layers.iter().zip(&self.layers).enumerate() {
            let ok = match (a, b) {
                (
                    LayerState::Conv { weight: wa, bias: ba, bn: na },
                    LayerState::Conv { weight: wb, bias: bb, bn: nb },
                ) => {
                    wa.shape() == wb.shape()
                        && ba.len() == bb.len()
                        && na.as_ref().map(|p| p.channels()) == nb.as_ref().map(|p| p.channels())
                        && nb.as_ref().is_none_or(|p| {
                            p.beta.len() == p.channels()
                                && p.running_mean.len() == p.channels()
                                && p.running_var.len() == p.channels()
                                && p.running_var.iter().all(|&v| v >= T::zero())
                        })
                }
                (LayerState::Pool, LayerState::Pool) | (LayerState::Dropout, LayerState::Dropout) => true,
                (
                    LayerState::Dense { weight: wa, bias: ba },
                    LayerState::Dense { weight: wb, bias: bb },
                ) => wa.shape() == wb.shape() && ba.len() == bb.len(),
                _ => false,
            };
            if !ok {
                return Err(GestaltError::ShapeMismatch(format!(
                    "layer {i} parameters do not match the descriptor"
                )));
            }
        }
        Ok(())
    }

    pub fn arch(&self) -> &ArchitectureDescriptor {
        &self.arch
    }

    pub fn layers(&self) -> &[LayerState<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerState<T>] {
        &mut self.layers
    }

    pub fn head_width(&self) -> usize {
        self.arch.head_width()
    }

    /// Swaps the dense head for a freshly initialized one of `width`
    /// outputs (Xavier-normal variance scaled by `scale`, zero bias). Every
    /// other tensor is left untouched.
    pub fn replace_head(&mut self, width: usize, scale: f64, seed: u64) -> Result<()> {
        self.arch = self.arch.with_head_width(width)?;
        let head = self.layers.len() - 1;
        let features = match &self.layers[head] {
            LayerState::Dense { weight, .. } => weight.shape()[1],
            _ => return Err(GestaltError::Invariant("last layer is not dense".into())),
        };
        self.layers[head] = LayerState::Dense {
            weight: init_xavier_modified([width, features, 1, 1], scale, seed),
            bias: vec![T::zero(); width],
        };
        Ok(())
    }

    /// Trainable parameter buffers in a fixed order: per conv weight, bias,
    /// then gamma and beta when batch-normalized; dense weight and bias.
    pub fn params(&self) -> Vec<&[T]> {
        let mut out = Vec::new();
        for l in &self.layers {
            match l {
                LayerState::Conv { weight, bias, bn } => {
                    out.push(weight.data());
                    out.push(bias.as_slice());
                    if let Some(bn) = bn {
                        out.push(bn.gamma.as_slice());
                        out.push(bn.beta.as_slice());
                    }
                }
                LayerState::Dense { weight, bias } => {
                    out.push(weight.data());
                    out.push(bias.as_slice());
                }
                LayerState::Pool | LayerState::Dropout => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            match l {
                LayerState::Conv { weight, bias, bn } => {
                    out.push(weight.data_mut());
                    out.push(bias.as_mut_slice());
                    if let Some(bn) = bn {
                        out.push(bn.gamma.as_mut_slice());
                        out.push(bn.beta.as_mut_slice());
                    }
                }
                LayerState::Dense { weight, bias } => {
                    out.push(weight.data_mut());
                    out.push(bias.as_mut_slice());
                }
                LayerState::Pool | LayerState::Dropout => {}
            }
        }
        out
    }

    pub fn param_sizes(&self) -> Vec<usize> {
        self.params().iter().map(|p| p.len()).collect()
    }

    fn check_input(&self, input: &Tensor4<T>) -> Result<()> {
        let [_, c, h, w] = input.shape();
        let s = self.arch.input_side;
        if c != self.arch.input_channels || h != s || w != s {
            return Err(GestaltError::ShapeMismatch(format!(
                "network expects (N, {}, {s}, {s}), got {:?}",
                self.arch.input_channels,
                input.shape()
            )));
        }
        Ok(())
    }

    /// Inference forward pass: running batch statistics, dropout off.
    pub fn forward_infer(&self, input: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.forward_infer_inner(input, None)
    }

    /// Inference forward pass that also returns each pooling layer's output.
    pub fn forward_with_activations(
        &self,
        input: &Tensor4<T>,
    ) -> Result<(Tensor4<T>, Vec<Tensor4<T>>)> {
        let mut dumps = Vec::new();
        let logits = self.forward_infer_inner(input, Some(&mut dumps))?;
        Ok((logits, dumps))
    }

    fn forward_infer_inner(
        &self,
        input: &Tensor4<T>,
        mut dumps: Option<&mut Vec<Tensor4<T>>>,
    ) -> Result<Tensor4<T>> {
        self.check_input(input)?;
        let mut x = input.clone();
        for (spec, state) in self.arch.layers.iter().zip(&self.layers) {
            x = match (spec, state) {
                (LayerSpec::Conv { geometry, .. }, LayerState::Conv { weight, bias, bn }) => {
                    let y = conv2d_forward(&x, weight, bias, *geometry)?;
                    match bn {
                        Some(bn) => {
                            let mut frozen = bn.clone();
                            let (z, _) = batchnorm_forward(&y, &mut frozen, Mode::Infer)?;
                            relu(&z)
                        }
                        None => y,
                    }
                }
                (LayerSpec::Pool { kind, window }, LayerState::Pool) => {
                    let (win, stride) = pool_extent(*window, x.shape());
                    let (y, _) = pool2d_rect(&x, *kind, win, stride)?;
                    if let Some(d) = dumps.as_deref_mut() {
                        d.push(y.clone());
                    }
                    y
                }
                (LayerSpec::Dropout { .. }, LayerState::Dropout) => x,
                (LayerSpec::Dense { .. }, LayerState::Dense { weight, bias }) => {
                    fc_forward(&x.flatten(), weight.data(), bias)?
                }
                _ => return Err(GestaltError::Invariant("layer/state mismatch".into())),
            };
        }
        Ok(x)
    }

    /// Train-mode forward pass. Batch statistics normalize the batch and are
    /// folded into the running averages; dropout masks come from `rng`.
    pub fn forward_train(
        &mut self,
        input: &Tensor4<T>,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Tensor4<T>, ForwardTrace<T>)> {
        self.check_input(input)?;
        let mut x = input.clone();
        let mut traces = Vec::with_capacity(self.layers.len());
        for (spec, state) in self.arch.layers.iter().zip(self.layers.iter_mut()) {
            x = match (spec, state) {
                (LayerSpec::Conv { geometry, .. }, LayerState::Conv { weight, bias, bn }) => {
                    let y = conv2d_forward(&x, weight, bias, *geometry)?;
                    match bn {
                        Some(bn) => {
                            let (z, cache) = batchnorm_forward(&y, bn, Mode::Train)?;
                            let a = relu(&z);
                            traces.push(Trace::Conv {
                                input: x,
                                bn: cache,
                                activated: Some(a.clone()),
                            });
                            a
                        }
                        None => {
                            traces.push(Trace::Conv {
                                input: x,
                                bn: None,
                                activated: None,
                            });
                            y
                        }
                    }
                }
                (LayerSpec::Pool { kind, window }, LayerState::Pool) => {
                    let (win, stride) = pool_extent(*window, x.shape());
                    let (y, cache) = pool2d_rect(&x, *kind, win, stride)?;
                    traces.push(Trace::Pool {
                        cache,
                        kind: *kind,
                        window: win,
                        stride,
                    });
                    y
                }
                (LayerSpec::Dropout { rate }, LayerState::Dropout) => {
                    let shape = x.shape();
                    let (y, mask) = dropout(&x, *rate, Mode::Train, rng)?;
                    traces.push(Trace::Dropout { mask, shape });
                    y
                }
                (LayerSpec::Dense { .. }, LayerState::Dense { weight, bias }) => {
                    let flat = x.flatten();
                    let y = fc_forward(&flat, weight.data(), bias)?;
                    traces.push(Trace::Dense { input: flat });
                    y
                }
                _ => return Err(GestaltError::Invariant("layer/state mismatch".into())),
            };
        }
        Ok((x, ForwardTrace { traces }))
    }

    /// Backpropagates `grad_logits` through a trace from
    /// [`Network::forward_train`]. Returns parameter gradients in
    /// [`Network::params`] order and the gradient w.r.t. the input.
    pub fn backward(
        &self,
        trace: ForwardTrace<T>,
        grad_logits: &Tensor4<T>,
    ) -> Result<(Gradients<T>, Tensor4<T>)> {
        let mut grads: Vec<Vec<Vec<T>>> = Vec::with_capacity(self.layers.len());
        let mut g = grad_logits.clone();
        for ((spec, state), tr) in self
            .arch
            .layers
            .iter()
            .zip(&self.layers)
            .zip(trace.traces)
            .rev()
        {
            match (spec, state, tr) {
                (
                    LayerSpec::Conv { geometry, .. },
                    LayerState::Conv { weight, bn, .. },
                    Trace::Conv {
                        input,
                        bn: cache,
                        activated,
                    },
                ) => {
                    let mut extra = Vec::new();
                    if let (Some(bn), Some(cache), Some(act)) = (bn, cache, activated) {
                        let dz = relu_backward(&act, &g);
                        let bg = batchnorm_backward(&cache, &bn.gamma, &dz)?;
                        extra.push(bg.gamma);
                        extra.push(bg.beta);
                        g = bg.input;
                    }
                    let cg = conv2d_backward(&input, weight, *geometry, &g)?;
                    let mut layer = vec![cg.weight.into_vec(), cg.bias];
                    layer.extend(extra);
                    grads.push(layer);
                    g = cg.input;
                }
                (LayerSpec::Pool { .. }, LayerState::Pool, Trace::Pool { cache, kind, window, stride }) => {
                    g = pool2d_backward_rect(&cache, kind, window, stride, &g)?;
                }
                (LayerSpec::Dropout { .. }, LayerState::Dropout, Trace::Dropout { mask, shape }) => {
                    g = dropout_backward(mask.as_deref(), &g.reshape(shape)?);
                }
                (LayerSpec::Dense { .. }, LayerState::Dense { weight, .. }, Trace::Dense { input }) => {
                    let lg = fc_backward(&input, weight.data(), &g)?;
                    grads.push(vec![lg.weight, lg.bias]);
                    g = lg.input;
                }
                _ => return Err(GestaltError::Invariant("trace does not match network".into())),
            }
        }
        grads.reverse();
        Ok((grads.into_iter().flatten().collect(), g))
    }
}
