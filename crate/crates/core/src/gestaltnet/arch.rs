use serde::{Deserialize, Serialize};

use crate::error::{GestaltError, Result};
use crate::nn::{ConvGeometry, PoolKind};

/// Channel progression of the ten convolutions at full scale.
pub const DEFAULT_CHANNELS: [usize; 10] = [32, 32, 64, 64, 96, 96, 128, 128, 160, 160];
pub const DEFAULT_INPUT_SIDE: usize = 100;
pub const DROPOUT_RATE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PoolWindow {
    Fixed { window: usize, stride: usize },
    /// Window covers the whole remaining feature map.
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "layer", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        out_channels: usize,
        geometry: ConvGeometry,
        /// Batch normalization followed by ReLU.
        bn_relu: bool,
    },
    Pool {
        kind: PoolKind,
        window: PoolWindow,
    },
    Dropout {
        rate: f64,
    },
    /// Flattens its input; the final dense layer is the classification head.
    Dense {
        outputs: usize,
    },
}

/// Ordered layer list plus input geometry and batch-norm constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureDescriptor {
    pub input_side: usize,
    pub input_channels: usize,
    pub layers: Vec<LayerSpec>,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
}

/// Options for building the standard five-pair network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchitectureOptions {
    pub channels: [usize; 10],
    pub kernel: usize,
    pub input_side: usize,
    /// Window of the final average pool; `None` pools globally.
    pub avg_pool_window: Option<usize>,
    pub dropout: f64,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
}

impl Default for ArchitectureOptions {
    fn default() -> Self {
        Self {
            channels: DEFAULT_CHANNELS,
            kernel: 3,
            input_side: DEFAULT_INPUT_SIDE,
            avg_pool_window: None,
            dropout: DROPOUT_RATE,
            bn_momentum: 0.9,
            bn_epsilon: 1e-3,
        }
    }
}

impl ArchitectureDescriptor {
    /// Ten 3x3 (by default) convolutions in five pairs, BN+ReLU after all but
    /// the last, max pooling after pairs one to four and average pooling after
    /// pair five, then dropout and a dense softmax head of `head_width`.
    pub fn gestalt(options: &ArchitectureOptions, head_width: usize) -> Result<Self> {
        let mut layers = Vec::with_capacity(18);
        for (i, &out_channels) in options.channels.iter().enumerate() {
            layers.push(LayerSpec::Conv {
                out_channels,
                geometry: ConvGeometry::same(options.kernel),
                bn_relu: i != 9,
            });
            if i % 2 == 1 {
                let pool = if i < 9 {
                    LayerSpec::Pool {
                        kind: PoolKind::Max,
                        window: PoolWindow::Fixed { window: 2, stride: 2 },
                    }
                } else {
                    LayerSpec::Pool {
                        kind: PoolKind::Avg,
                        window: match options.avg_pool_window {
                            Some(w) => PoolWindow::Fixed { window: w, stride: w },
                            None => PoolWindow::Global,
                        },
                    }
                };
                layers.push(pool);
            }
        }
        layers.push(LayerSpec::Dropout {
            rate: options.dropout,
        });
        layers.push(LayerSpec::Dense {
            outputs: head_width,
        });
        let arch = Self {
            input_side: options.input_side,
            input_channels: 1,
            layers,
            bn_momentum: options.bn_momentum,
            bn_epsilon: options.bn_epsilon,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn head_width(&self) -> usize {
        match self.layers.last() {
            Some(LayerSpec::Dense { outputs }) => *outputs,
            _ => 0,
        }
    }

    pub fn with_head_width(&self, width: usize) -> Result<Self> {
        let mut arch = self.clone();
        if let Some(LayerSpec::Dense { outputs }) = arch.layers.last_mut() {
            *outputs = width;
        }
        arch.validate()?;
        Ok(arch)
    }

    pub fn conv_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| matches!(l, LayerSpec::Conv { .. }))
            .count()
    }

    pub fn pool_kinds(&self) -> Vec<PoolKind> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                LayerSpec::Pool { kind, .. } => Some(*kind),
                _ => None,
            })
            .collect()
    }

    /// Output `(channels, height, width)` of every layer, in order.
    pub fn shape_trace(&self) -> Result<Vec<(usize, usize, usize)>> {
        let mut shape = (self.input_channels, self.input_side, self.input_side);
        let mut trace = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            shape = match *layer {
                LayerSpec::Conv {
                    out_channels,
                    geometry,
                    ..
                } => match (geometry.output_dim(shape.1), geometry.output_dim(shape.2)) {
                    (Some(h), Some(w)) if h > 0 && w > 0 => (out_channels, h, w),
                    _ => return Err(shape_err(i, shape)),
                },
                LayerSpec::Pool { window, .. } => match window {
                    PoolWindow::Global => (shape.0, 1, 1),
                    PoolWindow::Fixed { window, stride } => {
                        if window == 0 || stride == 0 || window > shape.1 || window > shape.2 {
                            return Err(shape_err(i, shape));
                        }
                        (
                            shape.0,
                            (shape.1 - window) / stride + 1,
                            (shape.2 - window) / stride + 1,
                        )
                    }
                },
                LayerSpec::Dropout { .. } => shape,
                LayerSpec::Dense { outputs } => (outputs, 1, 1),
            };
            trace.push(shape);
        }
        Ok(trace)
    }

    pub fn validate(&self) -> Result<()> {
        let arch_err = |msg: &str| Err(GestaltError::Config(format!("architecture: {msg}")));
        if self.conv_count() != 10 {
            return arch_err("exactly 10 convolution layers required");
        }
        if self.pool_kinds()
            != [PoolKind::Max, PoolKind::Max, PoolKind::Max, PoolKind::Max, PoolKind::Avg]
        {
            return arch_err("pooling must be max x4 then avg");
        }
        let flags: Vec<bool> = self
            .layers
            .iter()
            .filter_map(|l| match l {
                LayerSpec::Conv { bn_relu, .. } => Some(*bn_relu),
                _ => None,
            })
            .collect();
        if flags[..9].iter().any(|f| !f) || flags[9] {
            return arch_err("BN+ReLU must follow the first nine convolutions only");
        }
        if !matches!(self.layers.last(), Some(LayerSpec::Dense { outputs }) if *outputs >= 1) {
            return arch_err("network must end in a dense head of width >= 1");
        }
        for l in &self.layers {
            if let LayerSpec::Dropout { rate } = l {
                if !(0.0..1.0).contains(rate) {
                    return arch_err("dropout rate outside [0, 1)");
                }
            }
            if let LayerSpec::Conv { out_channels: 0, .. } = l {
                return arch_err("zero-channel convolution");
            }
        }
        if !(0.0..1.0).contains(&self.bn_momentum) || self.bn_epsilon <= 0.0 {
            return arch_err("batch norm momentum must be in [0, 1) and epsilon > 0");
        }
        self.shape_trace().map(|_| ())
    }
}

fn shape_err(layer: usize, shape: (usize, usize, usize)) -> GestaltError {
    GestaltError::Config(format!(
        "architecture: layer {layer} cannot consume feature map {shape:?}"
    ))
}
