use rand::distributions::{Distribution, Uniform};

use super::{Activation, Conv2d, Dense, Layer, Network, Shape};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Half-width of the uniform range used for the final layer's parameters.
pub const FINAL_LAYER_RANGE: f64 = 3e-4;

#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Dense {
        outputs: usize,
        activation: Activation,
    },
    Conv2d {
        filters: usize,
        kernel: usize,
        activation: Activation,
    },
    Flatten,
    ConcatInput,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub input: Shape,
    pub aux_width: usize,
    pub layers: Vec<LayerSpec>,
    /// Whether the last parameterized layer gets the small uniform range
    /// instead of Xavier. Off for shared trunks that feed further heads.
    pub small_final: bool,
}

impl NetworkSpec {
    /// Dense-only stack: optional auxiliary concat on the input, ReLU hidden
    /// layers, then an output layer with `output_activation`.
    pub fn dense(
        inputs: usize,
        aux_width: usize,
        hidden: &[usize],
        outputs: usize,
        output_activation: Activation,
    ) -> Self {
        let mut layers = Vec::new();
        if aux_width > 0 {
            layers.push(LayerSpec::ConcatInput);
        }
        layers.extend(hidden.iter().map(|&h| LayerSpec::Dense {
            outputs: h,
            activation: Activation::Relu,
        }));
        layers.push(LayerSpec::Dense {
            outputs,
            activation: output_activation,
        });
        Self {
            input: Shape::Flat(inputs),
            aux_width,
            layers,
            small_final: true,
        }
    }

    /// Convolutional trunk on a single-channel grid, flattened, then the
    /// auxiliary concat and dense head.
    pub fn conv(
        side: usize,
        aux_width: usize,
        convs: &[(usize, usize)],
        hidden: &[usize],
        outputs: usize,
        output_activation: Activation,
    ) -> Self {
        let mut layers: Vec<LayerSpec> = convs
            .iter()
            .map(|&(filters, kernel)| LayerSpec::Conv2d {
                filters,
                kernel,
                activation: Activation::Relu,
            })
            .collect();
        layers.push(LayerSpec::Flatten);
        let head = Self::dense(0, aux_width, hidden, outputs, output_activation);
        layers.extend(head.layers);
        Self {
            input: Shape::Grid {
                channels: 1,
                height: side,
                width: side,
            },
            aux_width,
            layers,
            small_final: true,
        }
    }
}

fn uniform(rng: &mut Rng, limit: f64, n: usize) -> Vec<f64> {
    if limit == 0.0 {
        return vec![0.0; n];
    }
    let dist = Uniform::new_inclusive(-limit, limit);
    (0..n).map(|_| dist.sample(rng)).collect()
}

/// Builds a network from `spec`. The last parameterized layer draws weights
/// and biases from `U[-3e-4, 3e-4]`; every other layer uses Xavier-uniform
/// weights and zero biases.
pub fn init_network(spec: &NetworkSpec, rng: &mut Rng) -> Result<Network> {
    let last_param = spec
        .layers
        .iter()
        .rposition(|l| matches!(l, LayerSpec::Dense { .. } | LayerSpec::Conv2d { .. }))
        .ok_or_else(|| Error::Config("network needs at least one parameterized layer".into()))?;
    let mut shape = spec.input;
    let mut layers = Vec::with_capacity(spec.layers.len());
    for (idx, ls) in spec.layers.iter().enumerate() {
        let is_final = spec.small_final && idx == last_param;
        let layer = match (ls, shape) {
            (
                LayerSpec::Dense {
                    outputs,
                    activation,
                },
                Shape::Flat(inputs),
            ) => {
                let n = inputs * outputs;
                let (weights, bias) = if is_final {
                    (
                        uniform(rng, FINAL_LAYER_RANGE, n),
                        uniform(rng, FINAL_LAYER_RANGE, *outputs),
                    )
                } else {
                    let limit = (6.0 / (inputs + outputs) as f64).sqrt();
                    (uniform(rng, limit, n), vec![0.0; *outputs])
                };
                Layer::Dense(Dense {
                    inputs,
                    outputs: *outputs,
                    weights,
                    bias,
                    activation: *activation,
                    decay: false,
                })
            }
            (
                LayerSpec::Conv2d {
                    filters,
                    kernel,
                    activation,
                },
                Shape::Grid {
                    channels,
                    height,
                    width,
                },
            ) => {
                if *kernel > height || *kernel > width {
                    return Err(Error::Config(format!(
                        "kernel {kernel} larger than {height}x{width} input"
                    )));
                }
                let area = kernel * kernel;
                let n = filters * channels * area;
                let (weights, bias) = if is_final {
                    (
                        uniform(rng, FINAL_LAYER_RANGE, n),
                        uniform(rng, FINAL_LAYER_RANGE, *filters),
                    )
                } else {
                    let limit = (6.0 / ((channels + filters) * area) as f64).sqrt();
                    (uniform(rng, limit, n), vec![0.0; *filters])
                };
                Layer::Conv2d(Conv2d {
                    in_channels: channels,
                    out_channels: *filters,
                    kernel_h: *kernel,
                    kernel_w: *kernel,
                    in_h: height,
                    in_w: width,
                    weights,
                    bias,
                    activation: *activation,
                    decay: false,
                })
            }
            (LayerSpec::Flatten, _) => Layer::Flatten,
            (LayerSpec::ConcatInput, Shape::Flat(_)) => Layer::ConcatInput {
                width: spec.aux_width,
            },
            (ls, s) => {
                return Err(Error::Dimension(format!(
                    "layer spec {ls:?} cannot follow shape {s:?}"
                )))
            }
        };
        shape = layer.output_shape(shape)?;
        layers.push(layer);
    }
    Network::new(spec.input, spec.aux_width, layers)
}
