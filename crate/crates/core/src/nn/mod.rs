//! Feedforward networks with hand-written backpropagation.
//!
//! A network maps a primary input (a flat vector or a `C x H x W` grid) and an
//! optional auxiliary vector to an output vector. The auxiliary vector enters
//! through a single `ConcatInput` layer, which appends it to the flattened
//! features. All arithmetic is `f64`.

mod checkpoint;
pub mod gradcheck;
mod init;
mod lipschitz;

use std::sync::atomic::{AtomicU64, Ordering};

pub use init::{init_network, LayerSpec, NetworkSpec};
pub use lipschitz::{entropy_bounds, induced_norm, lipschitz_bound, spectral_norm, NormOrder};

use crate::error::{Error, Result};

static STAMP: AtomicU64 = AtomicU64::new(1);

fn next_stamp() -> u64 {
    STAMP.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Linear,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Linear => x,
        }
    }

    /// Derivative expressed through the pre-activation and the output.
    #[inline]
    fn derivative(self, pre: f64, post: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - post * post,
            Activation::Sigmoid => post * (1.0 - post),
            Activation::Linear => 1.0,
        }
    }

    /// Maximal slope of the activation.
    pub fn lipschitz(self) -> f64 {
        match self {
            Activation::Sigmoid => 0.25,
            _ => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Linear => "linear",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        Ok(match s {
            "relu" => Activation::Relu,
            "tanh" => Activation::Tanh,
            "sigmoid" => Activation::Sigmoid,
            "linear" => Activation::Linear,
            _ => return Err(Error::Parse(format!("unknown activation {s:?}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Grid {
        channels: usize,
        height: usize,
        width: usize,
    },
    Flat(usize),
}

impl Shape {
    pub fn size(self) -> usize {
        match self {
            Shape::Grid {
                channels,
                height,
                width,
            } => channels * height * width,
            Shape::Flat(n) => n,
        }
    }
}

/// Fully connected layer; weights are `outputs x inputs`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
    pub decay: bool,
}

impl Dense {
    fn forward_pre(&self, x: &[f64], pre: &mut [f64]) {
        for (o, p) in pre.iter_mut().enumerate() {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            *p = self.bias[o] + dot(row, x);
        }
    }

    pub fn weight(&self, o: usize, i: usize) -> f64 {
        self.weights[o * self.inputs + i]
    }
}

/// Stride-1 "valid" convolution; weights are `[out][in][kh][kw]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
    pub decay: bool,
}

impl Conv2d {
    pub fn out_h(&self) -> usize {
        self.in_h - self.kernel_h + 1
    }

    pub fn out_w(&self) -> usize {
        self.in_w - self.kernel_w + 1
    }

    #[inline]
    fn widx(&self, oc: usize, ic: usize, ky: usize, kx: usize) -> usize {
        ((oc * self.in_channels + ic) * self.kernel_h + ky) * self.kernel_w + kx
    }

    fn forward_pre(&self, x: &[f64], pre: &mut [f64]) {
        let (oh, ow) = (self.out_h(), self.out_w());
        for oc in 0..self.out_channels {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc = self.bias[oc];
                    for ic in 0..self.in_channels {
                        for ky in 0..self.kernel_h {
                            let row = (ic * self.in_h + y + ky) * self.in_w + xo;
                            let w0 = self.widx(oc, ic, ky, 0);
                            acc += dot(
                                &self.weights[w0..w0 + self.kernel_w],
                                &x[row..row + self.kernel_w],
                            );
                        }
                    }
                    pre[(oc * oh + y) * ow + xo] = acc;
                }
            }
        }
    }

    /// The layer as an explicit `(out_c*oh*ow) x (in_c*ih*iw)` matrix, row-major.
    pub fn unrolled(&self) -> (usize, usize, Vec<f64>) {
        let (oh, ow) = (self.out_h(), self.out_w());
        let rows = self.out_channels * oh * ow;
        let cols = self.in_channels * self.in_h * self.in_w;
        let mut m = vec![0.0; rows * cols];
        for oc in 0..self.out_channels {
            for y in 0..oh {
                for xo in 0..ow {
                    let r = (oc * oh + y) * ow + xo;
                    for ic in 0..self.in_channels {
                        for ky in 0..self.kernel_h {
                            for kx in 0..self.kernel_w {
                                let c = (ic * self.in_h + y + ky) * self.in_w + xo + kx;
                                m[r * cols + c] = self.weights[self.widx(oc, ic, ky, kx)];
                            }
                        }
                    }
                }
            }
        }
        (rows, cols, m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense(Dense),
    Conv2d(Conv2d),
    Flatten,
    /// Appends the auxiliary input to the current flat features.
    ConcatInput { width: usize },
}

impl Layer {
    fn params(&self) -> Option<(&[f64], &[f64])> {
        match self {
            Layer::Dense(d) => Some((&d.weights, &d.bias)),
            Layer::Conv2d(c) => Some((&c.weights, &c.bias)),
            _ => None,
        }
    }

    fn params_mut(&mut self) -> Option<(&mut Vec<f64>, &mut Vec<f64>)> {
        match self {
            Layer::Dense(d) => Some((&mut d.weights, &mut d.bias)),
            Layer::Conv2d(c) => Some((&mut c.weights, &mut c.bias)),
            _ => None,
        }
    }

    fn decayed(&self) -> bool {
        match self {
            Layer::Dense(d) => d.decay,
            Layer::Conv2d(c) => c.decay,
            _ => false,
        }
    }

    fn output_shape(&self, input: Shape) -> Result<Shape> {
        match (self, input) {
            (Layer::Dense(d), Shape::Flat(n)) if n == d.inputs => Ok(Shape::Flat(d.outputs)),
            (
                Layer::Conv2d(c),
                Shape::Grid {
                    channels,
                    height,
                    width,
                },
            ) if channels == c.in_channels
                && height == c.in_h
                && width == c.in_w
                && c.kernel_h <= height
                && c.kernel_w <= width =>
            {
                Ok(Shape::Grid {
                    channels: c.out_channels,
                    height: c.out_h(),
                    width: c.out_w(),
                })
            }
            (Layer::Flatten, s) => Ok(Shape::Flat(s.size())),
            (Layer::ConcatInput { width }, Shape::Flat(n)) => Ok(Shape::Flat(n + width)),
            (layer, s) => Err(Error::Dimension(format!(
                "layer {} cannot take input shape {s:?}",
                layer_name(layer)
            ))),
        }
    }
}

fn layer_name(layer: &Layer) -> &'static str {
    match layer {
        Layer::Dense(_) => "dense",
        Layer::Conv2d(_) => "conv2d",
        Layer::Flatten => "flatten",
        Layer::ConcatInput { .. } => "concat",
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-layer values recorded by a forward pass.
#[derive(Debug, Clone)]
struct Trace {
    input: Vec<f64>,
    pre: Vec<f64>,
    output: Vec<f64>,
}

/// Intermediate values of one forward pass, consumed by [`Network::backward`].
#[derive(Debug, Clone)]
pub struct Cache {
    stamp: u64,
    traces: Vec<Trace>,
}

/// Forward state for one primary input evaluated against several auxiliary
/// vectors, sharing all computation up to the concat junction.
#[derive(Debug, Clone)]
pub struct SharedCache {
    stamp: u64,
    prefix: Vec<Trace>,
    features: Vec<f64>,
    branches: Vec<Vec<Trace>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Gradients mirroring a network's parameters, plus gradients with respect
/// to the primary and auxiliary inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<ParamGrad>,
    pub input: Vec<f64>,
    pub aux: Vec<f64>,
}

impl GradientSet {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| match l.params() {
                    Some((w, b)) => ParamGrad {
                        weights: vec![0.0; w.len()],
                        bias: vec![0.0; b.len()],
                    },
                    None => ParamGrad {
                        weights: vec![],
                        bias: vec![],
                    },
                })
                .collect(),
            input: vec![0.0; net.input.size()],
            aux: vec![0.0; net.aux_width],
        }
    }

    /// Adds parameter gradients of `other` into `self`. Input gradients are
    /// left untouched.
    pub fn accumulate(&mut self, other: &GradientSet) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.iter_mut().zip(&b.weights).for_each(|(x, y)| *x += y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.layers {
            g.weights.iter_mut().chain(g.bias.iter_mut()).for_each(|v| *v *= factor);
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|g| g.weights.iter().chain(&g.bias).copied())
            .collect()
    }
}

/// An ordered stack of layers.
#[derive(Debug, Clone)]
pub struct Network {
    input: Shape,
    aux_width: usize,
    layers: Vec<Layer>,
    stamp: u64,
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.input == other.input && self.aux_width == other.aux_width && self.layers == other.layers
    }
}

impl Network {
    /// Validates that the layers compose and that the auxiliary input enters
    /// at exactly one junction (or not at all when `aux_width == 0`).
    pub fn new(input: Shape, aux_width: usize, layers: Vec<Layer>) -> Result<Self> {
        let net = Self {
            input,
            aux_width,
            layers,
            stamp: next_stamp(),
        };
        net.output_shape()?;
        let concats: Vec<usize> = net
            .layers
            .iter()
            .filter_map(|l| match l {
                Layer::ConcatInput { width } => Some(*width),
                _ => None,
            })
            .collect();
        match (aux_width, concats.as_slice()) {
            (0, []) => {}
            (w, [c]) if w == *c && w > 0 => {}
            _ => {
                return Err(Error::Dimension(format!(
                    "auxiliary width {aux_width} needs exactly one matching concat layer"
                )))
            }
        }
        for layer in &net.layers {
            if let Some((w, b)) = layer.params() {
                if w.iter().chain(b).any(|v| !v.is_finite()) {
                    return Err(Error::NumericOverflow("non-finite parameter".into()));
                }
            }
        }
        for layer in &net.layers {
            match layer {
                Layer::Dense(d) if d.weights.len() != d.inputs * d.outputs || d.bias.len() != d.outputs => {
                    return Err(Error::Dimension("dense parameter sizes".into()))
                }
                Layer::Conv2d(c)
                    if c.weights.len()
                        != c.out_channels * c.in_channels * c.kernel_h * c.kernel_w
                        || c.bias.len() != c.out_channels =>
                {
                    return Err(Error::Dimension("conv parameter sizes".into()))
                }
                _ => {}
            }
        }
        Ok(net)
    }

    pub fn input_shape(&self) -> Shape {
        self.input
    }

    pub fn aux_width(&self) -> usize {
        self.aux_width
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn output_shape(&self) -> Result<Shape> {
        self.layers
            .iter()
            .try_fold(self.input, |s, l| l.output_shape(s))
    }

    pub fn output_size(&self) -> usize {
        self.output_shape().map(Shape::size).unwrap_or(0)
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .filter_map(Layer::params)
            .map(|(w, b)| w.len() + b.len())
            .sum()
    }

    /// Calls `f` on every parameter tensor in layer order (weights, then bias).
    pub fn for_each_param(&self, mut f: impl FnMut(&[f64])) {
        for (w, b) in self.layers.iter().filter_map(Layer::params) {
            f(w);
            f(b);
        }
    }

    pub fn for_each_param_mut(&mut self, mut f: impl FnMut(&mut [f64])) {
        self.stamp = next_stamp();
        for layer in &mut self.layers {
            if let Some((w, b)) = layer.params_mut() {
                f(w);
                f(b);
            }
        }
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.for_each_param(|p| out.extend_from_slice(p));
        out
    }

    pub fn set_flat_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::Dimension("flat parameter length".into()));
        }
        let mut offset = 0;
        self.for_each_param_mut(|p| {
            p.copy_from_slice(&values[offset..offset + p.len()]);
            offset += p.len();
        });
        Ok(())
    }

    pub fn layer_mut(&mut self, idx: usize) -> &mut Layer {
        self.stamp = next_stamp();
        &mut self.layers[idx]
    }

    /// Marks every dense and conv layer at or after `from` for weight decay.
    pub fn set_decay_from(&mut self, from: usize) {
        for layer in self.layers.iter_mut().skip(from) {
            match layer {
                Layer::Dense(d) => d.decay = true,
                Layer::Conv2d(c) => c.decay = true,
                _ => {}
            }
        }
    }

    fn check_inputs(&self, input: &[f64], aux: &[f64]) -> Result<()> {
        if input.len() != self.input.size() || aux.len() != self.aux_width {
            return Err(Error::Dimension(format!(
                "network expects input {} and aux {}, got {} and {}",
                self.input.size(),
                self.aux_width,
                input.len(),
                aux.len()
            )));
        }
        Ok(())
    }

    fn layer_forward(&self, layer: &Layer, x: Vec<f64>, aux: &[f64]) -> Trace {
        match layer {
            Layer::Dense(d) => {
                let mut pre = vec![0.0; d.outputs];
                d.forward_pre(&x, &mut pre);
                let output = pre.iter().map(|v| d.activation.apply(*v)).collect();
                Trace {
                    input: x,
                    pre,
                    output,
                }
            }
            Layer::Conv2d(c) => {
                let mut pre = vec![0.0; c.out_channels * c.out_h() * c.out_w()];
                c.forward_pre(&x, &mut pre);
                let output = pre.iter().map(|v| c.activation.apply(*v)).collect();
                Trace {
                    input: x,
                    pre,
                    output,
                }
            }
            Layer::Flatten => Trace {
                output: x.clone(),
                input: x,
                pre: vec![],
            },
            Layer::ConcatInput { .. } => {
                let mut output = x.clone();
                output.extend_from_slice(aux);
                Trace {
                    input: x,
                    pre: vec![],
                    output,
                }
            }
        }
    }

    /// Backpropagates `grad_out` through one layer, accumulating parameter
    /// gradients, and returns the gradient with respect to the layer input.
    fn layer_backward(
        layer: &Layer,
        trace: &Trace,
        grad_out: &[f64],
        pgrad: &mut ParamGrad,
        aux_grad: &mut [f64],
    ) -> Vec<f64> {
        match layer {
            Layer::Dense(d) => {
                let delta: Vec<f64> = grad_out
                    .iter()
                    .zip(trace.pre.iter().zip(&trace.output))
                    .map(|(g, (p, o))| g * d.activation.derivative(*p, *o))
                    .collect();
                dense_backward(d, &trace.input, &delta, pgrad)
            }
            Layer::Conv2d(c) => {
                let delta: Vec<f64> = grad_out
                    .iter()
                    .zip(trace.pre.iter().zip(&trace.output))
                    .map(|(g, (p, o))| g * c.activation.derivative(*p, *o))
                    .collect();
                let (oh, ow) = (c.out_h(), c.out_w());
                let mut gin = vec![0.0; trace.input.len()];
                for oc in 0..c.out_channels {
                    for y in 0..oh {
                        for xo in 0..ow {
                            let dv = delta[(oc * oh + y) * ow + xo];
                            if dv == 0.0 {
                                continue;
                            }
                            pgrad.bias[oc] += dv;
                            for ic in 0..c.in_channels {
                                for ky in 0..c.kernel_h {
                                    let row = (ic * c.in_h + y + ky) * c.in_w + xo;
                                    let w0 = c.widx(oc, ic, ky, 0);
                                    for kx in 0..c.kernel_w {
                                        pgrad.weights[w0 + kx] += dv * trace.input[row + kx];
                                        gin[row + kx] += dv * c.weights[w0 + kx];
                                    }
                                }
                            }
                        }
                    }
                }
                gin
            }
            Layer::Flatten => grad_out.to_vec(),
            Layer::ConcatInput { width } => {
                let n = grad_out.len() - width;
                aux_grad
                    .iter_mut()
                    .zip(&grad_out[n..])
                    .for_each(|(a, g)| *a += g);
                grad_out[..n].to_vec()
            }
        }
    }

    /// Runs the network and records what [`Network::backward`] needs.
    pub fn forward(&self, input: &[f64], aux: &[f64]) -> Result<(Vec<f64>, Cache)> {
        self.check_inputs(input, aux)?;
        let mut traces = Vec::with_capacity(self.layers.len());
        let mut x = input.to_vec();
        for layer in &self.layers {
            let t = self.layer_forward(layer, x, aux);
            x = t.output.clone();
            traces.push(t);
        }
        Ok((
            x,
            Cache {
                stamp: self.stamp,
                traces,
            },
        ))
    }

    /// Output only, without keeping a cache.
    pub fn predict(&self, input: &[f64], aux: &[f64]) -> Result<Vec<f64>> {
        self.check_inputs(input, aux)?;
        let mut x = input.to_vec();
        for layer in &self.layers {
            x = self.layer_forward(layer, x, aux).output;
        }
        Ok(x)
    }

    /// Gradients of `upstream . output` with respect to every parameter and
    /// both inputs.
    pub fn backward(&self, cache: &Cache, upstream: &[f64]) -> Result<GradientSet> {
        if cache.stamp != self.stamp || cache.traces.len() != self.layers.len() {
            return Err(Error::Contract(
                "cache was produced by a different parameter state".into(),
            ));
        }
        if upstream.len() != self.output_size() {
            return Err(Error::Dimension("upstream gradient length".into()));
        }
        let mut grads = GradientSet::zeros_like(self);
        let mut g = upstream.to_vec();
        for ((layer, trace), pg) in self
            .layers
            .iter()
            .zip(&cache.traces)
            .zip(grads.layers.iter_mut())
            .rev()
        {
            g = Self::layer_backward(layer, trace, &g, pg, &mut grads.aux);
        }
        grads.input = g;
        Ok(grads)
    }

    fn junction(&self) -> Option<usize> {
        let j = self
            .layers
            .iter()
            .position(|l| matches!(l, Layer::ConcatInput { .. }))?;
        matches!(self.layers.get(j + 1), Some(Layer::Dense(_))).then_some(j)
    }

    /// Evaluates the network on one primary input against each auxiliary
    /// vector in `auxes`. Layers before the concat junction run once.
    pub fn forward_shared(
        &self,
        input: &[f64],
        auxes: &[&[f64]],
    ) -> Result<(Vec<Vec<f64>>, SharedCache)> {
        let j = self
            .junction()
            .ok_or_else(|| Error::Contract("shared forward needs concat followed by dense".into()))?;
        for aux in auxes {
            self.check_inputs(input, aux)?;
        }
        let mut prefix = Vec::with_capacity(j);
        let mut x = input.to_vec();
        for layer in &self.layers[..j] {
            let t = self.layer_forward(layer, x, &[]);
            x = t.output.clone();
            prefix.push(t);
        }
        let Layer::Dense(first) = &self.layers[j + 1] else {
            unreachable!()
        };
        let nf = x.len();
        // feature contribution (plus bias) to the first dense layer, shared by all branches
        let base: Vec<f64> = (0..first.outputs)
            .map(|o| first.bias[o] + dot(&first.weights[o * first.inputs..o * first.inputs + nf], &x))
            .collect();
        let mut outputs = Vec::with_capacity(auxes.len());
        let mut branches = Vec::with_capacity(auxes.len());
        for aux in auxes {
            let pre: Vec<f64> = (0..first.outputs)
                .map(|o| {
                    let row = &first.weights[o * first.inputs + nf..(o + 1) * first.inputs];
                    base[o] + dot(row, aux)
                })
                .collect();
            let output: Vec<f64> = pre.iter().map(|v| first.activation.apply(*v)).collect();
            let mut traces = Vec::with_capacity(self.layers.len() - j - 1);
            // input of the first dense layer is only needed for its aux part
            let mut y = output.clone();
            traces.push(Trace {
                input: aux.to_vec(),
                pre,
                output,
            });
            for layer in &self.layers[j + 2..] {
                let t = self.layer_forward(layer, y, aux);
                y = t.output.clone();
                traces.push(t);
            }
            outputs.push(y);
            branches.push(traces);
        }
        Ok((
            outputs,
            SharedCache {
                stamp: self.stamp,
                prefix,
                features: x,
                branches,
            },
        ))
    }

    /// Sum over branches of the gradients of `upstreams[b] . output_b`.
    ///
    /// `aux_grads[b]` receives the gradient with respect to auxiliary vector
    /// `b`; the returned set's `aux` field is their sum.
    pub fn backward_shared(
        &self,
        cache: &SharedCache,
        upstreams: &[Vec<f64>],
    ) -> Result<(GradientSet, Vec<Vec<f64>>)> {
        let j = self
            .junction()
            .ok_or_else(|| Error::Contract("shared backward needs concat followed by dense".into()))?;
        if cache.stamp != self.stamp {
            return Err(Error::Contract(
                "cache was produced by a different parameter state".into(),
            ));
        }
        if upstreams.len() != cache.branches.len() {
            return Err(Error::Dimension("one upstream per branch".into()));
        }
        let Layer::Dense(first) = &self.layers[j + 1] else {
            unreachable!()
        };
        let nf = cache.features.len();
        let mut grads = GradientSet::zeros_like(self);
        let mut delta_sum = vec![0.0; first.outputs];
        let mut aux_grads = Vec::with_capacity(upstreams.len());
        for (branch, up) in cache.branches.iter().zip(upstreams) {
            let mut g = up.clone();
            let mut scratch_aux = vec![0.0; self.aux_width];
            for (offset, (layer, trace)) in self.layers[j + 2..]
                .iter()
                .zip(&branch[1..])
                .enumerate()
                .rev()
            {
                g = Self::layer_backward(
                    layer,
                    trace,
                    &g,
                    &mut grads.layers[j + 2 + offset],
                    &mut scratch_aux,
                );
            }
            let t = &branch[0];
            let delta: Vec<f64> = g
                .iter()
                .zip(t.pre.iter().zip(&t.output))
                .map(|(g, (p, o))| g * first.activation.derivative(*p, *o))
                .collect();
            let pg = &mut grads.layers[j + 1];
            let mut ag = vec![0.0; self.aux_width];
            for (o, dv) in delta.iter().enumerate() {
                if *dv == 0.0 {
                    continue;
                }
                delta_sum[o] += dv;
                let row = o * first.inputs + nf;
                for (a, av) in t.input.iter().enumerate() {
                    pg.weights[row + a] += dv * av;
                    ag[a] += dv * first.weights[row + a];
                }
            }
            grads.aux.iter_mut().zip(&ag).for_each(|(s, v)| *s += v);
            aux_grads.push(ag);
        }
        let pg = &mut grads.layers[j + 1];
        let mut gfeat = vec![0.0; nf];
        for (o, dv) in delta_sum.iter().enumerate() {
            pg.bias[o] += dv;
            if *dv == 0.0 {
                continue;
            }
            let row = o * first.inputs;
            for (f, fv) in cache.features.iter().enumerate() {
                pg.weights[row + f] += dv * fv;
                gfeat[f] += dv * first.weights[row + f];
            }
        }
        let mut g = gfeat;
        let mut unused = vec![];
        for ((layer, trace), pg) in self.layers[..j]
            .iter()
            .zip(&cache.prefix)
            .zip(grads.layers.iter_mut())
            .rev()
        {
            g = Self::layer_backward(layer, trace, &g, pg, &mut unused);
        }
        grads.input = g;
        Ok((grads, aux_grads))
    }

    /// `theta <- theta - lr * (grad + l2_decay * theta)` on decayed layers and
    /// `theta <- theta - lr * grad` elsewhere.
    pub fn apply_update(&mut self, grads: &GradientSet, lr: f64, l2_decay: f64) -> Result<()> {
        if grads.layers.len() != self.layers.len() {
            return Err(Error::Dimension("gradient set does not match network".into()));
        }
        if lr == 0.0 {
            return Ok(());
        }
        self.stamp = next_stamp();
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            let decay = if layer.decayed() { l2_decay } else { 0.0 };
            if let Some((w, b)) = layer.params_mut() {
                if w.len() != g.weights.len() || b.len() != g.bias.len() {
                    return Err(Error::Dimension("gradient tensor size".into()));
                }
                for (p, gv) in w.iter_mut().zip(&g.weights).chain(b.iter_mut().zip(&g.bias)) {
                    *p -= lr * (gv + decay * *p);
                }
            }
        }
        Ok(())
    }

    /// `self <- (1 - tau) * self + tau * source`, parameter by parameter.
    pub fn soft_update_from(&mut self, source: &Network, tau: f64) -> Result<()> {
        if self.param_count() != source.param_count() || self.layers.len() != source.layers.len() {
            return Err(Error::Dimension("soft update between different shapes".into()));
        }
        self.stamp = next_stamp();
        for (dst, src) in self.layers.iter_mut().zip(&source.layers) {
            if let (Some((dw, db)), Some((sw, sb))) = (dst.params_mut(), src.params()) {
                if dw.len() != sw.len() || db.len() != sb.len() {
                    return Err(Error::Dimension("soft update tensor size".into()));
                }
                for (d, s) in dw.iter_mut().zip(sw).chain(db.iter_mut().zip(sb)) {
                    *d = soft_blend(*d, *s, tau);
                }
            }
        }
        Ok(())
    }
}

/// Convex blend used for target tracking; exact at `tau` 0 and 1.
#[inline]
pub fn soft_blend(target: f64, source: f64, tau: f64) -> f64 {
    if tau == 0.0 {
        target
    } else if tau == 1.0 || target == source {
        source
    } else {
        (1.0 - tau) * target + tau * source
    }
}

fn dense_backward(d: &Dense, input: &[f64], delta: &[f64], pg: &mut ParamGrad) -> Vec<f64> {
    let mut gin = vec![0.0; d.inputs];
    for (o, dv) in delta.iter().enumerate() {
        pg.bias[o] += dv;
        if *dv == 0.0 {
            continue;
        }
        let row = o * d.inputs;
        let wrow = &d.weights[row..row + d.inputs];
        let grow = &mut pg.weights[row..row + d.inputs];
        for i in 0..d.inputs {
            grow[i] += dv * input[i];
            gin[i] += dv * wrow[i];
        }
    }
    gin
}
