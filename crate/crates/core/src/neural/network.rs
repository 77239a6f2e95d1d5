//! Feedforward networks built from dense layers and an optional strided
//! 1-D convolution in front.
//!
//! Parameters live in one flat vector. Each layer owns a contiguous range:
//! weights first (row-major, `out x in` for dense, `channels x kernel` for
//! conv1d), then biases.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gemm::{gemm, View};
use crate::error::{Error, Result};
use crate::par;
use crate::states::RandomSeed;

/// Samples per work unit in batched passes. Partial results are summed in
/// chunk order, so gradients do not depend on the worker count.
const CHUNK: usize = 64;

/// Hidden widths of the full-size dense architecture (seven weight layers).
pub const DEFAULT_HIDDEN_WIDTHS: [usize; 6] = [512, 512, 512, 384, 256, 128];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
    Linear,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Activation::Tanh => z.tanh(),
            Activation::Linear => z,
        }
    }

    /// Derivative at pre-activation `z`, given `a = apply(z)`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Tanh => 1.0 - a * a,
            Activation::Linear => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        out_width: usize,
        activation: Activation,
    },
    /// Same kernel applied at every window; output is position-major
    /// (`position * channels + channel`).
    Conv1d {
        kernel_width: usize,
        stride: usize,
        channels: usize,
        activation: Activation,
    },
}

impl LayerSpec {
    pub fn activation(&self) -> Activation {
        match *self {
            LayerSpec::Dense { activation, .. } | LayerSpec::Conv1d { activation, .. } => activation,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_width: usize,
    pub layers: Vec<LayerSpec>,
    pub output_width: usize,
}

/// Resolved geometry of one layer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct LayerShape {
    pub in_width: usize,
    pub out_width: usize,
    pub offset: usize,
    pub weight_len: usize,
    pub bias_len: usize,
    pub conv: Option<ConvShape>,
    pub activation: Activation,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct ConvShape {
    pub kernel: usize,
    pub stride: usize,
    pub channels: usize,
    pub positions: usize,
}

impl LayerShape {
    fn param_len(&self) -> usize {
        self.weight_len + self.bias_len
    }

    fn fan_in(&self) -> usize {
        match self.conv {
            Some(c) => c.kernel,
            None => self.in_width,
        }
    }
}

impl NetworkSpec {
    /// Dense network: ReLU hidden layers and a sigmoid output head.
    pub fn dense(input_width: usize, hidden: &[usize], output_width: usize) -> Self {
        let mut layers: Vec<LayerSpec> = hidden
            .iter()
            .map(|&w| LayerSpec::Dense {
                out_width: w,
                activation: Activation::Relu,
            })
            .collect();
        layers.push(LayerSpec::Dense {
            out_width: output_width,
            activation: Activation::Sigmoid,
        });
        Self {
            input_width,
            layers,
            output_width,
        }
    }

    /// Strided conv1d front end (ReLU) followed by a dense network.
    pub fn conv_dense(
        input_width: usize,
        kernel_width: usize,
        channels: usize,
        hidden: &[usize],
        output_width: usize,
    ) -> Self {
        let mut spec = Self::dense(0, hidden, output_width);
        spec.input_width = input_width;
        spec.layers.insert(
            0,
            LayerSpec::Conv1d {
                kernel_width,
                stride: kernel_width,
                channels,
                activation: Activation::Relu,
            },
        );
        spec
    }

    /// The full-size seven-layer dense architecture.
    pub fn default_dense(input_width: usize, output_width: usize) -> Self {
        Self::dense(input_width, &DEFAULT_HIDDEN_WIDTHS, output_width)
    }

    pub fn validate(&self) -> Result<()> {
        self.shapes().map(|_| ())
    }

    pub fn parameter_count(&self) -> Result<usize> {
        Ok(self.shapes()?.iter().map(LayerShape::param_len).sum())
    }

    pub(crate) fn shapes(&self) -> Result<Vec<LayerShape>> {
        let bad = |m: String| Err(Error::InvalidNetwork(m));
        if self.input_width == 0 {
            return bad("input width must be positive".into());
        }
        if !matches!(self.output_width, 1 | 3) {
            return bad(format!("output width {} not in {{1, 3}}", self.output_width));
        }
        if self.layers.is_empty() {
            return bad("network has no layers".into());
        }
        let mut shapes = Vec::with_capacity(self.layers.len());
        let mut width = self.input_width;
        let mut offset = 0;
        for (i, layer) in self.layers.iter().enumerate() {
            let shape = match *layer {
                LayerSpec::Dense {
                    out_width,
                    activation,
                } => {
                    if out_width == 0 {
                        return bad(format!("layer {i}: zero width"));
                    }
                    LayerShape {
                        in_width: width,
                        out_width,
                        offset,
                        weight_len: out_width * width,
                        bias_len: out_width,
                        conv: None,
                        activation,
                    }
                }
                LayerSpec::Conv1d {
                    kernel_width,
                    stride,
                    channels,
                    activation,
                } => {
                    if i != 0 {
                        return bad(format!("layer {i}: conv1d is only allowed as the first layer"));
                    }
                    if kernel_width == 0 || stride == 0 || channels == 0 {
                        return bad("conv1d sizes must be positive".into());
                    }
                    if kernel_width > width || (width - kernel_width) % stride != 0 {
                        return bad(format!(
                            "conv1d kernel {kernel_width} / stride {stride} does not tile input width {width}"
                        ));
                    }
                    let positions = (width - kernel_width) / stride + 1;
                    LayerShape {
                        in_width: width,
                        out_width: positions * channels,
                        offset,
                        weight_len: channels * kernel_width,
                        bias_len: channels,
                        conv: Some(ConvShape {
                            kernel: kernel_width,
                            stride,
                            channels,
                            positions,
                        }),
                        activation,
                    }
                }
            };
            offset += shape.param_len();
            width = shape.out_width;
            shapes.push(shape);
        }
        if width != self.output_width {
            return bad(format!(
                "last layer width {width} differs from output width {}",
                self.output_width
            ));
        }
        Ok(shapes)
    }
}

/// Network parameters together with their architecture.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkModel {
    spec: NetworkSpec,
    params: Vec<f64>,
    seed: RandomSeed,
    shapes: Vec<LayerShape>,
}

/// Per-layer caches of a batched forward pass.
struct Trace {
    /// `acts[0]` is the input, `acts[l + 1]` the output of layer `l`.
    acts: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl NetworkModel {
    /// Fan-in scaled uniform initialization: `U(-a, a)` with
    /// `a = sqrt(6 / fan_in)` before ReLU and `sqrt(3 / fan_in)` otherwise.
    /// Biases start at zero.
    pub fn new(spec: NetworkSpec, seed: RandomSeed) -> Result<Self> {
        let shapes = spec.shapes()?;
        let total = shapes.iter().map(LayerShape::param_len).sum();
        let mut params = vec![0.0; total];
        let mut rng = seed.rng();
        for s in &shapes {
            let scale = if s.activation == Activation::Relu { 6.0 } else { 3.0 };
            let a = (scale / s.fan_in() as f64).sqrt();
            for w in &mut params[s.offset..s.offset + s.weight_len] {
                *w = rng.random_range(-a..a);
            }
        }
        Ok(Self {
            spec,
            params,
            seed,
            shapes,
        })
    }

    pub fn from_parameters(spec: NetworkSpec, params: Vec<f64>, seed: RandomSeed) -> Result<Self> {
        let shapes = spec.shapes()?;
        let total: usize = shapes.iter().map(LayerShape::param_len).sum();
        if params.len() != total {
            return Err(Error::InvalidNetwork(format!(
                "expected {total} parameters, got {}",
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidNetwork("non-finite parameter".into()));
        }
        Ok(Self {
            spec,
            params,
            seed,
            shapes,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn seed(&self) -> RandomSeed {
        self.seed
    }

    pub fn parameters(&self) -> &[f64] {
        &self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    pub fn input_width(&self) -> usize {
        self.spec.input_width
    }

    pub fn output_width(&self) -> usize {
        self.spec.output_width
    }

    /// `(weights, biases)` of layer `l`.
    pub fn layer_parameters(&self, l: usize) -> (&[f64], &[f64]) {
        let s = &self.shapes[l];
        let w = &self.params[s.offset..s.offset + s.weight_len];
        let b = &self.params[s.offset + s.weight_len..s.offset + s.param_len()];
        (w, b)
    }

    pub fn layer_parameters_mut(&mut self, l: usize) -> (&mut [f64], &mut [f64]) {
        let s = self.shapes[l];
        let (w, b) = self.params[s.offset..s.offset + s.param_len()].split_at_mut(s.weight_len);
        (w, b)
    }

    pub(crate) fn set_parameters(&mut self, params: &[f64]) {
        self.params.copy_from_slice(params);
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.spec.input_width {
            return Err(Error::DimensionMismatch(format!(
                "network input width {}, got {}",
                self.spec.input_width,
                input.len()
            )));
        }
        Ok(self.trace(input, 1).acts.pop().unwrap_or_default())
    }

    /// Forward pass over row-major samples; returns row-major outputs.
    pub fn forward_batch(&self, inputs: &[f64]) -> Result<Vec<f64>> {
        let n = self.batch_len(inputs)?;
        let w = self.spec.input_width;
        let chunks = n.div_ceil(CHUNK);
        let parts = par::map_range(chunks, |c| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(n);
            self.trace(&inputs[lo * w..hi * w], hi - lo)
                .acts
                .pop()
                .unwrap_or_default()
        });
        Ok(parts.concat())
    }

    /// Mean absolute error over the batch and its gradient with respect to
    /// every parameter. The subgradient at zero residual is 0.
    pub fn loss_and_gradient(&self, inputs: &[f64], targets: &[f64]) -> Result<(f64, Vec<f64>)> {
        let n = self.batch_len(inputs)?;
        let (w, o) = (self.spec.input_width, self.spec.output_width);
        if targets.len() != n * o {
            return Err(Error::DimensionMismatch(format!(
                "{n} samples need {} targets, got {}",
                n * o,
                targets.len()
            )));
        }
        let chunks = n.div_ceil(CHUNK);
        let parts = par::map_range(chunks, |c| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(n);
            self.chunk_gradient(&inputs[lo * w..hi * w], &targets[lo * o..hi * o], hi - lo)
        });
        let mut grad = vec![0.0; self.params.len()];
        let mut abs_sum = 0.0;
        for (s, g) in parts {
            abs_sum += s;
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b;
            }
        }
        let norm = 1.0 / (n * o) as f64;
        grad.iter_mut().for_each(|g| *g *= norm);
        Ok((abs_sum * norm, grad))
    }

    fn batch_len(&self, inputs: &[f64]) -> Result<usize> {
        let w = self.spec.input_width;
        if inputs.is_empty() {
            return Err(Error::Empty("batch has no samples".into()));
        }
        if inputs.len() % w != 0 {
            return Err(Error::DimensionMismatch(format!(
                "batch length {} is not a multiple of input width {w}",
                inputs.len()
            )));
        }
        Ok(inputs.len() / w)
    }

    fn trace(&self, input: &[f64], n: usize) -> Trace {
        let mut acts = Vec::with_capacity(self.shapes.len() + 1);
        let mut pre = Vec::with_capacity(self.shapes.len());
        acts.push(input.to_vec());
        for (l, s) in self.shapes.iter().enumerate() {
            let (wts, bias) = self.layer_parameters(l);
            let prev = &acts[l];
            let mut z = vec![0.0; n * s.out_width];
            match s.conv {
                None => {
                    gemm(
                        View::row_major(prev, n, s.in_width),
                        View::transposed(wts, s.out_width, s.in_width),
                        &mut z,
                        0.0,
                    );
                    for row in z.chunks_exact_mut(s.out_width) {
                        row.iter_mut().zip(bias).for_each(|(x, b)| *x += b);
                    }
                }
                Some(c) => {
                    let patches = im2col(prev, n, s.in_width, c);
                    gemm(
                        View::row_major(&patches, n * c.positions, c.kernel),
                        View::transposed(wts, c.channels, c.kernel),
                        &mut z,
                        0.0,
                    );
                    for row in z.chunks_exact_mut(c.channels) {
                        row.iter_mut().zip(bias).for_each(|(x, b)| *x += b);
                    }
                }
            }
            let a: Vec<f64> = z.iter().map(|&x| s.activation.apply(x)).collect();
            pre.push(z);
            acts.push(a);
        }
        Trace { acts, pre }
    }

    /// Sum of absolute residuals and the gradient of that sum.
    fn chunk_gradient(&self, input: &[f64], target: &[f64], n: usize) -> (f64, Vec<f64>) {
        let Trace { acts, pre } = self.trace(input, n);
        let mut grad = vec![0.0; self.params.len()];
        let out = &acts[self.shapes.len()];
        let mut abs_sum = 0.0;
        let mut delta: Vec<f64> = out
            .iter()
            .zip(target)
            .map(|(p, t)| {
                let r = p - t;
                abs_sum += r.abs();
                if r > 0.0 {
                    1.0
                } else if r < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            })
            .collect();
        for l in (0..self.shapes.len()).rev() {
            let s = self.shapes[l];
            for ((d, &z), &a) in delta.iter_mut().zip(&pre[l]).zip(&acts[l + 1]) {
                *d *= s.activation.derivative(z, a);
            }
            let (wts, _) = self.layer_parameters(l);
            let (gw, gb) = grad[s.offset..s.offset + s.param_len()].split_at_mut(s.weight_len);
            let prev = &acts[l];
            match s.conv {
                None => {
                    gemm(
                        View::transposed(&delta, n, s.out_width),
                        View::row_major(prev, n, s.in_width),
                        gw,
                        0.0,
                    );
                    for row in delta.chunks_exact(s.out_width) {
                        gb.iter_mut().zip(row).for_each(|(g, d)| *g += d);
                    }
                    if l > 0 {
                        let mut next = vec![0.0; n * s.in_width];
                        gemm(
                            View::row_major(&delta, n, s.out_width),
                            View::row_major(wts, s.out_width, s.in_width),
                            &mut next,
                            0.0,
                        );
                        delta = next;
                    }
                }
                Some(c) => {
                    let patches = im2col(prev, n, s.in_width, c);
                    gemm(
                        View::transposed(&delta, n * c.positions, c.channels),
                        View::row_major(&patches, n * c.positions, c.kernel),
                        gw,
                        0.0,
                    );
                    for row in delta.chunks_exact(c.channels) {
                        gb.iter_mut().zip(row).for_each(|(g, d)| *g += d);
                    }
                }
            }
        }
        (abs_sum, grad)
    }
}

/// Gathers every window into a row: `(n * positions) x kernel`.
fn im2col(x: &[f64], n: usize, width: usize, c: ConvShape) -> Vec<f64> {
    if c.stride == c.kernel {
        // Windows tile the input exactly, so it is already laid out that way.
        return x.to_vec();
    }
    let mut out = Vec::with_capacity(n * c.positions * c.kernel);
    for sample in x.chunks_exact(width).take(n) {
        for p in 0..c.positions {
            out.extend_from_slice(&sample[p * c.stride..p * c.stride + c.kernel]);
        }
    }
    out
}
