use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{push_slice, softmax, softmax_backward, Parametrized};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seed::Rng;

pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    LeakyRelu,
    Linear,
    Softmax,
}

impl Activation {
    fn apply<T: Scalar>(self, z: &Array1<T>) -> Array1<T> {
        match self {
            Activation::Linear => z.clone(),
            Activation::LeakyRelu => {
                let slope = T::lit(LEAKY_SLOPE);
                z.mapv(|v| if v > T::zero() { v } else { v * slope })
            }
            Activation::Softmax => Array1::from(softmax(z.as_slice().expect("contiguous"))),
        }
    }

    /// Gradient w.r.t. pre-activation given pre-activation `z`, output `y`
    /// and upstream gradient `g`.
    fn backward<T: Scalar>(self, z: &Array1<T>, y: &Array1<T>, g: &Array1<T>) -> Array1<T> {
        match self {
            Activation::Linear => g.clone(),
            Activation::LeakyRelu => {
                let slope = T::lit(LEAKY_SLOPE);
                Array1::from_iter(
                    z.iter()
                        .zip(g)
                        .map(|(&zi, &gi)| if zi > T::zero() { gi } else { gi * slope }),
                )
            }
            Activation::Softmax => Array1::from(softmax_backward(
                y.as_slice().expect("contiguous"),
                g.as_slice().expect("contiguous"),
            )),
        }
    }
}

/// One affine layer `act(W a + b)`, optionally plus its input.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    /// `out x in`
    pub weight: Array2<T>,
    pub bias: Array1<T>,
    pub activation: Activation,
    /// Adds the layer input to its output; needs `in == out`.
    pub residual: bool,
}

impl<T: Scalar> Dense<T> {
    pub fn zeros(input: usize, output: usize, activation: Activation, residual: bool) -> Self {
        Self {
            weight: Array2::zeros((output, input)),
            bias: Array1::zeros(output),
            activation,
            residual,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }
}

/// Architecture description, enough to rebuild a net from a flat parameter file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenseSpec {
    pub dims: Vec<usize>,
    pub activations: Vec<Activation>,
    pub residual: Vec<bool>,
    pub shortcut: bool,
}

/// Intermediates of one forward pass.
#[derive(Clone, Debug)]
pub struct DenseTape<T> {
    input: Array1<T>,
    /// Input of each layer.
    inputs: Vec<Array1<T>>,
    pre: Vec<Array1<T>>,
    out: Vec<Array1<T>>,
}

impl<T> DenseTape<T> {
    pub fn output(&self) -> &Array1<T> {
        self.out.last().unwrap_or(&self.input)
    }
}

/// Feed-forward stack of [`Dense`] layers with an optional learned linear
/// shortcut from the net input to the last pre-activation.
#[derive(Clone, Debug)]
pub struct DenseNet<T> {
    pub layers: Vec<Dense<T>>,
    /// `out x in` projection added before the final activation.
    pub shortcut: Option<Array2<T>>,
    tape: Option<DenseTape<T>>,
}

impl<T: Scalar> PartialEq for DenseNet<T> {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers && self.shortcut == other.shortcut
    }
}

fn glorot<T: Scalar>(rows: usize, cols: usize, rng: &mut Rng) -> Array2<T> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || T::lit(rng.random_range(-limit..limit)))
}

impl<T: Scalar> DenseNet<T> {
    pub fn from_layers(layers: Vec<Dense<T>>, shortcut: Option<Array2<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::validation("dense net needs at least one layer"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.output_dim() {
                return Err(Error::DimensionMismatch {
                    context: "dense bias",
                    expected: l.output_dim(),
                    got: l.bias.len(),
                });
            }
            if l.residual && l.input_dim() != l.output_dim() {
                return Err(Error::validation(format!(
                    "layer {i}: residual needs equal in/out dims"
                )));
            }
            if i > 0 && layers[i - 1].output_dim() != l.input_dim() {
                return Err(Error::DimensionMismatch {
                    context: "dense layer chain",
                    expected: layers[i - 1].output_dim(),
                    got: l.input_dim(),
                });
            }
        }
        let net = Self {
            layers,
            shortcut,
            tape: None,
        };
        if let Some(p) = &net.shortcut {
            if p.dim() != (net.output_dim(), net.input_dim()) {
                return Err(Error::DimensionMismatch {
                    context: "dense shortcut",
                    expected: net.output_dim() * net.input_dim(),
                    got: p.len(),
                });
            }
        }
        Ok(net)
    }

    /// Randomly initialised net over `dims` (at least two entries). Hidden
    /// layers use LeakyReLU, the last layer `output`.
    pub fn new(dims: &[usize], output: Activation, shortcut: bool, rng: &mut Rng) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::validation("dense net needs at least input and output dims"));
        }
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { output } else { Activation::LeakyRelu };
                Dense {
                    weight: glorot(dims[i + 1], dims[i], rng),
                    bias: Array1::zeros(dims[i + 1]),
                    activation: act,
                    residual: false,
                }
            })
            .collect();
        let sc = shortcut.then(|| glorot(dims[n], dims[0], rng));
        Self::from_layers(layers, sc)
    }

    /// Rebuilds a zero-parameter net from its spec.
    pub fn from_spec(spec: &DenseSpec) -> Result<Self> {
        let n = spec.dims.len().saturating_sub(1);
        if n == 0 || spec.activations.len() != n || spec.residual.len() != n {
            return Err(Error::validation("inconsistent dense spec"));
        }
        let layers = (0..n)
            .map(|i| Dense::zeros(spec.dims[i], spec.dims[i + 1], spec.activations[i], spec.residual[i]))
            .collect();
        let sc = spec.shortcut.then(|| Array2::zeros((spec.dims[n], spec.dims[0])));
        Self::from_layers(layers, sc)
    }

    pub fn spec(&self) -> DenseSpec {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(|l| l.output_dim()));
        DenseSpec {
            dims,
            activations: self.layers.iter().map(|l| l.activation).collect(),
            residual: self.layers.iter().map(|l| l.residual).collect(),
            shortcut: self.shortcut.is_some(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").output_dim()
    }

    /// Forward pass returning the tape needed by [`DenseNet::backward_tape`].
    pub fn forward_tape(&self, x: ArrayView1<T>) -> Result<(Array1<T>, DenseTape<T>)> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "dense forward",
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let input = x.to_owned();
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n);
        let mut out = Vec::with_capacity(n);
        let mut a = input.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = layer.weight.dot(&a) + &layer.bias;
            if i + 1 == n {
                if let Some(p) = &self.shortcut {
                    z += &p.dot(&input);
                }
            }
            let mut y = layer.activation.apply(&z);
            if layer.residual {
                y += &a;
            }
            inputs.push(a);
            pre.push(z);
            a = y.clone();
            out.push(y);
        }
        Ok((
            a,
            DenseTape {
                input,
                inputs,
                pre,
                out,
            },
        ))
    }

    /// Inference without recording a tape.
    pub fn infer(&self, x: ArrayView1<T>) -> Result<Array1<T>> {
        self.forward_tape(x).map(|(y, _)| y)
    }

    /// Forward pass that keeps the tape for a later [`DenseNet::backward`].
    pub fn forward(&mut self, x: ArrayView1<T>) -> Result<Array1<T>> {
        let (y, tape) = self.forward_tape(x)?;
        self.tape = Some(tape);
        Ok(y)
    }

    /// Consumes the tape of the last [`DenseNet::forward`] call.
    pub fn backward(&mut self, upstream: ArrayView1<T>) -> Result<(Vec<T>, Array1<T>)> {
        let tape = self.tape.take().ok_or(Error::BackwardBeforeForward)?;
        self.backward_tape(&tape, upstream)
    }

    /// Parameter gradient (flat, parameter order) and input gradient.
    pub fn backward_tape(
        &self,
        tape: &DenseTape<T>,
        upstream: ArrayView1<T>,
    ) -> Result<(Vec<T>, Array1<T>)> {
        if upstream.len() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                context: "dense backward",
                expected: self.output_dim(),
                got: upstream.len(),
            });
        }
        let n = self.layers.len();
        let mut layer_grads: Vec<(Array2<T>, Array1<T>)> = Vec::with_capacity(n);
        let mut shortcut_grad = None;
        let mut input_extra = None;
        let mut g = upstream.to_owned();
        for i in (0..n).rev() {
            let layer = &self.layers[i];
            let gz = layer.activation.backward(&tape.pre[i], &tape.out[i], &g);
            let a = &tape.inputs[i];
            let gw = outer(&gz, a);
            if i + 1 == n {
                if let Some(p) = &self.shortcut {
                    shortcut_grad = Some(outer(&gz, &tape.input));
                    input_extra = Some(p.t().dot(&gz));
                }
            }
            let mut ga = layer.weight.t().dot(&gz);
            if layer.residual {
                ga += &g;
            }
            layer_grads.push((gw, gz));
            g = ga;
        }
        layer_grads.reverse();
        if let Some(extra) = input_extra {
            g += &extra;
        }
        let mut flat = Vec::with_capacity(self.num_params());
        for (gw, gb) in layer_grads {
            push_slice(&mut flat, gw.iter().copied());
            push_slice(&mut flat, gb.iter().copied());
        }
        if let Some(gp) = shortcut_grad {
            push_slice(&mut flat, gp.iter().copied());
        }
        Ok((flat, g))
    }
}

pub(crate) fn outer<T: Scalar>(a: &Array1<T>, b: &Array1<T>) -> Array2<T> {
    let mut m = Array2::zeros((a.len(), b.len()));
    for (i, &ai) in a.iter().enumerate() {
        if ai == T::zero() {
            continue;
        }
        let mut row = m.row_mut(i);
        row.scaled_add(ai, b);
    }
    m
}

impl<T: Scalar> Parametrized<T> for DenseNet<T> {
    fn num_params(&self) -> usize {
        let layers: usize = self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum();
        layers + self.shortcut.as_ref().map_or(0, |p| p.len())
    }

    fn export_params(&self, out: &mut Vec<T>) {
        for l in &self.layers {
            push_slice(out, l.weight.iter().copied());
            push_slice(out, l.bias.iter().copied());
        }
        if let Some(p) = &self.shortcut {
            push_slice(out, p.iter().copied());
        }
    }

    fn import_params(&mut self, src: &[T]) {
        let mut it = src.iter().copied();
        for l in &mut self.layers {
            l.weight.iter_mut().for_each(|w| *w = it.next().expect("length checked"));
            l.bias.iter_mut().for_each(|w| *w = it.next().expect("length checked"));
        }
        if let Some(p) = &mut self.shortcut {
            p.iter_mut().for_each(|w| *w = it.next().expect("length checked"));
        }
    }
}
