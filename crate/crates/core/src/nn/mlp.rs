use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::param::{ParamArray, Parameters};
use crate::nn::rng::RngState;

/// Nonlinearity applied between layers (never after the last one).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    pub(crate) fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z`.
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Tanh => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Tanh),
            _ => None,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Activation::Identity),
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Parameter(format!("unknown activation '{other}'"))),
        }
    }
}

/// Fully-connected layer `y = x W + b` with `W` of shape `[in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: ParamArray,
    pub bias: ParamArray,
}

impl Dense {
    /// Zero-mean uniform init scaled by `1/sqrt(fan_in)`; zero bias.
    pub fn init(name: &str, input: usize, output: usize, rng: &mut RngState) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        let values = (0..input * output)
            .map(|_| (2.0 * rng.uniform() - 1.0) * bound)
            .collect();
        Self {
            weight: ParamArray::from_values(format!("{name}.weight"), &[input, output], values)
                .expect("shape computed from dims"),
            bias: ParamArray::zeros(format!("{name}.bias"), &[output]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub(crate) fn forward_into(&self, x: &[f64], out: &mut Vec<f64>) {
        let cols = self.output_dim();
        out.clear();
        out.extend_from_slice(self.bias.values());
        let w = self.weight.values();
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = &w[i * cols..(i + 1) * cols];
            for (o, &wij) in out.iter_mut().zip(row) {
                *o += xi * wij;
            }
        }
    }

    /// Accumulates parameter gradients and returns the gradient w.r.t. `x`.
    fn backward(&mut self, x: &[f64], grad_out: &[f64]) -> Vec<f64> {
        let cols = self.output_dim();
        for (b, g) in self.bias.grad_mut().iter_mut().zip(grad_out) {
            *b += g;
        }
        let mut grad_in = vec![0.0; x.len()];
        {
            let (w, gw) = self.weight.values_and_grad_mut();
            for (i, &xi) in x.iter().enumerate() {
                let wrow = &w[i * cols..(i + 1) * cols];
                let grow = &mut gw[i * cols..(i + 1) * cols];
                let mut acc = 0.0;
                for j in 0..cols {
                    grow[j] += xi * grad_out[j];
                    acc += wrow[j] * grad_out[j];
                }
                grad_in[i] = acc;
            }
        }
        grad_in
    }
}

/// Values recorded by a forward pass for exact backpropagation.
#[derive(Debug, Clone, Default)]
pub struct MlpTrace {
    /// Input to each layer.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of each hidden layer.
    pre_activations: Vec<Vec<f64>>,
}

fn check_chain(x: &[f64], layers: &[Dense]) -> Result<()> {
    let mut dim = x.len();
    for (i, layer) in layers.iter().enumerate() {
        if layer.input_dim() != dim {
            return Err(Error::dim(format!("layer {i} input"), layer.input_dim(), dim));
        }
        if layer.bias.len() != layer.output_dim() {
            return Err(Error::dim(
                format!("layer {i} bias"),
                layer.output_dim(),
                layer.bias.len(),
            ));
        }
        dim = layer.output_dim();
    }
    Ok(())
}

/// Applies an affine chain with `activation` between layers and returns the
/// final (linear) output together with the trace needed for backward.
pub fn mlp_apply(x: &[f64], layers: &[Dense], activation: Activation) -> Result<(Vec<f64>, MlpTrace)> {
    check_chain(x, layers)?;
    let mut trace = MlpTrace::default();
    let mut h = x.to_vec();
    let mut z = Vec::new();
    for (i, layer) in layers.iter().enumerate() {
        layer.forward_into(&h, &mut z);
        trace.inputs.push(std::mem::take(&mut h));
        if i + 1 < layers.len() {
            h = z.iter().map(|&v| activation.apply(v)).collect();
            trace.pre_activations.push(z.clone());
        } else {
            h = z.clone();
        }
    }
    Ok((h, trace))
}

/// Backward pass through `layers` for a trace produced by [`mlp_apply`].
pub fn mlp_backward(
    layers: &mut [Dense],
    activation: Activation,
    trace: &MlpTrace,
    grad_out: &[f64],
) -> Vec<f64> {
    let mut g = grad_out.to_vec();
    for i in (0..layers.len()).rev() {
        if i + 1 < layers.len() {
            for (gv, &zv) in g.iter_mut().zip(&trace.pre_activations[i]) {
                *gv *= activation.derivative(zv);
            }
        }
        g = layers[i].backward(&trace.inputs[i], &g);
    }
    g
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
    activation: Activation,
}

impl Mlp {
    /// `dims` lists every width from input to output, e.g. `[48, 64, 8]`.
    pub fn init(name: &str, dims: &[usize], activation: Activation, rng: &mut RngState) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Parameter(format!(
                "{name}: layer dims must have at least two positive entries, got {dims:?}"
            )));
        }
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Dense::init(&format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Ok(Self { layers, activation })
    }

    pub fn from_layers(layers: Vec<Dense>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Parameter("mlp needs at least one layer".into()));
        }
        let probe = vec![0.0; layers[0].input_dim()];
        check_chain(&probe, &layers)?;
        Ok(Self { layers, activation })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    /// Forward without recording a trace.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::dim("layer 0 input", self.input_dim(), x.len()));
        }
        let mut h = x.to_vec();
        let mut z = Vec::with_capacity(self.output_dim());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            layer.forward_into(&h, &mut z);
            if i < last {
                for v in z.iter_mut() {
                    *v = self.activation.apply(*v);
                }
            }
            std::mem::swap(&mut h, &mut z);
        }
        Ok(h)
    }

    pub fn forward_traced(&self, x: &[f64]) -> Result<(Vec<f64>, MlpTrace)> {
        mlp_apply(x, &self.layers, self.activation)
    }

    pub fn backward(&mut self, trace: &MlpTrace, grad_out: &[f64]) -> Vec<f64> {
        mlp_backward(&mut self.layers, self.activation, trace, grad_out)
    }
}

impl Parameters for Mlp {
    fn params(&self) -> Vec<&ParamArray> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut ParamArray> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }
}
