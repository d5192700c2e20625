//! A small feed-forward network with hand-written reverse-mode gradients
//! and an Adam optimiser.
//!
//! Batches are row-major: one sample per row. Gradients are taken with
//! respect to every weight, every bias, and the input rows, which is what
//! both the denoiser training loop and classifier guidance need.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Elementwise nonlinearity applied after every hidden layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Silu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Silu => z / (1.0 + (-z).exp()),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-z).exp());
                s * (1.0 + z * (1.0 - s))
            }
            Activation::Tanh => 1.0 - z.tanh().powi(2),
            Activation::Identity => 1.0,
        }
    }
}

/// Affine layer `z = W x + b` with `W` stored `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Array2::zeros((output, input)),
            bias: Array1::zeros(output),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
    activation: Activation,
}

/// Intermediate values kept by [`Mlp::forward_traced`] for the backward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    /// Input to each layer.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of each hidden layer.
    pre_activations: Vec<Array2<f64>>,
    pub output: Array2<f64>,
}

/// Parameter gradients, shaped like the network's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| {
                [
                    l.weight.as_slice().expect("standard layout"),
                    l.bias.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }
}

impl Mlp {
    pub fn new(layers: Vec<Dense>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidParameter("network needs at least one layer".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::InvalidParameter(format!(
                    "layer {i} outputs {} values but layer {} takes {}",
                    pair[0].out_dim(),
                    i + 1,
                    pair[1].in_dim()
                )));
            }
        }
        for (i, l) in layers.iter().enumerate() {
            check_dim(l.out_dim(), l.bias.len())?;
            if l.weight.iter().chain(l.bias.iter()).any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter(format!("layer {i} has non-finite parameters")));
            }
        }
        // Owned arrays must be in standard layout for the flat parameter views.
        let layers = layers
            .into_iter()
            .map(|l| Dense {
                weight: l.weight.as_standard_layout().into_owned(),
                bias: l.bias,
            })
            .collect();
        Ok(Self { layers, activation })
    }

    /// Uniform `±1/√fan_in` initialisation.
    pub fn init<R: Rng + ?Sized>(dims: &[usize], activation: Activation, rng: &mut R) -> Result<Self> {
        let layers = Self::check_dims(dims)?
            .map(|(input, output)| {
                let bound = 1.0 / (input as f64).sqrt();
                let mut layer = Dense::zeros(input, output);
                layer.weight.mapv_inplace(|_| rng.random_range(-bound..bound));
                layer.bias.mapv_inplace(|_| rng.random_range(-bound..bound));
                layer
            })
            .collect();
        Self::new(layers, activation)
    }

    pub fn zeros(dims: &[usize], activation: Activation) -> Result<Self> {
        let layers = Self::check_dims(dims)?.map(|(i, o)| Dense::zeros(i, o)).collect();
        Self::new(layers, activation)
    }

    fn check_dims(dims: &[usize]) -> Result<impl Iterator<Item = (usize, usize)> + '_> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::InvalidParameter(format!("bad layer dimensions {dims:?}")));
        }
        Ok(dims.windows(2).map(|w| (w[0], w[1])))
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("non-empty").out_dim()
    }

    /// `[in, hidden..., out]`.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.in_dim())
            .chain(self.layers.iter().map(Dense::out_dim))
            .collect()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let row = ArrayView2::from_shape((1, x.len()), x).map_err(|e| Error::Malformed(e.to_string()))?;
        Ok(self.forward_batch(row)?.into_raw_vec_and_offset().0)
    }

    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_dim(self.in_dim(), x.ncols())?;
        let last = self.layers.len() - 1;
        let mut h = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = h.dot(&layer.weight.t());
            z += &layer.bias;
            if i < last {
                let act = self.activation;
                z.mapv_inplace(|v| act.apply(v));
            }
            h = z;
        }
        Ok(h)
    }

    pub fn forward_traced(&self, x: ArrayView2<f64>) -> Result<Trace> {
        check_dim(self.in_dim(), x.ncols())?;
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(last);
        let mut h = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = h.dot(&layer.weight.t());
            z += &layer.bias;
            inputs.push(h);
            if i < last {
                let act = self.activation;
                h = z.mapv(|v| act.apply(v));
                pre_activations.push(z);
            } else {
                h = z;
            }
        }
        Ok(Trace {
            inputs,
            pre_activations,
            output: h,
        })
    }

    /// Reverse pass: given `∂L/∂output` for every row of the traced batch,
    /// returns parameter gradients summed over the batch and the per-row
    /// input gradients.
    pub fn backward(&self, trace: &Trace, upstream: ArrayView2<f64>) -> Result<(Gradients, Array2<f64>)> {
        check_dim(self.out_dim(), upstream.ncols())?;
        check_dim(trace.output.nrows(), upstream.nrows())?;
        let mut grads: Vec<Dense> = Vec::with_capacity(self.layers.len());
        let mut delta = upstream.to_owned();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            if i < self.layers.len() - 1 {
                let act = self.activation;
                delta.zip_mut_with(&trace.pre_activations[i], |d, &z| *d *= act.derivative(z));
            }
            let weight = delta.t().dot(&trace.inputs[i]);
            let bias = delta.sum_axis(Axis(0));
            grads.push(Dense { weight, bias });
            delta = delta.dot(&layer.weight);
        }
        grads.reverse();
        Ok((Gradients { layers: grads }, delta))
    }

    /// Single-input convenience wrapper around the batched passes.
    pub fn backward_single(&self, x: &[f64], upstream: &[f64]) -> Result<(Gradients, Vec<f64>)> {
        let row = ArrayView2::from_shape((1, x.len()), x).map_err(|e| Error::Malformed(e.to_string()))?;
        let up = ArrayView2::from_shape((1, upstream.len()), upstream).map_err(|e| Error::Malformed(e.to_string()))?;
        let trace = self.forward_traced(row)?;
        let (g, dx) = self.backward(&trace, up)?;
        Ok((g, dx.into_raw_vec_and_offset().0))
    }

    pub fn param_names(&self) -> Vec<String> {
        (0..self.layers.len())
            .flat_map(|i| [format!("layer{i}.weight"), format!("layer{i}.bias")])
            .collect()
    }

    pub fn params(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| {
                [
                    l.weight.as_slice().expect("standard layout"),
                    l.bias.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    l.weight.as_slice_mut().expect("standard layout"),
                    l.bias.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }
}

/// One parameter tensor paired with its gradient for an optimiser step.
pub struct ParamSlot<'a> {
    pub name: &'a str,
    pub value: &'a mut [f64],
    pub grad: &'a [f64],
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update to every slot. Nothing is modified if any gradient
    /// is non-finite or any shape disagrees with the accumulators.
    pub fn step(&mut self, slots: &mut [ParamSlot<'_>]) -> Result<()> {
        for slot in slots.iter() {
            check_dim(slot.value.len(), slot.grad.len())?;
            if slot.grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteGradient(slot.name.to_string()));
            }
        }
        if self.first.is_empty() {
            self.first = slots.iter().map(|s| vec![0.0; s.value.len()]).collect();
            self.second = self.first.clone();
        }
        check_dim(self.first.len(), slots.len())?;
        for (slot, m) in slots.iter().zip(&self.first) {
            check_dim(m.len(), slot.value.len())?;
        }

        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((slot, m), v) in slots.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            for (((p, &g), m), v) in slot.value.iter_mut().zip(slot.grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}
