//! Minimal dense feed-forward networks with exact backpropagation.
//!
//! Every network in the crate (the student classifier, the tutor's actor and
//! critic) is a [`DenseNet`]. Batches are passed as slices of per-sample
//! vectors; activations cached by [`DenseNet::forward_cached`] are stored as
//! flat row-major `batch x dim` buffers.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TsrlError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "relu" => Some(Activation::Relu),
            "tanh" => Some(Activation::Tanh),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }
}

/// One fully connected layer. `weights` is `output_dim x input_dim`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub input_dim: usize,
    pub output_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn zeros(input_dim: usize, output_dim: usize, activation: Activation) -> Self {
        Layer {
            input_dim,
            output_dim,
            weights: vec![0.0; input_dim * output_dim],
            bias: vec![0.0; output_dim],
            activation,
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng + ?Sized>(
        input_dim: usize,
        output_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let limit = (6.0 / (input_dim + output_dim) as f64).sqrt();
        let weights = (0..input_dim * output_dim)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        Layer {
            input_dim,
            output_dim,
            weights,
            bias: vec![0.0; output_dim],
            activation,
        }
    }

    #[inline]
    fn forward_into(&self, input: &[f64], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            let row = &self.weights[j * self.input_dim..(j + 1) * self.input_dim];
            let z = self.bias[j] + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
            *o = self.activation.apply(z);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layers: Vec<Layer>,
}

/// Per-layer outputs of a batched forward pass; `values[0]` is the input batch.
#[derive(Debug, Clone)]
pub struct Activations {
    pub batch: usize,
    pub dims: Vec<usize>,
    pub values: Vec<Vec<f64>>,
}

impl Activations {
    pub fn output(&self) -> &[f64] {
        self.values.last().expect("at least the input layer")
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("at least the input layer")
    }

    /// Row `i` of layer `k`'s output (`k = 0` is the input).
    pub fn row(&self, k: usize, i: usize) -> &[f64] {
        let d = self.dims[k];
        &self.values[k][i * d..(i + 1) * d]
    }
}

/// Gradient buffers shaped like a [`DenseNet`]'s parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGradient>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGradient {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    /// Flat views in the same order as [`DenseNet::param_tensors_mut`].
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
    }

    pub fn l2_norm(&self) -> f64 {
        self.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.iter().all(f64::is_finite)
    }
}

impl DenseNet {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(TsrlError::contract("a network needs at least one layer"));
        }
        for (k, layer) in layers.iter().enumerate() {
            if layer.weights.len() != layer.input_dim * layer.output_dim
                || layer.bias.len() != layer.output_dim
            {
                return Err(TsrlError::contract(format!(
                    "layer {k} parameter buffers do not match {}x{}",
                    layer.output_dim, layer.input_dim
                )));
            }
            if let Some(next) = layers.get(k + 1) {
                if next.input_dim != layer.output_dim {
                    return Err(TsrlError::DimensionMismatch {
                        expected: layer.output_dim,
                        actual: next.input_dim,
                        context: "consecutive layer dimensions",
                    });
                }
            }
        }
        let net = DenseNet { layers };
        if !net.all_finite() {
            return Err(TsrlError::NonFinite("network parameters".into()));
        }
        Ok(net)
    }

    /// Builds `sizes[0] -> sizes[1] -> ... -> sizes[n]`, with `hidden` on all
    /// layers except the last, which uses `output`.
    pub fn glorot<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(TsrlError::config(format!(
                "network sizes must have at least two positive entries, got {sizes:?}"
            )));
        }
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|k| {
                let act = if k + 1 == n { output } else { hidden };
                Layer::glorot(sizes[k], sizes[k + 1], act, rng)
            })
            .collect();
        DenseNet::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim
    }

    /// Width of the activation fed into the final layer.
    pub fn penultimate_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].input_dim
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    pub fn param_tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    /// Parameters flattened layer by layer (weights then bias).
    pub fn flat_params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    /// Mutable access to the `idx`-th parameter in [`DenseNet::flat_params`] order.
    pub fn param_mut(&mut self, mut idx: usize) -> &mut f64 {
        for layer in &mut self.layers {
            if idx < layer.weights.len() {
                return &mut layer.weights[idx];
            }
            idx -= layer.weights.len();
            if idx < layer.bias.len() {
                return &mut layer.bias[idx];
            }
            idx -= layer.bias.len();
        }
        panic!("parameter index out of range");
    }

    fn check_inputs<R: AsRef<[f64]>>(&self, inputs: &[R]) -> Result<()> {
        let d = self.input_dim();
        for x in inputs {
            let x = x.as_ref();
            if x.len() != d {
                return Err(TsrlError::DimensionMismatch {
                    expected: d,
                    actual: x.len(),
                    context: "network input",
                });
            }
        }
        Ok(())
    }

    /// Forward pass for a single sample.
    pub fn forward_one(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_inputs(&[input])?;
        let mut current = input.to_vec();
        for layer in &self.layers {
            let mut next = vec![0.0; layer.output_dim];
            layer.forward_into(&current, &mut next);
            current = next;
        }
        Ok(current)
    }

    /// Batched forward pass keeping every layer's output for backprop.
    pub fn forward_cached<R: AsRef<[f64]>>(&self, inputs: &[R]) -> Result<Activations> {
        self.check_inputs(inputs)?;
        let batch = inputs.len();
        let mut dims = Vec::with_capacity(self.layers.len() + 1);
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        dims.push(self.input_dim());
        values.push(
            inputs
                .iter()
                .flat_map(|x| x.as_ref().iter().copied())
                .collect::<Vec<_>>(),
        );
        for layer in &self.layers {
            let prev = values.last().expect("input pushed");
            let mut out = vec![0.0; batch * layer.output_dim];
            for i in 0..batch {
                layer.forward_into(
                    &prev[i * layer.input_dim..(i + 1) * layer.input_dim],
                    &mut out[i * layer.output_dim..(i + 1) * layer.output_dim],
                );
            }
            dims.push(layer.output_dim);
            values.push(out);
        }
        Ok(Activations {
            batch,
            dims,
            values,
        })
    }

    /// Backpropagates `d_output` (`batch x output_dim`, the loss gradient with
    /// respect to the network output) through the cached forward pass.
    pub fn backward(&self, acts: &Activations, d_output: &[f64]) -> Result<Gradients> {
        let batch = acts.batch;
        if d_output.len() != batch * self.output_dim() {
            return Err(TsrlError::DimensionMismatch {
                expected: batch * self.output_dim(),
                actual: d_output.len(),
                context: "output gradient",
            });
        }
        let mut grads = Gradients::zeros_like(self);
        let mut delta = d_output.to_vec();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let (n_in, n_out) = (layer.input_dim, layer.output_dim);
            let out = &acts.values[k + 1];
            for (d, y) in delta.iter_mut().zip(out) {
                *d *= layer.activation.derivative_from_output(*y);
            }
            let input = &acts.values[k];
            let g = &mut grads.layers[k];
            for i in 0..batch {
                let dz = &delta[i * n_out..(i + 1) * n_out];
                let x = &input[i * n_in..(i + 1) * n_in];
                for (j, &dzj) in dz.iter().enumerate() {
                    if dzj == 0.0 {
                        continue;
                    }
                    g.bias[j] += dzj;
                    let row = &mut g.weights[j * n_in..(j + 1) * n_in];
                    for (gw, xv) in row.iter_mut().zip(x) {
                        *gw += dzj * xv;
                    }
                }
            }
            if k > 0 {
                let mut prev = vec![0.0; batch * n_in];
                for i in 0..batch {
                    let dz = &delta[i * n_out..(i + 1) * n_out];
                    let dx = &mut prev[i * n_in..(i + 1) * n_in];
                    for (j, &dzj) in dz.iter().enumerate() {
                        if dzj == 0.0 {
                            continue;
                        }
                        let row = &layer.weights[j * n_in..(j + 1) * n_in];
                        for (d, w) in dx.iter_mut().zip(row) {
                            *d += dzj * w;
                        }
                    }
                }
                delta = prev;
            }
        }
        Ok(grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rejects_unchained_layers() {
        let err = DenseNet::new(vec![
            Layer::zeros(3, 4, Activation::Relu),
            Layer::zeros(5, 2, Activation::Identity),
        ])
        .unwrap_err();
        assert!(matches!(err, TsrlError::DimensionMismatch { .. }));
    }

    #[test]
    fn rejects_non_finite_parameters() {
        let mut layer = Layer::zeros(2, 2, Activation::Identity);
        layer.bias[1] = f64::NAN;
        assert!(matches!(
            DenseNet::new(vec![layer]),
            Err(TsrlError::NonFinite(_))
        ));
    }

    #[test]
    fn glorot_respects_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = DenseNet::glorot(
            &[8, 32, 2],
            Activation::Relu,
            Activation::Identity,
            &mut rng,
        )
        .unwrap();
        let limit0 = (6.0f64 / 40.0).sqrt();
        assert!(net.layers()[0].weights.iter().all(|w| w.abs() <= limit0));
        assert!(net.layers()[0].bias.iter().all(|&b| b == 0.0));
        assert_eq!(net.num_params(), 8 * 32 + 32 + 32 * 2 + 2);
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let net = DenseNet::new(vec![Layer::zeros(3, 2, Activation::Identity)]).unwrap();
        assert!(net.forward_cached(&[vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn cached_and_single_forward_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net =
            DenseNet::glorot(&[4, 6, 3], Activation::Tanh, Activation::Identity, &mut rng).unwrap();
        let xs = vec![vec![0.1, -0.4, 2.0, 0.3], vec![1.0, 1.0, -1.0, 0.0]];
        let acts = net.forward_cached(&xs).unwrap();
        for (i, x) in xs.iter().enumerate() {
            assert_eq!(acts.row(2, i), net.forward_one(x).unwrap().as_slice());
        }
    }
}
