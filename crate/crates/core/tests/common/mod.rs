#![allow(dead_code, clippy::needless_range_loop)]

use rand::Rng;
use tsrl::nn::{Activation, DenseNet};

/// Plain nested-loop forward pass. Returns the pre-activations of every
/// layer and the final output.
pub fn scalar_forward(net: &DenseNet, x: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut pre_all = Vec::new();
    let mut current = x.to_vec();
    for layer in net.layers() {
        let mut pre = vec![0.0; layer.output_dim];
        for j in 0..layer.output_dim {
            let mut acc = layer.bias[j];
            for k in 0..layer.input_dim {
                acc += layer.weights[j * layer.input_dim + k] * current[k];
            }
            pre[j] = acc;
        }
        current = pre
            .iter()
            .map(|&z| match layer.activation {
                Activation::Relu => z.max(0.0),
                Activation::Tanh => z.tanh(),
                Activation::Identity => z,
            })
            .collect();
        pre_all.push(pre);
    }
    (pre_all, current)
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub fn random_sizes<R: Rng>(
    rng: &mut R,
    max_in: usize,
    max_hidden: usize,
    out: Option<usize>,
) -> Vec<usize> {
    let depth = rng.random_range(1..=2);
    let mut sizes = vec![rng.random_range(1..=max_in)];
    for _ in 0..depth {
        sizes.push(rng.random_range(1..=max_hidden));
    }
    sizes.push(out.unwrap_or_else(|| rng.random_range(1..=max_in)));
    sizes
}

pub fn random_inputs<R: Rng>(rng: &mut R, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect()
}

/// Smallest |pre-activation| over all hidden ReLU units and all inputs.
pub fn min_relu_margin(net: &DenseNet, inputs: &[Vec<f64>]) -> f64 {
    let mut m = f64::INFINITY;
    for x in inputs {
        let (pre, _) = scalar_forward(net, x);
        for (layer, z) in net.layers().iter().zip(&pre) {
            if layer.activation == Activation::Relu {
                m = z.iter().fold(m, |acc, v| acc.min(v.abs()));
            }
        }
    }
    m
}
