//! The student classifier: softmax head, weighted cross-entropy, one weighted
//! optimizer step, and read-only evaluation snapshots.

use crate::error::{Result, TsrlError};
use crate::nn::{Activations, DenseNet, Gradients};
use crate::optim::Optimizer;

/// Batched forward result of a classifier network.
#[derive(Debug, Clone, PartialEq)]
pub struct StudentOutput {
    pub logits: Vec<Vec<f64>>,
    pub probabilities: Vec<Vec<f64>>,
    /// Activation fed into the output layer, one vector per sample.
    pub hidden: Vec<Vec<f64>>,
}

impl StudentOutput {
    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }

    /// Argmax class; ties resolve to the lowest index.
    pub fn predicted(&self, i: usize) -> usize {
        argmax(&self.probabilities[i])
    }

    pub fn confidence(&self, i: usize, label: usize) -> f64 {
        self.probabilities[i][label]
    }

    pub fn is_correct(&self, i: usize, label: usize) -> bool {
        self.predicted(i) == label
    }

    /// Unweighted cross-entropy of sample `i`, via log-sum-exp.
    pub fn cross_entropy(&self, i: usize, label: usize) -> f64 {
        let z = &self.logits[i];
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        let ce = lse - z[label];
        // rounding can leave a tiny negative; NaN must propagate
        if ce < 0.0 {
            0.0
        } else {
            ce
        }
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / s).collect()
}

fn output_from_activations(acts: &Activations) -> StudentOutput {
    let n_layers = acts.dims.len() - 1;
    let mut out = StudentOutput {
        logits: Vec::with_capacity(acts.batch),
        probabilities: Vec::with_capacity(acts.batch),
        hidden: Vec::with_capacity(acts.batch),
    };
    for i in 0..acts.batch {
        let z = acts.row(n_layers, i).to_vec();
        out.probabilities.push(softmax(&z));
        out.logits.push(z);
        out.hidden.push(acts.row(n_layers - 1, i).to_vec());
    }
    out
}

/// Pure forward pass: logits, softmax probabilities and penultimate features.
pub fn forward<R: AsRef<[f64]>>(net: &DenseNet, inputs: &[R]) -> Result<StudentOutput> {
    Ok(output_from_activations(&net.forward_cached(inputs)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedLoss {
    /// Batch mean of the weighted per-sample losses.
    pub total: f64,
    pub per_sample: Vec<f64>,
    pub unweighted: Vec<f64>,
}

fn check_batch(n: usize, labels: &[usize], weights: &[f64], classes: usize) -> Result<()> {
    if labels.len() != n || weights.len() != n {
        return Err(TsrlError::contract(format!(
            "batch of {n} outputs with {} labels and {} weights",
            labels.len(),
            weights.len()
        )));
    }
    if let Some(w) = weights.iter().find(|w| !(0.0..=1.0).contains(*w)) {
        return Err(TsrlError::contract(format!(
            "sample weight {w} outside [0, 1]"
        )));
    }
    if let Some(y) = labels.iter().find(|&&y| y >= classes) {
        return Err(TsrlError::contract(format!(
            "label {y} out of range for {classes} classes"
        )));
    }
    Ok(())
}

pub fn weighted_ce_loss(
    output: &StudentOutput,
    labels: &[usize],
    weights: &[f64],
) -> Result<WeightedLoss> {
    let n = output.len();
    let classes = output.logits.first().map_or(0, Vec::len);
    check_batch(n, labels, weights, classes)?;
    if n == 0 {
        return Err(TsrlError::contract("empty batch"));
    }
    let unweighted: Vec<f64> = (0..n).map(|i| output.cross_entropy(i, labels[i])).collect();
    let per_sample: Vec<f64> = unweighted.iter().zip(weights).map(|(l, w)| w * l).collect();
    let total = per_sample.iter().sum::<f64>() / n as f64;
    Ok(WeightedLoss {
        total,
        per_sample,
        unweighted,
    })
}

/// Loss and exact gradients of the weighted objective, without touching `net`.
pub fn loss_and_gradients<R: AsRef<[f64]>>(
    net: &DenseNet,
    inputs: &[R],
    labels: &[usize],
    weights: &[f64],
) -> Result<(StudentOutput, WeightedLoss, Gradients)> {
    let acts = net.forward_cached(inputs)?;
    let output = output_from_activations(&acts);
    let loss = weighted_ce_loss(&output, labels, weights)?;
    let n = output.len();
    let k = net.output_dim();
    let mut d_logits = vec![0.0; n * k];
    for i in 0..n {
        let scale = weights[i] / n as f64;
        for c in 0..k {
            let target = if c == labels[i] { 1.0 } else { 0.0 };
            d_logits[i * k + c] = scale * (output.probabilities[i][c] - target);
        }
    }
    let grads = net.backward(&acts, &d_logits)?;
    Ok((output, loss, grads))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    /// Weighted batch loss before the update.
    pub loss: f64,
    pub grad_norm: f64,
    /// Unweighted per-sample cross-entropy before the update.
    pub sample_losses: Vec<f64>,
    /// Per-sample correctness before the update.
    pub correct: Vec<bool>,
}

/// One optimizer update on the weighted cross-entropy of a batch.
pub fn train_step<R: AsRef<[f64]>>(
    net: &mut DenseNet,
    optimizer: &mut Optimizer,
    inputs: &[R],
    labels: &[usize],
    weights: &[f64],
) -> Result<StepReport> {
    let (output, loss, grads) = loss_and_gradients(net, inputs, labels, weights)?;
    if !loss.total.is_finite() || !grads.all_finite() {
        return Err(TsrlError::NonFinite(format!(
            "student loss {} / gradient norm {} at optimizer step {}",
            loss.total,
            grads.l2_norm(),
            optimizer.steps() + 1
        )));
    }
    optimizer.step(net.param_tensors_mut(), grads.tensors())?;
    let correct = (0..output.len())
        .map(|i| output.is_correct(i, labels[i]))
        .collect();
    Ok(StepReport {
        loss: loss.total,
        grad_norm: grads.l2_norm(),
        sample_losses: loss.unweighted,
        correct,
    })
}

/// Per-sample correctness, true-class confidence and unweighted loss.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSnapshot {
    pub correct: Vec<bool>,
    pub confidence: Vec<f64>,
    pub loss: Vec<f64>,
}

impl EvalSnapshot {
    pub fn from_output(output: &StudentOutput, labels: &[usize]) -> Self {
        let n = output.len();
        EvalSnapshot {
            correct: (0..n).map(|i| output.is_correct(i, labels[i])).collect(),
            confidence: (0..n).map(|i| output.confidence(i, labels[i])).collect(),
            loss: (0..n).map(|i| output.cross_entropy(i, labels[i])).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.correct.len()
    }

    pub fn is_empty(&self) -> bool {
        self.correct.is_empty()
    }
}

pub fn evaluate<R: AsRef<[f64]>>(
    net: &DenseNet,
    inputs: &[R],
    labels: &[usize],
) -> Result<EvalSnapshot> {
    if inputs.len() != labels.len() {
        return Err(TsrlError::contract("inputs and labels differ in length"));
    }
    let output = forward(net, inputs)?;
    Ok(EvalSnapshot::from_output(&output, labels))
}

/// Probability of class 1 for every input, the score used by ranking metrics.
pub fn positive_scores<R: AsRef<[f64]>>(net: &DenseNet, inputs: &[R]) -> Result<Vec<f64>> {
    let output = forward(net, inputs)?;
    Ok(output.probabilities.iter().map(|p| p[1]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Layer};
    use crate::optim::Optimizer;

    fn zero_net() -> DenseNet {
        DenseNet::new(vec![
            Layer::zeros(3, 4, Activation::Relu),
            Layer::zeros(4, 2, Activation::Identity),
        ])
        .unwrap()
    }

    fn output_with_probs(p: &[[f64; 2]]) -> StudentOutput {
        let logits: Vec<Vec<f64>> = p.iter().map(|q| vec![q[0].ln(), q[1].ln()]).collect();
        StudentOutput {
            probabilities: logits.iter().map(|z| softmax(z)).collect(),
            hidden: vec![vec![]; p.len()],
            logits,
        }
    }

    #[test]
    fn zero_net_is_uniform() {
        let out = forward(&zero_net(), &[vec![1.0, -2.0, 3.0]]).unwrap();
        assert_eq!(out.logits[0], vec![0.0, 0.0]);
        assert_eq!(out.probabilities[0], vec![0.5, 0.5]);
        assert_eq!(out.hidden[0].len(), 4);
    }

    #[test]
    fn log_three_gap_gives_three_quarters() {
        let mut layer = Layer::zeros(1, 2, Activation::Identity);
        layer.weights = vec![3f64.ln(), 0.0];
        let net = DenseNet::new(vec![layer]).unwrap();
        let out = forward(&net, &[vec![1.0]]).unwrap();
        assert!((out.probabilities[0][0] - 0.75).abs() < 1e-12);
        assert!((out.probabilities[0][1] - 0.25).abs() < 1e-12);
        assert_eq!(out.hidden[0], vec![1.0]);
    }

    #[test]
    fn uniform_prediction_costs_ln2() {
        let out = output_with_probs(&[[0.5, 0.5]]);
        let l = weighted_ce_loss(&out, &[1], &[1.0]).unwrap();
        assert!((l.per_sample[0] - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn zero_weight_annihilates() {
        let out = output_with_probs(&[[0.01, 0.99], [0.7, 0.3]]);
        let l = weighted_ce_loss(&out, &[0, 1], &[0.0, 0.0]).unwrap();
        assert_eq!(l.per_sample, vec![0.0, 0.0]);
        assert_eq!(l.total, 0.0);
        assert!(l.unweighted.iter().all(|&u| u > 0.0));
    }

    #[test]
    fn half_weight_substitution() {
        let out = output_with_probs(&[[0.25, 0.75]]);
        let l = weighted_ce_loss(&out, &[1], &[0.5]).unwrap();
        assert!((l.per_sample[0] - 0.5 * -(0.75f64.ln())).abs() < 1e-12);
        assert!((l.per_sample[0] - 0.143841).abs() < 1e-6);
    }

    #[test]
    fn unit_weights_equal_plain_mean() {
        let out = output_with_probs(&[[0.2, 0.8], [0.6, 0.4], [0.5, 0.5]]);
        let labels = [1, 1, 0];
        let l = weighted_ce_loss(&out, &labels, &[1.0; 3]).unwrap();
        let plain: f64 = (0..3).map(|i| out.cross_entropy(i, labels[i])).sum::<f64>() / 3.0;
        assert_eq!(l.total, plain);
    }

    #[test]
    fn weight_outside_unit_interval_rejected() {
        let out = output_with_probs(&[[0.5, 0.5]]);
        for w in [-0.1, 1.5, f64::NAN] {
            assert!(matches!(
                weighted_ce_loss(&out, &[0], &[w]),
                Err(TsrlError::Contract(_))
            ));
        }
    }

    #[test]
    fn evaluate_flags_and_confidence() {
        let out = output_with_probs(&[[0.9, 0.1], [0.4, 0.6]]);
        let snap = EvalSnapshot::from_output(&out, &[0, 0]);
        assert_eq!(snap.correct, vec![true, false]);
        assert!((snap.confidence[0] - 0.9).abs() < 1e-12);
        assert!((snap.confidence[1] - 0.4).abs() < 1e-12);
        assert!((snap.loss[0] + 0.9f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn zero_weights_leave_parameters_unchanged() {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(5);
        let mut net =
            DenseNet::glorot(&[3, 8, 2], Activation::Relu, Activation::Identity, &mut rng).unwrap();
        let before = net.clone();
        let mut opt = Optimizer::adam(1e-2);
        let xs = vec![vec![0.5, -1.0, 2.0], vec![1.0, 0.0, 0.3]];
        let report = train_step(&mut net, &mut opt, &xs, &[0, 1], &[0.0, 0.0]).unwrap();
        assert_eq!(report.grad_norm, 0.0);
        assert_eq!(net, before);
    }

    #[test]
    fn sgd_step_on_single_bias() {
        // one-layer net whose only trainable influence is a class-1 bias
        let net0 = DenseNet::new(vec![Layer::zeros(1, 2, Activation::Identity)]).unwrap();
        let mut net = net0.clone();
        let xs = vec![vec![0.0]];
        let (_, _, g) = loss_and_gradients(&net, &xs, &[1], &[1.0]).unwrap();
        // p = [0.5, 0.5], label 1: d/db1 = p1 - 1 = -0.5
        assert_eq!(g.layers[0].bias, vec![0.5, -0.5]);
        let mut opt = Optimizer::sgd(0.1);
        train_step(&mut net, &mut opt, &xs, &[1], &[1.0]).unwrap();
        assert_eq!(net.layers()[0].bias[1], 0.0 - 0.1 * -0.5);
        assert_eq!(net.layers()[0].bias[0], 0.0 - 0.1 * 0.5);
    }

    #[test]
    fn non_finite_inputs_abort_the_step() {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(1);
        let mut net =
            DenseNet::glorot(&[2, 4, 2], Activation::Tanh, Activation::Identity, &mut rng).unwrap();
        let mut opt = Optimizer::adam(1e-3);
        let err = train_step(&mut net, &mut opt, &[vec![f64::NAN, 0.0]], &[0], &[1.0]).unwrap_err();
        assert!(matches!(err, TsrlError::NonFinite(_)));
        assert_eq!(opt.steps(), 0);
    }
}
