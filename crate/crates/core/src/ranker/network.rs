//! Shared-weight siamese MLP with a logistic comparison head.
//!
//! Both branches read from the single `branch` stack; there is no second copy
//! of its parameters. The head consumes `[embed(a), embed(b)]` and emits the
//! probability that forecast `a` is the better one.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::PairExample;
use crate::error::{Error, Result};

pub const BRANCH_WIDTH: usize = 32;
pub const BRANCH_DEPTH: usize = 3;
pub const HEAD_WIDTH: usize = 64;
pub const HEAD_DEPTH: usize = 4;

/// Probability clamp used by [`loss`].
const P_EPS: f64 = 1e-12;

/// Fully connected layer, weights row-major `outputs × inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let weights = (0..inputs * outputs)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        Dense {
            inputs,
            outputs,
            weights,
            bias: vec![0.0; outputs],
        }
    }

    pub fn affine(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.inputs);
        self.weights
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn params(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(&self.bias)
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(self.bias.iter_mut())
    }
}

fn relu_in_place(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = x.max(0.0));
}

pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy with `p` clamped to `[1e-12, 1 - 1e-12]`.
pub fn loss(p: f64, label: u8) -> f64 {
    let p = p.clamp(P_EPS, 1.0 - P_EPS);
    if label == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Per-layer inputs and pre-activations of a ReLU stack.
struct StackTrace {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

fn forward_stack(layers: &[Dense], x: &[f64]) -> (Vec<f64>, StackTrace) {
    let mut trace = StackTrace {
        inputs: Vec::with_capacity(layers.len()),
        pre: Vec::with_capacity(layers.len()),
    };
    let mut a = x.to_vec();
    for layer in layers {
        let z = layer.affine(&a);
        let mut next = z.clone();
        relu_in_place(&mut next);
        trace.inputs.push(a);
        trace.pre.push(z);
        a = next;
    }
    (a, trace)
}

/// Backpropagates `delta` (gradient w.r.t. the stack output) and accumulates
/// into `grads`. Returns the gradient w.r.t. the stack input.
fn backward_stack(layers: &[Dense], trace: &StackTrace, mut delta: Vec<f64>, grads: &mut [Dense]) -> Vec<f64> {
    for (l, layer) in layers.iter().enumerate().rev() {
        let dz: Vec<f64> = delta
            .iter()
            .zip(&trace.pre[l])
            .map(|(d, z)| if *z > 0.0 { *d } else { 0.0 })
            .collect();
        let g = &mut grads[l];
        let input = &trace.inputs[l];
        let mut d_in = vec![0.0; layer.inputs];
        for (o, dzo) in dz.iter().enumerate() {
            if *dzo == 0.0 {
                continue;
            }
            g.bias[o] += dzo;
            let row = o * layer.inputs;
            for i in 0..layer.inputs {
                g.weights[row + i] += dzo * input[i];
                d_in[i] += dzo * layer.weights[row + i];
            }
        }
        delta = d_in;
    }
    delta
}

fn stack_pattern(trace: &StackTrace, out: &mut Vec<bool>) {
    out.extend(trace.pre.iter().flatten().map(|z| *z > 0.0));
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiameseNetwork {
    pub input_dim: usize,
    pub branch: Vec<Dense>,
    pub head: Vec<Dense>,
    pub output: Dense,
}

/// Gradients share the parameter layout of the network.
pub type Gradient = SiameseNetwork;

impl SiameseNetwork {
    fn shape(input_dim: usize, mut make: impl FnMut(usize, usize) -> Dense) -> Self {
        let mut branch = Vec::with_capacity(BRANCH_DEPTH);
        let mut width = input_dim;
        for _ in 0..BRANCH_DEPTH {
            branch.push(make(width, BRANCH_WIDTH));
            width = BRANCH_WIDTH;
        }
        let mut head = Vec::with_capacity(HEAD_DEPTH);
        let mut width = 2 * BRANCH_WIDTH;
        for _ in 0..HEAD_DEPTH {
            head.push(make(width, HEAD_WIDTH));
            width = HEAD_WIDTH;
        }
        let output = make(HEAD_WIDTH, 1);
        SiameseNetwork {
            input_dim,
            branch,
            head,
            output,
        }
    }

    pub fn zeros(input_dim: usize) -> Self {
        Self::shape(input_dim, Dense::zeros)
    }

    pub fn glorot<R: Rng + ?Sized>(input_dim: usize, rng: &mut R) -> Self {
        Self::shape(input_dim, |i, o| Dense::glorot(i, o, rng))
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_dim)
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                actual: x.len(),
            });
        }
        Ok(())
    }

    /// Branch embedding of one feature vector.
    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        Ok(forward_stack(&self.branch, x).0)
    }

    /// Head output given two precomputed embeddings.
    pub fn score_embeddings(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut h: Vec<f64> = a.iter().chain(b).copied().collect();
        for layer in &self.head {
            h = layer.affine(&h);
            relu_in_place(&mut h);
        }
        logistic(self.output.affine(&h)[0])
    }

    /// The concatenated embeddings fed to the head.
    pub fn head_input(&self, pair: &PairExample) -> Result<Vec<f64>> {
        let mut h = self.embed(&pair.features_a.to_input())?;
        h.extend(self.embed(&pair.features_b.to_input())?);
        Ok(h)
    }

    pub fn forward_inputs(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        Ok(self.score_embeddings(&self.embed(a)?, &self.embed(b)?))
    }

    /// Probability that `pair.features_a` is the better forecast.
    pub fn forward(&self, pair: &PairExample) -> Result<f64> {
        self.forward_inputs(&pair.features_a.to_input(), &pair.features_b.to_input())
    }

    /// Sign pattern of every ReLU pre-activation for the pair, in a fixed
    /// order (branch a, branch b, head).
    pub fn activation_pattern(&self, a: &[f64], b: &[f64]) -> Result<Vec<bool>> {
        self.check_dim(a)?;
        self.check_dim(b)?;
        let (ea, ta) = forward_stack(&self.branch, a);
        let (eb, tb) = forward_stack(&self.branch, b);
        let h: Vec<f64> = ea.into_iter().chain(eb).collect();
        let (_, th) = forward_stack(&self.head, &h);
        let mut out = Vec::new();
        stack_pattern(&ta, &mut out);
        stack_pattern(&tb, &mut out);
        stack_pattern(&th, &mut out);
        Ok(out)
    }

    /// Adds `scale * dLoss/dθ` for one example into `grad`; returns `(p, loss)`.
    pub fn accumulate_gradient(
        &self,
        a: &[f64],
        b: &[f64],
        label: u8,
        scale: f64,
        grad: &mut Gradient,
    ) -> Result<(f64, f64)> {
        self.check_dim(a)?;
        self.check_dim(b)?;
        let (ea, ta) = forward_stack(&self.branch, a);
        let (eb, tb) = forward_stack(&self.branch, b);
        let h: Vec<f64> = ea.into_iter().chain(eb).collect();
        let (top, th) = forward_stack(&self.head, &h);
        let z = self.output.affine(&top)[0];
        let p = logistic(z);

        // d(BCE)/dz for a logistic output.
        let dz = scale * (p - f64::from(label));
        grad.output.bias[0] += dz;
        let mut d_top = vec![0.0; top.len()];
        for (i, t) in top.iter().enumerate() {
            grad.output.weights[i] += dz * t;
            d_top[i] = dz * self.output.weights[i];
        }
        let d_h = backward_stack(&self.head, &th, d_top, &mut grad.head);
        let (d_ea, d_eb) = d_h.split_at(BRANCH_WIDTH);
        backward_stack(&self.branch, &ta, d_ea.to_vec(), &mut grad.branch);
        backward_stack(&self.branch, &tb, d_eb.to_vec(), &mut grad.branch);
        Ok((p, loss(p, label)))
    }

    pub fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.branch
            .iter()
            .chain(&self.head)
            .chain(std::iter::once(&self.output))
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut Dense> {
        self.branch
            .iter_mut()
            .chain(self.head.iter_mut())
            .chain(std::iter::once(&mut self.output))
    }

    pub fn num_parameters(&self) -> usize {
        self.layers().map(Dense::num_parameters).sum()
    }

    /// Flat view: per layer (branch, head, output), weights then biases.
    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers().flat_map(Dense::params)
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers_mut().flat_map(Dense::params_mut)
    }

    pub fn parameters(&self) -> Vec<f64> {
        self.params().copied().collect()
    }

    pub fn set_parameters(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_parameters() {
            return Err(Error::DimensionMismatch {
                expected: self.num_parameters(),
                actual: values.len(),
            });
        }
        self.params_mut().zip(values).for_each(|(p, v)| *p = *v);
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(|p| p.is_finite())
    }
}

/// Mean loss and mean gradient over `batch`.
pub fn loss_and_gradient(net: &SiameseNetwork, batch: &[PairExample]) -> Result<(f64, Gradient)> {
    if batch.is_empty() {
        return Err(Error::Empty("empty batch"));
    }
    let mut grad = net.zeros_like();
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for pair in batch {
        let (_, l) = net.accumulate_gradient(
            &pair.features_a.to_input(),
            &pair.features_b.to_input(),
            pair.label,
            scale,
            &mut grad,
        )?;
        total += l;
    }
    Ok((total * scale, grad))
}

/// Exact mean gradient of the batch loss.
pub fn gradient(net: &SiameseNetwork, batch: &[PairExample]) -> Result<Gradient> {
    loss_and_gradient(net, batch).map(|(_, g)| g)
}

/// Mean batch loss; the quantity [`gradient`] differentiates.
pub fn batch_loss(net: &SiameseNetwork, batch: &[PairExample]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Empty("empty batch"));
    }
    let mut total = 0.0;
    for pair in batch {
        total += loss(net.forward(pair)?, pair.label);
    }
    Ok(total / batch.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ranker::FeatureVector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn features(rng: &mut ChaCha8Rng) -> FeatureVector {
        FeatureVector {
            padded_probabilities: (0..3).map(|_| rng.random::<f64>()).collect(),
            confidence_norm: rng.random(),
            past_brier: rng.random::<f64>() * 2.0,
            log_prior_count: rng.random::<f64>() * 3.0,
            topic: vec![0.25, 0.75],
        }
    }

    fn pair(rng: &mut ChaCha8Rng) -> PairExample {
        PairExample {
            features_a: features(rng),
            features_b: features(rng),
            label: rng.random_range(0..=1),
        }
    }

    #[test]
    fn architecture_shape() {
        let net = SiameseNetwork::zeros(8);
        assert_eq!(net.branch.len(), 3);
        assert_eq!(net.head.len(), 4);
        assert_eq!(net.branch[0].inputs, 8);
        assert!(net.branch.iter().all(|l| l.outputs == 32));
        assert_eq!(net.head[0].inputs, 64);
        assert!(net.head.iter().all(|l| l.outputs == 64));
        assert_eq!(net.output.outputs, 1);
        let expected = (8 * 32 + 32) + 2 * (32 * 32 + 32) + 4 * (64 * 64 + 64) + 65;
        assert_eq!(net.num_parameters(), expected);
    }

    #[test]
    fn zero_net_outputs_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = SiameseNetwork::zeros(8);
        for _ in 0..5 {
            assert_eq!(net.forward(&pair(&mut rng)).unwrap(), 0.5);
        }
    }

    #[test]
    fn dimension_mismatch() {
        let net = SiameseNetwork::zeros(7);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            net.forward(&pair(&mut rng)),
            Err(Error::DimensionMismatch { expected: 7, actual: 8 })
        ));
    }

    /// Plain loops over the stored matrices, independent of `affine`.
    fn reference_forward(net: &SiameseNetwork, a: &[f64], b: &[f64]) -> f64 {
        fn dense(layer: &Dense, x: &[f64], relu: bool) -> Vec<f64> {
            let mut out = vec![0.0; layer.outputs];
            for o in 0..layer.outputs {
                let mut s = layer.bias[o];
                for i in 0..layer.inputs {
                    s += layer.weights[o * layer.inputs + i] * x[i];
                }
                out[o] = if relu && s < 0.0 { 0.0 } else { s };
            }
            out
        }
        let branch = |x: &[f64]| net.branch.iter().fold(x.to_vec(), |h, l| dense(l, &h, true));
        let mut h = branch(a);
        h.extend(branch(b));
        let h = net.head.iter().fold(h, |h, l| dense(l, &h, true));
        let z = dense(&net.output, &h, false)[0];
        1.0 / (1.0 + (-z).exp())
    }

    #[test]
    fn forward_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = SiameseNetwork::glorot(8, &mut rng);
        for _ in 0..20 {
            let p = pair(&mut rng);
            let a = p.features_a.to_input();
            let b = p.features_b.to_input();
            let got = net.forward(&p).unwrap();
            assert!((got - reference_forward(&net, &a, &b)).abs() < 1e-14);
        }
    }

    #[test]
    fn head_input_starts_with_standalone_branch() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = SiameseNetwork::glorot(8, &mut rng);
        let p = pair(&mut rng);
        let h = net.head_input(&p).unwrap();
        assert_eq!(&h[..32], net.embed(&p.features_a.to_input()).unwrap().as_slice());
        assert_eq!(&h[32..], net.embed(&p.features_b.to_input()).unwrap().as_slice());

        // One storage: perturbing the branch moves both halves identically.
        net.branch[1].weights[5] += 0.3;
        net.branch[0].bias[2] -= 0.1;
        let same = PairExample {
            features_a: p.features_a.clone(),
            features_b: p.features_a.clone(),
            label: 1,
        };
        let h = net.head_input(&same).unwrap();
        assert_eq!(&h[..32], &h[32..]);
        assert_eq!(&h[..32], net.embed(&p.features_a.to_input()).unwrap().as_slice());
    }

    #[test]
    fn loss_values() {
        assert!((loss(0.5, 0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((loss(0.5, 1) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((loss(1.0 - 1e-12, 1) - 1e-12).abs() < 1e-15);
        assert!((loss(0.9, 0) - 0.1f64.ln().abs()).abs() < 1e-12);
        assert!(loss(0.0, 1).is_finite());
    }

    #[test]
    fn symmetric_batch_zero_output_bias_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = SiameseNetwork::zeros(8);
        let mut batch = Vec::new();
        for _ in 0..6 {
            let p = pair(&mut rng);
            batch.push(p.swapped());
            batch.push(p);
        }
        let g = gradient(&net, &batch).unwrap();
        assert_eq!(g.output.bias[0], 0.0);
    }

    #[test]
    fn duplicated_example_gradient_equals_single() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let net = SiameseNetwork::glorot(8, &mut rng);
        let p = pair(&mut rng);
        let single = gradient(&net, std::slice::from_ref(&p)).unwrap();
        let many = gradient(&net, &vec![p; 512]).unwrap();
        for (a, b) in single.params().zip(many.params()) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-12), "{a} vs {b}");
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut net = SiameseNetwork::glorot(8, &mut rng);
        let batch: Vec<_> = (0..3).map(|_| pair(&mut rng)).collect();
        let g = gradient(&net, &batch).unwrap().parameters();
        let base = net.parameters();
        let h = 1e-5;
        let mut checked = 0;
        for k in (0..base.len()).step_by(7) {
            let mut plus = base.clone();
            plus[k] += h;
            net.set_parameters(&plus).unwrap();
            let lp = batch_loss(&net, &batch).unwrap();
            let mut minus = base.clone();
            minus[k] -= h;
            net.set_parameters(&minus).unwrap();
            let lm = batch_loss(&net, &batch).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            let denom = g[k].abs().max(fd.abs()).max(1e-6);
            assert!((g[k] - fd).abs() / denom < 1e-4, "param {k}: {} vs {fd}", g[k]);
            checked += 1;
        }
        net.set_parameters(&base).unwrap();
        assert!(checked > 100);
    }

    #[test]
    fn parameter_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = SiameseNetwork::glorot(5, &mut rng);
        let mut other = SiameseNetwork::zeros(5);
        other.set_parameters(&net.parameters()).unwrap();
        assert_eq!(net, other);
        assert!(other.set_parameters(&[1.0]).is_err());
    }
}
