//! A small fully connected ReLU network trained by minibatch gradient descent
//! on synthetic Gaussian class blobs, recording per-layer `Pr[y > 0]` after
//! every epoch.

use std::io::{self, Write};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{gaussian_substream, substream, GaussianStream};

const DATA_STREAM: u64 = 0;
const INIT_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;

/// Bias given to every unit of a deliberately killed layer.
pub const DEAD_BIAS: f64 = -1.0e3;
/// Weight scale of a deliberately killed layer.
pub const DEAD_WEIGHT_STD: f64 = 1.0e-6;

/// Isotropic Gaussian blobs, one per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub samples_per_class: usize,
    pub input_dim: usize,
    /// Norm of each class mean.
    pub separation: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: 2,
            samples_per_class: 200,
            input_dim: 10,
            separation: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    /// Input, hidden…, output widths.
    pub layer_sizes: Vec<usize>,
    pub eta: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub dataset: SyntheticSpec,
    /// Hidden layer (0-based) initialised with large negative biases.
    #[serde(default)]
    pub dead_layer: Option<usize>,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            layer_sizes: vec![10, 32, 32, 32, 2],
            eta: 0.05,
            epochs: 50,
            batch_size: 32,
            seed: 0,
            dataset: SyntheticSpec::default(),
            dead_layer: None,
        }
    }
}

impl MlpConfig {
    fn validate_shape(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 || self.layer_sizes.contains(&0) {
            return Err(Error::Domain(format!(
                "layer sizes must have at least two nonzero entries, got {:?}",
                self.layer_sizes
            )));
        }
        if self.layer_sizes[0] != self.dataset.input_dim {
            return Err(Error::Dimension {
                expected: self.dataset.input_dim,
                actual: self.layer_sizes[0],
            });
        }
        if self.layer_sizes[self.layer_sizes.len() - 1] != self.dataset.classes {
            return Err(Error::Dimension {
                expected: self.dataset.classes,
                actual: self.layer_sizes[self.layer_sizes.len() - 1],
            });
        }
        if self.dataset.classes < 2 || self.dataset.samples_per_class == 0 {
            return Err(Error::Domain("need at least two classes with samples".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Domain("batch size must be at least 1".into()));
        }
        if let Some(layer) = self.dead_layer {
            if layer + 2 >= self.layer_sizes.len() {
                return Err(Error::Domain(format!("no hidden layer {layer} to kill")));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_shape()?;
        if self.layer_sizes.len() < 3 {
            return Err(Error::Domain("at least one hidden layer is required".into()));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::Domain(format!("eta must be positive, got {}", self.eta)));
        }
        Ok(())
    }
}

/// Labelled training set, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn generate(spec: &SyntheticSpec, seed: u64) -> Self {
        let mut gauss = gaussian_substream(seed, DATA_STREAM);
        let means: Vec<Vec<f64>> = (0..spec.classes)
            .map(|_| {
                let mut dir = vec![0.0; spec.input_dim];
                gauss.fill_std(&mut dir);
                let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                dir.iter().map(|v| spec.separation * v / norm).collect()
            })
            .collect();
        let mut inputs = Vec::with_capacity(spec.classes * spec.samples_per_class);
        let mut labels = Vec::with_capacity(inputs.capacity());
        for _ in 0..spec.samples_per_class {
            for (class, mean) in means.iter().enumerate() {
                inputs.push(mean.iter().map(|m| m + gauss.next_std()).collect());
                labels.push(class);
            }
        }
        Self { inputs, labels }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Fully connected layer; `weights` is `outputs × inputs`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn forward(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.outputs {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            out.push(self.bias[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>());
        }
    }
}

/// ReLU on every hidden layer, softmax cross-entropy on the output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Gradients laid out like [`Mlp::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

impl Mlp {
    /// He-normal weights (`std = √(2/fan_in)`) and zero biases.
    pub fn he_normal<R: rand::RngCore>(sizes: &[usize], gauss: &mut GaussianStream<R>) -> Self {
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (inputs, outputs) = (w[0], w[1]);
                let std = (2.0 / inputs as f64).sqrt();
                let weights = (0..inputs * outputs).map(|_| std * gauss.next_std()).collect();
                Dense {
                    inputs,
                    outputs,
                    weights,
                    bias: vec![0.0; outputs],
                }
            })
            .collect();
        Self { layers }
    }

    pub fn from_config(config: &MlpConfig) -> Self {
        let mut gauss = gaussian_substream(config.seed, INIT_STREAM);
        let mut net = Self::he_normal(&config.layer_sizes, &mut gauss);
        if let Some(layer) = config.dead_layer {
            let dense = &mut net.layers[layer];
            for w in &mut dense.weights {
                *w = DEAD_WEIGHT_STD * gauss.next_std();
            }
            dense.bias.fill(DEAD_BIAS);
        }
        net
    }

    pub fn hidden_layers(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Pre-activations of every layer for one input.
    pub fn pre_activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut act = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::new();
            layer.forward(&act, &mut z);
            if i + 1 < self.layers.len() {
                act = z.iter().map(|&v| v.max(0.0)).collect();
            }
            pre.push(z);
        }
        pre
    }

    /// Mean cross-entropy over `indices` of `data`.
    pub fn loss(&self, data: &Dataset, indices: &[usize]) -> f64 {
        let total: f64 = indices
            .iter()
            .map(|&i| {
                let pre = self.pre_activations(&data.inputs[i]);
                cross_entropy(&pre[pre.len() - 1], data.labels[i])
            })
            .sum();
        total / indices.len() as f64
    }

    /// Loss and its gradient over `indices` by backpropagation.
    pub fn gradients(&self, data: &Dataset, indices: &[usize]) -> (f64, Gradients) {
        let mut grads = Gradients {
            weights: self.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            bias: self.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        };
        let scale = 1.0 / indices.len() as f64;
        let mut loss = 0.0;
        for &i in indices {
            let x = &data.inputs[i];
            let pre = self.pre_activations(x);
            let logits = &pre[pre.len() - 1];
            loss += cross_entropy(logits, data.labels[i]);

            // dL/dz for the output layer: softmax − onehot.
            let mut delta = softmax(logits);
            delta[data.labels[i]] -= 1.0;

            for li in (0..self.layers.len()).rev() {
                let layer = &self.layers[li];
                let input: Vec<f64> = if li == 0 {
                    x.clone()
                } else {
                    pre[li - 1].iter().map(|&v| v.max(0.0)).collect()
                };
                for o in 0..layer.outputs {
                    let d = delta[o] * scale;
                    grads.bias[li][o] += d;
                    let row = &mut grads.weights[li][o * layer.inputs..(o + 1) * layer.inputs];
                    for (g, v) in row.iter_mut().zip(&input) {
                        *g += d * v;
                    }
                }
                if li > 0 {
                    let mut prev = vec![0.0; layer.inputs];
                    for o in 0..layer.outputs {
                        let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                        for (p, w) in prev.iter_mut().zip(row) {
                            *p += delta[o] * w;
                        }
                    }
                    // ReLU derivative: the unit step, closed at zero.
                    for (p, &z) in prev.iter_mut().zip(&pre[li - 1]) {
                        if z <= 0.0 {
                            *p = 0.0;
                        }
                    }
                    delta = prev;
                }
            }
        }
        (loss * scale, grads)
    }

    fn apply(&mut self, grads: &Gradients, eta: f64) {
        for (li, layer) in self.layers.iter_mut().enumerate() {
            for (w, g) in layer.weights.iter_mut().zip(&grads.weights[li]) {
                *w -= eta * g;
            }
            for (b, g) in layer.bias.iter_mut().zip(&grads.bias[li]) {
                *b -= eta * g;
            }
        }
    }

    /// Mutable access to parameter `index` in the flattened order
    /// (layer by layer, weights then biases).
    fn param_mut(&mut self, mut index: usize) -> &mut f64 {
        for layer in &mut self.layers {
            if index < layer.weights.len() {
                return &mut layer.weights[index];
            }
            index -= layer.weights.len();
            if index < layer.bias.len() {
                return &mut layer.bias[index];
            }
            index -= layer.bias.len();
        }
        panic!("parameter index out of range");
    }

    /// Signs of every hidden pre-activation over `indices`.
    fn activation_pattern(&self, data: &Dataset, indices: &[usize]) -> Vec<bool> {
        let mut pattern = Vec::new();
        for &i in indices {
            let pre = self.pre_activations(&data.inputs[i]);
            for z in &pre[..pre.len() - 1] {
                pattern.extend(z.iter().map(|&v| v > 0.0));
            }
        }
        pattern
    }
}

impl Gradients {
    fn flatten(&self) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .flat_map(|(w, b)| w.iter().chain(b).copied())
            .collect()
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let lse = max + logits.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    lse - logits[label]
}

/// Per-layer fraction of (unit, sample) pairs with positive pre-activation.
pub fn measure_activation(net: &Mlp, data: &Dataset) -> Vec<f64> {
    let hidden = net.hidden_layers();
    let mut positive = vec![0usize; hidden];
    for x in &data.inputs {
        let pre = net.pre_activations(x);
        for (count, z) in positive.iter_mut().zip(&pre[..hidden]) {
            *count += z.iter().filter(|&&v| v > 0.0).count();
        }
    }
    positive
        .iter()
        .zip(&net.layers)
        .map(|(&count, layer)| count as f64 / (layer.outputs * data.len()) as f64)
        .collect()
}

/// `Pr[y > 0]` for every hidden layer after every epoch.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ActivationStats {
    /// `per_epoch[e][l]`: hidden layer `l` after epoch `e + 1`.
    pub per_epoch: Vec<Vec<f64>>,
}

impl ActivationStats {
    pub fn epochs(&self) -> usize {
        self.per_epoch.len()
    }

    /// Element-wise mean of several runs with the same shape.
    pub fn average(runs: &[ActivationStats]) -> Result<ActivationStats> {
        let first = runs.first().ok_or_else(|| Error::Domain("no runs to average".into()))?;
        let mut per_epoch = first.per_epoch.clone();
        for run in &runs[1..] {
            if run.per_epoch.len() != per_epoch.len() {
                return Err(Error::Dimension {
                    expected: per_epoch.len(),
                    actual: run.per_epoch.len(),
                });
            }
            for (acc, row) in per_epoch.iter_mut().zip(&run.per_epoch) {
                for (a, v) in acc.iter_mut().zip(row) {
                    *a += v;
                }
            }
        }
        let n = runs.len() as f64;
        for row in &mut per_epoch {
            for v in row.iter_mut() {
                *v /= n;
            }
        }
        Ok(ActivationStats { per_epoch })
    }

    /// CSV `epoch,layer,activation_prob`; epochs and layers count from 1.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "epoch,layer,activation_prob")?;
        for (e, row) in self.per_epoch.iter().enumerate() {
            for (l, p) in row.iter().enumerate() {
                writeln!(out, "{},{},{p}", e + 1, l + 1)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRun {
    pub stats: ActivationStats,
    /// Training-set loss before training, then after each completed epoch.
    pub losses: Vec<f64>,
    /// Training stopped because the loss exceeded 10× its initial value.
    pub diverged: bool,
}

/// CSV `epoch,loss` with epoch 0 the untrained network.
pub fn write_loss_csv<W: Write>(losses: &[f64], mut out: W) -> io::Result<()> {
    writeln!(out, "epoch,loss")?;
    for (e, l) in losses.iter().enumerate() {
        writeln!(out, "{e},{l}")?;
    }
    Ok(())
}

fn shuffle(indices: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..indices.len()).rev() {
        let j = rng.gen_range(0..=i);
        indices.swap(i, j);
    }
}

pub fn train_and_probe(config: &MlpConfig) -> Result<ProbeRun> {
    config.validate()?;
    let data = Dataset::generate(&config.dataset, config.seed);
    let mut net = Mlp::from_config(config);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut shuffler = substream(config.seed, SHUFFLE_STREAM);

    let initial = net.loss(&data, &order);
    let mut losses = vec![initial];
    let mut stats = ActivationStats::default();
    let mut diverged = false;

    for _ in 0..config.epochs {
        shuffle(&mut order, &mut shuffler);
        for batch in order.chunks(config.batch_size) {
            let (_, grads) = net.gradients(&data, batch);
            net.apply(&grads, config.eta);
        }
        stats.per_epoch.push(measure_activation(&net, &data));
        let all: Vec<usize> = (0..data.len()).collect();
        let loss = net.loss(&data, &all);
        losses.push(loss);
        if loss.is_nan() || loss > 10.0 * initial {
            diverged = true;
            break;
        }
    }
    Ok(ProbeRun {
        stats,
        losses,
        diverged,
    })
}

/// Outcome of comparing backpropagation against central differences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    /// `max |g − ĝ| / max(|g|, |ĝ|, floor)` over checked parameters.
    pub max_rel_discrepancy: f64,
    pub checked: usize,
    /// Parameters whose perturbation moves some pre-activation across zero.
    pub excluded: Vec<usize>,
}

pub const FD_STEP: f64 = 1e-5;
const REL_FLOOR: f64 = 1e-3;

/// Gradient check of a config's freshly initialised network on the first
/// `batch_size` training samples.
pub fn gradient_check(config: &MlpConfig) -> Result<GradientCheck> {
    config.validate_shape()?;
    let data = Dataset::generate(&config.dataset, config.seed);
    let net = Mlp::from_config(config);
    let batch: Vec<usize> = (0..config.batch_size.min(data.len())).collect();
    Ok(gradient_check_on(&net, &data, &batch))
}

pub fn gradient_check_on(net: &Mlp, data: &Dataset, batch: &[usize]) -> GradientCheck {
    let (_, grads) = net.gradients(data, batch);
    let analytic = grads.flatten();
    let mut probe = net.clone();
    let mut max_rel = 0.0_f64;
    let mut excluded = Vec::new();
    for (index, &g) in analytic.iter().enumerate() {
        let original = *probe.param_mut(index);

        *probe.param_mut(index) = original + FD_STEP;
        let plus = probe.loss(data, batch);
        let plus_pattern = probe.activation_pattern(data, batch);

        *probe.param_mut(index) = original - FD_STEP;
        let minus = probe.loss(data, batch);
        let minus_pattern = probe.activation_pattern(data, batch);

        *probe.param_mut(index) = original;
        if plus_pattern != minus_pattern {
            excluded.push(index);
            continue;
        }
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        let denom = g.abs().max(numeric.abs()).max(REL_FLOOR);
        max_rel = max_rel.max((g - numeric).abs() / denom);
    }
    GradientCheck {
        max_rel_discrepancy: max_rel,
        checked: analytic.len() - excluded.len(),
        excluded,
    }
}
