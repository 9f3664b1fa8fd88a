//! A small fully connected classifier with explicit backpropagation and a
//! synthetic Gaussian-blob dataset.
//!
//! Parameters live in one flat vector laid out as `W1, b1, W2, b2, ...`
//! (weights row-major, `n_out x n_in`), one partition per tensor.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensorcore::Layout;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, h: f64) -> f64 {
        match self {
            Activation::Relu => h.max(0.0),
            Activation::Tanh => h.tanh(),
            Activation::Identity => h,
        }
    }

    fn derivative(self, h: f64) -> f64 {
        match self {
            Activation::Relu => {
                if h > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - h.tanh().powi(2),
            Activation::Identity => 1.0,
        }
    }
}

/// Layer widths `[n0, ..., nL]` and one activation per layer. The output
/// feeds a softmax cross-entropy loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub activations: Vec<Activation>,
}

impl Default for MlpSpec {
    fn default() -> Self {
        Self {
            widths: vec![2, 32, 32, 3],
            activations: vec![Activation::Relu, Activation::Relu, Activation::Identity],
        }
    }
}

impl MlpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 || self.widths.contains(&0) {
            return Err(Error::config(format!("need at least one layer of nonzero widths, got {:?}", self.widths)));
        }
        if self.activations.len() != self.widths.len() - 1 {
            return Err(Error::config(format!(
                "{} layers need {} activations, got {}",
                self.widths.len() - 1,
                self.widths.len() - 1,
                self.activations.len()
            )));
        }
        Ok(())
    }

    pub fn depth(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn classes(&self) -> usize {
        *self.widths.last().expect("validated")
    }
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `a_0 = x, a_1, ..., a_L`.
    pub activations: Vec<Vec<f64>>,
    /// `h_1, ..., h_L`.
    pub pre_activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn logits(&self) -> &[f64] {
        self.activations.last().expect("at least the input")
    }
}

#[derive(Debug, Clone)]
pub struct Mlp {
    spec: MlpSpec,
    layout: Layout,
}

impl Mlp {
    pub fn new(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let layout = Layout::from_sizes(spec.widths.windows(2).enumerate().flat_map(|(l, w)| {
            [(format!("W{}", l + 1), w[0] * w[1]), (format!("b{}", l + 1), w[1])]
        }))?;
        Ok(Self { spec, layout })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn num_params(&self) -> usize {
        self.layout.len()
    }

    fn weights<'a>(&self, params: &'a [f64], layer: usize) -> (&'a [f64], &'a [f64]) {
        let w = &self.layout.partitions()[2 * layer];
        let b = &self.layout.partitions()[2 * layer + 1];
        (&params[w.range()], &params[b.range()])
    }

    /// Uniform fan-based weights in `+-sqrt(6 / (n_in + n_out))`, zero biases.
    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; self.num_params()];
        for (l, w) in self.spec.widths.windows(2).enumerate() {
            let limit = (6.0 / (w[0] + w[1]) as f64).sqrt();
            let range = self.layout.partitions()[2 * l].range();
            for p in &mut params[range] {
                *p = rng.random_range(-limit..limit);
            }
        }
        params
    }

    fn check(&self, params: &[f64], x: &[f64]) -> Result<()> {
        if params.len() != self.num_params() || x.len() != self.spec.widths[0] {
            return Err(Error::usage(format!(
                "expected {} params and input of {}, got {} and {}",
                self.num_params(),
                self.spec.widths[0],
                params.len(),
                x.len()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, params: &[f64], x: &[f64]) -> Result<ForwardCache> {
        self.check(params, x)?;
        let mut activations = vec![x.to_vec()];
        let mut pre_activations = Vec::with_capacity(self.spec.depth());
        for l in 0..self.spec.depth() {
            let (w, b) = self.weights(params, l);
            let input = &activations[l];
            let n_in = input.len();
            let h: Vec<f64> = b
                .iter()
                .enumerate()
                .map(|(o, bo)| bo + w[o * n_in..(o + 1) * n_in].iter().zip(input).map(|(a, c)| a * c).sum::<f64>())
                .collect();
            let phi = self.spec.activations[l];
            activations.push(h.iter().map(|&v| phi.apply(v)).collect());
            pre_activations.push(h);
        }
        Ok(ForwardCache { activations, pre_activations })
    }

    /// Adds `scale * d loss(x, y) / d params` into `grad` for one sample,
    /// returning the sample's cross-entropy.
    pub fn backward(&self, params: &[f64], cache: &ForwardCache, label: usize, scale: f64, grad: &mut [f64]) -> f64 {
        let probs = softmax(cache.logits());
        let loss = -probs[label].max(f64::MIN_POSITIVE).ln();
        // d loss / d a_L
        let mut upstream: Vec<f64> = probs;
        upstream[label] -= 1.0;

        for l in (0..self.spec.depth()).rev() {
            let phi = self.spec.activations[l];
            let delta: Vec<f64> = upstream
                .iter()
                .zip(&cache.pre_activations[l])
                .map(|(d, &h)| d * phi.derivative(h))
                .collect();
            let input = &cache.activations[l];
            let n_in = input.len();
            let w_range = self.layout.partitions()[2 * l].range();
            let b_range = self.layout.partitions()[2 * l + 1].range();
            for (o, d) in delta.iter().enumerate() {
                let row = &mut grad[w_range.start + o * n_in..w_range.start + (o + 1) * n_in];
                for (gw, a) in row.iter_mut().zip(input) {
                    *gw += scale * d * a;
                }
                grad[b_range.start + o] += scale * d;
            }
            if l > 0 {
                let w = &params[w_range];
                let mut next = vec![0.0; n_in];
                for (o, d) in delta.iter().enumerate() {
                    for (n, wv) in next.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                        *n += wv * d;
                    }
                }
                upstream = next;
            }
        }
        loss
    }

    /// Mean cross-entropy and its gradient over the samples at `indices`.
    pub fn loss_and_grad(&self, params: &[f64], data: &Dataset, indices: &[usize]) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; self.num_params()];
        if indices.is_empty() {
            return Ok((0.0, grad));
        }
        let scale = 1.0 / indices.len() as f64;
        let mut loss = 0.0;
        for &i in indices {
            let cache = self.forward(params, &data.inputs[i])?;
            loss += self.backward(params, &cache, data.labels[i], scale, &mut grad);
        }
        Ok((loss * scale, grad))
    }

    pub fn mean_loss(&self, params: &[f64], data: &Dataset) -> Result<f64> {
        let mut total = 0.0;
        for (x, &y) in data.inputs.iter().zip(&data.labels) {
            let probs = softmax(self.forward(params, x)?.logits());
            total -= probs[y].max(f64::MIN_POSITIVE).ln();
        }
        Ok(total / data.len().max(1) as f64)
    }

    /// Fraction of samples whose arg-max logit is the label; ties go to the lowest index.
    pub fn accuracy(&self, params: &[f64], data: &Dataset) -> Result<f64> {
        let mut correct = 0usize;
        for (x, &y) in data.inputs.iter().zip(&data.labels) {
            let cache = self.forward(params, x)?;
            if argmax(cache.logits()) == y {
                correct += 1;
            }
        }
        Ok(correct as f64 / data.len().max(1) as f64)
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in x.iter().enumerate() {
        if *v > x[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobConfig {
    pub classes: usize,
    pub dim: usize,
    pub train_size: usize,
    pub test_size: usize,
    /// Cluster centers are drawn uniformly from `[-center_range, center_range]^dim`.
    pub center_range: f64,
    /// Isotropic standard deviation of each cluster.
    pub spread: f64,
}

impl Default for BlobConfig {
    fn default() -> Self {
        Self {
            classes: 3,
            dim: 2,
            train_size: 3000,
            test_size: 1000,
            center_range: 0.5,
            spread: 0.15,
        }
    }
}

/// Train and test splits drawn from the same clusters.
#[derive(Debug, Clone, PartialEq)]
pub struct BlobDataset {
    pub centers: Vec<Vec<f64>>,
    pub train: Dataset,
    pub test: Dataset,
}

impl BlobDataset {
    pub fn generate(config: &BlobConfig, seed: u64) -> Result<Self> {
        if config.classes < 2 || config.dim == 0 || config.train_size == 0 || config.test_size == 0 {
            return Err(Error::config("blobs need >= 2 classes, dim >= 1 and nonempty splits"));
        }
        if !(config.spread > 0.0 && config.center_range > 0.0) {
            return Err(Error::config("blob spread and center_range must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers: Vec<Vec<f64>> = (0..config.classes)
            .map(|_| (0..config.dim).map(|_| rng.random_range(-config.center_range..config.center_range)).collect())
            .collect();
        let noise = Normal::new(0.0, config.spread).expect("positive spread");
        let draw = |n: usize, rng: &mut ChaCha8Rng| {
            let mut data = Dataset::default();
            for i in 0..n {
                let label = i % config.classes;
                data.inputs.push(centers[label].iter().map(|c| c + noise.sample(rng)).collect());
                data.labels.push(label);
            }
            data
        };
        let train = draw(config.train_size, &mut rng);
        let test = draw(config.test_size, &mut rng);
        Ok(Self { centers, train, test })
    }
}

/// A seeded permutation of `0..n` cut into batches of `batch_size`; the last
/// batch may be smaller. A batch size of 0 or above `n` yields one batch.
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let size = if batch_size == 0 || batch_size > n { n.max(1) } else { batch_size };
    order.chunks(size).map(<[usize]>::to_vec).collect()
}
