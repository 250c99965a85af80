use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_dim, Error, Result};
use crate::util::{stream_rng, Stream};

/// Clamp applied to probabilities before any logarithm.
pub const PROB_EPS: f64 = 1e-7;

pub const DEFAULT_HIDDEN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One-hidden-layer perceptron, `d -> h (ReLU, optional dropout) -> C
/// (independent sigmoids)`. Weight matrices are row-major with one row per
/// output unit.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_classes: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub dropout_rate: f64,
}

/// Per-class probabilities, each clamped to `[PROB_EPS, 1 - PROB_EPS]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probs: Vec<f64>,
}

impl Prediction {
    pub fn new(probs: Vec<f64>) -> Self {
        Self {
            probs: probs.into_iter().map(clamp_prob).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }
}

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Index of the largest entry; ties go to the lower index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Everything backpropagation needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub pre_hidden: Vec<f64>,
    /// Post-activation, post-dropout hidden values.
    pub hidden: Vec<f64>,
    pub mask: Option<Vec<f64>>,
    pub logits: Vec<f64>,
    /// Unclamped sigmoid outputs.
    pub raw_probs: Vec<f64>,
}

impl ForwardCache {
    pub fn prediction(&self) -> Prediction {
        Prediction::new(self.raw_probs.clone())
    }
}

impl MlpModel {
    pub fn zeros(input_dim: usize, hidden_dim: usize, num_classes: usize) -> Self {
        Self {
            input_dim,
            hidden_dim,
            num_classes,
            w1: vec![0.0; hidden_dim * input_dim],
            b1: vec![0.0; hidden_dim],
            w2: vec![0.0; num_classes * hidden_dim],
            b2: vec![0.0; num_classes],
            dropout_rate: 0.0,
        }
    }

    /// He-normal hidden weights, Glorot-normal output weights, zero biases.
    pub fn init(input_dim: usize, hidden_dim: usize, num_classes: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 || num_classes == 0 {
            return Err(Error::invalid("layer sizes must be positive"));
        }
        let mut rng = stream_rng(seed, Stream::Init);
        let mut m = Self::zeros(input_dim, hidden_dim, num_classes);
        let s1 = (2.0 / input_dim as f64).sqrt();
        let s2 = (2.0 / (hidden_dim + num_classes) as f64).sqrt();
        for w in &mut m.w1 {
            let z: f64 = StandardNormal.sample(&mut rng);
            *w = s1 * z;
        }
        for w in &mut m.w2 {
            let z: f64 = StandardNormal.sample(&mut rng);
            *w = s2 * z;
        }
        Ok(m)
    }

    pub fn with_dropout(mut self, rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid(format!("dropout rate must lie in [0, 1), got {rate}")));
        }
        self.dropout_rate = rate;
        Ok(self)
    }

    pub fn layer_sizes(&self) -> [usize; 3] {
        [self.input_dim, self.hidden_dim, self.num_classes]
    }

    pub fn num_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    /// Parameter tensors in a fixed order: hidden weight, hidden bias,
    /// output weight, output bias.
    pub fn params(&self) -> [&Vec<f64>; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn params_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    /// Inverted-dropout scale factors: 0 for dropped units, `1/(1-p)` for kept.
    pub fn sample_dropout_mask<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let keep = 1.0 - self.dropout_rate;
        (0..self.hidden_dim)
            .map(|_| if rng.random::<f64>() < self.dropout_rate { 0.0 } else { 1.0 / keep })
            .collect()
    }

    pub fn forward_cached(&self, x: &[f64], mask: Option<&[f64]>) -> Result<ForwardCache> {
        check_dim(self.input_dim, x.len())?;
        if let Some(m) = mask {
            check_dim(self.hidden_dim, m.len())?;
        }
        let d = self.input_dim;
        let h = self.hidden_dim;
        let mut pre_hidden = self.b1.clone();
        for (i, acc) in pre_hidden.iter_mut().enumerate() {
            let row = &self.w1[i * d..(i + 1) * d];
            *acc += row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
        let mut hidden: Vec<f64> = pre_hidden.iter().map(|a| a.max(0.0)).collect();
        if let Some(m) = mask {
            hidden.iter_mut().zip(m).for_each(|(v, s)| *v *= s);
        }
        let mut logits = self.b2.clone();
        for (j, acc) in logits.iter_mut().enumerate() {
            let row = &self.w2[j * h..(j + 1) * h];
            *acc += row.iter().zip(&hidden).map(|(w, v)| w * v).sum::<f64>();
        }
        let raw_probs = logits.iter().map(|z| sigmoid(*z)).collect();
        Ok(ForwardCache {
            pre_hidden,
            hidden,
            mask: mask.map(<[f64]>::to_vec),
            logits,
            raw_probs,
        })
    }

    /// Per-class probabilities. In train mode with a positive dropout rate
    /// and an RNG, hidden units are dropped; otherwise the pass is
    /// deterministic.
    pub fn forward<R: Rng + ?Sized>(&self, x: &[f64], mode: Mode, rng: Option<&mut R>) -> Result<Prediction> {
        let mask = match (mode, rng) {
            (Mode::Train, Some(rng)) if self.dropout_rate > 0.0 => Some(self.sample_dropout_mask(rng)),
            _ => None,
        };
        Ok(self.forward_cached(x, mask.as_deref())?.prediction())
    }

    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        Ok(self.forward_cached(x, None)?.prediction())
    }

    /// Eval-mode hidden representation (the input to the output layer).
    pub fn hidden_features(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(x, None)?.hidden)
    }
}

/// Anything that maps an input to per-class probabilities in eval mode.
pub trait Classifier {
    fn class_probs(&self, x: &[f64]) -> Result<Vec<f64>>;
}

impl Classifier for MlpModel {
    fn class_probs(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.predict(x)?.probs)
    }
}
