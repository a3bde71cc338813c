use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{FeatureVector, ProbVector};
use crate::error::{Error, Result};
use crate::taxonomy::{ClassWeights, LabelSet};

/// Probability clip applied inside the loss.
pub const PROB_CLIP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
}

/// Fully connected network: rectifier hidden layers, sigmoid output layer.
///
/// `weights[l]` is row-major `[out][in]` for the layer mapping
/// `layer_sizes[l]` to `layer_sizes[l + 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelFile", into = "ModelFile")]
pub struct MlpModel {
    layer_sizes: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

/// On-disk model layout.
#[derive(Serialize, Deserialize)]
struct ModelFile {
    layer_sizes: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    hidden_activation: Activation,
    output_activation: Activation,
}

impl TryFrom<ModelFile> for MlpModel {
    type Error = Error;

    fn try_from(f: ModelFile) -> Result<Self> {
        if f.hidden_activation != Activation::Relu || f.output_activation != Activation::Sigmoid {
            return Err(Error::Format(
                "only relu hidden / sigmoid output models are supported".into(),
            ));
        }
        MlpModel::from_parts(f.layer_sizes, f.weights, f.biases)
    }
}

impl From<MlpModel> for ModelFile {
    fn from(m: MlpModel) -> Self {
        ModelFile {
            layer_sizes: m.layer_sizes,
            weights: m.weights,
            biases: m.biases,
            hidden_activation: Activation::Relu,
            output_activation: Activation::Sigmoid,
        }
    }
}

impl MlpModel {
    pub fn from_parts(
        layer_sizes: Vec<usize>,
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::InvalidParameter(
                "an MLP needs at least two non-empty layers".into(),
            ));
        }
        let layers = layer_sizes.len() - 1;
        if weights.len() != layers || biases.len() != layers {
            return Err(Error::LengthMismatch {
                what: "MLP layers",
                expected: layers,
                found: weights.len().min(biases.len()),
            });
        }
        for l in 0..layers {
            let (i, o) = (layer_sizes[l], layer_sizes[l + 1]);
            if weights[l].len() != i * o {
                return Err(Error::LengthMismatch {
                    what: "weight matrix",
                    expected: i * o,
                    found: weights[l].len(),
                });
            }
            if biases[l].len() != o {
                return Err(Error::LengthMismatch {
                    what: "bias vector",
                    expected: o,
                    found: biases[l].len(),
                });
            }
        }
        if weights.iter().chain(&biases).flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model parameters"));
        }
        Ok(MlpModel {
            layer_sizes,
            weights,
            biases,
        })
    }

    /// Glorot-uniform weights in ±sqrt(6 / (fan_in + fan_out)), zero biases.
    ///
    /// Weights are drawn layer by layer in row-major order.
    pub fn init<R: Rng>(layer_sizes: &[usize], rng: &mut R) -> Result<Self> {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            weights.push(
                (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-limit..limit))
                    .collect(),
            );
            biases.push(vec![0.0; fan_out]);
        }
        Self::from_parts(layer_sizes.to_vec(), weights, biases)
    }

    /// Every weight set to zero and every output bias to `output_bias`.
    pub fn constant(layer_sizes: &[usize], output_bias: f64) -> Result<Self> {
        let layers = layer_sizes.len().saturating_sub(1);
        let weights = layer_sizes.windows(2).map(|w| vec![0.0; w[0] * w[1]]).collect();
        let biases = layer_sizes
            .windows(2)
            .enumerate()
            .map(|(l, w)| {
                let b = if l + 1 == layers { output_bias } else { 0.0 };
                vec![b; w[1]]
            })
            .collect();
        Self::from_parts(layer_sizes.to_vec(), weights, biases)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("validated")
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().chain(&self.biases).map(Vec::len).sum()
    }

    /// Flat view of parameter `k` in (weights of each layer, then biases of
    /// each layer) order.
    pub(crate) fn param_mut(&mut self, mut k: usize) -> &mut f64 {
        for w in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            if k < w.len() {
                return &mut w[k];
            }
            k -= w.len();
        }
        panic!("parameter index out of range");
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.biases).flatten().all(|v| v.is_finite())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::LengthMismatch {
                what: "model input",
                expected: self.input_dim(),
                found: x.len(),
            });
        }
        Ok(())
    }

    /// Forward pass keeping every layer's activation; `acts[0]` is the input.
    pub(crate) fn forward_trace(&self, x: &[f64], acts: &mut Vec<Vec<f64>>) {
        acts.clear();
        acts.push(x.to_vec());
        let layers = self.weights.len();
        for l in 0..layers {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let input = &acts[l];
            let w = &self.weights[l];
            let mut out = self.biases[l].clone();
            for (o, z) in out.iter_mut().enumerate() {
                let row = &w[o * n_in..(o + 1) * n_in];
                *z += row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
            }
            if l + 1 == layers {
                out.iter_mut().for_each(|z| *z = sigmoid(*z));
            } else {
                out.iter_mut().for_each(|z| *z = z.max(0.0));
            }
            debug_assert_eq!(out.len(), n_out);
            acts.push(out);
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut acts = Vec::with_capacity(self.layer_sizes.len());
        self.forward_trace(x, &mut acts);
        Ok(acts.pop().expect("output layer"))
    }

    /// Accumulates `scale * dL/dθ` of the weighted BCE for one sample into `grads`.
    ///
    /// Uses the sigmoid/cross-entropy shortcut `dL/dz_j = w_j (p_j − y_j) / N`,
    /// which is exact wherever the probability clip is inactive.
    pub(crate) fn accumulate_gradient(
        &self,
        x: &[f64],
        y: &[bool],
        w: &[f64],
        scale: f64,
        acts: &mut Vec<Vec<f64>>,
        grads: &mut Gradients,
    ) {
        self.forward_trace(x, acts);
        let layers = self.weights.len();
        let n = self.output_dim() as f64;
        let mut delta: Vec<f64> = acts[layers]
            .iter()
            .zip(y)
            .zip(w)
            .map(|((&p, &t), &wj)| scale * wj * (p - if t { 1.0 } else { 0.0 }) / n)
            .collect();
        for l in (0..layers).rev() {
            let n_in = self.layer_sizes[l];
            let input = &acts[l];
            let gw = &mut grads.weights[l];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                grads.biases[l][o] += d;
                let row = &mut gw[o * n_in..(o + 1) * n_in];
                for (g, &a) in row.iter_mut().zip(input) {
                    *g += d * a;
                }
            }
            if l > 0 {
                let wl = &self.weights[l];
                let mut prev = vec![0.0; n_in];
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let row = &wl[o * n_in..(o + 1) * n_in];
                    for (p, &wv) in prev.iter_mut().zip(row) {
                        *p += d * wv;
                    }
                }
                // rectifier derivative: active units only
                for (p, &a) in prev.iter_mut().zip(input) {
                    if a <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
    }

    pub(crate) fn apply_step(&mut self, grads: &Gradients, lr: f64) {
        for (p, g) in self.weights.iter_mut().zip(&grads.weights) {
            p.iter_mut().zip(g).for_each(|(a, b)| *a -= lr * b);
        }
        for (p, g) in self.biases.iter_mut().zip(&grads.biases) {
            p.iter_mut().zip(g).for_each(|(a, b)| *a -= lr * b);
        }
    }
}

/// Parameter gradients shaped like an [`MlpModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(m: &MlpModel) -> Self {
        Gradients {
            weights: m.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: m.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn reset(&mut self) {
        self.weights.iter_mut().chain(self.biases.iter_mut()).for_each(|v| v.fill(0.0));
    }

    /// Flattened in the same order as [`MlpModel::param_mut`].
    pub fn flatten(&self) -> Vec<f64> {
        self.weights.iter().chain(&self.biases).flatten().copied().collect()
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `−(1/N) Σ_j w_j [y_j ln p_j + (1 − y_j) ln(1 − p_j)]` with `p` clipped to
/// `[1e-7, 1 − 1e-7]`.
pub fn weighted_bce_loss(p: &ProbVector, y: &LabelSet, w: &ClassWeights) -> Result<f64> {
    if p.len() != y.len() || p.len() != w.len() {
        return Err(Error::LengthMismatch {
            what: "loss inputs",
            expected: p.len(),
            found: if p.len() != y.len() { y.len() } else { w.len() },
        });
    }
    Ok(bce_raw(p.as_slice(), y.bits(), w.as_slice()))
}

pub(crate) fn bce_raw(p: &[f64], y: &[bool], w: &[f64]) -> f64 {
    let n = p.len() as f64;
    let total: f64 = p
        .iter()
        .zip(y)
        .zip(w)
        .map(|((&p, &t), &wj)| {
            let p = p.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
            -wj * if t { p.ln() } else { (1.0 - p).ln() }
        })
        .sum();
    total / n
}

/// Forward pass returning per-class probabilities.
pub fn predict_probs(m: &MlpModel, f: &FeatureVector) -> Result<ProbVector> {
    ProbVector::new(m.forward(f.as_slice())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bce_examples() {
        let p = ProbVector::new(vec![0.5]).unwrap();
        let y = LabelSet::from_bits(vec![true]);
        let l = weighted_bce_loss(&p, &y, &ClassWeights::uniform(1)).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);

        let p = ProbVector::new(vec![1.0, 0.0, 1.0]).unwrap();
        let y = LabelSet::from_bits(vec![true, false, true]);
        let l = weighted_bce_loss(&p, &y, &ClassWeights::uniform(3)).unwrap();
        assert!(l < 1e-5);

        let p = ProbVector::new(vec![0.3, 0.8]).unwrap();
        let y = LabelSet::from_bits(vec![true, false]);
        let w1 = ClassWeights::new(vec![0.5, 1.5]).unwrap();
        let w2 = ClassWeights::new(vec![1.0, 3.0]).unwrap();
        let (a, b) = (
            weighted_bce_loss(&p, &y, &w1).unwrap(),
            weighted_bce_loss(&p, &y, &w2).unwrap(),
        );
        assert!((b - 2.0 * a).abs() < 1e-12);

        assert!(weighted_bce_loss(&p, &LabelSet::empty(3), &w1).is_err());
    }

    #[test]
    fn constant_network_outputs() {
        let m = MlpModel::constant(&[4, 6, 3], 0.7).unwrap();
        let f = FeatureVector::new(vec![1.0, -2.0, 3.0, 0.5]).unwrap();
        let p = predict_probs(&m, &f).unwrap();
        assert_eq!(p.len(), 3);
        assert!(p.as_slice().iter().all(|&v| (v - sigmoid(0.7)).abs() < 1e-15));

        let m = MlpModel::constant(&[4, 6, 3], 0.0).unwrap();
        assert!(predict_probs(&m, &f).unwrap().as_slice().iter().all(|&v| v == 0.5));

        let bad = FeatureVector::new(vec![1.0]).unwrap();
        assert!(predict_probs(&m, &bad).is_err());
    }

    #[test]
    fn init_is_bounded_and_seeded() {
        let mut r1 = ChaCha8Rng::seed_from_u64(3);
        let mut r2 = ChaCha8Rng::seed_from_u64(3);
        let a = MlpModel::init(&[5, 7, 2], &mut r1).unwrap();
        let b = MlpModel::init(&[5, 7, 2], &mut r2).unwrap();
        assert_eq!(a, b);
        let limit = (6.0f64 / 12.0).sqrt();
        assert!(a.weights()[0].iter().all(|w| w.abs() <= limit));
        assert_eq!(a.param_count(), 5 * 7 + 7 + 7 * 2 + 2);
    }

    #[test]
    fn model_json_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = MlpModel::init(&[3, 4, 2], &mut rng).unwrap();
        let text = m.to_json().unwrap();
        assert!(text.contains("\"hidden_activation\":\"relu\""));
        assert_eq!(MlpModel::from_json(&text).unwrap(), m);
        let broken = text.replace("\"layer_sizes\":[3,4,2]", "\"layer_sizes\":[3,5,2]");
        assert!(MlpModel::from_json(&broken).is_err());
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(800.0) == 1.0 && sigmoid(-800.0) >= 0.0);
        assert!((sigmoid(2.0) + sigmoid(-2.0) - 1.0).abs() < 1e-15);
    }
}
