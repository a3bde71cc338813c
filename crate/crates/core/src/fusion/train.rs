use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::mlp::{bce_raw, Gradients, MlpModel};
use super::{FeatureVector, ProbVector, TrainConfig};
use crate::error::{Error, Result};
use crate::taxonomy::{ClassWeights, LabelSet};

const FD_STEP: f64 = 1e-5;

/// Hidden width of the late-fusion head for `n` classes.
pub fn late_fusion_hidden_width(n: usize) -> usize {
    (4 * n).max(32)
}

fn check_aligned(inputs: usize, labels: usize) -> Result<()> {
    if inputs == 0 {
        return Err(Error::EmptyInput("training set"));
    }
    if inputs != labels {
        return Err(Error::LengthMismatch {
            what: "training labels",
            expected: inputs,
            found: labels,
        });
    }
    Ok(())
}

fn check_widths<'a>(rows: impl Iterator<Item = &'a [f64]>, what: &'static str) -> Result<usize> {
    let mut width = None;
    for r in rows {
        match width {
            None => width = Some(r.len()),
            Some(w) if w != r.len() => {
                return Err(Error::LengthMismatch {
                    what,
                    expected: w,
                    found: r.len(),
                })
            }
            _ => {}
        }
    }
    width.ok_or(Error::EmptyInput(what))
}

/// Mini-batch gradient descent on the weighted BCE.
///
/// Deterministic in `cfg.seed`: the same generator initializes the weights
/// and then produces one shuffle per epoch; gradients are summed in sample
/// order within each batch.
fn fit(rows: &[&[f64]], labels: &[LabelSet], w: &ClassWeights, cfg: &TrainConfig) -> Result<MlpModel> {
    cfg.validate()?;
    check_aligned(rows.len(), labels.len())?;
    let d_in = check_widths(rows.iter().copied(), "feature vector")?;
    let n = labels[0].len();
    if n == 0 {
        return Err(Error::EmptyInput("label set"));
    }
    if let Some(l) = labels.iter().find(|l| l.len() != n) {
        return Err(Error::LengthMismatch {
            what: "label set",
            expected: n,
            found: l.len(),
        });
    }
    if w.len() != n {
        return Err(Error::LengthMismatch {
            what: "class weights",
            expected: n,
            found: w.len(),
        });
    }
    let uniform = ClassWeights::uniform(n);
    let weights = if cfg.weighted { w.as_slice() } else { uniform.as_slice() };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = MlpModel::init(&[d_in, cfg.hidden_width, n], &mut rng)?;
    let mut grads = Gradients::zeros_like(&model);
    let mut acts = Vec::new();
    let mut order: Vec<usize> = (0..rows.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            grads.reset();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                model.accumulate_gradient(rows[i], labels[i].bits(), weights, scale, &mut acts, &mut grads);
            }
            model.apply_step(&grads, cfg.learning_rate);
        }
        if !model.is_finite() {
            return Err(Error::NonFinite("model parameters after training"));
        }
    }
    Ok(model)
}

/// Trains a `[d_in, hidden_width, N]` sigmoid head.
///
/// With `cfg.weighted == false` the weights in `w` are ignored.
pub fn train_classifier(
    features: &[FeatureVector],
    labels: &[LabelSet],
    w: &ClassWeights,
    cfg: &TrainConfig,
) -> Result<MlpModel> {
    let rows: Vec<&[f64]> = features.iter().map(FeatureVector::as_slice).collect();
    fit(&rows, labels, w, cfg)
}

fn concat_features(a: &[FeatureVector], b: &[FeatureVector]) -> Result<Vec<FeatureVector>> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            what: "modality features",
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(a.iter().zip(b).map(|(x, y)| FeatureVector::concat(x, y)).collect())
}

/// Single head on `[f_a ‖ f_b]`, same hidden width as a single-modality head.
pub fn early_fuse_train(
    features_a: &[FeatureVector],
    features_b: &[FeatureVector],
    labels: &[LabelSet],
    w: &ClassWeights,
    cfg: &TrainConfig,
) -> Result<MlpModel> {
    let joint = concat_features(features_a, features_b)?;
    train_classifier(&joint, labels, w, cfg)
}

pub fn early_fuse_predict(m: &MlpModel, f_a: &FeatureVector, f_b: &FeatureVector) -> Result<ProbVector> {
    ProbVector::new(m.forward(FeatureVector::concat(f_a, f_b).as_slice())?)
}

fn concat_probs(a: &ProbVector, b: &ProbVector) -> Vec<f64> {
    a.as_slice().iter().chain(b.as_slice()).copied().collect()
}

/// Second-stage head on concatenated probability vectors: `[2N, hidden, N]`.
pub fn late_fuse_train(
    probs_a: &[ProbVector],
    probs_b: &[ProbVector],
    labels: &[LabelSet],
    w: &ClassWeights,
    cfg: &TrainConfig,
) -> Result<MlpModel> {
    if probs_a.len() != probs_b.len() {
        return Err(Error::LengthMismatch {
            what: "modality probabilities",
            expected: probs_a.len(),
            found: probs_b.len(),
        });
    }
    check_aligned(probs_a.len(), labels.len())?;
    let n = labels[0].len();
    for p in probs_a.iter().chain(probs_b) {
        if p.len() != n {
            return Err(Error::LengthMismatch {
                what: "probability vector",
                expected: n,
                found: p.len(),
            });
        }
    }
    let joint: Vec<Vec<f64>> = probs_a.iter().zip(probs_b).map(|(a, b)| concat_probs(a, b)).collect();
    let rows: Vec<&[f64]> = joint.iter().map(Vec::as_slice).collect();
    fit(&rows, labels, w, cfg)
}

pub fn late_fuse_predict(m: &MlpModel, p_a: &ProbVector, p_b: &ProbVector) -> Result<ProbVector> {
    if m.input_dim() != p_a.len() + p_b.len() || p_a.len() != p_b.len() {
        return Err(Error::LengthMismatch {
            what: "late fusion input",
            expected: m.input_dim(),
            found: p_a.len() + p_b.len(),
        });
    }
    ProbVector::new(m.forward(&concat_probs(p_a, p_b))?)
}

fn batch_loss(m: &MlpModel, xs: &[FeatureVector], ys: &[LabelSet], w: &[f64]) -> f64 {
    let total: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| bce_raw(&m.forward(x.as_slice()).expect("checked"), y.bits(), w))
        .sum();
    total / xs.len() as f64
}

/// Analytic gradients of the batch-mean weighted BCE against central
/// differences with step 1e-5.
///
/// Returns `max_k |g_a − g_n| / max(|g_a|, |g_n|, 1e-8)`.
pub fn gradient_check(
    m: &MlpModel,
    features: &[FeatureVector],
    labels: &[LabelSet],
    w: &ClassWeights,
) -> Result<f64> {
    check_aligned(features.len(), labels.len())?;
    if let Some(f) = features.iter().find(|f| f.len() != m.input_dim()) {
        return Err(Error::LengthMismatch {
            what: "model input",
            expected: m.input_dim(),
            found: f.len(),
        });
    }
    if let Some(l) = labels.iter().find(|l| l.len() != m.output_dim()) {
        return Err(Error::LengthMismatch {
            what: "label set",
            expected: m.output_dim(),
            found: l.len(),
        });
    }
    if w.len() != m.output_dim() {
        return Err(Error::LengthMismatch {
            what: "class weights",
            expected: m.output_dim(),
            found: w.len(),
        });
    }

    let mut grads = Gradients::zeros_like(m);
    let mut acts = Vec::new();
    let scale = 1.0 / features.len() as f64;
    for (x, y) in features.iter().zip(labels) {
        m.accumulate_gradient(x.as_slice(), y.bits(), w.as_slice(), scale, &mut acts, &mut grads);
    }
    let analytic = grads.flatten();

    let mut probe = m.clone();
    let mut worst: f64 = 0.0;
    for (k, &ga) in analytic.iter().enumerate() {
        let orig = *probe.param_mut(k);
        *probe.param_mut(k) = orig + FD_STEP;
        let up = batch_loss(&probe, features, labels, w.as_slice());
        *probe.param_mut(k) = orig - FD_STEP;
        let down = batch_loss(&probe, features, labels, w.as_slice());
        *probe.param_mut(k) = orig;
        let gn = (up - down) / (2.0 * FD_STEP);
        let err = (ga - gn).abs() / ga.abs().max(gn.abs()).max(1e-8);
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::{apply_thresholds, predict_probs, ThresholdVector};
    use crate::metrics::{aggregate, count_stats, per_class_f_beta, Averaging};
    use rand::Rng;

    fn random_batch(rng: &mut ChaCha8Rng, b: usize, d: usize, n: usize) -> (Vec<FeatureVector>, Vec<LabelSet>) {
        let xs = (0..b)
            .map(|_| FeatureVector::new((0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap())
            .collect();
        let ys = (0..b)
            .map(|_| LabelSet::from_bits((0..n).map(|_| rng.random_bool(0.4)).collect()))
            .collect();
        (xs, ys)
    }

    /// Two classes, each determined by the sign of one input coordinate.
    fn separable_set(seed: u64) -> (Vec<FeatureVector>, Vec<LabelSet>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for _ in 0..200 {
            let a: f64 = rng.random_range(-1.0..1.0);
            let b: f64 = rng.random_range(-1.0..1.0);
            xs.push(FeatureVector::new(vec![a, b]).unwrap());
            ys.push(LabelSet::from_bits(vec![a > 0.0, b > 0.0]));
        }
        (xs, ys)
    }

    fn f2_macro(m: &MlpModel, xs: &[FeatureVector], ys: &[LabelSet]) -> f64 {
        let t = ThresholdVector::uniform(m.output_dim(), 0.5).unwrap();
        let preds: Vec<LabelSet> = xs
            .iter()
            .map(|x| apply_thresholds(&predict_probs(m, x).unwrap(), &t).unwrap())
            .collect();
        let c = count_stats(&preds, ys).unwrap();
        aggregate(&per_class_f_beta(&c, 2.0), &c, 2.0, Averaging::Macro).unwrap()
    }

    #[test]
    fn separable_two_class_set_is_learned() {
        let (xs, ys) = separable_set(0);
        let cfg = TrainConfig {
            learning_rate: 0.1,
            epochs: 200,
            seed: 0,
            ..TrainConfig::default()
        };
        let m = train_classifier(&xs, &ys, &ClassWeights::uniform(2), &cfg).unwrap();
        let f2 = f2_macro(&m, &xs, &ys);
        assert!(f2 >= 0.95, "F2 macro {f2}");
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let (xs, ys) = separable_set(1);
        let cfg = TrainConfig { epochs: 0, seed: 5, ..TrainConfig::default() };
        let m = train_classifier(&xs, &ys, &ClassWeights::uniform(2), &cfg).unwrap();
        let init = MlpModel::init(&[2, cfg.hidden_width, 2], &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(m, init);
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let (xs, ys) = separable_set(2);
        let cfg = TrainConfig { epochs: 5, seed: 11, ..TrainConfig::default() };
        let w = ClassWeights::new(vec![0.5, 1.5]).unwrap();
        let a = train_classifier(&xs, &ys, &w, &cfg).unwrap();
        let b = train_classifier(&xs, &ys, &w, &cfg).unwrap();
        let bits = |m: &MlpModel| -> Vec<u64> {
            m.weights().iter().chain(m.biases()).flatten().map(|v| v.to_bits()).collect()
        };
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn training_errors() {
        let cfg = TrainConfig::default();
        assert!(train_classifier(&[], &[], &ClassWeights::uniform(2), &cfg).is_err());
        let (xs, ys) = separable_set(3);
        assert!(train_classifier(&xs, &ys[..10], &ClassWeights::uniform(2), &cfg).is_err());
        assert!(train_classifier(&xs, &ys, &ClassWeights::uniform(3), &cfg).is_err());
        let mut ragged = xs.clone();
        ragged[4] = FeatureVector::new(vec![1.0]).unwrap();
        assert!(train_classifier(&ragged, &ys, &ClassWeights::uniform(2), &cfg).is_err());
    }

    #[test]
    fn early_fusion_input_dimension() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (a, ys) = random_batch(&mut rng, 20, 6, 3);
        let (b, _) = random_batch(&mut rng, 20, 9, 3);
        let cfg = TrainConfig { epochs: 2, ..TrainConfig::default() };
        let m = early_fuse_train(&a, &b, &ys, &ClassWeights::uniform(3), &cfg).unwrap();
        assert_eq!(m.layer_sizes(), &[15, cfg.hidden_width, 3]);
        assert_eq!(early_fuse_predict(&m, &a[0], &b[0]).unwrap().len(), 3);
        let m2 = early_fuse_train(&a, &b, &ys, &ClassWeights::uniform(3), &cfg).unwrap();
        assert_eq!(m, m2);
        assert!(early_fuse_train(&a, &b[..5], &ys, &ClassWeights::uniform(3), &cfg).is_err());
    }

    #[test]
    fn late_fusion_recovers_one_hot_truth() {
        let n = 19;
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let ys: Vec<LabelSet> = (0..300)
            .map(|_| LabelSet::from_bits((0..n).map(|_| rng.random_bool(0.3)).collect()))
            .collect();
        let probs: Vec<ProbVector> = ys
            .iter()
            .map(|y| ProbVector::new(y.bits().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()).unwrap())
            .collect();
        let cfg = TrainConfig {
            hidden_width: late_fusion_hidden_width(n),
            epochs: 60,
            ..TrainConfig::default()
        };
        let m = late_fuse_train(&probs, &probs, &ys, &ClassWeights::uniform(n), &cfg).unwrap();
        assert_eq!(m.input_dim(), 38);
        let t = ThresholdVector::uniform(n, 0.5).unwrap();
        let preds: Vec<LabelSet> = probs
            .iter()
            .map(|p| apply_thresholds(&late_fuse_predict(&m, p, p).unwrap(), &t).unwrap())
            .collect();
        let c = count_stats(&preds, &ys).unwrap();
        let f2 = aggregate(&per_class_f_beta(&c, 2.0), &c, 2.0, Averaging::Macro).unwrap();
        assert!(f2 >= 0.99, "F2 macro {f2}");
        let again = late_fuse_train(&probs, &probs, &ys, &ClassWeights::uniform(n), &cfg).unwrap();
        assert_eq!(m, again);
    }

    #[test]
    fn late_fusion_predict_shapes() {
        let m = MlpModel::constant(&[6, 32, 3], 0.0).unwrap();
        let p = ProbVector::new(vec![0.1, 0.7, 0.9]).unwrap();
        let out = late_fuse_predict(&m, &p, &p).unwrap();
        assert_eq!(out.as_slice(), &[0.5, 0.5, 0.5]);
        let m = MlpModel::constant(&[6, 32, 3], -1.5).unwrap();
        let out = late_fuse_predict(&m, &p, &p).unwrap();
        assert!(out.as_slice().iter().all(|&v| v == crate::fusion::sigmoid(-1.5)));
        let short = ProbVector::new(vec![0.2]).unwrap();
        assert!(late_fuse_predict(&m, &short, &p).is_err());
    }

    #[test]
    fn gradient_check_fresh_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = MlpModel::init(&[4, 8, 3], &mut rng).unwrap();
        let (xs, ys) = random_batch(&mut rng, 5, 4, 3);
        let w = ClassWeights::new(vec![0.7, 1.1, 1.2]).unwrap();
        let err = gradient_check(&m, &xs, &ys, &w).unwrap();
        assert!(err < 1e-4, "relative error {err}");

        // duplicating the batch leaves the mean loss and its gradient unchanged
        let xs2: Vec<_> = xs.iter().chain(&xs).cloned().collect();
        let ys2: Vec<_> = ys.iter().chain(&ys).cloned().collect();
        let err2 = gradient_check(&m, &xs2, &ys2, &w).unwrap();
        assert!((err - err2).abs() < 1e-6);
    }

    #[test]
    fn zero_network_bias_gradient_closed_form() {
        // all-zero weights and inputs: p_j = sigmoid(b_j), so
        // dL/db_j = mean_i w_j (p_j - y_ij) / N
        let b = 0.3;
        let m = MlpModel::constant(&[3, 4, 2], b).unwrap();
        let xs = vec![FeatureVector::new(vec![0.0; 3]).unwrap(); 2];
        let ys = vec![LabelSet::from_bits(vec![true, false]), LabelSet::from_bits(vec![true, true])];
        let w = ClassWeights::new(vec![2.0, 0.5]).unwrap();
        let mut grads = Gradients::zeros_like(&m);
        let mut acts = Vec::new();
        for (x, y) in xs.iter().zip(&ys) {
            m.accumulate_gradient(x.as_slice(), y.bits(), w.as_slice(), 0.5, &mut acts, &mut grads);
        }
        let p = crate::fusion::sigmoid(b);
        let expect = [2.0 * (p - 1.0) / 2.0, 0.5 * ((p - 0.0) + (p - 1.0)) / 2.0 / 2.0];
        assert!((grads.biases[1][0] - expect[0]).abs() < 1e-15);
        assert!((grads.biases[1][1] - expect[1]).abs() < 1e-15);
        assert!(gradient_check(&m, &xs, &ys, &w).unwrap() < 1e-4);
    }
}
