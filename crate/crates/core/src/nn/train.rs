//! Minibatch SGD with momentum and cross-entropy loss.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::layer::Layer;
use super::model::{argmax, Model};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Sample {
    pub image: Tensor,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Cosine decay of the learning rate to zero over all epochs.
    pub cosine_schedule: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 1e-4,
            cosine_schedule: true,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub learning_rate: f64,
    pub mean_loss: f64,
    pub train_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
}

pub fn accuracy(model: &Model, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("accuracy of an empty set"));
    }
    let correct: Result<Vec<bool>> = samples
        .par_iter()
        .map(|s| Ok(argmax(&model.logits(&s.image)?) == s.label))
        .collect();
    Ok(correct?.into_iter().filter(|c| *c).count() as f64 / samples.len() as f64)
}

/// Sets batch-norm running statistics from the activations the network
/// produces on `samples`, layer by layer, so each layer is calibrated on
/// the already-calibrated output of the ones before it.
pub fn calibrate_batchnorm(model: &mut Model, samples: &[Tensor]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::invalid("batch-norm calibration needs samples"));
    }
    let mut acts: Vec<Tensor> = samples.to_vec();
    let layers = model.layers_mut();
    for layer in layers.iter_mut() {
        if let Layer::BatchNorm(bn) = layer {
            let c = bn.gamma.len();
            let mut sum = vec![0.0; c];
            let mut sq = vec![0.0; c];
            let mut count = 0usize;
            for a in &acts {
                let per = a.len() / c;
                for (i, v) in a.data().iter().enumerate() {
                    sum[i / per] += v;
                    sq[i / per] += v * v;
                }
                count += per;
            }
            for ch in 0..c {
                let mean = sum[ch] / count as f64;
                bn.running_mean[ch] = mean;
                bn.running_var[ch] = (sq[ch] / count as f64 - mean * mean).max(1e-6);
            }
        }
        let l = &*layer;
        acts = acts.par_iter().map(|a| l.forward(a)).collect();
    }
    Ok(())
}

pub fn train(
    model: &Model,
    train_set: &[Sample],
    val_set: &[Sample],
    test_set: &[Sample],
    config: &TrainConfig,
) -> Result<(Model, TrainReport)> {
    let classes = model.num_classes();
    let mut seen = vec![false; classes];
    for s in train_set {
        if s.label >= classes {
            return Err(Error::invalid(format!("label {} out of range", s.label)));
        }
        seen[s.label] = true;
    }
    if seen.iter().filter(|s| **s).count() < 2 {
        return Err(Error::invalid("training set must contain at least two classes"));
    }
    if config.batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }

    let mut model = model.clone();
    let mut velocity: Vec<Vec<Vec<f64>>> = model
        .layers()
        .iter()
        .map(|l| l.params().iter().map(|(p, _)| vec![0.0; p.len()]).collect())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut logs = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let lr = if config.cosine_schedule {
            0.5 * config.learning_rate * (1.0 + (std::f64::consts::PI * epoch as f64 / config.epochs as f64).cos())
        } else {
            config.learning_rate
        };
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (step, batch) in order.chunks(config.batch_size).enumerate() {
            let per_sample: Result<Vec<(f64, bool, Vec<Vec<Vec<f64>>>)>> = batch
                .par_iter()
                .map(|&i| {
                    let s = &train_set[i];
                    let pass = model.forward(&s.image)?;
                    let p = &pass.probabilities;
                    let loss = -p[s.label].ln();
                    let mut grad_logits = p.clone();
                    grad_logits[s.label] -= 1.0;
                    let grads = model.param_gradients(&pass, &grad_logits);
                    Ok((loss, argmax(p) == s.label, grads))
                })
                .collect();
            let per_sample = per_sample?;
            let scale = 1.0 / batch.len() as f64;
            let mut total: Option<Vec<Vec<Vec<f64>>>> = None;
            for (loss, ok, grads) in per_sample {
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch, step, loss });
                }
                loss_sum += loss;
                correct += ok as usize;
                match total.as_mut() {
                    None => total = Some(grads),
                    Some(t) => {
                        for (tl, gl) in t.iter_mut().zip(&grads) {
                            for (tp, gp) in tl.iter_mut().zip(gl) {
                                for (a, b) in tp.iter_mut().zip(gp) {
                                    *a += b;
                                }
                            }
                        }
                    }
                }
            }
            let total = total.expect("non-empty batch");
            for ((layer, vel), grad) in model.layers_mut().iter_mut().zip(&mut velocity).zip(&total) {
                let decay_flags: Vec<bool> = layer.params().iter().map(|(_, d)| *d).collect();
                for (((param, v), g), decay) in layer
                    .params_mut()
                    .into_iter()
                    .zip(vel.iter_mut())
                    .zip(grad)
                    .zip(decay_flags)
                {
                    for ((p, vi), gi) in param.iter_mut().zip(v.iter_mut()).zip(g) {
                        let mut step_grad = gi * scale;
                        if decay {
                            step_grad += config.weight_decay * *p;
                        }
                        *vi = config.momentum * *vi + step_grad;
                        *p -= lr * *vi;
                    }
                }
            }
        }
        let n = train_set.len().max(1) as f64;
        let log = EpochLog {
            epoch,
            learning_rate: lr,
            mean_loss: loss_sum / n,
            train_accuracy: correct as f64 / n,
        };
        log::info!(
            "epoch {epoch}: lr {lr:.4} loss {:.4} train-acc {:.3}",
            log.mean_loss,
            log.train_accuracy
        );
        logs.push(log);
    }

    let report = TrainReport {
        epochs: logs,
        train_accuracy: accuracy(&model, train_set)?,
        val_accuracy: (!val_set.is_empty()).then(|| accuracy(&model, val_set)).transpose()?,
        test_accuracy: (!test_set.is_empty()).then(|| accuracy(&model, test_set)).transpose()?,
    };
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layer::Dense;
    use rand::Rng;

    fn toy_set(n: usize, seed: u64) -> Vec<Sample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let label = i % 2;
                let sign = if label == 0 { 1.0 } else { -1.0 };
                let x = sign * rng.random_range(0.2..1.0);
                let y = rng.random_range(-1.0..1.0);
                Sample { image: Tensor::new(vec![2, 1, 1], vec![x + 0.1 * y, y]).unwrap(), label }
            })
            .collect()
    }

    fn linear_model() -> Model {
        Model::new(
            vec![
                Layer::Flatten,
                Layer::Dense(Dense { in_features: 2, out_features: 2, weight: vec![0.0, 0.1, 0.1, 0.0], bias: vec![0.0, 0.0] }),
            ],
            vec![2, 1, 1],
            2,
        )
        .unwrap()
    }

    #[test]
    fn separable_toy_reaches_full_accuracy() {
        let train_set = toy_set(200, 1);
        let test_set = toy_set(100, 2);
        let cfg = TrainConfig { epochs: 200, batch_size: 16, learning_rate: 0.1, ..Default::default() };
        let (_, report) = train(&linear_model(), &train_set, &[], &test_set, &cfg).unwrap();
        assert_eq!(report.test_accuracy, Some(1.0));
    }

    #[test]
    fn zero_learning_rate_is_fixed_point() {
        let set = toy_set(50, 3);
        let model = linear_model();
        let before = accuracy(&model, &set).unwrap();
        let cfg = TrainConfig { epochs: 3, learning_rate: 0.0, ..Default::default() };
        let (trained, report) = train(&model, &set, &[], &[], &cfg).unwrap();
        assert_eq!(trained, model);
        assert_eq!(report.train_accuracy, before);
    }

    #[test]
    fn deterministic_given_seed() {
        let set = toy_set(64, 4);
        let cfg = TrainConfig { epochs: 2, seed: 9, ..Default::default() };
        let (a, _) = train(&linear_model(), &set, &[], &[], &cfg).unwrap();
        let (b, _) = train(&linear_model(), &set, &[], &[], &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_class_rejected_and_divergence_reported() {
        let mut set = toy_set(10, 5);
        for s in &mut set {
            s.label = 0;
        }
        assert!(train(&linear_model(), &set, &[], &[], &TrainConfig::default()).is_err());

        let set = toy_set(20, 6);
        let cfg = TrainConfig { epochs: 50, learning_rate: 1e200, cosine_schedule: false, ..Default::default() };
        match train(&linear_model(), &set, &[], &[], &cfg) {
            Err(Error::NonFiniteLoss { .. }) => {}
            other => panic!("expected non-finite loss, got {:?}", other.map(|_| ())),
        }
    }
}
