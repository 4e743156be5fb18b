use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Dataset, MlpClassifier};
use crate::error::{Error, Result};
use crate::numcore::{value_and_full_grad, Head, Tensor};
use crate::rng;
use crate::schedule::Schedule;
use crate::whitebox;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OptimizerKind {
    Sgd {
        #[serde(default)]
        momentum: f64,
    },
    Adam,
}

/// Inner ℓ∞ PGD used for adversarial training.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversarialConfig {
    pub epsilon: f64,
    pub step: f64,
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    /// Learning rate by epoch.
    pub schedule: Schedule,
    #[serde(default)]
    pub weight_decay: f64,
    pub seed: u64,
    #[serde(default)]
    pub adversarial: Option<AdversarialConfig>,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidInput("batch size must be positive".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::InvalidInput(
                "weight decay must be non-negative".into(),
            ));
        }
        if let Some(adv) = &self.adversarial {
            if !(adv.epsilon > 0.0 && adv.step > 0.0) {
                return Err(Error::InvalidInput(
                    "adversarial epsilon and step must be positive".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    /// Mean training loss per epoch.
    pub loss_history: Vec<f64>,
    /// Clean accuracy on the training set after the last epoch.
    pub train_accuracy: f64,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

struct OptimizerState {
    kind: OptimizerKind,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl OptimizerState {
    fn new(kind: OptimizerKind, n: usize) -> Self {
        Self {
            kind,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        match self.kind {
            OptimizerKind::Sgd { momentum } => {
                for ((p, g), m) in params.iter_mut().zip(grad).zip(self.m.iter_mut()) {
                    *m = momentum * *m + g;
                    *p -= lr * *m;
                }
            }
            OptimizerKind::Adam => {
                let c1 = 1.0 - ADAM_BETA1.powi(self.t);
                let c2 = 1.0 - ADAM_BETA2.powi(self.t);
                for (((p, g), m), v) in params
                    .iter_mut()
                    .zip(grad)
                    .zip(self.m.iter_mut())
                    .zip(self.v.iter_mut())
                {
                    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
                }
            }
        }
    }
}

/// Mask selecting weight matrices (not biases) in registry order.
fn decay_mask(model: &MlpClassifier) -> Vec<bool> {
    let mut mask = Vec::with_capacity(model.num_params());
    for (w, b) in model.weights().iter().zip(model.biases()) {
        mask.extend(std::iter::repeat_n(true, w.len()));
        mask.extend(std::iter::repeat_n(false, b.len()));
    }
    mask
}

pub fn accuracy(model: &MlpClassifier, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let preds = model.predict_batch(&data.features)?;
    let hits = preds
        .iter()
        .zip(&data.labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(hits as f64 / data.len() as f64)
}

/// Minibatch training on mean cross-entropy. With `adversarial` set, every
/// batch is first replaced by its ℓ∞ PGD adversarial counterpart.
pub fn train(
    model: &mut MlpClassifier,
    data: &Dataset,
    config: &TrainConfig,
) -> Result<TrainReport> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if data.dim() != model.input_dim() {
        return Err(Error::Dimension(format!(
            "dataset has {} features, model expects {}",
            data.dim(),
            model.input_dim()
        )));
    }
    if data.num_classes > model.num_classes() {
        return Err(Error::InvalidInput(format!(
            "dataset has {} classes, model outputs {}",
            data.num_classes,
            model.num_classes()
        )));
    }

    let mut rng = rng::seeded(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut params = model.params_flat();
    let mask = decay_mask(model);
    let mut opt = OptimizerState::new(config.optimizer, params.len());
    let dim = data.dim();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let lr = config.schedule.at(epoch);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut xs = Vec::with_capacity(batch.len() * dim);
            for &i in batch {
                xs.extend_from_slice(data.features.row(i));
            }
            let labels: Vec<usize> = batch.iter().map(|&i| data.labels[i]).collect();
            let mut xs = Tensor::matrix(batch.len(), dim, xs)?;
            if let Some(adv) = &config.adversarial {
                xs = whitebox::pgd_linf_batch(model, &xs, &labels, adv, &mut rng)?;
            }
            let (loss, grad) = value_and_full_grad(&*model, &xs, &Head::CrossEntropy(labels))?;
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
            total += loss;
            let scale = 1.0 / batch.len() as f64;
            let g: Vec<f64> = grad
                .wrt_params
                .iter()
                .zip(&params)
                .zip(&mask)
                .map(|((g, p), &decay)| {
                    g * scale + if decay { config.weight_decay * p } else { 0.0 }
                })
                .collect();
            opt.step(&mut params, &g, lr);
            model.set_params_flat(&params)?;
        }
        let mean = total / data.len() as f64;
        if !mean.is_finite() || params.iter().any(|p| !p.is_finite()) {
            return Err(Error::TrainingDiverged { epoch });
        }
        history.push(mean);
    }

    Ok(TrainReport {
        loss_history: history,
        train_accuracy: accuracy(model, data)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{generate_blobs, BlobSpec};

    fn blobs() -> Dataset {
        generate_blobs(&BlobSpec {
            dim: 8,
            classes: 2,
            samples_per_class: 60,
            latent_dim: None,
            spread: 0.2,
            noise: 0.05,
            latent_noise: 0.0,
            seed: 3,
        })
        .unwrap()
        .train
    }

    fn config(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 16,
            optimizer: OptimizerKind::Sgd { momentum: 0.9 },
            schedule: Schedule::constant(0.05),
            weight_decay: 1e-4,
            seed: 7,
            adversarial: None,
        }
    }

    #[test]
    fn separable_blobs_are_learned() {
        let data = blobs();
        let mut m = MlpClassifier::new(&[8, 16, 2], 1).unwrap();
        let report = train(&mut m, &data, &config(50)).unwrap();
        assert!(report.train_accuracy >= 0.95, "{}", report.train_accuracy);
        assert_eq!(report.loss_history.len(), 50);
        assert!(report.loss_history[49] < report.loss_history[0]);
    }

    #[test]
    fn zero_epochs_leaves_model_unchanged() {
        let data = blobs();
        let mut m = MlpClassifier::new(&[8, 16, 2], 1).unwrap();
        let before = m.clone();
        train(&mut m, &data, &config(0)).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let data = blobs();
        let mut cfg = config(5);
        cfg.optimizer = OptimizerKind::Adam;
        cfg.schedule = Schedule::constant(0.01);
        cfg.adversarial = Some(AdversarialConfig {
            epsilon: 0.05,
            step: 0.02,
            steps: 3,
        });
        let mut a = MlpClassifier::new(&[8, 16, 2], 1).unwrap();
        let mut b = a.clone();
        train(&mut a, &data, &cfg).unwrap();
        train(&mut b, &data, &cfg).unwrap();
        let bits = |m: &MlpClassifier| -> Vec<u64> {
            m.params_flat().iter().map(|v| v.to_bits()).collect()
        };
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn divergence_is_reported() {
        let data = blobs();
        let mut m = MlpClassifier::new(&[8, 16, 2], 1).unwrap();
        let mut cfg = config(20);
        cfg.schedule = Schedule::constant(1e6);
        cfg.optimizer = OptimizerKind::Sgd { momentum: 0.0 };
        assert!(matches!(
            train(&mut m, &data, &cfg),
            Err(Error::TrainingDiverged { .. })
        ));
    }

    #[test]
    fn empty_dataset_rejected() {
        let mut m = MlpClassifier::new(&[8, 2], 1).unwrap();
        let data = blobs();
        let empty = data.select(|_| false, |l| l, 2);
        assert!(matches!(empty, Err(Error::EmptyDataset)));
        let _ = &mut m;
    }
}
