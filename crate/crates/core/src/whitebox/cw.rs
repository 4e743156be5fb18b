use serde::{Deserialize, Serialize};

use super::pgd::gaussian_offset;
use super::{odi_init, InitKind, Norm, WhiteboxAttackConfig};
use crate::error::{Error, Result};
use crate::models::MlpClassifier;
use crate::numcore::{argmax, value_input_grad_and_logits, Head, Tensor};
use crate::result::AttackResult;
use crate::rng::Rng;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const UPPER_START: f64 = 1e10;
// keeps atanh finite at the box edges
const TANH_CLAMP: f64 = 1.0 - 1e-6;

/// Starting point of each C&W restart.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CwInit {
    /// The clean input itself.
    Clean,
    /// Gaussian noise scaled onto the ℓ2 sphere of radius `epsilon`.
    Naive,
    /// ℓ2 ODI steps from a uniform point in the ball.
    Odi { steps: usize, step_size: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CwConfig {
    pub max_iterations: usize,
    pub search_steps: usize,
    pub learning_rate: f64,
    pub initial_constant: f64,
    #[serde(default)]
    pub confidence: f64,
    /// Radius used by the naive and ODI initialisations.
    pub init_epsilon: f64,
    pub init: CwInit,
    pub restarts: usize,
    /// Stop a search step once the objective stalls.
    #[serde(default = "yes")]
    pub abort_early: bool,
}

fn yes() -> bool {
    true
}

impl CwConfig {
    /// 100 iterations, 10 search steps, learning rate 0.1, initial constant 0.01.
    pub fn standard(init: CwInit, init_epsilon: f64, restarts: usize) -> Self {
        Self {
            max_iterations: 100,
            search_steps: 10,
            learning_rate: 0.1,
            initial_constant: 0.01,
            confidence: 0.0,
            init_epsilon,
            init,
            restarts,
            abort_early: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 || self.search_steps == 0 || self.restarts == 0 {
            return Err(Error::InvalidInput(
                "C&W iterations, search steps and restarts must be at least 1".into(),
            ));
        }
        if !(self.learning_rate > 0.0) || !(self.initial_constant > 0.0) {
            return Err(Error::InvalidInput(
                "C&W learning rate and initial constant must be positive".into(),
            ));
        }
        if !(self.init_epsilon >= 0.0) || !(self.confidence >= 0.0) {
            return Err(Error::InvalidInput(
                "C&W radius and confidence must be non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Initial point for one restart, plus the gradient evaluations it cost.
    pub fn start(
        &self,
        model: &MlpClassifier,
        x: &Tensor,
        label: usize,
        restart: usize,
        rng: &mut Rng,
    ) -> Result<(Tensor, usize)> {
        match self.init {
            CwInit::Clean => Ok((x.clone(), 0)),
            CwInit::Naive => Ok((cw_naive_init(x, self.init_epsilon, rng), 0)),
            CwInit::Odi { steps, step_size } => {
                let cfg = WhiteboxAttackConfig::pgd(Norm::L2, self.init_epsilon, step_size, 1, 1)
                    .with_init(InitKind::Odi { steps, step_size });
                odi_init(x, label, model, &cfg, restart, rng)
            }
        }
    }
}

/// `x + ε·w/‖w‖₂` for Gaussian `w`, clipped to `[0, 1]`.
pub fn cw_naive_init(x: &Tensor, epsilon: f64, rng: &mut Rng) -> Tensor {
    if epsilon == 0.0 {
        return x.clone();
    }
    x.add(&gaussian_offset(x, epsilon, rng))
        .expect("same shape")
        .clip(0.0, 1.0)
}

fn to_tanh_space(p: f64) -> f64 {
    (2.0 * p - 1.0).clamp(-TANH_CLAMP, TANH_CLAMP).atanh()
}

/// C&W ℓ2 from `init`: Adam in tanh space on `‖x' - x‖² + c·max(κ - margin, 0)`,
/// with a binary search over `c`. Every search step restarts from `init`.
/// Returns the smallest-ℓ2 misclassified point seen, or failure.
pub fn cw_attack(
    target: &MlpClassifier,
    x: &Tensor,
    label: usize,
    init: &Tensor,
    config: &CwConfig,
) -> Result<AttackResult> {
    config.validate()?;
    x.check_same_shape(init)?;
    let head = Head::margin(label);
    let z = target.forward(x)?;
    if argmax(z.data()) != label {
        return Ok(AttackResult {
            adversarial: x.clone(),
            success: true,
            perturbation_norm: 0.0,
            restarts_used: 1,
            best_loss: crate::numcore::margin_loss(z.data(), label)?,
            queries: 0,
            gradient_evals: 0,
            success_step: Some(0),
        });
    }

    let w0 = init.map(to_tanh_space);
    let mut best: Option<(f64, Tensor)> = None;
    let mut best_loss = f64::NEG_INFINITY;
    let (mut lower, mut upper) = (0.0_f64, UPPER_START);
    let mut c = config.initial_constant;
    let mut evals = 0;
    let mut first_success = None;

    for _ in 0..config.search_steps {
        let mut w = w0.clone();
        let mut m = Tensor::zeros(x.shape());
        let mut v = Tensor::zeros(x.shape());
        let mut found = false;
        let mut prev = f64::INFINITY;
        let check_every = (config.max_iterations / 10).max(1);

        for it in 0..config.max_iterations {
            let adv = w.map(|a| 0.5 * (a.tanh() + 1.0));
            let (margin, g, logits) = value_input_grad_and_logits(target, &adv, &head)?;
            evals += 1;
            best_loss = best_loss.max(margin);
            let d = adv.sub(x)?;
            let dist2 = d.dot(&d)?;
            if argmax(logits.data()) != label {
                found = true;
                first_success.get_or_insert(evals);
                let dist = dist2.sqrt();
                if best.as_ref().is_none_or(|(b, _)| dist < *b) {
                    best = Some((dist, adv.clone()));
                }
            }
            let hinge = config.confidence - margin;
            let objective = dist2 + c * hinge.max(0.0);
            if config.abort_early && it % check_every == 0 {
                if objective > prev * 0.9999 {
                    break;
                }
                prev = objective;
            }
            // d objective / d adv
            let mut grad_adv = d.scale(2.0);
            if hinge > 0.0 {
                grad_adv = grad_adv.add_scaled(&g.wrt_input, -c)?;
            }
            let grad_w: Vec<f64> = grad_adv
                .data()
                .iter()
                .zip(w.data())
                .map(|(ga, wi)| {
                    let t = wi.tanh();
                    ga * 0.5 * (1.0 - t * t)
                })
                .collect();
            let grad_w = Tensor::new(x.shape().to_vec(), grad_w)?;
            let t = (it + 1) as i32;
            m = m.scale(ADAM_BETA1).add_scaled(&grad_w, 1.0 - ADAM_BETA1)?;
            v = v
                .scale(ADAM_BETA2)
                .add_scaled(&grad_w.map(|a| a * a), 1.0 - ADAM_BETA2)?;
            let (c1, c2) = (1.0 - ADAM_BETA1.powi(t), 1.0 - ADAM_BETA2.powi(t));
            let step: Vec<f64> = m
                .data()
                .iter()
                .zip(v.data())
                .map(|(mi, vi)| (mi / c1) / ((vi / c2).sqrt() + ADAM_EPS))
                .collect();
            w = w.add_scaled(
                &Tensor::new(x.shape().to_vec(), step)?,
                -config.learning_rate,
            )?;
        }

        if found {
            upper = upper.min(c);
            c = 0.5 * (lower + upper);
        } else {
            lower = lower.max(c);
            c = if upper < UPPER_START {
                0.5 * (lower + upper)
            } else {
                c * 10.0
            };
        }
    }

    let (success, adversarial) = match best {
        Some((_, adv)) => (true, adv),
        None => (false, init.clone()),
    };
    Ok(AttackResult {
        perturbation_norm: adversarial.l2_distance(x)?,
        adversarial,
        success,
        restarts_used: 1,
        best_loss,
        queries: 0,
        gradient_evals: evals,
        success_step: first_success,
    })
}
