use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use super::{project_ball, InitKind, LossKind, Norm, StepRule, WhiteboxAttackConfig};
use crate::error::{Error, Result};
use crate::models::{AdversarialConfig, MlpClassifier};
use crate::numcore::{argmax, value_and_input_grad, value_input_grad_and_logits, Head, Tensor};
use crate::ods::{self, cycled_target, multitargeted_direction, DirectionVector};
use crate::result::AttackResult;
use crate::rng::Rng;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const BALL_TOL: f64 = 1e-9;

/// Uniform sample from `B_ε(x)`, clipped to `[0, 1]`.
pub fn uniform_init(x: &Tensor, epsilon: f64, norm: Norm, rng: &mut Rng) -> Tensor {
    let delta: Vec<f64> = match norm {
        Norm::Linf => (0..x.len())
            .map(|_| rng.random_range(-epsilon..=epsilon))
            .collect(),
        Norm::L2 => {
            let dir = ods::random_unit(x, rng);
            let u: f64 = rng.random();
            let r = epsilon * u.powf(1.0 / x.len() as f64);
            dir.data().iter().map(|v| v * r).collect()
        }
    };
    let delta = Tensor::new(x.shape().to_vec(), delta).expect("same shape");
    x.add(&delta).expect("same shape").clip(0.0, 1.0)
}

fn sign(t: &Tensor) -> Tensor {
    t.map(|v| {
        if v > 0.0 {
            1.0
        } else if v < 0.0 {
            -1.0
        } else {
            0.0
        }
    })
}

/// Steepest-ascent direction under `norm`: sign for ℓ∞, unit vector for ℓ2.
fn ascent_direction(grad: &Tensor, norm: Norm) -> Tensor {
    match norm {
        Norm::Linf => sign(grad),
        Norm::L2 => {
            let n = grad.l2_norm();
            if n > 0.0 {
                grad.scale(1.0 / n)
            } else {
                grad.clone()
            }
        }
    }
}

/// Starting point for one restart (Algorithm-A style): a uniform draw from the
/// ball, then `N_ODI` projected steps along the ODS vector of `model` for a
/// direction fixed for the whole restart. ℓ∞ steps take the sign; ℓ2 steps use
/// the raw unit vector. Returns the start and the gradient evaluations spent.
pub fn odi_init(
    x_org: &Tensor,
    label: usize,
    model: &MlpClassifier,
    config: &WhiteboxAttackConfig,
    restart: usize,
    rng: &mut Rng,
) -> Result<(Tensor, usize)> {
    let (eps, norm) = (config.epsilon, config.norm);
    let mut x = uniform_init(x_org, eps, norm, rng);
    let (steps, step_size, mut direction) = match config.init {
        InitKind::Uniform => return Ok((x, 0)),
        InitKind::Odi { steps, step_size } => (
            steps,
            step_size,
            ods::sample_direction(model.num_classes(), rng)?,
        ),
        InitKind::MultiTargeted { steps, step_size } => {
            let c = model.num_classes();
            let t = cycled_target(label, restart, c);
            (steps, step_size, multitargeted_direction(label, t, c)?)
        }
    };
    let fixed = matches!(config.init, InitKind::MultiTargeted { .. });
    let mut evals = 0;
    for _ in 0..steps {
        let v = ods_step(&x, model, &mut direction, fixed, rng, &mut evals)?;
        let step = match norm {
            Norm::Linf => sign(&v),
            Norm::L2 => v,
        };
        x = project_ball(&x.add_scaled(&step, step_size)?, x_org, eps, norm)?;
        debug_assert!(super::in_ball(&x, x_org, eps, norm, BALL_TOL));
    }
    Ok((x, evals))
}

/// ODS vector at `x`; a vanishing gradient redraws `w_d` (unless fixed) and
/// finally falls back to a random unit vector.
fn ods_step(
    x: &Tensor,
    model: &MlpClassifier,
    direction: &mut DirectionVector,
    fixed: bool,
    rng: &mut Rng,
    evals: &mut usize,
) -> Result<Tensor> {
    let tries = if fixed {
        1
    } else {
        ods::MAX_DIRECTION_RESAMPLES
    };
    for _ in 0..tries {
        *evals += 1;
        match ods::ods_vector(x, model, direction) {
            Err(Error::DegenerateDirection) => {
                if !fixed {
                    *direction = ods::sample_direction(model.num_classes(), rng)?;
                }
            }
            other => return other,
        }
    }
    Ok(ods::random_unit(x, rng))
}

fn head_for(loss: LossKind, label: usize) -> Head {
    match loss {
        LossKind::Margin => Head::margin(label),
        LossKind::CrossEntropy => Head::cross_entropy(label),
    }
}

/// PGD from `start`: `N` ascent steps on the configured loss, projected onto
/// `B_ε(x) ∩ [0, 1]^D` after each step.
pub fn pgd_attack(
    target: &MlpClassifier,
    x: &Tensor,
    label: usize,
    start: &Tensor,
    config: &WhiteboxAttackConfig,
) -> Result<AttackResult> {
    config.validate()?;
    let (eps, norm) = (config.epsilon, config.norm);
    if !super::in_ball(start, x, eps, norm, BALL_TOL) {
        return Err(Error::Precondition(
            "PGD start lies outside the ε-ball or the pixel box".into(),
        ));
    }
    let head = head_for(config.loss, label);
    let mut cur = start.clone();
    let mut best = (f64::NEG_INFINITY, cur.clone());
    let mut success_step = None;
    let mut m = Tensor::zeros(x.shape());
    let mut v = Tensor::zeros(x.shape());
    let mut evals = 0;

    for k in 0..config.steps {
        let (loss, grad, logits) = value_input_grad_and_logits(target, &cur, &head)?;
        evals += 1;
        if loss > best.0 {
            best = (loss, cur.clone());
        }
        if argmax(logits.data()) != label {
            success_step.get_or_insert(k);
            if config.early_stop {
                break;
            }
        }
        let g = grad.wrt_input;
        let eta = config.step.at(k);
        let update = match config.optimizer {
            StepRule::Sign => ascent_direction(&g, norm),
            StepRule::Adam => {
                let t = (k + 1) as i32;
                m = m.scale(ADAM_BETA1).add_scaled(&g, 1.0 - ADAM_BETA1)?;
                v = v
                    .scale(ADAM_BETA2)
                    .add_scaled(&g.map(|a| a * a), 1.0 - ADAM_BETA2)?;
                let (c1, c2) = (1.0 - ADAM_BETA1.powi(t), 1.0 - ADAM_BETA2.powi(t));
                let data = m
                    .data()
                    .iter()
                    .zip(v.data())
                    .map(|(mi, vi)| (mi / c1) / ((vi / c2).sqrt() + ADAM_EPS))
                    .collect();
                Tensor::new(x.shape().to_vec(), data)?
            }
        };
        cur = project_ball(&cur.add_scaled(&update, eta)?, x, eps, norm)?;
        debug_assert!(super::in_ball(&cur, x, eps, norm, BALL_TOL));
    }

    if success_step.is_none() {
        let z = target.forward(&cur)?;
        let loss = match config.loss {
            LossKind::Margin => crate::numcore::margin_loss(z.data(), label)?,
            LossKind::CrossEntropy => crate::numcore::softmax_cross_entropy(z.data(), label)?,
        };
        if loss > best.0 {
            best = (loss, cur.clone());
        }
        if argmax(z.data()) != label {
            success_step = Some(config.steps);
        }
    }
    let success = success_step.is_some();
    let adversarial = if success { cur } else { best.1 };
    Ok(AttackResult {
        perturbation_norm: norm.distance(&adversarial, x)?,
        adversarial,
        success,
        restarts_used: 1,
        best_loss: best.0,
        queries: 0,
        gradient_evals: evals,
        success_step,
    })
}

/// Batched ℓ∞ PGD on summed cross-entropy from a uniform start, used for
/// adversarial training.
pub(crate) fn pgd_linf_batch(
    model: &MlpClassifier,
    xs: &Tensor,
    labels: &[usize],
    adv: &AdversarialConfig,
    rng: &mut Rng,
) -> Result<Tensor> {
    let eps = adv.epsilon;
    let noise: Vec<f64> = (0..xs.len())
        .map(|_| rng.random_range(-eps..=eps))
        .collect();
    let mut cur = xs
        .add(&Tensor::new(xs.shape().to_vec(), noise)?)?
        .clip(0.0, 1.0);
    let head = Head::CrossEntropy(labels.to_vec());
    for _ in 0..adv.steps {
        let (_, g) = value_and_input_grad(model, &cur, &head)?;
        cur = project_ball(
            &cur.add_scaled(&sign(&g.wrt_input), adv.step)?,
            xs,
            eps,
            Norm::Linf,
        )?;
    }
    Ok(cur)
}

/// Gaussian unit direction scaled to radius `epsilon`.
pub(crate) fn gaussian_offset(x: &Tensor, epsilon: f64, rng: &mut Rng) -> Tensor {
    let w: Vec<f64> = (0..x.len()).map(|_| StandardNormal.sample(rng)).collect();
    let w = Tensor::new(x.shape().to_vec(), w).expect("same shape");
    let n = w.l2_norm();
    w.scale(epsilon / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::whitebox::in_ball;

    fn linear_binary() -> MlpClassifier {
        // z0 = 0, z1 = a·x - 1.5 with a = (1, 2, -1, 0.5)
        let a = [1.0, 2.0, -1.0, 0.5];
        let mut w = Vec::new();
        for ai in a {
            w.extend([0.0, ai]);
        }
        MlpClassifier::linear(
            Tensor::matrix(4, 2, w).unwrap(),
            Tensor::vector(vec![0.0, -1.5]),
        )
        .unwrap()
    }

    #[test]
    fn odi_with_zero_steps_is_uniform_sample() {
        let m = MlpClassifier::new(&[4, 6, 3], 2).unwrap();
        let x = Tensor::vector(vec![0.5; 4]);
        let cfg = WhiteboxAttackConfig::pgd(Norm::Linf, 0.1, 0.02, 5, 1).with_init(InitKind::Odi {
            steps: 0,
            step_size: 0.1,
        });
        let (start, evals) = odi_init(&x, 0, &m, &cfg, 0, &mut seeded(4)).unwrap();
        assert_eq!(evals, 0);
        assert_eq!(start, uniform_init(&x, 0.1, Norm::Linf, &mut seeded(4)));
    }

    #[test]
    fn odi_defaults() {
        assert_eq!(
            InitKind::odi_default(0.3),
            InitKind::Odi {
                steps: 2,
                step_size: 0.3
            }
        );
    }

    #[test]
    fn odi_points_stay_in_ball() {
        let m = MlpClassifier::new(&[8, 12, 4], 5).unwrap();
        let mut rng = seeded(6);
        for norm in [Norm::Linf, Norm::L2] {
            for init in [
                InitKind::odi_default(0.2),
                InitKind::MultiTargeted {
                    steps: 3,
                    step_size: 0.2,
                },
            ] {
                let cfg = WhiteboxAttackConfig::pgd(norm, 0.2, 0.05, 5, 1).with_init(init);
                for r in 0..20 {
                    let x = Tensor::vector((0..8).map(|_| rng.random_range(0.0..1.0)).collect());
                    let (s, _) = odi_init(&x, 1, &m, &cfg, r, &mut rng).unwrap();
                    assert!(in_ball(&s, &x, 0.2, norm, 1e-12));
                }
            }
        }
    }

    #[test]
    fn standard_linf_config_runs() {
        let m = MlpClassifier::new(&[8, 12, 4], 5).unwrap();
        let x = Tensor::vector(vec![0.4; 8]);
        let y = m.predict(&x).unwrap();
        let cfg = WhiteboxAttackConfig::pgd(Norm::Linf, 8.0 / 255.0, 2.0 / 255.0, 20, 1);
        let start = uniform_init(&x, cfg.epsilon, Norm::Linf, &mut seeded(1));
        let r = pgd_attack(&m, &x, y, &start, &cfg).unwrap();
        assert!(r.gradient_evals <= 20);
        assert!(in_ball(&r.adversarial, &x, cfg.epsilon, Norm::Linf, 1e-12));
    }

    #[test]
    fn constant_logits_never_succeed() {
        let m = MlpClassifier::zeros(&[4, 5, 3]).unwrap();
        let x = Tensor::vector(vec![0.5; 4]);
        let mut cfg = WhiteboxAttackConfig::pgd(Norm::Linf, 0.1, 0.05, 10, 1);
        cfg.early_stop = false;
        let start = uniform_init(&x, 0.1, Norm::Linf, &mut seeded(0));
        let r = pgd_attack(&m, &x, 0, &start, &cfg).unwrap();
        assert!(!r.success);
        assert!(in_ball(&r.adversarial, &x, 0.1, Norm::Linf, 1e-12));
        assert_eq!(r.gradient_evals, 10);
    }

    #[test]
    fn start_outside_ball_rejected() {
        let m = linear_binary();
        let x = Tensor::vector(vec![0.5; 4]);
        let cfg = WhiteboxAttackConfig::pgd(Norm::Linf, 0.1, 0.05, 3, 1);
        let start = Tensor::vector(vec![0.7; 4]);
        assert!(matches!(
            pgd_attack(&m, &x, 0, &start, &cfg),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn linear_one_step_hits_optimal_corner() {
        // The margin z1 - z0 = a·x - 1.5 is maximised over the ℓ∞ ball at x + ε·sign(a).
        let m = linear_binary();
        let x = Tensor::vector(vec![0.3, 0.2, 0.6, 0.4]);
        let eps = 0.1;
        assert_eq!(m.predict(&x).unwrap(), 0);
        let mut cfg = WhiteboxAttackConfig::pgd(Norm::Linf, eps, eps, 1, 1);
        cfg.early_stop = false;
        let r = pgd_attack(&m, &x, 0, &x, &cfg).unwrap();
        let corner = Tensor::vector(vec![0.4, 0.3, 0.5, 0.5]);
        for (a, b) in r.adversarial.data().iter().zip(corner.data()) {
            assert!((a - b).abs() < 1e-15);
        }
        let best = [1.0, 2.0, -1.0, 0.5]
            .iter()
            .zip(x.data())
            .map(|(a, xi)| a * xi + eps * f64::abs(*a))
            .sum::<f64>()
            - 1.5;
        let z = m.forward(&r.adversarial).unwrap();
        assert!((z.data()[1] - z.data()[0] - best).abs() < 1e-12);
    }

    #[test]
    fn adam_and_schedule_run() {
        let m = MlpClassifier::new(&[8, 12, 4], 5).unwrap();
        let x = Tensor::vector(vec![0.4; 8]);
        let y = m.predict(&x).unwrap();
        let cfg = WhiteboxAttackConfig {
            optimizer: StepRule::Adam,
            step: crate::schedule::Schedule::new(vec![(0, 0.1), (5, 0.01), (8, 0.001)]).unwrap(),
            early_stop: false,
            ..WhiteboxAttackConfig::pgd(Norm::Linf, 0.3, 0.1, 10, 1)
        };
        let r = pgd_attack(&m, &x, y, &x, &cfg).unwrap();
        assert_eq!(r.gradient_evals, 10);
        assert!(in_ball(&r.adversarial, &x, 0.3, Norm::Linf, 1e-12));
    }

    #[test]
    fn batch_pgd_stays_in_ball() {
        let m = MlpClassifier::new(&[4, 6, 3], 2).unwrap();
        let xs = Tensor::matrix(2, 4, vec![0.1, 0.5, 0.9, 0.3, 0.0, 1.0, 0.4, 0.6]).unwrap();
        let adv = AdversarialConfig {
            epsilon: 0.1,
            step: 0.03,
            steps: 5,
        };
        let out = pgd_linf_batch(&m, &xs, &[0, 2], &adv, &mut seeded(1)).unwrap();
        assert!(in_ball(&out, &xs, 0.1, Norm::Linf, 1e-12));
    }
}
