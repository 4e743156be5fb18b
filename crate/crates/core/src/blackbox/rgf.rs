use serde::{Deserialize, Serialize};

use super::{DirectionSource, Goal, ScoreOracle, TracePoint};
use crate::error::{Error, Result};
use crate::numcore::Tensor;
use crate::result::AttackResult;
use crate::whitebox::{project_ball, Norm};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RgfConfig {
    pub norm: Norm,
    pub epsilon: f64,
    pub step: f64,
    /// Directions per gradient estimate.
    pub samples: usize,
    /// Finite-difference offset.
    pub smoothing: f64,
}

impl RgfConfig {
    /// ℓ2 with `ε = √(0.001·D)`, step 0.5 and 10 samples.
    pub fn l2(dim: usize) -> Self {
        Self {
            norm: Norm::L2,
            epsilon: (0.001 * dim as f64).sqrt(),
            step: 0.5,
            samples: 10,
            smoothing: 1e-4,
        }
    }

    /// ℓ∞ with step 0.005 and 10 samples.
    pub fn linf(epsilon: f64) -> Self {
        Self {
            norm: Norm::Linf,
            epsilon,
            step: 0.005,
            samples: 10,
            smoothing: 1e-4,
        }
    }
}

/// `ĝ = (1/q)·Σ (L(x + μu_i) - L(x))/μ · u_i` over `q` sampler directions.
/// Costs exactly `q + 1` queries.
pub fn rgf_estimate_gradient(
    oracle: &mut ScoreOracle<'_>,
    x: &Tensor,
    goal: Goal,
    sampler: &mut dyn DirectionSource,
    samples: usize,
    smoothing: f64,
) -> Result<Tensor> {
    check(samples, smoothing)?;
    let base = goal.objective(&oracle.query(x)?)?;
    estimate_from(oracle, x, base, goal, sampler, samples, smoothing)
}

fn check(samples: usize, smoothing: f64) -> Result<()> {
    if samples == 0 || !(smoothing > 0.0) {
        return Err(Error::InvalidInput(
            "RGF needs at least one sample and a positive smoothing".into(),
        ));
    }
    Ok(())
}

fn estimate_from(
    oracle: &mut ScoreOracle<'_>,
    x: &Tensor,
    base: f64,
    goal: Goal,
    sampler: &mut dyn DirectionSource,
    samples: usize,
    smoothing: f64,
) -> Result<Tensor> {
    let dirs = sampler.draw_batch(x, goal.label, samples)?;
    let mut g = Tensor::zeros(x.shape());
    for u in &dirs {
        let l = goal.objective(&oracle.query(&x.add_scaled(u, smoothing)?)?)?;
        g = g.add_scaled(u, (l - base) / smoothing)?;
    }
    Ok(g.scale(1.0 / samples as f64))
}

/// Iterative ascent on RGF estimates: sign steps for ℓ∞, normalised steps for
/// ℓ2, each projected onto the ε-ball. Success is checked on the base query
/// of every round; the attack fails when the budget cannot cover another look.
pub fn rgf_attack(
    oracle: &mut ScoreOracle<'_>,
    x: &Tensor,
    goal: Goal,
    sampler: &mut dyn DirectionSource,
    config: &RgfConfig,
) -> Result<(AttackResult, Vec<TracePoint>)> {
    check(config.samples, config.smoothing)?;
    if !(config.epsilon >= 0.0) || !(config.step > 0.0) {
        return Err(Error::InvalidInput(
            "RGF needs ε ≥ 0 and a positive step".into(),
        ));
    }
    let mut cur = x.clone();
    let mut trace = Vec::new();
    let mut best = f64::NEG_INFINITY;
    let finish = |cur: Tensor, success: bool, best: f64, queries: usize| -> Result<AttackResult> {
        Ok(AttackResult {
            perturbation_norm: config.norm.distance(&cur, x)?,
            adversarial: cur,
            success,
            restarts_used: 1,
            best_loss: best,
            queries,
            gradient_evals: 0,
            success_step: success.then_some(queries),
        })
    };
    if config.epsilon == 0.0 {
        return Ok((finish(cur, false, best, 0)?, trace));
    }
    while oracle.remaining() > 0 {
        let z = oracle.query(&cur)?;
        let base = goal.objective(&z)?;
        best = best.max(base);
        let success = goal.reached_by_logits(&z);
        trace.push(TracePoint {
            queries: oracle.queries(),
            distance: cur.l2_distance(x)?,
            success,
        });
        if success {
            let q = oracle.queries();
            return Ok((finish(cur, true, best, q)?, trace));
        }
        if oracle.remaining() < config.samples {
            break;
        }
        let g = estimate_from(
            oracle,
            &cur,
            base,
            goal,
            sampler,
            config.samples,
            config.smoothing,
        )?;
        let update = match config.norm {
            Norm::Linf => g.map(|v| {
                if v > 0.0 {
                    1.0
                } else if v < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }),
            Norm::L2 => {
                let n = g.l2_norm();
                if n > 0.0 {
                    g.scale(1.0 / n)
                } else {
                    g
                }
            }
        };
        cur = project_ball(
            &cur.add_scaled(&update, config.step)?,
            x,
            config.epsilon,
            config.norm,
        )?;
    }
    let q = oracle.queries();
    if trace.last().map(|t| t.queries) != Some(q) {
        trace.push(TracePoint {
            queries: q,
            distance: cur.l2_distance(x)?,
            success: false,
        });
    }
    Ok((finish(cur, false, best, q)?, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blackbox::Sampler;
    use crate::models::MlpClassifier;
    use crate::rng::seeded;

    /// Two-class linear model with `z1 - z0 = c·x`.
    fn linear(c: &[f64]) -> MlpClassifier {
        let mut w = Vec::new();
        for ci in c {
            w.extend([0.0, *ci]);
        }
        MlpClassifier::linear(
            Tensor::matrix(c.len(), 2, w).unwrap(),
            Tensor::vector(vec![0.0, -10.0]),
        )
        .unwrap()
    }

    #[test]
    fn linear_loss_recovers_scaled_projection() {
        let c = [0.7, -1.2, 0.4, 2.0, -0.3, 0.9];
        let m = linear(&c);
        let x = Tensor::vector(vec![0.5; 6]);
        let q = 3;
        let mut o = ScoreOracle::new(&m, 100);
        let g = rgf_estimate_gradient(
            &mut o,
            &x,
            Goal::untargeted(0),
            &mut Sampler::gaussian(seeded(4)),
            q,
            1e-3,
        )
        .unwrap();
        assert_eq!(o.queries(), q + 1);
        // same directions again
        let dirs = Sampler::gaussian(seeded(4)).draw_batch(&x, 0, q).unwrap();
        let ct = Tensor::vector(c.to_vec());
        let mut proj = Tensor::zeros(&[6]);
        for u in &dirs {
            proj = proj.add_scaled(u, ct.dot(u).unwrap()).unwrap();
        }
        for (a, b) in g.scale(q as f64).data().iter().zip(proj.data()) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn full_basis_recovers_gradient() {
        let m = MlpClassifier::new(&[5, 9, 3], 8).unwrap();
        let x = Tensor::vector(vec![0.3, 0.6, 0.2, 0.8, 0.5]);
        let y = m.predict(&x).unwrap();
        let goal = Goal::untargeted(y);
        let mut o = ScoreOracle::new(&m, 100);
        let g = rgf_estimate_gradient(&mut o, &x, goal, &mut Sampler::gaussian(seeded(1)), 5, 1e-6)
            .unwrap()
            .scale(5.0);
        let fd = crate::numcore::finite_diff_grad(
            |p| goal.objective(&m.logits(p.data()).unwrap()).unwrap(),
            &x,
            1e-5,
        )
        .unwrap();
        for (a, b) in g.data().iter().zip(fd.data()) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn zero_epsilon_fails_immediately() {
        let m = linear(&[1.0, 1.0]);
        let x = Tensor::vector(vec![0.5, 0.5]);
        let mut o = ScoreOracle::new(&m, 100);
        let mut cfg = RgfConfig::linf(0.1);
        cfg.epsilon = 0.0;
        let (r, _) = rgf_attack(
            &mut o,
            &x,
            Goal::untargeted(0),
            &mut Sampler::gaussian(seeded(0)),
            &cfg,
        )
        .unwrap();
        assert!(!r.success);
        assert_eq!(r.perturbation_norm, 0.0);
        assert_eq!(o.queries(), 0);
    }

    #[test]
    fn l2_epsilon_rule() {
        let c = RgfConfig::l2(224 * 224 * 3);
        assert!((c.epsilon - (0.001f64 * 150528.0).sqrt()).abs() < 1e-12);
        assert_eq!(c.samples, 10);
        assert_eq!(c.step, 0.5);
    }

    #[test]
    fn exhausted_budget_ends_trace_at_counter() {
        // bias keeps class 0 far ahead, so no budget suffices
        let m = linear(&[0.01, 0.01]);
        let x = Tensor::vector(vec![0.5, 0.5]);
        for budget in [1, 5, 11, 12, 23, 40] {
            let mut o = ScoreOracle::new(&m, budget);
            let cfg = RgfConfig {
                samples: 5,
                ..RgfConfig::linf(0.05)
            };
            let (r, trace) = rgf_attack(
                &mut o,
                &x,
                Goal::untargeted(0),
                &mut Sampler::gaussian(seeded(1)),
                &cfg,
            )
            .unwrap();
            assert!(!r.success);
            assert_eq!(r.queries, o.queries());
            assert_eq!(trace.last().unwrap().queries, o.queries());
            assert!(o.queries() <= budget);
        }
    }
}
