use serde::{Deserialize, Serialize};

use super::{DirectionSource, Goal, ScoreOracle, TracePoint};
use crate::error::{Error, Result};
use crate::numcore::Tensor;
use crate::result::AttackResult;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimbaConfig {
    pub step: f64,
    /// Iteration cap on top of the oracle budget.
    #[serde(default)]
    pub max_iterations: Option<usize>,
}

impl SimbaConfig {
    pub const UNTARGETED_BUDGET: usize = 20_000;
    pub const TARGETED_BUDGET: usize = 60_000;

    /// Step 0.2 with no iteration cap beyond the oracle budget.
    pub fn standard() -> Self {
        Self {
            step: 0.2,
            max_iterations: None,
        }
    }
}

/// SimBA: per iteration draw `q` and try `x + εq`, then `x - εq`, keeping the
/// first candidate that raises the objective. Stops on success, after
/// `max_iterations`, or when the oracle budget runs out.
pub fn simba_attack(
    oracle: &mut ScoreOracle<'_>,
    x: &Tensor,
    goal: Goal,
    sampler: &mut dyn DirectionSource,
    config: &SimbaConfig,
) -> Result<(AttackResult, Vec<TracePoint>)> {
    if !(config.step > 0.0) {
        return Err(Error::InvalidInput("SimBA step must be positive".into()));
    }
    let logits = match oracle.query(x) {
        Ok(z) => z,
        Err(Error::BudgetExhausted { .. }) => {
            return Ok((
                failure(x.clone(), x, f64::NEG_INFINITY, oracle.queries())?,
                Vec::new(),
            ))
        }
        Err(e) => return Err(e),
    };
    if goal.reached_by_logits(&logits) {
        return Err(Error::Precondition(
            "SimBA input must not already satisfy the attack goal".into(),
        ));
    }
    let mut cur = x.clone();
    let mut loss = goal.objective(&logits)?;
    let mut trace = vec![TracePoint {
        queries: oracle.queries(),
        distance: 0.0,
        success: false,
    }];

    let cap = config.max_iterations.unwrap_or(usize::MAX);
    'outer: for _ in 0..cap {
        if oracle.remaining() == 0 {
            break;
        }
        let q = sampler.draw(&cur, goal.label)?;
        for alpha in [config.step, -config.step] {
            if oracle.remaining() == 0 {
                break 'outer;
            }
            let cand = cur.add_scaled(&q, alpha)?.clip(0.0, 1.0);
            let z = oracle.query(&cand)?;
            let l = goal.objective(&z)?;
            if l > loss {
                loss = l;
                cur = cand;
                let success = goal.reached_by_logits(&z);
                trace.push(TracePoint {
                    queries: oracle.queries(),
                    distance: cur.l2_distance(x)?,
                    success,
                });
                if success {
                    let result = AttackResult {
                        perturbation_norm: cur.l2_distance(x)?,
                        adversarial: cur,
                        success: true,
                        restarts_used: 1,
                        best_loss: loss,
                        queries: oracle.queries(),
                        gradient_evals: 0,
                        success_step: Some(oracle.queries()),
                    };
                    return Ok((result, trace));
                }
                break;
            }
        }
    }
    let result = failure(cur, x, loss, oracle.queries())?;
    trace.push(TracePoint {
        queries: result.queries,
        distance: result.perturbation_norm,
        success: false,
    });
    Ok((result, trace))
}

fn failure(cur: Tensor, x: &Tensor, loss: f64, queries: usize) -> Result<AttackResult> {
    Ok(AttackResult {
        perturbation_norm: cur.l2_distance(x)?,
        adversarial: cur,
        success: false,
        restarts_used: 1,
        best_loss: loss,
        queries,
        gradient_evals: 0,
        success_step: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blackbox::Sampler;
    use crate::models::MlpClassifier;
    use crate::rng::seeded;

    #[test]
    fn constant_logits_leave_input_unchanged() {
        let m = MlpClassifier::zeros(&[4, 5, 3]).unwrap();
        let x = Tensor::vector(vec![0.5; 4]);
        let mut o = ScoreOracle::new(&m, 21);
        let mut s = Sampler::pixel_basis(seeded(0));
        let (r, _) = simba_attack(
            &mut o,
            &x,
            Goal::untargeted(0),
            &mut s,
            &SimbaConfig::standard(),
        )
        .unwrap();
        assert!(!r.success);
        assert_eq!(r.adversarial, x);
        assert_eq!(r.queries, 21);
        assert_eq!(o.queries(), 21);
    }

    #[test]
    fn budget_exhaustion_reports_budget() {
        let m = MlpClassifier::new(&[6, 8, 3], 4).unwrap();
        let x = Tensor::vector(vec![0.5; 6]);
        let y = m.predict(&x).unwrap();
        let mut o = ScoreOracle::new(&m, 7);
        let mut s = Sampler::gaussian(seeded(1));
        let cfg = SimbaConfig {
            step: 1e-6,
            max_iterations: None,
        };
        let (r, _) = simba_attack(&mut o, &x, Goal::untargeted(y), &mut s, &cfg).unwrap();
        assert!(!r.success);
        assert_eq!(r.queries, 7);
    }

    #[test]
    fn already_adversarial_is_rejected() {
        let m = MlpClassifier::new(&[6, 8, 3], 4).unwrap();
        let x = Tensor::vector(vec![0.5; 6]);
        let y = m.predict(&x).unwrap();
        let mut o = ScoreOracle::new(&m, 10);
        let mut s = Sampler::gaussian(seeded(1));
        let r = simba_attack(
            &mut o,
            &x,
            Goal::untargeted((y + 1) % 3),
            &mut s,
            &SimbaConfig::standard(),
        );
        assert!(matches!(r, Err(Error::Precondition(_))));
    }
}
