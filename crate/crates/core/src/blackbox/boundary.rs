use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{DecisionOracle, DirectionSource, Goal, TracePoint};
use crate::error::{Error, Result};
use crate::numcore::Tensor;
use crate::result::AttackResult;
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundaryConfig {
    /// Orthogonal step length relative to the current distance.
    pub spherical_step: f64,
    /// Fraction of the distance removed by the contraction toward the input.
    pub source_step: f64,
    /// Steps per acceptance-rate window.
    pub adapt_window: usize,
    /// Factor applied to the spherical step after a window with acceptance
    /// above 1/2 (divided below 1/4).
    pub spherical_adapt: f64,
    /// Same for the source step.
    pub source_adapt: f64,
    /// Random images tried before giving up on an untargeted start.
    pub init_tries: usize,
    /// Bisection steps pulling the starting point toward the input.
    pub blend_steps: usize,
    /// Step cap on top of the oracle budget.
    pub max_steps: Option<usize>,
}

impl Default for BoundaryConfig {
    fn default() -> Self {
        Self {
            spherical_step: 0.01,
            source_step: 0.01,
            adapt_window: 20,
            spherical_adapt: 1.1,
            source_adapt: 1.5,
            init_tries: 1000,
            blend_steps: 10,
            max_steps: None,
        }
    }
}

const MAX_SOURCE_STEP: f64 = 0.5;
const MAX_SPHERICAL_STEP: f64 = 1.0;

/// Decision-based Boundary Attack. Starts from `start` (targeted runs) or from
/// uniform random images until one satisfies the goal, then repeats: draw `q`,
/// make it orthogonal to `x_adv - x` with length `δ·d`, put `x_adv + q` back on
/// the sphere of radius `d` around `x`, contract to radius `(1 - ε)·d`, and
/// accept if the goal still holds. `δ` and `ε` grow when the acceptance rate
/// over a window is above 1/2 and shrink when it is below 1/4. Runs until the
/// oracle budget is spent.
pub fn boundary_attack(
    oracle: &mut DecisionOracle<'_>,
    x: &Tensor,
    goal: Goal,
    start: Option<&Tensor>,
    sampler: &mut dyn DirectionSource,
    config: &BoundaryConfig,
    rng: &mut Rng,
) -> Result<(AttackResult, Vec<TracePoint>)> {
    if !(config.spherical_step > 0.0) || !(config.source_step > 0.0 && config.source_step < 1.0) {
        return Err(Error::InvalidInput(
            "boundary steps must be positive and the source step below 1".into(),
        ));
    }
    if config.adapt_window == 0 || !(config.spherical_adapt >= 1.0) || !(config.source_adapt >= 1.0)
    {
        return Err(Error::InvalidInput(
            "adaptation needs a window of at least 1 and factors of at least 1".into(),
        ));
    }
    let mut adv = initial_adversarial(oracle, x, goal, start, config, rng)?;
    let mut dist = adv.l2_distance(x)?;
    let mut trace = vec![TracePoint {
        queries: oracle.queries(),
        distance: dist,
        success: true,
    }];
    let (mut delta, mut eps) = (config.spherical_step, config.source_step);
    let mut window = (0usize, 0usize);

    let mut steps = 0;
    while oracle.remaining() > 0 && config.max_steps.is_none_or(|m| steps < m) && dist > 0.0 {
        steps += 1;
        let diff = adv.sub(x)?;
        let u = diff.scale(1.0 / dist);
        let q = sampler.draw(&adv, goal.label)?;
        let q = q.add_scaled(&u, -q.dot(&u)?)?;
        let nq = q.l2_norm();
        if !(nq > 1e-12) {
            continue;
        }
        let on_sphere = diff.add_scaled(&q, delta * dist / nq)?;
        let r = on_sphere.l2_norm();
        let cand = x
            .add_scaled(&on_sphere, (1.0 - eps) * dist / r)?
            .clip(0.0, 1.0);
        let accepted = goal.reached(oracle.query(&cand)?);
        if accepted {
            adv = cand;
            dist = adv.l2_distance(x)?;
            trace.push(TracePoint {
                queries: oracle.queries(),
                distance: dist,
                success: true,
            });
            window.0 += 1;
        }
        window.1 += 1;
        if window.1 == config.adapt_window {
            let rate = window.0 as f64 / window.1 as f64;
            if rate > 0.5 {
                delta = (delta * config.spherical_adapt).min(MAX_SPHERICAL_STEP);
                eps = (eps * config.source_adapt).min(MAX_SOURCE_STEP);
            } else if rate < 0.25 {
                delta /= config.spherical_adapt;
                eps /= config.source_adapt;
            }
            window = (0, 0);
        }
    }
    if trace.last().map(|t| t.queries) != Some(oracle.queries()) {
        trace.push(TracePoint {
            queries: oracle.queries(),
            distance: dist,
            success: true,
        });
    }
    let result = AttackResult {
        perturbation_norm: dist,
        adversarial: adv,
        success: true,
        restarts_used: 1,
        best_loss: -dist,
        queries: oracle.queries(),
        gradient_evals: 0,
        success_step: Some(trace[0].queries),
    };
    Ok((result, trace))
}

fn initial_adversarial(
    oracle: &mut DecisionOracle<'_>,
    x: &Tensor,
    goal: Goal,
    start: Option<&Tensor>,
    config: &BoundaryConfig,
    rng: &mut Rng,
) -> Result<Tensor> {
    let far = match start {
        Some(s) => {
            x.check_same_shape(s)?;
            if !goal.reached(query_init(oracle, s, 1)?) {
                return Err(Error::Initialization { tries: 1 });
            }
            s.clone()
        }
        None => {
            let mut found = None;
            for tries in 1..=config.init_tries {
                let data = (0..x.len()).map(|_| rng.random::<f64>()).collect();
                let cand = Tensor::new(x.shape().to_vec(), data)?;
                if goal.reached(query_init(oracle, &cand, tries)?) {
                    found = Some(cand);
                    break;
                }
            }
            found.ok_or(Error::Initialization {
                tries: config.init_tries,
            })?
        }
    };
    // bisect on the segment from x (assumed not adversarial) to the start
    let dir = far.sub(x)?;
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..config.blend_steps {
        if oracle.remaining() == 0 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if goal.reached(oracle.query(&x.add_scaled(&dir, mid)?)?) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    x.add_scaled(&dir, hi)
}

fn query_init(oracle: &mut DecisionOracle<'_>, p: &Tensor, tries: usize) -> Result<usize> {
    oracle.query(p).map_err(|e| match e {
        Error::BudgetExhausted { .. } => Error::Initialization { tries },
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blackbox::Sampler;
    use crate::models::MlpClassifier;
    use crate::rng::seeded;

    fn linear(a: &[f64], b: f64) -> MlpClassifier {
        let mut w = Vec::new();
        for ai in a {
            w.extend([0.0, *ai]);
        }
        MlpClassifier::linear(
            Tensor::matrix(a.len(), 2, w).unwrap(),
            Tensor::vector(vec![0.0, b]),
        )
        .unwrap()
    }

    #[test]
    fn contraction_arithmetic() {
        // d = 10, ε = 0.01 → 9.9
        let d: f64 = 10.0;
        assert!((d * (1.0 - 0.01) - 9.9).abs() < 1e-12);
    }

    #[test]
    fn linear_distance_approaches_hyperplane() {
        let a = [0.9, -0.4, 0.3, 0.7, -0.2, 0.5, 0.1, -0.6, 0.4, 0.3];
        let m = linear(&a, -1.2);
        let x = Tensor::vector(vec![0.4; 10]);
        assert_eq!(m.predict(&x).unwrap(), 0);
        let s: f64 = a.iter().map(|v| v * 0.4).sum::<f64>() - 1.2;
        let analytic = -s / a.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut o = DecisionOracle::new(&m, 2000);
        let mut smp = Sampler::gaussian(seeded(5));
        let (r, trace) = boundary_attack(
            &mut o,
            &x,
            Goal::untargeted(0),
            None,
            &mut smp,
            &BoundaryConfig::default(),
            &mut seeded(6),
        )
        .unwrap();
        assert_eq!(r.queries, 2000);
        assert_eq!(m.predict(&r.adversarial).unwrap(), 1);
        assert!(
            r.perturbation_norm <= 1.1 * analytic,
            "{} vs {analytic}",
            r.perturbation_norm
        );
        for w in trace.windows(2) {
            assert!(w[1].distance <= w[0].distance);
        }
    }

    #[test]
    fn init_failure_is_reported() {
        // a constant model never leaves class 0
        let m = MlpClassifier::zeros(&[3, 4, 2]).unwrap();
        let x = Tensor::vector(vec![0.5; 3]);
        let mut o = DecisionOracle::new(&m, 10_000);
        let mut smp = Sampler::gaussian(seeded(0));
        let r = boundary_attack(
            &mut o,
            &x,
            Goal::untargeted(0),
            None,
            &mut smp,
            &BoundaryConfig::default(),
            &mut seeded(0),
        );
        assert!(matches!(r, Err(Error::Initialization { tries: 1000 })));
    }

    #[test]
    fn targeted_start_must_hit_target() {
        let m = linear(&[1.0, 1.0], -1.0);
        let x = Tensor::vector(vec![0.1, 0.1]);
        let bad = Tensor::vector(vec![0.2, 0.2]);
        let mut o = DecisionOracle::new(&m, 100);
        let mut smp = Sampler::gaussian(seeded(0));
        let r = boundary_attack(
            &mut o,
            &x,
            Goal::targeted(0, 1),
            Some(&bad),
            &mut smp,
            &BoundaryConfig::default(),
            &mut seeded(0),
        );
        assert!(matches!(r, Err(Error::Initialization { tries: 1 })));
    }
}
