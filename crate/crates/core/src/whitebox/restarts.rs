use rand::RngCore as _;
use serde::{Deserialize, Serialize};

use super::{cw_attack, odi_init, pgd_attack, CwConfig, WhiteboxAttackConfig};
use crate::error::{Error, Result};
use crate::models::MlpClassifier;
use crate::numcore::Tensor;
use crate::result::AttackResult;
use crate::rng::{seeded, Rng};

/// How per-restart results combine into one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregate {
    /// Success if any restart succeeds; later restarts are skipped.
    AnySuccess,
    /// Smallest perturbation among successful restarts; every restart runs.
    MinPerturbation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RestartOutcome {
    pub restart: usize,
    pub success: bool,
    pub perturbation_norm: f64,
    pub best_loss: f64,
    pub gradient_evals: usize,
}

impl RestartOutcome {
    fn of(restart: usize, r: &AttackResult) -> Self {
        Self {
            restart,
            success: r.success,
            perturbation_norm: r.perturbation_norm,
            best_loss: r.best_loss,
            gradient_evals: r.gradient_evals,
        }
    }
}

/// Runs `attack(restart, rng)` up to `restarts` times. Each restart gets its own
/// rng seeded from a value drawn up front from `rng`, so a restart's outcome
/// does not depend on how many restarts ran before it.
pub fn run_with_restarts(
    restarts: usize,
    aggregate: Aggregate,
    rng: &mut Rng,
    mut attack: impl FnMut(usize, &mut Rng) -> Result<AttackResult>,
) -> Result<(AttackResult, Vec<RestartOutcome>)> {
    if restarts == 0 {
        return Err(Error::InvalidInput("restarts must be at least 1".into()));
    }
    let seeds: Vec<u64> = (0..restarts).map(|_| rng.next_u64()).collect();
    let mut trace = Vec::with_capacity(restarts);
    let mut chosen: Option<AttackResult> = None;
    let mut evals = 0;
    for (r, seed) in seeds.into_iter().enumerate() {
        let res = attack(r, &mut seeded(seed))?;
        evals += res.gradient_evals;
        trace.push(RestartOutcome::of(r, &res));
        let better = match (&chosen, aggregate) {
            (None, _) => true,
            (Some(c), _) if res.success != c.success => res.success,
            (Some(c), Aggregate::MinPerturbation) if res.success => {
                res.perturbation_norm < c.perturbation_norm
            }
            (Some(c), _) => !c.success && res.best_loss > c.best_loss,
        };
        let stop = aggregate == Aggregate::AnySuccess && res.success;
        if better {
            chosen = Some(res);
        }
        if stop {
            break;
        }
    }
    let mut out = chosen.expect("at least one restart");
    out.restarts_used = trace.len();
    out.gradient_evals = evals;
    Ok((out, trace))
}

/// PGD with the configured initialisation, restarted `config.restarts` times.
/// ODI directions are taken from `target` itself.
pub fn run_pgd_with_restarts(
    target: &MlpClassifier,
    x: &Tensor,
    label: usize,
    config: &WhiteboxAttackConfig,
    rng: &mut Rng,
) -> Result<(AttackResult, Vec<RestartOutcome>)> {
    config.validate()?;
    run_with_restarts(config.restarts, Aggregate::AnySuccess, rng, |r, rng| {
        let (start, init_evals) = odi_init(x, label, target, config, r, rng)?;
        let mut res = pgd_attack(target, x, label, &start, config)?;
        res.gradient_evals += init_evals;
        Ok(res)
    })
}

/// C&W restarted `config.restarts` times, keeping the smallest successful perturbation.
pub fn run_cw_with_restarts(
    target: &MlpClassifier,
    x: &Tensor,
    label: usize,
    config: &CwConfig,
    rng: &mut Rng,
) -> Result<(AttackResult, Vec<RestartOutcome>)> {
    config.validate()?;
    run_with_restarts(
        config.restarts,
        Aggregate::MinPerturbation,
        rng,
        |r, rng| {
            let (start, init_evals) = config.start(target, x, label, r, rng)?;
            let mut res = cw_attack(target, x, label, &start, config)?;
            res.gradient_evals += init_evals;
            Ok(res)
        },
    )
}
