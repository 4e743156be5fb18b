//! White-box attacks: PGD with uniform / ODI / MultiTargeted starts, C&W ℓ2,
//! and restart bookkeeping.

mod cw;
mod pgd;
mod project;
mod restarts;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schedule::Schedule;

pub use cw::{cw_attack, cw_naive_init, CwConfig, CwInit};
pub(crate) use pgd::pgd_linf_batch;
pub use pgd::{odi_init, pgd_attack, uniform_init};
pub use project::{in_ball, project_ball};
pub use restarts::{
    run_cw_with_restarts, run_pgd_with_restarts, run_with_restarts, Aggregate, RestartOutcome,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Norm {
    Linf,
    L2,
}

impl Norm {
    pub fn distance(self, a: &crate::numcore::Tensor, b: &crate::numcore::Tensor) -> Result<f64> {
        match self {
            Norm::Linf => a.linf_distance(b),
            Norm::L2 => a.l2_distance(b),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Margin,
    CrossEntropy,
}

/// How each PGD step turns the gradient into an update.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// Sign of the gradient for ℓ∞, normalised gradient for ℓ2.
    Sign,
    /// Adam moments on the gradient; the schedule acts as the learning rate.
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InitKind {
    Uniform,
    Odi {
        steps: usize,
        step_size: f64,
    },
    /// ODI with `w_d = e_t - e_y`, the target `t` cycling with the restart index.
    MultiTargeted {
        steps: usize,
        step_size: f64,
    },
}

/// Number of ODI steps used unless configured otherwise.
pub const DEFAULT_ODI_STEPS: usize = 2;

impl InitKind {
    /// Two ODI steps with step size `ε`.
    pub fn odi_default(epsilon: f64) -> Self {
        InitKind::Odi {
            steps: DEFAULT_ODI_STEPS,
            step_size: epsilon,
        }
    }

    /// Gradient evaluations spent before the attack proper starts.
    pub fn gradient_cost(&self) -> usize {
        match self {
            InitKind::Uniform => 0,
            InitKind::Odi { steps, .. } | InitKind::MultiTargeted { steps, .. } => *steps,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WhiteboxAttackConfig {
    pub norm: Norm,
    pub epsilon: f64,
    /// Step size (or Adam learning rate) by PGD step index.
    pub step: Schedule,
    pub steps: usize,
    pub restarts: usize,
    pub loss: LossKind,
    pub optimizer: StepRule,
    pub init: InitKind,
    #[serde(default = "yes")]
    pub early_stop: bool,
}

fn yes() -> bool {
    true
}

impl WhiteboxAttackConfig {
    /// Naive PGD with the margin loss and a constant step.
    pub fn pgd(norm: Norm, epsilon: f64, step: f64, steps: usize, restarts: usize) -> Self {
        Self {
            norm,
            epsilon,
            step: Schedule::constant(step),
            steps,
            restarts,
            loss: LossKind::Margin,
            optimizer: StepRule::Sign,
            init: InitKind::Uniform,
            early_stop: true,
        }
    }

    pub fn with_init(mut self, init: InitKind) -> Self {
        self.init = init;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidInput("epsilon must be positive".into()));
        }
        if self.steps == 0 || self.restarts == 0 {
            return Err(Error::InvalidInput(
                "steps and restarts must be at least 1".into(),
            ));
        }
        if let InitKind::Odi { step_size, .. } | InitKind::MultiTargeted { step_size, .. } =
            self.init
        {
            if !(step_size > 0.0) {
                return Err(Error::InvalidInput("ODI step size must be positive".into()));
            }
        }
        Ok(())
    }

    /// Gradient evaluations per restart: initialisation plus PGD steps.
    pub fn gradient_budget(&self) -> usize {
        self.init.gradient_cost() + self.steps
    }
}
