//! Query-counted black-box attacks: SimBA, the Boundary Attack and RGF, each
//! with a pluggable direction sampler.

mod boundary;
mod oracle;
mod rgf;
mod sampler;
mod simba;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::numcore::{argmax, margin_loss, softmax_cross_entropy};

pub use boundary::{boundary_attack, BoundaryConfig};
pub use oracle::{DecisionOracle, ScoreOracle};
pub use rgf::{rgf_attack, rgf_estimate_gradient, RgfConfig};
pub use sampler::{DirectionSource, Sampler, SamplerKind};
pub use simba::{simba_attack, SimbaConfig};

/// Attack goal in terms of the true label `label`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Goal {
    pub label: usize,
    pub target: Option<usize>,
}

impl Goal {
    pub fn untargeted(label: usize) -> Self {
        Self {
            label,
            target: None,
        }
    }

    pub fn targeted(label: usize, target: usize) -> Self {
        Self {
            label,
            target: Some(target),
        }
    }

    /// Whether a predicted class fulfils the goal.
    pub fn reached(&self, predicted: usize) -> bool {
        match self.target {
            None => predicted != self.label,
            Some(t) => predicted == t,
        }
    }

    /// Score objective (higher is better for the attacker): the margin loss
    /// when untargeted, negative cross-entropy toward the target otherwise.
    pub fn objective(&self, logits: &[f64]) -> Result<f64> {
        match self.target {
            None => margin_loss(logits, self.label),
            Some(t) => Ok(-softmax_cross_entropy(logits, t)?),
        }
    }

    pub fn reached_by_logits(&self, logits: &[f64]) -> bool {
        self.reached(argmax(logits))
    }
}

/// One point on a perturbation-vs-query curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub queries: usize,
    /// ℓ2 distance from the clean input.
    pub distance: f64,
    pub success: bool,
}
