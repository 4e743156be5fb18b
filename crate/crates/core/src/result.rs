use crate::numcore::Tensor;

/// Outcome of one attack run (white-box or black-box).
#[derive(Clone, Debug, PartialEq)]
pub struct AttackResult {
    pub adversarial: Tensor,
    pub success: bool,
    /// Distance from the clean input in the attack's norm (ℓ2 for unbounded attacks).
    pub perturbation_norm: f64,
    pub restarts_used: usize,
    /// Best attack objective observed (higher is better for the attacker).
    pub best_loss: f64,
    /// Target-model queries; zero for white-box attacks.
    pub queries: usize,
    /// Target-model gradient evaluations; zero for black-box attacks.
    pub gradient_evals: usize,
    /// Step (or query count, for black-box attacks) at which success was first observed.
    pub success_step: Option<usize>,
}
