//! Dense tensors, the handful of ops a fully connected classifier needs, and
//! reverse-mode differentiation over them.

mod grad;
mod ops;
mod tape;
mod tensor;

pub use grad::{
    finite_diff_grad, value_and_full_grad, value_and_input_grad, value_input_grad_and_logits,
    Differentiable, Gradient, Head,
};
pub use ops::{
    affine, log_sum_exp, margin_loss, predict_row, relu, rival_class, softmax,
    softmax_cross_entropy,
};
pub use tape::{Grads, Tape, Var};
pub use tensor::{argmax, dot, l2_norm, Tensor};
