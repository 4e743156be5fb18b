use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// A model that can record its forward pass on a [`Tape`].
pub trait Differentiable {
    fn input_dim(&self) -> usize;

    /// Records the forward pass of `input` (`[batch, D]`) and returns the logits
    /// node plus one node per parameter tensor, in registry order. Parameters
    /// are recorded as constants unless `track_params` is set.
    fn record(&self, tape: &mut Tape, input: Var, track_params: bool) -> Result<(Var, Vec<Var>)>;
}

/// Scalar head applied per row and summed over the batch.
#[derive(Clone, Debug, PartialEq)]
pub enum Head {
    CrossEntropy(Vec<usize>),
    Margin(Vec<usize>),
    /// `w_d · f(x)`.
    Linear(Vec<f64>),
}

impl Head {
    pub fn cross_entropy(label: usize) -> Self {
        Head::CrossEntropy(vec![label])
    }

    pub fn margin(label: usize) -> Self {
        Head::Margin(vec![label])
    }

    pub fn linear(direction: &[f64]) -> Self {
        Head::Linear(direction.to_vec())
    }

    fn apply(&self, tape: &mut Tape, logits: Var) -> Result<Var> {
        let rows = match self {
            Head::CrossEntropy(labels) => tape.cross_entropy(logits, labels)?,
            Head::Margin(labels) => tape.margin(logits, labels)?,
            Head::Linear(w) => tape.row_dot(logits, w)?,
        };
        Ok(tape.sum(rows))
    }
}

/// Gradient of a scalar head.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    pub wrt_input: Tensor,
    /// Flattened parameter gradients in registry order; empty when parameters
    /// were not tracked.
    pub wrt_params: Vec<f64>,
}

fn as_batch(x: &Tensor, dim: usize) -> Result<Tensor> {
    let (rows, cols) = x.as_matrix_dims()?;
    if cols != dim {
        return Err(Error::Dimension(format!(
            "input has {cols} features, model expects {dim}"
        )));
    }
    x.clone().reshape(vec![rows, cols])
}

fn evaluate<M: Differentiable + ?Sized>(
    model: &M,
    x: &Tensor,
    head: &Head,
    track_params: bool,
) -> Result<(f64, Gradient)> {
    evaluate_with_logits(model, x, head, track_params).map(|(v, g, _)| (v, g))
}

fn evaluate_with_logits<M: Differentiable + ?Sized>(
    model: &M,
    x: &Tensor,
    head: &Head,
    track_params: bool,
) -> Result<(f64, Gradient, Tensor)> {
    let mut tape = Tape::new();
    let input = tape.leaf(as_batch(x, model.input_dim())?);
    let (logits, params) = model.record(&mut tape, input, track_params)?;
    let out = head.apply(&mut tape, logits)?;
    let value = tape.value(out).data()[0];
    let logits_value = tape.value(logits).clone();
    let mut grads = tape.backward(out)?;
    let wrt_input = grads
        .take(input)
        .unwrap_or_else(|| Tensor::zeros(tape.value(input).shape()))
        .reshape(x.shape().to_vec())?;
    let mut wrt_params = Vec::new();
    if track_params {
        for p in params {
            match grads.take(p) {
                Some(g) => wrt_params.extend_from_slice(g.data()),
                None => wrt_params.extend(std::iter::repeat_n(0.0, tape.value(p).len())),
            }
        }
    }
    Ok((
        value,
        Gradient {
            wrt_input,
            wrt_params,
        },
        logits_value,
    ))
}

/// Head value and its exact gradient with respect to the input.
pub fn value_and_input_grad<M: Differentiable + ?Sized>(
    model: &M,
    x: &Tensor,
    head: &Head,
) -> Result<(f64, Gradient)> {
    evaluate(model, x, head, false)
}

/// [`value_and_input_grad`] that also hands back the logits (`[batch, C]`).
pub fn value_input_grad_and_logits<M: Differentiable + ?Sized>(
    model: &M,
    x: &Tensor,
    head: &Head,
) -> Result<(f64, Gradient, Tensor)> {
    evaluate_with_logits(model, x, head, false)
}

/// Head value with gradients for both the input and every parameter.
pub fn value_and_full_grad<M: Differentiable + ?Sized>(
    model: &M,
    x: &Tensor,
    head: &Head,
) -> Result<(f64, Gradient)> {
    evaluate(model, x, head, true)
}

/// Central-difference gradient of `eval` at `x`.
pub fn finite_diff_grad(eval: impl Fn(&Tensor) -> f64, x: &Tensor, step: f64) -> Result<Tensor> {
    if !(step > 0.0) {
        return Err(Error::InvalidInput(format!(
            "step must be positive, got {step}"
        )));
    }
    let mut probe = x.clone();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let up = eval(&probe);
        probe.data_mut()[i] = orig - step;
        let down = eval(&probe);
        probe.data_mut()[i] = orig;
        out.push((up - down) / (2.0 * step));
    }
    Tensor::new(x.shape().to_vec(), out)
}
