use super::tensor::{argmax, Tensor};
use crate::error::{Error, Result};

/// `input · weight + bias` for `input: [batch, m]` (or `[m]`), `weight: [m, n]`, `bias: [n]`.
pub fn affine(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (batch, m) = input.as_matrix_dims()?;
    let (wm, n) = match weight.shape() {
        [a, b] => (*a, *b),
        s => {
            return Err(Error::Dimension(format!(
                "weight must be rank 2, got {s:?}"
            )))
        }
    };
    if wm != m {
        return Err(Error::Dimension(format!(
            "input has {m} columns but weight has {wm} rows"
        )));
    }
    if bias.shape() != [n] {
        return Err(Error::Dimension(format!(
            "bias shape {:?} does not match {n} outputs",
            bias.shape()
        )));
    }
    let w = weight.data();
    let mut out = Vec::with_capacity(batch * n);
    for row in input.rows() {
        let mut acc = bias.data().to_vec();
        for (i, &xi) in row.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let wrow = &w[i * n..(i + 1) * n];
            for (a, &wij) in acc.iter_mut().zip(wrow) {
                *a += xi * wij;
            }
        }
        out.extend_from_slice(&acc);
    }
    Tensor::matrix(batch, n, out)
}

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|v| v.max(0.0))
}

/// `log Σ exp(z_i)` with max subtraction.
pub fn log_sum_exp(logits: &[f64]) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|z| (z - lse).exp()).collect()
}

fn check_label(label: usize, classes: usize) -> Result<()> {
    if label >= classes {
        return Err(Error::Index {
            index: label,
            len: classes,
        });
    }
    Ok(())
}

/// `-log softmax(logits)[label]`.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> Result<f64> {
    check_label(label, logits.len())?;
    Ok(log_sum_exp(logits) - logits[label])
}

/// Index of the largest logit other than `label`, lowest index on ties.
pub fn rival_class(logits: &[f64], label: usize) -> usize {
    let mut best: Option<usize> = None;
    for (i, &v) in logits.iter().enumerate() {
        if i == label {
            continue;
        }
        match best {
            Some(b) if v <= logits[b] => {}
            _ => best = Some(i),
        }
    }
    best.expect("at least two classes")
}

/// `max_{i != label} logits[i] - logits[label]`.
pub fn margin_loss(logits: &[f64], label: usize) -> Result<f64> {
    if logits.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "margin loss needs at least 2 classes, got {}",
            logits.len()
        )));
    }
    check_label(label, logits.len())?;
    Ok(logits[rival_class(logits, label)] - logits[label])
}

pub fn predict_row(logits: &[f64]) -> usize {
    argmax(logits)
}
