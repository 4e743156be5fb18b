//! Tensor-level reverse-mode differentiation.
//!
//! Operations are recorded on a [`Tape`] as they are evaluated; [`Tape::backward`]
//! walks the record in reverse and accumulates adjoints for every node.

use super::ops::{self, rival_class, softmax};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Const,
    Affine {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Relu(Var),
    RowDot {
        input: Var,
        weights: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
    },
    Margin {
        logits: Var,
        labels: Vec<usize>,
        rivals: Vec<usize>,
    },
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn batch_cols(t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [b, c] => Ok((*b, *c)),
        s => Err(Error::Dimension(format!("expected [batch, n], got {s:?}"))),
    }
}

fn check_labels(labels: &[usize], batch: usize, classes: usize) -> Result<()> {
    if labels.len() != batch {
        return Err(Error::Dimension(format!(
            "{} labels for a batch of {batch}",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Index {
            index: bad,
            len: classes,
        });
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// A leaf that takes part in the computation but receives no adjoint.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Const)
    }

    fn is_const(&self, v: Var) -> bool {
        matches!(self.nodes[v.0].op, Op::Const)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn affine(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let out = ops::affine(self.value(input), self.value(weight), self.value(bias))?;
        Ok(self.push(
            out,
            Op::Affine {
                input,
                weight,
                bias,
            },
        ))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let out = ops::relu(self.value(input));
        self.push(out, Op::Relu(input))
    }

    /// Per-row `w · z` for `z: [batch, n]`, giving `[batch]`.
    pub fn row_dot(&mut self, input: Var, weights: &[f64]) -> Result<Var> {
        let (batch, n) = batch_cols(self.value(input))?;
        if weights.len() != n {
            return Err(Error::Dimension(format!(
                "direction of length {} for {n} outputs",
                weights.len()
            )));
        }
        let vals = self
            .value(input)
            .rows()
            .map(|r| super::tensor::dot(r, weights))
            .collect();
        let out = Tensor::new(vec![batch], vals)?;
        Ok(self.push(
            out,
            Op::RowDot {
                input,
                weights: weights.to_vec(),
            },
        ))
    }

    /// Per-row softmax cross-entropy, `[batch]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (batch, c) = batch_cols(self.value(logits))?;
        check_labels(labels, batch, c)?;
        let vals = self
            .value(logits)
            .rows()
            .zip(labels)
            .map(|(r, &y)| ops::softmax_cross_entropy(r, y))
            .collect::<Result<Vec<_>>>()?;
        let out = Tensor::new(vec![batch], vals)?;
        Ok(self.push(
            out,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
            },
        ))
    }

    /// Per-row margin loss, `[batch]`. The rival class is fixed at record time
    /// with lowest-index tie-breaking, which also selects the subgradient.
    pub fn margin(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (batch, c) = batch_cols(self.value(logits))?;
        if c < 2 {
            return Err(Error::InvalidInput("margin loss needs 2+ classes".into()));
        }
        check_labels(labels, batch, c)?;
        let z = self.value(logits);
        let rivals: Vec<usize> = z
            .rows()
            .zip(labels)
            .map(|(r, &y)| rival_class(r, y))
            .collect();
        let vals = z
            .rows()
            .zip(labels.iter().zip(&rivals))
            .map(|(r, (&y, &k))| r[k] - r[y])
            .collect();
        let out = Tensor::new(vec![batch], vals)?;
        Ok(self.push(
            out,
            Op::Margin {
                logits,
                labels: labels.to_vec(),
                rivals,
            },
        ))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let s = self.value(input).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(input))
    }

    /// Adjoints of a scalar output with respect to every recorded node.
    pub fn backward(&self, output: Var) -> Result<Grads> {
        if self.value(output).len() != 1 {
            return Err(Error::Dimension(format!(
                "backward needs a scalar output, got shape {:?}",
                self.value(output).shape()
            )));
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        adj[output.0] = Some(Tensor::full(self.value(output).shape(), 1.0));

        for idx in (0..=output.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    adj[idx] = Some(g);
                    continue;
                }
                Op::Const => continue,
                Op::Affine {
                    input,
                    weight,
                    bias,
                } => {
                    let x = self.value(*input);
                    let w = self.value(*weight);
                    let (batch, m) = x.as_matrix_dims()?;
                    let n = w.shape()[1];
                    let gd = g.data();
                    let wd = w.data();
                    // dx = g · W^T
                    let mut dx = vec![0.0; batch * m];
                    for b in 0..batch {
                        let grow = &gd[b * n..(b + 1) * n];
                        for i in 0..m {
                            dx[b * m + i] = super::tensor::dot(grow, &wd[i * n..(i + 1) * n]);
                        }
                    }
                    accumulate(&mut adj, *input, Tensor::new(x.shape().to_vec(), dx)?)?;
                    if self.is_const(*weight) && self.is_const(*bias) {
                        continue;
                    }
                    // dW = x^T · g
                    let mut dw = vec![0.0; m * n];
                    for (b, xrow) in x.rows().enumerate() {
                        let grow = &gd[b * n..(b + 1) * n];
                        for (i, &xi) in xrow.iter().enumerate() {
                            if xi == 0.0 {
                                continue;
                            }
                            for (d, &gj) in dw[i * n..(i + 1) * n].iter_mut().zip(grow) {
                                *d += xi * gj;
                            }
                        }
                    }
                    let mut db = vec![0.0; n];
                    for grow in gd.chunks(n) {
                        for (d, &gj) in db.iter_mut().zip(grow) {
                            *d += gj;
                        }
                    }
                    accumulate(&mut adj, *weight, Tensor::new(vec![m, n], dw)?)?;
                    accumulate(&mut adj, *bias, Tensor::vector(db))?;
                }
                Op::Relu(input) => {
                    let x = self.value(*input);
                    let dx: Vec<f64> = x
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&v, &gv)| if v > 0.0 { gv } else { 0.0 })
                        .collect();
                    accumulate(&mut adj, *input, Tensor::new(x.shape().to_vec(), dx)?)?;
                }
                Op::RowDot { input, weights } => {
                    let x = self.value(*input);
                    let mut dx = Vec::with_capacity(x.len());
                    for &gb in g.data() {
                        dx.extend(weights.iter().map(|w| gb * w));
                    }
                    accumulate(&mut adj, *input, Tensor::new(x.shape().to_vec(), dx)?)?;
                }
                Op::CrossEntropy { logits, labels } => {
                    let z = self.value(*logits);
                    let mut dz = Vec::with_capacity(z.len());
                    for ((row, &y), &gb) in z.rows().zip(labels).zip(g.data()) {
                        let p = softmax(row);
                        dz.extend(
                            p.iter()
                                .enumerate()
                                .map(|(i, &pi)| gb * (pi - if i == y { 1.0 } else { 0.0 })),
                        );
                    }
                    accumulate(&mut adj, *logits, Tensor::new(z.shape().to_vec(), dz)?)?;
                }
                Op::Margin {
                    logits,
                    labels,
                    rivals,
                } => {
                    let z = self.value(*logits);
                    let c = z.shape()[1];
                    let mut dz = vec![0.0; z.len()];
                    for (b, ((&y, &k), &gb)) in labels.iter().zip(rivals).zip(g.data()).enumerate()
                    {
                        dz[b * c + k] += gb;
                        dz[b * c + y] -= gb;
                    }
                    accumulate(&mut adj, *logits, Tensor::new(z.shape().to_vec(), dz)?)?;
                }
                Op::Sum(input) => {
                    let x = self.value(*input);
                    accumulate(&mut adj, *input, Tensor::full(x.shape(), g.data()[0]))?;
                }
            }
        }
        Ok(Grads(adj))
    }
}

fn accumulate(adj: &mut [Option<Tensor>], v: Var, g: Tensor) -> Result<()> {
    adj[v.0] = Some(match adj[v.0].take() {
        Some(prev) => prev.add(&g)?,
        None => g,
    });
    Ok(())
}

/// Adjoints produced by [`Tape::backward`]. Only leaves keep theirs.
#[derive(Debug)]
pub struct Grads(Vec<Option<Tensor>>);

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.0.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.0.get_mut(v.0).and_then(|g| g.take())
    }
}
