//! Output diversified sampling.
//!
//! A random direction `w_d` in logit space is pulled back to the input through
//! the gradient of `w_d · f(x)`; the normalised result is the ODS vector.

use std::sync::Arc;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::models::MlpClassifier;
use crate::numcore::{value_and_input_grad, Head, Tensor};
use crate::rng::Rng;

/// Output-space direction `w_d`.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectionVector(Vec<f64>);

impl DirectionVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidInput(
                "direction needs at least 2 classes".into(),
            ));
        }
        if values.iter().all(|&v| v == 0.0) {
            return Err(Error::InvalidInput("direction must not be all zero".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("direction must be finite".into()));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(self.0.iter().map(|v| v * c).collect())
    }
}

/// Draws `w_d ~ U(-1, 1)^C`, redrawing in the (measure-zero) all-zero case.
pub fn sample_direction(classes: usize, rng: &mut Rng) -> Result<DirectionVector> {
    if classes < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 classes, got {classes}"
        )));
    }
    loop {
        let v: Vec<f64> = (0..classes).map(|_| rng.random_range(-1.0..=1.0)).collect();
        if v.iter().any(|&x| x != 0.0) {
            return Ok(DirectionVector(v));
        }
    }
}

/// `∇_x(w_d · f(x)) / ‖∇_x(w_d · f(x))‖₂`.
pub fn ods_vector(
    x: &Tensor,
    model: &MlpClassifier,
    direction: &DirectionVector,
) -> Result<Tensor> {
    if direction.len() != model.num_classes() {
        return Err(Error::Dimension(format!(
            "direction has {} entries, model has {} classes",
            direction.len(),
            model.num_classes()
        )));
    }
    let (_, grad) = value_and_input_grad(model, x, &Head::linear(direction.values()))?;
    let norm = grad.wrt_input.l2_norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::DegenerateDirection);
    }
    Ok(grad.wrt_input.scale(1.0 / norm))
}

/// Redraws before giving up on a zero gradient.
pub const MAX_DIRECTION_RESAMPLES: usize = 10;

/// Uniformly random unit vector with the shape of `like`.
pub fn random_unit(like: &Tensor, rng: &mut Rng) -> Tensor {
    loop {
        let v: Vec<f64> = (0..like.len())
            .map(|_| StandardNormal.sample(rng))
            .collect();
        let t = Tensor::new(like.shape().to_vec(), v).expect("same length");
        let n = t.l2_norm();
        if n > 0.0 {
            return t.scale(1.0 / n);
        }
    }
}

/// ODS vector for a freshly sampled direction. Zero gradients trigger up to
/// [`MAX_DIRECTION_RESAMPLES`] redraws, then a random unit vector.
pub fn sample_ods_vector(x: &Tensor, model: &MlpClassifier, rng: &mut Rng) -> Result<Tensor> {
    for _ in 0..MAX_DIRECTION_RESAMPLES {
        let w = sample_direction(model.num_classes(), rng)?;
        match ods_vector(x, model, &w) {
            Err(Error::DegenerateDirection) => continue,
            other => return other,
        }
    }
    Ok(random_unit(x, rng))
}

/// ODS vector for a fixed direction, falling back to a random unit vector when
/// the gradient vanishes.
pub fn ods_vector_or_random(
    x: &Tensor,
    model: &MlpClassifier,
    direction: &DirectionVector,
    rng: &mut Rng,
) -> Result<Tensor> {
    match ods_vector(x, model, direction) {
        Err(Error::DegenerateDirection) => Ok(random_unit(x, rng)),
        other => other,
    }
}

/// MultiTargeted direction: `+1` at `target`, `-1` at `label`, zero elsewhere.
pub fn multitargeted_direction(
    label: usize,
    target: usize,
    classes: usize,
) -> Result<DirectionVector> {
    if label == target {
        return Err(Error::InvalidInput(
            "target must differ from the label".into(),
        ));
    }
    for idx in [label, target] {
        if idx >= classes {
            return Err(Error::Index {
                index: idx,
                len: classes,
            });
        }
    }
    let mut v = vec![0.0; classes];
    v[target] = 1.0;
    v[label] = -1.0;
    DirectionVector::new(v)
}

/// The `k`-th target class other than `label`, cycling through `0..classes`.
pub fn cycled_target(label: usize, k: usize, classes: usize) -> usize {
    let t = k % (classes - 1);
    if t >= label {
        t + 1
    } else {
        t
    }
}

/// Nonempty set of surrogates sharing input dimension and class count.
#[derive(Clone, Debug)]
pub struct SurrogateEnsemble {
    models: Vec<Arc<MlpClassifier>>,
}

impl SurrogateEnsemble {
    pub fn new(models: Vec<Arc<MlpClassifier>>) -> Result<Self> {
        let first = models
            .first()
            .ok_or_else(|| Error::InvalidInput("surrogate ensemble is empty".into()))?;
        let (d, c) = (first.input_dim(), first.num_classes());
        if models
            .iter()
            .any(|m| m.input_dim() != d || m.num_classes() != c)
        {
            return Err(Error::Dimension(
                "surrogates must share input dimension and class count".into(),
            ));
        }
        Ok(Self { models })
    }

    pub fn from_models(models: Vec<MlpClassifier>) -> Result<Self> {
        Self::new(models.into_iter().map(Arc::new).collect())
    }

    pub fn models(&self) -> &[Arc<MlpClassifier>] {
        &self.models
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.models[0].input_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.models[0].num_classes()
    }
}

/// Uniform choice of a surrogate.
pub fn pick_surrogate<'a>(ensemble: &'a SurrogateEnsemble, rng: &mut Rng) -> &'a MlpClassifier {
    let i = if ensemble.len() == 1 {
        0
    } else {
        rng.random_range(0..ensemble.len())
    };
    &ensemble.models[i]
}
