use crate::error::{Error, Result};
use crate::models::MlpClassifier;
use crate::numcore::Tensor;

/// Query counter shared by both oracle kinds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Counter {
    used: usize,
    budget: usize,
}

impl Counter {
    fn charge(&mut self) -> Result<()> {
        if self.used >= self.budget {
            return Err(Error::BudgetExhausted {
                budget: self.budget,
            });
        }
        self.used += 1;
        Ok(())
    }
}

/// Score-based access: each call returns the logits and costs one query.
pub struct ScoreOracle<'m> {
    model: &'m MlpClassifier,
    counter: Counter,
}

impl<'m> ScoreOracle<'m> {
    pub fn new(model: &'m MlpClassifier, budget: usize) -> Self {
        Self {
            model,
            counter: Counter { used: 0, budget },
        }
    }

    pub fn query(&mut self, x: &Tensor) -> Result<Vec<f64>> {
        self.counter.charge()?;
        self.model.logits(x.data())
    }

    pub fn queries(&self) -> usize {
        self.counter.used
    }

    pub fn budget(&self) -> usize {
        self.counter.budget
    }

    pub fn remaining(&self) -> usize {
        self.counter.budget - self.counter.used
    }

    pub fn input_dim(&self) -> usize {
        self.model.input_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.model.num_classes()
    }
}

/// Decision-based access: each call returns only the predicted label.
///
/// ```
/// # use ods_core::{blackbox::DecisionOracle, MlpClassifier, Tensor};
/// let model = MlpClassifier::new(&[2, 3], 0).unwrap();
/// let mut oracle = DecisionOracle::new(&model, 10);
/// let label: usize = oracle.query(&Tensor::vector(vec![0.5, 0.5])).unwrap();
/// assert!(label < 3);
/// ```
///
/// Logits are not reachable through it:
///
/// ```compile_fail
/// # use ods_core::{blackbox::DecisionOracle, MlpClassifier, Tensor};
/// let model = MlpClassifier::new(&[2, 3], 0).unwrap();
/// let mut oracle = DecisionOracle::new(&model, 10);
/// let logits: Vec<f64> = oracle.query(&Tensor::vector(vec![0.5, 0.5])).unwrap();
/// ```
pub struct DecisionOracle<'m> {
    model: &'m MlpClassifier,
    counter: Counter,
}

impl<'m> DecisionOracle<'m> {
    pub fn new(model: &'m MlpClassifier, budget: usize) -> Self {
        Self {
            model,
            counter: Counter { used: 0, budget },
        }
    }

    pub fn query(&mut self, x: &Tensor) -> Result<usize> {
        self.counter.charge()?;
        self.model.predict(x)
    }

    pub fn queries(&self) -> usize {
        self.counter.used
    }

    pub fn budget(&self) -> usize {
        self.counter.budget
    }

    pub fn remaining(&self) -> usize {
        self.counter.budget - self.counter.used
    }

    pub fn input_dim(&self) -> usize {
        self.model.input_dim()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counter_and_budget() {
        let m = MlpClassifier::new(&[3, 4, 2], 0).unwrap();
        let x = Tensor::vector(vec![0.1, 0.2, 0.3]);
        let mut o = ScoreOracle::new(&m, 2);
        assert_eq!(o.query(&x).unwrap(), m.logits(x.data()).unwrap());
        o.query(&x).unwrap();
        assert_eq!(o.queries(), 2);
        assert!(matches!(
            o.query(&x),
            Err(Error::BudgetExhausted { budget: 2 })
        ));
        assert_eq!(o.queries(), 2);

        let mut d = DecisionOracle::new(&m, 1);
        assert_eq!(d.query(&x).unwrap(), m.predict(&x).unwrap());
        assert!(d.query(&x).is_err());
        assert_eq!(d.queries(), 1);
    }
}
