use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Piecewise-constant schedule: each `(from, value)` entry applies from step
/// (or epoch) `from` until the next entry's threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(usize, f64)>", into = "Vec<(usize, f64)>")]
pub struct Schedule(Vec<(usize, f64)>);

impl Schedule {
    pub fn new(entries: Vec<(usize, f64)>) -> Result<Self> {
        match entries.first() {
            None => return Err(Error::InvalidInput("empty schedule".into())),
            Some((0, _)) => {}
            Some((t, _)) => {
                return Err(Error::InvalidInput(format!(
                    "schedule must start at 0, starts at {t}"
                )))
            }
        }
        if entries.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::InvalidInput(
                "schedule thresholds must be strictly increasing".into(),
            ));
        }
        if entries.iter().any(|&(_, v)| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidInput(
                "schedule values must be positive".into(),
            ));
        }
        Ok(Self(entries))
    }

    pub fn constant(value: f64) -> Self {
        Self::new(vec![(0, value)]).expect("positive constant schedule")
    }

    pub fn at(&self, step: usize) -> f64 {
        self.0
            .iter()
            .take_while(|&&(from, _)| from <= step)
            .last()
            .map(|&(_, v)| v)
            .unwrap_or(self.0[0].1)
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.0
    }
}

impl TryFrom<Vec<(usize, f64)>> for Schedule {
    type Error = Error;

    fn try_from(v: Vec<(usize, f64)>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<Schedule> for Vec<(usize, f64)> {
    fn from(s: Schedule) -> Self {
        s.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tuned_cifar_shape() {
        let s = Schedule::new(vec![(0, 8.0), (46, 0.8), (92, 0.08)]).unwrap();
        assert_eq!(s.at(0), 8.0);
        assert_eq!(s.at(45), 8.0);
        assert_eq!(s.at(46), 0.8);
        assert_eq!(s.at(91), 0.8);
        assert_eq!(s.at(139), 0.08);
    }

    #[test]
    fn rejects_bad_schedules() {
        assert!(Schedule::new(vec![]).is_err());
        assert!(Schedule::new(vec![(1, 0.1)]).is_err());
        assert!(Schedule::new(vec![(0, 0.1), (0, 0.2)]).is_err());
        assert!(Schedule::new(vec![(0, -0.1)]).is_err());
    }
}
