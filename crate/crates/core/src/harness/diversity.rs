use std::path::Path;

use serde::{Deserialize, Serialize};

use super::pipeline::write_rows;
use crate::blackbox::{DirectionSource, Sampler};
use crate::error::{Error, Result};
use crate::metrics::pairwise_output_distance;
use crate::models::MlpClassifier;
use crate::numcore::Tensor;
use crate::ods::{random_unit, SurrogateEnsemble};
use crate::rng::{derive_seed, seeded};
use crate::whitebox::{odi_init, uniform_init, InitKind, Norm, WhiteboxAttackConfig};

/// Mean pairwise output distance of a treatment and its baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiversityPair {
    pub treatment: String,
    pub baseline: String,
    pub treatment_mean: f64,
    pub baseline_mean: f64,
    pub inputs: usize,
}

impl DiversityPair {
    pub fn ratio(&self) -> f64 {
        self.treatment_mean / self.baseline_mean
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub start: DiversityPair,
    pub transfer: DiversityPair,
}

#[derive(Serialize)]
struct Row<'a> {
    measure: &'a str,
    treatment: &'a str,
    baseline: &'a str,
    inputs: usize,
    treatment_mean: f64,
    baseline_mean: f64,
    ratio: f64,
}

impl DiversityReport {
    pub fn save(&self, path: &Path) -> Result<()> {
        let rows: Vec<Row<'_>> = [("start", &self.start), ("transfer", &self.transfer)]
            .into_iter()
            .map(|(m, p)| Row {
                measure: m,
                treatment: &p.treatment,
                baseline: &p.baseline,
                inputs: p.inputs,
                treatment_mean: p.treatment_mean,
                baseline_mean: p.baseline_mean,
                ratio: p.ratio(),
            })
            .collect();
        write_rows(path, &rows, &[])
    }
}

fn pair(
    treatment: &str,
    baseline: &str,
    inputs: usize,
    mut per_input: impl FnMut(usize) -> Result<(f64, f64)>,
) -> Result<DiversityPair> {
    if inputs == 0 {
        return Err(Error::EmptyDataset);
    }
    let (mut a, mut b) = (0.0, 0.0);
    for i in 0..inputs {
        let (t, u) = per_input(i)?;
        a += t;
        b += u;
    }
    Ok(DiversityPair {
        treatment: treatment.into(),
        baseline: baseline.into(),
        treatment_mean: a / inputs as f64,
        baseline_mean: b / inputs as f64,
        inputs,
    })
}

/// Output diversity of `restarts` ODI starts against as many uniform starts
/// in the same ε-ball.
pub fn odi_diversity(
    model: &MlpClassifier,
    inputs: &[(Tensor, usize)],
    norm: Norm,
    epsilon: f64,
    restarts: usize,
    seed: u64,
) -> Result<DiversityPair> {
    let cfg = WhiteboxAttackConfig::pgd(norm, epsilon, epsilon, 1, restarts)
        .with_init(InitKind::odi_default(epsilon));
    pair("odi", "uniform", inputs.len(), |i| {
        let (x, y) = &inputs[i];
        let mut rng = seeded(derive_seed(seed, &[i as u64]));
        let odi = (0..restarts)
            .map(|r| odi_init(x, *y, model, &cfg, r, &mut rng).map(|(p, _)| p))
            .collect::<Result<Vec<_>>>()?;
        let uniform: Vec<Tensor> = (0..restarts)
            .map(|_| uniform_init(x, epsilon, norm, &mut rng))
            .collect();
        Ok((
            pairwise_output_distance(&odi, model)?,
            pairwise_output_distance(&uniform, model)?,
        ))
    })
}

/// Output diversity on `target` of perturbations of length `scale` along
/// surrogate ODS directions against random unit directions.
pub fn transfer_diversity(
    target: &MlpClassifier,
    surrogates: &SurrogateEnsemble,
    inputs: &[Tensor],
    scale: f64,
    samples: usize,
    seed: u64,
) -> Result<DiversityPair> {
    pair("ods", "gaussian", inputs.len(), |i| {
        let x = &inputs[i];
        let mut sampler = Sampler::ods(
            surrogates.clone(),
            seeded(derive_seed(seed, &[i as u64, 0])),
        );
        let mut rng = seeded(derive_seed(seed, &[i as u64, 1]));
        let ods = (0..samples)
            .map(|_| x.add_scaled(&sampler.draw(x, 0)?, scale))
            .collect::<Result<Vec<_>>>()?;
        let gauss = (0..samples)
            .map(|_| x.add_scaled(&random_unit(x, &mut rng), scale))
            .collect::<Result<Vec<_>>>()?;
        Ok((
            pairwise_output_distance(&ods, target)?,
            pairwise_output_distance(&gauss, target)?,
        ))
    })
}
