use rand::seq::SliceRandom as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Tensor;
use crate::ods::{
    self, cycled_target, multitargeted_direction, ods_vector_or_random, pick_surrogate,
    SurrogateEnsemble,
};
use crate::rng::Rng;

/// Source of candidate update directions for the black-box attacks.
pub trait DirectionSource {
    /// A unit-norm direction at the current point `x`; `label` is the true class.
    fn draw(&mut self, x: &Tensor, label: usize) -> Result<Tensor>;

    /// `count` directions at `x`. Independent draws unless overridden.
    fn draw_batch(&mut self, x: &Tensor, label: usize, count: usize) -> Result<Vec<Tensor>> {
        (0..count).map(|_| self.draw(x, label)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    PixelBasis,
    Gaussian,
    Ods,
    MultiTargeted,
}

enum Source {
    PixelBasis {
        order: Vec<usize>,
        pos: usize,
    },
    Gaussian,
    Ods(SurrogateEnsemble),
    MultiTargeted {
        ensemble: SurrogateEnsemble,
        draws: usize,
    },
}

pub struct Sampler {
    source: Source,
    rng: Rng,
}

impl Sampler {
    /// Standard basis vectors, without replacement within each pass over the coordinates.
    pub fn pixel_basis(rng: Rng) -> Self {
        Self {
            source: Source::PixelBasis {
                order: Vec::new(),
                pos: 0,
            },
            rng,
        }
    }

    /// Unit Gaussian directions; batches are orthonormalised.
    pub fn gaussian(rng: Rng) -> Self {
        Self {
            source: Source::Gaussian,
            rng,
        }
    }

    /// ODS vectors of a uniformly chosen surrogate for a fresh `w_d` per draw.
    pub fn ods(ensemble: SurrogateEnsemble, rng: Rng) -> Self {
        Self {
            source: Source::Ods(ensemble),
            rng,
        }
    }

    /// ODS vectors for `w_d = e_t - e_y`, with `t` cycling over the other classes per draw.
    pub fn multitargeted(ensemble: SurrogateEnsemble, rng: Rng) -> Self {
        Self {
            source: Source::MultiTargeted { ensemble, draws: 0 },
            rng,
        }
    }

    /// Builds a sampler of `kind`; surrogate-based kinds require `ensemble`.
    pub fn of_kind(
        kind: SamplerKind,
        ensemble: Option<&SurrogateEnsemble>,
        rng: Rng,
    ) -> Result<Self> {
        let need = || {
            ensemble
                .cloned()
                .ok_or_else(|| Error::InvalidInput(format!("{kind:?} sampler needs surrogates")))
        };
        Ok(match kind {
            SamplerKind::PixelBasis => Self::pixel_basis(rng),
            SamplerKind::Gaussian => Self::gaussian(rng),
            SamplerKind::Ods => Self::ods(need()?, rng),
            SamplerKind::MultiTargeted => Self::multitargeted(need()?, rng),
        })
    }

    fn gaussian_raw(&mut self, like: &Tensor) -> Tensor {
        let v = (0..like.len())
            .map(|_| StandardNormal.sample(&mut self.rng))
            .collect();
        Tensor::new(like.shape().to_vec(), v).expect("same length")
    }
}

fn check_dim(ensemble: &SurrogateEnsemble, x: &Tensor) -> Result<()> {
    if ensemble.input_dim() != x.len() {
        return Err(Error::Dimension(format!(
            "surrogates take {} inputs, got {}",
            ensemble.input_dim(),
            x.len()
        )));
    }
    Ok(())
}

impl DirectionSource for Sampler {
    fn draw(&mut self, x: &Tensor, label: usize) -> Result<Tensor> {
        match &mut self.source {
            Source::PixelBasis { order, pos } => {
                if order.len() != x.len() || *pos == order.len() {
                    *order = (0..x.len()).collect();
                    order.shuffle(&mut self.rng);
                    *pos = 0;
                }
                let mut e = Tensor::zeros(x.shape());
                e.data_mut()[order[*pos]] = 1.0;
                *pos += 1;
                Ok(e)
            }
            Source::Gaussian => Ok(ods::random_unit(x, &mut self.rng)),
            Source::Ods(ensemble) => {
                check_dim(ensemble, x)?;
                let model = pick_surrogate(ensemble, &mut self.rng);
                ods::sample_ods_vector(x, model, &mut self.rng)
            }
            Source::MultiTargeted { ensemble, draws } => {
                check_dim(ensemble, x)?;
                let c = ensemble.num_classes();
                let t = cycled_target(label, *draws, c);
                *draws += 1;
                let w = multitargeted_direction(label, t, c)?;
                let model = pick_surrogate(ensemble, &mut self.rng);
                ods_vector_or_random(x, model, &w, &mut self.rng)
            }
        }
    }

    fn draw_batch(&mut self, x: &Tensor, label: usize, count: usize) -> Result<Vec<Tensor>> {
        if !matches!(self.source, Source::Gaussian) {
            return (0..count).map(|_| self.draw(x, label)).collect();
        }
        // Gram-Schmidt over Gaussian draws; beyond the dimension a new
        // orthonormal block starts.
        let mut out: Vec<Tensor> = Vec::with_capacity(count);
        let mut block_start = 0;
        while out.len() < count {
            if out.len() - block_start == x.len() {
                block_start = out.len();
            }
            let mut v = self.gaussian_raw(x);
            for u in &out[block_start..] {
                let p = v.dot(u)?;
                v = v.add_scaled(u, -p)?;
            }
            let n = v.l2_norm();
            if n > 1e-8 {
                out.push(v.scale(1.0 / n));
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::MlpClassifier;
    use crate::rng::seeded;

    #[test]
    fn pixel_basis_covers_every_coordinate_per_pass() {
        let x = Tensor::zeros(&[7]);
        let mut s = Sampler::pixel_basis(seeded(1));
        for _ in 0..2 {
            let mut seen = vec![0; 7];
            for _ in 0..7 {
                let e = s.draw(&x, 0).unwrap();
                assert_eq!(e.data().iter().filter(|v| **v == 1.0).count(), 1);
                assert_eq!(e.data().iter().sum::<f64>(), 1.0);
                seen[e.data().iter().position(|v| *v == 1.0).unwrap()] += 1;
            }
            assert_eq!(seen, vec![1; 7]);
        }
    }

    #[test]
    fn gaussian_batches_are_orthonormal() {
        let x = Tensor::zeros(&[5]);
        let mut s = Sampler::gaussian(seeded(2));
        let b = s.draw_batch(&x, 0, 5).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let d = b[i].dot(&b[j]).unwrap();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((d - want).abs() < 1e-12);
            }
        }
        assert_eq!(s.draw_batch(&x, 0, 12).unwrap().len(), 12);
    }

    #[test]
    fn all_kinds_return_unit_vectors() {
        let ens = SurrogateEnsemble::from_models(vec![
            MlpClassifier::new(&[6, 8, 3], 1).unwrap(),
            MlpClassifier::new(&[6, 8, 3], 2).unwrap(),
        ])
        .unwrap();
        let x = Tensor::vector(vec![0.3, 0.5, 0.1, 0.9, 0.4, 0.6]);
        for kind in [
            SamplerKind::PixelBasis,
            SamplerKind::Gaussian,
            SamplerKind::Ods,
            SamplerKind::MultiTargeted,
        ] {
            let mut s = Sampler::of_kind(kind, Some(&ens), seeded(3)).unwrap();
            for _ in 0..10 {
                let v = s.draw(&x, 1).unwrap();
                assert!((v.l2_norm() - 1.0).abs() < 1e-9, "{kind:?}");
            }
        }
        assert!(Sampler::of_kind(SamplerKind::Ods, None, seeded(0)).is_err());
    }

    #[test]
    fn multitargeted_cycles_targets() {
        let m = MlpClassifier::new(&[4, 6, 3], 7).unwrap();
        let ens = SurrogateEnsemble::from_models(vec![m.clone()]).unwrap();
        let x = Tensor::vector(vec![0.2, 0.4, 0.6, 0.8]);
        let mut s = Sampler::multitargeted(ens, seeded(0));
        for t in [0, 2, 0, 2] {
            let got = s.draw(&x, 1).unwrap();
            let w = multitargeted_direction(1, t, 3).unwrap();
            assert_eq!(got, ods::ods_vector(&x, &m, &w).unwrap());
        }
    }
}
