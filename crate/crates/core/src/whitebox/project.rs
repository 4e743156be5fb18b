use super::Norm;
use crate::error::Result;
use crate::numcore::Tensor;

/// Projection onto `B_ε(origin) ∩ [0, 1]^D`: coordinate clipping for ℓ∞,
/// radial scaling for ℓ2, followed by the pixel-range clip.
pub fn project_ball(
    candidate: &Tensor,
    origin: &Tensor,
    epsilon: f64,
    norm: Norm,
) -> Result<Tensor> {
    candidate.check_same_shape(origin)?;
    let out = match norm {
        Norm::Linf => {
            let data = candidate
                .data()
                .iter()
                .zip(origin.data())
                .map(|(&c, &o)| c.clamp(o - epsilon, o + epsilon).clamp(0.0, 1.0))
                .collect();
            Tensor::new(candidate.shape().to_vec(), data)?
        }
        Norm::L2 => {
            let delta = candidate.sub(origin)?;
            let n = delta.l2_norm();
            let delta = if n > epsilon {
                delta.scale(epsilon / n)
            } else {
                delta
            };
            origin.add(&delta)?.clip(0.0, 1.0)
        }
    };
    Ok(out)
}

/// Membership in `B_ε(origin) ∩ [0, 1]^D` up to `tol`.
pub fn in_ball(point: &Tensor, origin: &Tensor, epsilon: f64, norm: Norm, tol: f64) -> bool {
    let Ok(d) = norm.distance(point, origin) else {
        return false;
    };
    d <= epsilon + tol
        && point
            .data()
            .iter()
            .all(|&v| (-tol..=1.0 + tol).contains(&v))
}
