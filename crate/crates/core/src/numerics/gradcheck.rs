use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Outcome of a finite-difference gradient check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradientReport {
    pub max_rel_error: f64,
    /// Flat index into the parameter vector of the worst entry.
    pub worst_param_index: usize,
    pub eps: f64,
    /// Number of parameter entries actually checked.
    pub checked: usize,
}

/// Compare analytic gradients against central finite differences on a random
/// subsample of at least `min_sample` parameter entries (all of them when the
/// model is smaller than that).
///
/// `theta` is the flattened parameter vector at the point being checked,
/// `analytic` the gradient produced by the backward pass, and `loss`
/// re-evaluates the scalar loss at an arbitrary parameter vector.
///
/// A large error is reported, not raised: fault injection is a supported use.
pub fn grad_check<L>(theta: &[f64], analytic: &[f64], mut loss: L, eps: f64, min_sample: usize, seed: u64) -> Result<GradientReport>
where
    L: FnMut(&[f64]) -> f64,
{
    if !(1e-6..=1e-2).contains(&eps) {
        return Err(Error::InvalidArg(format!("grad_check eps must be in [1e-6, 1e-2], got {eps}")));
    }
    if theta.len() != analytic.len() {
        return Err(Error::shape(
            "grad_check",
            format!("{} analytic entries", theta.len()),
            format!("{}", analytic.len()),
        ));
    }
    if theta.is_empty() {
        return Err(Error::InvalidArg("grad_check on empty parameter vector".into()));
    }

    let mut rng = Rng::new(seed);
    let indices = rng.sample_indices(theta.len(), min_sample.max(1));

    let mut work = theta.to_vec();
    let mut max_rel = 0.0f64;
    let mut worst = indices[0];
    for &i in &indices {
        let orig = work[i];
        work[i] = orig + eps;
        let plus = loss(&work);
        work[i] = orig - eps;
        let minus = loss(&work);
        work[i] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-6);
        let rel = (analytic[i] - numeric).abs() / denom;
        if rel > max_rel {
            max_rel = rel;
            worst = i;
        }
    }
    Ok(GradientReport {
        max_rel_error: max_rel,
        worst_param_index: worst,
        eps,
        checked: indices.len(),
    })
}
