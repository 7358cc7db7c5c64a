//! Central-difference gradient checking.

use crate::error::{Error, Result};

/// Compares an analytic gradient against central differences.
///
/// `f` maps a flat variable vector to `(value, gradient)`. Returns the maximum over variables of
/// `|analytic − numeric| / max(1, |numeric|)`.
pub fn grad_check<F>(x: &[f64], eps: f64, f: F) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    if !(1e-6..=1e-3).contains(&eps) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step {eps} outside [1e-6, 1e-3]"
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("gradient-check input".into()));
    }
    let (value, analytic) = f(x)?;
    if analytic.len() != x.len() {
        return Err(Error::shape(format!(
            "gradient has {} entries for {} variables",
            analytic.len(),
            x.len()
        )));
    }
    if !value.is_finite() || analytic.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradient-check analytic pass".into()));
    }
    let mut probe = x.to_vec();
    let mut worst = 0.0_f64;
    for i in 0..x.len() {
        probe[i] = x[i] + eps;
        let (plus, _) = f(&probe)?;
        probe[i] = x[i] - eps;
        let (minus, _) = f(&probe)?;
        probe[i] = x[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite("gradient-check probe".into()));
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let err = (analytic[i] - numeric).abs() / numeric.abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Deterministic projection weights used to turn a tensor-valued op into a scalar objective.
pub fn projection_weights(n: usize, seed: u64) -> Vec<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}
