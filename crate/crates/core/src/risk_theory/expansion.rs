//! First-order expansion of the overparameterized risk around `lambda = 0`,
//! `N = infinity`.

use crate::error::{Error, Result};
use crate::risk_theory::dof::{moments, slope_moments};
use crate::risk_theory::fixed_point::ridgeless_kappa;
use crate::spectra::TaskEigenstructure;

/// Terms of the expansion, evaluated at the ridgeless `kappa*` with
/// `Df_1(kappa*) = P`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SmallRidgeTerms {
    pub kappa_star: f64,
    /// Risk of the infinite-width ridgeless limit.
    pub leading: f64,
    /// Coefficient of `lambda`.
    pub ridge_slope: f64,
    /// Coefficient of `1 / (K N)`.
    pub width_slope: f64,
}

impl SmallRidgeTerms {
    pub fn evaluate(&self, total_features: f64, lambda: f64) -> f64 {
        self.leading + lambda * self.ridge_slope + self.width_slope / total_features
    }
}

/// Computes the expansion terms for `P` samples. The task must be noiseless.
pub fn small_ridge_terms(spec: &TaskEigenstructure, p: f64) -> Result<SmallRidgeTerms> {
    if spec.noise_var() != 0.0 {
        return Err(Error::Regime(format!(
            "expansion assumes noiseless labels, got noise variance {}",
            spec.noise_var()
        )));
    }
    let kappa = ridgeless_kappa(spec, p)?;
    let m = moments(spec, kappa);
    let s = slope_moments(spec, kappa);
    let slack = p - m.df2;
    if !(slack > 0.0) {
        return Err(Error::Degenerate(format!("Df_2(kappa*) = {} >= P = {p}", m.df2)));
    }
    let tf1_prime = -m.neg_tf1_prime;
    let leading = -p * kappa * kappa * tf1_prime / slack;
    let ridge_slope = p * (slack * s.tf2_prime + kappa * s.df2_prime * tf1_prime) / (s.df1_prime * slack * slack);
    Ok(SmallRidgeTerms {
        kappa_star: kappa,
        leading,
        ridge_slope,
        width_slope: p * kappa * m.tf1,
    })
}

/// Small-ridge, large-width approximation of `E_g^K`. Depends on `K` and `N`
/// only through `K N`.
pub fn small_ridge_expansion(spec: &TaskEigenstructure, p: u64, n: u64, k: u64, lambda: f64) -> Result<f64> {
    if p == 0 || k == 0 {
        return Err(Error::InvalidParameter("P and K must be >= 1".into()));
    }
    if p >= n {
        return Err(Error::Regime(format!(
            "expansion requires N > P (got P = {p}, N = {n})"
        )));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "ridge {lambda} must be finite and >= 0"
        )));
    }
    let terms = small_ridge_terms(spec, p as f64)?;
    Ok(terms.evaluate(k as f64 * n as f64, lambda))
}
