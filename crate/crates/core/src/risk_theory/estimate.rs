use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::risk_theory::dof::moments;
use crate::risk_theory::fixed_point::{solve_above, solve_kappa2};
use crate::spectra::TaskEigenstructure;

/// `gamma_1` above which results carry the near-interpolation warning.
pub const INTERPOLATION_WARNING: f64 = 0.99;

/// One theory evaluation: `P` samples, `N` features per member, `K` members,
/// ridge `lambda`. The total feature count is `M = K N`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub p: u64,
    pub n: u64,
    pub k: u64,
    pub ridge: f64,
}

impl ExperimentConfig {
    pub fn new(p: u64, n: u64, k: u64, ridge: f64) -> Self {
        ExperimentConfig { p, n, k, ridge }
    }

    pub fn total_features(&self) -> u64 {
        self.k * self.n
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.n == 0 || self.k == 0 {
            return Err(Error::InvalidParameter(format!(
                "P, N, K must be >= 1 (got P = {}, N = {}, K = {})",
                self.p, self.n, self.k
            )));
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "ridge {} must be finite and >= 0",
                self.ridge
            )));
        }
        Ok(())
    }
}

/// Omniscient risk estimate of a single member, before ensembling.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemberRisk {
    pub kappa2: f64,
    pub rho: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub bias_sq: f64,
    pub var_single: f64,
}

impl MemberRisk {
    /// Single-model risk `E_g^1 = Bias^2 + Var`.
    pub fn single_model_risk(&self) -> f64 {
        self.bias_sq + self.var_single
    }

    /// `Bias^2 + Var / K`, with `K` allowed to be any positive real.
    pub fn ensemble_risk(&self, k: f64) -> f64 {
        self.bias_sq + self.var_single / k
    }

    pub fn with_ensemble_size(&self, k: f64) -> RiskDecomposition {
        RiskDecomposition {
            kappa2: self.kappa2,
            rho: self.rho,
            gamma1: self.gamma1,
            gamma2: self.gamma2,
            bias_sq: self.bias_sq,
            var_single: self.var_single,
            risk: self.ensemble_risk(k),
            near_interpolation: self.gamma1 > INTERPOLATION_WARNING,
        }
    }
}

/// Renormalized ridge, its derived ratios, and the bias/variance split of
/// the ensemble risk `E_g^K = Bias^2 + Var / K`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskDecomposition {
    pub kappa2: f64,
    pub rho: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub bias_sq: f64,
    pub var_single: f64,
    pub risk: f64,
    /// Set when `gamma1 > 0.99`, close to the interpolation peak where the
    /// estimate loses accuracy.
    pub near_interpolation: bool,
}

/// Evaluates the single-member risk estimate at `(P, N, lambda)`.
///
/// The variance is assembled from non-negative terms,
/// `Var = (A + s^2)(g1 - g2)/((1 - g1)(1 - g2)) + (1 - rho) kappa tf_2 / (1 - g1)`
/// with `A = -kappa^2 tf_1'`, which equals `E_g^1 - Bias^2` but never goes
/// negative through cancellation.
pub fn member_risk(spec: &TaskEigenstructure, p: f64, n: f64, lambda: f64) -> Result<MemberRisk> {
    let kappa = solve_kappa2(spec, p, n, lambda)?;
    member_risk_at_kappa(spec, p, n, kappa)
}

/// [`member_risk`] with a precomputed branch floor and a known lower bound on
/// `kappa_2`.
pub(crate) fn member_risk_above(
    spec: &TaskEigenstructure,
    p: f64,
    n: f64,
    lambda: f64,
    floor: f64,
    known_below: f64,
) -> Result<MemberRisk> {
    let kappa = solve_above(spec, p, n, lambda, floor, known_below)?;
    member_risk_at_kappa(spec, p, n, kappa)
}

pub(crate) fn member_risk_at_kappa(spec: &TaskEigenstructure, p: f64, n: f64, kappa: f64) -> Result<MemberRisk> {
    let m = if kappa > 0.0 {
        moments(spec, kappa)
    } else {
        // Ridgeless with rank <= min(N, P): every mode is fit exactly.
        let rank = spec.rank() as f64;
        crate::risk_theory::dof::SpectralMoments {
            df1: rank,
            df2: rank,
            df_gap: 0.0,
            tf1: 0.0,
            tf2: 0.0,
            neg_tf1_prime: 0.0,
        }
    };
    let noise = spec.noise_var();
    let denom = n - m.df2;
    // 1 - rho = (Df_1 - Df_2) / (N - Df_2)
    let one_minus_rho = if m.df_gap == 0.0 { 0.0 } else { m.df_gap / denom };
    let rho = 1.0 - one_minus_rho;
    let gamma2 = m.df2 / p;
    let gamma1 = gamma2 + one_minus_rho * m.df_gap / p;
    if !(gamma1 < 1.0 && gamma2 < 1.0) || !gamma1.is_finite() || !(denom > 0.0) {
        return Err(Error::Instability { gamma1, gamma2 });
    }
    let signal = kappa * kappa * m.neg_tf1_prime;
    let bias_sq = (signal + noise) / (1.0 - gamma2);
    let var_single = (signal + noise) * (gamma1 - gamma2) / ((1.0 - gamma1) * (1.0 - gamma2))
        + one_minus_rho * kappa * m.tf2 / (1.0 - gamma1);
    Ok(MemberRisk {
        kappa2: kappa,
        rho,
        gamma1,
        gamma2,
        bias_sq,
        var_single,
    })
}

/// Ensemble risk estimate for `config`.
pub fn risk_ensemble(spec: &TaskEigenstructure, config: &ExperimentConfig) -> Result<RiskDecomposition> {
    config.validate()?;
    let member = member_risk(spec, config.p as f64, config.n as f64, config.ridge)?;
    Ok(member.with_ensemble_size(config.k as f64))
}
