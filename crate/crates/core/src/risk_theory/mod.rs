//! Omniscient risk estimate for ensembles of random-feature ridge regressors.

mod dof;
mod estimate;
mod expansion;
mod fixed_point;
mod ridge;

pub use dof::{df, tf, tf1_prime, Order};
pub use estimate::{
    member_risk, risk_ensemble, ExperimentConfig, MemberRisk, RiskDecomposition, INTERPOLATION_WARNING,
};
pub use expansion::{small_ridge_expansion, small_ridge_terms, SmallRidgeTerms};
pub use fixed_point::{fixed_point_residual, ridgeless_kappa, solve_kappa2, MAX_ITERATIONS};
pub use ridge::{optimal_ridge, RidgeOptimum, RidgeProfile, RidgeSearch};
