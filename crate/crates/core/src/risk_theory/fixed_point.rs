//! The renormalized-ridge fixed point and its ridgeless limit.
//!
//! `kappa (P - Df_1(kappa)) (N - Df_1(kappa)) = lambda N` is solved on the
//! branch `Df_1(kappa) < min(N, P)`, where the residual
//! `g(kappa) = kappa (P - Df_1)(N - Df_1) - lambda N` is strictly increasing.
//! Both solvers work in `u = ln kappa` and combine Newton steps with bisection
//! of a maintained sign-change bracket, so they cannot leave the bracket.

use crate::error::{Error, Result};
use crate::risk_theory::dof::df1_and_gap;
use crate::spectra::TaskEigenstructure;

/// Iteration cap shared by both solvers.
pub const MAX_ITERATIONS: usize = 500;

/// Residual target for the ridgeless threshold `Df_1(kappa) = threshold`.
const RIDGELESS_TOL: f64 = 1e-13;
/// Residual target for the fixed point, relative to `lambda N`.
const FIXED_POINT_TOL: f64 = 1e-13;

fn check_sizes(p: f64, n: f64, lambda: f64) -> Result<()> {
    if !(p >= 1.0 && n >= 1.0 && p.is_finite() && n.is_finite()) {
        return Err(Error::InvalidParameter(format!("P = {p} and N = {n} must be >= 1")));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "ridge {lambda} must be finite and >= 0"
        )));
    }
    Ok(())
}

/// Safeguarded Newton iteration for an increasing function `h(u)`.
///
/// `eval(u)` returns `(h, dh/du, converged)`; `h = -inf` marks points known to
/// lie left of the root. Either bracket end may start infinite, in which case
/// out-of-bracket Newton steps are replaced by fixed jumps of `e^4`.
fn monotone_root(
    mut eval: impl FnMut(f64) -> (f64, f64, bool),
    mut u: f64,
    mut ulo: f64,
    mut uhi: f64,
) -> Option<(f64, bool)> {
    let mut best: Option<(f64, f64)> = None;
    for _ in 0..MAX_ITERATIONS {
        let (h, dh, done) = eval(u);
        if done {
            return Some((u, true));
        }
        if h.is_finite() && best.is_none_or(|(b, _)| h.abs() < b) {
            best = Some((h.abs(), u));
        }
        if h < 0.0 {
            ulo = u;
        } else {
            uhi = u;
        }
        if uhi.is_finite() && uhi - ulo <= 4.0 * f64::EPSILON * uhi.abs().max(1.0) {
            break;
        }
        let newton = if h.is_finite() && dh > 0.0 {
            u - h / dh
        } else {
            f64::NAN
        };
        if newton == u {
            // The Newton correction is below the resolution of u.
            return Some((u, false));
        }
        u = if newton > ulo && newton < uhi {
            newton
        } else if ulo.is_finite() && uhi.is_finite() {
            0.5 * (ulo + uhi)
        } else if ulo.is_finite() {
            ulo + 4.0
        } else {
            uhi - 4.0
        };
    }
    best.map(|(_, u)| (u, false))
}

/// Solves `Df_1(kappa) = threshold` for `kappa > 0`.
pub fn ridgeless_kappa(spec: &TaskEigenstructure, threshold: f64) -> Result<f64> {
    if !(threshold > 0.0 && threshold.is_finite()) {
        return Err(Error::Domain(format!("threshold {threshold} must be positive")));
    }
    let rank = spec.rank();
    if threshold >= rank as f64 {
        return Err(Error::Infeasible { threshold, rank });
    }
    // Df_1(kappa) <= trace / kappa, so kappa = trace / threshold is at or above
    // the root. ln Df_1 is close to linear in ln kappa for power-law spectra.
    let upper = (spec.trace() / threshold).ln();
    let eval = |u: f64| {
        let (d, gap) = df1_and_gap(spec, u.exp());
        let done = (d - threshold).abs() <= RIDGELESS_TOL * threshold;
        (threshold.ln() - d.ln(), gap / d, done)
    };
    match monotone_root(eval, upper, f64::NEG_INFINITY, upper + 1e-12) {
        Some((u, _)) => Ok(u.exp()),
        None => Err(Error::Solver {
            message: "ridgeless threshold search produced no finite iterate".into(),
            diagnostics: format!("threshold = {threshold}, rank = {rank}"),
        }),
    }
}

/// Lower end of the admissible branch: the ridgeless `kappa` at
/// `min(N, P)`, or zero when the spectrum rank does not exceed it.
pub(crate) fn branch_floor(spec: &TaskEigenstructure, p: f64, n: f64) -> Result<f64> {
    let m = p.min(n);
    if m >= spec.rank() as f64 {
        Ok(0.0)
    } else {
        ridgeless_kappa(spec, m)
    }
}

/// Relative residual `|kappa (P - Df_1)(N - Df_1) - lambda N| / (lambda N)` of
/// the fixed point. For `lambda = 0` the unnormalized residual is returned.
pub fn fixed_point_residual(spec: &TaskEigenstructure, p: f64, n: f64, lambda: f64, kappa: f64) -> f64 {
    let (d, _) = df1_and_gap(spec, kappa);
    let lhs = kappa * (p - d) * (n - d);
    let rhs = lambda * n;
    if rhs > 0.0 {
        (lhs - rhs).abs() / rhs
    } else {
        lhs.abs()
    }
}

/// Renormalized ridge `kappa_2` for `P` samples, member width `N` and ridge
/// `lambda`. `lambda = 0` returns the ridgeless branch point.
pub fn solve_kappa2(spec: &TaskEigenstructure, p: f64, n: f64, lambda: f64) -> Result<f64> {
    check_sizes(p, n, lambda)?;
    let floor = branch_floor(spec, p, n)?;
    solve_above(spec, p, n, lambda, floor, 0.0)
}

/// Fixed point with a precomputed branch floor and a known lower bound on the
/// root (for example the solution at a smaller ridge).
pub(crate) fn solve_above(
    spec: &TaskEigenstructure,
    p: f64,
    n: f64,
    lambda: f64,
    floor: f64,
    known_below: f64,
) -> Result<f64> {
    if lambda == 0.0 {
        return Ok(floor);
    }
    let m = p.min(n);
    let target = lambda * n;
    let log_target = target.ln();

    // Work with h = ln(kappa (P - Df_1)(N - Df_1)) - ln(lambda N), which is
    // increasing on the branch; off-branch points count as left of the root.
    // The iteration variable is x = ln(kappa - floor): near the floor h grows
    // like ln(kappa - floor), so h is close to linear in x everywhere.
    let eval = |x: f64| {
        let excess = x.exp();
        let k = floor + excess;
        let (d, gap) = df1_and_gap(spec, k);
        if d >= m {
            return (f64::NEG_INFINITY, f64::NAN, false);
        }
        let (a, b) = (p - d, n - d);
        let g = k * a * b - target;
        let h = k.ln() + a.ln() + b.ln() - log_target;
        let dh_du = 1.0 + gap / a + gap / b;
        (h, dh_du * excess / k, g.abs() <= FIXED_POINT_TOL * target)
    };

    // (P - Df_1)(N - Df_1) <= P N puts the root at or above lambda / P.
    let lower = (lambda / p).max(known_below) - floor;
    let xlo = if lower > 0.0 { lower.ln() } else { f64::NEG_INFINITY };
    let start = if lower > 0.0 { 2.0 * lower } else { lambda / p };
    match monotone_root(eval, start.ln(), xlo, f64::INFINITY) {
        // Without convergence the bracket has collapsed to adjacent floats:
        // the best point is as close as f64 resolution of kappa allows.
        Some((x, _)) => Ok(floor + x.exp()),
        None => Err(Error::Solver {
            message: "no on-branch iterate".into(),
            diagnostics: format!("P = {p}, N = {n}, lambda = {lambda:e}, floor = {floor:e}"),
        }),
    }
}
