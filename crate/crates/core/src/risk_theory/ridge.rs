//! Ridge tuning: logarithmic grid followed by golden-section refinement.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::risk_theory::estimate::{member_risk_above, MemberRisk, RiskDecomposition};
use crate::risk_theory::fixed_point::branch_floor;
use crate::spectra::TaskEigenstructure;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RidgeSearch {
    pub lower: f64,
    pub upper: f64,
    pub grid_points: usize,
    /// Relative tolerance on the refined ridge.
    pub rel_tol: f64,
}

impl Default for RidgeSearch {
    fn default() -> Self {
        RidgeSearch {
            lower: 1e-10,
            upper: 1e4,
            grid_points: 81,
            rel_tol: 1e-4,
        }
    }
}

impl RidgeSearch {
    pub fn validate(&self) -> Result<()> {
        if !(self.lower > 0.0 && self.lower <= 1e-10 && self.upper >= 1e4 && self.upper.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "ridge search [{:e}, {:e}] must span at least [1e-10, 1e4]",
                self.lower, self.upper
            )));
        }
        if self.grid_points < 3 {
            return Err(Error::InvalidParameter("ridge grid needs at least 3 points".into()));
        }
        if !(self.rel_tol > 0.0 && self.rel_tol < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "ridge tolerance {} not in (0, 1)",
                self.rel_tol
            )));
        }
        Ok(())
    }

    fn log_grid(&self) -> Vec<f64> {
        let (a, b) = (self.lower.ln(), self.upper.ln());
        let last = self.grid_points - 1;
        (0..self.grid_points)
            .map(|i| {
                if i == last {
                    self.upper
                } else {
                    (a + (b - a) * i as f64 / last as f64).exp()
                }
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RidgeOptimum {
    pub lambda: f64,
    pub risk: f64,
    pub decomposition: RiskDecomposition,
}

/// Member risks over the ridge grid for one `(P, N)`. Because the ensemble
/// size enters only through `Bias^2 + Var / K`, one profile serves every `K`.
pub struct RidgeProfile<'a> {
    spec: &'a TaskEigenstructure,
    p: f64,
    n: f64,
    search: RidgeSearch,
    floor: f64,
    grid: Vec<f64>,
    members: Vec<MemberRisk>,
}

impl<'a> RidgeProfile<'a> {
    pub fn new(spec: &'a TaskEigenstructure, p: f64, n: f64, search: &RidgeSearch) -> Result<Self> {
        search.validate()?;
        if !(p >= 1.0 && n >= 1.0) {
            return Err(Error::InvalidParameter(format!("P = {p} and N = {n} must be >= 1")));
        }
        let floor = branch_floor(spec, p, n)?;
        let grid = search.log_grid();
        let mut members = Vec::with_capacity(grid.len());
        // kappa_2 increases with the ridge, so each solution bounds the next.
        let mut below = 0.0;
        for &lambda in &grid {
            let m = member_risk_above(spec, p, n, lambda, floor, below).map_err(|e| annotate(e, lambda))?;
            if !(m.bias_sq.is_finite() && m.var_single.is_finite()) {
                return Err(annotate(
                    Error::Instability {
                        gamma1: m.gamma1,
                        gamma2: m.gamma2,
                    },
                    lambda,
                ));
            }
            below = m.kappa2;
            members.push(m);
        }
        Ok(RidgeProfile {
            spec,
            p,
            n,
            search: *search,
            floor,
            grid,
            members,
        })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn members(&self) -> &[MemberRisk] {
        &self.members
    }

    /// Minimizes `E_g^K` over the ridge for a real ensemble size `k >= 1`.
    pub fn optimize(&self, k: f64) -> Result<RidgeOptimum> {
        if !(k >= 1.0 && k.is_finite()) {
            return Err(Error::InvalidParameter(format!("ensemble size {k} must be >= 1")));
        }
        let risks: Vec<f64> = self.members.iter().map(|m| m.ensemble_risk(k)).collect();
        let (imin, _) = risks
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, &r)| if r < acc.1 { (i, r) } else { acc });
        let mut best = (self.grid[imin], self.members[imin]);

        let last = self.grid.len() - 1;
        let mut a = self.grid[imin.saturating_sub(1)].ln();
        let mut b = self.grid[(imin + 1).min(last)].ln();
        let stop = (1.0 + self.search.rel_tol).ln();
        let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
        let below = self.members[imin.saturating_sub(1)].kappa2;
        let eval = |u: f64| -> Result<(f64, MemberRisk)> {
            let lambda = u.exp();
            let m = member_risk_above(self.spec, self.p, self.n, lambda, self.floor, below)
                .map_err(|e| annotate(e, lambda))?;
            Ok((m.ensemble_risk(k), m))
        };
        let mut c = b - inv_phi * (b - a);
        let mut d = a + inv_phi * (b - a);
        let (mut fc, mut mc) = eval(c)?;
        let (mut fd, mut md) = eval(d)?;
        while b - a > stop {
            if fc <= fd {
                b = d;
                d = c;
                fd = fc;
                md = mc;
                c = b - inv_phi * (b - a);
                (fc, mc) = eval(c)?;
            } else {
                a = c;
                c = d;
                fc = fd;
                mc = md;
                d = a + inv_phi * (b - a);
                (fd, md) = eval(d)?;
            }
        }
        for (u, f, m) in [(c, fc, mc), (d, fd, md)] {
            if f < best.1.ensemble_risk(k) {
                best = (u.exp(), m);
            }
        }
        let decomposition = best.1.with_ensemble_size(k);
        Ok(RidgeOptimum {
            lambda: best.0,
            risk: decomposition.risk,
            decomposition,
        })
    }
}

fn annotate(e: Error, lambda: f64) -> Error {
    match e {
        Error::Instability { .. } | Error::Solver { .. } => Error::Solver {
            message: format!("risk not finite during ridge search: {e}"),
            diagnostics: format!("lambda = {lambda:e}"),
        },
        other => other,
    }
}

/// Ridge minimizing `E_g^K` at `(P, N, K)`.
pub fn optimal_ridge(spec: &TaskEigenstructure, p: u64, n: u64, k: u64, search: &RidgeSearch) -> Result<RidgeOptimum> {
    if p == 0 || n == 0 || k == 0 {
        return Err(Error::InvalidParameter("P, N, K must be >= 1".into()));
    }
    RidgeProfile::new(spec, p as f64, n as f64, search)?.optimize(k as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::risk_theory::estimate::member_risk;
    use crate::spectra::{power_law_spectrum, PowerLawParams, TaskEigenstructure};

    #[test]
    fn no_signal_no_noise_is_zero() {
        let s = TaskEigenstructure::new(vec![0.5, 0.3, 0.2], vec![0.0; 3], 0.0).unwrap();
        let opt = optimal_ridge(&s, 2, 2, 1, &RidgeSearch::default()).unwrap();
        assert_eq!(opt.risk, 0.0);
    }

    #[test]
    fn pure_noise_floor_attained_at_large_ridge() {
        let s = power_law_spectrum(&PowerLawParams::new(1.5, 0.8, 10_000, 1.0)).unwrap();
        let s = TaskEigenstructure::new(s.eigenvalues().to_vec(), vec![0.0; s.len()], 1.0).unwrap();
        let opt = optimal_ridge(&s, 64, 64, 1, &RidgeSearch::default()).unwrap();
        assert!((opt.risk - 1.0).abs() < 1e-6, "risk {}", opt.risk);
        assert!(opt.lambda > 1e3, "lambda {}", opt.lambda);
    }

    #[test]
    fn optimum_beats_every_grid_point() {
        let s = power_law_spectrum(&PowerLawParams::new(1.5, 0.8, 100_000, 0.1)).unwrap();
        let search = RidgeSearch::default();
        let profile = RidgeProfile::new(&s, 256.0, 128.0, &search).unwrap();
        for k in [1.0, 3.0] {
            let opt = profile.optimize(k).unwrap();
            for m in profile.members() {
                assert!(opt.risk <= m.ensemble_risk(k));
            }
            // local optimality at the refinement tolerance
            for f in [1.0 - 2e-4, 1.0 + 2e-4] {
                let r = member_risk(&s, 256.0, 128.0, opt.lambda * f).unwrap().ensemble_risk(k);
                assert!(opt.risk <= r * (1.0 + 1e-9));
            }
        }
    }

    #[test]
    fn ensembles_lose_at_fixed_budget() {
        // Dense grid evaluation as an independent oracle for the ordering.
        let s = power_law_spectrum(&PowerLawParams::new(1.5, 0.8, 200_000, 0.0)).unwrap();
        let dense = |n: f64, k: f64| {
            (0..=700)
                .map(|i| 10f64.powf(-10.0 + 14.0 * i as f64 / 700.0))
                .map(|l| member_risk(&s, 256.0, n, l).unwrap().ensemble_risk(k))
                .fold(f64::INFINITY, f64::min)
        };
        let search = RidgeSearch::default();
        let r1 = optimal_ridge(&s, 256, 512, 1, &search).unwrap().risk;
        let r2 = optimal_ridge(&s, 256, 256, 2, &search).unwrap().risk;
        let r4 = optimal_ridge(&s, 256, 128, 4, &search).unwrap().risk;
        assert!(r1 < r2 && r2 < r4, "{r1} {r2} {r4}");
        let (d1, d2, d4) = (dense(512.0, 1.0), dense(256.0, 2.0), dense(128.0, 4.0));
        assert!(d1 < d2 && d2 < d4);
        for (opt, d) in [(r1, d1), (r2, d2), (r4, d4)] {
            assert!(opt <= d * (1.0 + 1e-6));
        }
    }

    #[test]
    fn search_bounds_validated() {
        let bad = RidgeSearch {
            lower: 1e-6,
            ..RidgeSearch::default()
        };
        assert!(bad.validate().is_err());
    }
}
