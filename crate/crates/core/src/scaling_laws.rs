//! Joint growth of ensemble size and member width, theoretical exponents,
//! log-log fits, and spectrum-exponent estimation from data.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::fmt_f64;
use crate::risk_theory::{member_risk, MemberRisk, RidgeProfile, RidgeSearch};
use crate::rng::{substream, StreamTag};
use crate::spectra::TaskEigenstructure;

/// Exponents of `E_g ~ M^{-s}` for the bias, the variance and the total.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingExponents {
    pub s_bias: f64,
    pub s_var: f64,
    pub s: f64,
}

fn check_exponents(alpha: f64, r: f64) -> Result<()> {
    if !(alpha > 1.0 && alpha.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "capacity exponent {alpha} must exceed 1"
        )));
    }
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::InvalidParameter(format!("source exponent {r} must be positive")));
    }
    Ok(())
}

/// Predicted width-bottlenecked exponents when `N ~ M^ell`, `K ~ M^(1-ell)`.
pub fn theoretical_exponent(alpha: f64, r: f64, ell: f64) -> Result<ScalingExponents> {
    check_exponents(alpha, r)?;
    if !(0.0..=1.0).contains(&ell) {
        return Err(Error::InvalidParameter(format!("growth exponent {ell} not in [0, 1]")));
    }
    let s_bias = 2.0 * alpha * ell * r.min(1.0);
    let s_var = 1.0 - ell + 2.0 * alpha * ell * r.min(0.5);
    Ok(ScalingExponents {
        s_bias,
        s_var,
        s: s_bias.min(s_var),
    })
}

/// Growth exponent where the bias and variance exponents cross, or `None`
/// when the bias dominates for every `ell` (`r <= 1/2`).
pub fn crossover_ell(alpha: f64, r: f64) -> Result<Option<f64>> {
    check_exponents(alpha, r)?;
    Ok(if r <= 0.5 {
        None
    } else if r < 1.0 {
        Some(1.0 / (1.0 + alpha * (2.0 * r - 1.0)))
    } else {
        Some(1.0 / (1.0 + alpha))
    })
}

/// How a total feature budget `M` is split: `N = round(M^ell)` features per
/// member and `K = round(M / N)` members.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthSpec {
    ell: f64,
    m_grid: Vec<u64>,
}

impl GrowthSpec {
    pub fn new(ell: f64, m_grid: Vec<u64>) -> Result<Self> {
        if !(0.0..=1.0).contains(&ell) {
            return Err(Error::InvalidParameter(format!("growth exponent {ell} not in [0, 1]")));
        }
        if m_grid.is_empty() || m_grid[0] == 0 || m_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter(
                "M grid must be positive and strictly increasing".into(),
            ));
        }
        Ok(GrowthSpec { ell, m_grid })
    }

    pub fn ell(&self) -> f64 {
        self.ell
    }

    pub fn m_grid(&self) -> &[u64] {
        &self.m_grid
    }

    /// `(N, K)` for budget `m`.
    pub fn split(&self, m: u64) -> (u64, u64) {
        let n = ((m as f64).powf(self.ell).round() as u64).max(1);
        let k = ((m as f64 / n as f64).round() as u64).max(1);
        (n, k)
    }
}

/// Ridge used at each sweep point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum RidgePolicy {
    Fixed(f64),
    Optimal(RidgeSearch),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub m: u64,
    pub k: u64,
    pub n: u64,
    pub ell: f64,
    pub lambda: f64,
    pub kappa2: f64,
    pub bias_sq: f64,
    pub var_single: f64,
    pub risk: f64,
}

impl SweepRow {
    fn new(m: u64, k: u64, n: u64, ell: f64, lambda: f64, member: &MemberRisk) -> Self {
        SweepRow {
            m,
            k,
            n,
            ell,
            lambda,
            kappa2: member.kappa2,
            bias_sq: member.bias_sq,
            var_single: member.var_single,
            risk: member.ensemble_risk(k as f64),
        }
    }

    /// Variance contribution `Var / K` to the ensemble risk.
    pub fn ensemble_variance(&self) -> f64 {
        self.var_single / self.k as f64
    }
}

/// Theory risk at every budget of `growth` with `P` samples. Points sharing
/// a member width share one ridge profile; distinct widths run in parallel.
pub fn joint_sweep(
    spec: &TaskEigenstructure,
    p: u64,
    growth: &GrowthSpec,
    policy: &RidgePolicy,
) -> Result<Vec<SweepRow>> {
    if p == 0 {
        return Err(Error::InvalidParameter("P must be >= 1".into()));
    }
    let splits: Vec<(u64, u64, u64)> = growth
        .m_grid
        .iter()
        .map(|&m| {
            let (n, k) = growth.split(m);
            (m, n, k)
        })
        .collect();
    let mut by_width: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, &(_, n, _)) in splits.iter().enumerate() {
        by_width.entry(n).or_default().push(i);
    }
    let groups: Vec<(u64, Vec<usize>)> = by_width.into_iter().collect();
    let pf = p as f64;
    let per_group: Vec<Vec<(usize, SweepRow)>> = groups
        .par_iter()
        .map(|(n, rows)| -> Result<Vec<(usize, SweepRow)>> {
            let nf = *n as f64;
            match policy {
                RidgePolicy::Fixed(lambda) => {
                    let member = member_risk(spec, pf, nf, *lambda)?;
                    Ok(rows
                        .iter()
                        .map(|&i| {
                            let (m, n, k) = splits[i];
                            (i, SweepRow::new(m, k, n, growth.ell, *lambda, &member))
                        })
                        .collect())
                }
                RidgePolicy::Optimal(search) => {
                    let profile = RidgeProfile::new(spec, pf, nf, search)?;
                    rows.iter()
                        .map(|&i| {
                            let (m, n, k) = splits[i];
                            let opt = profile.optimize(k as f64)?;
                            let d = opt.decomposition;
                            Ok((
                                i,
                                SweepRow {
                                    m,
                                    k,
                                    n,
                                    ell: growth.ell,
                                    lambda: opt.lambda,
                                    kappa2: d.kappa2,
                                    bias_sq: d.bias_sq,
                                    var_single: d.var_single,
                                    risk: d.risk,
                                },
                            ))
                        })
                        .collect()
                }
            }
        })
        .collect::<Result<_>>()?;
    let mut out: Vec<Option<SweepRow>> = vec![None; splits.len()];
    for (i, row) in per_group.into_iter().flatten() {
        out[i] = Some(row);
    }
    Ok(out.into_iter().map(|r| r.expect("every row assigned")).collect())
}

pub const SWEEP_HEADER: &str = "M,K,N,ell,lambda,kappa2,bias_sq,var,risk";

/// Sweep table as CSV; `var` is the single-member variance.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.m,
            r.k,
            r.n,
            fmt_f64(r.ell),
            fmt_f64(r.lambda),
            fmt_f64(r.kappa2),
            fmt_f64(r.bias_sq),
            fmt_f64(r.var_single),
            fmt_f64(r.risk)
        ));
    }
    out
}

/// Which points of a curve enter a fit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum FitWindow {
    Full,
    /// Drop this fraction of points from each end.
    Trim(f64),
    /// Half-open index range.
    Indices(usize, usize),
}

impl Default for FitWindow {
    fn default() -> Self {
        FitWindow::Trim(0.2)
    }
}

impl FitWindow {
    fn bounds(&self, len: usize) -> Result<(usize, usize)> {
        let (lo, hi) = match *self {
            FitWindow::Full => (0, len),
            FitWindow::Trim(f) => {
                if !(0.0..0.5).contains(&f) {
                    return Err(Error::Fit(format!("trim fraction {f} not in [0, 0.5)")));
                }
                let drop = (f * len as f64).floor() as usize;
                (drop, len - drop)
            }
            FitWindow::Indices(lo, hi) => (lo, hi.min(len)),
        };
        if hi < lo + 3 {
            return Err(Error::Fit(format!("fit window [{lo}, {hi}) holds fewer than 3 points")));
        }
        Ok((lo, hi))
    }
}

/// Least-squares line through `(ln x, ln y)`, reported as `y ~ x^{-slope}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// Decay exponent `s` in `y ~ x^{-s}`.
    pub slope: f64,
    /// `ln y` at `ln x = 0`.
    pub intercept: f64,
    pub r_squared: f64,
    /// Half-open index range used.
    pub window: (usize, usize),
}

pub fn fit_power_law(xs: &[f64], ys: &[f64], window: FitWindow) -> Result<FitResult> {
    if xs.len() != ys.len() {
        return Err(Error::Shape(format!("{} x values but {} y values", xs.len(), ys.len())));
    }
    if let Some(bad) = xs.iter().chain(ys).find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::Domain(format!(
            "power-law fit needs positive finite values, got {bad}"
        )));
    }
    let (lo, hi) = window.bounds(xs.len())?;
    let lx: Vec<f64> = xs[lo..hi].iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys[lo..hi].iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ly.iter().map(|y| (y - my) * (y - my)).sum();
    if !(sxx > 0.0) {
        return Err(Error::Fit("all x values in the window coincide".into()));
    }
    let b = sxy / sxx;
    let intercept = my - b * mx;
    let sse: f64 = lx.iter().zip(&ly).map(|(x, y)| (y - intercept - b * x).powi(2)).sum();
    let r_squared = if syy > 0.0 {
        (1.0 - sse / syy).clamp(0.0, 1.0)
    } else {
        1.0
    };
    Ok(FitResult {
        slope: -b,
        intercept,
        r_squared,
        window: (lo, hi),
    })
}

/// Source of empirical kernel matrices `H_p` for the trace metric.
pub trait KernelProvider: Sync {
    /// Gram matrix of `p` freshly drawn samples.
    fn kernel(&self, p: usize, rng: &mut ChaCha8Rng) -> Result<DMatrix<f64>>;
}

/// Fresh draws allowed per `(p, trial)` when `H_p` is singular.
pub const TRACE_METRIC_RETRIES: u64 = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceMetricFit {
    /// `[tr H_p^{-1}]^{-1}` averaged over trials, one per grid size.
    pub metric: Vec<f64>,
    /// `slope` is the capacity estimate.
    pub fit: FitResult,
}

impl TraceMetricFit {
    pub fn alpha_hat(&self) -> f64 {
        self.fit.slope
    }
}

fn inverse_trace(h: DMatrix<f64>) -> Option<f64> {
    let p = h.nrows();
    let chol = h.cholesky()?;
    // tr(H^{-1}) = ||L^{-1}||_F^2
    let mut l_inv = DMatrix::<f64>::identity(p, p);
    chol.l_dirty().solve_lower_triangular_mut(&mut l_inv);
    let mut acc = 0.0;
    for j in 0..p {
        for i in j..p {
            acc += l_inv[(i, j)] * l_inv[(i, j)];
        }
    }
    (acc.is_finite() && acc > 0.0).then_some(acc)
}

/// Fits `[tr H_p^{-1}]^{-1} ~ p^{-alpha}` over `p_grid`, averaging `trials`
/// independent kernels per size. Every point of the grid enters the fit.
pub fn trace_metric_alpha(
    provider: &dyn KernelProvider,
    p_grid: &[usize],
    trials: usize,
    seed: u64,
) -> Result<TraceMetricFit> {
    if p_grid.len() < 3 {
        return Err(Error::Fit(format!(
            "trace metric needs at least 3 sizes, got {}",
            p_grid.len()
        )));
    }
    if trials == 0 || p_grid[0] == 0 || p_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter(
            "need trials >= 1 and a positive increasing size grid".into(),
        ));
    }
    let jobs: Vec<(usize, usize)> = (0..p_grid.len())
        .flat_map(|i| (0..trials).map(move |j| (i, j)))
        .collect();
    let values: Vec<f64> = jobs
        .par_iter()
        .map(|&(i, j)| {
            let p = p_grid[i];
            for attempt in 0..=TRACE_METRIC_RETRIES {
                let mut rng = substream(seed, StreamTag::Kernel, &[p as u64, j as u64, attempt]);
                if let Some(tr) = inverse_trace(provider.kernel(p, &mut rng)?) {
                    return Ok(1.0 / tr);
                }
            }
            Err(Error::Singular(format!(
                "kernel matrix for p = {p} singular after {} draws",
                TRACE_METRIC_RETRIES + 1
            )))
        })
        .collect::<Result<_>>()?;
    let metric: Vec<f64> = values
        .chunks(trials)
        .map(|c| c.iter().sum::<f64>() / trials as f64)
        .collect();
    let xs: Vec<f64> = p_grid.iter().map(|&p| p as f64).collect();
    let fit = fit_power_law(&xs, &metric, FitWindow::Full)?;
    Ok(TraceMetricFit { metric, fit })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceEstimate {
    pub r_hat: f64,
    /// Fitted decay exponent of the kernel regression risk.
    pub beta: f64,
    pub fit: FitResult,
    /// Set when the risk curve increases with `p` (negative `beta`).
    pub increasing_curve: bool,
}

/// Source exponent `r = beta / (2 alpha)` from a small-ridge kernel
/// regression learning curve `E_g ~ p^{-beta}`.
pub fn estimate_source_exponent(curve: &[(f64, f64)], alpha_hat: f64, window: FitWindow) -> Result<SourceEstimate> {
    if !(alpha_hat > 0.0 && alpha_hat.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "capacity estimate {alpha_hat} must be positive"
        )));
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = curve.iter().copied().unzip();
    let fit = fit_power_law(&xs, &ys, window)?;
    Ok(SourceEstimate {
        r_hat: fit.slope / (2.0 * alpha_hat),
        beta: fit.slope,
        fit,
        increasing_curve: fit.slope < 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exponents_at_listed_points() {
        let e = theoretical_exponent(1.5, 0.4, 0.5).unwrap();
        assert!((e.s_bias - 0.6).abs() < 1e-12 && (e.s_var - 1.1).abs() < 1e-12 && (e.s - 0.6).abs() < 1e-12);
        let e = theoretical_exponent(1.5, 1.2, 1.0).unwrap();
        assert!((e.s_bias - 3.0).abs() < 1e-12 && (e.s_var - 1.5).abs() < 1e-12 && (e.s - 1.5).abs() < 1e-12);
        let e = theoretical_exponent(2.3, 0.7, 0.0).unwrap();
        assert_eq!((e.s_bias, e.s_var, e.s), (0.0, 1.0, 0.0));
    }

    #[test]
    fn crossover_cases() {
        assert!((crossover_ell(1.5, 1.2).unwrap().unwrap() - 0.4).abs() < 1e-12);
        assert_eq!(crossover_ell(1.5, 0.4).unwrap(), None);
        assert!((crossover_ell(1.5, 0.75).unwrap().unwrap() - 1.0 / 1.75).abs() < 1e-12);
    }

    #[test]
    fn crossover_equates_exponents() {
        for (a, r) in [(1.5, 0.75), (2.0, 1.3), (1.2, 0.6)] {
            let l = crossover_ell(a, r).unwrap().unwrap();
            let e = theoretical_exponent(a, r, l).unwrap();
            assert!((e.s_bias - e.s_var).abs() < 1e-12);
        }
    }

    #[test]
    fn growth_split_rounding() {
        let g = GrowthSpec::new(0.5, vec![1024]).unwrap();
        assert_eq!(g.split(1024), (32, 32));
        let g = GrowthSpec::new(1.0, vec![10, 20, 30]).unwrap();
        assert!(g.m_grid().iter().all(|&m| g.split(m).1 == 1));
        assert!(GrowthSpec::new(0.5, vec![4, 4]).is_err());
        assert!(GrowthSpec::new(1.5, vec![4]).is_err());
    }

    #[test]
    fn fit_exact_power_law() {
        let xs: Vec<f64> = (1..=12).map(|i| 2f64.powi(i)).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 7.0 * x.powf(-1.5)).collect();
        let f = fit_power_law(&xs, &ys, FitWindow::default()).unwrap();
        assert!((f.slope - 1.5).abs() < 1e-12);
        assert_eq!(f.r_squared, 1.0);
        assert_eq!(f.window, (2, 10));
        let flat = fit_power_law(&xs, &[3.0; 12], FitWindow::Full).unwrap();
        assert!(flat.slope.abs() < 1e-15);
    }

    #[test]
    fn fit_rejects_bad_input() {
        let xs = [1.0, 2.0, 4.0];
        assert!(matches!(
            fit_power_law(&xs, &[1.0, 0.0, 2.0], FitWindow::Full),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            fit_power_law(&xs, &[1.0, 2.0, 3.0], FitWindow::Indices(1, 2)),
            Err(Error::Fit(_))
        ));
        assert!(matches!(
            fit_power_law(&xs[..2], &[1.0, 2.0], FitWindow::Full),
            Err(Error::Fit(_))
        ));
    }

    #[test]
    fn source_exponent_inverts_definition() {
        let curve: Vec<(f64, f64)> = (4..12)
            .map(|i| 2f64.powi(i))
            .map(|p| (p, p.powf(-2.0 * 1.5 * 0.4)))
            .collect();
        let est = estimate_source_exponent(&curve, 1.5, FitWindow::Full).unwrap();
        assert!((est.r_hat - 0.4).abs() < 1e-10);
        assert!(!est.increasing_curve);
        let rising: Vec<(f64, f64)> = curve.iter().map(|&(p, _)| (p, p.sqrt())).collect();
        let est = estimate_source_exponent(&rising, 1.5, FitWindow::Full).unwrap();
        assert!(est.r_hat < 0.0 && est.increasing_curve);
    }

    struct RankDeficient;
    impl KernelProvider for RankDeficient {
        fn kernel(&self, p: usize, _rng: &mut ChaCha8Rng) -> Result<DMatrix<f64>> {
            // Rank 2 regardless of p.
            Ok(DMatrix::from_fn(p, p, |i, j| 1.0 + (i * j) as f64))
        }
    }

    #[test]
    fn singular_kernel_reported() {
        let r = trace_metric_alpha(&RankDeficient, &[4, 8, 16], 2, 1);
        assert!(matches!(r, Err(Error::Singular(_))));
        assert!(matches!(
            trace_metric_alpha(&RankDeficient, &[4, 8], 2, 1),
            Err(Error::Fit(_))
        ));
    }

    proptest! {
        #[test]
        fn exponent_nondecreasing_in_ell(alpha in 1.01f64..4.0, r in 0.01f64..2.0, a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let s_lo = theoretical_exponent(alpha, r, lo).unwrap().s;
            let s_hi = theoretical_exponent(alpha, r, hi).unwrap().s;
            prop_assert!(s_hi >= s_lo - 1e-12);
        }

        #[test]
        fn realized_budget_close_to_target(ell in 0.0f64..=1.0, m in 4u64..1_000_000) {
            let g = GrowthSpec::new(ell, vec![m]).unwrap();
            let (n, k) = g.split(m);
            let realized = (n * k) as f64;
            prop_assert!((realized - m as f64).abs() / m as f64 <= 0.5);
        }

        #[test]
        fn fit_recovers_random_power_laws(s in -3.0f64..3.0, c in 0.01f64..100.0) {
            let xs: Vec<f64> = (0..10).map(|i| 1.7f64.powi(i) * 3.0).collect();
            let ys: Vec<f64> = xs.iter().map(|x| c * x.powf(-s)).collect();
            let f = fit_power_law(&xs, &ys, FitWindow::Full).unwrap();
            prop_assert!((f.slope - s).abs() < 1e-12);
        }
    }
}
