//! Randomized numerical checks of the monotonicity theorems, the parameter
//! count bound and the small-ridge `K N` equivalence.
//!
//! Violations are report content. Only malformed inputs return errors.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::risk_theory::{small_ridge_expansion, RidgeProfile, RidgeSearch};
use crate::rng::{substream, StreamTag};
use crate::spectra::{power_law_spectrum, PowerLawParams, TaskEigenstructure};

/// Numerical slack on ridge-optimized comparisons: `abs + rel * risk`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Slack {
    pub abs: f64,
    pub rel: f64,
}

impl Slack {
    /// `1e-9` plus twice the optimizer's refinement tolerance.
    pub fn for_search(search: &RidgeSearch) -> Self {
        Slack {
            abs: 1e-9,
            rel: 2.0 * search.rel_tol,
        }
    }

    pub fn at(&self, risk: f64) -> f64 {
        self.abs + self.rel * risk.abs()
    }
}

/// Power-law task parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskDraw {
    pub alpha: f64,
    pub r: f64,
    pub noise_var: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTask {
    pub label: String,
    pub spec: TaskEigenstructure,
}

impl NamedTask {
    pub fn power_law(draw: TaskDraw, truncation: usize) -> Result<Self> {
        let spec = power_law_spectrum(&PowerLawParams::new(draw.alpha, draw.r, truncation, draw.noise_var))?;
        Ok(NamedTask {
            label: format!("alpha={} r={} noise_var={}", draw.alpha, draw.r, draw.noise_var),
            spec,
        })
    }
}

/// Uniform ranges for random power-law tasks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSampler {
    pub alpha: (f64, f64),
    pub r: (f64, f64),
    pub noise_var: (f64, f64),
    pub truncation: usize,
}

impl Default for TaskSampler {
    fn default() -> Self {
        TaskSampler {
            alpha: (1.1, 3.0),
            r: (0.1, 1.5),
            noise_var: (0.0, 0.5),
            truncation: 20_000,
        }
    }
}

impl TaskSampler {
    /// Task `index` of the stream seeded by `seed`.
    pub fn draw(&self, seed: u64, index: u64) -> TaskDraw {
        let mut rng = substream(seed, StreamTag::Tasks, &[index]);
        let mut uniform = |(lo, hi): (f64, f64)| lo + (hi - lo) * rng.random::<f64>();
        TaskDraw {
            alpha: uniform(self.alpha),
            r: uniform(self.r),
            noise_var: uniform(self.noise_var),
        }
    }

    pub fn sample(&self, count: usize, seed: u64) -> Result<Vec<NamedTask>> {
        (0..count as u64)
            .map(|i| NamedTask::power_law(self.draw(seed, i), self.truncation))
            .collect()
    }
}

/// One side of a comparison.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridPoint {
    pub p: u64,
    pub n: u64,
    pub k: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub task: String,
    pub detail: String,
    pub base: Option<GridPoint>,
    pub other: Option<GridPoint>,
    pub base_risk: f64,
    pub other_risk: f64,
    pub margin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub check: String,
    pub passed: bool,
    pub comparisons: usize,
    pub violations: Vec<Violation>,
    /// Smallest margin over all comparisons; negative means violated.
    pub worst_margin: f64,
}

impl CheckReport {
    fn new(check: &str) -> Self {
        CheckReport {
            check: check.into(),
            passed: true,
            comparisons: 0,
            violations: Vec::new(),
            worst_margin: f64::INFINITY,
        }
    }

    fn merge(&mut self, other: CheckReport) {
        self.comparisons += other.comparisons;
        self.violations.extend(other.violations);
        self.worst_margin = self.worst_margin.min(other.worst_margin);
        self.passed = self.violations.is_empty();
    }

    /// Records a comparison; non-finite or negative margins are violations.
    fn record(&mut self, margin: f64, make: impl FnOnce() -> Violation) {
        self.comparisons += 1;
        self.worst_margin = self
            .worst_margin
            .min(if margin.is_nan() { f64::NEG_INFINITY } else { margin });
        if !(margin >= 0.0) {
            self.violations.push(make());
            self.passed = false;
        }
    }

    fn failure(&mut self, task: &str, detail: String) {
        self.violations.push(Violation {
            task: task.into(),
            detail,
            base: None,
            other: None,
            base_risk: f64::NAN,
            other_risk: f64::NAN,
            margin: f64::NEG_INFINITY,
        });
        self.worst_margin = f64::NEG_INFINITY;
        self.passed = false;
    }
}

/// Which way the harness compares. `Swapped` inverts every expected
/// inequality and exists to test the harness itself.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Expected,
    Swapped,
}

/// Axes of a doubling grid. Comparisons are made between every point and
/// its neighbour with one coordinate doubled, when that neighbour exists.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoublingGrid {
    pub p: Vec<u64>,
    pub n: Vec<u64>,
    pub k: Vec<u64>,
}

impl Default for DoublingGrid {
    fn default() -> Self {
        DoublingGrid {
            p: vec![16, 32, 64, 128],
            n: vec![16, 32, 64, 128],
            k: vec![1, 2, 4],
        }
    }
}

impl DoublingGrid {
    fn validate(&self) -> Result<()> {
        for (name, axis) in [("P", &self.p), ("N", &self.n), ("K", &self.k)] {
            if axis.is_empty() || axis.contains(&0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} axis must be non-empty and positive"
                )));
            }
        }
        Ok(())
    }
}

/// Ridge-optimized risks of one task over a set of `(P, N)` pairs and sizes.
fn optimal_risks(
    spec: &TaskEigenstructure,
    pn: &[(u64, u64)],
    ks: &[u64],
    search: &RidgeSearch,
) -> Result<BTreeMap<GridPoint, f64>> {
    let mut out = BTreeMap::new();
    for &(p, n) in pn {
        let profile = RidgeProfile::new(spec, p as f64, n as f64, search)?;
        for &k in ks {
            out.insert(GridPoint { p, n, k }, profile.optimize(k as f64)?.risk);
        }
    }
    Ok(out)
}

fn monotone_report(
    check: &str,
    task: &str,
    risks: &BTreeMap<GridPoint, f64>,
    pairs: impl Iterator<Item = (GridPoint, GridPoint)>,
    slack: Slack,
    direction: Direction,
) -> CheckReport {
    let mut report = CheckReport::new(check);
    for (base, other) in pairs {
        let (rb, ro) = (risks[&base], risks[&other]);
        // Expected: risk(other) <= risk(base) + slack.
        let margin = match direction {
            Direction::Expected => rb + slack.at(rb) - ro,
            Direction::Swapped => ro + slack.at(ro) - rb,
        };
        report.record(margin, || Violation {
            task: task.into(),
            detail: format!("risk rose from {rb:e} to {ro:e}"),
            base: Some(base),
            other: Some(other),
            base_risk: rb,
            other_risk: ro,
            margin,
        });
    }
    report
}

fn merge_reports(check: &str, parts: Vec<CheckReport>) -> CheckReport {
    let mut report = CheckReport::new(check);
    for part in parts {
        report.merge(part);
    }
    report
}

/// Checks that the ridge-optimized risk does not rise when any one of
/// `P`, `N`, `K` is doubled.
pub fn check_more_is_better(
    tasks: &[NamedTask],
    grid: &DoublingGrid,
    search: &RidgeSearch,
    direction: Direction,
) -> Result<CheckReport> {
    const CHECK: &str = "more_is_better";
    grid.validate()?;
    search.validate()?;
    let slack = Slack::for_search(search);
    let pn: Vec<(u64, u64)> = grid
        .p
        .iter()
        .flat_map(|&p| grid.n.iter().map(move |&n| (p, n)))
        .collect();
    let parts = tasks
        .par_iter()
        .map(|task| {
            let risks = match optimal_risks(&task.spec, &pn, &grid.k, search) {
                Ok(r) => r,
                Err(e) => {
                    let mut report = CheckReport::new(CHECK);
                    report.failure(&task.label, format!("evaluation failed: {e}"));
                    return report;
                }
            };
            let pairs = risks.keys().flat_map(|&g| {
                [
                    GridPoint { p: 2 * g.p, ..g },
                    GridPoint { n: 2 * g.n, ..g },
                    GridPoint { k: 2 * g.k, ..g },
                ]
                .into_iter()
                .filter(|d| risks.contains_key(d))
                .map(move |d| (g, d))
            });
            monotone_report(CHECK, &task.label, &risks, pairs, slack, direction)
        })
        .collect();
    Ok(merge_reports(CHECK, parts))
}

/// Checks that at fixed `M = K N` the ridge-optimized risk is non-decreasing
/// in `K`, and strictly increasing when the task has learnable power.
pub fn check_no_free_lunch(
    tasks: &[NamedTask],
    m: u64,
    k_list: &[u64],
    p_list: &[u64],
    search: &RidgeSearch,
    direction: Direction,
) -> Result<CheckReport> {
    const CHECK: &str = "no_free_lunch";
    search.validate()?;
    if k_list.is_empty() || p_list.is_empty() {
        return Err(Error::InvalidParameter("K and P lists must be non-empty".into()));
    }
    if let Some(bad) = k_list.iter().find(|&&k| k == 0 || !m.is_multiple_of(k)) {
        return Err(Error::InvalidParameter(format!("K = {bad} does not divide M = {m}")));
    }
    let mut ks = k_list.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let slack = Slack::for_search(search);
    let parts = tasks
        .par_iter()
        .map(|task| {
            let mut report = CheckReport::new(CHECK);
            let strict = task.spec.target_power().iter().sum::<f64>() > 0.0;
            for &p in p_list {
                let risks: Result<Vec<f64>> = ks
                    .iter()
                    .map(|&k| {
                        Ok(RidgeProfile::new(&task.spec, p as f64, (m / k) as f64, search)?
                            .optimize(k as f64)?
                            .risk)
                    })
                    .collect();
                let risks = match risks {
                    Ok(r) => r,
                    Err(e) => {
                        report.failure(&task.label, format!("evaluation failed at P = {p}: {e}"));
                        continue;
                    }
                };
                for (w, rw) in ks.windows(2).zip(risks.windows(2)) {
                    let (lo, hi) = (rw[0], rw[1]);
                    let (base, other) = (
                        GridPoint {
                            p,
                            n: m / w[0],
                            k: w[0],
                        },
                        GridPoint {
                            p,
                            n: m / w[1],
                            k: w[1],
                        },
                    );
                    // Expected: hi >= lo, with a gap above the slack when strict.
                    let gap = match direction {
                        Direction::Expected => hi - lo,
                        Direction::Swapped => lo - hi,
                    };
                    let margin = if strict { gap - slack.at(lo) } else { gap + slack.at(lo) };
                    report.record(margin, || Violation {
                        task: task.label.clone(),
                        detail: format!(
                            "{} K = {} -> {}: risk {lo:e} -> {hi:e}",
                            if strict {
                                "strict increase expected"
                            } else {
                                "non-decrease expected"
                            },
                            w[0],
                            w[1]
                        ),
                        base: Some(base),
                        other: Some(other),
                        base_risk: lo,
                        other_risk: hi,
                        margin,
                    });
                }
            }
            report
        })
        .collect();
    Ok(merge_reports(CHECK, parts))
}

/// One cell of a ridge-optimized risk table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskCell {
    pub k: u64,
    pub n: u64,
    pub risk: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskTable {
    pub label: String,
    pub p: u64,
    pub cells: Vec<RiskCell>,
}

/// Ridge-optimized risks over `K x N`, one ridge profile per width.
pub fn optimal_risk_table(
    task: &NamedTask,
    p: u64,
    k_list: &[u64],
    n_list: &[u64],
    search: &RidgeSearch,
) -> Result<RiskTable> {
    let rows: Vec<Vec<RiskCell>> = n_list
        .par_iter()
        .map(|&n| {
            let profile = RidgeProfile::new(&task.spec, p as f64, n as f64, search)?;
            k_list
                .iter()
                .map(|&k| {
                    Ok(RiskCell {
                        k,
                        n,
                        risk: profile.optimize(k as f64)?.risk,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(RiskTable {
        label: format!("{} P={p}", task.label),
        p,
        cells: rows.into_iter().flatten().collect(),
    })
}

/// For every ordered pair of cells with `K' > K` or `N' < N`, a risk at least
/// as low requires `K' N' >= K N`.
pub fn check_corollary_bound(tables: &[RiskTable], slack: Slack, direction: Direction) -> CheckReport {
    const CHECK: &str = "corollary_bound";
    let mut report = CheckReport::new(CHECK);
    for table in tables {
        for a in &table.cells {
            for b in &table.cells {
                if !(b.k > a.k || b.n < a.n) {
                    continue;
                }
                let (base, other) = (
                    GridPoint {
                        p: table.p,
                        n: a.n,
                        k: a.k,
                    },
                    GridPoint {
                        p: table.p,
                        n: b.n,
                        k: b.k,
                    },
                );
                let fewer = b.k * b.n < a.k * a.n;
                let (beats, loses) = match direction {
                    Direction::Expected => (b.risk, a.risk),
                    Direction::Swapped => (a.risk, b.risk),
                };
                // Only a clear win with fewer parameters contradicts the bound.
                let margin = if fewer {
                    beats - (loses - slack.at(loses))
                } else {
                    f64::INFINITY
                };
                if fewer {
                    report.record(margin, || Violation {
                        task: table.label.clone(),
                        detail: format!(
                            "K'N' = {} < KN = {} yet risk {:e} <= {:e}",
                            b.k * b.n,
                            a.k * a.n,
                            b.risk,
                            a.risk
                        ),
                        base: Some(base),
                        other: Some(other),
                        base_risk: a.risk,
                        other_risk: b.risk,
                        margin,
                    });
                }
            }
        }
    }
    report
}

/// Smallest real ensemble size at which width `n` matches a reference risk.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParityPoint {
    pub n: u64,
    /// `None` when no ensemble size reaches the reference.
    pub k_star: Option<f64>,
    /// `k_star * n / (K N)` of the reference.
    pub ratio: Option<f64>,
}

const PARITY_MAX_K: f64 = 1e8;

/// Parity frontier against the ridge-optimized risk of `reference = (K, N)`.
/// The ensemble size is treated as real-valued, since the risk depends on it
/// only through `Bias^2 + Var / K`.
pub fn parity_frontier(
    spec: &TaskEigenstructure,
    p: u64,
    reference: (u64, u64),
    n_list: &[u64],
    search: &RidgeSearch,
) -> Result<Vec<ParityPoint>> {
    let (kr, nr) = reference;
    let target = RidgeProfile::new(spec, p as f64, nr as f64, search)?
        .optimize(kr as f64)?
        .risk;
    n_list
        .par_iter()
        .map(|&n| {
            let profile = RidgeProfile::new(spec, p as f64, n as f64, search)?;
            let risk_at = |k: f64| profile.optimize(k).map(|o| o.risk);
            let k_star = if risk_at(1.0)? <= target {
                Some(1.0)
            } else if risk_at(PARITY_MAX_K)? > target {
                None
            } else {
                let (mut lo, mut hi) = (0.0f64, PARITY_MAX_K.ln());
                while hi - lo > 1e-9 {
                    let mid = 0.5 * (lo + hi);
                    if risk_at(mid.exp())? <= target {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                Some(hi.exp())
            };
            Ok(ParityPoint {
                n,
                k_star,
                ratio: k_star.map(|k| k * n as f64 / (kr * nr) as f64),
            })
        })
        .collect()
}

/// Ensemble size and member width `(K, N)`.
pub type SizePair = (u64, u64);

/// Checks that the small-ridge expansion is identical for pairs with equal
/// `K N`.
pub fn check_kn_equivalence(
    spec: &TaskEigenstructure,
    p: u64,
    pairs: &[(SizePair, SizePair)],
    lambda: f64,
) -> Result<CheckReport> {
    let mut report = CheckReport::new("kn_equivalence");
    for &((k1, n1), (k2, n2)) in pairs {
        if k1 * n1 != k2 * n2 {
            return Err(Error::InvalidParameter(format!(
                "{k1} x {n1} and {k2} x {n2} differ in K N"
            )));
        }
        let a = small_ridge_expansion(spec, p, n1, k1, lambda)?;
        let b = small_ridge_expansion(spec, p, n2, k2, lambda)?;
        let margin = if a == b { 0.0 } else { -(a - b).abs() };
        report.record(margin, || Violation {
            task: format!("P={p} lambda={lambda:e}"),
            detail: "expansion differs between equal K N".into(),
            base: Some(GridPoint { p, n: n1, k: k1 }),
            other: Some(GridPoint { p, n: n2, k: k2 }),
            base_risk: a,
            other_risk: b,
            margin,
        });
    }
    Ok(report)
}

/// Runs the monotonicity checks with swapped comparisons on a task with
/// learnable power and returns whether violations were detected.
pub fn harness_self_test(search: &RidgeSearch) -> Result<bool> {
    let task = NamedTask::power_law(
        TaskDraw {
            alpha: 1.5,
            r: 0.8,
            noise_var: 0.1,
        },
        5_000,
    )?;
    let grid = DoublingGrid {
        p: vec![16, 32],
        n: vec![16, 32],
        k: vec![1, 2],
    };
    let tasks = [task];
    let more = check_more_is_better(&tasks, &grid, search, Direction::Swapped)?;
    let nfl = check_no_free_lunch(&tasks, 64, &[1, 2, 4], &[32], search, Direction::Swapped)?;
    let table = optimal_risk_table(&tasks[0], 32, &[1, 2, 4], &[16, 32, 64], search)?;
    let bound = check_corollary_bound(&[table], Slack::for_search(search), Direction::Swapped);
    Ok(!more.passed && !nfl.passed && !bound.passed)
}

/// Combined JSON report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub checks: Vec<CheckReport>,
}

impl VerifyReport {
    pub fn new(checks: Vec<CheckReport>) -> Self {
        VerifyReport {
            passed: checks.iter().all(|c| c.passed),
            checks,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> RidgeSearch {
        RidgeSearch {
            grid_points: 41,
            ..RidgeSearch::default()
        }
    }

    fn draw(alpha: f64, r: f64, noise_var: f64) -> NamedTask {
        NamedTask::power_law(TaskDraw { alpha, r, noise_var }, 4_000).unwrap()
    }

    #[test]
    fn sampler_is_deterministic_and_in_range() {
        let s = TaskSampler::default();
        for i in 0..50 {
            let d = s.draw(9, i);
            assert_eq!(d, s.draw(9, i));
            assert!((1.1..3.0).contains(&d.alpha) && (0.1..1.5).contains(&d.r) && (0.0..0.5).contains(&d.noise_var));
        }
        assert_ne!(s.draw(9, 0), s.draw(10, 0));
    }

    #[test]
    fn zero_task_has_zero_risk_and_no_violations() {
        let spec = TaskEigenstructure::new(vec![1.0, 0.5, 0.25, 0.125], vec![0.0; 4], 0.0).unwrap();
        let task = NamedTask {
            label: "zero".into(),
            spec,
        };
        let grid = DoublingGrid {
            p: vec![1, 2],
            n: vec![1, 2],
            k: vec![1, 2],
        };
        let report = check_more_is_better(std::slice::from_ref(&task), &grid, &quick(), Direction::Expected).unwrap();
        assert!(report.passed, "{report:?}");
        let table = optimal_risk_table(&task, 2, &[1, 2], &[1, 2], &quick()).unwrap();
        assert!(table.cells.iter().all(|c| c.risk == 0.0));
    }

    #[test]
    fn pure_noise_accepts_equality() {
        let spec = TaskEigenstructure::new(vec![1.0, 0.5, 0.25], vec![0.0; 3], 1.0).unwrap();
        let task = NamedTask {
            label: "noise".into(),
            spec,
        };
        let report = check_no_free_lunch(&[task], 8, &[1, 2, 4, 8], &[4], &quick(), Direction::Expected).unwrap();
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn strict_increase_detected() {
        let task = draw(1.5, 0.8, 0.0);
        let report =
            check_no_free_lunch(&[task], 512, &[1, 2, 4, 8, 16], &[256], &quick(), Direction::Expected).unwrap();
        assert!(report.passed, "{report:?}");
        assert!(report.worst_margin > 0.0);
    }

    #[test]
    fn k_must_divide_m() {
        let task = draw(1.5, 0.8, 0.0);
        assert!(check_no_free_lunch(&[task], 10, &[3], &[8], &quick(), Direction::Expected).is_err());
    }

    #[test]
    fn single_cell_table_is_vacuous() {
        let table = RiskTable {
            label: "one".into(),
            p: 8,
            cells: vec![RiskCell { k: 1, n: 8, risk: 0.3 }],
        };
        let report = check_corollary_bound(&[table], Slack { abs: 1e-9, rel: 0.0 }, Direction::Expected);
        assert!(report.passed);
        assert_eq!(report.comparisons, 0);
    }

    #[test]
    fn corollary_flags_cheap_winner() {
        // (K=2, N=4) beats (K=1, N=16) with half the parameters.
        let table = RiskTable {
            label: "planted".into(),
            p: 8,
            cells: vec![RiskCell { k: 1, n: 16, risk: 0.3 }, RiskCell { k: 2, n: 4, risk: 0.2 }],
        };
        let report = check_corollary_bound(&[table], Slack { abs: 1e-9, rel: 0.0 }, Direction::Expected);
        assert!(!report.passed);
        assert_eq!(report.violations.len(), 1);
    }

    #[test]
    fn self_test_detects_swapped_comparisons() {
        assert!(harness_self_test(&quick()).unwrap());
    }

    #[test]
    fn few_random_tasks_pass() {
        let tasks = TaskSampler {
            truncation: 4_000,
            ..TaskSampler::default()
        }
        .sample(3, 1)
        .unwrap();
        let grid = DoublingGrid {
            p: vec![16, 32],
            n: vec![16, 32],
            k: vec![1, 2],
        };
        let report = check_more_is_better(&tasks, &grid, &quick(), Direction::Expected).unwrap();
        assert!(report.passed, "{report:?}");
        assert_eq!(report.comparisons, 3 * 12);
    }

    #[test]
    fn parity_reference_is_its_own_frontier() {
        let task = draw(1.2, 1.0, 0.0);
        let front = parity_frontier(&task.spec, 16, (1, 256), &[256, 128], &quick()).unwrap();
        assert_eq!(front[0].k_star, Some(1.0));
        let half = front[1].ratio.unwrap();
        assert!(half >= 1.0, "{half}");
    }

    #[test]
    fn kn_pairs_must_match() {
        let task = draw(1.5, 0.8, 0.0);
        let ok = check_kn_equivalence(&task.spec, 16, &[((1, 256), (2, 128)), ((4, 64), (8, 32))], 1e-3).unwrap();
        assert!(ok.passed, "{ok:?}");
        assert!(check_kn_equivalence(&task.spec, 16, &[((1, 256), (2, 64))], 1e-3).is_err());
    }
}
