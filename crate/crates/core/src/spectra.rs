//! Task eigenstructures: kernel spectrum, target decomposition and label noise.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{compensated_sum, fmt_f64, NeumaierSum};
use crate::output::atomic_write;

/// Header line of the spectrum CSV format.
pub const SPECTRUM_HEADER: &str = "t,eta,wbar";

/// Kernel eigenvalues `eta_t`, target weights `wbar_t` in the `theta_t`
/// basis, and the label-noise variance.
///
/// The spectrum is a finite truncation of length `T`. Eigenvalues are sorted
/// non-increasing and non-negative; zero eigenvalues (finite-rank kernels)
/// are allowed and sit at the tail.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskEigenstructure {
    eigenvalues: Vec<f64>,
    target_weights: Vec<f64>,
    noise_var: f64,
    // wbar_t^2 * eta_t, cached for the spectral sums.
    target_power: Vec<f64>,
    rank: usize,
}

impl TaskEigenstructure {
    pub fn new(eigenvalues: Vec<f64>, target_weights: Vec<f64>, noise_var: f64) -> Result<Self> {
        if eigenvalues.is_empty() {
            return Err(Error::EmptySpectrum);
        }
        if eigenvalues.len() != target_weights.len() {
            return Err(Error::Shape(format!(
                "{} eigenvalues but {} target weights",
                eigenvalues.len(),
                target_weights.len()
            )));
        }
        if !(noise_var >= 0.0 && noise_var.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "noise variance {noise_var} must be finite and >= 0"
            )));
        }
        for (i, (&e, &w)) in eigenvalues.iter().zip(&target_weights).enumerate() {
            if !(e >= 0.0 && e.is_finite()) {
                return Err(Error::Domain(format!(
                    "eigenvalue {} at t = {} is negative or non-finite",
                    e,
                    i + 1
                )));
            }
            if !w.is_finite() {
                return Err(Error::Domain(format!("target weight at t = {} is non-finite", i + 1)));
            }
            if i > 0 && e > eigenvalues[i - 1] {
                return Err(Error::Domain(format!(
                    "eigenvalues not sorted non-increasing at t = {} ({} > {})",
                    i + 1,
                    e,
                    eigenvalues[i - 1]
                )));
            }
        }
        let target_power: Vec<f64> = eigenvalues
            .iter()
            .zip(&target_weights)
            .map(|(&e, &w)| w * w * e)
            .collect();
        let power = compensated_sum(&target_power);
        if !power.is_finite() {
            return Err(Error::Domain("learnable power is not finite".into()));
        }
        let rank = eigenvalues.iter().take_while(|&&e| e > 0.0).count();
        Ok(TaskEigenstructure {
            eigenvalues,
            target_weights,
            noise_var,
            target_power,
            rank,
        })
    }

    /// Builds a spectrum from unsorted `(eta, wbar)` pairs, sorting them by
    /// eigenvalue descending.
    pub fn from_unsorted_pairs(mut pairs: Vec<(f64, f64)>, noise_var: f64) -> Result<Self> {
        if pairs.iter().any(|p| p.0.is_nan()) {
            return Err(Error::Domain("NaN eigenvalue".into()));
        }
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
        let (eta, wbar) = pairs.into_iter().unzip();
        Self::new(eta, wbar, noise_var)
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn target_weights(&self) -> &[f64] {
        &self.target_weights
    }

    /// Per-mode target power `wbar_t^2 eta_t`.
    pub fn target_power(&self) -> &[f64] {
        &self.target_power
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    /// Truncation length `T`.
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// Number of strictly positive eigenvalues.
    pub fn rank(&self) -> usize {
        self.rank
    }

    /// Sum of eigenvalues.
    pub fn trace(&self) -> f64 {
        compensated_sum(&self.eigenvalues)
    }

    /// The nonzero part of the spectrum as `(eta, wbar^2 eta)` slices.
    pub(crate) fn active(&self) -> (&[f64], &[f64]) {
        (&self.eigenvalues[..self.rank], &self.target_power[..self.rank])
    }

    pub fn with_noise_var(&self, noise_var: f64) -> Result<Self> {
        Self::new(self.eigenvalues.clone(), self.target_weights.clone(), noise_var)
    }

    /// Rescales so that `sum eta = 1` and `sum wbar^2 eta = 1` (when the
    /// learnable power is nonzero).
    pub fn normalized(&self) -> Result<Self> {
        let trace = self.trace();
        if trace <= 0.0 {
            return Err(Error::Domain("cannot normalize a spectrum with zero trace".into()));
        }
        let eta: Vec<f64> = self.eigenvalues.iter().map(|e| e / trace).collect();
        let power = learnable_power(self);
        let wscale = if power > 0.0 { (trace / power).sqrt() } else { 1.0 };
        let wbar = self.target_weights.iter().map(|w| w * wscale).collect();
        Self::new(eta, wbar, self.noise_var)
    }
}

/// Source/capacity parametrization of a power-law task.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerLawParams {
    /// Capacity exponent, `eta_t ~ t^-alpha`. Must exceed 1.
    pub alpha: f64,
    /// Source exponent, `wbar_t^2 eta_t ~ t^-(1 + 2 alpha r)`.
    pub r: f64,
    /// Number of stored modes.
    pub len: usize,
    pub noise_var: f64,
}

impl PowerLawParams {
    pub fn new(alpha: f64, r: f64, len: usize, noise_var: f64) -> Self {
        PowerLawParams {
            alpha,
            r,
            len,
            noise_var,
        }
    }
}

/// Default truncation length for theory evaluations at sample size `p` and
/// member width `n`: `max(10^6, 100 max(p, n))`.
///
/// Modes past the truncation are simply absent; for `alpha > 1` their
/// contribution to the degrees of freedom is below solver tolerance, but the
/// learnable power they would carry is dropped (a truncation bias of order
/// `T^(-2 alpha r)` in the target sums).
pub fn default_truncation(p: u64, n: u64) -> usize {
    let base = 100u64.saturating_mul(p.max(n));
    base.max(1_000_000) as usize
}

/// Power-law task normalized to unit trace and unit learnable power.
pub fn power_law_spectrum(params: &PowerLawParams) -> Result<TaskEigenstructure> {
    let PowerLawParams {
        alpha,
        r,
        len,
        noise_var,
    } = *params;
    if !(alpha > 1.0) || !alpha.is_finite() {
        return Err(Error::DivergentTrace { alpha });
    }
    if len == 0 {
        return Err(Error::EmptySpectrum);
    }
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "source exponent r = {r} must be positive"
        )));
    }
    let w_exp = -(1.0 - alpha + 2.0 * alpha * r) / 2.0;
    let mut eta = Vec::with_capacity(len);
    let mut wbar = Vec::with_capacity(len);
    for t in 1..=len {
        let tf = t as f64;
        eta.push(tf.powf(-alpha));
        wbar.push(tf.powf(w_exp));
    }
    let trace: NeumaierSum = eta.iter().copied().collect();
    let trace = trace.value();
    eta.iter_mut().for_each(|e| *e /= trace);
    let power: NeumaierSum = eta.iter().zip(&wbar).map(|(e, w)| w * w * e).collect();
    let scale = 1.0 / power.value().sqrt();
    wbar.iter_mut().for_each(|w| *w *= scale);
    TaskEigenstructure::new(eta, wbar, noise_var)
}

/// `sum_t wbar_t^2 eta_t`.
pub fn learnable_power(spec: &TaskEigenstructure) -> f64 {
    compensated_sum(spec.target_power())
}

/// Writes the spectrum CSV (`t,eta,wbar`, 17 significant digits).
pub fn save_spectrum(spec: &TaskEigenstructure, path: &Path) -> Result<()> {
    atomic_write(path, spectrum_csv(spec).as_bytes())
}

pub fn spectrum_csv(spec: &TaskEigenstructure) -> String {
    let mut out = String::with_capacity(48 * (spec.len() + 1));
    out.push_str(SPECTRUM_HEADER);
    out.push('\n');
    for (i, (e, w)) in spec.eigenvalues().iter().zip(spec.target_weights()).enumerate() {
        out.push_str(&format!("{},{},{}\n", i + 1, fmt_f64(*e), fmt_f64(*w)));
    }
    out
}

/// Reads a spectrum CSV. The noise variance is not stored in the file and is
/// supplied by the caller. Values are not renormalized.
pub fn load_spectrum(path: &Path, noise_var: f64) -> Result<TaskEigenstructure> {
    let text = fs::read_to_string(path)?;
    parse_spectrum(&text, path, noise_var)
}

fn parse_spectrum(text: &str, path: &Path, noise_var: f64) -> Result<TaskEigenstructure> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == SPECTRUM_HEADER => {}
        Some((_, h)) => {
            return Err(Error::format(
                path,
                1,
                format!("expected header `{SPECTRUM_HEADER}`, found `{h}`"),
            ))
        }
        None => return Err(Error::format(path, 1, "empty file")),
    }
    let mut eta = Vec::new();
    let mut wbar = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(Error::format(
                path,
                lineno,
                format!("expected 3 fields, found {}", fields.len()),
            ));
        }
        let t: usize = fields[0]
            .parse()
            .map_err(|_| Error::format(path, lineno, format!("bad index `{}`", fields[0])))?;
        if t != eta.len() + 1 {
            return Err(Error::format(
                path,
                lineno,
                format!("index {t} out of sequence, expected {}", eta.len() + 1),
            ));
        }
        let parse = |s: &str, what: &str| -> Result<f64> {
            let v: f64 = s
                .parse()
                .map_err(|_| Error::format(path, lineno, format!("bad {what} `{s}`")))?;
            if !v.is_finite() {
                return Err(Error::format(path, lineno, format!("non-finite {what}")));
            }
            Ok(v)
        };
        let e = parse(fields[1], "eta")?;
        let w = parse(fields[2], "wbar")?;
        if e < 0.0 {
            return Err(Error::format(path, lineno, format!("negative eigenvalue {e}")));
        }
        if let Some(&prev) = eta.last() {
            if e > prev {
                return Err(Error::format(
                    path,
                    lineno,
                    format!("eigenvalues unsorted: {e} > {prev}"),
                ));
            }
        }
        eta.push(e);
        wbar.push(w);
    }
    if eta.is_empty() {
        return Err(Error::format(path, 2, "empty spectrum"));
    }
    TaskEigenstructure::new(eta, wbar, noise_var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_mode_normalizes_to_unit_eigenvalue() {
        let s = power_law_spectrum(&PowerLawParams::new(2.0, 0.3, 1, 0.0)).unwrap();
        assert_eq!(s.eigenvalues(), &[1.0]);
        assert!((learnable_power(&s) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn large_power_law_is_normalized() {
        let s = power_law_spectrum(&PowerLawParams::new(1.5, 0.8, 1_000_000, 0.0)).unwrap();
        assert!((s.trace() - 1.0).abs() < 1e-12);
        assert!((learnable_power(&s) - 1.0).abs() < 1e-12);
        let ratio = s.eigenvalues()[1] / s.eigenvalues()[0];
        assert!((ratio - 2f64.powf(-1.5)).abs() < 1e-14);
        assert!((ratio - 0.35355).abs() < 1e-5);
    }

    #[test]
    fn target_power_follows_source_exponent() {
        let (alpha, r) = (1.5, 0.8);
        let s = power_law_spectrum(&PowerLawParams::new(alpha, r, 100, 0.0)).unwrap();
        let p = s.target_power();
        let slope = (p[49] / p[9]).ln() / (50f64 / 10.0).ln();
        assert!((slope + (1.0 + 2.0 * alpha * r)).abs() < 1e-10);
    }

    #[test]
    fn rejects_bad_params() {
        assert!(matches!(
            power_law_spectrum(&PowerLawParams::new(1.0, 0.5, 10, 0.0)),
            Err(Error::DivergentTrace { .. })
        ));
        assert!(matches!(
            power_law_spectrum(&PowerLawParams::new(1.5, 0.5, 0, 0.0)),
            Err(Error::EmptySpectrum)
        ));
    }

    #[test]
    fn learnable_power_direct_sum() {
        let s = TaskEigenstructure::new(vec![0.3], vec![2.0], 0.0).unwrap();
        assert!((learnable_power(&s) - 1.2).abs() < 1e-15);
        let z = TaskEigenstructure::new(vec![0.5, 0.2], vec![0.0, 0.0], 0.1).unwrap();
        assert_eq!(learnable_power(&z), 0.0);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("spec.csv");
        let s = power_law_spectrum(&PowerLawParams::new(1.5, 0.8, 100, 0.25)).unwrap();
        save_spectrum(&s, &path).unwrap();
        let back = load_spectrum(&path, 0.25).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn load_rejects_unsorted_with_line() {
        let err = parse_spectrum("t,eta,wbar\n1,0.1,1\n2,0.5,1\n", Path::new("x.csv"), 0.0).unwrap_err();
        match err {
            Error::Format { line, message, .. } => {
                assert_eq!(line, 3);
                assert!(message.contains("unsorted"));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn load_rejects_header_only_and_negative() {
        assert!(matches!(
            parse_spectrum("t,eta,wbar\n", Path::new("x"), 0.0),
            Err(Error::Format { .. })
        ));
        let err = parse_spectrum("t,eta,wbar\n1,-0.1,1\n", Path::new("x"), 0.0).unwrap_err();
        assert!(matches!(err, Error::Format { line: 2, .. }));
        let err = parse_spectrum("t,eta,wbar\n1,0.1\n", Path::new("x"), 0.0).unwrap_err();
        assert!(matches!(err, Error::Format { line: 2, .. }));
    }

    #[test]
    fn zero_eigenvalues_set_rank() {
        let s = TaskEigenstructure::new(vec![1.0, 0.5, 0.0, 0.0], vec![1.0; 4], 0.0).unwrap();
        assert_eq!(s.rank(), 2);
        assert_eq!(s.len(), 4);
    }

    #[test]
    fn normalized_restores_unit_sums() {
        let s = TaskEigenstructure::new(vec![4.0, 2.0, 1.0], vec![0.5, -1.0, 2.0], 0.0).unwrap();
        let n = s.normalized().unwrap();
        assert!((n.trace() - 1.0).abs() < 1e-15);
        assert!((learnable_power(&n) - 1.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn power_law_invariants(alpha in 1.05f64..4.0, r in 0.05f64..2.0, len in 1usize..5000) {
            let s = power_law_spectrum(&PowerLawParams::new(alpha, r, len, 0.0)).unwrap();
            prop_assert!((s.trace() - 1.0).abs() < 1e-12);
            prop_assert!((learnable_power(&s) - 1.0).abs() < 1e-12);
            prop_assert!(s.eigenvalues().windows(2).all(|w| w[0] >= w[1]));
            prop_assert!(s.eigenvalues().iter().all(|&e| e >= 0.0));
        }

        #[test]
        fn learnable_power_permutation_invariant(
            pairs in prop::collection::vec((0.0f64..1.0, -3.0f64..3.0), 1..60),
            seed in any::<u64>(),
        ) {
            let sorted = TaskEigenstructure::from_unsorted_pairs(pairs.clone(), 0.0).unwrap();
            let mut shuffled = pairs;
            // deterministic Fisher-Yates driven by the seed
            let mut state = seed;
            for i in (1..shuffled.len()).rev() {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let j = (state >> 33) as usize % (i + 1);
                shuffled.swap(i, j);
            }
            let direct: f64 = shuffled.iter().map(|(e, w)| w * w * e).collect::<NeumaierSum>().value();
            let lp = learnable_power(&sorted);
            prop_assert!((lp - direct).abs() <= 1e-12 * direct.abs().max(1.0));
        }
    }
}
