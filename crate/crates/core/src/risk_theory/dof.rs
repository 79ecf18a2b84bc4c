//! Degrees of freedom `Df_n(kappa)` and target measures `tf_n(kappa)`.

use crate::error::{Error, Result};
use crate::numeric::paired_sums;
use crate::spectra::TaskEigenstructure;

/// Order `n` of a degrees-of-freedom sum.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Order {
    First,
    Second,
}

impl TryFrom<u32> for Order {
    type Error = Error;
    fn try_from(n: u32) -> Result<Order> {
        match n {
            1 => Ok(Order::First),
            2 => Ok(Order::Second),
            _ => Err(Error::InvalidParameter(format!("order {n} not in {{1, 2}}"))),
        }
    }
}

fn check_kappa(kappa: f64) -> Result<()> {
    if kappa >= 0.0 && kappa.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "kappa = {kappa} must be finite and non-negative"
        )))
    }
}

/// `Df_n(kappa) = sum_t eta_t^n / (eta_t + kappa)^n`. At `kappa = 0` this is
/// the number of nonzero eigenvalues.
pub fn df(spec: &TaskEigenstructure, kappa: f64, order: Order) -> Result<f64> {
    check_kappa(kappa)?;
    if kappa == 0.0 {
        return Ok(spec.rank() as f64);
    }
    let m = moments(spec, kappa);
    Ok(match order {
        Order::First => m.df1,
        Order::Second => m.df2,
    })
}

/// `tf_n(kappa) = sum_t wbar_t^2 eta_t^n / (eta_t + kappa)^n`.
pub fn tf(spec: &TaskEigenstructure, kappa: f64, order: Order) -> Result<f64> {
    check_kappa(kappa)?;
    let m = moments(spec, kappa);
    Ok(match order {
        Order::First => m.tf1,
        Order::Second => m.tf2,
    })
}

/// `d tf_1 / d kappa = -sum_t wbar_t^2 eta_t / (eta_t + kappa)^2`.
pub fn tf1_prime(spec: &TaskEigenstructure, kappa: f64) -> Result<f64> {
    check_kappa(kappa)?;
    Ok(-moments(spec, kappa).neg_tf1_prime)
}

/// All first-pass spectral sums at one `kappa`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct SpectralMoments {
    pub df1: f64,
    pub df2: f64,
    /// `Df_1 - Df_2 = sum eta kappa / (eta + kappa)^2`, summed directly.
    pub df_gap: f64,
    pub tf1: f64,
    pub tf2: f64,
    /// `-tf_1'(kappa)`.
    pub neg_tf1_prime: f64,
}

pub(crate) fn moments(spec: &TaskEigenstructure, kappa: f64) -> SpectralMoments {
    let (eta, power) = spec.active();
    let [df1, df2, df_gap, tf1, tf2, neg_tf1_prime] = paired_sums(eta, power, |e, p| {
        let inv = 1.0 / (e + kappa);
        let q = e * inv;
        let pinv = p * inv;
        [q, q * q, q * (kappa * inv), pinv, pinv * q, pinv * inv]
    });
    SpectralMoments {
        df1,
        df2,
        df_gap,
        tf1,
        tf2,
        neg_tf1_prime,
    }
}

/// `(Df_1, Df_1 - Df_2)`; the only sums the fixed-point solver needs.
pub(crate) fn df1_and_gap(spec: &TaskEigenstructure, kappa: f64) -> (f64, f64) {
    let (eta, _) = spec.active();
    let [df1, gap] = paired_sums(eta, eta, |e, _| {
        let inv = 1.0 / (e + kappa);
        let q = e * inv;
        [q, q * (kappa * inv)]
    });
    (df1, gap)
}

/// Derivatives used by the small-ridge expansion.
#[derive(Clone, Copy, Debug)]
pub(crate) struct SlopeMoments {
    pub df1_prime: f64,
    pub df2_prime: f64,
    pub tf2_prime: f64,
}

pub(crate) fn slope_moments(spec: &TaskEigenstructure, kappa: f64) -> SlopeMoments {
    let (eta, power) = spec.active();
    let [d1, d2, t2] = paired_sums(eta, power, |e, p| {
        let inv = 1.0 / (e + kappa);
        let q = e * inv;
        [q * inv, q * q * inv, p * q * inv * inv]
    });
    SlopeMoments {
        df1_prime: -d1,
        df2_prime: -2.0 * d2,
        tf2_prime: -2.0 * t2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectra::{power_law_spectrum, PowerLawParams};

    fn one_mode() -> TaskEigenstructure {
        TaskEigenstructure::new(vec![1.0], vec![1.0], 0.0).unwrap()
    }

    #[test]
    fn single_mode_values() {
        let s = one_mode();
        assert_eq!(df(&s, 1.0, Order::First).unwrap(), 0.5);
        assert_eq!(tf(&s, 1.0, Order::First).unwrap(), 0.5);
        assert_eq!(df(&s, 1.0, Order::Second).unwrap(), 0.25);
    }

    #[test]
    fn zero_ridge_counts_rank() {
        let s = TaskEigenstructure::new(vec![1.0, 0.5, 0.25], vec![1.0; 3], 0.0).unwrap();
        assert_eq!(df(&s, 0.0, Order::Second).unwrap(), 3.0);
        let s = TaskEigenstructure::new(vec![1.0, 0.5, 0.0], vec![1.0; 3], 0.0).unwrap();
        assert_eq!(df(&s, 0.0, Order::First).unwrap(), 2.0);
    }

    #[test]
    fn zero_target_gives_zero_tf() {
        let s = TaskEigenstructure::new(vec![1.0, 0.5], vec![0.0, 0.0], 0.0).unwrap();
        for k in [0.0, 1e-3, 1.0] {
            assert_eq!(tf(&s, k, Order::First).unwrap(), 0.0);
            assert_eq!(tf(&s, k, Order::Second).unwrap(), 0.0);
            assert_eq!(tf1_prime(&s, k).unwrap(), 0.0);
        }
    }

    #[test]
    fn negative_kappa_is_domain_error() {
        let s = one_mode();
        assert!(matches!(df(&s, -1e-3, Order::First), Err(Error::Domain(_))));
        assert!(matches!(tf(&s, -1.0, Order::Second), Err(Error::Domain(_))));
        assert!(matches!(tf1_prime(&s, f64::NAN), Err(Error::Domain(_))));
    }

    #[test]
    fn order_from_integer() {
        assert_eq!(Order::try_from(2).unwrap(), Order::Second);
        assert!(Order::try_from(3).is_err());
    }

    #[test]
    fn slope_moments_match_finite_differences() {
        let s = power_law_spectrum(&PowerLawParams::new(1.5, 0.8, 5000, 0.0)).unwrap();
        let k = 0.01;
        let h = 1e-6;
        let sm = slope_moments(&s, k);
        let (p, m) = (moments(&s, k + h), moments(&s, k - h));
        let fd = |a: f64, b: f64| (a - b) / (2.0 * h);
        assert!((sm.df1_prime - fd(p.df1, m.df1)).abs() < 1e-6 * sm.df1_prime.abs());
        assert!((sm.df2_prime - fd(p.df2, m.df2)).abs() < 1e-6 * sm.df2_prime.abs());
        assert!((sm.tf2_prime - fd(p.tf2, m.tf2)).abs() < 1e-6 * sm.tf2_prime.abs());
        // Df_1' = -(Df_1 - Df_2) / kappa
        let mm = moments(&s, k);
        assert!((sm.df1_prime + mm.df_gap / k).abs() < 1e-12 * sm.df1_prime.abs());
    }
}
