//! Deviation terms for the four concentration inequalities used by the
//! estimators: Chernoff with known mean, Hoeffding, the multiplicative
//! Chernoff bound for an unknown mean, and Azuma for martingales.
//!
//! Logarithms of tiny failure probabilities are handled in log space so
//! that arguments like `eps^4 / 16` never underflow.

use crate::error::{check_prob_open, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Lemma {
    Chernoff,
    Hoeffding,
    MultChernoff,
    Azuma,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Lower,
    Upper,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviationResult {
    pub lower_dev: f64,
    pub upper_dev: f64,
    pub valid: bool,
    pub lemma_used: Lemma,
}

/// `sqrt(c * x * ln(1/y))` with `ln(1/y)` supplied directly.
fn root(c: f64, x: f64, ln_inv_y: f64) -> f64 {
    (c * x * ln_inv_y).max(0.0).sqrt()
}

fn ln_inv(y: f64) -> f64 {
    -y.ln()
}

/// g_C(x, y) = sqrt(2 x ln(1/y)).
pub fn g_c(x: f64, y: f64) -> f64 {
    root(2.0, x, ln_inv(y))
}

/// ĝ_C(x, y) = sqrt(3 x ln(1/y)).
pub fn g_c_hat(x: f64, y: f64) -> f64 {
    root(3.0, x, ln_inv(y))
}

/// g_H(x, y) = sqrt(x/2 ln(1/y)).
pub fn g_h(x: f64, y: f64) -> f64 {
    root(0.5, x, ln_inv(y))
}

/// g_M(x, y) = sqrt(2 x ln(1/y)).
pub fn g_m(x: f64, y: f64) -> f64 {
    root(2.0, x, ln_inv(y))
}

/// g_A(x, y) = sqrt(2 x ln(1/y)).
pub fn g_a(x: f64, y: f64) -> f64 {
    root(2.0, x, ln_inv(y))
}

fn check_count(name: &str, x: f64) -> Result<()> {
    if x.is_finite() && x >= 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "{name} = {x} must be a finite nonnegative count"
        )))
    }
}

/// Chernoff deviations around a known mean `mean`.
pub fn chernoff_devs(mean: f64, eps_lo: f64, eps_hi: f64) -> Result<DeviationResult> {
    check_count("mean", mean)?;
    check_prob_open("eps_lo", eps_lo)?;
    check_prob_open("eps_hi", eps_hi)?;
    let valid = if mean > 0.0 {
        let a = g_c(1.0 / mean, eps_lo);
        let b = g_c_hat(1.0 / mean, eps_hi);
        a > 0.0 && a < 1.0 && b > 0.0 && b < 1.0
    } else {
        false
    };
    Ok(DeviationResult {
        lower_dev: g_c(mean, eps_lo),
        upper_dev: g_c_hat(mean, eps_hi),
        valid,
        lemma_used: Lemma::Chernoff,
    })
}

pub fn hoeffding_dev(trials: f64, eps: f64) -> Result<f64> {
    check_count("trials", trials)?;
    check_prob_open("eps", eps)?;
    Ok(g_h(trials, eps))
}

/// Deviations of the multiplicative Chernoff bound for an observed value
/// `observed` out of `trials` Bernoulli trials with unknown mean.
pub fn mult_chernoff_devs(
    observed: f64,
    trials: f64,
    eps_h: f64,
    eps_m: f64,
    eps_m_hat: f64,
) -> Result<DeviationResult> {
    check_count("observed", observed)?;
    check_count("trials", trials)?;
    check_prob_open("eps_H", eps_h)?;
    check_prob_open("eps_M", eps_m)?;
    check_prob_open("eps_M_hat", eps_m_hat)?;
    if observed > trials * (1.0 + 1e-12) {
        return Err(Error::Domain(format!(
            "observed {observed} exceeds trials {trials}"
        )));
    }
    let ln_m = ln_inv(eps_m);
    let ln_m_hat = ln_inv(eps_m_hat);
    let mu_l = observed - g_h(trials, eps_h);
    let valid =
        mu_l > 0.0 && (2.0f64.ln() + ln_m_hat) / mu_l <= 9.0 / 32.0 && ln_m / mu_l < 1.0 / 3.0;
    Ok(DeviationResult {
        lower_dev: root(2.0, observed, 1.5 * ln_m),
        upper_dev: root(2.0, observed, 4.0 * ln_m_hat + 16.0f64.ln()),
        valid,
        lemma_used: Lemma::MultChernoff,
    })
}

pub fn azuma_dev(trials: f64, eps: f64) -> Result<f64> {
    check_count("trials", trials)?;
    check_prob_open("eps", eps)?;
    Ok(g_a(trials, eps))
}

/// Bound on the mean of a sum of Bernoulli variables from its observed
/// value, taking whichever of the multiplicative Chernoff and Hoeffding
/// deviations is smaller. `total` is the number of trials that could have
/// contributed. Returns the bound and its failure probability.
pub fn best_mean_bound(
    observed: f64,
    total: f64,
    eps: f64,
    direction: Direction,
) -> Result<(f64, f64)> {
    let hoeff = hoeffding_dev(total, eps)?;
    let mc = mult_chernoff_devs(observed, total, eps, eps, eps)?;
    let mc_dev = match direction {
        Direction::Lower => mc.lower_dev,
        Direction::Upper => mc.upper_dev,
    };
    let (dev, fail) = if mc.valid && mc_dev < hoeff {
        (mc_dev, 2.0 * eps)
    } else {
        (hoeff, eps)
    };
    let bound = match direction {
        Direction::Lower => observed - dev,
        Direction::Upper => observed + dev,
    };
    Ok((bound, fail))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn chernoff_examples() {
        let d = chernoff_devs(0.0, 0.5, 0.5).unwrap();
        assert_eq!((d.lower_dev, d.upper_dev), (0.0, 0.0));
        assert!(!d.valid);
        let d = chernoff_devs(1e6, 1e-10, 1e-10).unwrap();
        assert_relative_eq!(d.lower_dev, 6786.140424415112, max_relative = 1e-12);
        assert_relative_eq!(d.upper_dev, 8311.290681345550, max_relative = 1e-12);
        assert!(d.valid);
        assert!(chernoff_devs(-1.0, 0.1, 0.1).is_err());
        assert!(chernoff_devs(1.0, 0.0, 0.1).is_err());
        assert!(chernoff_devs(1.0, 0.1, 1.0).is_err());
    }

    #[test]
    fn chernoff_validity_small_mean() {
        // g_C(1/mu, eps) >= 1 for tiny means.
        assert!(!chernoff_devs(10.0, 1e-10, 1e-10).unwrap().valid);
    }

    #[test]
    fn hoeffding_examples() {
        assert_eq!(hoeffding_dev(0.0, 0.1).unwrap(), 0.0);
        assert_relative_eq!(
            hoeffding_dev(1e6, 1e-10).unwrap(),
            3393.070212207556,
            max_relative = 1e-12
        );
        assert!(hoeffding_dev(1e6, 1.0 - 1e-15).unwrap() < 0.1);
        assert!(hoeffding_dev(1e6, 1.5).is_err());
    }

    #[test]
    fn mult_chernoff_examples() {
        let d = mult_chernoff_devs(1e6, 1e6, 1e-10, 1e-10, 1e-10).unwrap();
        assert_relative_eq!(d.lower_dev, 8311.290681345550, max_relative = 1e-12);
        assert_relative_eq!(d.upper_dev, 13775.04936049244, max_relative = 1e-12);
        assert!(d.valid);
        let d = mult_chernoff_devs(5.0, 10.0, 0.1, 0.1, 0.1).unwrap();
        assert!(!d.valid);
        assert!(mult_chernoff_devs(11.0, 10.0, 0.1, 0.1, 0.1).is_err());
    }

    #[test]
    fn mult_chernoff_tiny_eps_does_not_underflow() {
        let d = mult_chernoff_devs(1e9, 1e9, 1e-90, 1e-90, 1e-90).unwrap();
        let expect = (2e9 * (4.0 * 90.0 * 10f64.ln() + 16f64.ln())).sqrt();
        assert_relative_eq!(d.upper_dev, expect, max_relative = 1e-12);
    }

    #[test]
    fn azuma_examples() {
        assert_eq!(azuma_dev(0.0, 0.3).unwrap(), 0.0);
        assert_relative_eq!(
            azuma_dev(1e6, 1e-10).unwrap(),
            6786.140424415112,
            max_relative = 1e-12
        );
        assert!(azuma_dev(1.0, 0.0).is_err());
    }

    #[test]
    fn best_mean_bound_examples() {
        let (b, _) = best_mean_bound(0.0, 1e6, 1e-10, Direction::Lower).unwrap();
        assert_relative_eq!(b, -3393.070212207556, max_relative = 1e-12);
        let (b, f) = best_mean_bound(1e6, 1e6, 1e-10, Direction::Lower).unwrap();
        assert_relative_eq!(b, 1e6 - 3393.070212207556, max_relative = 1e-12);
        assert_eq!(f, 1e-10);
        // With 1e3 observed out of 1e9 trials the multiplicative bound is
        // tighter (262.8 vs 1.07e5) but its validity condition fails since
        // x - g_H(N) < 0, so Hoeffding is used.
        let (b, f) = best_mean_bound(1e3, 1e9, 1e-10, Direction::Lower).unwrap();
        assert_relative_eq!(b, 1e3 - 107298.30131446736, max_relative = 1e-12);
        assert_eq!(f, 1e-10);
        assert_relative_eq!(
            mult_chernoff_devs(1e3, 1e9, 1e-10, 1e-10, 1e-10)
                .unwrap()
                .lower_dev,
            262.8260884878466,
            max_relative = 1e-12
        );
    }

    #[test]
    fn best_mean_bound_uses_chernoff_when_valid() {
        // Sparse cell: 1e7 observed out of 1e12 trials.
        let (b, f) = best_mean_bound(1e7, 1e12, 1e-12, Direction::Upper).unwrap();
        let mc = mult_chernoff_devs(1e7, 1e12, 1e-12, 1e-12, 1e-12).unwrap();
        assert!(mc.valid);
        assert_relative_eq!(b, 1e7 + mc.upper_dev, max_relative = 1e-14);
        assert_eq!(f, 2e-12);
    }

    #[test]
    fn same_functional_form() {
        for &x in &[0.0, 1.0, 37.5, 1e6, 1e13] {
            for &y in &[0.5, 1e-3, 1e-20, 1e-200] {
                let c = g_c(x, y);
                assert!((c - g_a(x, y)).abs() <= 1e-12 * c.max(1e-300));
                assert!((c - g_m(x, y)).abs() <= 1e-12 * c.max(1e-300));
            }
        }
    }

    #[test]
    fn monotone_on_grid() {
        let xs = [0.0, 1.0, 10.0, 1e3, 1e6, 1e9];
        let ys = [0.9, 0.1, 1e-3, 1e-10, 1e-30];
        let fs: [fn(f64, f64) -> f64; 5] = [g_c, g_c_hat, g_h, g_m, g_a];
        for f in fs {
            for w in xs.windows(2) {
                for &y in &ys {
                    assert!(f(w[0], y) <= f(w[1], y));
                }
            }
            for w in ys.windows(2) {
                for &x in &xs {
                    // ys is decreasing, so deviations must not decrease.
                    assert!(f(x, w[0]) <= f(x, w[1]));
                }
            }
        }
    }
}
