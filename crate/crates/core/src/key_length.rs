//! Secret key length from the estimated vacuum and single-photon events,
//! the phase-error bound, error-correction leakage and the ε budget.

use serde::{Deserialize, Serialize};

use crate::decoy::{DecoyBound, EstimationMode};
use crate::error::{check_prob_open, Error, Result};
use crate::phase_error::{PhaseErrorBound, AZUMA_STEPS};

/// Per-estimate failure probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Allocations {
    /// Chernoff step from μ0^L to m0^L.
    pub eps_z0: f64,
    /// Chernoff step from μ1^L to m1^L.
    pub eps_z1: f64,
    /// Each bound on the expectation of an observed count.
    pub eps_mean: f64,
    /// Each Azuma step of the phase-error bound.
    pub eps_azuma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonBudget {
    pub eps_sec: f64,
    pub eps_c: f64,
    pub eps_s: f64,
    /// Worst-case total of all failure probabilities.
    pub eta: f64,
    pub allocations: Allocations,
}

/// Fraction of ε_s² handed to the estimates by default.
pub const ETA_FRACTION: f64 = 0.5;

/// Number of mean-value estimates (m0: 2, m1: 5, six phase cells: 5 each,
/// ten other cells: 2 each). m1 re-counts the two estimates it shares with m0.
const MEAN_ESTIMATES: usize = 2 + 5 + 6 * 5 + 10 * 2;

/// A mean estimate may cost 2ε in exact mode (multiplicative Chernoff
/// together with its Hoeffding pre-bound).
fn mean_weight(mode: EstimationMode) -> f64 {
    match mode {
        EstimationMode::Exact => 2.0,
        EstimationMode::Fluctuating => 1.0,
    }
}

impl EpsilonBudget {
    /// Equal split of ETA_FRACTION·ε_s² over every estimate.
    pub fn new(eps_sec: f64, eps_c: f64, mode: EstimationMode) -> Result<Self> {
        check_prob_open("eps_sec", eps_sec)?;
        check_prob_open("eps_c", eps_c)?;
        if !(eps_c < eps_sec) {
            return Err(Error::Domain(format!(
                "eps_c = {eps_c} must be below eps_sec = {eps_sec}"
            )));
        }
        let eps_s = eps_sec - eps_c;
        let slots = 2.0 + AZUMA_STEPS as f64 + MEAN_ESTIMATES as f64 * mean_weight(mode);
        let each = ETA_FRACTION * eps_s * eps_s / slots;
        let allocations = Allocations {
            eps_z0: each,
            eps_z1: each,
            eps_mean: each,
            eps_azuma: each,
        };
        Self::with_allocations(eps_sec, eps_c, allocations, mode)
    }

    pub fn with_allocations(
        eps_sec: f64,
        eps_c: f64,
        allocations: Allocations,
        mode: EstimationMode,
    ) -> Result<Self> {
        check_prob_open("eps_sec", eps_sec)?;
        check_prob_open("eps_c", eps_c)?;
        let a = allocations;
        for (n, v) in [
            ("eps_z0", a.eps_z0),
            ("eps_z1", a.eps_z1),
            ("eps_mean", a.eps_mean),
            ("eps_azuma", a.eps_azuma),
        ] {
            check_prob_open(n, v)?;
        }
        let eps_s = eps_sec - eps_c;
        if !(eps_s > 0.0) {
            return Err(Error::Domain("eps_c must be below eps_sec".into()));
        }
        let eta = a.eps_z0
            + a.eps_z1
            + AZUMA_STEPS as f64 * a.eps_azuma
            + MEAN_ESTIMATES as f64 * mean_weight(mode) * a.eps_mean;
        if !(eta < eps_s * eps_s) {
            return Err(Error::Domain(format!(
                "allocations sum to {eta:e}, not below eps_s^2 = {:e}",
                eps_s * eps_s
            )));
        }
        Ok(Self {
            eps_sec,
            eps_c,
            eps_s,
            eta,
            allocations,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbortReason {
    /// Accumulated failure probability reached ε_s².
    EtaExceedsBudget,
    NoSinglePhotons,
    PhaseErrorThreshold,
    NegativeLength,
    Infeasible,
}

impl AbortReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            AbortReason::EtaExceedsBudget => "eta_exceeds_budget",
            AbortReason::NoSinglePhotons => "no_single_photons",
            AbortReason::PhaseErrorThreshold => "phase_error_threshold",
            AbortReason::NegativeLength => "negative_length",
            AbortReason::Infeasible => "infeasible",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyRateResult {
    pub ell: u64,
    pub rate: f64,
    /// Unfloored length with e_ph capped at 1/2; a smooth score for search.
    pub ell_real: f64,
    pub m0_l: f64,
    pub m1_l: f64,
    pub e_ph_u: f64,
    pub e_ph_threshold: f64,
    pub lambda_ec: f64,
    pub e_z: f64,
    pub z_ks_size: f64,
    pub eta: f64,
    pub aborted: bool,
    pub abort_reason: Option<AbortReason>,
}

impl KeyRateResult {
    pub fn infeasible() -> Self {
        Self {
            ell: 0,
            rate: 0.0,
            ell_real: f64::NEG_INFINITY,
            m0_l: 0.0,
            m1_l: 0.0,
            e_ph_u: 1.0,
            e_ph_threshold: 0.0,
            lambda_ec: 0.0,
            e_z: 0.0,
            z_ks_size: 0.0,
            eta: 0.0,
            aborted: true,
            abort_reason: Some(AbortReason::Infeasible),
        }
    }
}

pub fn binary_entropy(x: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Domain(format!("h({x}) is undefined")));
    }
    if x == 0.0 || x == 1.0 {
        return Ok(0.0);
    }
    Ok(-x * x.log2() - (1.0 - x) * (1.0 - x).log2())
}

pub const F_EC: f64 = 1.16;

pub fn lambda_ec(z_ks_size: f64, e_z: f64, f_ec: f64) -> Result<f64> {
    if !(f_ec >= 1.0) {
        return Err(Error::Domain(format!("f_EC = {f_ec} must be at least 1")));
    }
    Ok(f_ec * z_ks_size * binary_entropy(e_z)?)
}

/// Error-correction side of the key: leakage, the Z error rate it was
/// computed from, and the sifted key size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorCorrection {
    pub lambda_ec: f64,
    pub e_z: f64,
    pub z_ks_size: f64,
}

/// Everything but the privacy-amplification term: ℓ = m0 + m1(1 − h(e)) − overhead.
struct LengthTerms {
    m0: f64,
    m1: f64,
    overhead: f64,
}

impl LengthTerms {
    fn at(&self, e: f64) -> f64 {
        let h = binary_entropy(e.clamp(0.0, 0.5)).unwrap_or(1.0);
        self.m0 + self.m1 * (1.0 - h) - self.overhead
    }

    /// Phase error rate at which the length reaches zero.
    fn threshold(&self) -> f64 {
        if self.at(0.0) <= 0.0 {
            return 0.0;
        }
        if self.at(0.5) > 0.0 {
            return 0.5;
        }
        let (mut lo, mut hi) = (0.0, 0.5);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.at(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-15 {
                break;
            }
        }
        lo
    }
}

/// `finite = false` drops every ε-dependent term (asymptotic rate).
pub fn key_length(
    m0: &DecoyBound,
    m1: &DecoyBound,
    eph: &PhaseErrorBound,
    ec: &ErrorCorrection,
    budget: &EpsilonBudget,
    n_total: f64,
    finite: bool,
) -> KeyRateResult {
    let eta = if finite {
        m0.failure_prob + m1.failure_prob + eph.failure_prob
    } else {
        0.0
    };
    let es2 = budget.eps_s * budget.eps_s;
    let overhead = ec.lambda_ec
        + if finite {
            (2.0 / (es2 - eta)).log2() + (2.0 / budget.eps_c).log2()
        } else {
            0.0
        };
    let terms = LengthTerms {
        m0: m0.value,
        m1: m1.value,
        overhead,
    };
    let threshold = terms.threshold();
    let e = eph.e_ph_upper;
    let mut out = KeyRateResult {
        ell: 0,
        rate: 0.0,
        ell_real: terms.at(e),
        m0_l: m0.value,
        m1_l: m1.value,
        e_ph_u: e,
        e_ph_threshold: threshold,
        lambda_ec: ec.lambda_ec,
        e_z: ec.e_z,
        z_ks_size: ec.z_ks_size,
        eta,
        aborted: true,
        abort_reason: None,
    };
    let reason = if finite && !(eta < es2) {
        out.ell_real = f64::NEG_INFINITY;
        Some(AbortReason::EtaExceedsBudget)
    } else if m1.value <= 0.0 {
        Some(AbortReason::NoSinglePhotons)
    } else if terms.at(0.0) <= 0.0 {
        Some(AbortReason::NegativeLength)
    } else if e >= 0.5 || e >= threshold {
        Some(AbortReason::PhaseErrorThreshold)
    } else {
        let ell = out.ell_real.floor();
        if ell >= 1.0 {
            out.ell = ell as u64;
            out.rate = out.ell as f64 / n_total;
            out.aborted = false;
            None
        } else {
            Some(AbortReason::NegativeLength)
        }
    };
    if reason.is_some() {
        out.ell_real = out.ell_real.min(0.0);
    }
    out.abort_reason = reason;
    out
}
