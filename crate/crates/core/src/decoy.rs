//! Decoy-state estimation of vacuum and single-photon detection events,
//! for sources with exact intensities and for sources whose intensities
//! only lie in known ranges.

use crate::concentration::{best_mean_bound, g_a, g_c, Direction};
use crate::error::{check_prob_open, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Basis {
    Z,
    X,
}

impl Basis {
    pub fn index(self) -> usize {
        match self {
            Basis::Z => 0,
            Basis::X => 1,
        }
    }
}

/// A sifting cell: Alice's basis and bit, Bob's basis and outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Cell {
    pub alice_basis: Basis,
    pub alice_bit: u8,
    pub bob_basis: Basis,
    pub bob_bit: u8,
}

impl Cell {
    pub const fn new(alice_basis: Basis, alice_bit: u8, bob_basis: Basis, bob_bit: u8) -> Self {
        Self {
            alice_basis,
            alice_bit,
            bob_basis,
            bob_bit,
        }
    }

    pub fn index(&self) -> usize {
        self.setting_index() * 2 + self.bob_bit as usize
    }

    /// Index of (Alice basis, Alice bit, Bob basis) in 0..8.
    pub fn setting_index(&self) -> usize {
        (self.alice_basis.index() * 2 + self.alice_bit as usize) * 2 + self.bob_basis.index()
    }

    pub fn from_index(i: usize) -> Self {
        let b = |v: usize| if v == 0 { Basis::Z } else { Basis::X };
        Self::new(
            b(i >> 3 & 1),
            (i >> 2 & 1) as u8,
            b(i >> 1 & 1),
            (i & 1) as u8,
        )
    }

    pub fn all() -> [Cell; 16] {
        std::array::from_fn(Cell::from_index)
    }
}

impl std::fmt::Display for Cell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let n = |b: Basis| if b == Basis::Z { 'Z' } else { 'X' };
        write!(
            f,
            "{}{}{}{}",
            n(self.alice_basis),
            self.alice_bit,
            n(self.bob_basis),
            self.bob_bit
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intensity {
    pub nominal: f64,
    pub lo: f64,
    pub hi: f64,
    pub prob: f64,
}

impl Intensity {
    pub fn exact(k: f64, prob: f64) -> Self {
        Self {
            nominal: k,
            lo: k,
            hi: k,
            prob,
        }
    }

    pub fn fluctuating(k: f64, r: f64, prob: f64) -> Self {
        Self {
            nominal: k,
            lo: (1.0 - r) * k,
            hi: (1.0 + r) * k,
            prob,
        }
    }

    pub fn is_exact(&self) -> bool {
        self.lo == self.hi
    }
}

/// Signal, first decoy and second (weakest) decoy, in that order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntensitySet {
    pub levels: [Intensity; 3],
}

pub const SIGNAL: usize = 0;
pub const DECOY1: usize = 1;
pub const DECOY2: usize = 2;

impl IntensitySet {
    pub fn new(signal: Intensity, decoy1: Intensity, decoy2: Intensity) -> Result<Self> {
        let s = Self {
            levels: [signal, decoy1, decoy2],
        };
        s.validate()?;
        Ok(s)
    }

    /// Intensities (k_s, k_d1, k_d2) with probabilities (p_s, p_d1) and
    /// relative fluctuation r (0 for an exact source).
    pub fn from_nominal(k: [f64; 3], p_s: f64, p_d1: f64, r: f64) -> Result<Self> {
        if !(r >= 0.0 && r < 1.0) {
            return Err(Error::Domain(format!("fluctuation r = {r} not in [0, 1)")));
        }
        let p = [p_s, p_d1, 1.0 - p_s - p_d1];
        let lv = |i: usize| {
            if r == 0.0 {
                Intensity::exact(k[i], p[i])
            } else {
                Intensity::fluctuating(k[i], r, p[i])
            }
        };
        Self::new(lv(0), lv(1), lv(2))
    }

    pub fn signal(&self) -> &Intensity {
        &self.levels[SIGNAL]
    }

    pub fn decoy1(&self) -> &Intensity {
        &self.levels[DECOY1]
    }

    pub fn decoy2(&self) -> &Intensity {
        &self.levels[DECOY2]
    }

    pub fn is_exact(&self) -> bool {
        self.levels.iter().all(Intensity::is_exact)
    }

    pub fn validate(&self) -> Result<()> {
        let mut sum = 0.0;
        for l in &self.levels {
            if !(l.prob > 0.0 && l.prob < 1.0) {
                return Err(Error::Domain(format!(
                    "intensity probability {} not in (0, 1)",
                    l.prob
                )));
            }
            if !(l.lo >= 0.0 && l.lo <= l.nominal && l.nominal <= l.hi && l.hi.is_finite()) {
                return Err(Error::Domain(format!(
                    "intensity range [{}, {}] does not contain {}",
                    l.lo, l.hi, l.nominal
                )));
            }
            sum += l.prob;
        }
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!(
                "intensity probabilities sum to {sum}"
            )));
        }
        let (s, d1, d2) = (self.signal(), self.decoy1(), self.decoy2());
        if !(d1.lo > d2.hi) {
            return Err(Error::Ordering(format!(
                "k_d1- = {} <= k_d2+ = {}",
                d1.lo, d2.hi
            )));
        }
        if !(s.lo > d1.hi + d2.lo) {
            return Err(Error::Ordering(format!(
                "k_s- = {} <= k_d1+ + k_d2- = {}",
                s.lo,
                d1.hi + d2.lo
            )));
        }
        Ok(())
    }
}

/// Detection counts split by intensity and sifting cell, plus the number
/// of rounds run with each (Alice basis, Alice bit, Bob basis) setting.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedCounts {
    /// `cells[k][cell.index()]`, k indexing signal, decoy1, decoy2.
    pub cells: [[f64; 16]; 3],
    /// Rounds per `Cell::setting_index`, summed over intensities.
    pub setting_trials: [f64; 8],
    pub n_total: f64,
}

impl ObservedCounts {
    pub fn zeros(n_total: f64) -> Self {
        Self {
            cells: [[0.0; 16]; 3],
            setting_trials: [0.0; 8],
            n_total,
        }
    }

    pub fn cell(&self, k: usize, cell: Cell) -> f64 {
        self.cells[k][cell.index()]
    }

    /// |Z_k|: Z-basis matched rounds at intensity k, both bits.
    pub fn z_by_k(&self) -> [f64; 3] {
        std::array::from_fn(|k| {
            let mut s = 0.0;
            for y in 0..2 {
                for yp in 0..2 {
                    s += self.cell(k, Cell::new(Basis::Z, y, Basis::Z, yp));
                }
            }
            s
        })
    }

    pub fn z_tot(&self) -> f64 {
        self.z_by_k().iter().sum()
    }

    /// N_z: rounds where both parties chose Z.
    pub fn n_z(&self) -> f64 {
        self.setting_trials[Cell::new(Basis::Z, 0, Basis::Z, 0).setting_index()]
            + self.setting_trials[Cell::new(Basis::Z, 1, Basis::Z, 0).setting_index()]
    }

    pub fn z_stats(&self) -> CellStats {
        CellStats {
            by_intensity: self.z_by_k(),
            trials: self.n_z(),
        }
    }

    pub fn cell_stats(&self, cell: Cell) -> CellStats {
        CellStats {
            by_intensity: std::array::from_fn(|k| self.cell(k, cell)),
            trials: self.setting_trials[cell.setting_index()],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !self.cells.iter().flatten().all(|&v| ok(v))
            || !self.setting_trials.iter().all(|&v| ok(v))
        {
            return Err(Error::Domain(
                "counts must be finite and nonnegative".into(),
            ));
        }
        if self.n_z() > self.n_total * (1.0 + 1e-12) {
            return Err(Error::Domain("N_z exceeds N".into()));
        }
        Ok(())
    }
}

/// Counts of one event class at each intensity and the number of rounds
/// in which that class could have occurred.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellStats {
    pub by_intensity: [f64; 3],
    pub trials: f64,
}

impl CellStats {
    pub fn total(&self) -> f64 {
        self.by_intensity.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimationMode {
    /// Exact intensities: Hoeffding or multiplicative Chernoff around
    /// the observed counts.
    Exact,
    /// Fluctuating intensities: Azuma over the rounds of the setting.
    Fluctuating,
}

/// Turns observed counts into bounds on their expectations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanEstimator {
    pub mode: EstimationMode,
    pub eps: f64,
    /// When false all deviations are zero (asymptotic limit).
    pub finite: bool,
}

impl MeanEstimator {
    pub fn new(mode: EstimationMode, eps: f64) -> Self {
        Self {
            mode,
            eps,
            finite: true,
        }
    }

    pub fn asymptotic(mode: EstimationMode) -> Self {
        Self {
            mode,
            eps: 0.5,
            finite: false,
        }
    }

    /// Bound on the expectation of `stats.by_intensity[k]` in direction
    /// `dir`, with its failure probability. Lower bounds are clamped at 0.
    pub fn bound(&self, stats: &CellStats, k: usize, dir: Direction) -> Result<(f64, f64)> {
        let x = stats.by_intensity[k];
        if !self.finite {
            return Ok((x, 0.0));
        }
        let (b, fail) = match self.mode {
            EstimationMode::Exact => best_mean_bound(x, stats.total(), self.eps, dir)?,
            EstimationMode::Fluctuating => {
                check_prob_open("eps", self.eps)?;
                let d = g_a(stats.trials, self.eps);
                match dir {
                    Direction::Lower => (x - d, self.eps),
                    Direction::Upper => (x + d, self.eps),
                }
            }
        };
        Ok((
            if dir == Direction::Lower {
                b.max(0.0)
            } else {
                b
            },
            fail,
        ))
    }

    fn check_intensities(&self, intens: &IntensitySet) -> Result<()> {
        intens.validate()?;
        if self.mode == EstimationMode::Exact && !intens.is_exact() {
            return Err(Error::Domain(
                "exact-intensity estimation requires lo = hi for every intensity".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundKind {
    VacLower,
    SingleLower,
    SingleUpper,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecoyBound {
    pub value: f64,
    /// Bound on the expected number before the final Chernoff step (equal
    /// to `value` for cell bounds).
    pub mean: f64,
    pub failure_prob: f64,
    pub kind: BoundKind,
}

impl DecoyBound {
    pub fn zero(kind: BoundKind) -> Self {
        Self {
            value: 0.0,
            mean: 0.0,
            failure_prob: 0.0,
            kind,
        }
    }
}

pub fn poisson_pk(n: u32, k: f64) -> f64 {
    if k == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    let ln = -k + n as f64 * k.ln() - (1..=n).map(|i| (i as f64).ln()).sum::<f64>();
    ln.exp()
}

/// p⁻(k_s ∧ 0) = p_ks e^{-k_s⁺}.
pub fn p_vac_lower(s: &Intensity) -> f64 {
    s.prob * (-s.hi).exp()
}

fn k_exp_neg_k(k: f64) -> f64 {
    k * (-k).exp()
}

/// p⁻(k_s ∧ 1): smallest k e^{-k} over [k_s⁻, k_s⁺], attained at an endpoint.
pub fn p_single_lower(s: &Intensity) -> f64 {
    s.prob * k_exp_neg_k(s.lo).min(k_exp_neg_k(s.hi))
}

/// p⁺(k_s ∧ 1): largest k e^{-k} over [k_s⁻, k_s⁺].
pub fn p_single_upper(s: &Intensity) -> f64 {
    let m = if s.lo <= 1.0 && 1.0 <= s.hi {
        (-1.0f64).exp()
    } else {
        k_exp_neg_k(s.lo).max(k_exp_neg_k(s.hi))
    };
    s.prob * m
}

/// Lower bound on T_0, the summed vacuum yield, and its failure probability.
fn t0_lower(stats: &CellStats, intens: &IntensitySet, est: &MeanEstimator) -> Result<(f64, f64)> {
    let (d1, d2) = (intens.decoy1(), intens.decoy2());
    let (z_d2, f2) = est.bound(stats, DECOY2, Direction::Lower)?;
    let (z_d1, f1) = est.bound(stats, DECOY1, Direction::Upper)?;
    let t = (d1.lo * d2.lo.exp() * z_d2 / d2.prob - d2.hi * d1.hi.exp() * z_d1 / d1.prob)
        / (d1.lo - d2.hi);
    Ok((t.max(0.0), f1 + f2))
}

pub fn decoy0_lower(
    stats: &CellStats,
    intens: &IntensitySet,
    est: &MeanEstimator,
) -> Result<DecoyBound> {
    est.check_intensities(intens)?;
    let (t0, fail) = t0_lower(stats, intens, est)?;
    let v = (p_vac_lower(intens.signal()) * t0).min(stats.by_intensity[SIGNAL]);
    Ok(DecoyBound {
        value: v,
        mean: v,
        failure_prob: fail,
        kind: BoundKind::VacLower,
    })
}

/// Lower bound on single-photon signal events. `vac` is a lower bound on
/// the vacuum signal events of the same class.
pub fn decoy1_lower(
    stats: &CellStats,
    intens: &IntensitySet,
    est: &MeanEstimator,
    vac: &DecoyBound,
) -> Result<DecoyBound> {
    est.check_intensities(intens)?;
    let (s, d1, d2) = (intens.signal(), intens.decoy1(), intens.decoy2());
    let (z_d1, f1) = est.bound(stats, DECOY1, Direction::Lower)?;
    let (z_d2, f2) = est.bound(stats, DECOY2, Direction::Upper)?;
    let (z_s, fs) = est.bound(stats, SIGNAL, Direction::Upper)?;
    let t0 = vac.mean / p_vac_lower(s);
    let pre = s.lo / ((d1.hi - d2.lo) * (s.lo - d1.hi - d2.lo));
    let t1 = pre
        * (d1.lo.exp() * z_d1 / d1.prob
            - d2.hi.exp() * z_d2 / d2.prob
            - (d1.hi * d1.hi - d2.lo * d2.lo) / (s.lo * s.lo) * (s.hi.exp() * z_s / s.prob - t0));
    let v = (p_single_lower(s) * t1).clamp(0.0, stats.by_intensity[SIGNAL]);
    Ok(DecoyBound {
        value: v,
        mean: v,
        failure_prob: f1 + f2 + fs + vac.failure_prob,
        kind: BoundKind::SingleLower,
    })
}

pub fn decoy1_upper(
    stats: &CellStats,
    intens: &IntensitySet,
    est: &MeanEstimator,
) -> Result<DecoyBound> {
    est.check_intensities(intens)?;
    let (s, d1, d2) = (intens.signal(), intens.decoy1(), intens.decoy2());
    let (z_d1, f1) = est.bound(stats, DECOY1, Direction::Upper)?;
    let (z_d2, f2) = est.bound(stats, DECOY2, Direction::Lower)?;
    let t1 = (d1.hi.exp() * z_d1 / d1.prob - d2.lo.exp() * z_d2 / d2.prob) / (d1.lo - d2.hi);
    let v = (p_single_upper(s) * t1).max(0.0);
    Ok(DecoyBound {
        value: v,
        mean: v,
        failure_prob: f1 + f2,
        kind: BoundKind::SingleUpper,
    })
}

/// Vacuum events in the sifted key: μ0^L from the decoy formula, then a
/// Chernoff step from the expectation to the realised number.
pub fn m0_lower(
    counts: &ObservedCounts,
    intens: &IntensitySet,
    est: &MeanEstimator,
    eps_z0: f64,
) -> Result<DecoyBound> {
    let mu = decoy0_lower(&counts.z_stats(), intens, est)?;
    let (value, fail) = chernoff_step(mu.value, eps_z0, est.finite)?;
    Ok(DecoyBound {
        value,
        mean: mu.value,
        failure_prob: fail + mu.failure_prob,
        kind: BoundKind::VacLower,
    })
}

/// Single-photon events in the sifted key, reusing μ0^L from `m0`.
pub fn m1_lower(
    counts: &ObservedCounts,
    intens: &IntensitySet,
    est: &MeanEstimator,
    eps_z1: f64,
    m0: &DecoyBound,
) -> Result<DecoyBound> {
    let mu = decoy1_lower(&counts.z_stats(), intens, est, m0)?;
    let (value, fail) = chernoff_step(mu.value, eps_z1, est.finite)?;
    Ok(DecoyBound {
        value,
        mean: mu.value,
        failure_prob: fail + mu.failure_prob,
        kind: BoundKind::SingleLower,
    })
}

fn chernoff_step(mu: f64, eps: f64, finite: bool) -> Result<(f64, f64)> {
    if !finite {
        return Ok((mu, 0.0));
    }
    check_prob_open("eps", eps)?;
    Ok(((mu - g_c(mu, eps)).max(0.0), eps))
}

fn require_mode(est: &MeanEstimator, mode: EstimationMode) -> Result<()> {
    if est.mode != mode {
        return Err(Error::Domain(format!(
            "estimator is {:?}, expected {mode:?}",
            est.mode
        )));
    }
    Ok(())
}

pub fn m0_lower_exact(
    counts: &ObservedCounts,
    intens: &IntensitySet,
    est: &MeanEstimator,
    eps_z0: f64,
) -> Result<DecoyBound> {
    require_mode(est, EstimationMode::Exact)?;
    m0_lower(counts, intens, est, eps_z0)
}

pub fn m1_lower_exact(
    counts: &ObservedCounts,
    intens: &IntensitySet,
    est: &MeanEstimator,
    eps_z1: f64,
    m0: &DecoyBound,
) -> Result<DecoyBound> {
    require_mode(est, EstimationMode::Exact)?;
    m1_lower(counts, intens, est, eps_z1, m0)
}

pub fn m0_lower_fluct(
    counts: &ObservedCounts,
    intens: &IntensitySet,
    est: &MeanEstimator,
    eps_z0: f64,
) -> Result<DecoyBound> {
    require_mode(est, EstimationMode::Fluctuating)?;
    m0_lower(counts, intens, est, eps_z0)
}

pub fn m1_lower_fluct(
    counts: &ObservedCounts,
    intens: &IntensitySet,
    est: &MeanEstimator,
    eps_z1: f64,
    m0: &DecoyBound,
) -> Result<DecoyBound> {
    require_mode(est, EstimationMode::Fluctuating)?;
    m1_lower(counts, intens, est, eps_z1, m0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellBounds {
    pub lower0: DecoyBound,
    pub lower1: DecoyBound,
    pub upper1: DecoyBound,
}

impl CellBounds {
    /// Failure probability of every estimate that went into the bounds.
    /// The upper bound reuses the two decoy estimates of the vacuum bound.
    pub fn failure_prob(&self) -> f64 {
        self.lower1.failure_prob
    }
}

pub fn decoy_cell_bounds(
    cell: Cell,
    counts: &ObservedCounts,
    intens: &IntensitySet,
    est: &MeanEstimator,
) -> Result<CellBounds> {
    let stats = counts.cell_stats(cell);
    let lower0 = decoy0_lower(&stats, intens, est)?;
    let lower1 = decoy1_lower(&stats, intens, est, &lower0)?;
    let upper1 = decoy1_upper(&stats, intens, est)?;
    Ok(CellBounds {
        lower0,
        lower1,
        upper1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn exact_set() -> IntensitySet {
        IntensitySet::from_nominal([0.5, 0.1, 2e-4], 0.6, 0.3, 0.0).unwrap()
    }

    /// Counts for a photon-number independent yield y: the expected count
    /// at intensity k is trials * p_k * y regardless of k.
    fn flat_yield_stats(intens: &IntensitySet, trials: f64, y: f64) -> CellStats {
        CellStats {
            by_intensity: std::array::from_fn(|k| trials * intens.levels[k].prob * y),
            trials,
        }
    }

    #[test]
    fn poisson_examples() {
        assert_eq!(poisson_pk(0, 0.0), 1.0);
        assert_relative_eq!(
            poisson_pk(1, 0.5),
            0.30326532985631671,
            max_relative = 1e-14
        );
        assert_relative_eq!(
            poisson_pk(0, 2e-4),
            0.99980001999866673,
            max_relative = 1e-14
        );
        let s: f64 = (0..60).map(|n| poisson_pk(n, 3.2)).sum();
        assert_relative_eq!(s, 1.0, max_relative = 1e-14);
    }

    #[test]
    fn cell_index_roundtrip() {
        for (i, c) in Cell::all().iter().enumerate() {
            assert_eq!(c.index(), i);
        }
        assert_eq!(Cell::new(Basis::X, 0, Basis::X, 1).to_string(), "X0X1");
    }

    #[test]
    fn ordering_constraints() {
        assert!(IntensitySet::from_nominal([0.5, 0.1, 2e-4], 0.6, 0.3, 0.0).is_ok());
        assert!(matches!(
            IntensitySet::from_nominal([0.5, 0.1, 0.2], 0.6, 0.3, 0.0),
            Err(Error::Ordering(_))
        ));
        assert!(matches!(
            IntensitySet::from_nominal([0.1, 0.1, 2e-4], 0.6, 0.3, 0.0),
            Err(Error::Ordering(_))
        ));
        // k_s- <= k_d1+ + k_d2- only once the ranges widen.
        assert!(IntensitySet::from_nominal([0.21, 0.2, 2e-4], 0.6, 0.3, 0.0).is_ok());
        assert!(matches!(
            IntensitySet::from_nominal([0.21, 0.2, 2e-4], 0.6, 0.3, 0.05),
            Err(Error::Ordering(_))
        ));
        assert!(IntensitySet::from_nominal([0.5, 0.1, 2e-4], 0.6, 0.5, 0.0).is_err());
    }

    #[test]
    fn vacuum_ratio_for_flat_yield() {
        let intens = exact_set();
        let est = MeanEstimator::asymptotic(EstimationMode::Exact);
        let stats = flat_yield_stats(&intens, 1e10, 1e-3);
        let b = decoy0_lower(&stats, &intens, &est).unwrap();
        let truth = intens.signal().prob * poisson_pk(0, 0.5) * 1e10 * 1e-3;
        assert_relative_eq!(b.value / truth, 0.99998965748014239, max_relative = 1e-12);
    }

    #[test]
    fn zero_counts_give_zero_bounds() {
        let intens = exact_set();
        let counts = ObservedCounts::zeros(1e9);
        for mode in [EstimationMode::Exact, EstimationMode::Fluctuating] {
            let est = MeanEstimator::new(mode, 1e-12);
            let m0 = m0_lower(&counts, &intens, &est, 1e-12).unwrap();
            assert_eq!(m0.value, 0.0);
            assert_eq!(
                m1_lower(&counts, &intens, &est, 1e-12, &m0).unwrap().value,
                0.0
            );
            let cb = decoy_cell_bounds(Cell::new(Basis::X, 0, Basis::X, 1), &counts, &intens, &est)
                .unwrap();
            assert_eq!(
                (cb.lower0.value, cb.lower1.value, cb.upper1.value),
                (0.0, 0.0, 0.0)
            );
        }
    }

    #[test]
    fn flat_yield_single_photon_limit() {
        // As the decoys shrink the two-decoy bound becomes tight.
        let mut prev = 0.0;
        for &kd1 in &[0.2, 0.1, 0.03, 0.01] {
            let intens =
                IntensitySet::from_nominal([0.5, kd1, kd1 / 100.0], 0.6, 0.3, 0.0).unwrap();
            let est = MeanEstimator::asymptotic(EstimationMode::Exact);
            let stats = flat_yield_stats(&intens, 1e10, 1e-3);
            let vac = decoy0_lower(&stats, &intens, &est).unwrap();
            let l = decoy1_lower(&stats, &intens, &est, &vac).unwrap();
            let u = decoy1_upper(&stats, &intens, &est).unwrap();
            let truth = 0.6 * poisson_pk(1, 0.5) * 1e10 * 1e-3;
            let ratio = l.value / truth;
            assert!(ratio <= 1.0 + 1e-12 && ratio > prev);
            assert!(u.value >= truth * (1.0 - 1e-12));
            prev = ratio;
        }
        assert!(prev > 0.999);
    }

    #[test]
    fn exact_upper_reduction() {
        let intens = exact_set();
        let est = MeanEstimator::new(EstimationMode::Exact, 1e-12);
        let stats = CellStats {
            by_intensity: [3e7, 2e6, 1.5e4],
            trials: 1e12,
        };
        let u = decoy1_upper(&stats, &intens, &est).unwrap();
        let (zp, _) = best_mean_bound(2e6, stats.total(), 1e-12, Direction::Upper).unwrap();
        let (zm, _) = best_mean_bound(1.5e4, stats.total(), 1e-12, Direction::Lower).unwrap();
        let zm = zm.max(0.0);
        let want =
            0.6 * 0.5 * (-0.5f64).exp() * ((0.1f64).exp() * zp / 0.3 - (2e-4f64).exp() * zm / 0.1)
                / (0.1 - 2e-4);
        assert_relative_eq!(u.value, want, max_relative = 1e-13);
    }

    #[test]
    fn endpoint_probabilities() {
        let s = Intensity::fluctuating(0.5, 0.05, 0.6);
        assert_relative_eq!(
            p_vac_lower(&s),
            0.6 * (-0.525f64).exp(),
            max_relative = 1e-15
        );
        assert_relative_eq!(
            p_single_lower(&s),
            0.6 * 0.475 * (-0.475f64).exp(),
            max_relative = 1e-15
        );
        assert_relative_eq!(
            p_single_upper(&s),
            0.6 * 0.525 * (-0.525f64).exp(),
            max_relative = 1e-15
        );
        let s = Intensity::fluctuating(1.0, 0.05, 0.6);
        assert_relative_eq!(
            p_single_upper(&s),
            0.6 / std::f64::consts::E,
            max_relative = 1e-15
        );
        assert_relative_eq!(
            p_single_lower(&s),
            0.6 * 0.95 * (-0.95f64).exp(),
            max_relative = 1e-15
        );
    }

    #[test]
    fn exact_mode_rejects_ranges() {
        let intens = IntensitySet::from_nominal([0.5, 0.1, 2e-4], 0.6, 0.3, 0.02).unwrap();
        let est = MeanEstimator::new(EstimationMode::Exact, 1e-10);
        let counts = ObservedCounts::zeros(1e9);
        assert!(m0_lower_exact(&counts, &intens, &est, 1e-10).is_err());
        let est = MeanEstimator::new(EstimationMode::Fluctuating, 1e-10);
        assert!(m0_lower_fluct(&counts, &intens, &est, 1e-10).is_ok());
        assert!(m0_lower_exact(&counts, &intens, &est, 1e-10).is_err());
    }
}
