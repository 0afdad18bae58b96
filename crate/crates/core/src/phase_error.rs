//! Upper bound on the number of phase errors among single-photon sifted
//! key bits, built from the decoy bounds of the X-basis cells and the
//! virtual-state coefficients of the source.

use crate::concentration::{g_a, Direction};
use crate::decoy::{Basis, Cell, CellBounds, DecoyBound};
use crate::error::{check_prob_open, Error, Result};
use crate::qubit_model::VirtualStateCoeffs;

/// Phase cells: Ω = 3, 4, 5 are Alice sending Z0, Z1, X0 with Bob in X.
pub fn omega_cell(omega: usize, bob_bit: u8) -> Cell {
    match omega {
        3 => Cell::new(Basis::Z, 0, Basis::X, bob_bit),
        4 => Cell::new(Basis::Z, 1, Basis::X, bob_bit),
        5 => Cell::new(Basis::X, 0, Basis::X, bob_bit),
        _ => panic!("omega must be 3, 4 or 5"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TermEntry {
    pub s: u8,
    pub omega: u8,
    pub cell: Cell,
    pub coefficient: f64,
    pub direction: Direction,
    /// N_{M_Xs}(Ω) after the Azuma correction and division by Q(Ω).
    pub n_omega: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseErrorBound {
    pub n_ph_upper: f64,
    pub n1_upper: f64,
    pub e_ph_upper: f64,
    pub failure_prob: f64,
    pub term_log: Vec<TermEntry>,
}

/// Failure probability of each Azuma step, or none for the asymptotic limit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AzumaSetting {
    pub eps: f64,
    pub finite: bool,
}

impl AzumaSetting {
    pub fn new(eps: f64) -> Self {
        Self { eps, finite: true }
    }

    pub fn asymptotic() -> Self {
        Self {
            eps: 0.5,
            finite: false,
        }
    }

    pub fn delta(&self, n1: f64) -> Result<f64> {
        if !self.finite {
            return Ok(0.0);
        }
        check_prob_open("eps", self.eps)?;
        Ok(g_a(n1, self.eps))
    }

    fn failure(&self, steps: usize) -> f64 {
        if self.finite {
            self.eps * steps as f64
        } else {
            0.0
        }
    }
}

pub const AZUMA_STEPS: usize = 8;

pub fn n1_upper(upper: &[f64; 16]) -> f64 {
    upper.iter().sum()
}

pub fn n1_from_cells(cells: &[CellBounds; 16]) -> f64 {
    n1_upper(&std::array::from_fn(|i| cells[i].upper1.value))
}

/// N_{M_Xs}(Ω): the cell's single-photon bound pushed in the direction
/// that increases the phase-error count, divided by Q(Ω).
pub fn n_mxs(
    omega: usize,
    direction: Direction,
    bounds: &CellBounds,
    q: f64,
    delta: f64,
) -> Result<f64> {
    if !(q > 0.0) {
        return Err(Error::Domain(format!("Q({omega}) = {q} must be positive")));
    }
    Ok(match direction {
        Direction::Upper => (bounds.upper1.value + delta) / q,
        Direction::Lower => (bounds.lower1.value - delta) / q,
    })
}

fn direction_for(coefficient: f64) -> Direction {
    if coefficient >= 0.0 {
        Direction::Upper
    } else {
        Direction::Lower
    }
}

/// Failure probability of the cell bounds: full for the phase cells, the
/// upper bound only for the cells that enter solely through N_1.
fn cell_failure(cells: &[CellBounds; 16]) -> f64 {
    let phase: Vec<usize> = (3..=5)
        .flat_map(|o| [omega_cell(o, 0).index(), omega_cell(o, 1).index()])
        .collect();
    (0..16)
        .map(|i| {
            if phase.contains(&i) {
                cells[i].failure_prob()
            } else {
                cells[i].upper1.failure_prob
            }
        })
        .sum()
}

fn finish(
    n_ph: f64,
    n1: f64,
    m1: &DecoyBound,
    failure_prob: f64,
    term_log: Vec<TermEntry>,
) -> PhaseErrorBound {
    let e = if m1.value <= 0.0 || !(n_ph <= m1.value) {
        1.0
    } else {
        (n_ph / m1.value).clamp(0.0, 1.0)
    };
    PhaseErrorBound {
        n_ph_upper: n_ph,
        n1_upper: n1,
        e_ph_upper: e,
        failure_prob,
        term_log,
    }
}

/// General bound for an arbitrary source described by `qm`.
pub fn n_ph_upper_general(
    qm: &VirtualStateCoeffs,
    cells: &[CellBounds; 16],
    m1: &DecoyBound,
    azuma: &AzumaSetting,
) -> Result<PhaseErrorBound> {
    let n1 = n1_from_cells(cells);
    let delta = azuma.delta(n1)?;
    let mut total = 0.0;
    let mut log = Vec::with_capacity(6);
    for s in 0..2u8 {
        let sign = if s == 0 { 1.0 } else { -1.0 };
        let denom = 2.0 * (1.0 + sign * qm.overlap);
        if !(denom > 0.0) {
            return Err(Error::Domain(format!(
                "overlap {} makes the bound singular",
                qm.overlap
            )));
        }
        let pref = qm.p_of(s as usize + 1) / denom;
        let outcome = 1 - s;
        for (l, omega) in (3..=5).enumerate() {
            let base = if omega == 5 { 0.0 } else { 1.0 };
            let inner: f64 = (0..2).map(|t| qm.weights[t] * qm.c[t][l]).sum();
            let coefficient = pref * (base + sign * inner);
            let direction = direction_for(coefficient);
            let cell = omega_cell(omega, outcome);
            let n_omega = n_mxs(
                omega,
                direction,
                &cells[cell.index()],
                qm.q_of(omega),
                delta,
            )?;
            total += coefficient * n_omega;
            log.push(TermEntry {
                s,
                omega: omega as u8,
                cell,
                coefficient,
                direction,
                n_omega,
                delta,
            });
        }
        total += delta;
    }
    let failure = azuma.failure(AZUMA_STEPS) + cell_failure(cells);
    Ok(finish(total, n1, m1, failure, log))
}

/// Closed form for the model Δθ_A = ξθ_A/π with the matching measurement
/// flaw and γ = 1.
pub fn n_ph_closed_form(
    xi: f64,
    p_z: f64,
    cells: &[CellBounds; 16],
    azuma: &AzumaSetting,
) -> Result<f64> {
    if !(p_z > 0.0 && p_z < 1.0) {
        return Err(Error::Domain(format!("p_z = {p_z} is not in (0, 1)")));
    }
    let ratio = p_z / (1.0 - p_z);
    let c = (1.0 - (xi / 2.0).sin()) / 2.0;
    let delta = azuma.delta(n1_from_cells(cells))?;
    let up = |omega, bit| cells[omega_cell(omega, bit).index()].upper1.value;
    let low = |omega, bit| cells[omega_cell(omega, bit).index()].lower1.value;
    Ok(
        c * ratio * ratio * (up(5, 1) + delta) + ratio * (up(3, 0) + up(4, 0) + 2.0 * delta)
            - c * ratio * ratio * (low(5, 0) - delta)
            + 2.0 * delta,
    )
}

pub fn phase_error_closed_form(
    xi: f64,
    p_z: f64,
    cells: &[CellBounds; 16],
    m1: &DecoyBound,
    azuma: &AzumaSetting,
) -> Result<PhaseErrorBound> {
    let n_ph = n_ph_closed_form(xi, p_z, cells, azuma)?;
    let n1 = n1_from_cells(cells);
    let failure = azuma.failure(AZUMA_STEPS) + cell_failure(cells);
    Ok(finish(n_ph, n1, m1, failure, Vec::new()))
}
