//! Single-photon description of the flawed source: Bloch vectors, the
//! filter that removes the Y component, eigen-decompositions of filtered
//! states, and the transmission-rate matrix linking them to Pauli rates.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Phase-modulation error model. Each state with nominal angle θ_A is
/// prepared with angle θ_A + ξ θ_A/π + δ, with δ drawn from `point_masses`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodingFlawModel {
    /// (δ, weight) pairs; weights sum to 1.
    pub point_masses: Vec<(f64, f64)>,
    pub model_xi: f64,
}

impl EncodingFlawModel {
    pub fn ideal() -> Self {
        Self::from_xi(0.0)
    }

    /// Δθ_A = ξ θ_A / π.
    pub fn from_xi(xi: f64) -> Self {
        Self {
            point_masses: vec![(0.0, 1.0)],
            model_xi: xi,
        }
    }

    pub fn from_point_masses(point_masses: Vec<(f64, f64)>) -> Result<Self> {
        let m = Self {
            point_masses,
            model_xi: 0.0,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.point_masses.is_empty() {
            return Err(Error::Domain("flaw model has no point masses".into()));
        }
        let mut sum = 0.0;
        for &(delta, w) in &self.point_masses {
            if !(w >= 0.0) || !delta.is_finite() {
                return Err(Error::Domain(format!("bad point mass ({delta}, {w})")));
            }
            sum += w;
        }
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!("flaw weights sum to {sum}, not 1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlochVector {
    pub v_x: f64,
    pub v_y: f64,
    pub v_z: f64,
}

impl BlochVector {
    pub fn new(v_x: f64, v_y: f64, v_z: f64) -> Result<Self> {
        let n2 = v_x * v_x + v_y * v_y + v_z * v_z;
        if !n2.is_finite() || n2 > 1.0 + 1e-12 {
            return Err(Error::Domain(format!("Bloch vector norm^2 {n2} exceeds 1")));
        }
        Ok(Self { v_x, v_y, v_z })
    }
}

/// Filtered state (I + r_x X + r_z Z)/2 = Σ_i p_i |φ_i><φ_i| with
/// |φ_i> = a_i|0_z> + b_i|1_z>.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilteredQubit {
    pub r_x: f64,
    pub r_z: f64,
    pub p0: f64,
    pub p1: f64,
    pub a0: f64,
    pub b0: f64,
    pub a1: f64,
    pub b1: f64,
}

impl FilteredQubit {
    pub fn probs(&self) -> [f64; 2] {
        [self.p0, self.p1]
    }

    pub fn vector(&self, i: usize) -> (f64, f64) {
        if i == 0 {
            (self.a0, self.b0)
        } else {
            (self.a1, self.b1)
        }
    }

    /// Density matrix in the computational basis rebuilt from the
    /// eigen-decomposition.
    pub fn reconstruct(&self) -> [[f64; 2]; 2] {
        let mut m = [[0.0; 2]; 2];
        for (p, (a, b)) in [(self.p0, (self.a0, self.b0)), (self.p1, (self.a1, self.b1))] {
            m[0][0] += p * a * a;
            m[0][1] += p * a * b;
            m[1][0] += p * b * a;
            m[1][1] += p * b * b;
        }
        m
    }
}

pub fn bloch_of_state(theta_a: f64, flaw: &EncodingFlawModel, gamma: f64) -> Result<BlochVector> {
    if !(gamma > 0.0) {
        return Err(Error::Domain(format!("gamma = {gamma} must be positive")));
    }
    flaw.validate()?;
    let g2 = gamma * gamma;
    let amp = 2.0 * gamma / (1.0 + g2);
    let base = theta_a + flaw.model_xi * theta_a / PI;
    let (mut c, mut s) = (0.0, 0.0);
    for &(delta, w) in &flaw.point_masses {
        let phi = base + delta;
        c += w * phi.cos();
        s += w * phi.sin();
    }
    Ok(BlochVector {
        v_x: amp * s,
        v_y: (1.0 - g2) / (1.0 + g2),
        v_z: amp * c,
    })
}

pub fn apply_filter(v: BlochVector) -> Result<FilteredQubit> {
    if v.v_y.abs() >= 1.0 - 1e-12 {
        return Err(Error::Singular(v.v_y.abs()));
    }
    let f = 1.0 / (1.0 - v.v_y * v.v_y).sqrt();
    let (r_x, r_z) = if v.v_y == 0.0 {
        (v.v_x, v.v_z)
    } else {
        (v.v_x * f, v.v_z * f)
    };
    let r = r_x.hypot(r_z);
    if r > 1.0 + 1e-12 {
        return Err(Error::Domain(format!(
            "filtered Bloch length {r} exceeds 1"
        )));
    }
    let p0 = (1.0 - r) / 2.0;
    let p1 = (1.0 + r) / 2.0;
    let ((a0, b0), (a1, b1)) = if r_x != 0.0 {
        // φ_i ∝ ((r_z − (−1)^i r)/r_x, 1)
        let vec = |sign: f64| {
            let a = (r_z - sign * r) / r_x;
            let n = a.hypot(1.0);
            (a / n, 1.0 / n)
        };
        (vec(1.0), vec(-1.0))
    } else if r_z > 0.0 {
        ((0.0, 1.0), (1.0, 0.0))
    } else {
        ((1.0, 0.0), (0.0, 1.0))
    };
    Ok(FilteredQubit {
        r_x,
        r_z,
        p0,
        p1,
        a0,
        b0,
        a1,
        b1,
    })
}

pub type Mat3 = [[f64; 3]; 3];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransmissionMatrix {
    pub a: Mat3,
    pub a_inv: Mat3,
    pub q: f64,
}

pub const DEGENERACY_THRESHOLD: f64 = 1e-12;

fn invert3(m: &Mat3) -> Option<Mat3> {
    let mut a = *m;
    let mut inv = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    for col in 0..3 {
        let pivot = (col..3)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        inv.swap(col, pivot);
        let d = a[col][col];
        for k in 0..3 {
            a[col][k] /= d;
            inv[col][k] /= d;
        }
        for row in 0..3 {
            if row != col {
                let f = a[row][col];
                for k in 0..3 {
                    a[row][k] -= f * a[col][k];
                    inv[row][k] -= f * inv[col][k];
                }
            }
        }
    }
    Some(inv)
}

pub fn mat_mul(x: &Mat3, y: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| x[i][k] * y[k][j]).sum();
        }
    }
    out
}

/// Rows (1/2, r_x/2, r_z/2) for the states 0z, 1z, 0x, so that
/// A (T[I], T[X], T[Z])ᵀ = (T[ρ_0z], T[ρ_1z], T[ρ_0x])ᵀ.
pub fn build_transmission_matrix(
    s0z: &FilteredQubit,
    s1z: &FilteredQubit,
    s0x: &FilteredQubit,
) -> Result<TransmissionMatrix> {
    let q = s1z.r_x * (s0x.r_z - s0z.r_z)
        + s0x.r_x * (s0z.r_z - s1z.r_z)
        + s0z.r_x * (s1z.r_z - s0x.r_z);
    if !(q.abs() >= DEGENERACY_THRESHOLD) {
        return Err(Error::Degenerate(q));
    }
    let row = |s: &FilteredQubit| [0.5, s.r_x / 2.0, s.r_z / 2.0];
    let a = [row(s0z), row(s1z), row(s0x)];
    let a_inv = invert3(&a).ok_or(Error::Degenerate(q))?;
    Ok(TransmissionMatrix { a, a_inv, q })
}

/// Quantities of the virtual protocol built from the two Z-basis states.
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualStateCoeffs {
    /// <ψ_0z|ψ_1z> of the purified filtered states.
    pub overlap: f64,
    /// sqrt(P^0z_t P^1z_t) for t = 0, 1.
    pub weights: [f64; 2],
    /// C_{t,l}, l indexing the states 0z, 1z, 0x.
    pub c: [[f64; 3]; 2],
    /// P(1)..P(5) stored at indices 0..5.
    pub p: [f64; 5],
    /// Q(3)..Q(6) stored at indices 0..4.
    pub q: [f64; 4],
}

impl VirtualStateCoeffs {
    /// P(c) for c in 1..=5.
    pub fn p_of(&self, c: usize) -> f64 {
        self.p[c - 1]
    }

    /// Q(Ω) for Ω in 3..=6.
    pub fn q_of(&self, omega: usize) -> f64 {
        self.q[omega - 3]
    }
}

pub fn virtual_state_coeffs(
    s0z: &FilteredQubit,
    s1z: &FilteredQubit,
    tm: &TransmissionMatrix,
    p_z: f64,
) -> Result<VirtualStateCoeffs> {
    if !(p_z > 0.0 && p_z < 1.0) {
        return Err(Error::Domain(format!("p_z = {p_z} is not in (0, 1)")));
    }
    let p_x = 1.0 - p_z;
    let mut overlap = 0.0;
    let mut weights = [0.0; 2];
    let mut c = [[0.0; 3]; 2];
    for t in 0..2 {
        let (a0, b0) = s0z.vector(t);
        let (a1, b1) = s1z.vector(t);
        weights[t] = (s0z.probs()[t] * s1z.probs()[t]).sqrt();
        overlap += weights[t] * (a0 * a1 + b0 * b1);
        let coeff_i = a0 * a1 + b0 * b1;
        let coeff_x = a0 * b1 + b0 * a1;
        let coeff_z = a0 * a1 - b0 * b1;
        for l in 0..3 {
            c[t][l] =
                coeff_i * tm.a_inv[0][l] + coeff_x * tm.a_inv[1][l] + coeff_z * tm.a_inv[2][l];
        }
    }
    let pz2 = p_z * p_z;
    let p = [
        pz2 / 2.0 * (1.0 + overlap),
        pz2 / 2.0 * (1.0 - overlap),
        p_z * p_x / 2.0,
        p_z * p_x / 2.0,
        p_x,
    ];
    let q = [p_z * p_x / 2.0, p_z * p_x / 2.0, p_x * p[4], p_z * p[4]];
    Ok(VirtualStateCoeffs {
        overlap,
        weights,
        c,
        p,
        q,
    })
}

/// Filtered states 0z, 1z, 0x for a flaw model.
pub fn filtered_states(flaw: &EncodingFlawModel, gamma: f64) -> Result<[FilteredQubit; 3]> {
    let f = |theta| bloch_of_state(theta, flaw, gamma).and_then(apply_filter);
    Ok([f(0.0)?, f(PI)?, f(PI / 2.0)?])
}
