//! Fibre channel with threshold detectors: loss, dark counts, random
//! assignment of double clicks, misalignment, phase-modulation flaws, and
//! truncated-Gaussian intensity fluctuations.
//!
//! Every conditional click probability at a fixed intensity k is a finite
//! sum of exponentials e^{-b_m k}. Averages over the intensity density and
//! the photon-number yields (e^{-bk} becomes (1 - b)^n) both follow from
//! that form.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};

use crate::decoy::{poisson_pk, Basis, Cell, Intensity, IntensitySet, ObservedCounts};
use crate::error::{Error, Result};
use crate::quadrature;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub distance_km: f64,
    pub atten_db_per_km: f64,
    pub det_eff: f64,
    pub dark_prob: f64,
    pub e_mis: f64,
    pub fluct_r: f64,
    pub xi: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            distance_km: 0.0,
            atten_db_per_km: 0.2,
            det_eff: 0.15,
            dark_prob: 5e-7,
            e_mis: 0.01,
            fluct_r: 0.0,
            xi: 0.0,
        }
    }
}

impl ChannelConfig {
    pub fn at_distance(&self, distance_km: f64) -> Self {
        Self {
            distance_km,
            ..*self
        }
    }

    pub fn eta_ch(&self) -> f64 {
        10f64.powf(-self.atten_db_per_km * self.distance_km / 10.0)
    }

    pub fn eta_sy(&self) -> f64 {
        self.det_eff * self.eta_ch()
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::Domain(format!("{name} = {p} is not a probability")))
            }
        };
        if !(self.distance_km >= 0.0) || !(self.atten_db_per_km >= 0.0) {
            return Err(Error::Domain(
                "distance and attenuation must be nonnegative".into(),
            ));
        }
        prob("det_eff", self.det_eff)?;
        prob("dark_prob", self.dark_prob)?;
        prob("e_mis", self.e_mis)?;
        if !(self.fluct_r >= 0.0 && self.fluct_r < 1.0) {
            return Err(Error::Domain(format!(
                "fluct_r = {} not in [0, 1)",
                self.fluct_r
            )));
        }
        if !self.xi.is_finite() {
            return Err(Error::Domain("xi must be finite".into()));
        }
        Ok(())
    }
}

/// Truncated Gaussian on [(1-r)μ, (1+r)μ] with variance rμ/5; a point
/// mass at μ when r = 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FluctuationDensity {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
    pub sigma2: f64,
    pub norm: f64,
}

impl FluctuationDensity {
    pub fn new(mean: f64, r: f64) -> Self {
        let (lo, hi) = ((1.0 - r) * mean, (1.0 + r) * mean);
        let sigma2 = r * mean / 5.0;
        let mut d = Self {
            mean,
            lo,
            hi,
            sigma2,
            norm: 1.0,
        };
        if hi > lo {
            d.norm = 1.0 / quadrature::integrate(|k| d.shape(k), lo, hi);
        }
        d
    }

    pub fn is_point_mass(&self) -> bool {
        self.hi <= self.lo
    }

    fn shape(&self, k: f64) -> f64 {
        let d = k - self.mean;
        (-d * d / (2.0 * self.sigma2)).exp()
    }

    pub fn pdf(&self, k: f64) -> f64 {
        if k < self.lo || k > self.hi {
            0.0
        } else {
            self.norm * self.shape(k)
        }
    }
}

/// ∫ p_G(k) f(k) dk by 64-node Gauss–Legendre; f(μ) for a point mass.
pub fn gauss_expect<F: Fn(f64) -> f64>(f: F, dens: &FluctuationDensity) -> f64 {
    if dens.is_point_mass() {
        return f(dens.mean);
    }
    quadrature::integrate(|k| dens.norm * dens.shape(k) * f(k), dens.lo, dens.hi)
}

/// c_0 + Σ c_m (1 − e^{-b_m k}), stored as (c, b) pairs with the constant
/// at b = 0. Working in the (1 − e^{-bk}) basis keeps small click
/// probabilities free of cancellation.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExpSum {
    pub terms: Vec<(f64, f64)>,
}

/// 1 − e^{-bk}, or 1 for the constant term.
fn basis_at(b: f64, k: f64) -> f64 {
    if b == 0.0 {
        1.0
    } else {
        -(-b * k).exp_m1()
    }
}

impl ExpSum {
    pub fn constant(c: f64) -> Self {
        Self {
            terms: vec![(c, 0.0)],
        }
        .merged()
    }

    /// c e^{-b k}.
    pub fn exp(c: f64, rate: f64) -> Self {
        if rate == 0.0 {
            return Self::constant(c);
        }
        Self {
            terms: vec![(c, 0.0), (-c, rate)],
        }
        .merged()
    }

    /// c (1 − e^{-b k}).
    pub fn growth(c: f64, rate: f64) -> Self {
        if rate == 0.0 {
            return Self::default();
        }
        Self {
            terms: vec![(c, rate)],
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut t = self.terms.clone();
        t.extend_from_slice(&other.terms);
        Self { terms: t }.merged()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            terms: self.terms.iter().map(|&(c, b)| (c * s, b)).collect(),
        }
        .merged()
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut t = Vec::with_capacity(3 * self.terms.len() * other.terms.len());
        for &(c1, b1) in &self.terms {
            for &(c2, b2) in &other.terms {
                let c = c1 * c2;
                if b1 == 0.0 {
                    t.push((c, b2));
                } else if b2 == 0.0 {
                    t.push((c, b1));
                } else {
                    // (1 − e^{-ak})(1 − e^{-bk}) = g_a + g_b − g_{a+b}
                    t.push((c, b1));
                    t.push((c, b2));
                    t.push((-c, b1 + b2));
                }
            }
        }
        Self { terms: t }.merged()
    }

    fn merged(mut self) -> Self {
        self.terms.sort_by(|a, b| a.1.total_cmp(&b.1));
        let mut out: Vec<(f64, f64)> = Vec::with_capacity(self.terms.len());
        for (c, b) in self.terms {
            match out.last_mut() {
                Some(last) if last.1 == b => last.0 += c,
                _ => out.push((c, b)),
            }
        }
        out.retain(|t| t.0 != 0.0);
        Self { terms: out }
    }

    pub fn eval(&self, k: f64) -> f64 {
        self.terms.iter().map(|&(c, b)| c * basis_at(b, k)).sum()
    }

    pub fn expect(&self, dens: &FluctuationDensity) -> f64 {
        self.terms
            .iter()
            .map(|&(c, b)| c * gauss_expect(|k| basis_at(b, k), dens))
            .sum()
    }

    /// Probability of the event given exactly n photons, using
    /// e^{-bk} = Σ_n p(n|k) (1 − b)^n.
    pub fn photon_yield(&self, n: u32) -> f64 {
        self.terms
            .iter()
            .map(|&(c, b)| {
                if b == 0.0 {
                    c
                } else {
                    -c * (n as f64 * (-b).ln_1p()).exp_m1()
                }
            })
            .sum()
    }
}

/// States Alice prepares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Setting {
    Z0,
    Z1,
    X0,
}

impl Setting {
    pub const ALL: [Setting; 3] = [Setting::Z0, Setting::Z1, Setting::X0];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn alice(self) -> (Basis, u8) {
        match self {
            Setting::Z0 => (Basis::Z, 0),
            Setting::Z1 => (Basis::Z, 1),
            Setting::X0 => (Basis::X, 0),
        }
    }

    pub fn prob(self, p_z: f64) -> f64 {
        match self {
            Setting::Z0 | Setting::Z1 => p_z / 2.0,
            Setting::X0 => 1.0 - p_z,
        }
    }

    pub fn from_cell(cell: Cell) -> Option<Self> {
        match (cell.alice_basis, cell.alice_bit) {
            (Basis::Z, 0) => Some(Setting::Z0),
            (Basis::Z, 1) => Some(Setting::Z1),
            (Basis::X, 0) => Some(Setting::X0),
            _ => None,
        }
    }
}

pub fn bob_prob(basis: Basis, p_z: f64) -> f64 {
    match basis {
        Basis::Z => p_z,
        Basis::X => 1.0 - p_z,
    }
}

/// Fraction of each photon routed to detector 0 and detector 1.
/// X0 sent and measured in Z is not given by the reference model; it is
/// filled in from the same phase picture (φ_A − β_B = π/2 + ξ/2).
pub fn routing(setting: Setting, bob: Basis, xi: f64) -> [f64; 2] {
    let pair = |c: f64| [(1.0 + c) / 2.0, (1.0 - c) / 2.0];
    match (setting, bob) {
        (Setting::Z0, Basis::Z) => [1.0, 0.0],
        (Setting::Z1, Basis::Z) => pair(-xi.cos()),
        (Setting::X0, Basis::X) => pair(xi.cos()),
        (Setting::Z0, Basis::X) => pair((xi / 2.0).sin()),
        (Setting::Z1, Basis::X) => pair(-(1.5 * xi).sin()),
        (Setting::X0, Basis::Z) => pair(-(xi / 2.0).sin()),
    }
}

/// Pointwise click probabilities (p_0, p_1) of the two detectors at
/// intensity k, before double clicks are resolved.
pub fn click_probs_at(cfg: &ChannelConfig, k: f64, setting: Setting, bob: Basis) -> [f64; 2] {
    let f = routing(setting, bob, cfg.xi);
    let eta = cfg.eta_sy();
    f.map(|fj| click_one(cfg.dark_prob, eta * k * fj))
}

/// 1 − (1 − p_d) e^{-x}, without cancellation for small arguments.
fn click_one(p_d: f64, x: f64) -> f64 {
    p_d - (1.0 - p_d) * (-x).exp_m1()
}

/// Click probabilities averaged over the intensity distribution of `k`.
pub fn click_probs(cfg: &ChannelConfig, k: &Intensity, setting: Setting, bob: Basis) -> [f64; 2] {
    let dens = FluctuationDensity::new(k.nominal, cfg.fluct_r);
    let f = routing(setting, bob, cfg.xi);
    let eta = cfg.eta_sy();
    f.map(|fj| gauss_expect(|x| click_one(cfg.dark_prob, eta * x * fj), &dens))
}

/// Probability that only detector j registers a bit, with double clicks
/// assigned at random.
pub fn resolve_double_clicks(p_j: f64, p_other: f64) -> f64 {
    p_j * (1.0 - p_other) + 0.5 * p_j * p_other
}

/// (correct, wrong) after a fraction e_mis of correct events is flipped.
pub fn apply_misalignment(p_correct: f64, p_wrong: f64, e_mis: f64) -> (f64, f64) {
    (p_correct * (1.0 - e_mis), p_correct * e_mis + p_wrong)
}

fn correct_outcome(setting: Setting, bob: Basis) -> Option<usize> {
    match (setting, bob) {
        (Setting::Z0, Basis::Z) | (Setting::X0, Basis::X) => Some(0),
        (Setting::Z1, Basis::Z) => Some(1),
        _ => None,
    }
}

/// Per-round outcome probabilities for every (setting, Bob basis, outcome)
/// as functions of the intensity.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelModel {
    pub cfg: ChannelConfig,
    /// `outcomes[setting][basis][j]`.
    pub outcomes: [[[ExpSum; 2]; 2]; 3],
}

impl ChannelModel {
    pub fn new(cfg: &ChannelConfig) -> Result<Self> {
        cfg.validate()?;
        let eta = cfg.eta_sy();
        let c = 1.0 - cfg.dark_prob;
        let outcomes = std::array::from_fn(|si| {
            let setting = Setting::ALL[si];
            std::array::from_fn(|bi| {
                let bob = if bi == 0 { Basis::Z } else { Basis::X };
                let f = routing(setting, bob, cfg.xi);
                let p =
                    f.map(|fj| ExpSum::constant(cfg.dark_prob).add(&ExpSum::growth(c, eta * fj)));
                let half = ExpSum::constant(0.5);
                let resolved = |j: usize| {
                    let o = 1 - j;
                    let keep = ExpSum::exp(c, eta * f[o]);
                    p[j].mul(&keep).add(&p[j].mul(&p[o]).mul(&half))
                };
                let mut q = [resolved(0), resolved(1)];
                if let Some(j) = correct_outcome(setting, bob) {
                    let good = q[j].scale(1.0 - cfg.e_mis);
                    let bad = q[j].scale(cfg.e_mis).add(&q[1 - j]);
                    q[j] = good;
                    q[1 - j] = bad;
                }
                q
            })
        });
        Ok(Self {
            cfg: *cfg,
            outcomes,
        })
    }

    pub fn outcome(&self, setting: Setting, bob: Basis, j: usize) -> &ExpSum {
        &self.outcomes[setting.index()][bob.index()][j]
    }

    fn density(&self, k: &Intensity) -> FluctuationDensity {
        FluctuationDensity::new(k.nominal, self.cfg.fluct_r)
    }

    /// Per-round probabilities averaged over intensity k:
    /// `[setting][basis][j]`.
    pub fn averaged(&self, k: &Intensity) -> [[[f64; 2]; 2]; 3] {
        let dens = self.density(k);
        let mut cache: Vec<(f64, f64)> = Vec::new();
        let mut e = |b: f64| {
            if let Some(&(_, v)) = cache.iter().find(|t| t.0 == b) {
                return v;
            }
            let v = gauss_expect(|x| basis_at(b, x), &dens);
            cache.push((b, v));
            v
        };
        std::array::from_fn(|s| {
            std::array::from_fn(|b| {
                std::array::from_fn(|j| {
                    self.outcomes[s][b][j]
                        .terms
                        .iter()
                        .map(|&(c, rate)| c * e(rate))
                        .sum::<f64>()
                        .max(0.0)
                })
            })
        })
    }

    /// Averaged probabilities for all three intensities.
    pub fn rates(&self, intens: &IntensitySet) -> ChannelRates {
        ChannelRates {
            avg: std::array::from_fn(|k| self.averaged(&intens.levels[k])),
        }
    }

    /// Expected counts for N rounds and the Z-basis bit error rate of the
    /// signal intensity.
    pub fn expected_counts(
        &self,
        intens: &IntensitySet,
        p_z: f64,
        n_total: f64,
    ) -> Result<(ObservedCounts, f64)> {
        self.rates(intens).expected_counts(intens, p_z, n_total)
    }
    /// Expected number of n-photon detections at the signal intensity in
    /// every cell, indexed by `Cell::index`.
    pub fn photon_events(
        &self,
        intens: &IntensitySet,
        p_z: f64,
        n_total: f64,
        n: u32,
    ) -> [f64; 16] {
        let s = intens.signal();
        let pn = gauss_expect(|k| poisson_pk(n, k), &self.density(s));
        let mut out = [0.0; 16];
        for cell in Cell::all() {
            if let Some(setting) = Setting::from_cell(cell) {
                let rounds = n_total * s.prob * setting.prob(p_z) * bob_prob(cell.bob_basis, p_z);
                out[cell.index()] = rounds
                    * pn
                    * self
                        .outcome(setting, cell.bob_basis, cell.bob_bit as usize)
                        .photon_yield(n);
            }
        }
        out
    }

    /// Integer counts drawn round by round from the same model.
    pub fn sample_counts(
        &self,
        intens: &IntensitySet,
        p_z: f64,
        n_total: u64,
        seed: u64,
    ) -> Result<ObservedCounts> {
        check_inputs(p_z, n_total as f64)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut counts = ObservedCounts::zeros(n_total as f64);
        let mut binom = |n: u64, p: f64| -> u64 {
            if n == 0 || p <= 0.0 {
                0
            } else if p >= 1.0 {
                n
            } else {
                Binomial::new(n, p)
                    .expect("valid binomial")
                    .sample(&mut rng)
            }
        };
        let mut multinomial = |n: u64, probs: &[f64]| -> Vec<u64> {
            let mut left = n;
            let mut mass = 1.0;
            probs
                .iter()
                .map(|&p| {
                    let draw = if mass > 0.0 {
                        binom(left, (p / mass).min(1.0))
                    } else {
                        0
                    };
                    left -= draw;
                    mass -= p;
                    draw
                })
                .collect()
        };
        let k_probs: Vec<f64> = intens.levels.iter().map(|l| l.prob).collect();
        let per_k = multinomial(n_total, &k_probs);
        for (ki, k) in intens.levels.iter().enumerate() {
            let avg = self.averaged(k);
            let mut probs = Vec::with_capacity(6);
            for setting in Setting::ALL {
                for bob in [Basis::Z, Basis::X] {
                    probs.push(setting.prob(p_z) * bob_prob(bob, p_z));
                }
            }
            let per_setting = multinomial(per_k[ki], &probs);
            for (si, setting) in Setting::ALL.iter().enumerate() {
                let (ab, ay) = setting.alice();
                for bob in [Basis::Z, Basis::X] {
                    let rounds = per_setting[si * 2 + bob.index()];
                    let q = avg[si][bob.index()];
                    let clicks = multinomial(rounds, &q);
                    for j in 0..2 {
                        counts.cells[ki][Cell::new(ab, ay, bob, j as u8).index()] =
                            clicks[j] as f64;
                    }
                    counts.setting_trials[Cell::new(ab, ay, bob, 0).setting_index()] +=
                        rounds as f64;
                }
            }
        }
        Ok(counts)
    }
}

/// Per-round outcome probabilities averaged over each intensity's
/// distribution: `avg[intensity][setting][basis][j]`. Counts depend on
/// p_z and the intensity probabilities only through simple products.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelRates {
    pub avg: [[[[f64; 2]; 2]; 3]; 3],
}

impl ChannelRates {
    pub fn expected_counts(
        &self,
        intens: &IntensitySet,
        p_z: f64,
        n_total: f64,
    ) -> Result<(ObservedCounts, f64)> {
        check_inputs(p_z, n_total)?;
        let mut counts = ObservedCounts::zeros(n_total);
        let mut e_z = 0.0;
        for (ki, k) in intens.levels.iter().enumerate() {
            let avg = &self.avg[ki];
            for setting in Setting::ALL {
                let (ab, ay) = setting.alice();
                for bob in [Basis::Z, Basis::X] {
                    let rounds = n_total * k.prob * setting.prob(p_z) * bob_prob(bob, p_z);
                    for j in 0..2 {
                        let cell = Cell::new(ab, ay, bob, j as u8);
                        counts.cells[ki][cell.index()] =
                            rounds * avg[setting.index()][bob.index()][j];
                    }
                }
            }
            if ki == 0 {
                let zz = |s: Setting, j: usize| avg[s.index()][0][j];
                let err = zz(Setting::Z0, 1) + zz(Setting::Z1, 0);
                let all = err + zz(Setting::Z0, 0) + zz(Setting::Z1, 1);
                e_z = if all > 0.0 { err / all } else { 0.0 };
            }
        }
        for setting in Setting::ALL {
            let (ab, ay) = setting.alice();
            for bob in [Basis::Z, Basis::X] {
                counts.setting_trials[Cell::new(ab, ay, bob, 0).setting_index()] =
                    n_total * setting.prob(p_z) * bob_prob(bob, p_z);
            }
        }
        Ok((counts, e_z))
    }
}

fn check_inputs(p_z: f64, n_total: f64) -> Result<()> {
    if !(p_z > 0.0 && p_z < 1.0) {
        return Err(Error::Domain(format!("p_z = {p_z} is not in (0, 1)")));
    }
    if !(n_total >= 0.0 && n_total.is_finite()) {
        return Err(Error::Domain(format!("N = {n_total} must be nonnegative")));
    }
    Ok(())
}

pub fn expected_counts(
    cfg: &ChannelConfig,
    intens: &IntensitySet,
    p_z: f64,
    n_total: f64,
) -> Result<(ObservedCounts, f64)> {
    ChannelModel::new(cfg)?.expected_counts(intens, p_z, n_total)
}

pub fn sample_counts(
    cfg: &ChannelConfig,
    intens: &IntensitySet,
    p_z: f64,
    n_total: u64,
    seed: u64,
) -> Result<ObservedCounts> {
    ChannelModel::new(cfg)?.sample_counts(intens, p_z, n_total, seed)
}
