//! Self-checks run by `ltqkd validate`: Monte-Carlo coverage of the
//! concentration bounds, decoy bounds against the photon-number truth,
//! the general phase-error bound against its closed form, matrix and
//! state identities, and monotonicity of the key length.
//!
//! Every random stream is a ChaCha8 generator keyed by (seed, case) with
//! one stream per chunk of trials, so the report does not depend on the
//! number of threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::Serialize;

use crate::channel::ChannelConfig;
use crate::concentration::{chernoff_devs, g_a, g_h, mult_chernoff_devs};
use crate::decoy::{Basis, BoundKind, Cell, DecoyBound, EstimationMode};
use crate::error::Result;
use crate::key_length::{key_length, EpsilonBudget, ErrorCorrection};
use crate::phase_error::{n_ph_closed_form, n_ph_upper_general, PhaseErrorBound};
use crate::protocol::{Evaluator, ProtocolParams};
use crate::qubit_model::{
    build_transmission_matrix, filtered_states, mat_mul, virtual_state_coeffs, EncodingFlawModel,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationOptions {
    pub seed: u64,
    /// Monte-Carlo trials per coverage case.
    pub coverage_trials: u64,
    pub coverage_sizes: [u64; 2],
    pub coverage_eps: [f64; 2],
    /// Rounds per sampled decoy check; zero skips it.
    pub sampled_rounds: u64,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            coverage_trials: 100_000,
            coverage_sizes: [1_000, 10_000],
            coverage_eps: [0.01, 0.001],
            sampled_rounds: 1_000_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageCase {
    pub lemma: &'static str,
    pub side: &'static str,
    pub n: u64,
    pub eps: f64,
    pub trials: u64,
    /// Trials where the lemma's validity condition held.
    pub applicable: u64,
    pub violations: u64,
    pub frequency: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SandwichFailure {
    pub distance_km: f64,
    pub r: f64,
    pub xi: f64,
    pub finite: bool,
    pub quantity: String,
    pub bound: f64,
    pub truth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SandwichReport {
    pub points: usize,
    pub comparisons: usize,
    /// Smallest (truth − lower)/truth over the lower bounds.
    pub min_lower_margin: f64,
    /// Smallest (upper − truth)/truth over the upper bounds.
    pub min_upper_margin: f64,
    pub failures: Vec<SandwichFailure>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossCheckReport {
    pub points: usize,
    pub max_rel_diff: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityReport {
    pub cases: usize,
    pub max_inverse_err: f64,
    pub max_reconstruction_err: f64,
    pub max_normalisation_err: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotonicityReport {
    pub checks: usize,
    pub failures: Vec<String>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub seed: u64,
    pub coverage: Vec<CoverageCase>,
    pub sandwich: SandwichReport,
    pub sampled_sandwich: SandwichReport,
    pub cross_check: CrossCheckReport,
    pub identities: IdentityReport,
    pub key_length_monotonicity: MonotonicityReport,
    pub passed: bool,
}

impl ValidationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is serialisable")
    }
}

pub fn run_validation(seed: u64) -> Result<ValidationReport> {
    run_validation_with(&ValidationOptions {
        seed,
        ..Default::default()
    })
}

pub fn run_validation_with(opts: &ValidationOptions) -> Result<ValidationReport> {
    let coverage = coverage_suite(opts);
    let sandwich = sandwich_suite()?;
    let sampled_sandwich = sampled_sandwich_suite(opts)?;
    let cross_check = cross_check_suite()?;
    let identities = identity_suite()?;
    let key_length_monotonicity = key_length_battery()?;
    let passed = coverage.iter().all(|c| c.passed)
        && sandwich.passed
        && sampled_sandwich.passed
        && cross_check.passed
        && identities.passed
        && key_length_monotonicity.passed;
    Ok(ValidationReport {
        seed: opts.seed,
        coverage,
        sandwich,
        sampled_sandwich,
        cross_check,
        identities,
        key_length_monotonicity,
        passed,
    })
}

const CHUNK: u64 = 1_000;
const GROUPS: u64 = 8;

fn rng_for(seed: u64, case: u64, chunk: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ case.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(chunk);
    rng
}

/// Success probabilities spread over [0.25, 1.75] × mean in equal groups.
fn group_probs(mean: f64) -> [f64; GROUPS as usize] {
    std::array::from_fn(|g| mean * (0.25 + 1.5 * g as f64 / (GROUPS - 1) as f64))
}

/// Runs `trials` independent draws of `sample` in parallel chunks and adds
/// up the per-chunk tallies.
fn tally<const K: usize, F>(seed: u64, case: u64, trials: u64, sample: F) -> [u64; K]
where
    F: Fn(&mut ChaCha8Rng) -> [bool; K] + Sync,
{
    let chunks = trials.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng_for(seed, case, c);
            let mut out = [0u64; K];
            for _ in 0..CHUNK.min(trials - c * CHUNK) {
                for (o, hit) in out.iter_mut().zip(sample(&mut rng)) {
                    *o += hit as u64;
                }
            }
            out
        })
        .reduce(|| [0; K], |a, b| std::array::from_fn(|i| a[i] + b[i]))
}

fn heterogeneous_sum(rng: &mut ChaCha8Rng, n: u64, probs: &[f64]) -> f64 {
    let per = n / probs.len() as u64;
    probs
        .iter()
        .map(|&p| Binomial::new(per, p).expect("valid binomial").sample(rng) as f64)
        .sum()
}

fn case(
    lemma: &'static str,
    side: &'static str,
    n: u64,
    eps: f64,
    trials: u64,
    applicable: u64,
    violations: u64,
) -> CoverageCase {
    let frequency = violations as f64 / trials as f64;
    CoverageCase {
        lemma,
        side,
        n,
        eps,
        trials,
        applicable,
        violations,
        frequency,
        passed: frequency <= eps,
    }
}

fn coverage_suite(opts: &ValidationOptions) -> Vec<CoverageCase> {
    let mut out = Vec::new();
    let t = opts.coverage_trials;
    let [e0, e1] = opts.coverage_eps;
    for (si, &n) in opts.coverage_sizes.iter().enumerate() {
        let id = |lemma: u64| lemma * 16 + si as u64;

        // Chernoff around the known mean.
        let probs = group_probs(0.1);
        let mu: f64 = probs.iter().map(|p| p * (n / GROUPS) as f64).sum();
        let d = [
            chernoff_devs(mu, e0, e0).unwrap(),
            chernoff_devs(mu, e1, e1).unwrap(),
        ];
        let hits = tally::<4, _>(opts.seed, id(1), t, |rng| {
            let x = heterogeneous_sum(rng, n, &probs);
            [
                x < mu - d[0].lower_dev,
                x > mu + d[0].upper_dev,
                x < mu - d[1].lower_dev,
                x > mu + d[1].upper_dev,
            ]
        });
        for (i, eps) in [e0, e1].into_iter().enumerate() {
            let app = if d[i].valid { t } else { 0 };
            let v = |h: u64| if d[i].valid { h } else { 0 };
            out.push(case("chernoff", "lower", n, eps, t, app, v(hits[2 * i])));
            out.push(case(
                "chernoff",
                "upper",
                n,
                eps,
                t,
                app,
                v(hits[2 * i + 1]),
            ));
        }

        // Hoeffding at maximal variance.
        let probs = group_probs(0.5);
        let n_eff = ((n / GROUPS) * GROUPS) as f64;
        let mu: f64 = probs.iter().map(|p| p * (n / GROUPS) as f64).sum();
        let h = [g_h(n_eff, e0), g_h(n_eff, e1)];
        let hits = tally::<4, _>(opts.seed, id(2), t, |rng| {
            let x = heterogeneous_sum(rng, n, &probs);
            [x < mu - h[0], x > mu + h[0], x < mu - h[1], x > mu + h[1]]
        });
        for (i, eps) in [e0, e1].into_iter().enumerate() {
            out.push(case("hoeffding", "lower", n, eps, t, t, hits[2 * i]));
            out.push(case("hoeffding", "upper", n, eps, t, t, hits[2 * i + 1]));
        }

        // Multiplicative Chernoff: bounds on the unknown mean from the
        // observed sum, with ε split equally between the Hoeffding
        // pre-bound and the main bound.
        let probs = group_probs(0.3);
        let mu: f64 = probs.iter().map(|p| p * (n / GROUPS) as f64).sum();
        let hits = tally::<6, _>(opts.seed, id(3), t, |rng| {
            let x = heterogeneous_sum(rng, n, &probs);
            let mut o = [false; 6];
            for (i, eps) in [e0, e1].into_iter().enumerate() {
                let r = mult_chernoff_devs(x, n_eff, eps / 2.0, eps / 2.0, eps / 2.0).unwrap();
                o[3 * i] = r.valid;
                o[3 * i + 1] = r.valid && mu < x - r.lower_dev;
                o[3 * i + 2] = r.valid && mu > x + r.upper_dev;
            }
            o
        });
        for (i, eps) in [e0, e1].into_iter().enumerate() {
            out.push(case(
                "mult_chernoff",
                "lower",
                n,
                eps,
                t,
                hits[3 * i],
                hits[3 * i + 1],
            ));
            out.push(case(
                "mult_chernoff",
                "upper",
                n,
                eps,
                t,
                hits[3 * i],
                hits[3 * i + 2],
            ));
        }

        // Azuma on an adaptive sequence: each success probability depends
        // on the walk so far and drifts with it.
        let a = [g_a(n as f64, e0), g_a(n as f64, e1)];
        let hits = tally::<2, _>(opts.seed, id(4), t, |rng| {
            let mut lam = 0.0f64;
            for i in 0..n {
                let p = 0.5 + 0.4 * lam / (lam.abs() + ((i + 1) as f64).sqrt());
                let x = if rng.random::<f64>() < p { 1.0 } else { 0.0 };
                lam += x - p;
            }
            [lam.abs() > a[0], lam.abs() > a[1]]
        });
        for (i, eps) in [e0, e1].into_iter().enumerate() {
            out.push(case("azuma", "two_sided", n, eps, t, t, hits[i]));
        }
    }
    out
}

/// Operating point used by the decoy checks.
pub fn reference_params() -> ProtocolParams {
    ProtocolParams {
        p_z: 0.85,
        p_ks: 0.7,
        p_kd1: 0.2,
        k_s: 0.45,
        k_d1: 0.08,
        k_d2: 2e-4,
    }
}

fn is_zz(cell: Cell) -> bool {
    cell.alice_basis == Basis::Z && cell.bob_basis == Basis::Z
}

struct Sandwich {
    comparisons: usize,
    min_lower: f64,
    min_upper: f64,
    failures: Vec<SandwichFailure>,
}

impl Sandwich {
    fn new() -> Self {
        Self {
            comparisons: 0,
            min_lower: f64::INFINITY,
            min_upper: f64::INFINITY,
            failures: Vec::new(),
        }
    }

    fn check(
        &mut self,
        at: (f64, f64, f64, bool),
        quantity: String,
        bound: f64,
        truth: f64,
        upper: bool,
    ) {
        self.comparisons += 1;
        let scale = truth.abs().max(1e-300);
        let margin = if upper { bound - truth } else { truth - bound } / scale;
        if upper {
            self.min_upper = self.min_upper.min(margin);
        } else {
            self.min_lower = self.min_lower.min(margin);
        }
        if margin < 0.0 {
            self.failures.push(SandwichFailure {
                distance_km: at.0,
                r: at.1,
                xi: at.2,
                finite: at.3,
                quantity,
                bound,
                truth,
            });
        }
    }

    fn check_point(&mut self, ev: &Evaluator, sampled: Option<(u64, u64)>) -> Result<()> {
        let params = reference_params();
        let intens = params.intensities(ev.channel.fluct_r)?;
        let model = ev.model()?;
        let est = match sampled {
            None => ev.estimates(&params)?,
            Some((rounds, seed)) => {
                let counts = model.sample_counts(&intens, params.p_z, rounds, seed)?;
                let (_, e_z) = model.expected_counts(&intens, params.p_z, rounds as f64)?;
                ev.estimates_from_counts(counts, e_z, &intens, params.p_z)?
            }
        };
        let n = sampled.map(|s| s.0 as f64).unwrap_or(ev.n_total);
        let t0 = model.photon_events(&intens, params.p_z, n, 0);
        let t1 = model.photon_events(&intens, params.p_z, n, 1);
        let at = (
            ev.channel.distance_km,
            ev.channel.fluct_r,
            ev.channel.xi,
            ev.finite,
        );
        let zz = |t: &[f64; 16]| {
            Cell::all()
                .iter()
                .filter(|&&c| is_zz(c))
                .map(|c| t[c.index()])
                .sum::<f64>()
        };
        self.check(at, "m0_lower".into(), est.m0.value, zz(&t0), false);
        self.check(at, "m1_lower".into(), est.m1.value, zz(&t1), false);
        for cell in Cell::all() {
            if cell.alice_basis == Basis::X && cell.alice_bit == 1 {
                continue;
            }
            let b = &est.cells[cell.index()];
            let i = cell.index();
            self.check(at, format!("{cell}.lower0"), b.lower0.value, t0[i], false);
            self.check(at, format!("{cell}.lower1"), b.lower1.value, t1[i], false);
            self.check(at, format!("{cell}.upper1"), b.upper1.value, t1[i], true);
        }
        Ok(())
    }

    fn report(self, points: usize) -> SandwichReport {
        SandwichReport {
            points,
            comparisons: self.comparisons,
            min_lower_margin: self.min_lower,
            min_upper_margin: self.min_upper,
            passed: self.failures.is_empty(),
            failures: self.failures,
        }
    }
}

fn evaluator_at(d: f64, r: f64, xi: f64, n_total: f64) -> Result<Evaluator> {
    let channel = ChannelConfig {
        distance_km: d,
        fluct_r: r,
        xi,
        ..Default::default()
    };
    Evaluator::for_channel(channel, 1e-10, 1e-15, n_total)
}

/// Decoy bounds on expected statistics against the photon-number truth,
/// with and without statistical deviations.
pub fn sandwich_suite() -> Result<SandwichReport> {
    let mut s = Sandwich::new();
    let mut points = 0;
    for d in (0..=6).map(|i| 25.0 * i as f64) {
        for r in [0.0, 0.02, 0.05] {
            for xi in [0.0, 0.147] {
                for finite in [true, false] {
                    let mut ev = evaluator_at(d, r, xi, 1e12)?;
                    if !finite {
                        ev = ev.asymptotic();
                    }
                    s.check_point(&ev, None)?;
                    points += 1;
                }
            }
        }
    }
    Ok(s.report(points))
}

/// The same check on integer counts drawn from the channel model.
fn sampled_sandwich_suite(opts: &ValidationOptions) -> Result<SandwichReport> {
    let mut s = Sandwich::new();
    let mut points = 0;
    if opts.sampled_rounds > 0 {
        for (i, (d, r)) in [(10.0, 0.0), (50.0, 0.0), (25.0, 0.05)]
            .into_iter()
            .enumerate()
        {
            let ev = evaluator_at(d, r, 0.147, opts.sampled_rounds as f64)?;
            s.check_point(
                &ev,
                Some((opts.sampled_rounds, opts.seed.wrapping_add(i as u64))),
            )?;
            points += 1;
        }
    }
    Ok(s.report(points))
}

pub const CROSS_CHECK_TOLERANCE: f64 = 1e-9;

/// The general phase-error bound with the matching flaw model against the
/// closed form, on 50 points of (ξ, p_z, D).
pub fn cross_check_suite() -> Result<CrossCheckReport> {
    let mut points = 0;
    let mut max_rel: f64 = 0.0;
    for xi in [0.0, 0.05, 0.1, 0.147, 0.2] {
        for p_z in [0.5, 0.85] {
            for d in [0.0, 40.0, 80.0, 120.0, 160.0] {
                let ev = evaluator_at(d, 0.0, xi, 1e12)?;
                let params = ProtocolParams {
                    p_z,
                    ..reference_params()
                };
                let est = ev.estimates(&params)?;
                let closed = n_ph_closed_form(xi, p_z, &est.cells, &ev.azuma())?;
                let fs = filtered_states(&EncodingFlawModel::from_xi(xi), 1.0)?;
                let tm = build_transmission_matrix(&fs[0], &fs[1], &fs[2])?;
                let qm = virtual_state_coeffs(&fs[0], &fs[1], &tm, p_z)?;
                let general = n_ph_upper_general(&qm, &est.cells, &est.m1, &ev.azuma())?.n_ph_upper;
                let rel = (general - closed).abs() / closed.abs().max(1e-300);
                max_rel = max_rel.max(rel);
                points += 1;
            }
        }
    }
    Ok(CrossCheckReport {
        points,
        max_rel_diff: max_rel,
        tolerance: CROSS_CHECK_TOLERANCE,
        passed: max_rel <= CROSS_CHECK_TOLERANCE,
    })
}

pub fn identity_suite() -> Result<IdentityReport> {
    let (mut inv, mut rec, mut norm) = (0.0f64, 0.0f64, 0.0f64);
    let mut cases = 0;
    let offsets = [
        vec![(0.0, 1.0)],
        vec![(-0.03, 0.25), (0.0, 0.5), (0.03, 0.25)],
    ];
    for xi in [0.0, 0.05, 0.1, 0.147, 0.2, 0.3] {
        for gamma in [0.8, 1.0, 1.25] {
            for masses in &offsets {
                let mut flaw = EncodingFlawModel::from_point_masses(masses.clone())?;
                flaw.model_xi = xi;
                let fs = filtered_states(&flaw, gamma)?;
                for q in &fs {
                    let m = q.reconstruct();
                    let want = [
                        [(1.0 + q.r_z) / 2.0, q.r_x / 2.0],
                        [q.r_x / 2.0, (1.0 - q.r_z) / 2.0],
                    ];
                    for i in 0..2 {
                        for j in 0..2 {
                            rec = rec.max((m[i][j] - want[i][j]).abs());
                        }
                    }
                }
                let tm = build_transmission_matrix(&fs[0], &fs[1], &fs[2])?;
                let prod = mat_mul(&tm.a, &tm.a_inv);
                for (i, row) in prod.iter().enumerate() {
                    for (j, v) in row.iter().enumerate() {
                        inv = inv.max((v - if i == j { 1.0 } else { 0.0 }).abs());
                    }
                }
                for p_z in [0.3, 0.5, 0.85, 0.99] {
                    let qm = virtual_state_coeffs(&fs[0], &fs[1], &tm, p_z)?;
                    norm = norm.max((qm.p.iter().sum::<f64>() - 1.0).abs());
                }
                cases += 1;
            }
        }
    }
    Ok(IdentityReport {
        cases,
        max_inverse_err: inv,
        max_reconstruction_err: rec,
        max_normalisation_err: norm,
        passed: inv <= 1e-10 && rec <= 1e-10 && norm <= 1e-12,
    })
}

/// The key length must not decrease with m0, m1 or ε_sec, and must not
/// increase with the phase error rate or the error-correction leakage.
pub fn key_length_battery() -> Result<MonotonicityReport> {
    let mut failures = Vec::new();
    let mut checks = 0;
    let bound = |kind, v: f64| DecoyBound {
        value: v,
        mean: v,
        failure_prob: 1e-25,
        kind,
    };
    let phase = |e: f64, m1: f64| PhaseErrorBound {
        n_ph_upper: e * m1,
        n1_upper: m1,
        e_ph_upper: e,
        failure_prob: 1e-25,
        term_log: Vec::new(),
    };
    let ell = |m0: f64, m1: f64, e: f64, leak: f64, eps_sec: f64| -> Result<f64> {
        let budget = EpsilonBudget::new(eps_sec, 1e-15, EstimationMode::Exact)?;
        let ec = ErrorCorrection {
            lambda_ec: leak,
            e_z: 0.02,
            z_ks_size: 1e8,
        };
        let r = key_length(
            &bound(BoundKind::VacLower, m0),
            &bound(BoundKind::SingleLower, m1),
            &phase(e, m1),
            &ec,
            &budget,
            1e12,
            true,
        );
        Ok(r.ell as f64)
    };
    let grid = |lo: f64, hi: f64| (0..25).map(move |i| lo + (hi - lo) * i as f64 / 24.0);
    let mut monotone = |name: &str, values: Vec<f64>, increasing: bool| {
        for w in values.windows(2) {
            checks += 1;
            let ok = if increasing {
                w[1] >= w[0]
            } else {
                w[1] <= w[0]
            };
            if !ok {
                failures.push(format!("{name}: {} then {}", w[0], w[1]));
            }
        }
    };
    for e in [0.02, 0.1, 0.2] {
        let v = grid(1e6, 5e7)
            .map(|m1| ell(1e5, m1, e, 5e6, 1e-10))
            .collect::<Result<Vec<_>>>()?;
        monotone("m1", v, true);
        let v = grid(0.0, 1e7)
            .map(|m0| ell(m0, 2e7, e, 5e6, 1e-10))
            .collect::<Result<Vec<_>>>()?;
        monotone("m0", v, true);
        let v = grid(0.0, 2e7)
            .map(|leak| ell(1e5, 2e7, e, leak, 1e-10))
            .collect::<Result<Vec<_>>>()?;
        monotone("lambda_ec", v, false);
    }
    for m1 in [1e6, 1e7, 1e8] {
        let v = grid(0.0, 0.5)
            .map(|e| ell(1e5, m1, e, 1e5, 1e-10))
            .collect::<Result<Vec<_>>>()?;
        monotone("e_ph", v, false);
    }
    let v = (3..=12)
        .rev()
        .map(|k| ell(1e5, 1e6, 0.05, 1e5, 10f64.powi(-k)))
        .collect::<Result<Vec<_>>>()?;
    monotone("eps_sec", v, true);
    Ok(MonotonicityReport {
        checks,
        passed: failures.is_empty(),
        failures,
    })
}
