//! Maximisation of the key rate over p_z, p_ks, p_kd1, k_s and k_d1.
//!
//! The search runs in the unit cube. Each coordinate maps to a parameter
//! range; p_kd1 is a fraction of 1 − p_ks and k_d1 a fraction of the gap
//! between k_d2 and k_s, so the simplex constraints hold by construction
//! and only the range-ordering constraints can fail.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelRates;
use crate::error::{Error, Result};
use crate::key_length::KeyRateResult;
use crate::protocol::{Evaluator, ProtocolParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSpace {
    pub p_z: (f64, f64),
    pub p_ks: (f64, f64),
    /// p_kd1 / (1 − p_ks).
    pub p_kd1_frac: (f64, f64),
    pub k_s: (f64, f64),
    /// (k_d1 − k_d2) / (k_s − k_d2).
    pub k_d1_frac: (f64, f64),
    pub k_d2: f64,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            p_z: (0.3, 0.99),
            p_ks: (0.05, 0.98),
            p_kd1_frac: (0.02, 0.98),
            k_s: (0.05, 1.0),
            k_d1_frac: (0.01, 0.9),
            k_d2: 2e-4,
        }
    }
}

fn lerp(r: (f64, f64), u: f64) -> f64 {
    r.0 + (r.1 - r.0) * u.clamp(0.0, 1.0)
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        let in_open = |r: (f64, f64), name: &str| {
            if r.0 > 0.0 && r.0 <= r.1 && r.1 < 1.0 {
                Ok(())
            } else {
                Err(Error::Domain(format!(
                    "{name} range {r:?} must lie inside (0, 1)"
                )))
            }
        };
        in_open(self.p_z, "p_z")?;
        in_open(self.p_ks, "p_ks")?;
        in_open(self.p_kd1_frac, "p_kd1_frac")?;
        in_open(self.k_d1_frac, "k_d1_frac")?;
        if !(self.k_d2 > 0.0
            && self.k_s.0 > self.k_d2
            && self.k_s.0 <= self.k_s.1
            && self.k_s.1 <= 1.0)
        {
            return Err(Error::Domain(format!(
                "k_s range {:?} must lie in (k_d2, 1]",
                self.k_s
            )));
        }
        Ok(())
    }

    pub fn params(&self, u: &[f64; 5]) -> ProtocolParams {
        let p_ks = lerp(self.p_ks, u[1]);
        let k_s = lerp(self.k_s, u[3]);
        ProtocolParams {
            p_z: lerp(self.p_z, u[0]),
            p_ks,
            p_kd1: lerp(self.p_kd1_frac, u[2]) * (1.0 - p_ks),
            k_s,
            k_d1: self.k_d2 + lerp(self.k_d1_frac, u[4]) * (k_s - self.k_d2),
            k_d2: self.k_d2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    GridNelderMead,
    GridOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub strategy: Strategy,
    pub grid_points: usize,
    pub max_evaluations: usize,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::GridNelderMead,
            grid_points: 7,
            max_evaluations: 1500,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub best_score: f64,
    pub best_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationResult {
    pub best_params: ProtocolParams,
    pub best: KeyRateResult,
    pub evaluations: usize,
    pub trace: Vec<TraceEntry>,
}

/// Channel rates depend only on (k_s, k_d1); the grid reuses them across
/// the probability axes.
struct Objective<'a> {
    ev: &'a Evaluator,
    space: &'a SearchSpace,
}

impl Objective<'_> {
    fn rates(&self, p: &ProtocolParams) -> Option<ChannelRates> {
        let intens = p.intensities(self.ev.channel.fluct_r).ok()?;
        Some(self.ev.model().ok()?.rates(&intens))
    }

    fn eval_with(&self, rates: Option<&ChannelRates>, p: &ProtocolParams) -> KeyRateResult {
        let r = match rates {
            Some(r) => self.ev.estimates_with(r, p),
            None => Err(Error::Domain("infeasible".into())),
        };
        r.map(|e| e.result)
            .unwrap_or_else(|_| KeyRateResult::infeasible())
    }

    fn eval(&self, u: &[f64; 5]) -> (ProtocolParams, KeyRateResult) {
        let p = self.space.params(u);
        let rates = self.rates(&p);
        (p, self.eval_with(rates.as_ref(), &p))
    }
}

fn better(a: &KeyRateResult, b: &KeyRateResult) -> bool {
    a.ell_real > b.ell_real
}

pub fn optimize_rate(
    ev: &Evaluator,
    space: &SearchSpace,
    opts: &OptimizerConfig,
) -> Result<OptimizationResult> {
    space.validate()?;
    if opts.grid_points < 2 {
        return Err(Error::Domain(
            "grid needs at least two points per axis".into(),
        ));
    }
    let obj = Objective { ev, space };
    let g = opts.grid_points;
    let axis = |i: usize| i as f64 / (g - 1) as f64;
    let pairs: Vec<(usize, usize)> = (0..g).flat_map(|a| (0..g).map(move |b| (a, b))).collect();
    let per_pair: Vec<(usize, [f64; 5], KeyRateResult)> = pairs
        .par_iter()
        .enumerate()
        .map(|(pi, &(i3, i4))| {
            let mut best: Option<([f64; 5], KeyRateResult)> = None;
            let probe = space.params(&[0.5, 0.5, 0.5, axis(i3), axis(i4)]);
            let rates = obj.rates(&probe);
            for i0 in 0..g {
                for i1 in 0..g {
                    for i2 in 0..g {
                        let u = [axis(i0), axis(i1), axis(i2), axis(i3), axis(i4)];
                        let p = space.params(&u);
                        let r = obj.eval_with(rates.as_ref(), &p);
                        if best.as_ref().is_none_or(|b| better(&r, &b.1)) {
                            best = Some((u, r));
                        }
                    }
                }
            }
            let (u, r) = best.expect("grid is nonempty");
            (pi, u, r)
        })
        .collect();
    let mut evaluations = g.pow(5);
    let mut ranked = per_pair;
    ranked.sort_by(|a, b| b.2.ell_real.total_cmp(&a.2.ell_real).then(a.0.cmp(&b.0)));
    let (_, mut best_u, mut best) = ranked[0];
    let mut trace = vec![TraceEntry {
        iteration: 0,
        best_score: best.ell_real,
        best_rate: best.rate,
    }];
    if opts.strategy == Strategy::GridNelderMead && best.ell_real.is_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let step = 1.0 / (g - 1) as f64;
        let mut round = 0;
        // Polish from the best few grid cells; the objective has several
        // local maxima where the estimator switches between bounds.
        for &(_, u0, r0) in ranked.iter().take(POLISH_STARTS) {
            if !r0.ell_real.is_finite() {
                break;
            }
            let (u, r, used) = polish(
                &obj,
                u0,
                step,
                opts.max_evaluations,
                &mut rng,
                &mut round,
                &mut trace,
                &best,
            );
            evaluations += used;
            if better(&r, &best) {
                best = r;
                best_u = u;
                if let Some(last) = trace.last_mut() {
                    last.best_score = best.ell_real;
                    last.best_rate = best.rate;
                }
            }
        }
    }
    let (best_params, best) = obj.eval(&best_u);
    Ok(OptimizationResult {
        best_params,
        best,
        evaluations,
        trace,
    })
}

/// Number of grid cells the refinement starts from.
pub const POLISH_STARTS: usize = 3;

/// Jittered Nelder–Mead restarts from `u0` until a restart stops improving.
#[allow(clippy::too_many_arguments)]
fn polish(
    obj: &Objective<'_>,
    u0: [f64; 5],
    step: f64,
    budget: usize,
    rng: &mut ChaCha8Rng,
    round: &mut usize,
    trace: &mut Vec<TraceEntry>,
    global: &KeyRateResult,
) -> ([f64; 5], KeyRateResult, usize) {
    let mut start = u0;
    for x in start.iter_mut() {
        *x = (*x + rng.random_range(-0.25..0.25) * step).clamp(0.0, 1.0);
    }
    let mut best_u = u0;
    let mut best = obj.eval(&u0).1;
    let mut used = 1;
    let mut scale = 0.5 * step;
    let mut local_rounds = 0;
    while used < budget {
        let (u, r, n) = nelder_mead(obj, start, scale, budget - used, rng);
        used += n;
        local_rounds += 1;
        *round += 1;
        let improved =
            better(&r, &best) && (r.ell_real - best.ell_real) > 1e-9 * best.ell_real.abs().max(1.0);
        if better(&r, &best) {
            best = r;
            best_u = u;
        }
        let shown = if better(&best, global) { &best } else { global };
        trace.push(TraceEntry {
            iteration: *round,
            best_score: shown.ell_real,
            best_rate: shown.rate,
        });
        if !improved && local_rounds > 1 {
            break;
        }
        start = best_u;
        scale = 0.1 * step;
    }
    (best_u, best, used)
}

/// Nelder–Mead on the unit cube (points are clamped), maximising the
/// unfloored key length. Returns the best point, its result and the
/// number of evaluations.
fn nelder_mead(
    obj: &Objective<'_>,
    start: [f64; 5],
    scale: f64,
    max_evals: usize,
    rng: &mut ChaCha8Rng,
) -> ([f64; 5], KeyRateResult, usize) {
    let clamp = |mut u: [f64; 5]| {
        for x in u.iter_mut() {
            *x = x.clamp(0.0, 1.0);
        }
        u
    };
    let mut evals = 0;
    let mut f = |u: &[f64; 5]| {
        evals += 1;
        obj.eval(u).1
    };
    let mut simplex: Vec<([f64; 5], KeyRateResult)> = Vec::with_capacity(6);
    let s0 = clamp(start);
    simplex.push((s0, f(&s0)));
    for d in 0..5 {
        let mut u = s0;
        let sign = if u[d] + scale > 1.0 { -1.0 } else { 1.0 };
        u[d] += sign * scale * rng.random_range(0.8..1.2);
        let u = clamp(u);
        simplex.push((u, f(&u)));
    }
    let score = |r: &KeyRateResult| r.ell_real;
    let mut iter_evals = 6;
    while iter_evals < max_evals {
        simplex.sort_by(|a, b| score(&b.1).total_cmp(&score(&a.1)));
        let (hi, lo) = (score(&simplex[0].1), score(&simplex[5].1));
        let size = simplex[1..]
            .iter()
            .map(|(u, _)| {
                u.iter()
                    .zip(&simplex[0].0)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if (hi.is_finite() && lo.is_finite() && (hi - lo).abs() <= 1e-10 * hi.abs().max(1.0))
            || size < 1e-7
        {
            break;
        }
        let mut c = [0.0; 5];
        for (u, _) in &simplex[..5] {
            for d in 0..5 {
                c[d] += u[d] / 5.0;
            }
        }
        let worst = simplex[5].0;
        let along = |t: f64| {
            let mut u = [0.0; 5];
            for d in 0..5 {
                u[d] = c[d] + t * (c[d] - worst[d]);
            }
            clamp(u)
        };
        let xr = along(1.0);
        let fr = f(&xr);
        iter_evals += 1;
        if score(&fr) > score(&simplex[0].1) {
            let xe = along(2.0);
            let fe = f(&xe);
            iter_evals += 1;
            simplex[5] = if score(&fe) > score(&fr) {
                (xe, fe)
            } else {
                (xr, fr)
            };
        } else if score(&fr) > score(&simplex[4].1) {
            simplex[5] = (xr, fr);
        } else {
            let outside = score(&fr) > score(&simplex[5].1);
            let xc = if outside { along(0.5) } else { along(-0.5) };
            let fc = f(&xc);
            iter_evals += 1;
            let reference = if outside {
                score(&fr)
            } else {
                score(&simplex[5].1)
            };
            if score(&fc) > reference || (score(&fc) == reference && reference.is_finite()) {
                simplex[5] = (xc, fc);
            } else {
                let best = simplex[0].0;
                for entry in simplex.iter_mut().skip(1) {
                    let mut u = [0.0; 5];
                    for d in 0..5 {
                        u[d] = best[d] + 0.5 * (entry.0[d] - best[d]);
                    }
                    let u = clamp(u);
                    *entry = (u, f(&u));
                    iter_evals += 1;
                }
            }
        }
    }
    simplex.sort_by(|a, b| score(&b.1).total_cmp(&score(&a.1)));
    let (u, r) = simplex.swap_remove(0);
    (u, r, evals)
}
