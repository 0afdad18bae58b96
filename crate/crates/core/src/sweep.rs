//! Distance sweeps: one optimised evaluation per distance.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::key_length::KeyRateResult;
use crate::optimize::{optimize_rate, OptimizationResult};
use crate::protocol::ProtocolParams;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub distance_km: f64,
    pub params: ProtocolParams,
    pub result: KeyRateResult,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

pub const CSV_COLUMNS: [&str; 15] = [
    "distance_km",
    "rate",
    "ell",
    "m0_lower",
    "m1_lower",
    "eph_upper",
    "e_z",
    "z_ks_size",
    "p_z",
    "p_ks",
    "p_kd1",
    "k_s",
    "k_d1",
    "aborted",
    "abort_reason",
];

/// Optimises every distance of the sweep. Distances run in parallel;
/// rows come back in sweep order.
pub fn run_sweep(cfg: &RunConfig) -> Result<SweepTable> {
    cfg.validate()?;
    let base = cfg.evaluator()?;
    let rows = cfg
        .sweep
        .distances()?
        .into_par_iter()
        .map(|d| {
            let ev = base.at_distance(d);
            let OptimizationResult {
                best_params,
                best,
                evaluations,
                ..
            } = optimize_rate(&ev, &cfg.space, &cfg.optimizer)?;
            Ok(SweepRow {
                distance_km: d,
                params: best_params,
                result: best,
                evaluations,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepTable { rows })
}

fn num(x: f64) -> String {
    format!("{x:.12e}")
}

#[derive(Serialize)]
struct CsvRecord {
    distance_km: String,
    rate: String,
    ell: u64,
    m0_lower: String,
    m1_lower: String,
    eph_upper: String,
    e_z: String,
    z_ks_size: String,
    p_z: String,
    p_ks: String,
    p_kd1: String,
    k_s: String,
    k_d1: String,
    aborted: bool,
    abort_reason: &'static str,
}

impl From<&SweepRow> for CsvRecord {
    fn from(row: &SweepRow) -> Self {
        let (r, p) = (&row.result, &row.params);
        Self {
            distance_km: num(row.distance_km),
            rate: num(r.rate),
            ell: r.ell,
            m0_lower: num(r.m0_l),
            m1_lower: num(r.m1_l),
            eph_upper: num(r.e_ph_u),
            e_z: num(r.e_z),
            z_ks_size: num(r.z_ks_size),
            p_z: num(p.p_z),
            p_ks: num(p.p_ks),
            p_kd1: num(p.p_kd1),
            k_s: num(p.k_s),
            k_d1: num(p.k_d1),
            aborted: r.aborted,
            abort_reason: r.abort_reason.map(|a| a.as_str()).unwrap_or(""),
        }
    }
}

impl SweepTable {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let io = |e: csv::Error| Error::Domain(format!("csv output: {e}"));
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(CsvRecord::from(row)).map_err(io)?;
        }
        if self.rows.is_empty() {
            w.write_record(CSV_COLUMNS).map_err(io)?;
        }
        w.flush()
            .map_err(|e| Error::Domain(format!("csv output: {e}")))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is ascii")
    }

    pub fn rates(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.result.rate).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> RunConfig {
        RunConfig::from_toml(
            "[channel]\nxi = 0.147\n[sweep]\nstart_km = 100\nstop_km = 250\nstep_km = 50\n[optimizer]\ngrid_points = 4\nmax_evaluations = 300\n",
        )
        .unwrap()
    }

    #[test]
    fn csv_layout() {
        let t = run_sweep(&small()).unwrap();
        let text = t.to_csv_string();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), CSV_COLUMNS.join(","));
        let first: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(first.len(), 15);
        assert_eq!(first[0], "1.000000000000e2");
        assert!(first[1].parse::<f64>().unwrap() > 0.0);
        assert_eq!(first[13], "false");
        assert_eq!(first[14], "");
        let last: Vec<&str> = text.lines().last().unwrap().split(',').collect();
        assert_eq!(last[0], "2.500000000000e2");
        assert_eq!(last[1], "0.000000000000e0");
        assert_eq!(last[13], "true");
        assert!(!last[14].is_empty());
    }

    #[test]
    fn deterministic() {
        let a = run_sweep(&small()).unwrap().to_csv_string();
        let b = run_sweep(&small()).unwrap().to_csv_string();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_table_still_has_header() {
        let t = SweepTable { rows: vec![] };
        assert_eq!(t.to_csv_string().trim(), CSV_COLUMNS.join(","));
    }
}
