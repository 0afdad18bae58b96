//! Run configuration, read from TOML.
//!
//! Every field has a default, so an empty file reproduces the exact
//! intensity, N = 10^12 sweep from 0 to 200 km.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channel::ChannelConfig;
use crate::decoy::EstimationMode;
use crate::error::{Error, Result};
use crate::key_length::{Allocations, EpsilonBudget, F_EC};
use crate::optimize::{OptimizerConfig, SearchSpace};
use crate::protocol::{Evaluator, PhaseMethod};
use crate::qubit_model::EncodingFlawModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseChoice {
    ClosedForm,
    General,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// Picked from `channel.fluct_r` when absent.
    pub mode: Option<EstimationMode>,
    pub asymptotic: bool,
    pub n_total: f64,
    pub eps_sec: f64,
    pub eps_c: f64,
    pub f_ec: f64,
    pub phase_method: PhaseChoice,
    /// Filter parameter γ = sqrt(k_sig / k_ref) for the general bound.
    pub gamma: f64,
    /// Extra phase offsets (offset, probability) for the general bound.
    /// Empty means no random component.
    pub phase_offsets: Vec<(f64, f64)>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            mode: None,
            asymptotic: false,
            n_total: 1e12,
            eps_sec: 1e-10,
            eps_c: 1e-15,
            f_ec: F_EC,
            phase_method: PhaseChoice::ClosedForm,
            gamma: 1.0,
            phase_offsets: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub start_km: f64,
    pub stop_km: f64,
    pub step_km: f64,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            start_km: 0.0,
            stop_km: 200.0,
            step_km: 5.0,
        }
    }
}

impl SweepSection {
    /// Distances from start to stop inclusive.
    pub fn distances(&self) -> Result<Vec<f64>> {
        let ok = self.start_km.is_finite()
            && self.stop_km.is_finite()
            && self.start_km >= 0.0
            && self.step_km > 0.0
            && self.stop_km >= self.start_km;
        if !ok {
            return Err(Error::Config(format!(
                "sweep [{}, {}] step {} is empty",
                self.start_km, self.stop_km, self.step_km
            )));
        }
        let n = ((self.stop_km - self.start_km) / self.step_km + 1e-9).floor() as usize;
        Ok((0..=n)
            .map(|i| self.start_km + i as f64 * self.step_km)
            .collect())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub channel: ChannelConfig,
    pub sweep: SweepSection,
    pub optimizer: OptimizerConfig,
    pub space: SearchSpace,
    /// Overrides the equal split of the failure budget.
    pub epsilon: Option<Allocations>,
    pub output: OutputSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serialisable")
    }

    pub fn mode(&self) -> EstimationMode {
        self.run.mode.unwrap_or(if self.channel.fluct_r > 0.0 {
            EstimationMode::Fluctuating
        } else {
            EstimationMode::Exact
        })
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: Error| match e {
            Error::Config(m) => Error::Config(m),
            other => Error::Config(other.to_string()),
        };
        let r = &self.run;
        if !(r.eps_c > 0.0 && r.eps_c < r.eps_sec && r.eps_sec < 1.0) {
            return Err(Error::Config(format!(
                "need 0 < eps_c < eps_sec < 1, got eps_c = {}, eps_sec = {}",
                r.eps_c, r.eps_sec
            )));
        }
        if !(r.n_total.is_finite() && r.n_total >= 1.0) {
            return Err(Error::Config(format!(
                "n_total = {} must be at least 1",
                r.n_total
            )));
        }
        if !(r.f_ec >= 1.0) {
            return Err(Error::Config(format!(
                "f_ec = {} must be at least 1",
                r.f_ec
            )));
        }
        match (self.mode(), self.channel.fluct_r > 0.0) {
            (EstimationMode::Fluctuating, false) => {
                return Err(Error::Config(
                    "mode = \"fluctuating\" needs channel.fluct_r > 0".into(),
                ))
            }
            (EstimationMode::Exact, true) => {
                return Err(Error::Config(
                    "mode = \"exact\" cannot be used with channel.fluct_r > 0".into(),
                ))
            }
            _ => {}
        }
        self.channel.validate().map_err(cfg_err)?;
        self.sweep.distances()?;
        self.space.validate().map_err(cfg_err)?;
        if self.optimizer.grid_points < 2 {
            return Err(Error::Config(
                "optimizer.grid_points must be at least 2".into(),
            ));
        }
        self.budget().map_err(cfg_err)?;
        self.phase_method().map_err(cfg_err)?;
        Ok(())
    }

    pub fn budget(&self) -> Result<EpsilonBudget> {
        let (s, c, m) = (self.run.eps_sec, self.run.eps_c, self.mode());
        match self.epsilon {
            Some(a) => EpsilonBudget::with_allocations(s, c, a, m),
            None => EpsilonBudget::new(s, c, m),
        }
    }

    pub fn phase_method(&self) -> Result<PhaseMethod> {
        Ok(match self.run.phase_method {
            PhaseChoice::ClosedForm => PhaseMethod::ClosedForm,
            PhaseChoice::General => {
                let mut flaw = if self.run.phase_offsets.is_empty() {
                    EncodingFlawModel::ideal()
                } else {
                    EncodingFlawModel::from_point_masses(self.run.phase_offsets.clone())?
                };
                flaw.model_xi = self.channel.xi;
                flaw.validate()?;
                if !(self.run.gamma > 0.0 && self.run.gamma.is_finite()) {
                    return Err(Error::Domain(format!(
                        "gamma = {} must be positive",
                        self.run.gamma
                    )));
                }
                PhaseMethod::General {
                    flaw,
                    gamma: self.run.gamma,
                }
            }
        })
    }

    /// Evaluator at the channel's own distance.
    pub fn evaluator(&self) -> Result<Evaluator> {
        let ev = Evaluator {
            channel: self.channel,
            budget: self.budget()?,
            n_total: self.run.n_total,
            mode: self.mode(),
            finite: !self.run.asymptotic,
            phase: self.phase_method()?,
            f_ec: self.run.f_ec,
        };
        Ok(ev)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = RunConfig::from_toml("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.mode(), EstimationMode::Exact);
        assert_eq!(c.sweep.distances().unwrap().len(), 41);
        let ev = c.evaluator().unwrap();
        assert_eq!(ev.n_total, 1e12);
        assert_eq!(ev.channel.det_eff, 0.15);
        assert_eq!(ev.channel.dark_prob, 5e-7);
        assert_eq!(c.space.k_d2, 2e-4);
    }

    #[test]
    fn round_trip() {
        let mut c = RunConfig::default();
        c.channel.xi = 0.147;
        c.run.asymptotic = true;
        c.output.path = Some("out.csv".into());
        let back = RunConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn parse_errors_carry_position() {
        let e = RunConfig::from_toml("[run]\nn_total = 1e12\nbogus = 3\n").unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("line 3"), "{msg}");
        assert!(msg.contains("bogus"), "{msg}");
        let e = RunConfig::from_toml("[channel]\nxi = \"big\"\n").unwrap_err();
        assert!(e.to_string().contains("line 2"), "{e}");
    }

    #[test]
    fn invalid_configs_rejected() {
        for text in [
            "[run]\neps_c = 1e-9\neps_sec = 1e-10\n",
            "[sweep]\nstart_km = 50\nstop_km = 10\n",
            "[sweep]\nstep_km = 0\n",
            "[run]\nmode = \"fluctuating\"\n",
            "[run]\nmode = \"exact\"\n[channel]\nfluct_r = 0.02\n",
            "[channel]\ndet_eff = 1.5\n",
            "[optimizer]\ngrid_points = 1\n",
            "[epsilon]\neps_z0 = 0.1\neps_z1 = 0.1\neps_mean = 0.1\neps_azuma = 0.1\n",
        ] {
            assert!(
                matches!(RunConfig::from_toml(text), Err(Error::Config(_))),
                "{text}"
            );
        }
    }

    #[test]
    fn fluctuating_mode_inferred() {
        let c = RunConfig::from_toml("[channel]\nfluct_r = 0.05\n").unwrap();
        assert_eq!(c.mode(), EstimationMode::Fluctuating);
    }

    #[test]
    fn general_phase_method() {
        let c = RunConfig::from_toml(
            "[run]\nphase_method = \"general\"\ngamma = 0.9\nphase_offsets = [[-0.01, 0.5], [0.01, 0.5]]\n[channel]\nxi = 0.1\n",
        )
        .unwrap();
        match c.phase_method().unwrap() {
            PhaseMethod::General { flaw, gamma } => {
                assert_eq!(gamma, 0.9);
                assert_eq!(flaw.model_xi, 0.1);
                assert_eq!(flaw.point_masses.len(), 2);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn sweep_includes_endpoint() {
        let s = SweepSection {
            start_km: 0.0,
            stop_km: 1.0,
            step_km: 0.1,
        };
        let d = s.distances().unwrap();
        assert_eq!(d.len(), 11);
        assert!((d[10] - 1.0).abs() < 1e-12);
    }
}
