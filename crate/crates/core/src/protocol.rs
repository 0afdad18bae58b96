//! End-to-end evaluation of the key length at one parameter point.

use serde::{Deserialize, Serialize};

use crate::channel::{ChannelConfig, ChannelModel, ChannelRates};
use crate::decoy::{
    decoy_cell_bounds, m0_lower, m1_lower, Cell, CellBounds, DecoyBound, EstimationMode,
    IntensitySet, MeanEstimator, ObservedCounts,
};
use crate::error::{Error, Result};
use crate::key_length::{
    key_length, lambda_ec, EpsilonBudget, ErrorCorrection, KeyRateResult, F_EC,
};
use crate::phase_error::{
    n_ph_upper_general, phase_error_closed_form, AzumaSetting, PhaseErrorBound,
};
use crate::qubit_model::{
    build_transmission_matrix, filtered_states, virtual_state_coeffs, EncodingFlawModel,
};

/// Free protocol parameters; the weakest decoy is usually held fixed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolParams {
    pub p_z: f64,
    pub p_ks: f64,
    pub p_kd1: f64,
    pub k_s: f64,
    pub k_d1: f64,
    pub k_d2: f64,
}

impl ProtocolParams {
    pub fn intensities(&self, r: f64) -> Result<IntensitySet> {
        IntensitySet::from_nominal([self.k_s, self.k_d1, self.k_d2], self.p_ks, self.p_kd1, r)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PhaseMethod {
    /// Closed form for Δθ_A = ξθ_A/π with ξ taken from the channel.
    ClosedForm,
    /// General bound for any flaw model and filter parameter γ.
    General { flaw: EncodingFlawModel, gamma: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluator {
    pub channel: ChannelConfig,
    pub budget: EpsilonBudget,
    pub n_total: f64,
    pub mode: EstimationMode,
    /// False gives the asymptotic rate: every statistical deviation is zero.
    pub finite: bool,
    pub phase: PhaseMethod,
    pub f_ec: f64,
}

/// All intermediate quantities of one evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimates {
    pub counts: ObservedCounts,
    pub e_z: f64,
    pub m0: DecoyBound,
    pub m1: DecoyBound,
    pub cells: [CellBounds; 16],
    pub phase: PhaseErrorBound,
    pub result: KeyRateResult,
}

impl Evaluator {
    pub fn new(
        channel: ChannelConfig,
        eps_sec: f64,
        eps_c: f64,
        n_total: f64,
        mode: EstimationMode,
    ) -> Result<Self> {
        Ok(Self {
            channel,
            budget: EpsilonBudget::new(eps_sec, eps_c, mode)?,
            n_total,
            mode,
            finite: true,
            phase: PhaseMethod::ClosedForm,
            f_ec: F_EC,
        })
    }

    /// Exact mode for r = 0, fluctuating otherwise.
    pub fn for_channel(
        channel: ChannelConfig,
        eps_sec: f64,
        eps_c: f64,
        n_total: f64,
    ) -> Result<Self> {
        let mode = if channel.fluct_r > 0.0 {
            EstimationMode::Fluctuating
        } else {
            EstimationMode::Exact
        };
        Self::new(channel, eps_sec, eps_c, n_total, mode)
    }

    pub fn asymptotic(mut self) -> Self {
        self.finite = false;
        self
    }

    pub fn at_distance(&self, distance_km: f64) -> Self {
        Self {
            channel: self.channel.at_distance(distance_km),
            ..self.clone()
        }
    }

    pub fn estimator(&self) -> MeanEstimator {
        if self.finite {
            MeanEstimator::new(self.mode, self.budget.allocations.eps_mean)
        } else {
            MeanEstimator::asymptotic(self.mode)
        }
    }

    pub fn azuma(&self) -> AzumaSetting {
        if self.finite {
            AzumaSetting::new(self.budget.allocations.eps_azuma)
        } else {
            AzumaSetting::asymptotic()
        }
    }

    pub fn model(&self) -> Result<ChannelModel> {
        ChannelModel::new(&self.channel)
    }

    pub fn evaluate(&self, params: &ProtocolParams) -> Result<KeyRateResult> {
        Ok(self.estimates(params)?.result)
    }

    pub fn estimates(&self, params: &ProtocolParams) -> Result<Estimates> {
        let intens = params.intensities(self.channel.fluct_r)?;
        let rates = self.model()?.rates(&intens);
        self.estimates_with(&rates, params)
    }

    /// Evaluation reusing channel rates computed for the same intensities.
    pub fn estimates_with(
        &self,
        rates: &ChannelRates,
        params: &ProtocolParams,
    ) -> Result<Estimates> {
        let intens = params.intensities(self.channel.fluct_r)?;
        let (counts, e_z) = rates.expected_counts(&intens, params.p_z, self.n_total)?;
        self.estimates_from_counts(counts, e_z, &intens, params.p_z)
    }

    /// Bounds and key length from given counts (expected or sampled).
    pub fn estimates_from_counts(
        &self,
        counts: ObservedCounts,
        e_z: f64,
        intens: &IntensitySet,
        p_z: f64,
    ) -> Result<Estimates> {
        counts.validate()?;
        let est = self.estimator();
        let alloc = &self.budget.allocations;
        let m0 = m0_lower(&counts, intens, &est, alloc.eps_z0)?;
        let m1 = m1_lower(&counts, intens, &est, alloc.eps_z1, &m0)?;
        let mut cells = Vec::with_capacity(16);
        for cell in Cell::all() {
            cells.push(decoy_cell_bounds(cell, &counts, intens, &est)?);
        }
        let cells: [CellBounds; 16] = cells
            .try_into()
            .map_err(|_| Error::Domain("cell count".into()))?;
        let azuma = self.azuma();
        let phase = match &self.phase {
            PhaseMethod::ClosedForm => {
                phase_error_closed_form(self.channel.xi, p_z, &cells, &m1, &azuma)?
            }
            PhaseMethod::General { flaw, gamma } => {
                let fs = filtered_states(flaw, *gamma)?;
                let tm = build_transmission_matrix(&fs[0], &fs[1], &fs[2])?;
                let qm = virtual_state_coeffs(&fs[0], &fs[1], &tm, p_z)?;
                n_ph_upper_general(&qm, &cells, &m1, &azuma)?
            }
        };
        let z_ks = counts.z_by_k()[0];
        let ec = ErrorCorrection {
            lambda_ec: lambda_ec(z_ks, e_z, self.f_ec)?,
            e_z,
            z_ks_size: z_ks,
        };
        let result = key_length(
            &m0,
            &m1,
            &phase,
            &ec,
            &self.budget,
            self.n_total,
            self.finite,
        );
        Ok(Estimates {
            counts,
            e_z,
            m0,
            m1,
            cells,
            phase,
            result,
        })
    }
}
