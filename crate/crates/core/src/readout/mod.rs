//! Dispersive readout through the transducer.
//!
//! The chain runs cavity pointer dynamics ([`cavity`]), upconversion through
//! the linearized transducer and matched-filter integration against the
//! detector noise ([`filter`], [`pipeline`]), and the SNR-versus-dephasing
//! calibration of the quantum efficiency ([`calibration`]).
//!
//! Readout strength is expressed as n̄_r = (κ_c/4)∫|α_e − α_g|²dt, the
//! quantity for which the pointer-state overlap is exactly e^{−2n̄_r} and an
//! ideal heterodyne chain reaches SNR = √(8n̄_r).

pub mod calibration;
pub mod cavity;
pub mod filter;
pub mod pipeline;

use std::f64::consts::SQRT_2;
use std::fmt;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::error::{ensure_non_negative, invalid, Result};
use crate::params::EfficiencyBudget;

pub use calibration::{
    calibrate_quantum_efficiency, fit_calibration, voltage_grid, CalibrationMode,
    CalibrationPoint, CalibrationResult, CalibrationSetup,
};
pub use cavity::{cavity_response, PointerTrajectory, PulseShape, ReadoutPulse};
pub use filter::{
    integrated_stats, matched_filter, noise_number_to_s_t0, transducer_noise_number,
    MatchedFilter, ReadoutStatistics,
};
pub use pipeline::{
    exact_bandwidth_efficiency, upconvert, DetectionChain, Evaluation, MeanTraces, NoiseLevel,
    Pipeline,
};

/// Qubit basis state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum QubitState {
    #[serde(rename = "g")]
    Ground,
    #[serde(rename = "e")]
    Excited,
}

impl QubitState {
    pub fn index(self) -> usize {
        match self {
            QubitState::Ground => 0,
            QubitState::Excited => 1,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            QubitState::Ground => QubitState::Excited,
            QubitState::Excited => QubitState::Ground,
        }
    }
}

impl fmt::Display for QubitState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QubitState::Ground => "g",
            QubitState::Excited => "e",
        })
    }
}

/// How loss enters the SNR of the budget path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Convention {
    /// Power loss η_loss: SNR = 2√2·√(η_q·n̄_r).
    #[default]
    Supplementary,
    /// Amplitude loss η_loss: SNR = 2√2·η_loss·√n̄_r/√(1 + N_t).
    Methods,
}

impl std::str::FromStr for Convention {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "supplementary" => Ok(Convention::Supplementary),
            "methods" => Ok(Convention::Methods),
            other => Err(invalid(
                "convention",
                format!("expected `supplementary` or `methods`, got `{other}`"),
            )),
        }
    }
}

/// SNR predicted by the efficiency budget for readout strength `n_r`.
pub fn snr_from_budget(n_r: f64, budget: &EfficiencyBudget, convention: Convention) -> Result<f64> {
    ensure_non_negative("n_r", n_r)?;
    let root = 2.0 * SQRT_2;
    Ok(match convention {
        Convention::Supplementary => root * (budget.eta_q * n_r).sqrt(),
        Convention::Methods => root * budget.eta_loss * n_r.sqrt() / (1.0 + budget.n_t).sqrt(),
    })
}

/// F = F_o·erf(√(2η_q·n̄_r)).
pub fn fidelity_formula(eta_q: f64, n_r: f64, f_o: f64) -> Result<f64> {
    ensure_non_negative("eta_q", eta_q)?;
    ensure_non_negative("n_r", n_r)?;
    check_unit("f_o", f_o)?;
    Ok(f_o * erf((2.0 * eta_q * n_r).sqrt()))
}

/// Optimal-threshold fidelity of two equal-width Gaussians separated by
/// `snr` standard deviations, scaled by the saturation value `f_o`.
pub fn fidelity_from_snr(snr: f64, f_o: f64) -> Result<f64> {
    ensure_non_negative("snr", snr)?;
    check_unit("f_o", f_o)?;
    Ok(f_o * erf(snr / (2.0 * SQRT_2)))
}

/// Residual coherence ρ_ge/ρ_ge(0) = e^{−2n̄_r}.
pub fn measurement_dephasing(n_r: f64) -> Result<f64> {
    ensure_non_negative("n_r", n_r)?;
    Ok((-2.0 * n_r).exp())
}

fn check_unit(name: &'static str, x: f64) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(invalid(name, format!("must lie in [0, 1], got {x}")))
    }
}
