//! Quantum-efficiency calibration from the SNR and the measurement-induced
//! dephasing at a common set of drive voltages.
//!
//! With SNR = a·V and ρ_ge = ρ_ge(0)·e^{−V²/2σ²}, the efficiency is
//! η_q = σ²a²/2. The drive voltage maps to the readout amplitude through a
//! fixed conversion √n̄_r = c·V, which drops out of η_q.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::pipeline::Pipeline;
use crate::error::{ensure_positive, invalid, Error, Result};
use crate::montecarlo::{estimate_snr, ShotContext};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CalibrationMode {
    /// SNR from the integrated-voltage statistics.
    Analytic,
    /// SNR estimated from simulated single shots.
    MonteCarlo { shots_per_state: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSetup {
    /// c in √n̄_r = c·V (photons^½ per volt).
    pub amplitude_per_volt: f64,
    pub mode: CalibrationMode,
    /// Smallest accepted R² of either fit.
    pub min_r_squared: f64,
    /// Coherence at zero drive.
    pub rho0: f64,
}

impl CalibrationSetup {
    pub fn analytic(amplitude_per_volt: f64) -> Self {
        Self {
            amplitude_per_volt,
            mode: CalibrationMode::Analytic,
            min_r_squared: 0.999,
            rho0: 1.0,
        }
    }

    pub fn monte_carlo(amplitude_per_volt: f64, shots_per_state: usize, seed: u64) -> Self {
        Self {
            amplitude_per_volt,
            mode: CalibrationMode::MonteCarlo { shots_per_state, seed },
            min_r_squared: 0.99,
            rho0: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub voltage: f64,
    pub n_r: f64,
    pub snr: f64,
    /// ln ρ_ge, kept in log form so strong readouts do not underflow.
    pub ln_rho_ge: f64,
}

impl CalibrationPoint {
    pub fn rho_ge(&self) -> f64 {
        self.ln_rho_ge.exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    /// SNR slope (1/V).
    pub a: f64,
    /// Gaussian dephasing width (V).
    pub sigma_v: f64,
    pub eta_q: f64,
    pub snr_r_squared: f64,
    pub dephasing_r_squared: f64,
    pub points: Vec<CalibrationPoint>,
}

pub const MIN_POINTS: usize = 5;

/// Runs the pipeline at every voltage and fits the calibration.
pub fn calibrate_quantum_efficiency(
    voltages: &[f64],
    pipeline: &Pipeline,
    setup: &CalibrationSetup,
) -> Result<CalibrationResult> {
    ensure_positive("amplitude_per_volt", setup.amplitude_per_volt)?;
    if !(setup.rho0 > 0.0 && setup.rho0 <= 1.0) {
        return Err(invalid("rho0", "must lie in (0, 1]"));
    }
    check_voltages(voltages)?;
    let points = voltages
        .par_iter()
        .enumerate()
        .map(|(k, &v)| {
            let ev = pipeline.with_amplitude(setup.amplitude_per_volt * v).evaluate()?;
            let snr = match setup.mode {
                CalibrationMode::Analytic => ev.stats.snr,
                CalibrationMode::MonteCarlo { shots_per_state, seed } => {
                    let ctx = ShotContext::from_evaluation(&ev, Default::default())?;
                    estimate_snr(&ctx, shots_per_state, seed.wrapping_add(k as u64))?
                }
            };
            Ok(CalibrationPoint {
                voltage: v,
                n_r: ev.trajectory.n_r,
                snr,
                ln_rho_ge: setup.rho0.ln() - 2.0 * ev.trajectory.n_r,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    fit_calibration(&points, setup.min_r_squared)
}

fn check_voltages(voltages: &[f64]) -> Result<()> {
    if voltages.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(invalid("voltages", "must be finite and positive"));
    }
    let mut sorted = voltages.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    if sorted.len() < MIN_POINTS {
        return Err(Error::InsufficientPoints {
            needed: MIN_POINTS,
            got: sorted.len(),
        });
    }
    Ok(())
}

/// Linear fit of SNR through the origin and Gaussian fit of ρ_ge.
pub fn fit_calibration(points: &[CalibrationPoint], min_r_squared: f64) -> Result<CalibrationResult> {
    let volts: Vec<f64> = points.iter().map(|p| p.voltage).collect();
    check_voltages(&volts)?;
    if points.iter().any(|p| !(p.ln_rho_ge <= 0.0) || !p.snr.is_finite()) {
        return Err(invalid("points", "need finite SNR and ln ρ_ge ≤ 0"));
    }

    let sxy: f64 = points.iter().map(|p| p.voltage * p.snr).sum();
    let sxx: f64 = points.iter().map(|p| p.voltage * p.voltage).sum();
    let a = sxy / sxx;
    let snr: Vec<f64> = points.iter().map(|p| p.snr).collect();
    let snr_resid: Vec<f64> = points.iter().map(|p| p.snr - a * p.voltage).collect();
    let snr_r2 = r_squared(&snr, &snr_resid);
    if !(snr_r2 >= min_r_squared) {
        return Err(Error::FitQuality {
            what: "SNR linear in drive voltage",
            r_squared: snr_r2,
            residuals: snr_resid,
        });
    }

    let x: Vec<f64> = volts.iter().map(|v| v * v).collect();
    let y: Vec<f64> = points.iter().map(|p| p.ln_rho_ge).collect();
    let (slope, intercept) = ordinary_least_squares(&x, &y);
    let rho_resid: Vec<f64> = x.iter().zip(&y).map(|(x, y)| y - intercept - slope * x).collect();
    let rho_r2 = r_squared(&y, &rho_resid);
    if !(slope < 0.0) || !(rho_r2 >= min_r_squared) {
        return Err(Error::FitQuality {
            what: "Gaussian dephasing in drive voltage",
            r_squared: rho_r2,
            residuals: rho_resid,
        });
    }
    let sigma2 = -1.0 / (2.0 * slope);
    Ok(CalibrationResult {
        a,
        sigma_v: sigma2.sqrt(),
        eta_q: 0.5 * sigma2 * a * a,
        snr_r_squared: snr_r2,
        dephasing_r_squared: rho_r2,
        points: points.to_vec(),
    })
}

fn ordinary_least_squares(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = x.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

fn r_squared(y: &[f64], resid: &[f64]) -> f64 {
    let n = y.len() as f64;
    let my = y.iter().sum::<f64>() / n;
    let ss_tot: f64 = y.iter().map(|y| (y - my) * (y - my)).sum();
    let ss_res: f64 = resid.iter().map(|r| r * r).sum();
    if ss_tot == 0.0 {
        return if ss_res == 0.0 { 1.0 } else { 0.0 };
    }
    1.0 - ss_res / ss_tot
}

/// `points` voltages evenly spanning SNR ∈ [snr_lo, snr_hi].
pub fn voltage_grid(
    pipeline: &Pipeline,
    amplitude_per_volt: f64,
    points: usize,
    snr_lo: f64,
    snr_hi: f64,
) -> Result<Vec<f64>> {
    ensure_positive("amplitude_per_volt", amplitude_per_volt)?;
    ensure_positive("snr_lo", snr_lo)?;
    if points < MIN_POINTS {
        return Err(Error::InsufficientPoints {
            needed: MIN_POINTS,
            got: points,
        });
    }
    if !(snr_hi > snr_lo) {
        return Err(invalid("snr_hi", "must exceed snr_lo"));
    }
    let per_volt = pipeline.with_amplitude(amplitude_per_volt).evaluate()?.stats.snr;
    let (lo, hi) = (snr_lo / per_volt, snr_hi / per_volt);
    Ok((0..points)
        .map(|k| lo + (hi - lo) * k as f64 / (points - 1) as f64)
        .collect())
}
