//! Python bindings for the readout model: configuration, budgets, sweeps,
//! single-shot histograms and efficiency calibration.

use optoreadout::config::RunConfig;
use optoreadout::montecarlo::{self, mixture_fidelity, run_histograms};
use optoreadout::noise::{sample_noise, NoiseParams};
use optoreadout::params::{self, EfficiencyBudget};
use optoreadout::readout::{self, calibrate_quantum_efficiency, voltage_grid, QubitState};
use optoreadout::Error;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::InvalidParameter { .. } => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// Seven-factor efficiency budget with the derived noise numbers.
#[pyclass(name = "Budget", frozen, get_all)]
struct PyBudget {
    gamma_e_hz: f64,
    gamma_o_hz: f64,
    gamma_t_hz: f64,
    eta_bw: f64,
    eta_t: f64,
    eta_g: f64,
    eta_mic: f64,
    eta_opt: f64,
    eta_cav: f64,
    eta_noise: f64,
    eta_loss: f64,
    eta_q: f64,
    n_t: f64,
    n_det: f64,
    n_cqed: f64,
}

impl PyBudget {
    fn new(op: &params::OperatingPoint, b: &EfficiencyBudget) -> Self {
        Self {
            gamma_e_hz: op.gamma_e,
            gamma_o_hz: op.gamma_o,
            gamma_t_hz: op.gamma_t,
            eta_bw: b.eta_bw,
            eta_t: b.eta_t,
            eta_g: b.eta_g,
            eta_mic: b.eta_mic,
            eta_opt: b.eta_opt,
            eta_cav: b.eta_cav,
            eta_noise: b.eta_noise,
            eta_loss: b.eta_loss,
            eta_q: b.eta_q,
            n_t: b.n_t,
            n_det: b.n_det,
            n_cqed: b.n_cqed,
        }
    }
}

#[pymethods]
impl PyBudget {
    fn __repr__(&self) -> String {
        format!(
            "Budget(gamma_e_hz={}, gamma_o_hz={}, eta_q={:.4e}, n_cqed={:.1})",
            self.gamma_e_hz, self.gamma_o_hz, self.eta_q, self.n_cqed
        )
    }
}

/// Threshold-assigned single-shot histograms for both prepared states.
#[pyclass(name = "Histogram", frozen, get_all)]
struct PyHistogram {
    edges: Vec<f64>,
    counts_g: Vec<u64>,
    counts_e: Vec<u64>,
    v_thresh: f64,
    excited_above: bool,
    p_e_given_g: f64,
    p_g_given_e: f64,
    f_opt: f64,
    f_opt_se: f64,
    f_opt_mixture: f64,
    mu_g: f64,
    mu_e: f64,
    sigma: f64,
    snr: f64,
    voltages_g: Vec<f64>,
    voltages_e: Vec<f64>,
}

#[pymethods]
impl PyHistogram {
    fn __repr__(&self) -> String {
        format!(
            "Histogram(bins={}, v_thresh={:.4e}, f_opt={:.4}, snr={:.4})",
            self.counts_g.len(),
            self.v_thresh,
            self.f_opt,
            self.snr
        )
    }
}

/// Result of the SNR-versus-dephasing efficiency calibration.
#[pyclass(name = "Calibration", frozen, get_all)]
struct PyCalibration {
    a: f64,
    sigma_v: f64,
    eta_q: f64,
    eta_q_model: f64,
    snr_r_squared: f64,
    dephasing_r_squared: f64,
    voltages: Vec<f64>,
    n_r: Vec<f64>,
    snr: Vec<f64>,
    ln_rho_ge: Vec<f64>,
}

/// Run configuration (TOML with unit-suffixed keys).
#[pyclass(name = "Config", frozen)]
struct PyConfig(RunConfig);

#[pymethods]
impl PyConfig {
    /// The bundled device configuration.
    #[staticmethod]
    fn default() -> Self {
        Self(RunConfig::table_one())
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        RunConfig::from_toml_str(text).map(Self).map_err(py_err)
    }

    fn to_toml(&self) -> String {
        self.0.to_toml_string()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.0.run.seed
    }

    /// Dispersive shift in use (Hz).
    #[getter]
    fn chi_hz(&self) -> PyResult<f64> {
        Ok(self.0.cqed_params().map_err(py_err)?.chi)
    }

    /// Closed-form budget; the configured operating point unless overridden.
    #[pyo3(signature = (gamma_e_hz=None, gamma_o_hz=None))]
    fn budget(&self, gamma_e_hz: Option<f64>, gamma_o_hz: Option<f64>) -> PyResult<PyBudget> {
        let c = &self.0;
        let op = c
            .operating_point_at(
                gamma_e_hz.unwrap_or(c.operating_point.gamma_e_hz),
                gamma_o_hz.unwrap_or(c.operating_point.gamma_o_hz),
            )
            .map_err(py_err)?;
        let b = c.budget_at(&op).map_err(py_err)?;
        Ok(PyBudget::new(&op, &b))
    }

    /// Budgets over the configured Γ_e × Γ_o grid, Γ_o-major.
    fn sweep(&self) -> PyResult<Vec<PyBudget>> {
        self.0
            .sweep_grid()
            .into_iter()
            .map(|(ge, go)| self.budget(Some(ge), Some(go)))
            .collect()
    }

    /// Single-shot histograms at the Monte Carlo operating point.
    #[pyo3(signature = (seed=None, shots_per_state=None))]
    fn shots(&self, py: Python<'_>, seed: Option<u64>, shots_per_state: Option<usize>) -> PyResult<PyHistogram> {
        let c = &self.0;
        let seed = seed.unwrap_or(c.run.seed);
        let n = shots_per_state.unwrap_or(c.montecarlo.shots_per_state);
        py.detach(|| {
            let (_, ctx) = c.shot_context()?;
            let run = run_histograms(&ctx, n, seed, c.binning())?;
            let (mu_g, mu_e, sigma) = (ctx.mean(QubitState::Ground), ctx.mean(QubitState::Excited), ctx.sigma());
            let f_mix = if sigma > 0.0 {
                mixture_fidelity(mu_g, mu_e, sigma, &ctx.prep)?.f_opt
            } else {
                f64::NAN
            };
            let p = run.pair;
            Ok(PyHistogram {
                f_opt_se: p.f_opt_std_error(),
                edges: p.edges,
                counts_g: p.counts_g,
                counts_e: p.counts_e,
                v_thresh: p.v_thresh,
                excited_above: p.excited_above,
                p_e_given_g: p.p_e_given_g,
                p_g_given_e: p.p_g_given_e,
                f_opt: p.f_opt,
                f_opt_mixture: f_mix,
                mu_g,
                mu_e,
                sigma,
                snr: if sigma > 0.0 { (mu_e - mu_g).abs() / sigma } else { f64::INFINITY },
                voltages_g: run.shots_g.iter().map(|r| r.v).collect(),
                voltages_e: run.shots_e.iter().map(|r| r.v).collect(),
            })
        })
        .map_err(py_err)
    }

    /// Efficiency calibration on the configured voltage grid.
    #[pyo3(signature = (seed=None))]
    fn calibrate(&self, py: Python<'_>, seed: Option<u64>) -> PyResult<PyCalibration> {
        let c = &self.0;
        let seed = seed.unwrap_or(c.run.seed);
        py.detach(|| {
            let pipeline = c.calibration_pipeline()?;
            let k = &c.calibrate;
            let volts = match &k.voltages_v {
                Some(v) => v.clone(),
                None => voltage_grid(&pipeline, k.amplitude_per_volt, k.points, k.snr_min, k.snr_max)?,
            };
            let model = pipeline.evaluate()?.budget.eta_q;
            let r = calibrate_quantum_efficiency(&volts, &pipeline, &c.calibration_setup(seed))?;
            Ok(PyCalibration {
                a: r.a,
                sigma_v: r.sigma_v,
                eta_q: r.eta_q,
                eta_q_model: model,
                snr_r_squared: r.snr_r_squared,
                dephasing_r_squared: r.dephasing_r_squared,
                voltages: r.points.iter().map(|p| p.voltage).collect(),
                n_r: r.points.iter().map(|p| p.n_r).collect(),
                snr: r.points.iter().map(|p| p.snr).collect(),
                ln_rho_ge: r.points.iter().map(|p| p.ln_rho_ge).collect(),
            })
        })
        .map_err(py_err)
    }
}

/// χ = g²ν/(Δ(Δ − ν)), all in Hz.
#[pyfunction]
fn dispersive_shift(g_qc_hz: f64, delta_qc_hz: f64, nu_hz: f64) -> PyResult<f64> {
    params::dispersive_shift(g_qc_hz, delta_qc_hz, nu_hz).map_err(py_err)
}

#[pyfunction]
fn eta_bandwidth(gamma_t_hz: f64, t_p_s: f64) -> PyResult<f64> {
    params::eta_bandwidth(gamma_t_hz, t_p_s).map_err(py_err)
}

#[pyfunction]
fn eta_gain(kappa_e_hz: f64, kappa_o_hz: f64, omega_m_hz: f64) -> PyResult<f64> {
    params::eta_gain(kappa_e_hz, kappa_o_hz, omega_m_hz).map_err(py_err)
}

#[pyfunction]
fn effective_occupancy(gamma_phi_hz: f64, kappa_c_hz: f64, chi_hz: f64) -> PyResult<f64> {
    params::effective_occupancy(gamma_phi_hz, kappa_c_hz, chi_hz).map_err(py_err)
}

#[pyfunction]
fn pure_dephasing_from_lifetimes(t1_s: f64, t2_s: f64) -> PyResult<f64> {
    params::pure_dephasing_from_lifetimes(t1_s, t2_s).map_err(py_err)
}

#[pyfunction]
fn measurement_dephasing(n_r: f64) -> PyResult<f64> {
    readout::measurement_dephasing(n_r).map_err(py_err)
}

#[pyfunction]
fn fidelity_from_snr(snr: f64, f_o: f64) -> PyResult<f64> {
    readout::fidelity_from_snr(snr, f_o).map_err(py_err)
}

#[pyfunction]
fn excitation_probability(tau_s: f64, detuning_hz: f64, omega_r_hz: f64) -> f64 {
    montecarlo::excitation_probability(tau_s, detuning_hz, omega_r_hz)
}

/// Detector noise record: (I samples, Q samples).
#[pyfunction]
fn noise_trace(s_b: f64, s_t0: f64, gamma_t_hz: f64, dt_s: f64, count: usize, seed: u64) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let n = NoiseParams::new(s_b, s_t0, gamma_t_hz).map_err(py_err)?;
    let trace = sample_noise(&n, seed, dt_s, count).map_err(py_err)?;
    Ok(trace.samples.into_iter().unzip())
}

#[pymodule]
fn optoreadout_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyBudget>()?;
    m.add_class::<PyHistogram>()?;
    m.add_class::<PyCalibration>()?;
    m.add_function(wrap_pyfunction!(dispersive_shift, m)?)?;
    m.add_function(wrap_pyfunction!(eta_bandwidth, m)?)?;
    m.add_function(wrap_pyfunction!(eta_gain, m)?)?;
    m.add_function(wrap_pyfunction!(effective_occupancy, m)?)?;
    m.add_function(wrap_pyfunction!(pure_dephasing_from_lifetimes, m)?)?;
    m.add_function(wrap_pyfunction!(measurement_dephasing, m)?)?;
    m.add_function(wrap_pyfunction!(fidelity_from_snr, m)?)?;
    m.add_function(wrap_pyfunction!(excitation_probability, m)?)?;
    m.add_function(wrap_pyfunction!(noise_trace, m)?)?;
    Ok(())
}
