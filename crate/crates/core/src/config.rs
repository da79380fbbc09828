//! Run configuration: a TOML file with one section per parameter group.
//!
//! Every dimensioned key carries its unit as a suffix (`_hz`, `_s`, `_v`).
//! Unknown keys are rejected, and a key given without its suffix produces a
//! hint naming the expected spelling and unit.

use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::montecarlo::{Binning, PreparationError, ShotContext};
use crate::params::{
    dispersive_shift, efficiency_budget, AddedNoiseModel, CircuitQedParams, EfficiencyBudget, OperatingPoint,
    TransducerParams,
};
use crate::readout::calibration::{CalibrationSetup, MIN_POINTS};
use crate::readout::{Convention, Evaluation, NoiseLevel, Pipeline, PulseShape, ReadoutPulse};

/// Bundled default configuration with the measured device constants.
pub const TABLE_ONE_TOML: &str = include_str!("../config/table_one.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub transducer: TransducerSection,
    pub cqed: CqedSection,
    pub operating_point: OperatingPointSection,
    pub budget: BudgetSection,
    #[serde(default)]
    pub noise: NoiseSection,
    pub pulse: PulseSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub montecarlo: MonteCarloSection,
    #[serde(default)]
    pub calibrate: CalibrateSection,
    #[serde(default)]
    pub rabi: Option<RabiSection>,
    #[serde(default)]
    pub run: RunSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransducerSection {
    pub omega_m_hz: f64,
    pub gamma_m_hz: f64,
    pub g_o_hz: f64,
    pub g_e_hz: f64,
    pub kappa_o_hz: f64,
    pub kappa_o_ext_hz: f64,
    pub kappa_e_low_hz: f64,
    pub kappa_e_high_hz: f64,
    pub kappa_e_ext_hz: f64,
    pub epsilon: f64,
    pub gamma_e_max_hz: f64,
    /// (Γ_e, κ_e) pairs replacing the two-point interpolation.
    #[serde(default)]
    pub kappa_e_table_hz: Option<Vec<[f64; 2]>>,
    /// Informational; not used by the model.
    #[serde(default)]
    pub omega_o_hz: Option<f64>,
    /// Informational; not used by the model.
    #[serde(default)]
    pub omega_e_hz: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CqedSection {
    pub omega_q_hz: f64,
    pub omega_c_hz: f64,
    pub g_qc_hz: f64,
    pub nu_hz: f64,
    /// Computed from g_qc, Δ_qc and ν when absent.
    #[serde(default)]
    pub chi_hz: Option<f64>,
    pub kappa_c_hz: f64,
    /// Defaults to κ_c − κ_c,w − κ_c,int.
    #[serde(default)]
    pub kappa_c_ext_hz: Option<f64>,
    pub kappa_c_w_hz: f64,
    pub kappa_c_int_hz: f64,
    pub t1_s: f64,
    pub t2_s: f64,
    pub p_residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatingPointSection {
    pub gamma_e_hz: f64,
    pub gamma_o_hz: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AddedNoiseKind {
    Constant,
    #[default]
    LinearInGammaE,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetSection {
    pub eta_mic: f64,
    pub eta_opt: f64,
    #[serde(default)]
    pub added_noise: AddedNoiseKind,
    /// N_t everywhere (`constant`) or at Γ_e,max (`linear_in_gamma_e`).
    pub n_t: f64,
    #[serde(default)]
    pub convention: Convention,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    #[serde(default)]
    pub s_b: f64,
    /// Explicit S_t(0); when absent the filter sees the budget's N_t.
    #[serde(default)]
    pub s_t0: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseSection {
    pub sqrt_n_r: f64,
    pub t_p_s: f64,
    #[serde(default = "default_t_r")]
    pub t_r_s: f64,
    #[serde(default)]
    pub t_int_s: Option<f64>,
    /// Relative envelope samples over [0, t_p]; square when absent.
    #[serde(default)]
    pub envelope: Option<Vec<f64>>,
}

fn default_t_r() -> f64 {
    1e-3
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    Linear,
    #[default]
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub gamma_e_min_hz: f64,
    pub gamma_e_max_hz: f64,
    pub gamma_e_points: usize,
    pub spacing: Spacing,
    pub gamma_o_hz: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            gamma_e_min_hz: 20.0,
            gamma_e_max_hz: 1100.0,
            gamma_e_points: 25,
            spacing: Spacing::Log,
            gamma_o_hz: vec![1.0e3, 2.4e3, 3.5e3, 5.0e3],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MonteCarloSection {
    pub gamma_e_hz: Option<f64>,
    pub gamma_o_hz: Option<f64>,
    pub shots_per_state: usize,
    /// Fixed bin count; Freedman–Diaconis when absent.
    pub bins: Option<usize>,
    /// Defaults to `cqed.p_residual`.
    pub p_excited_after_g: Option<f64>,
    /// Defaults to `cqed.p_residual`.
    pub p_ground_after_e: Option<f64>,
    pub t1_decay: bool,
    pub noise_scale: f64,
    pub filter_intervals: usize,
    pub include_counter: bool,
}

impl Default for MonteCarloSection {
    fn default() -> Self {
        Self {
            gamma_e_hz: None,
            gamma_o_hz: None,
            shots_per_state: 10_000,
            bins: None,
            p_excited_after_g: None,
            p_ground_after_e: None,
            t1_decay: false,
            noise_scale: 1.0,
            filter_intervals: 4096,
            include_counter: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationKind {
    #[default]
    Analytic,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrateSection {
    pub gamma_e_hz: Option<f64>,
    pub gamma_o_hz: Option<f64>,
    /// Drive amplitude per volt (photons^½/V).
    pub amplitude_per_volt: f64,
    /// Explicit voltage grid; otherwise `points` voltages spanning
    /// SNR ∈ [`snr_min`, `snr_max`].
    pub voltages_v: Option<Vec<f64>>,
    pub points: usize,
    pub snr_min: f64,
    pub snr_max: f64,
    pub mode: CalibrationKind,
    pub shots_per_state: usize,
}

impl Default for CalibrateSection {
    fn default() -> Self {
        Self {
            gamma_e_hz: None,
            gamma_o_hz: None,
            amplitude_per_volt: 40.0,
            voltages_v: None,
            points: 8,
            snr_min: 0.1,
            snr_max: 2.0,
            mode: CalibrationKind::Analytic,
            shots_per_state: 2000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RabiSection {
    pub omega_r_hz: f64,
    pub tau_max_s: f64,
    pub tau_points: usize,
    pub detuning_max_hz: f64,
    pub detuning_points: usize,
    pub shots_per_point: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Csv,
    Jsonl,
}

impl FromStr for OutputFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "jsonl" => Ok(Self::Jsonl),
            other => Err(Error::Config(format!("unknown output format `{other}` (csv | jsonl)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub format: OutputFormat,
    pub workers: Option<usize>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("out"),
            format: OutputFormat::Csv,
            workers: None,
        }
    }
}

/// (model parameter, config key, unit) used for diagnostics.
const KEYS: &[(&str, &str, &str)] = &[
    ("omega_m", "transducer.omega_m_hz", "Hz"),
    ("gamma_m", "transducer.gamma_m_hz", "Hz"),
    ("g_o", "transducer.g_o_hz", "Hz"),
    ("g_e", "transducer.g_e_hz", "Hz"),
    ("kappa_o", "transducer.kappa_o_hz", "Hz"),
    ("kappa_o_ext", "transducer.kappa_o_ext_hz", "Hz"),
    ("kappa_e_low", "transducer.kappa_e_low_hz", "Hz"),
    ("kappa_e_high", "transducer.kappa_e_high_hz", "Hz"),
    ("kappa_e_ext", "transducer.kappa_e_ext_hz", "Hz"),
    ("kappa_e_table", "transducer.kappa_e_table_hz", "Hz"),
    ("epsilon", "transducer.epsilon", "dimensionless"),
    ("gamma_e_max", "transducer.gamma_e_max_hz", "Hz"),
    ("omega_o", "transducer.omega_o_hz", "Hz"),
    ("omega_e", "transducer.omega_e_hz", "Hz"),
    ("omega_q", "cqed.omega_q_hz", "Hz"),
    ("omega_c", "cqed.omega_c_hz", "Hz"),
    ("g_qc", "cqed.g_qc_hz", "Hz"),
    ("nu", "cqed.nu_hz", "Hz"),
    ("chi", "cqed.chi_hz", "Hz"),
    ("kappa_c", "cqed.kappa_c_hz", "Hz"),
    ("kappa_c_ext", "cqed.kappa_c_ext_hz", "Hz"),
    ("kappa_c_w", "cqed.kappa_c_w_hz", "Hz"),
    ("kappa_c_int", "cqed.kappa_c_int_hz", "Hz"),
    ("t1", "cqed.t1_s", "s"),
    ("t2", "cqed.t2_s", "s"),
    ("p_residual", "cqed.p_residual", "probability"),
    ("gamma_e", "operating_point.gamma_e_hz", "Hz"),
    ("gamma_o", "operating_point.gamma_o_hz", "Hz"),
    ("eta_mic", "budget.eta_mic", "dimensionless"),
    ("eta_opt", "budget.eta_opt", "dimensionless"),
    ("n_t", "budget.n_t", "quanta"),
    ("s_b", "noise.s_b", "quanta"),
    ("s_t0", "noise.s_t0", "quanta"),
    ("amplitude", "pulse.sqrt_n_r", "photons^½"),
    ("t_p", "pulse.t_p_s", "s"),
    ("t_r", "pulse.t_r_s", "s"),
    ("t_int", "pulse.t_int_s", "s"),
    ("envelope", "pulse.envelope", "relative"),
    ("gamma_e_min", "sweep.gamma_e_min_hz", "Hz"),
    ("tau_max", "rabi.tau_max_s", "s"),
    ("omega_r", "rabi.omega_r_hz", "Hz"),
    ("detuning_max", "rabi.detuning_max_hz", "Hz"),
    ("amplitude_per_volt", "calibrate.amplitude_per_volt", "photons^½/V"),
    ("voltages", "calibrate.voltages_v", "V"),
];

fn describe_key(name: &str) -> String {
    match KEYS.iter().find(|(p, _, _)| *p == name) {
        Some((_, key, unit)) => format!("`{key}` ({unit})"),
        None => format!("`{name}`"),
    }
}

/// Rewrites a model error so it names the offending config key and unit.
fn config_error(err: Error) -> Error {
    match err {
        Error::InvalidParameter { name, reason } => Error::Config(format!("{}: {reason}", describe_key(name))),
        Error::Config(_) => err,
        other => Error::Config(other.to_string()),
    }
}

/// Adds a unit hint to serde's "unknown field" messages when the key is a
/// known key with its unit suffix stripped.
fn parse_error(err: toml::de::Error) -> Error {
    let msg = err.to_string();
    let hint = msg
        .split("unknown field `")
        .nth(1)
        .and_then(|rest| rest.split('`').next())
        .and_then(|field| {
            KEYS.iter()
                .map(|(_, key, unit)| (key.rsplit('.').next().unwrap_or(key), *unit))
                .find(|(k, _)| k.len() > field.len() && k.starts_with(field) && k.as_bytes()[field.len()] == b'_')
                .map(|(k, unit)| format!("\nhint: keys carry unit suffixes; did you mean `{k}` ({unit})?"))
        })
        .unwrap_or_default();
    Error::Config(format!("{}{hint}", msg.trim_end()))
}

fn ensure(cond: bool, key: &str, reason: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Config(format!("`{key}`: {reason}")))
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(parse_error)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn table_one() -> Self {
        Self::from_toml_str(TABLE_ONE_TOML).expect("bundled configuration is valid")
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Checks every section by building the objects each subcommand needs.
    pub fn validate(&self) -> Result<()> {
        self.transducer_params()?;
        self.cqed_params()?;
        let op = self.operating_point()?;
        self.budget_at(&op)?;
        self.pipeline_at(&op, self.pulse.sqrt_n_r)?;
        let s = &self.sweep;
        ensure(s.gamma_e_points >= 1, "sweep.gamma_e_points", "need at least one point")?;
        ensure(!s.gamma_o_hz.is_empty(), "sweep.gamma_o_hz", "need at least one value")?;
        ensure(
            s.gamma_e_min_hz >= 0.0 && s.gamma_e_max_hz >= s.gamma_e_min_hz,
            "sweep.gamma_e_min_hz",
            "need 0 ≤ gamma_e_min_hz ≤ gamma_e_max_hz (Hz)",
        )?;
        ensure(
            s.spacing == Spacing::Linear || s.gamma_e_min_hz > 0.0 || s.gamma_e_points == 1,
            "sweep.gamma_e_min_hz",
            "log spacing needs a positive start (Hz)",
        )?;
        ensure(
            s.gamma_o_hz.iter().all(|g| g.is_finite() && *g >= 0.0),
            "sweep.gamma_o_hz",
            "values must be finite and ≥ 0 (Hz)",
        )?;
        let mc = &self.montecarlo;
        ensure(mc.shots_per_state >= 1000, "montecarlo.shots_per_state", "need at least 1000")?;
        ensure(mc.bins != Some(0), "montecarlo.bins", "must be at least 1")?;
        ensure(
            mc.noise_scale.is_finite() && mc.noise_scale >= 0.0,
            "montecarlo.noise_scale",
            "must be finite and ≥ 0",
        )?;
        self.preparation_error().map_err(config_error)?;
        self.shot_pipeline()?;
        let c = &self.calibrate;
        ensure(
            c.amplitude_per_volt.is_finite() && c.amplitude_per_volt > 0.0,
            "calibrate.amplitude_per_volt",
            "must be > 0 (photons^½/V)",
        )?;
        ensure(
            c.snr_min > 0.0 && c.snr_max > c.snr_min,
            "calibrate.snr_min",
            "need 0 < snr_min < snr_max",
        )?;
        if c.mode == CalibrationKind::MonteCarlo {
            ensure(c.shots_per_state >= 2, "calibrate.shots_per_state", "need at least 2")?;
        }
        if let Some(v) = &c.voltages_v {
            ensure(
                v.iter().all(|x| x.is_finite() && *x > 0.0),
                "calibrate.voltages_v",
                "voltages must be finite and > 0 (V)",
            )?;
            let mut distinct = v.clone();
            distinct.sort_by(f64::total_cmp);
            distinct.dedup();
            ensure(
                distinct.len() >= MIN_POINTS,
                "calibrate.voltages_v",
                &format!("need at least {MIN_POINTS} distinct voltages, got {}", distinct.len()),
            )?;
        } else {
            ensure(
                c.points >= MIN_POINTS,
                "calibrate.points",
                &format!("need at least {MIN_POINTS}"),
            )?;
        }
        self.calibration_pipeline()?;
        if let Some(r) = &self.rabi {
            ensure(r.omega_r_hz > 0.0, "rabi.omega_r_hz", "must be > 0 (Hz)")?;
            ensure(r.tau_max_s > 0.0, "rabi.tau_max_s", "must be > 0 (s)")?;
            ensure(r.detuning_max_hz >= 0.0, "rabi.detuning_max_hz", "must be ≥ 0 (Hz)")?;
            ensure(r.tau_points >= 1, "rabi.tau_points", "need at least one point")?;
            ensure(r.detuning_points >= 1, "rabi.detuning_points", "need at least one point")?;
            ensure(r.shots_per_point >= 1, "rabi.shots_per_point", "need at least one shot")?;
        }
        ensure(self.run.workers != Some(0), "run.workers", "must be at least 1")?;
        Ok(())
    }

    pub fn transducer_params(&self) -> Result<TransducerParams> {
        let t = &self.transducer;
        let p = TransducerParams {
            omega_m: t.omega_m_hz,
            gamma_m: t.gamma_m_hz,
            g_o: t.g_o_hz,
            g_e: t.g_e_hz,
            kappa_o: t.kappa_o_hz,
            kappa_o_ext: t.kappa_o_ext_hz,
            kappa_e_low: t.kappa_e_low_hz,
            kappa_e_high: t.kappa_e_high_hz,
            kappa_e_ext: t.kappa_e_ext_hz,
            epsilon: t.epsilon,
            gamma_e_max: t.gamma_e_max_hz,
            kappa_e_table: t
                .kappa_e_table_hz
                .as_ref()
                .map(|rows| rows.iter().map(|r| (r[0], r[1])).collect()),
        };
        p.validate().map_err(config_error)?;
        Ok(p)
    }

    pub fn cqed_params(&self) -> Result<CircuitQedParams> {
        let c = &self.cqed;
        let chi = match c.chi_hz {
            Some(chi) => chi,
            None => dispersive_shift(c.g_qc_hz, c.omega_q_hz - c.omega_c_hz, c.nu_hz).map_err(config_error)?,
        };
        let q = CircuitQedParams {
            omega_q: c.omega_q_hz,
            omega_c: c.omega_c_hz,
            g_qc: c.g_qc_hz,
            nu: c.nu_hz,
            chi,
            kappa_c: c.kappa_c_hz,
            kappa_c_ext: c
                .kappa_c_ext_hz
                .unwrap_or(c.kappa_c_hz - c.kappa_c_w_hz - c.kappa_c_int_hz),
            kappa_c_w: c.kappa_c_w_hz,
            kappa_c_int: c.kappa_c_int_hz,
            t1: c.t1_s,
            t2: c.t2_s,
            p_residual: c.p_residual,
        };
        q.validate().map_err(config_error)?;
        Ok(q)
    }

    pub fn operating_point(&self) -> Result<OperatingPoint> {
        self.operating_point_at(self.operating_point.gamma_e_hz, self.operating_point.gamma_o_hz)
    }

    pub fn operating_point_at(&self, gamma_e: f64, gamma_o: f64) -> Result<OperatingPoint> {
        OperatingPoint::new(&self.transducer_params()?, gamma_e, gamma_o).map_err(config_error)
    }

    pub fn added_noise_model(&self) -> AddedNoiseModel {
        match self.budget.added_noise {
            AddedNoiseKind::Constant => AddedNoiseModel::Constant { n_t: self.budget.n_t },
            AddedNoiseKind::LinearInGammaE => AddedNoiseModel::LinearInGammaE {
                n_t_at_max: self.budget.n_t,
                gamma_e_max: self.transducer.gamma_e_max_hz,
            },
        }
    }

    /// Closed-form budget at `op`, with N_t from the added-noise model.
    pub fn budget_at(&self, op: &OperatingPoint) -> Result<EfficiencyBudget> {
        efficiency_budget(
            &self.transducer_params()?,
            &self.cqed_params()?,
            op,
            self.budget.eta_mic,
            self.budget.eta_opt,
            self.added_noise_model().n_t(op),
            self.pulse.t_p_s,
        )
        .map_err(config_error)
    }

    /// (Γ_e, Γ_o) pairs of the sweep, Γ_o-major.
    pub fn sweep_grid(&self) -> Vec<(f64, f64)> {
        let s = &self.sweep;
        let n = s.gamma_e_points;
        let gamma_e: Vec<f64> = (0..n)
            .map(|k| {
                if n == 1 {
                    return s.gamma_e_min_hz;
                }
                let f = k as f64 / (n - 1) as f64;
                match s.spacing {
                    Spacing::Linear => s.gamma_e_min_hz + f * (s.gamma_e_max_hz - s.gamma_e_min_hz),
                    Spacing::Log => s.gamma_e_min_hz * (s.gamma_e_max_hz / s.gamma_e_min_hz).powf(f),
                }
            })
            .collect();
        s.gamma_o_hz
            .iter()
            .flat_map(|&go| gamma_e.iter().map(move |&ge| (ge, go)))
            .collect()
    }

    pub fn pulse(&self, amplitude: f64) -> ReadoutPulse {
        ReadoutPulse {
            amplitude,
            t_p: self.pulse.t_p_s,
            shape: match &self.pulse.envelope {
                Some(env) => PulseShape::Sampled { envelope: env.clone() },
                None => PulseShape::Square,
            },
            t_r: self.pulse.t_r_s,
        }
    }

    /// Time-domain readout chain at `op` with drive amplitude √n̄_r.
    pub fn pipeline_at(&self, op: &OperatingPoint, amplitude: f64) -> Result<Pipeline> {
        let noise = match self.noise.s_t0 {
            Some(s_t0) => NoiseLevel::Explicit { s_b: self.noise.s_b, s_t0 },
            None => NoiseLevel::TargetNt {
                s_b: self.noise.s_b,
                n_t: self.added_noise_model().n_t(op),
            },
        };
        let mut pl = Pipeline::new(
            self.transducer_params()?,
            self.cqed_params()?,
            *op,
            self.pulse(amplitude),
            self.budget.eta_mic,
            self.budget.eta_opt,
            noise,
        )
        .map_err(config_error)?;
        pl.t_int = self.pulse.t_int_s;
        pl.include_counter = self.montecarlo.include_counter;
        pl.filter_intervals = self.montecarlo.filter_intervals;
        pl.validate().map_err(config_error)?;
        Ok(pl)
    }

    fn op_override(&self, gamma_e: Option<f64>, gamma_o: Option<f64>) -> Result<OperatingPoint> {
        self.operating_point_at(
            gamma_e.unwrap_or(self.operating_point.gamma_e_hz),
            gamma_o.unwrap_or(self.operating_point.gamma_o_hz),
        )
    }

    /// Pipeline for single-shot simulation.
    pub fn shot_pipeline(&self) -> Result<Pipeline> {
        let op = self.op_override(self.montecarlo.gamma_e_hz, self.montecarlo.gamma_o_hz)?;
        self.pipeline_at(&op, self.pulse.sqrt_n_r)
    }

    /// Pipeline for the efficiency calibration (its amplitude is replaced
    /// point by point).
    pub fn calibration_pipeline(&self) -> Result<Pipeline> {
        let op = self.op_override(self.calibrate.gamma_e_hz, self.calibrate.gamma_o_hz)?;
        self.pipeline_at(&op, self.pulse.sqrt_n_r)
    }

    pub fn preparation_error(&self) -> Result<PreparationError> {
        let p = self.cqed.p_residual;
        let prep = PreparationError {
            p_excited_after_g: self.montecarlo.p_excited_after_g.unwrap_or(p),
            p_ground_after_e: self.montecarlo.p_ground_after_e.unwrap_or(p),
        };
        prep.validate()?;
        Ok(prep)
    }

    /// Evaluated shot pipeline and the matching shot context.
    pub fn shot_context(&self) -> Result<(Evaluation, ShotContext)> {
        let ev = self.shot_pipeline()?.evaluate()?;
        let mut ctx = ShotContext::from_evaluation(&ev, self.preparation_error()?)?
            .with_noise_scale(self.montecarlo.noise_scale)?;
        if self.montecarlo.t1_decay {
            ctx = ctx.with_relaxation(self.cqed.t1_s)?;
        }
        Ok((ev, ctx))
    }

    pub fn binning(&self) -> Binning {
        match self.montecarlo.bins {
            Some(b) => Binning::Fixed(b),
            None => Binning::FreedmanDiaconis,
        }
    }

    pub fn calibration_setup(&self, seed: u64) -> CalibrationSetup {
        let c = &self.calibrate;
        match c.mode {
            CalibrationKind::Analytic => CalibrationSetup::analytic(c.amplitude_per_volt),
            CalibrationKind::MonteCarlo => CalibrationSetup::monte_carlo(c.amplitude_per_volt, c.shots_per_state, seed),
        }
    }

    /// Uniform τ grid from 0 and symmetric detuning grid.
    pub fn rabi_grids(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        let r = self.rabi.as_ref()?;
        let lin = |lo: f64, hi: f64, n: usize| -> Vec<f64> {
            if n == 1 {
                return vec![lo];
            }
            (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
        };
        let det = if r.detuning_points == 1 {
            vec![0.0]
        } else {
            lin(-r.detuning_max_hz, r.detuning_max_hz, r.detuning_points)
        };
        Some((lin(0.0, r.tau_max_s, r.tau_points), det))
    }
}
