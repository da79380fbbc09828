//! Physical parameters of the circuit QED system and the electro-optic
//! transducer, together with the closed-form quantities derived from them:
//! damping rates, dispersive shift, dephasing, and the efficiency budget.
//!
//! Every rate and frequency is stored as an ordinary frequency in Hz (the
//! value of X/2π). Formulas that need angular rates multiply by 2π
//! internally.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{ensure_non_negative, ensure_positive, invalid, Error, Result};

/// Transducer constants: mechanical mode, optical cavity, LC circuit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransducerParams {
    /// Mechanical frequency (Hz).
    pub omega_m: f64,
    /// Intrinsic mechanical energy loss rate (Hz).
    pub gamma_m: f64,
    /// Vacuum optomechanical coupling (Hz).
    pub g_o: f64,
    /// Vacuum electromechanical coupling (Hz).
    pub g_e: f64,
    /// Optical linewidth (Hz).
    pub kappa_o: f64,
    /// Optical external coupling (Hz).
    pub kappa_o_ext: f64,
    /// LC circuit linewidth with the microwave pump off (Hz).
    pub kappa_e_low: f64,
    /// LC circuit linewidth at the highest pump power (Hz).
    pub kappa_e_high: f64,
    /// LC circuit external coupling (Hz).
    pub kappa_e_ext: f64,
    /// Heterodyne mode-matching factor.
    pub epsilon: f64,
    /// Electromechanical damping at which the linewidth reaches `kappa_e_high` (Hz).
    pub gamma_e_max: f64,
    /// Optional (Γ_e, κ_e) table in Hz replacing the two-point interpolation.
    #[serde(default)]
    pub kappa_e_table: Option<Vec<(f64, f64)>>,
}

impl TransducerParams {
    /// Device constants of the measured transducer.
    pub fn table_one() -> Self {
        Self {
            omega_m: 1.45e6,
            gamma_m: 0.11,
            g_o: 60.0,
            g_e: 1.6,
            kappa_o: 2.68e6,
            kappa_o_ext: 2.12e6,
            kappa_e_low: 1.6e6,
            kappa_e_high: 2.7e6,
            kappa_e_ext: 1.42e6,
            epsilon: 0.80,
            gamma_e_max: 1.1e3,
            kappa_e_table: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure_positive("omega_m", self.omega_m)?;
        ensure_positive("gamma_m", self.gamma_m)?;
        ensure_positive("g_o", self.g_o)?;
        ensure_positive("g_e", self.g_e)?;
        ensure_positive("kappa_o", self.kappa_o)?;
        ensure_positive("kappa_o_ext", self.kappa_o_ext)?;
        ensure_positive("kappa_e_low", self.kappa_e_low)?;
        ensure_positive("kappa_e_high", self.kappa_e_high)?;
        ensure_positive("kappa_e_ext", self.kappa_e_ext)?;
        ensure_positive("gamma_e_max", self.gamma_e_max)?;
        if self.kappa_o_ext > self.kappa_o {
            return Err(invalid("kappa_o_ext", "must not exceed kappa_o"));
        }
        if self.kappa_e_ext > self.kappa_e_low {
            return Err(invalid("kappa_e_ext", "must not exceed kappa_e_low"));
        }
        if self.kappa_e_low > self.kappa_e_high {
            return Err(invalid("kappa_e_low", "must not exceed kappa_e_high"));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(invalid("epsilon", "must lie in [0, 1]"));
        }
        if let Some(table) = &self.kappa_e_table {
            if table.is_empty() {
                return Err(invalid("kappa_e_table", "must not be empty"));
            }
            for w in table.windows(2) {
                if w[1].0 <= w[0].0 {
                    return Err(invalid(
                        "kappa_e_table",
                        "damping rates must be strictly increasing",
                    ));
                }
            }
            for &(gamma_e, kappa_e) in table {
                ensure_non_negative("kappa_e_table", gamma_e)?;
                if kappa_e < self.kappa_e_ext {
                    return Err(invalid(
                        "kappa_e_table",
                        "linewidth below the external coupling",
                    ));
                }
            }
        }
        Ok(())
    }

    /// Optical internal loss κ_o − κ_o,ext (Hz).
    pub fn kappa_o_int(&self) -> f64 {
        self.kappa_o - self.kappa_o_ext
    }

    /// LC circuit linewidth at electromechanical damping `gamma_e` (Hz).
    ///
    /// Linear in Γ_e between the pump-off and maximum-pump endpoints and
    /// clamped outside, unless an explicit table is configured.
    pub fn kappa_e_at(&self, gamma_e: f64) -> f64 {
        match &self.kappa_e_table {
            Some(table) => interpolate_clamped(table, gamma_e),
            None => {
                let frac = (gamma_e / self.gamma_e_max).clamp(0.0, 1.0);
                self.kappa_e_low + (self.kappa_e_high - self.kappa_e_low) * frac
            }
        }
    }
}

fn interpolate_clamped(table: &[(f64, f64)], x: f64) -> f64 {
    let first = table[0];
    let last = table[table.len() - 1];
    if x <= first.0 {
        return first.1;
    }
    if x >= last.0 {
        return last.1;
    }
    let idx = table.partition_point(|&(tx, _)| tx <= x);
    let (x0, y0) = table[idx - 1];
    let (x1, y1) = table[idx];
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

/// Circuit QED system constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircuitQedParams {
    pub omega_q: f64,
    pub omega_c: f64,
    pub g_qc: f64,
    /// Transmon anharmonicity (Hz).
    pub nu: f64,
    /// Dispersive shift (Hz).
    pub chi: f64,
    pub kappa_c: f64,
    /// Output coupling towards the transducer (Hz).
    pub kappa_c_ext: f64,
    /// Weak-port coupling (Hz).
    pub kappa_c_w: f64,
    pub kappa_c_int: f64,
    /// Qubit energy relaxation time (s).
    pub t1: f64,
    /// Qubit Ramsey time (s).
    pub t2: f64,
    /// Thermal excited-state population before preparation.
    pub p_residual: f64,
}

impl CircuitQedParams {
    /// Measured circuit QED constants, with the weak-port and internal
    /// losses at their upper bounds.
    pub fn table_one() -> Self {
        let kappa_c = 380e3;
        let kappa_c_w = 5e3;
        let kappa_c_int = 10e3;
        Self {
            omega_q: 5.632e9,
            omega_c: 7.938e9,
            g_qc: 66.4e6,
            nu: 228e6,
            chi: 172e3,
            kappa_c,
            kappa_c_ext: kappa_c - kappa_c_w - kappa_c_int,
            kappa_c_w,
            kappa_c_int,
            t1: 17e-6,
            t2: 20e-6,
            p_residual: 0.15,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure_positive("omega_q", self.omega_q)?;
        ensure_positive("omega_c", self.omega_c)?;
        ensure_non_negative("g_qc", self.g_qc)?;
        ensure_positive("kappa_c", self.kappa_c)?;
        ensure_positive("kappa_c_ext", self.kappa_c_ext)?;
        ensure_non_negative("kappa_c_w", self.kappa_c_w)?;
        ensure_non_negative("kappa_c_int", self.kappa_c_int)?;
        ensure_positive("t1", self.t1)?;
        ensure_positive("t2", self.t2)?;
        if !self.chi.is_finite() {
            return Err(invalid("chi", "must be finite"));
        }
        let sum = self.kappa_c_ext + self.kappa_c_w + self.kappa_c_int;
        if (sum - self.kappa_c).abs() > 1e-9 * self.kappa_c {
            return Err(invalid(
                "kappa_c",
                format!("kappa_c_ext + kappa_c_w + kappa_c_int = {sum} Hz differs from kappa_c"),
            ));
        }
        if self.t2 > 2.0 * self.t1 {
            return Err(invalid("t2", "must not exceed 2·t1"));
        }
        if !(0.0..=0.5).contains(&self.p_residual) {
            return Err(invalid("p_residual", "must lie in [0, 0.5]"));
        }
        Ok(())
    }

    /// Qubit-cavity detuning ω_q − ω_c (Hz).
    pub fn delta_qc(&self) -> f64 {
        self.omega_q - self.omega_c
    }

    /// Pointer phase θ = arctan(2χ/κ_c) (rad).
    pub fn pointer_phase(&self) -> f64 {
        (2.0 * self.chi / self.kappa_c).atan()
    }
}

/// Pump-controlled damping rates and the quantities that follow from them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub gamma_e: f64,
    pub gamma_o: f64,
    /// Γ_e + Γ_o + γ_m (Hz).
    pub gamma_t: f64,
    /// Intracavity optical pump photons ā².
    pub n_pump_o: f64,
    /// Intracavity microwave pump photons b̄².
    pub n_pump_e: f64,
    /// LC linewidth at this pump power (Hz).
    pub kappa_e_effective: f64,
}

impl OperatingPoint {
    pub fn new(p: &TransducerParams, gamma_e: f64, gamma_o: f64) -> Result<Self> {
        ensure_non_negative("gamma_e", gamma_e)?;
        ensure_non_negative("gamma_o", gamma_o)?;
        let kappa_e_effective = p.kappa_e_at(gamma_e);
        Ok(Self {
            gamma_e,
            gamma_o,
            gamma_t: gamma_e + gamma_o + p.gamma_m,
            n_pump_o: pump_photons(p.g_o, gamma_o, p.kappa_o)?,
            n_pump_e: pump_photons(p.g_e, gamma_e, kappa_e_effective)?,
            kappa_e_effective,
        })
    }
}

/// Seven-factor efficiency budget and the derived noise numbers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyBudget {
    pub eta_bw: f64,
    pub eta_t: f64,
    pub eta_g: f64,
    pub eta_mic: f64,
    pub eta_opt: f64,
    pub eta_cav: f64,
    pub eta_noise: f64,
    pub eta_loss: f64,
    pub eta_q: f64,
    pub n_t: f64,
    pub n_det: f64,
    pub n_cqed: f64,
}

impl EfficiencyBudget {
    /// Assemble a budget from its independent factors.
    pub fn from_factors(
        eta_bw: f64,
        eta_t: f64,
        eta_g: f64,
        eta_mic: f64,
        eta_opt: f64,
        eta_cav: f64,
        n_t: f64,
    ) -> Self {
        let eta_loss = eta_bw * eta_t * eta_g * eta_mic * eta_opt * eta_cav;
        let eta_noise = 1.0 / (1.0 + n_t);
        Self {
            eta_bw,
            eta_t,
            eta_g,
            eta_mic,
            eta_opt,
            eta_cav,
            eta_noise,
            eta_loss,
            eta_q: eta_loss * eta_noise,
            n_t,
            n_det: 1.0 + n_t,
            n_cqed: n_t / eta_loss,
        }
    }

    /// Same budget with the bandwidth factor replaced.
    pub fn with_eta_bw(&self, eta_bw: f64) -> Self {
        Self::from_factors(
            eta_bw,
            self.eta_t,
            self.eta_g,
            self.eta_mic,
            self.eta_opt,
            self.eta_cav,
            self.n_t,
        )
    }
}

/// How the transducer-added noise N_t depends on the operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AddedNoiseModel {
    /// Same N_t everywhere.
    Constant { n_t: f64 },
    /// N_t grows linearly with the electromechanical damping, reaching
    /// `n_t_at_max` at `gamma_e_max` (pump-induced LC circuit noise).
    LinearInGammaE { n_t_at_max: f64, gamma_e_max: f64 },
}

impl AddedNoiseModel {
    pub fn n_t(&self, op: &OperatingPoint) -> f64 {
        match *self {
            AddedNoiseModel::Constant { n_t } => n_t,
            AddedNoiseModel::LinearInGammaE {
                n_t_at_max,
                gamma_e_max,
            } => n_t_at_max * op.gamma_e / gamma_e_max,
        }
    }
}

/// χ = g²ν / (Δ(Δ − ν)). All arguments and the result in Hz.
pub fn dispersive_shift(g_qc: f64, delta_qc: f64, nu: f64) -> Result<f64> {
    let denom = delta_qc * (delta_qc - nu);
    if delta_qc == 0.0 || delta_qc == nu || denom == 0.0 {
        return Err(Error::DegenerateDetuning {
            delta_qc_hz: delta_qc,
        });
    }
    Ok(g_qc * g_qc * nu / denom)
}

/// Sideband-resolved damping rate Γ = 4g²n̄/κ (Hz in, Hz out).
pub fn damping_rate(g: f64, n_pump: f64, kappa: f64) -> Result<f64> {
    ensure_positive("kappa", kappa)?;
    ensure_non_negative("g", g)?;
    ensure_non_negative("n_pump", n_pump)?;
    Ok(4.0 * g * g * n_pump / kappa)
}

/// Inverse of [`damping_rate`]: intracavity pump photons for damping `gamma`.
pub fn pump_photons(g: f64, gamma: f64, kappa: f64) -> Result<f64> {
    ensure_positive("kappa", kappa)?;
    ensure_positive("g", g)?;
    ensure_non_negative("gamma", gamma)?;
    Ok(gamma * kappa / (4.0 * g * g))
}

/// Closed-form bandwidth efficiency of a square pulse of length `t_p`
/// filtered by a transducer of bandwidth `gamma_t` (Hz).
pub fn eta_bandwidth(gamma_t: f64, t_p: f64) -> Result<f64> {
    ensure_positive("gamma_t", gamma_t)?;
    ensure_positive("t_p", t_p)?;
    let x = TAU * gamma_t * t_p;
    if x < 1e-4 {
        // series of 1 − 2(1 − e^{−x/2})/x
        return Ok(x / 4.0 - x * x / 24.0 + x * x * x / 192.0);
    }
    Ok(1.0 + 2.0 * (-x / 2.0).exp_m1() / x)
}

/// Narrowband transducer efficiency, using the pump-dependent κ_e of `op`.
pub fn eta_transducer(p: &TransducerParams, op: &OperatingPoint) -> f64 {
    let gamma_t = op.gamma_t;
    if gamma_t <= 0.0 {
        return 0.0;
    }
    p.epsilon
        * (p.kappa_o_ext / p.kappa_o)
        * (p.kappa_e_ext / op.kappa_e_effective)
        * (4.0 * op.gamma_e * op.gamma_o / (gamma_t * gamma_t))
}

/// Two-quadrature gain from finite sideband resolution.
pub fn eta_gain(kappa_e: f64, kappa_o: f64, omega_m: f64) -> Result<f64> {
    ensure_positive("omega_m", omega_m)?;
    let re = kappa_e / (4.0 * omega_m);
    let ro = kappa_o / (4.0 * omega_m);
    Ok((1.0 + re * re) * (1.0 + ro * ro))
}

/// Fraction of the cavity field leaving through the port towards the transducer.
pub fn eta_cavity(q: &CircuitQedParams) -> f64 {
    1.0 - (q.kappa_c_int + q.kappa_c_w) / q.kappa_c
}

/// Full efficiency budget at an operating point.
#[allow(clippy::too_many_arguments)]
pub fn efficiency_budget(
    p: &TransducerParams,
    q: &CircuitQedParams,
    op: &OperatingPoint,
    eta_mic: f64,
    eta_opt: f64,
    n_t: f64,
    t_p: f64,
) -> Result<EfficiencyBudget> {
    if !(eta_mic > 0.0 && eta_mic <= 1.0) {
        return Err(invalid("eta_mic", "must lie in (0, 1]"));
    }
    if !(eta_opt > 0.0 && eta_opt <= 1.0) {
        return Err(invalid("eta_opt", "must lie in (0, 1]"));
    }
    ensure_non_negative("n_t", n_t)?;
    Ok(EfficiencyBudget::from_factors(
        eta_bandwidth(op.gamma_t, t_p)?,
        eta_transducer(p, op),
        eta_gain(op.kappa_e_effective, p.kappa_o, p.omega_m)?,
        eta_mic,
        eta_opt,
        eta_cavity(q),
        n_t,
    ))
}

/// Photon-shot-noise dephasing Γ_φ = κχ²/(κ²/4 + χ²)·n_eff (Hz in, Hz out).
pub fn dephasing_rate(n_eff: f64, kappa_c: f64, chi: f64) -> Result<f64> {
    ensure_non_negative("n_eff", n_eff)?;
    Ok(dephasing_per_photon(kappa_c, chi)? * n_eff)
}

/// Effective cavity occupancy that produces dephasing `gamma_phi` (Hz).
pub fn effective_occupancy(gamma_phi: f64, kappa_c: f64, chi: f64) -> Result<f64> {
    ensure_non_negative("gamma_phi", gamma_phi)?;
    let per_photon = dephasing_per_photon(kappa_c, chi)?;
    if per_photon == 0.0 {
        return Err(invalid("chi", "zero dispersive shift gives no dephasing"));
    }
    Ok(gamma_phi / per_photon)
}

fn dephasing_per_photon(kappa_c: f64, chi: f64) -> Result<f64> {
    ensure_positive("kappa_c", kappa_c)?;
    Ok(kappa_c * chi * chi / (kappa_c * kappa_c / 4.0 + chi * chi))
}

/// Pure dephasing Γ_φ = 1/T_2 − 1/(2T_1), returned as an ordinary frequency (Hz).
pub fn pure_dephasing_from_lifetimes(t1: f64, t2: f64) -> Result<f64> {
    ensure_positive("t1", t1)?;
    ensure_positive("t2", t2)?;
    let rate = 1.0 / t2 - 0.5 / t1;
    if rate < 0.0 {
        return Err(invalid("t2", "T2 > 2·T1 gives negative pure dephasing"));
    }
    Ok(rate / (2.0 * PI))
}

/// AC Stark shift 2χ·n̄_p (Hz).
pub fn stark_shift(chi: f64, n_p: f64) -> Result<f64> {
    ensure_non_negative("n_p", n_p)?;
    Ok(2.0 * chi * n_p)
}
