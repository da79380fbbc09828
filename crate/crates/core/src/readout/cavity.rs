use std::f64::consts::TAU;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::QubitState;
use crate::error::{ensure_non_negative, ensure_positive, invalid, Error, Result};
use crate::params::CircuitQedParams;

/// Envelope of the readout drive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PulseShape {
    Square,
    /// Relative envelope sampled uniformly over [0, t_p], linearly
    /// interpolated between samples.
    Sampled { envelope: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadoutPulse {
    /// √n̄_r (photons^½).
    pub amplitude: f64,
    /// Pulse length (s).
    pub t_p: f64,
    pub shape: PulseShape,
    /// Repetition interval (s).
    pub t_r: f64,
}

impl ReadoutPulse {
    pub fn square(amplitude: f64, t_p: f64) -> Self {
        Self {
            amplitude,
            t_p,
            shape: PulseShape::Square,
            t_r: 1e-3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure_non_negative("amplitude", self.amplitude)?;
        ensure_positive("t_p", self.t_p)?;
        ensure_positive("t_r", self.t_r)?;
        if self.t_r < self.t_p {
            return Err(invalid("t_r", "repetition interval shorter than the pulse"));
        }
        if let PulseShape::Sampled { envelope } = &self.shape {
            if envelope.len() < 2 {
                return Err(invalid("envelope", "need at least two samples"));
            }
            if envelope.iter().any(|x| !x.is_finite()) {
                return Err(invalid("envelope", "non-finite sample"));
            }
        }
        Ok(())
    }

    pub fn n_r(&self) -> f64 {
        self.amplitude * self.amplitude
    }

    /// Relative drive envelope at time `t`; zero outside [0, t_p).
    pub fn envelope(&self, t: f64) -> f64 {
        if t < 0.0 || t >= self.t_p {
            return 0.0;
        }
        match &self.shape {
            PulseShape::Square => 1.0,
            PulseShape::Sampled { envelope } => {
                let pos = t / self.t_p * (envelope.len() - 1) as f64;
                let i = (pos.floor() as usize).min(envelope.len() - 2);
                let f = pos - i as f64;
                envelope[i] * (1.0 - f) + envelope[i + 1] * f
            }
        }
    }

    pub fn with_amplitude(&self, amplitude: f64) -> Self {
        Self {
            amplitude,
            ..self.clone()
        }
    }
}

/// Cavity amplitudes for both qubit states on a uniform grid starting at
/// t = 0.
#[derive(Debug, Clone, PartialEq)]
pub struct PointerTrajectory {
    pub dt: f64,
    pub alpha_g: Vec<Complex64>,
    pub alpha_e: Vec<Complex64>,
    pub alpha_out_g: Vec<Complex64>,
    pub alpha_out_e: Vec<Complex64>,
    /// Pointer phase arctan(2χ/κ_c) (rad).
    pub theta: f64,
    /// Drive amplitude ε₀ (photons^½ s^−½) multiplying the envelope.
    pub drive_scale: f64,
    /// (κ_c/4)∫|α_e − α_g|²dt over the full response.
    pub n_r: f64,
}

impl PointerTrajectory {
    pub fn len(&self) -> usize {
        self.alpha_g.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha_g.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.dt * self.len().saturating_sub(1) as f64
    }

    pub fn field(&self, state: QubitState) -> &[Complex64] {
        match state {
            QubitState::Ground => &self.alpha_g,
            QubitState::Excited => &self.alpha_e,
        }
    }

    pub fn output(&self, state: QubitState) -> &[Complex64] {
        match state {
            QubitState::Ground => &self.alpha_out_g,
            QubitState::Excited => &self.alpha_out_e,
        }
    }

    /// Trapezoidal ∫|α_out,e − α_out,g|²dt over the sampled span.
    pub fn output_separation_energy(&self) -> f64 {
        let d: Vec<f64> = self
            .alpha_out_e
            .iter()
            .zip(&self.alpha_out_g)
            .map(|(e, g)| (e - g).norm_sqr())
            .collect();
        trapezoid(&d, self.dt)
    }
}

pub(crate) fn trapezoid(y: &[f64], dt: f64) -> f64 {
    match y.len() {
        0 | 1 => 0.0,
        n => dt * (y[1..n - 1].iter().sum::<f64>() + 0.5 * (y[0] + y[n - 1])),
    }
}

/// Largest grid step accepted by [`cavity_response`]: 0.1/κ_c (angular).
pub fn max_cavity_step(q: &CircuitQedParams) -> f64 {
    0.1 / (TAU * q.kappa_c)
}

/// Cavity response to `pulse` for both qubit states, sampled every `dt`
/// over [0, t_end].
///
/// The field obeys dα/dt = −(iΔ_k + κ_c/2)α + √κ_c,ext·ε_in(t) with
/// Δ_e = −χ and Δ_g = +χ, so the steady-state pointers sit at phases ±θ.
/// The drive scale is chosen so that the trajectory carries the requested
/// n̄_r. Square pulses are evaluated in closed form; sampled envelopes use
/// the exact first-order-hold propagator on the grid.
pub fn cavity_response(
    pulse: &ReadoutPulse,
    q: &CircuitQedParams,
    dt: f64,
    t_end: f64,
) -> Result<PointerTrajectory> {
    pulse.validate()?;
    q.validate()?;
    ensure_positive("dt", dt)?;
    let limit = max_cavity_step(q);
    if dt > limit * (1.0 + 1e-12) {
        return Err(Error::StepTooLarge {
            dt,
            limit,
            context: "cavity response (dt ≤ 0.1/κ_c)",
        });
    }
    if t_end < pulse.t_p {
        return Err(invalid("t_end", "must cover the whole pulse"));
    }
    let n = (t_end / dt).round() as usize + 1;
    let cav = Cavity::new(q);

    let unit_g = cav.unit_response(pulse, QubitState::Ground, dt, n);
    let unit_e = cav.unit_response(pulse, QubitState::Excited, dt, n);
    let separation = cav.separation_per_unit_drive(pulse, &unit_g, &unit_e, dt);
    let zeros = vec![Complex64::default(); n];
    let self_energy = cav.separation_energy_of(&unit_g, &zeros, dt, pulse);
    let separation = if separation > 1e-12 * self_energy { separation } else { 0.0 };
    let scale = if pulse.amplitude == 0.0 {
        0.0
    } else if separation > 0.0 {
        pulse.amplitude / separation.sqrt()
    } else {
        // no dispersion: normalize as if the pointers were antipodal
        pulse.amplitude / (4.0 * self_energy).sqrt()
    };

    let sk = cav.kappa_ext.sqrt();
    let scaled = |v: Vec<Complex64>| -> Vec<Complex64> { v.into_iter().map(|a| a * scale).collect() };
    let alpha_g = scaled(unit_g);
    let alpha_e = scaled(unit_e);
    let output = |alpha: &[Complex64]| -> Vec<Complex64> {
        alpha
            .iter()
            .enumerate()
            .map(|(i, a)| a * sk - scale * pulse.envelope(i as f64 * dt))
            .collect()
    };
    let alpha_out_g = output(&alpha_g);
    let alpha_out_e = output(&alpha_e);

    Ok(PointerTrajectory {
        dt,
        alpha_g,
        alpha_e,
        alpha_out_g,
        alpha_out_e,
        theta: q.pointer_phase(),
        drive_scale: scale,
        n_r: scale * scale * separation,
    })
}

struct Cavity {
    kappa: f64,
    kappa_ext: f64,
    chi: f64,
}

impl Cavity {
    fn new(q: &CircuitQedParams) -> Self {
        Self {
            kappa: TAU * q.kappa_c,
            kappa_ext: TAU * q.kappa_c_ext,
            chi: TAU * q.chi,
        }
    }

    fn lambda(&self, state: QubitState) -> Complex64 {
        let delta = match state {
            QubitState::Ground => self.chi,
            QubitState::Excited => -self.chi,
        };
        Complex64::new(0.5 * self.kappa, delta)
    }

    /// Cavity amplitude for unit drive scale on `n` grid points.
    fn unit_response(&self, pulse: &ReadoutPulse, state: QubitState, dt: f64, n: usize) -> Vec<Complex64> {
        let lam = self.lambda(state);
        let sk = self.kappa_ext.sqrt();
        match pulse.shape {
            PulseShape::Square => {
                let c = sk / lam;
                let at_end = c * (1.0 - (-lam * pulse.t_p).exp());
                (0..n)
                    .map(|i| {
                        let t = i as f64 * dt;
                        if t <= pulse.t_p {
                            c * (1.0 - (-lam * t).exp())
                        } else {
                            at_end * (-lam * (t - pulse.t_p)).exp()
                        }
                    })
                    .collect()
            }
            PulseShape::Sampled { .. } => {
                let decay = (-lam * dt).exp();
                let phi1 = (1.0 - decay) / lam;
                let phi2 = (1.0 - phi1 / dt) / lam;
                let mut out = Vec::with_capacity(n);
                let mut a = Complex64::default();
                out.push(a);
                for i in 1..n {
                    let u0 = pulse.envelope((i - 1) as f64 * dt);
                    let u1 = pulse.envelope(i as f64 * dt);
                    a = a * decay + sk * (u0 * phi1 + (u1 - u0) * phi2);
                    out.push(a);
                }
                out
            }
        }
    }

    /// (κ_c/4)∫|α_e − α_g|²dt for unit drive, including the free decay
    /// after the last grid point.
    fn separation_per_unit_drive(
        &self,
        pulse: &ReadoutPulse,
        g: &[Complex64],
        e: &[Complex64],
        dt: f64,
    ) -> f64 {
        match pulse.shape {
            PulseShape::Square => {
                let (lg, le) = (self.lambda(QubitState::Ground), self.lambda(QubitState::Excited));
                let sk = self.kappa_ext.sqrt();
                let (cg, ce) = (sk / lg, sk / le);
                let during = exp_sum_energy(&[(ce - cg, Complex64::default()), (-ce, le), (cg, lg)], Some(pulse.t_p));
                let ag = cg * (1.0 - (-lg * pulse.t_p).exp());
                let ae = ce * (1.0 - (-le * pulse.t_p).exp());
                let after = exp_sum_energy(&[(ae, le), (-ag, lg)], None);
                0.25 * self.kappa * (during + after)
            }
            PulseShape::Sampled { .. } => self.separation_energy_of(g, e, dt, pulse),
        }
    }

    /// (κ_c/4)∫|a − b|²dt from the grid plus the analytic free-decay tail,
    /// with `a` decaying as the ground-state field and `b` as the excited one.
    fn separation_energy_of(&self, a: &[Complex64], b: &[Complex64], dt: f64, pulse: &ReadoutPulse) -> f64 {
        if let PulseShape::Square = pulse.shape {
            if b.iter().all(|z| *z == Complex64::default()) {
                let lg = self.lambda(QubitState::Ground);
                let c = self.kappa_ext.sqrt() / lg;
                let during = exp_sum_energy(&[(c, Complex64::default()), (-c, lg)], Some(pulse.t_p));
                let end = c * (1.0 - (-lg * pulse.t_p).exp());
                let after = exp_sum_energy(&[(end, lg)], None);
                return 0.25 * self.kappa * (during + after);
            }
        }
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).collect();
        let grid = trapezoid(&d, dt);
        let (last_a, last_b) = (a[a.len() - 1], b[b.len() - 1]);
        let tail = exp_sum_energy(
            &[(last_a, self.lambda(QubitState::Ground)), (-last_b, self.lambda(QubitState::Excited))],
            None,
        );
        0.25 * self.kappa * (grid + tail)
    }
}

/// ∫₀ᴸ |Σ_j a_j e^{−λ_j t}|² dt, with L = ∞ when `length` is `None`.
fn exp_sum_energy(terms: &[(Complex64, Complex64)], length: Option<f64>) -> f64 {
    let mut total = Complex64::default();
    for &(aj, lj) in terms {
        for &(ak, lk) in terms {
            let x = lj + lk.conj();
            let f = match length {
                None => 1.0 / x,
                Some(l) => {
                    if (x * l).norm() < 1e-8 {
                        l * (1.0 - 0.5 * x * l)
                    } else {
                        (1.0 - (-x * l).exp()) / x
                    }
                }
            };
            total += aj * ak.conj() * f;
        }
    }
    total.re
}
