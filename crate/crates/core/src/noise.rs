//! Detector-input noise: a white floor from vacuum, ideal heterodyne
//! detection and pump phase noise, plus a Lorentzian from mechanical motion
//! imprinted on the optical pump.
//!
//! Spectral densities are single-quadrature, in photons/s/Hz, normalized to
//! shot noise. The sampler realizes the same statistics on a finite grid:
//! the δ-correlated part becomes independent samples of variance
//! ½(1 + S_b)/dt, so raw traces scale with dt while integrated voltages do
//! not.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_non_negative, ensure_positive, Error, Result};
use crate::statespace::QuadratureTrace;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    /// Pump phase-noise floor above shot noise.
    pub s_b: f64,
    /// Lorentzian amplitude on resonance.
    pub s_t0: f64,
    /// Transducer bandwidth Γ_T (Hz); sets the Lorentzian width.
    pub gamma_t: f64,
}

impl NoiseParams {
    pub fn new(s_b: f64, s_t0: f64, gamma_t: f64) -> Result<Self> {
        let n = Self { s_b, s_t0, gamma_t };
        n.validate()?;
        Ok(n)
    }

    pub fn validate(&self) -> Result<()> {
        ensure_non_negative("s_b", self.s_b)?;
        ensure_non_negative("s_t0", self.s_t0)?;
        ensure_positive("gamma_t", self.gamma_t)
    }

    /// Weight of the δ-correlated part, ½(1 + S_b).
    pub fn white_level(&self) -> f64 {
        0.5 * (1.0 + self.s_b)
    }

    /// Γ_T in rad/s.
    pub fn gamma_t_angular(&self) -> f64 {
        TAU * self.gamma_t
    }

    /// Decay rate of the correlated part, Γ_T/2 (rad/s).
    pub fn correlation_rate(&self) -> f64 {
        0.5 * self.gamma_t_angular()
    }

    /// Stationary variance of the correlated part, Γ_T·S_t(0)/4.
    pub fn correlated_variance(&self) -> f64 {
        0.25 * self.gamma_t_angular() * self.s_t0
    }

    /// Largest sampling step accepted by the sampler, 0.1·(2/Γ_T).
    pub fn max_step(&self) -> f64 {
        0.1 / self.correlation_rate()
    }
}

/// S_out at offset frequency `freq` (Hz).
pub fn output_spectrum(n: &NoiseParams, freq: f64) -> f64 {
    // the Lorentzian ratio is the same in angular and ordinary units
    let half_width = 0.5 * n.gamma_t;
    let h2 = half_width * half_width;
    n.white_level() + h2 * n.s_t0 / (h2 + freq * freq)
}

/// Noise autocorrelation at lag τ, split into the δ weight and the
/// continuous part.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Autocorrelation {
    pub delta_weight: f64,
    pub continuous: f64,
}

pub fn autocorrelation(n: &NoiseParams, tau: f64) -> Autocorrelation {
    Autocorrelation {
        delta_weight: n.white_level(),
        continuous: n.correlated_variance() * (-n.correlation_rate() * tau.abs()).exp(),
    }
}

/// Seeded generator of (I, Q) noise samples on a fixed grid.
///
/// Each quadrature carries independent white noise plus an independent
/// Ornstein-Uhlenbeck component advanced with its exact one-step
/// conditional distribution.
#[derive(Debug, Clone)]
pub struct NoiseSampler {
    rng: ChaCha8Rng,
    white_sd: f64,
    ou_decay: f64,
    ou_innovation_sd: f64,
    ou: (f64, f64),
}

impl NoiseSampler {
    pub fn new(n: &NoiseParams, dt: f64, rng: ChaCha8Rng) -> Result<Self> {
        n.validate()?;
        ensure_positive("dt", dt)?;
        let limit = n.max_step();
        if dt > limit {
            return Err(Error::StepTooLarge {
                dt,
                limit,
                context: "noise sampling (dt ≤ 0.1·2/Γ_T)",
            });
        }
        let var = n.correlated_variance();
        let decay = (-n.correlation_rate() * dt).exp();
        let mut rng = rng;
        let sd = var.sqrt();
        // start in the stationary distribution
        let ou = (
            sd * rng.sample::<f64, _>(StandardNormal),
            sd * rng.sample::<f64, _>(StandardNormal),
        );
        Ok(Self {
            rng,
            white_sd: (n.white_level() / dt).sqrt(),
            ou_decay: decay,
            ou_innovation_sd: (var * (1.0 - decay * decay)).sqrt(),
            ou,
        })
    }

    pub fn from_seed(n: &NoiseParams, dt: f64, seed: u64) -> Result<Self> {
        Self::new(n, dt, ChaCha8Rng::seed_from_u64(seed))
    }

    /// Next (ζ_I, ζ_Q) sample.
    pub fn next_pair(&mut self) -> (f64, f64) {
        let wi: f64 = self.rng.sample(StandardNormal);
        let wq: f64 = self.rng.sample(StandardNormal);
        let out = (
            self.white_sd * wi + self.ou.0,
            self.white_sd * wq + self.ou.1,
        );
        let ei: f64 = self.rng.sample(StandardNormal);
        let eq: f64 = self.rng.sample(StandardNormal);
        self.ou.0 = self.ou_decay * self.ou.0 + self.ou_innovation_sd * ei;
        self.ou.1 = self.ou_decay * self.ou.1 + self.ou_innovation_sd * eq;
        out
    }
}

/// `count` samples of detector noise at spacing `dt`, deterministic in `seed`.
pub fn sample_noise(n: &NoiseParams, seed: u64, dt: f64, count: usize) -> Result<QuadratureTrace> {
    if count == 0 {
        return Err(Error::InvalidParameter {
            name: "count",
            reason: "must be at least 1".into(),
        });
    }
    let mut sampler = NoiseSampler::from_seed(n, dt, seed)?;
    let samples = (0..count).map(|_| sampler.next_pair()).collect();
    QuadratureTrace::new(dt, samples, "noise")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params() -> NoiseParams {
        NoiseParams::new(0.1, 2.5, 3.0e3).unwrap()
    }

    #[test]
    fn spectrum_limits() {
        let n = params();
        assert_relative_eq!(output_spectrum(&n, 0.0), 0.5 * 1.1 + 2.5, max_relative = 1e-14);
        assert_relative_eq!(output_spectrum(&n, 1e12), 0.55, max_relative = 1e-9);
        assert_eq!(output_spectrum(&n, 700.0), output_spectrum(&n, -700.0));
        assert!(output_spectrum(&NoiseParams::new(0.0, 0.0, 1.0).unwrap(), 3.0) >= 0.5);
    }

    #[test]
    fn autocorrelation_at_zero_lag() {
        let n = params();
        let c = autocorrelation(&n, 0.0);
        assert_relative_eq!(c.continuous, TAU * 3.0e3 * 2.5 / 4.0, max_relative = 1e-14);
        assert_relative_eq!(c.delta_weight, 0.55);
        let white = NoiseParams::new(0.0, 0.0, 3.0e3).unwrap();
        assert_eq!(autocorrelation(&white, 1e-5).continuous, 0.0);
    }

    #[test]
    fn continuous_part_transforms_to_the_lorentzian() {
        // trapezoidal Fourier integral of the continuous part, oracle for
        // the Lorentzian term of S_out
        let n = params();
        let rate = n.correlation_rate();
        let t_max = 60.0 / rate;
        let steps = 400_000;
        let h = t_max / steps as f64;
        for freq in [0.0, 500.0, 1.5e3, 6.0e3] {
            let omega = TAU * freq;
            let mut acc = 0.0;
            for k in 0..=steps {
                let tau = k as f64 * h;
                let w = if k == 0 || k == steps { 0.5 } else { 1.0 };
                acc += w * autocorrelation(&n, tau).continuous * (omega * tau).cos();
            }
            let numeric = 2.0 * acc * h;
            let lorentz = output_spectrum(&n, freq) - n.white_level();
            assert!(
                (numeric - lorentz).abs() <= 0.005 * lorentz,
                "f = {freq}: {numeric} vs {lorentz}"
            );
        }
    }

    #[test]
    fn sampler_is_deterministic() {
        let n = params();
        let dt = n.max_step() / 2.0;
        let a = sample_noise(&n, 42, dt, 1000).unwrap();
        let b = sample_noise(&n, 42, dt, 1000).unwrap();
        let c = sample_noise(&n, 43, dt, 1000).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn sampler_rejects_coarse_steps() {
        let n = params();
        assert!(matches!(
            sample_noise(&n, 1, 2.0 * n.max_step(), 10),
            Err(Error::StepTooLarge { .. })
        ));
        assert!(sample_noise(&n, 1, n.max_step(), 0).is_err());
    }

    #[test]
    fn white_variance_scales_with_inverse_step() {
        let n = NoiseParams::new(0.0, 0.0, 1.0e3).unwrap();
        let dt = 1e-6;
        let count = 1_000_000;
        let tr = sample_noise(&n, 7, dt, count).unwrap();
        let var = tr.i().map(|x| x * x).sum::<f64>() / count as f64;
        let expected = 0.5 / dt;
        let se = expected * (2.0 / count as f64).sqrt();
        assert!((var - expected).abs() < 3.0 * se, "{var} vs {expected} ± {se}");
    }

    #[test]
    fn autocovariance_matches_continuous_part() {
        let n = NoiseParams::new(0.0, 4.0, 2.0e3).unwrap();
        let dt = n.max_step() / 4.0;
        let count = 400_000;
        let tr = sample_noise(&n, 11, dt, count).unwrap();
        let xs: Vec<f64> = tr.i().collect();
        for lag in [1usize, 10, 40] {
            let prods: Vec<f64> = (0..count - lag).map(|k| xs[k] * xs[k + lag]).collect();
            let m = prods.len() as f64;
            let mean = prods.iter().sum::<f64>() / m;
            // neighbouring products are correlated through the OU part; use
            // batch means for the standard error
            let batch = 2000;
            let batches: Vec<f64> = prods
                .chunks(batch)
                .filter(|c| c.len() == batch)
                .map(|c| c.iter().sum::<f64>() / batch as f64)
                .collect();
            let bm = batches.iter().sum::<f64>() / batches.len() as f64;
            let bvar = batches.iter().map(|b| (b - bm).powi(2)).sum::<f64>()
                / (batches.len() - 1) as f64;
            let se = (bvar / batches.len() as f64).sqrt();
            let expected = autocorrelation(&n, lag as f64 * dt).continuous;
            assert!((mean - expected).abs() < 3.0 * se, "lag {lag}: {mean} vs {expected} ± {se}");
        }
    }
}
