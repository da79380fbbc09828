use std::f64::consts::SQRT_2;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use super::pipeline::MeanTraces;
use crate::error::{ensure_non_negative, ensure_positive, invalid, Error, Result};
use crate::noise::NoiseParams;
use crate::statespace::QuadratureTrace;

/// Integration weights (W_I, W_Q) on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchedFilter {
    pub dt: f64,
    pub w_i: Vec<f64>,
    pub w_q: Vec<f64>,
    pub t_int: f64,
    /// G(T_int) = ½∫(W_I² + W_Q²)dt.
    pub g_norm: f64,
}

impl MatchedFilter {
    /// Filter from arbitrary weights; fails if they vanish identically.
    pub fn from_weights(dt: f64, w_i: Vec<f64>, w_q: Vec<f64>) -> Result<Self> {
        ensure_positive("dt", dt)?;
        if w_i.len() != w_q.len() {
            return Err(Error::TraceMismatch("W_I and W_Q differ in length".into()));
        }
        if w_i.len() < 2 {
            return Err(invalid("weights", "need at least two samples"));
        }
        if w_i.iter().chain(&w_q).any(|w| !w.is_finite()) {
            return Err(invalid("weights", "non-finite weight"));
        }
        let n = w_i.len();
        let mut f = Self {
            dt,
            w_i,
            w_q,
            t_int: dt * (n - 1) as f64,
            g_norm: 0.0,
        };
        let sq: Vec<f64> = f.w_i.iter().zip(&f.w_q).map(|(a, b)| a * a + b * b).collect();
        f.g_norm = 0.5 * super::cavity::trapezoid(&sq, dt);
        if f.g_norm <= 0.0 {
            return Err(Error::DegenerateFilter);
        }
        Ok(f)
    }

    pub fn len(&self) -> usize {
        self.w_i.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w_i.is_empty()
    }

    /// Trapezoidal quadrature weights of the grid.
    pub fn quadrature_weights(&self) -> Vec<f64> {
        let n = self.len();
        let mut h = vec![self.dt; n];
        h[0] *= 0.5;
        h[n - 1] *= 0.5;
        h
    }

    /// ∫(W_I·I + W_Q·Q)dt over the filter window.
    pub fn integrate(&self, trace: &QuadratureTrace) -> Result<f64> {
        self.check_grid(trace)?;
        let h = self.quadrature_weights();
        Ok(trace
            .samples
            .iter()
            .zip(self.w_i.iter().zip(&self.w_q))
            .zip(&h)
            .map(|(((i, q), (wi, wq)), h)| h * (wi * i + wq * q))
            .sum())
    }

    fn check_grid(&self, trace: &QuadratureTrace) -> Result<()> {
        if (trace.dt - self.dt).abs() > 1e-9 * self.dt {
            return Err(Error::TraceMismatch(format!(
                "trace `{}` sampled at {:e} s, filter at {:e} s",
                trace.label, trace.dt, self.dt
            )));
        }
        if trace.len() < self.len() {
            return Err(Error::TraceMismatch(format!(
                "trace `{}` shorter than the integration window",
                trace.label
            )));
        }
        Ok(())
    }

    /// ∬[W_I W_I′ + W_Q W_Q′]e^{−rate·|t−t′|}dt dt′ on the trapezoidal grid.
    ///
    /// Evaluated in O(N) with the recursion y_k = a_k + ρ·y_{k−1},
    /// ρ = e^{−rate·dt}, which accumulates the exponentially weighted past.
    pub fn kernel_integral(&self, rate: f64) -> f64 {
        let rho = (-rate * self.dt).exp();
        let h = self.quadrature_weights();
        let one = |w: &[f64]| -> f64 {
            let mut y = 0.0;
            let mut total = 0.0;
            for (wk, hk) in w.iter().zip(&h) {
                let a = wk * hk;
                y = a + rho * y;
                total += a * (2.0 * y - a);
            }
            total
        };
        one(&self.w_i) + one(&self.w_q)
    }

    pub fn to_trace(&self) -> QuadratureTrace {
        QuadratureTrace {
            dt: self.dt,
            samples: self.w_i.iter().copied().zip(self.w_q.iter().copied()).collect(),
            label: "W".into(),
        }
    }
}

/// Matched filter W = ⟨·⟩_e − ⟨·⟩_g over the first `t_int` seconds.
pub fn matched_filter(mean_e: &QuadratureTrace, mean_g: &QuadratureTrace, t_int: f64) -> Result<MatchedFilter> {
    ensure_positive("t_int", t_int)?;
    if (mean_e.dt - mean_g.dt).abs() > 1e-9 * mean_e.dt {
        return Err(Error::TraceMismatch("mean traces use different sampling".into()));
    }
    let n = (t_int / mean_e.dt).round() as usize + 1;
    if mean_e.len() < n || mean_g.len() < n {
        return Err(Error::TraceMismatch(format!(
            "mean traces shorter than the {t_int:e} s integration window"
        )));
    }
    let (w_i, w_q): (Vec<f64>, Vec<f64>) = mean_e.samples[..n]
        .iter()
        .zip(&mean_g.samples[..n])
        .map(|(e, g)| (e.0 - g.0, e.1 - g.1))
        .unzip();
    let scale: f64 = mean_e.samples[..n]
        .iter()
        .chain(&mean_g.samples[..n])
        .map(|s| s.0 * s.0 + s.1 * s.1)
        .sum();
    let sep: f64 = w_i.iter().zip(&w_q).map(|(a, b)| a * a + b * b).sum();
    if sep <= 1e-24 * scale {
        return Err(Error::DegenerateFilter);
    }
    MatchedFilter::from_weights(mean_e.dt, w_i, w_q)
}

/// Integrated-voltage statistics of both qubit states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReadoutStatistics {
    pub mu_g: f64,
    pub mu_e: f64,
    pub sigma: f64,
    pub snr: f64,
    pub n_t: f64,
    /// Optimal-threshold fidelity without preparation errors.
    pub fidelity: f64,
}

/// Variance of the integrated voltage: white part (1 + S_b)·G plus the
/// Lorentzian part (Γ_T S_t(0)/4)·∬W·W′e^{−Γ_T|t−t′|/2}.
pub fn integrated_variance(f: &MatchedFilter, n: &NoiseParams) -> f64 {
    (1.0 + n.s_b) * f.g_norm + n.correlated_variance() * f.kernel_integral(n.correlation_rate())
}

pub fn integrated_stats(f: &MatchedFilter, means: &MeanTraces, n: &NoiseParams) -> Result<ReadoutStatistics> {
    n.validate()?;
    let mu_g = f.integrate(&means.g)?;
    let mu_e = f.integrate(&means.e)?;
    let sigma = integrated_variance(f, n).sqrt();
    let snr = (mu_e - mu_g).abs() / sigma;
    Ok(ReadoutStatistics {
        mu_g,
        mu_e,
        sigma,
        snr,
        n_t: transducer_noise_number(f, n),
        fidelity: erf(snr / (2.0 * SQRT_2)),
    })
}

/// N_t = (Γ_T S_t(0)/4G)∬[W_I W_I′ + W_Q W_Q′]e^{−Γ_T|t−t′|/2}dt dt′ + S_b.
pub fn transducer_noise_number(f: &MatchedFilter, n: &NoiseParams) -> f64 {
    n.correlated_variance() * f.kernel_integral(n.correlation_rate()) / f.g_norm + n.s_b
}

/// S_t(0) for which `f` sees added noise `n_t` at bandwidth `gamma_t` (Hz).
pub fn noise_number_to_s_t0(f: &MatchedFilter, gamma_t: f64, s_b: f64, n_t: f64) -> Result<f64> {
    ensure_positive("gamma_t", gamma_t)?;
    ensure_non_negative("s_b", s_b)?;
    if n_t < s_b {
        return Err(invalid("n_t", format!("target {n_t} is below the white floor S_b = {s_b}")));
    }
    let unit = NoiseParams::new(0.0, 1.0, gamma_t)?;
    let per_unit = transducer_noise_number(f, &unit);
    Ok((n_t - s_b) / per_unit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn trace(dt: f64, f: impl Fn(f64) -> (f64, f64), n: usize, label: &str) -> QuadratureTrace {
        QuadratureTrace::new(dt, (0..n).map(|k| f(k as f64 * dt)).collect(), label).unwrap()
    }

    fn means(dt: f64, n: usize) -> MeanTraces {
        MeanTraces {
            g: trace(dt, |t| ((3e4 * t).sin(), 0.2 * (1e4 * t).cos()), n, "g"),
            e: trace(dt, |t| (-(2e4 * t).sin(), (5e4 * t).sin()), n, "e"),
        }
    }

    fn brute_kernel(f: &MatchedFilter, rate: f64) -> f64 {
        let h = f.quadrature_weights();
        let mut s = 0.0;
        for i in 0..f.len() {
            for j in 0..f.len() {
                let k = (-rate * f.dt * (i as f64 - j as f64).abs()).exp();
                s += h[i] * h[j] * (f.w_i[i] * f.w_i[j] + f.w_q[i] * f.w_q[j]) * k;
            }
        }
        s
    }

    #[test]
    fn identical_means_are_degenerate() {
        let m = means(1e-6, 200);
        assert_eq!(matched_filter(&m.g, &m.g, 1e-4), Err(Error::DegenerateFilter));
        let zero = trace(1e-6, |_| (0.0, 0.0), 200, "z");
        assert_eq!(matched_filter(&zero, &zero, 1e-4), Err(Error::DegenerateFilter));
    }

    #[test]
    fn weights_are_mean_differences() {
        let m = means(1e-6, 300);
        let f = matched_filter(&m.e, &m.g, 2e-4).unwrap();
        assert_eq!(f.len(), 201);
        for k in 0..f.len() {
            assert_eq!(f.w_i[k], m.e.samples[k].0 - m.g.samples[k].0);
            assert_eq!(f.w_q[k], m.e.samples[k].1 - m.g.samples[k].1);
        }
        assert!(matched_filter(&m.e, &m.g, 1e-3).is_err());
    }

    #[test]
    fn g_norm_matches_trapezoid_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let n = rng.random_range(10..500);
            let dt = rng.random_range(1e-8..1e-5);
            let wi: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let wq: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let f = MatchedFilter::from_weights(dt, wi.clone(), wq.clone()).unwrap();
            let mut oracle = 0.0;
            for k in 0..n - 1 {
                let a = wi[k] * wi[k] + wq[k] * wq[k];
                let b = wi[k + 1] * wi[k + 1] + wq[k + 1] * wq[k + 1];
                oracle += 0.5 * dt * (a + b);
            }
            assert_relative_eq!(f.g_norm, 0.5 * oracle, max_relative = 1e-6);
        }
    }

    #[test]
    fn fast_kernel_matches_brute_force() {
        let m = means(2e-6, 400);
        let f = matched_filter(&m.e, &m.g, 7.98e-4).unwrap();
        for rate in [0.0, 1e2, 3e3, 1e5, 1e8] {
            assert_relative_eq!(f.kernel_integral(rate), brute_kernel(&f, rate), max_relative = 1e-10);
        }
    }

    #[test]
    fn white_noise_variance() {
        let m = means(1e-6, 300);
        let f = matched_filter(&m.e, &m.g, 2.99e-4).unwrap();
        let n = NoiseParams::new(0.3, 0.0, 2e3).unwrap();
        assert_relative_eq!(integrated_variance(&f, &n), 1.3 * f.g_norm, max_relative = 1e-14);
        assert_eq!(transducer_noise_number(&f, &n), 0.3);
    }

    #[test]
    fn delta_kernel_limit() {
        // Γ_T → ∞ at fixed S_t(0): the Lorentzian becomes white with weight S_t(0)
        let dt = 1e-8;
        let n = 20_001;
        let m = MeanTraces {
            g: trace(dt, |t| ((2e4 * t).sin(), 0.0), n, "g"),
            e: trace(dt, |t| (0.0, (1e4 * t).cos()), n, "e"),
        };
        let f = matched_filter(&m.e, &m.g, 2e-4).unwrap();
        let noise = NoiseParams::new(0.0, 1.5, 2e6).unwrap();
        let lorentz = integrated_variance(&f, &noise) - f.g_norm;
        assert_relative_eq!(lorentz, 2.0 * 1.5 * f.g_norm, max_relative = 2e-3);
    }

    #[test]
    fn constant_weights_long_window() {
        let dt = 1e-6;
        let n = 100_001;
        let f = MatchedFilter::from_weights(dt, vec![1.0; n], vec![0.0; n]).unwrap();
        let noise = NoiseParams::new(0.0, 0.8, 5e3).unwrap();
        // analytic double integral of e^{−r|t−t′|} over a square of side T
        let r = noise.correlation_rate();
        let t = f.t_int;
        let exact = 2.0 * t / r - 2.0 * (1.0 - (-r * t).exp()) / (r * r);
        let n_t_exact = noise.correlated_variance() * exact / f.g_norm;
        assert_relative_eq!(transducer_noise_number(&f, &noise), n_t_exact, max_relative = 1e-4);
        assert_relative_eq!(transducer_noise_number(&f, &noise), 2.0 * 0.8, max_relative = 0.01);
    }

    #[test]
    fn noise_number_is_scale_invariant_and_invertible() {
        let m = means(1e-6, 300);
        let f = matched_filter(&m.e, &m.g, 2.99e-4).unwrap();
        let scaled = MatchedFilter::from_weights(
            f.dt,
            f.w_i.iter().map(|w| -7.5 * w).collect(),
            f.w_q.iter().map(|w| -7.5 * w).collect(),
        )
        .unwrap();
        let noise = NoiseParams::new(0.1, 3.0, 4e3).unwrap();
        assert_relative_eq!(
            transducer_noise_number(&f, &noise),
            transducer_noise_number(&scaled, &noise),
            max_relative = 1e-12
        );
        let s_t0 = noise_number_to_s_t0(&f, 4e3, 0.1, 1.4).unwrap();
        let back = NoiseParams::new(0.1, s_t0, 4e3).unwrap();
        assert_relative_eq!(transducer_noise_number(&f, &back), 1.4, max_relative = 1e-12);
        assert!(noise_number_to_s_t0(&f, 4e3, 0.5, 0.2).is_err());
    }

    #[test]
    fn snr_identity() {
        let m = means(1e-6, 300);
        let f = matched_filter(&m.e, &m.g, 2.99e-4).unwrap();
        let noise = NoiseParams::new(0.2, 1.0, 3e3).unwrap();
        let s = integrated_stats(&f, &m, &noise).unwrap();
        assert_eq!(s.snr, (s.mu_e - s.mu_g).abs() / s.sigma);
        assert!((0.0..=1.0).contains(&s.fidelity));
    }

    #[test]
    fn matched_filter_is_optimal_for_white_noise() {
        let dt = 1e-6;
        let n = 400;
        let m = means(dt, n);
        let f = matched_filter(&m.e, &m.g, (n - 1) as f64 * dt).unwrap();
        let noise = NoiseParams::new(0.4, 0.0, 1e3).unwrap();
        let base = integrated_stats(&f, &m, &noise).unwrap().snr;
        let norm = (2.0 * f.g_norm).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            // smooth perturbation: a few random low-order sinusoids
            let coeffs: Vec<(f64, f64, f64)> = (0..4)
                .map(|_| (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(1.0..8.0)))
                .collect();
            let shape = |k: usize, quad: usize| -> f64 {
                let x = k as f64 / n as f64;
                coeffs
                    .iter()
                    .map(|&(a, b, freq)| if quad == 0 { a } else { b } * (std::f64::consts::TAU * freq * x).sin())
                    .sum()
            };
            let di: Vec<f64> = (0..n).map(|k| shape(k, 0)).collect();
            let dq: Vec<f64> = (0..n).map(|k| shape(k, 1)).collect();
            let dn = MatchedFilter::from_weights(dt, di.clone(), dq.clone()).unwrap();
            let c = 0.1 * norm / (2.0 * dn.g_norm).sqrt();
            let p = MatchedFilter::from_weights(
                dt,
                f.w_i.iter().zip(&di).map(|(w, d)| w + c * d).collect(),
                f.w_q.iter().zip(&dq).map(|(w, d)| w + c * d).collect(),
            )
            .unwrap();
            let snr = integrated_stats(&p, &m, &noise).unwrap().snr;
            assert!(snr <= base * (1.0 + 1e-9), "{snr} > {base}");
        }
    }
}
