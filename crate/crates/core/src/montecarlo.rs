//! Single-shot simulation: noisy integrated voltages, histograms, threshold
//! assignment, and Rabi scans.
//!
//! Every shot draws from its own ChaCha8 stream, keyed by (shot index,
//! prepared state) for histograms and by (grid point, shot index) for Rabi
//! scans, so results do not depend on the number of worker threads.

use std::f64::consts::{SQRT_2, TAU};
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{ensure_non_negative, ensure_positive, invalid, Error, Result};
use crate::noise::{NoiseParams, NoiseSampler};
use crate::readout::filter::integrated_variance;
use crate::readout::{Evaluation, MatchedFilter, MeanTraces, QubitState};

/// State-preparation errors.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PreparationError {
    /// Probability that a ground-state preparation leaves the qubit excited.
    pub p_excited_after_g: f64,
    /// Probability that an excited-state preparation leaves it in the ground state.
    pub p_ground_after_e: f64,
}

impl PreparationError {
    pub fn symmetric(p: f64) -> Self {
        Self {
            p_excited_after_g: p,
            p_ground_after_e: p,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("p_excited_after_g", self.p_excited_after_g),
            ("p_ground_after_e", self.p_ground_after_e),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(invalid(name, format!("must lie in [0, 1], got {p}")));
            }
        }
        Ok(())
    }

    fn flip_probability(&self, prepared: QubitState) -> f64 {
        match prepared {
            QubitState::Ground => self.p_excited_after_g,
            QubitState::Excited => self.p_ground_after_e,
        }
    }
}

/// Everything needed to draw one integrated voltage.
#[derive(Debug, Clone)]
pub struct ShotContext {
    pub filter: MatchedFilter,
    pub means: MeanTraces,
    pub noise: NoiseParams,
    pub prep: PreparationError,
    /// Qubit lifetime for mid-readout decay; `None` disables decay.
    pub t1: Option<f64>,
    /// Multiplies the noise amplitude; 0 gives noiseless shots.
    pub noise_scale: f64,
    mu: [f64; 2],
    h: Vec<f64>,
}

impl ShotContext {
    pub fn new(filter: MatchedFilter, means: MeanTraces, noise: NoiseParams, prep: PreparationError) -> Result<Self> {
        prep.validate()?;
        noise.validate()?;
        let mu = [filter.integrate(&means.g)?, filter.integrate(&means.e)?];
        let h = filter.quadrature_weights();
        Ok(Self {
            filter,
            means,
            noise,
            prep,
            t1: None,
            noise_scale: 1.0,
            mu,
            h,
        })
    }

    pub fn from_evaluation(ev: &Evaluation, prep: PreparationError) -> Result<Self> {
        Self::new(ev.filter.clone(), ev.means.clone(), ev.noise, prep)
    }

    pub fn with_relaxation(mut self, t1: f64) -> Result<Self> {
        ensure_positive("t1", t1)?;
        self.t1 = Some(t1);
        Ok(self)
    }

    pub fn with_noise_scale(mut self, scale: f64) -> Result<Self> {
        ensure_non_negative("noise_scale", scale)?;
        self.noise_scale = scale;
        Ok(self)
    }

    pub fn with_preparation(mut self, prep: PreparationError) -> Result<Self> {
        prep.validate()?;
        self.prep = prep;
        Ok(self)
    }

    /// Noiseless integrated voltage of `state`.
    pub fn mean(&self, state: QubitState) -> f64 {
        self.mu[state.index()]
    }

    /// Standard deviation of the integrated voltage.
    pub fn sigma(&self) -> f64 {
        self.noise_scale * integrated_variance(&self.filter, &self.noise).sqrt()
    }

    /// Integrated voltage when the qubit jumps e → g at `t_d`.
    fn decayed_mean(&self, t_d: f64) -> f64 {
        let dt = self.filter.dt;
        let (e, g) = (&self.means.e.samples, &self.means.g.samples);
        (0..self.filter.len())
            .map(|k| {
                let s = if (k as f64) * dt < t_d { e[k] } else { g[k] };
                self.h[k] * (self.filter.w_i[k] * s.0 + self.filter.w_q[k] * s.1)
            })
            .sum()
    }

    fn noise_integral(&self, rng: ChaCha8Rng) -> Result<f64> {
        let mut sampler = NoiseSampler::new(&self.noise, self.filter.dt, rng)?;
        let mut acc = 0.0;
        for k in 0..self.filter.len() {
            let (zi, zq) = sampler.next_pair();
            acc += self.h[k] * (self.filter.w_i[k] * zi + self.filter.w_q[k] * zq);
        }
        Ok(acc)
    }
}

/// One simulated readout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShotRecord {
    pub prepared: QubitState,
    /// State the record reflects at the end of the window.
    pub true_state: QubitState,
    pub v: f64,
    /// Time of an e → g jump inside the window.
    pub decay_time: Option<f64>,
}

/// Generator for stream `stream` of run `seed`.
pub fn shot_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn histogram_stream(shot: usize, state: QubitState) -> u64 {
    ((shot as u64) << 1) | state.index() as u64
}

/// Draws one shot: preparation error, optional decay, then the noisy
/// integrated voltage.
pub fn simulate_shot(mut rng: ChaCha8Rng, prepared: QubitState, ctx: &ShotContext) -> Result<ShotRecord> {
    let flip = rng.random::<f64>() < ctx.prep.flip_probability(prepared);
    let state = if flip { prepared.flipped() } else { prepared };
    let mut rec = shot_for_state(rng, state, ctx)?;
    rec.prepared = prepared;
    Ok(rec)
}

fn shot_for_state(mut rng: ChaCha8Rng, state: QubitState, ctx: &ShotContext) -> Result<ShotRecord> {
    let mut decay_time = None;
    let mean = match (state, ctx.t1) {
        (QubitState::Excited, Some(t1)) => {
            let t_d = Exp::new(1.0 / t1)
                .map_err(|e| invalid("t1", e.to_string()))?
                .sample(&mut rng);
            if t_d < ctx.filter.t_int {
                decay_time = Some(t_d);
                ctx.decayed_mean(t_d)
            } else {
                ctx.mean(state)
            }
        }
        _ => ctx.mean(state),
    };
    let v = if ctx.noise_scale == 0.0 {
        mean
    } else {
        mean + ctx.noise_scale * ctx.noise_integral(rng)?
    };
    Ok(ShotRecord {
        prepared: state,
        true_state: if decay_time.is_some() { QubitState::Ground } else { state },
        v,
        decay_time,
    })
}

/// `n` shots of `prepared`, in shot order.
pub fn simulate_shots(ctx: &ShotContext, prepared: QubitState, n: usize, seed: u64) -> Result<Vec<ShotRecord>> {
    (0..n)
        .into_par_iter()
        .map(|k| simulate_shot(shot_rng(seed, histogram_stream(k, prepared)), prepared, ctx))
        .collect()
}

/// SNR estimated from `n` shots per state: |mean_e − mean_g|/√((s_g² + s_e²)/2).
pub fn estimate_snr(ctx: &ShotContext, n: usize, seed: u64) -> Result<f64> {
    if n < 2 {
        return Err(invalid("shots_per_state", "need at least 2"));
    }
    let stats = |state| -> Result<(f64, f64)> {
        let v: Vec<f64> = simulate_shots(ctx, state, n, seed)?.iter().map(|r| r.v).collect();
        Ok(mean_var(&v))
    };
    let (mg, vg) = stats(QubitState::Ground)?;
    let (me, ve) = stats(QubitState::Excited)?;
    Ok((me - mg).abs() / (0.5 * (vg + ve)).sqrt())
}

pub(crate) fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, var)
}

/// Histogram bin layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", content = "bins", rename_all = "snake_case")]
pub enum Binning {
    #[default]
    FreedmanDiaconis,
    Fixed(usize),
}

/// Threshold assignment result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub v_thresh: f64,
    /// Voltages above the threshold are assigned to e.
    pub excited_above: bool,
    pub p_e_given_g: f64,
    pub p_g_given_e: f64,
    pub f_opt: f64,
}

impl Threshold {
    pub fn assign(&self, v: f64) -> QubitState {
        if (v > self.v_thresh) == self.excited_above {
            QubitState::Excited
        } else {
            QubitState::Ground
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramPair {
    pub edges: Vec<f64>,
    pub counts_g: Vec<u64>,
    pub counts_e: Vec<u64>,
    pub v_thresh: f64,
    pub excited_above: bool,
    pub p_e_given_g: f64,
    pub p_g_given_e: f64,
    pub f_opt: f64,
}

impl HistogramPair {
    pub fn from_samples(v_g: &[f64], v_e: &[f64], binning: Binning) -> Result<Self> {
        if v_g.is_empty() || v_e.is_empty() {
            return Err(Error::EmptyHistogram);
        }
        if v_g.iter().chain(v_e).any(|v| !v.is_finite()) {
            return Err(invalid("samples", "non-finite voltage"));
        }
        let edges = bin_edges(v_g, v_e, binning)?;
        let counts_g = count(&edges, v_g);
        let counts_e = count(&edges, v_e);
        let t = optimal_threshold(&edges, &counts_g, &counts_e)?;
        Ok(Self {
            edges,
            counts_g,
            counts_e,
            v_thresh: t.v_thresh,
            excited_above: t.excited_above,
            p_e_given_g: t.p_e_given_g,
            p_g_given_e: t.p_g_given_e,
            f_opt: t.f_opt,
        })
    }

    pub fn threshold(&self) -> Threshold {
        Threshold {
            v_thresh: self.v_thresh,
            excited_above: self.excited_above,
            p_e_given_g: self.p_e_given_g,
            p_g_given_e: self.p_g_given_e,
            f_opt: self.f_opt,
        }
    }

    pub fn bin_width(&self) -> f64 {
        self.edges[1] - self.edges[0]
    }

    pub fn bin_centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    /// Binomial standard error of `f_opt`.
    pub fn f_opt_std_error(&self) -> f64 {
        let ng: u64 = self.counts_g.iter().sum();
        let ne: u64 = self.counts_e.iter().sum();
        let (a, b) = (self.p_e_given_g, self.p_g_given_e);
        (a * (1.0 - a) / ng as f64 + b * (1.0 - b) / ne as f64).sqrt()
    }

    /// CSV with columns `bin_center,count_g,count_e`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "bin_center,count_g,count_e")?;
        for ((c, g), e) in self.bin_centers().iter().zip(&self.counts_g).zip(&self.counts_e) {
            writeln!(w, "{c:.10e},{g},{e}")?;
        }
        Ok(())
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let f = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] * (1.0 - f) + sorted[i + 1] * f
    } else {
        sorted[i]
    }
}

fn bin_edges(v_g: &[f64], v_e: &[f64], binning: Binning) -> Result<Vec<f64>> {
    let mut all: Vec<f64> = v_g.iter().chain(v_e).copied().collect();
    all.sort_by(f64::total_cmp);
    let (mut lo, mut hi) = (all[0], all[all.len() - 1]);
    if hi == lo {
        lo -= 0.5;
        hi += 0.5;
    }
    let bins = match binning {
        Binning::Fixed(0) => return Err(invalid("bins", "must be at least 1")),
        Binning::Fixed(b) => b,
        Binning::FreedmanDiaconis => {
            let iqr = quantile(&all, 0.75) - quantile(&all, 0.25);
            let width = 2.0 * iqr / (all.len() as f64).cbrt();
            if width > 0.0 {
                ((hi - lo) / width).ceil().clamp(1.0, 10_000.0) as usize
            } else {
                100
            }
        }
    };
    Ok((0..=bins).map(|k| lo + (hi - lo) * k as f64 / bins as f64).collect())
}

fn count(edges: &[f64], v: &[f64]) -> Vec<u64> {
    let bins = edges.len() - 1;
    let (lo, hi) = (edges[0], edges[bins]);
    let mut c = vec![0u64; bins];
    for &x in v {
        let k = (((x - lo) / (hi - lo)) * bins as f64).floor();
        c[(k.max(0.0) as usize).min(bins - 1)] += 1;
    }
    c
}

/// Exhaustive scan of the bin edges for the assignment threshold that
/// maximizes 1 − P(e|g) − P(g|e). Ties resolve to the midpoint of the tied
/// edges.
pub fn optimal_threshold(edges: &[f64], counts_g: &[u64], counts_e: &[u64]) -> Result<Threshold> {
    if edges.len() < 2 || counts_g.len() != edges.len() - 1 || counts_e.len() != counts_g.len() {
        return Err(Error::TraceMismatch("histogram edges and counts disagree".into()));
    }
    let ng: u64 = counts_g.iter().sum();
    let ne: u64 = counts_e.iter().sum();
    if ng == 0 || ne == 0 {
        return Err(Error::EmptyHistogram);
    }
    let (ng, ne) = (ng as f64, ne as f64);
    // cumulative counts strictly below edge k
    let mut below_g = vec![0.0; edges.len()];
    let mut below_e = vec![0.0; edges.len()];
    for k in 1..edges.len() {
        below_g[k] = below_g[k - 1] + counts_g[k - 1] as f64;
        below_e[k] = below_e[k - 1] + counts_e[k - 1] as f64;
    }
    let f_above: Vec<f64> = (0..edges.len()).map(|k| below_g[k] / ng - below_e[k] / ne).collect();
    let max = f_above.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = f_above.iter().copied().fold(f64::INFINITY, f64::min);
    let excited_above = max >= -min;
    let score = |k: usize| if excited_above { f_above[k] } else { -f_above[k] };
    let best = if excited_above { max } else { -min };
    let tied: Vec<usize> = (0..edges.len()).filter(|&k| score(k) >= best - 1e-12).collect();
    let v_thresh = 0.5 * (edges[tied[0]] + edges[tied[tied.len() - 1]]);
    let k = *tied
        .iter()
        .min_by(|&&a, &&b| (edges[a] - v_thresh).abs().total_cmp(&(edges[b] - v_thresh).abs()))
        .expect("tied set is non-empty");
    let (p_e_given_g, p_g_given_e) = if excited_above {
        (1.0 - below_g[k] / ng, below_e[k] / ne)
    } else {
        (below_g[k] / ng, 1.0 - below_e[k] / ne)
    };
    Ok(Threshold {
        v_thresh,
        excited_above,
        p_e_given_g,
        p_g_given_e,
        f_opt: 1.0 - p_e_given_g - p_g_given_e,
    })
}

/// Shots for both states and the resulting histogram pair.
#[derive(Debug, Clone)]
pub struct HistogramRun {
    pub pair: HistogramPair,
    pub shots_g: Vec<ShotRecord>,
    pub shots_e: Vec<ShotRecord>,
}

pub const MIN_HISTOGRAM_SHOTS: usize = 1000;

pub fn run_histograms(ctx: &ShotContext, n_shots: usize, seed: u64, binning: Binning) -> Result<HistogramRun> {
    if n_shots < MIN_HISTOGRAM_SHOTS {
        return Err(invalid("n_shots", format!("need at least {MIN_HISTOGRAM_SHOTS} per state")));
    }
    let shots_g = simulate_shots(ctx, QubitState::Ground, n_shots, seed)?;
    let shots_e = simulate_shots(ctx, QubitState::Excited, n_shots, seed)?;
    let vg: Vec<f64> = shots_g.iter().map(|r| r.v).collect();
    let ve: Vec<f64> = shots_e.iter().map(|r| r.v).collect();
    Ok(HistogramRun {
        pair: HistogramPair::from_samples(&vg, &ve, binning)?,
        shots_g,
        shots_e,
    })
}

/// Analytic optimum of the two-Gaussian mixture model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixturePrediction {
    pub v_thresh: f64,
    pub p_e_given_g: f64,
    pub p_g_given_e: f64,
    pub f_opt: f64,
}

fn upper_tail(z: f64) -> f64 {
    0.5 * erfc(z / SQRT_2)
}

/// Threshold fidelity of equal-width Gaussians at `mu_g`, `mu_e` mixed by
/// the preparation errors, maximized over the threshold.
pub fn mixture_fidelity(mu_g: f64, mu_e: f64, sigma: f64, prep: &PreparationError) -> Result<MixturePrediction> {
    ensure_positive("sigma", sigma)?;
    prep.validate()?;
    let above = mu_e >= mu_g;
    let (pg, pe) = (prep.p_excited_after_g, prep.p_ground_after_e);
    let eval = |t: f64| -> (f64, f64) {
        // probability that a state's Gaussian lands on its "e" side
        let e_side = |mu: f64| {
            let tail = upper_tail((t - mu) / sigma);
            if above { tail } else { 1.0 - tail }
        };
        let p_e_given_g = (1.0 - pg) * e_side(mu_g) + pg * e_side(mu_e);
        let p_g_given_e = (1.0 - pe) * (1.0 - e_side(mu_e)) + pe * (1.0 - e_side(mu_g));
        (p_e_given_g, p_g_given_e)
    };
    let f = |t: f64| {
        let (a, b) = eval(t);
        1.0 - a - b
    };
    let lo = mu_g.min(mu_e) - 6.0 * sigma;
    let hi = mu_g.max(mu_e) + 6.0 * sigma;
    let n = 2000;
    let step = (hi - lo) / n as f64;
    let k_best = (0..=n)
        .max_by(|&a, &b| f(lo + a as f64 * step).total_cmp(&f(lo + b as f64 * step)))
        .unwrap_or(0);
    // golden-section refinement around the best grid point
    let (mut a, mut b) = (lo + (k_best as f64 - 1.0) * step, lo + (k_best as f64 + 1.0) * step);
    let r = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..100 {
        let c = b - r * (b - a);
        let d = a + r * (b - a);
        if f(c) >= f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    let t = 0.5 * (a + b);
    let (p_e_given_g, p_g_given_e) = eval(t);
    Ok(MixturePrediction {
        v_thresh: t,
        p_e_given_g,
        p_g_given_e,
        f_opt: 1.0 - p_e_given_g - p_g_given_e,
    })
}

/// Maximum-likelihood weight of the component centred at `mu_b` in a
/// two-Gaussian mixture with known centres and width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureFit {
    pub weight: f64,
    pub std_error: f64,
    pub iterations: usize,
}

pub fn fit_mixture_weight(samples: &[f64], mu_a: f64, mu_b: f64, sigma: f64) -> Result<MixtureFit> {
    ensure_positive("sigma", sigma)?;
    if samples.is_empty() {
        return Err(Error::EmptyHistogram);
    }
    // likelihood ratio f_b/f_a per sample
    let ratio: Vec<f64> = samples
        .iter()
        .map(|&x| {
            let za = (x - mu_a) / sigma;
            let zb = (x - mu_b) / sigma;
            (0.5 * (za * za - zb * zb)).exp()
        })
        .collect();
    let n = samples.len() as f64;
    let mut w = 0.5;
    let mut iterations = 0;
    for it in 1..=10_000 {
        iterations = it;
        let next = ratio.iter().map(|r| w * r / (w * r + 1.0 - w)).sum::<f64>() / n;
        let done = (next - w).abs() < 1e-12;
        w = next;
        if done {
            break;
        }
    }
    let info: f64 = ratio
        .iter()
        .map(|r| {
            let d = (r - 1.0) / (w * r + 1.0 - w);
            d * d
        })
        .sum();
    Ok(MixtureFit {
        weight: w,
        std_error: 1.0 / info.sqrt(),
        iterations,
    })
}

/// Detuned Rabi excitation probability (Ω_r²/(Ω_r²+Δ_d²))·sin²(√(Ω_r²+Δ_d²)·τ/2)
/// for Ω_r and Δ_d given in Hz.
pub fn excitation_probability(tau: f64, detuning: f64, omega_r: f64) -> f64 {
    let om = TAU * omega_r;
    let de = TAU * detuning;
    let w2 = om * om + de * de;
    if w2 == 0.0 {
        return 0.0;
    }
    (om * om / w2) * (0.5 * w2.sqrt() * tau).sin().powi(2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RabiPoint {
    pub tau: f64,
    pub detuning: f64,
    /// Fraction of shots assigned to e.
    pub p_e: f64,
    /// Excited population before assignment.
    pub p_e_true: f64,
}

const RABI_SALT: u64 = 0x5241_4249_0000_0001;

/// Threshold-assigned P(e) on the (τ, Δ_d) grid, τ-major. The qubit starts
/// in the thermal state set by the ground-preparation error.
pub fn rabi_scan(
    ctx: &ShotContext,
    taus: &[f64],
    detunings: &[f64],
    omega_r: f64,
    shots_per_point: usize,
    threshold: &Threshold,
    seed: u64,
) -> Result<Vec<RabiPoint>> {
    if taus.is_empty() || detunings.is_empty() {
        return Err(invalid("grid", "τ and detuning grids must be non-empty"));
    }
    if shots_per_point == 0 {
        return Err(invalid("shots_per_point", "must be at least 1"));
    }
    ensure_positive("omega_r", omega_r)?;
    let p_th = ctx.prep.p_excited_after_g;
    let grid: Vec<(f64, f64)> = taus
        .iter()
        .flat_map(|&t| detunings.iter().map(move |&d| (t, d)))
        .collect();
    grid.par_iter()
        .enumerate()
        .map(|(point, &(tau, detuning))| {
            let p_flip = excitation_probability(tau, detuning, omega_r);
            let p_e_true = p_th + (1.0 - 2.0 * p_th) * p_flip;
            let mut excited = 0usize;
            for shot in 0..shots_per_point {
                let mut rng = shot_rng(seed ^ RABI_SALT, ((point as u64) << 32) | shot as u64);
                let state = if rng.random::<f64>() < p_e_true {
                    QubitState::Excited
                } else {
                    QubitState::Ground
                };
                let rec = shot_for_state(rng, state, ctx)?;
                if threshold.assign(rec.v) == QubitState::Excited {
                    excited += 1;
                }
            }
            Ok(RabiPoint {
                tau,
                detuning,
                p_e: excited as f64 / shots_per_point as f64,
                p_e_true,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::statespace::QuadratureTrace;
    use approx::assert_relative_eq;
    use rand_distr::StandardNormal;

    /// Synthetic context: constant mean offsets over a short window.
    fn context(separation: f64, s_t0: f64) -> ShotContext {
        let dt = 1e-6;
        let n = 201;
        let g = QuadratureTrace::new(dt, vec![(0.0, 0.0); n], "g").unwrap();
        let e = QuadratureTrace::new(dt, vec![(separation, 0.5 * separation); n], "e").unwrap();
        let f = crate::readout::matched_filter(&e, &g, 2e-4).unwrap();
        let noise = NoiseParams::new(0.2, s_t0, 5e3).unwrap();
        ShotContext::new(f, MeanTraces { g, e }, noise, PreparationError::default()).unwrap()
    }

    fn gaussian(n: usize, mu: f64, sigma: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| mu + sigma * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    #[test]
    fn noiseless_shot_equals_mean() {
        let ctx = context(300.0, 1.0).with_noise_scale(0.0).unwrap();
        for state in [QubitState::Ground, QubitState::Excited] {
            let rec = simulate_shot(shot_rng(5, 0), state, &ctx).unwrap();
            assert_eq!(rec.v, ctx.mean(state));
            assert_eq!(rec.true_state, state);
        }
    }

    #[test]
    fn shots_are_reproducible() {
        let ctx = context(300.0, 1.0).with_preparation(PreparationError::symmetric(0.1)).unwrap();
        let a = simulate_shots(&ctx, QubitState::Excited, 50, 9).unwrap();
        let b = simulate_shots(&ctx, QubitState::Excited, 50, 9).unwrap();
        let c = simulate_shots(&ctx, QubitState::Excited, 50, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        // a single shot depends only on its own stream
        let one = simulate_shot(shot_rng(9, histogram_stream(17, QubitState::Excited)), QubitState::Excited, &ctx).unwrap();
        assert_eq!(one, a[17]);
    }

    #[test]
    fn shot_variance_matches_analytic() {
        let ctx = context(30.0, 2.0);
        let n = 10_000;
        let v: Vec<f64> = simulate_shots(&ctx, QubitState::Ground, n, 4)
            .unwrap()
            .iter()
            .map(|r| r.v)
            .collect();
        let (m, var) = mean_var(&v);
        let expected = ctx.sigma().powi(2);
        let se = expected * (2.0 / (n as f64 - 1.0)).sqrt();
        assert!((var - expected).abs() < 4.5 * se, "{var} vs {expected} ± {se}");
        assert!(m.abs() < 4.5 * ctx.sigma() / (n as f64).sqrt(), "{m} {}", ctx.sigma());
    }

    #[test]
    fn relaxation_moves_shots_towards_ground() {
        let ctx = context(300.0, 0.0).with_noise_scale(0.0).unwrap().with_relaxation(1e-4).unwrap();
        let shots = simulate_shots(&ctx, QubitState::Excited, 2000, 1).unwrap();
        let decayed = shots.iter().filter(|r| r.decay_time.is_some()).count() as f64 / 2000.0;
        let expected = 1.0 - (-2e-4f64 / 1e-4).exp();
        assert!((decayed - expected).abs() < 0.04, "{decayed} vs {expected}");
        for r in &shots {
            if r.decay_time.is_some() {
                assert_eq!(r.true_state, QubitState::Ground);
                assert!(r.v < ctx.mean(QubitState::Excited));
            }
        }
    }

    #[test]
    fn symmetric_gaussians_threshold_at_midpoint() {
        let vg = gaussian(20_000, -1.0, 0.5, 1);
        let ve = gaussian(20_000, 3.0, 0.5, 2);
        let h = HistogramPair::from_samples(&vg, &ve, Binning::Fixed(400)).unwrap();
        assert!((h.v_thresh - 1.0).abs() <= h.bin_width() * 1.0 + 0.5, "{}", h.v_thresh);
        assert!(h.f_opt > 0.99);
        assert!(h.excited_above);
        assert_relative_eq!(h.f_opt, 1.0 - h.p_e_given_g - h.p_g_given_e, max_relative = 1e-14);
    }

    #[test]
    fn midpoint_is_within_one_bin_when_overlapping() {
        let vg = gaussian(50_000, 0.0, 1.0, 3);
        let ve = gaussian(50_000, 2.0, 1.0, 4);
        let h = HistogramPair::from_samples(&vg, &ve, Binning::Fixed(200)).unwrap();
        let pred = mixture_fidelity(0.0, 2.0, 1.0, &PreparationError::default()).unwrap();
        assert_relative_eq!(pred.v_thresh, 1.0, epsilon = 1e-6);
        // a flat optimum: the statistical wobble of the argmax is a few bins
        assert!((h.v_thresh - 1.0).abs() <= 3.0 * h.bin_width().max(0.05), "{}", h.v_thresh);
        assert!((h.f_opt - pred.f_opt).abs() < 3.0 * h.f_opt_std_error() + 0.005);
    }

    #[test]
    fn ties_resolve_to_the_midpoint() {
        let edges: Vec<f64> = (0..=10).map(|k| k as f64).collect();
        let mut cg = vec![0; 10];
        let mut ce = vec![0; 10];
        cg[1] = 10;
        ce[8] = 10;
        let t = optimal_threshold(&edges, &cg, &ce).unwrap();
        assert_eq!(t.f_opt, 1.0);
        assert_eq!(t.v_thresh, 5.0);
        let tr = optimal_threshold(&edges, &ce, &cg).unwrap();
        assert!(!tr.excited_above);
        assert_eq!(tr.f_opt, 1.0);
    }

    #[test]
    fn identical_distributions_give_no_fidelity() {
        let v = gaussian(10_000, 0.0, 1.0, 5);
        let w = gaussian(10_000, 0.0, 1.0, 6);
        let h = HistogramPair::from_samples(&v, &w, Binning::FreedmanDiaconis).unwrap();
        assert!(h.f_opt >= 0.0 && h.f_opt < 0.03, "{}", h.f_opt);
    }

    #[test]
    fn empty_histogram_errors() {
        assert_eq!(HistogramPair::from_samples(&[], &[1.0], Binning::Fixed(4)), Err(Error::EmptyHistogram));
        assert_eq!(optimal_threshold(&[0.0, 1.0], &[0], &[3]), Err(Error::EmptyHistogram));
    }

    #[test]
    fn fidelity_is_affine_invariant() {
        let vg = gaussian(5_000, 0.0, 1.0, 7);
        let ve = gaussian(5_000, 1.5, 1.0, 8);
        let a = HistogramPair::from_samples(&vg, &ve, Binning::Fixed(150)).unwrap();
        let map = |v: &[f64]| -> Vec<f64> { v.iter().map(|x| 3.7 * x - 12.0).collect() };
        let b = HistogramPair::from_samples(&map(&vg), &map(&ve), Binning::Fixed(150)).unwrap();
        assert!((a.f_opt - b.f_opt).abs() < 1e-12);
    }

    #[test]
    fn freedman_diaconis_bin_count() {
        let v = gaussian(8_000, 0.0, 1.0, 9);
        let w = gaussian(8_000, 0.0, 1.0, 10);
        let h = HistogramPair::from_samples(&v, &w, Binning::FreedmanDiaconis).unwrap();
        let bins = h.counts_g.len();
        // IQR ≈ 1.349, n = 16000: width ≈ 0.107 over a range of ≈ 8
        assert!((40..=120).contains(&bins), "{bins}");
        assert_eq!(h.counts_g.iter().sum::<u64>(), 8_000);
    }

    #[test]
    fn mixture_prediction_symmetric_case() {
        let p = PreparationError::symmetric(0.15);
        let pred = mixture_fidelity(0.0, 1.3, 1.0, &p).unwrap();
        let closed = 0.7 * statrs::function::erf::erf(1.3 / (2.0 * SQRT_2));
        assert_relative_eq!(pred.f_opt, closed, max_relative = 1e-9);
        assert_relative_eq!(pred.v_thresh, 0.65, epsilon = 1e-6);
        let flipped = mixture_fidelity(1.3, 0.0, 1.0, &p).unwrap();
        assert_relative_eq!(flipped.f_opt, closed, max_relative = 1e-9);
    }

    #[test]
    fn mixture_weight_recovery() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 20_000;
        let samples: Vec<f64> = (0..n)
            .map(|_| {
                let mu = if rng.random::<f64>() < 0.15 { 2.0 } else { 0.0 };
                mu + rng.sample::<f64, _>(StandardNormal)
            })
            .collect();
        let fit = fit_mixture_weight(&samples, 0.0, 2.0, 1.0).unwrap();
        assert!((fit.weight - 0.15).abs() < 3.0 * fit.std_error, "{fit:?}");
    }

    #[test]
    fn rabi_formula() {
        assert_eq!(excitation_probability(0.0, 0.0, 1e6), 0.0);
        assert_relative_eq!(excitation_probability(0.5e-6, 0.0, 1e6), 1.0, max_relative = 1e-12);
        assert_relative_eq!(
            excitation_probability(0.3e-6, 2e5, 1e6),
            excitation_probability(0.3e-6, -2e5, 1e6),
            max_relative = 1e-14
        );
        assert!(excitation_probability(0.5e-6, 1e6, 1e6) < 0.5);
    }

    #[test]
    fn rabi_scan_shape() {
        let ctx = context(400.0, 0.0).with_preparation(PreparationError::symmetric(0.1)).unwrap();
        let thr = run_histograms(&ctx, 2000, 3, Binning::FreedmanDiaconis).unwrap().pair.threshold();
        let taus = [0.0, 0.5e-6];
        let dets = [-3e5, 0.0, 3e5];
        let map = rabi_scan(&ctx, &taus, &dets, 1e6, 4000, &thr, 21).unwrap();
        assert_eq!(map.len(), 6);
        let at = |t: f64, d: f64| map.iter().find(|p| p.tau == t && p.detuning == d).unwrap();
        let p0 = at(0.0, 0.0);
        assert_relative_eq!(p0.p_e_true, 0.1, max_relative = 1e-12);
        let se = (0.1f64 * 0.9 / 4000.0).sqrt();
        assert!((p0.p_e - 0.1).abs() < 3.0 * se + 1e-3, "{}", p0.p_e);
        let pi = at(0.5e-6, 0.0);
        assert!(map.iter().all(|p| p.p_e <= pi.p_e));
        let (l, r) = (at(0.5e-6, -3e5), at(0.5e-6, 3e5));
        let se = (l.p_e * (1.0 - l.p_e) / 4000.0 + r.p_e * (1.0 - r.p_e) / 4000.0).sqrt();
        assert!((l.p_e - r.p_e).abs() < 3.0 * se);
    }

    #[test]
    fn histogram_precondition() {
        let ctx = context(40.0, 0.0);
        assert!(run_histograms(&ctx, 10, 1, Binning::FreedmanDiaconis).is_err());
    }
}
