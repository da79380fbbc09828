use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use super::cavity::{cavity_response, max_cavity_step, PointerTrajectory, ReadoutPulse};
use super::filter::{integrated_stats, matched_filter, noise_number_to_s_t0, MatchedFilter, ReadoutStatistics};
use super::QubitState;
use crate::error::{ensure_non_negative, invalid, Error, Result};
use crate::noise::NoiseParams;
use crate::params::{
    efficiency_budget, eta_cavity, eta_gain, eta_transducer, CircuitQedParams, EfficiencyBudget,
    OperatingPoint, TransducerParams,
};
use crate::statespace::{build_model, index, propagate, QuadratureTrace, SampledDrive, StateSpaceModel, Vec10, Vec6};

/// Amplitude factors applied outside the transducer dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionChain {
    pub eta_mic: f64,
    pub eta_opt: f64,
    /// Heterodyne mode matching.
    pub epsilon: f64,
    /// Sideband gain η_G, applied at detection in RWA propagation only.
    pub eta_g: f64,
}

impl DetectionChain {
    pub fn new(p: &TransducerParams, op: &OperatingPoint, eta_mic: f64, eta_opt: f64) -> Result<Self> {
        for (name, v) in [("eta_mic", eta_mic), ("eta_opt", eta_opt)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(invalid(name, format!("must lie in (0, 1], got {v}")));
            }
        }
        Ok(Self {
            eta_mic,
            eta_opt,
            epsilon: p.epsilon,
            eta_g: eta_gain(op.kappa_e_effective, p.kappa_o, p.omega_m)?,
        })
    }

    fn output_gain(&self, include_counter: bool) -> f64 {
        let g = if include_counter { 1.0 } else { self.eta_g };
        (self.eta_opt * self.epsilon * g).sqrt()
    }
}

/// Mean detected (I, Q) records for both qubit states on one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanTraces {
    pub g: QuadratureTrace,
    pub e: QuadratureTrace,
}

impl MeanTraces {
    pub fn get(&self, state: QubitState) -> &QuadratureTrace {
        match state {
            QubitState::Ground => &self.g,
            QubitState::Excited => &self.e,
        }
    }
}

/// Propagates the cavity output of both states through the transducer.
///
/// The microwave input is √η_mic·α_out on the external LC port; the optical
/// output quadratures are scaled by √(η_opt·ε·η_G) at detection. The
/// trajectory grid must have an odd number of points: RK4 runs at twice the
/// trajectory step so every midpoint evaluation hits a sample. The result is
/// kept every `decimate` RK4 steps.
pub fn upconvert(
    m: &StateSpaceModel,
    traj: &PointerTrajectory,
    chain: &DetectionChain,
    include_counter: bool,
    decimate: usize,
) -> Result<MeanTraces> {
    if traj.len() < 3 || traj.len() % 2 == 0 {
        return Err(invalid("trajectory", "needs an odd number (≥ 3) of samples"));
    }
    let steps = (traj.len() - 1) / 2;
    if decimate == 0 || steps % decimate != 0 {
        return Err(invalid("decimate", format!("must divide the {steps} propagation steps")));
    }
    let dt = 2.0 * traj.dt;
    let gain_in = chain.eta_mic.sqrt();
    let gain_out = chain.output_gain(include_counter);
    let run = |state: QubitState| -> Result<QuadratureTrace> {
        let samples = traj
            .output(state)
            .iter()
            .map(|a| {
                let mut u = Vec10::zeros();
                u[index::input(index::IN_MICROWAVE_EXT, 0)] = gain_in * a.re;
                u[index::input(index::IN_MICROWAVE_EXT, 1)] = gain_in * a.im;
                u
            })
            .collect();
        let drive = SampledDrive { dt: traj.dt, samples };
        let prop = propagate(m, &drive, Vec6::zeros(), dt, steps as f64 * dt, include_counter)?;
        let (oi, oq) = (index::output(index::OPTICAL, 0), index::output(index::OPTICAL, 1));
        let samples = prop
            .outputs
            .iter()
            .step_by(decimate)
            .map(|y| (gain_out * y[oi], gain_out * y[oq]))
            .collect();
        QuadratureTrace::new(dt * decimate as f64, samples, state.to_string())
    };
    Ok(MeanTraces {
        g: run(QubitState::Ground)?,
        e: run(QubitState::Excited)?,
    })
}

/// Detected difference-signal energy relative to the cavity-output
/// difference energy times the narrowband gain η_t·η_G·η_mic·η_opt.
pub fn exact_bandwidth_efficiency(traj: &PointerTrajectory, filter: &MatchedFilter, narrowband_gain: f64) -> Result<f64> {
    let input = traj.output_separation_energy();
    if input <= 0.0 || narrowband_gain <= 0.0 {
        return Err(Error::DegenerateFilter);
    }
    Ok(2.0 * filter.g_norm / (input * narrowband_gain))
}

/// Detector noise specification for a pipeline run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseLevel {
    Explicit { s_b: f64, s_t0: f64 },
    /// Choose S_t(0) so the matched filter sees added noise `n_t`.
    TargetNt { s_b: f64, n_t: f64 },
}

/// Time grids of one pipeline run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationGrid {
    pub t_int: f64,
    pub intervals: usize,
    pub decimate: usize,
    pub dt_filter: f64,
    pub dt_sim: f64,
}

/// The full readout chain at one operating point.
#[derive(Debug, Clone, PartialEq)]
pub struct Pipeline {
    pub transducer: TransducerParams,
    pub cqed: CircuitQedParams,
    pub op: OperatingPoint,
    pub pulse: ReadoutPulse,
    pub eta_mic: f64,
    pub eta_opt: f64,
    pub noise: NoiseLevel,
    pub include_counter: bool,
    /// Minimum number of filter intervals over the integration window.
    pub filter_intervals: usize,
    /// Integration window (s); `None` selects the default.
    pub t_int: Option<f64>,
}

/// Everything a pipeline run produces.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub grid: SimulationGrid,
    pub trajectory: PointerTrajectory,
    pub means: MeanTraces,
    pub filter: MatchedFilter,
    pub noise: NoiseParams,
    pub stats: ReadoutStatistics,
    pub eta_bw_exact: f64,
    /// Budget with the time-domain η_bw and the filter's N_t.
    pub budget: EfficiencyBudget,
}

impl Pipeline {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        transducer: TransducerParams,
        cqed: CircuitQedParams,
        op: OperatingPoint,
        pulse: ReadoutPulse,
        eta_mic: f64,
        eta_opt: f64,
        noise: NoiseLevel,
    ) -> Result<Self> {
        let p = Self {
            transducer,
            cqed,
            op,
            pulse,
            eta_mic,
            eta_opt,
            noise,
            include_counter: false,
            filter_intervals: 4096,
            t_int: None,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        self.transducer.validate()?;
        self.cqed.validate()?;
        self.pulse.validate()?;
        DetectionChain::new(&self.transducer, &self.op, self.eta_mic, self.eta_opt)?;
        match self.noise {
            NoiseLevel::Explicit { s_b, s_t0 } => {
                ensure_non_negative("s_b", s_b)?;
                ensure_non_negative("s_t0", s_t0)?;
            }
            NoiseLevel::TargetNt { s_b, n_t } => {
                ensure_non_negative("s_b", s_b)?;
                if n_t < s_b {
                    return Err(invalid("n_t", "must not be below s_b"));
                }
            }
        }
        if self.filter_intervals < 16 {
            return Err(invalid("filter_intervals", "need at least 16"));
        }
        if let Some(t) = self.t_int {
            if !(t > self.pulse.t_p) {
                return Err(invalid("t_int", "must exceed the pulse length"));
            }
        }
        if self.op.gamma_t <= 0.0 {
            return Err(invalid("gamma_t", "transducer bandwidth must be positive"));
        }
        Ok(())
    }

    pub fn with_amplitude(&self, amplitude: f64) -> Self {
        Self {
            pulse: self.pulse.with_amplitude(amplitude),
            ..self.clone()
        }
    }

    /// T_p + max(10/κ_c, 5/Γ_T) with angular rates, unless overridden.
    pub fn integration_window(&self) -> f64 {
        self.t_int.unwrap_or_else(|| {
            let cavity = 10.0 / (TAU * self.cqed.kappa_c);
            let transducer = 5.0 / (TAU * self.op.gamma_t);
            self.pulse.t_p + cavity.max(transducer)
        })
    }

    pub fn model(&self) -> Result<StateSpaceModel> {
        build_model(&self.transducer, &self.op)
    }

    pub fn chain(&self) -> Result<DetectionChain> {
        DetectionChain::new(&self.transducer, &self.op, self.eta_mic, self.eta_opt)
    }

    pub fn grid(&self, m: &StateSpaceModel) -> SimulationGrid {
        let t_int = self.integration_window();
        let noise_step = 0.2 / (TAU * self.op.gamma_t);
        let intervals = self.filter_intervals.max((t_int / noise_step).ceil() as usize);
        let sim_limit = m.max_step(self.include_counter).min(2.0 * max_cavity_step(&self.cqed));
        let decimate = ((t_int / intervals as f64) / sim_limit).ceil().max(1.0) as usize;
        let dt_filter = t_int / intervals as f64;
        SimulationGrid {
            t_int,
            intervals,
            decimate,
            dt_filter,
            dt_sim: dt_filter / decimate as f64,
        }
    }

    /// Closed-form budget for added noise `n_t`.
    pub fn closed_form_budget(&self, n_t: f64) -> Result<EfficiencyBudget> {
        efficiency_budget(
            &self.transducer,
            &self.cqed,
            &self.op,
            self.eta_mic,
            self.eta_opt,
            n_t,
            self.pulse.t_p,
        )
    }

    pub fn evaluate(&self) -> Result<Evaluation> {
        self.validate()?;
        let m = self.model()?;
        let grid = self.grid(&m);
        let chain = self.chain()?;
        let traj = cavity_response(&self.pulse, &self.cqed, 0.5 * grid.dt_sim, grid.t_int)?;
        let means = upconvert(&m, &traj, &chain, self.include_counter, grid.decimate)?;
        let filter = matched_filter(&means.e, &means.g, grid.t_int)?;
        let noise = match self.noise {
            NoiseLevel::Explicit { s_b, s_t0 } => NoiseParams::new(s_b, s_t0, self.op.gamma_t)?,
            NoiseLevel::TargetNt { s_b, n_t } => {
                let s_t0 = noise_number_to_s_t0(&filter, self.op.gamma_t, s_b, n_t)?;
                NoiseParams::new(s_b, s_t0, self.op.gamma_t)?
            }
        };
        let stats = integrated_stats(&filter, &means, &noise)?;
        let eta_t = eta_transducer(&self.transducer, &self.op);
        let gain = eta_t * chain.eta_g * chain.eta_mic * chain.eta_opt;
        let eta_bw_exact = exact_bandwidth_efficiency(&traj, &filter, gain)?;
        let budget = EfficiencyBudget::from_factors(
            eta_bw_exact,
            eta_t,
            chain.eta_g,
            chain.eta_mic,
            chain.eta_opt,
            eta_cavity(&self.cqed),
            stats.n_t,
        );
        Ok(Evaluation {
            grid,
            trajectory: traj,
            means,
            filter,
            noise,
            stats,
            eta_bw_exact,
            budget,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::eta_bandwidth;
    use crate::readout::{snr_from_budget, Convention};
    use approx::assert_relative_eq;

    fn pipeline(gamma_e: f64, gamma_o: f64, t_p: f64, amplitude: f64) -> Pipeline {
        let p = TransducerParams::table_one();
        let op = OperatingPoint::new(&p, gamma_e, gamma_o).unwrap();
        Pipeline::new(
            p,
            CircuitQedParams::table_one(),
            op,
            ReadoutPulse::square(amplitude, t_p),
            0.17,
            0.28,
            NoiseLevel::TargetNt { s_b: 0.0, n_t: 1.4 },
        )
        .unwrap()
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let pl = pipeline(1.1e3, 5.0e3, 15e-6, 0.0);
        let m = pl.model().unwrap();
        let grid = pl.grid(&m);
        let traj = cavity_response(&pl.pulse, &pl.cqed, 0.5 * grid.dt_sim, grid.t_int).unwrap();
        let means = upconvert(&m, &traj, &pl.chain().unwrap(), false, grid.decimate).unwrap();
        assert!(means.g.samples.iter().chain(&means.e.samples).all(|s| *s == (0.0, 0.0)));
        assert_eq!(pl.evaluate().unwrap_err(), Error::DegenerateFilter);
    }

    #[test]
    fn grid_is_consistent() {
        let pl = pipeline(1.1e3, 5.0e3, 15e-6, 19.0);
        let m = pl.model().unwrap();
        let g = pl.grid(&m);
        assert!(g.intervals >= 4096);
        assert!(g.dt_sim <= m.max_step(false) * (1.0 + 1e-12));
        assert_relative_eq!(g.dt_filter * g.intervals as f64, g.t_int, max_relative = 1e-12);
        let ev = pl.evaluate().unwrap();
        assert_eq!(ev.means.g.len(), g.intervals + 1);
        assert_eq!(ev.filter.len(), g.intervals + 1);
        assert_relative_eq!(ev.trajectory.n_r, 361.0, max_relative = 1e-12);
    }

    #[test]
    fn wide_bandwidth_is_an_undistorted_copy() {
        // Γ_T·T_p ≫ 1: only the closed-form edge deficit remains
        let pl = pipeline(50e3, 50e3, 400e-6, 10.0);
        let ev = pl.evaluate().unwrap();
        let closed = eta_bandwidth(pl.op.gamma_t, pl.pulse.t_p).unwrap();
        assert!(closed > 0.99);
        assert!((ev.eta_bw_exact - closed).abs() < 0.01, "{} vs {closed}", ev.eta_bw_exact);
        // detected difference energy relative to 4n̄_r carries the whole chain
        let ratio = 2.0 * ev.filter.g_norm / (4.0 * pl.pulse.n_r());
        let b = &ev.budget;
        let chain = b.eta_t * b.eta_g * b.eta_mic * b.eta_opt * b.eta_cav;
        assert_relative_eq!(ratio / chain, 1.0, max_relative = 0.02);
    }

    #[test]
    fn narrow_bandwidth_deficit_matches_closed_form() {
        let pl = pipeline(1.1e3, 5.0e3, 15e-6, 19.0);
        let ev = pl.evaluate().unwrap();
        let closed = eta_bandwidth(pl.op.gamma_t, 15e-6).unwrap();
        assert!((0.12..=0.15).contains(&closed), "{closed}");
        assert!(ev.eta_bw_exact <= 0.16 && ev.eta_bw_exact >= 0.10, "{}", ev.eta_bw_exact);
        assert_relative_eq!(ev.eta_bw_exact, closed, max_relative = 0.05);
    }

    #[test]
    fn budget_and_dynamics_agree() {
        for (ge, go) in [(0.5e3, 2.4e3), (1.1e3, 5.0e3), (0.2e3, 1.0e3)] {
            let pl = pipeline(ge, go, 15e-6, 19.0);
            let ev = pl.evaluate().unwrap();
            assert_relative_eq!(ev.stats.n_t, 1.4, max_relative = 1e-9);
            let predicted = snr_from_budget(361.0, &ev.budget, Convention::Supplementary).unwrap();
            assert!(
                (ev.stats.snr - predicted).abs() <= 0.1 * predicted,
                "({ge}, {go}): {} vs {predicted}",
                ev.stats.snr
            );
        }
    }

    #[test]
    fn snr_scales_linearly_with_amplitude() {
        let a = pipeline(0.5e3, 2.4e3, 15e-6, 5.0).evaluate().unwrap();
        let b = pipeline(0.5e3, 2.4e3, 15e-6, 10.0).evaluate().unwrap();
        assert_relative_eq!(b.stats.snr / a.stats.snr, 2.0, max_relative = 1e-9);
        assert_relative_eq!(b.noise.s_t0, a.noise.s_t0, max_relative = 1e-9);
    }

    #[test]
    fn decimation_must_divide_steps() {
        let pl = pipeline(1.1e3, 5.0e3, 15e-6, 19.0);
        let m = pl.model().unwrap();
        let g = pl.grid(&m);
        let traj = cavity_response(&pl.pulse, &pl.cqed, 0.5 * g.dt_sim, g.t_int).unwrap();
        let chain = pl.chain().unwrap();
        assert!(upconvert(&m, &traj, &chain, false, 0).is_err());
        assert!(upconvert(&m, &traj, &chain, false, g.intervals * g.decimate + 1).is_err());
    }
}
