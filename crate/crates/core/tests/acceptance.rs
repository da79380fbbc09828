//! Acceptance criteria 1 to 12. Runs without the libtest harness so that one
//! PASS/FAIL line per criterion is always printed; exits non-zero if any fails.

use std::f64::consts::TAU;
use std::process::ExitCode;
use std::time::Instant;

use optoreadout::config::RunConfig;
use optoreadout::montecarlo::{
    mixture_fidelity, run_histograms, simulate_shots, Binning, PreparationError,
};
use optoreadout::noise::{output_spectrum, sample_noise, NoiseParams};
use optoreadout::params::{
    dispersive_shift, effective_occupancy, eta_bandwidth, eta_gain, eta_transducer,
    pure_dephasing_from_lifetimes, CircuitQedParams, OperatingPoint, TransducerParams,
};
use optoreadout::readout::{
    calibrate_quantum_efficiency, voltage_grid, CalibrationSetup, NoiseLevel, Pipeline, QubitState,
    ReadoutPulse,
};
use optoreadout::statespace::{
    build_model, index, propagate, steady_state_covariance, transfer_matrix, Mat6, Vec10, Vec6,
};
use rustfft::{num_complex::Complex, FftPlanner};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rel(x: f64, target: f64) -> f64 {
    (x - target) / target
}

fn fail<E: std::fmt::Display>(e: E) -> String {
    format!("error: {e}")
}

fn dispersive_shift_value() -> Outcome {
    let chi = dispersive_shift(66.4e6, -2.306e9, 228e6).map_err(fail)?;
    let r = rel(chi, 172e3);
    check(r.abs() <= 0.01, format!("chi = {:.2} kHz ({:+.2}%)", chi * 1e-3, 100.0 * r))
}

fn transducer_efficiency() -> Outcome {
    let p = TransducerParams::table_one();
    let op = OperatingPoint::new(&p, 1.1e3, 5.0e3).map_err(fail)?;
    if (op.kappa_e_effective - 2.7e6).abs() > 1.0 {
        return Err(format!("kappa_e = {} Hz, expected 2.7 MHz", op.kappa_e_effective));
    }
    let eta_t = eta_transducer(&p, &op);
    let r = rel(eta_t, 0.19);
    check(r.abs() <= 0.05, format!("eta_t = {eta_t:.4} ({:+.2}%)", 100.0 * r))
}

fn gain_factor() -> Outcome {
    let p = TransducerParams::table_one();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for k in 0..=100 {
        let kappa_e = 1.6e6 + 1.1e6 * k as f64 / 100.0;
        let g = eta_gain(kappa_e, p.kappa_o, p.omega_m).map_err(fail)?;
        lo = lo.min(g);
        hi = hi.max(g);
    }
    check(lo >= 1.3 && hi <= 1.5, format!("eta_G in [{lo:.4}, {hi:.4}]"))
}

fn bandwidth_factor() -> Outcome {
    let cfg = RunConfig::table_one();
    let t_p = cfg.pulse.t_p_s;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (ge, go) in cfg.sweep_grid() {
        let op = cfg.operating_point_at(ge, go).map_err(fail)?;
        let b = eta_bandwidth(op.gamma_t, t_p).map_err(fail)?;
        lo = lo.min(b);
        hi = hi.max(b);
    }
    let op = cfg.operating_point_at(1.1e3, 5.0e3).map_err(fail)?;
    let closed = eta_bandwidth(op.gamma_t, t_p).map_err(fail)?;
    let ev = cfg
        .pipeline_at(&op, cfg.pulse.sqrt_n_r)
        .and_then(|p| p.evaluate())
        .map_err(fail)?;
    let exact = ev.eta_bw_exact;
    check(
        lo >= 0.02 && hi <= 0.15 && exact <= 0.16,
        format!("closed form in [{lo:.4}, {hi:.4}]; at max point closed {closed:.4}, time domain {exact:.4}"),
    )
}

fn budget_reproduction() -> Outcome {
    let mut cfg = RunConfig::table_one();
    cfg.budget.added_noise = optoreadout::config::AddedNoiseKind::Constant;
    cfg.budget.n_t = 1.4;
    let op = cfg.operating_point_at(1.1e3, 5.0e3).map_err(fail)?;
    let b = cfg.budget_at(&op).map_err(fail)?;
    let (r_loss, r_q, r_n) = (rel(b.eta_loss, 1.9e-3), rel(b.eta_q, 8e-4), rel(b.n_cqed, 740.0));
    check(
        (b.eta_cav - 0.96).abs() < 0.005 && r_loss.abs() <= 0.15 && r_q.abs() <= 0.15 && r_n.abs() <= 0.15,
        format!(
            "eta_cav = {:.4}, eta_loss = {:.3e} ({:+.1}%), eta_q = {:.3e} ({:+.1}%), N_cQED = {:.0} ({:+.1}%)",
            b.eta_cav,
            b.eta_loss,
            100.0 * r_loss,
            b.eta_q,
            100.0 * r_q,
            b.n_cqed,
            100.0 * r_n
        ),
    )
}

fn backaction_consistency() -> Outcome {
    let q = CircuitQedParams::table_one();
    let gamma_phi = pure_dephasing_from_lifetimes(17e-6, 20.4e-6).map_err(fail)?;
    let n_eff = effective_occupancy(gamma_phi, q.kappa_c, q.chi).map_err(fail)?;
    let r = rel(n_eff, 0.019);
    check(r.abs() <= 0.10, format!("n_eff = {n_eff:.5} ({:+.1}%)", 100.0 * r))
}

fn state_space_oracle() -> Outcome {
    let p = TransducerParams::table_one();
    let op = OperatingPoint::new(&p, 1e3, 1e3).map_err(fail)?;
    let kappa_min = p.kappa_o.min(op.kappa_e_effective);
    if kappa_min < 100.0 * op.gamma_t {
        return Err("test point is not adiabatic".into());
    }
    let m = build_model(&p, &op).map_err(fail)?;
    let h = transfer_matrix(&m, 0.0).map_err(fail)?;
    let input = index::input(index::IN_MICROWAVE_EXT, 0);
    let h2: f64 = (0..2)
        .map(|quad| h[(index::output(index::OPTICAL, quad), input)].norm_sqr())
        .sum();
    let adiabatic = (p.kappa_o_ext / p.kappa_o)
        * (p.kappa_e_ext / op.kappa_e_effective)
        * 4.0
        * op.gamma_e
        * op.gamma_o
        / (op.gamma_t * op.gamma_t);
    let r_dc = rel(h2, adiabatic);

    // differential Lyapunov equation dV/dt = AV + VAᵀ + Q integrated with RK4
    let m = m.with_mechanical_occupancy(50.0).map_err(fail)?;
    let v_ss = steady_state_covariance(&m).map_err(fail)?;
    let a = m.a_rwa;
    let q = m.diffusion();
    let f = |v: &Mat6| a * v + v * a.transpose() + q;
    let dt = m.max_step(false);
    let t_end = 15.0 / (TAU * op.gamma_t);
    let steps = (t_end / dt).ceil() as usize;
    let mut v = Mat6::identity() * 0.25;
    for _ in 0..steps {
        let k1 = f(&v);
        let k2 = f(&(v + k1 * (0.5 * dt)));
        let k3 = f(&(v + k2 * (0.5 * dt)));
        let k4 = f(&(v + k3 * dt));
        v += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    }
    let scale = v_ss.iter().fold(0.0f64, |s, x| s.max(x.abs()));
    let r_cov = (v - v_ss).iter().fold(0.0f64, |s, x| s.max(x.abs())) / scale;
    check(
        r_dc.abs() <= 0.01 && r_cov <= 0.01,
        format!(
            "|H_eo(0)|² = {h2:.5e} vs adiabatic {adiabatic:.5e} ({:+.3}%); covariance max deviation {:.2e} of max entry {:.3}",
            100.0 * r_dc,
            r_cov,
            scale
        ),
    )
}

fn rwa_validity() -> Outcome {
    let kappa = 1e5;
    let p = TransducerParams {
        omega_m: 100.0 * kappa,
        gamma_m: 1.0,
        g_o: 100.0,
        g_e: 100.0,
        kappa_o: kappa,
        kappa_o_ext: 0.8 * kappa,
        kappa_e_low: kappa,
        kappa_e_high: kappa,
        kappa_e_ext: 0.6 * kappa,
        epsilon: 1.0,
        gamma_e_max: 1e4,
        kappa_e_table: None,
    };
    let op = OperatingPoint::new(&p, 1e4, 1e4).map_err(fail)?;
    let m = build_model(&p, &op).map_err(fail)?;
    let t_p = 3.0 / (TAU * op.gamma_t);
    let t_end = 4.0 * t_p;
    let drive = move |t: f64| {
        let mut u = Vec10::zeros();
        if t < t_p {
            u[index::input(index::IN_MICROWAVE_EXT, 0)] = (TAU * t / t_p).sin().powi(2);
        }
        u
    };
    let energy = |counter: bool| -> Result<f64, String> {
        let dt = m.max_step(true);
        let run = propagate(&m, &drive, Vec6::zeros(), dt, t_end, counter).map_err(fail)?;
        Ok((0..2)
            .map(|quad| {
                let y = run.output_series(index::output(index::OPTICAL, quad));
                y.iter().map(|x| x * x).sum::<f64>() * dt
            })
            .sum())
    };
    let e_rwa = energy(false)?;
    let e_cr = energy(true)?;
    let r = rel(e_cr, e_rwa);
    check(
        r.abs() <= 0.02 && e_rwa > 0.0,
        format!("omega_m = 100·kappa: optical output energy RWA {e_rwa:.5e}, counter-rotating {e_cr:.5e} ({:+.4}%)", 100.0 * r),
    )
}

fn noise_statistics(cfg: &RunConfig) -> Outcome {
    let n = NoiseParams::new(0.2, 2.0, 5e3).map_err(fail)?;
    let dt = n.max_step();
    let total = 1_000_000;
    let trace = sample_noise(&n, cfg.run.seed, dt, total).map_err(fail)?;
    let seg = 500;
    let segments = total / seg;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(seg);
    let mut power = vec![0.0; seg];
    for s in 0..segments {
        for quad in 0..2 {
            let mut buf: Vec<Complex<f64>> = trace.samples[s * seg..(s + 1) * seg]
                .iter()
                .map(|&(i, q)| Complex::new(if quad == 0 { i } else { q }, 0.0))
                .collect();
            fft.process(&mut buf);
            for (p, z) in power.iter_mut().zip(&buf) {
                *p += z.norm_sqr() * dt / seg as f64;
            }
        }
    }
    for p in &mut power {
        *p /= (2 * segments) as f64;
    }
    let df = 1.0 / (seg as f64 * dt);
    let band = 4;
    let mut worst: f64 = 0.0;
    let mut k = 0;
    while (k + band) as f64 * df <= 5.0 * n.gamma_t {
        let est = power[k..k + band].iter().sum::<f64>() / band as f64;
        let model = (k..k + band).map(|j| output_spectrum(&n, j as f64 * df)).sum::<f64>() / band as f64;
        worst = worst.max(rel(est, model).abs());
        k += band;
    }

    let (ev, ctx) = cfg.shot_context().map_err(fail)?;
    let ctx = ctx.with_preparation(PreparationError::symmetric(0.0)).map_err(fail)?;
    let shots = 10_000;
    let v: Vec<f64> = simulate_shots(&ctx, QubitState::Ground, shots, cfg.run.seed)
        .map_err(fail)?
        .iter()
        .map(|r| r.v)
        .collect();
    let mean = v.iter().sum::<f64>() / shots as f64;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (shots - 1) as f64;
    let analytic = ev.stats.sigma.powi(2);
    let se = analytic * (2.0 / (shots - 1) as f64).sqrt();
    let z = (var - analytic) / se;
    check(
        worst <= 0.05 && z.abs() <= 3.0,
        format!(
            "periodogram worst deviation {:.2}% over {k} bins to 5·Gamma_T; shot variance z = {z:+.2}",
            100.0 * worst
        ),
    )
}

fn fidelity_reproduction(cfg: &RunConfig) -> Outcome {
    let (_, ctx) = cfg.shot_context().map_err(fail)?;
    let run = run_histograms(&ctx, cfg.montecarlo.shots_per_state, cfg.run.seed, Binning::FreedmanDiaconis)
        .map_err(fail)?;
    let pair = &run.pair;
    let pred = mixture_fidelity(
        ctx.mean(QubitState::Ground),
        ctx.mean(QubitState::Excited),
        ctx.sigma(),
        &ctx.prep,
    )
    .map_err(fail)?;
    let se = pair.f_opt_std_error();
    let z = (pair.f_opt - pred.f_opt) / se;
    check(
        (pair.f_opt - 0.4).abs() <= 0.1 && z.abs() <= 3.0,
        format!(
            "F_opt = {:.4} ± {se:.4}, erf-mixture prediction {:.4} (z = {z:+.2}), SNR = {:.3}",
            pair.f_opt,
            pred.f_opt,
            (ctx.mean(QubitState::Excited) - ctx.mean(QubitState::Ground)).abs() / ctx.sigma()
        ),
    )
}

/// Wide-band transducer whose chain efficiency is close to one, so that
/// η_mic alone sets η_q up to 10⁻¹.
fn wideband_pipeline(cfg: &RunConfig) -> Result<Pipeline, String> {
    let p = TransducerParams {
        omega_m: 1e9,
        gamma_m: 1e-3,
        g_o: 1e3,
        g_e: 1e3,
        kappa_o: 1e7,
        kappa_o_ext: 1e7,
        kappa_e_low: 1e7,
        kappa_e_high: 1e7,
        kappa_e_ext: 1e7,
        epsilon: 1.0,
        gamma_e_max: 1e5,
        kappa_e_table: None,
    };
    let op = OperatingPoint::new(&p, 1e5, 1e5).map_err(fail)?;
    Pipeline::new(
        p,
        cfg.cqed_params().map_err(fail)?,
        op,
        ReadoutPulse::square(1.0, cfg.pulse.t_p_s),
        1.0,
        1.0,
        NoiseLevel::TargetNt { s_b: 0.0, n_t: cfg.budget.n_t },
    )
    .map_err(fail)
}

fn calibration_closed_loop(cfg: &RunConfig) -> Outcome {
    let amp = cfg.calibrate.amplitude_per_volt;
    let mut table_one = cfg.calibration_pipeline().map_err(fail)?;
    table_one.filter_intervals = 1024;
    table_one.eta_mic = 1.0;
    let mut wide = wideband_pipeline(cfg)?;
    wide.filter_intervals = 1024;
    let unit = |pl: &Pipeline| -> Result<f64, String> {
        Ok(pl.with_amplitude(amp).evaluate().map_err(fail)?.budget.eta_q)
    };
    let unit_table = unit(&table_one)?;
    let unit_wide = unit(&wide)?;

    let mut lines = Vec::new();
    let mut ok = true;
    for (k, target) in [1e-4, 1e-3, 1e-2, 1e-1].into_iter().enumerate() {
        let (base, unit_eta) = if target <= 0.5 * unit_table {
            (&table_one, unit_table)
        } else {
            (&wide, unit_wide)
        };
        let mut pl = base.clone();
        pl.eta_mic = target / unit_eta;
        let injected = unit(&pl)?;
        let volts = voltage_grid(&pl, amp, cfg.calibrate.points, cfg.calibrate.snr_min, cfg.calibrate.snr_max)
            .map_err(fail)?;
        let setup = CalibrationSetup::monte_carlo(amp, 4000, cfg.run.seed + 1000 * k as u64);
        let res = calibrate_quantum_efficiency(&volts, &pl, &setup).map_err(fail)?;
        let r = rel(res.eta_q, injected);
        ok &= r.abs() <= 0.05;
        lines.push(format!(
            "{}: {:.3e} -> {:.3e} ({:+.2}%)",
            if std::ptr::eq(base, &table_one) { "device" } else { "wideband" },
            injected,
            res.eta_q,
            100.0 * r
        ));
    }
    check(ok, format!("Monte Carlo SNR, 4000 shots/state; {}", lines.join("; ")))
}

fn sweep_shape(cfg: &RunConfig) -> Outcome {
    let grid = cfg.sweep_grid();
    let n = cfg.sweep.gamma_e_points;
    let mut etas = Vec::with_capacity(grid.len());
    for &(ge, go) in &grid {
        let op = cfg.operating_point_at(ge, go).map_err(fail)?;
        etas.push(cfg.budget_at(&op).map_err(fail)?.eta_q);
    }
    let global = etas.iter().copied().fold(0.0, f64::max);
    let slope = |c: &[f64], g: &[(f64, f64)], i: usize, j: usize| (c[j] / c[i]).ln() / (g[j].0 / g[i].0).ln();
    let mut ok = rel(global, 8e-4).abs() <= 0.20;
    let mut parts = Vec::new();
    for (curve, pts) in etas.chunks(n).zip(grid.chunks(n)) {
        let peak = curve.iter().copied().fold(0.0, f64::max);
        let low = slope(curve, pts, 0, 4);
        let high = slope(curve, pts, n - 5, n - 1);
        let drop = curve[0] / peak;
        ok &= drop <= 0.2 && low > 0.5 && high.abs() <= 0.25 * low;
        parts.push(format!(
            "Gamma_o {:.1} kHz: low-end {:.2}·max, log-slope {low:.2} -> {high:+.2}",
            pts[0].1 * 1e-3,
            drop
        ));
    }
    check(
        ok,
        format!("max eta_q = {global:.3e} ({:+.1}%); {}", 100.0 * rel(global, 8e-4), parts.join("; ")),
    )
}

fn main() -> ExitCode {
    let cfg = RunConfig::table_one();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("dispersive shift", Box::new(dispersive_shift_value)),
        ("transducer efficiency", Box::new(transducer_efficiency)),
        ("gain factor", Box::new(gain_factor)),
        ("bandwidth factor", Box::new(bandwidth_factor)),
        ("budget reproduction", Box::new(budget_reproduction)),
        ("backaction consistency", Box::new(backaction_consistency)),
        ("state-space oracle", Box::new(state_space_oracle)),
        ("RWA validity", Box::new(rwa_validity)),
        ("noise statistics", Box::new(|| noise_statistics(&cfg))),
        ("fidelity reproduction", Box::new(|| fidelity_reproduction(&cfg))),
        ("calibration closed loop", Box::new(|| calibration_closed_loop(&cfg))),
        ("sweep shape", Box::new(|| sweep_shape(&cfg))),
    ];
    let mut failures = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {:>2} {name} [{secs:.2} s]: {detail}", k + 1),
            Err(detail) => {
                failures += 1;
                println!("FAIL criterion {:>2} {name} [{secs:.2} s]: {detail}", k + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failures} failed", criteria.len() - failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
