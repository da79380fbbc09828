use std::path::PathBuf;

use optoreadout::config::RunConfig;
use optoreadout::montecarlo::{fit_mixture_weight, mixture_fidelity, rabi_scan, run_histograms};
use optoreadout::params::{EfficiencyBudget, OperatingPoint};
use optoreadout::readout::{calibrate_quantum_efficiency, snr_from_budget, voltage_grid, QubitState};
use rayon::prelude::*;

use crate::output::{write_table, Cell, Header, Table};
use crate::Failure;

/// Resolved configuration plus the provenance shared by all outputs.
pub struct Run {
    pub cfg: RunConfig,
    pub config_sha256: String,
}

impl Run {
    fn header(&self, command: &'static str) -> Header {
        Header {
            command,
            config_sha256: self.config_sha256.clone(),
            seed: self.cfg.run.seed,
            convention: format!("{:?}", self.cfg.budget.convention).to_lowercase(),
        }
    }

    fn emit(&self, command: &'static str, stem: &str, table: &Table) -> Result<PathBuf, Failure> {
        let path = write_table(&self.cfg.run.out_dir, stem, table, &self.header(command), self.cfg.run.format)
            .map_err(|e| Failure::Io(format!("writing {stem}: {e}")))?;
        println!("wrote {}", path.display());
        Ok(path)
    }
}

const BUDGET_COLUMNS: &[&str] = &[
    "gamma_e_hz",
    "gamma_o_hz",
    "gamma_t_hz",
    "kappa_e_hz",
    "eta_bw",
    "eta_t",
    "eta_g",
    "eta_mic",
    "eta_opt",
    "eta_cav",
    "eta_noise",
    "eta_loss",
    "eta_q",
    "n_t",
    "n_det",
    "n_cqed",
    "snr",
];

fn budget_row(run: &Run, op: &OperatingPoint) -> Result<(Vec<Cell>, EfficiencyBudget), Failure> {
    let b = run.cfg.budget_at(op)?;
    let n_r = run.cfg.pulse.sqrt_n_r.powi(2);
    let snr = snr_from_budget(n_r, &b, run.cfg.budget.convention)?;
    let row = vec![
        op.gamma_e.into(),
        op.gamma_o.into(),
        op.gamma_t.into(),
        op.kappa_e_effective.into(),
        b.eta_bw.into(),
        b.eta_t.into(),
        b.eta_g.into(),
        b.eta_mic.into(),
        b.eta_opt.into(),
        b.eta_cav.into(),
        b.eta_noise.into(),
        b.eta_loss.into(),
        b.eta_q.into(),
        b.n_t.into(),
        b.n_det.into(),
        b.n_cqed.into(),
        snr.into(),
    ];
    Ok((row, b))
}

pub fn budget(run: &Run) -> Result<(), Failure> {
    let op = run.cfg.operating_point()?;
    let (row, _) = budget_row(run, &op)?;
    let mut table = Table::new(BUDGET_COLUMNS);
    table.push(row.clone());
    println!(
        "operating point: Γe = {:.4} kHz, Γo = {:.4} kHz, ΓT = {:.4} kHz",
        op.gamma_e * 1e-3,
        op.gamma_o * 1e-3,
        op.gamma_t * 1e-3
    );
    for (name, cell) in BUDGET_COLUMNS.iter().zip(&row).skip(4) {
        if let Cell::F(v) = cell {
            println!("  {name:<10} {v:.6e}");
        }
    }
    run.emit("budget", "budget", &table)?;
    Ok(())
}

pub fn sweep(run: &Run) -> Result<(), Failure> {
    let grid = run.cfg.sweep_grid();
    let rows: Vec<(Vec<Cell>, EfficiencyBudget)> = grid
        .par_iter()
        .map(|&(ge, go)| {
            let op = run.cfg.operating_point_at(ge, go)?;
            budget_row(run, &op)
        })
        .collect::<Result<_, Failure>>()?;
    let mut table = Table::new(BUDGET_COLUMNS);
    let mut best = (0.0, 0.0, 0.0);
    for ((row, b), &(ge, go)) in rows.into_iter().zip(&grid) {
        if b.eta_q > best.0 {
            best = (b.eta_q, ge, go);
        }
        table.push(row);
    }
    println!(
        "{} points; max η_q = {:.4e} at Γe = {:.1} Hz, Γo = {:.1} Hz",
        grid.len(),
        best.0,
        best.1,
        best.2
    );
    run.emit("sweep", "sweep", &table)?;
    Ok(())
}

pub fn shots(run: &Run) -> Result<(), Failure> {
    let cfg = &run.cfg;
    let seed = cfg.run.seed;
    let (ev, ctx) = cfg.shot_context()?;
    let prep = ctx.prep;
    let n = cfg.montecarlo.shots_per_state;
    let hist = run_histograms(&ctx, n, seed, cfg.binning())?;
    let pair = &hist.pair;

    let (mu_g, mu_e, sigma) = (ctx.mean(QubitState::Ground), ctx.mean(QubitState::Excited), ctx.sigma());
    let (f_mix, w_g, w_g_se, w_e, w_e_se) = if sigma > 0.0 {
        let pred = mixture_fidelity(mu_g, mu_e, sigma, &prep)?;
        let vg: Vec<f64> = hist.shots_g.iter().map(|r| r.v).collect();
        let ve: Vec<f64> = hist.shots_e.iter().map(|r| r.v).collect();
        let fg = fit_mixture_weight(&vg, mu_g, mu_e, sigma)?;
        let fe = fit_mixture_weight(&ve, mu_e, mu_g, sigma)?;
        (pred.f_opt, fg.weight, fg.std_error, fe.weight, fe.std_error)
    } else {
        (f64::NAN, f64::NAN, f64::NAN, f64::NAN, f64::NAN)
    };

    let mut summary = Table::new(&[
        "gamma_e_hz",
        "gamma_o_hz",
        "sqrt_n_r",
        "shots_per_state",
        "mu_g",
        "mu_e",
        "sigma",
        "snr",
        "eta_q",
        "v_thresh",
        "excited_above",
        "p_e_given_g",
        "p_g_given_e",
        "f_opt",
        "f_opt_se",
        "f_opt_mixture",
        "excited_weight_g_prep",
        "excited_weight_g_prep_se",
        "ground_weight_e_prep",
        "ground_weight_e_prep_se",
    ]);
    let snr = if sigma > 0.0 { (mu_e - mu_g).abs() / sigma } else { f64::INFINITY };
    summary.push(vec![
        cfg.montecarlo.gamma_e_hz.unwrap_or(cfg.operating_point.gamma_e_hz).into(),
        cfg.montecarlo.gamma_o_hz.unwrap_or(cfg.operating_point.gamma_o_hz).into(),
        cfg.pulse.sqrt_n_r.into(),
        n.into(),
        mu_g.into(),
        mu_e.into(),
        sigma.into(),
        snr.into(),
        ev.budget.eta_q.into(),
        pair.v_thresh.into(),
        pair.excited_above.into(),
        pair.p_e_given_g.into(),
        pair.p_g_given_e.into(),
        pair.f_opt.into(),
        pair.f_opt_std_error().into(),
        f_mix.into(),
        w_g.into(),
        w_g_se.into(),
        w_e.into(),
        w_e_se.into(),
    ]);

    let mut histogram = Table::new(&["bin_center", "count_g", "count_e"]);
    for ((c, g), e) in pair.bin_centers().iter().zip(&pair.counts_g).zip(&pair.counts_e) {
        histogram.push(vec![(*c).into(), (*g).into(), (*e).into()]);
    }

    println!(
        "SNR = {snr:.4}, V_thresh = {:.6e}, P(e|g) = {:.4}, P(g|e) = {:.4}, F_opt = {:.4} ± {:.4} (mixture model {f_mix:.4})",
        pair.v_thresh,
        pair.p_e_given_g,
        pair.p_g_given_e,
        pair.f_opt,
        pair.f_opt_std_error()
    );
    run.emit("shots", "histogram", &histogram)?;
    run.emit("shots", "shots_summary", &summary)?;

    if let (Some(r), Some((taus, dets))) = (&cfg.rabi, cfg.rabi_grids()) {
        let map = rabi_scan(&ctx, &taus, &dets, r.omega_r_hz, r.shots_per_point, &pair.threshold(), seed)?;
        let mut table = Table::new(&["tau_s", "detuning_hz", "p_e", "p_e_true"]);
        for p in &map {
            table.push(vec![p.tau.into(), p.detuning.into(), p.p_e.into(), p.p_e_true.into()]);
        }
        println!("Rabi map: {} × {} points", taus.len(), dets.len());
        run.emit("shots", "rabi", &table)?;
    }
    Ok(())
}

pub fn calibrate(run: &Run) -> Result<(), Failure> {
    let cfg = &run.cfg;
    let c = &cfg.calibrate;
    let pipeline = cfg.calibration_pipeline()?;
    let setup = cfg.calibration_setup(cfg.run.seed);
    let volts = match &c.voltages_v {
        Some(v) => v.clone(),
        None => voltage_grid(&pipeline, c.amplitude_per_volt, c.points, c.snr_min, c.snr_max)?,
    };
    let injected = pipeline.evaluate()?.budget.eta_q;
    let res = calibrate_quantum_efficiency(&volts, &pipeline, &setup)?;

    let mut points = Table::new(&["voltage_v", "n_r", "snr", "ln_rho_ge", "rho_ge"]);
    for p in &res.points {
        points.push(vec![p.voltage.into(), p.n_r.into(), p.snr.into(), p.ln_rho_ge.into(), p.rho_ge().into()]);
    }
    let rel = (res.eta_q - injected) / injected;
    let mut summary = Table::new(&[
        "mode",
        "points",
        "a_per_v",
        "sigma_v",
        "eta_q",
        "eta_q_model",
        "relative_error",
        "snr_r_squared",
        "dephasing_r_squared",
    ]);
    summary.push(vec![
        format!("{:?}", c.mode).to_lowercase().as_str().into(),
        res.points.len().into(),
        res.a.into(),
        res.sigma_v.into(),
        res.eta_q.into(),
        injected.into(),
        rel.into(),
        res.snr_r_squared.into(),
        res.dephasing_r_squared.into(),
    ]);
    println!(
        "a = {:.6e} /V, σ = {:.6e} V, η_q = {:.4e} (model {:.4e}, {:+.2}%), R²(SNR) = {:.6}, R²(ln ρ) = {:.6}",
        res.a,
        res.sigma_v,
        res.eta_q,
        injected,
        100.0 * rel,
        res.snr_r_squared,
        res.dephasing_r_squared
    );
    run.emit("calibrate", "calibration", &points)?;
    run.emit("calibrate", "calibration_summary", &summary)?;
    Ok(())
}
