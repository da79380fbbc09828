//! Six-quadrature linear state-space model of the transducer.
//!
//! State ordering is `(X₁, Y₁, Z₁, X₂, Y₂, Z₂)`: optical, microwave and
//! mechanical quadrature 1, then the same for quadrature 2, with
//! `X₁ = (a† + a)/2` and `X₂ = i(a† − a)/2`. A complex field amplitude
//! `a = X₁ + iX₂` therefore maps its real part onto quadrature 1 and its
//! imaginary part onto quadrature 2.
//!
//! Inputs (10 ports) are, for each quadrature, optical external, optical
//! internal, microwave external, microwave internal, mechanical bath.
//! Outputs (4 ports) are optical and microwave for each quadrature.
//! Matrix elements are angular rates (rad/s); amplitudes are in √(photons/s).

use std::f64::consts::TAU;
use std::io::{self, Write};

use nalgebra::{SMatrix, SVector};
use num_complex::Complex64;

use crate::error::{ensure_non_negative, ensure_positive, Error, Result};
use crate::params::{OperatingPoint, TransducerParams};

pub type Mat6 = SMatrix<f64, 6, 6>;
pub type Vec6 = SVector<f64, 6>;
pub type Vec10 = SVector<f64, 10>;
pub type Vec4 = SVector<f64, 4>;
pub type InputMatrix = SMatrix<f64, 6, 10>;
pub type OutputMatrix = SMatrix<f64, 4, 6>;
pub type FeedthroughMatrix = SMatrix<f64, 4, 10>;
pub type TransferMatrix = SMatrix<Complex64, 4, 10>;

/// Port and state indices.
pub mod index {
    pub const OPTICAL: usize = 0;
    pub const MICROWAVE: usize = 1;
    pub const MECHANICAL: usize = 2;

    /// State index of `mode` in quadrature `quad` (0 or 1).
    pub const fn state(mode: usize, quad: usize) -> usize {
        quad * 3 + mode
    }

    pub const IN_OPTICAL_EXT: usize = 0;
    pub const IN_OPTICAL_INT: usize = 1;
    pub const IN_MICROWAVE_EXT: usize = 2;
    pub const IN_MICROWAVE_INT: usize = 3;
    pub const IN_MECHANICAL: usize = 4;

    /// Input port index for `port` (one of the `IN_*` constants) in quadrature `quad`.
    pub const fn input(port: usize, quad: usize) -> usize {
        quad * 5 + port
    }

    /// Output port index for `mode` (optical or microwave) in quadrature `quad`.
    pub const fn output(mode: usize, quad: usize) -> usize {
        quad * 2 + mode
    }
}

/// Linearized transducer model in the frame rotating with the pumps.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceModel {
    pub a_rwa: Mat6,
    pub b: InputMatrix,
    pub c: OutputMatrix,
    pub d: FeedthroughMatrix,
    /// g_o·ā (rad/s).
    pub coupling_o: f64,
    /// g_e·b̄ (rad/s).
    pub coupling_e: f64,
    /// Mechanical frequency (rad/s).
    pub omega_m: f64,
    /// Symmetrized occupancy n + ½ per input port.
    pub input_noise: [f64; 10],
}

impl StateSpaceModel {
    /// Counter-rotating part of A at time `t`; oscillates at 2ω_m.
    pub fn a_counter(&self, t: f64) -> Mat6 {
        let (s, c) = (2.0 * self.omega_m * t).sin_cos();
        let (go, ge) = (self.coupling_o, self.coupling_e);
        #[rustfmt::skip]
        let m = Mat6::new(
            0.0,     0.0,     -go * s, 0.0,    0.0,    go * c,
            0.0,     0.0,     -ge * s, 0.0,    0.0,    ge * c,
            -go * s, -ge * s, 0.0,     go * c, ge * c, 0.0,
            0.0,     0.0,     go * c,  0.0,    0.0,    go * s,
            0.0,     0.0,     ge * c,  0.0,    0.0,    ge * s,
            go * c,  ge * c,  0.0,     go * s, ge * s, 0.0,
        );
        m
    }

    /// Full drift matrix at time `t`.
    pub fn a(&self, t: f64, include_counter: bool) -> Mat6 {
        if include_counter {
            self.a_rwa + self.a_counter(t)
        } else {
            self.a_rwa
        }
    }

    /// Sets the mechanical bath occupancy on both mechanical input ports.
    pub fn with_mechanical_occupancy(mut self, n_m: f64) -> Result<Self> {
        ensure_non_negative("mechanical_occupancy", n_m)?;
        for quad in 0..2 {
            self.input_noise[index::input(index::IN_MECHANICAL, quad)] = n_m + 0.5;
        }
        Ok(self)
    }

    /// Largest damping rate on the diagonal of A_RWA (rad/s).
    fn max_linewidth(&self) -> f64 {
        (0..6).map(|i| -2.0 * self.a_rwa[(i, i)]).fold(0.0, f64::max)
    }

    /// Largest step accepted by [`propagate`].
    pub fn max_step(&self, include_counter: bool) -> f64 {
        if include_counter {
            let max_entry = self.a_rwa.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            let coupling = self.coupling_o.abs().max(self.coupling_e.abs());
            1.0 / (20.0 * max_entry.max(2.0 * self.omega_m).max(coupling))
        } else {
            // 1/(20·κ_max) with κ_max as an ordinary frequency
            TAU / (20.0 * self.max_linewidth())
        }
    }

    /// B·N·Bᵀ with N = diag(input_noise)/2, the quadrature-convention
    /// diffusion matrix.
    pub fn diffusion(&self) -> Mat6 {
        let n = SMatrix::<f64, 10, 10>::from_diagonal(&Vec10::from_iterator(
            self.input_noise.iter().map(|x| 0.5 * x),
        ));
        self.b * n * self.b.transpose()
    }

    /// Writes every matrix row-major as labeled plain text.
    pub fn dump<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "# coupling_o_rad_s {:e}", self.coupling_o)?;
        writeln!(w, "# coupling_e_rad_s {:e}", self.coupling_e)?;
        writeln!(w, "# omega_m_rad_s {:e}", self.omega_m)?;
        write_matrix(&mut w, "A_RWA", self.a_rwa.nrows(), self.a_rwa.ncols(), |i, j| self.a_rwa[(i, j)])?;
        let ac = self.a_counter(0.0);
        write_matrix(&mut w, "A_counter(t=0)", 6, 6, |i, j| ac[(i, j)])?;
        write_matrix(&mut w, "B", 6, 10, |i, j| self.b[(i, j)])?;
        write_matrix(&mut w, "C", 4, 6, |i, j| self.c[(i, j)])?;
        write_matrix(&mut w, "D", 4, 10, |i, j| self.d[(i, j)])?;
        writeln!(
            w,
            "input_noise {}",
            self.input_noise.map(|x| format!("{x:e}")).join(" ")
        )
    }
}

fn write_matrix<W: Write>(
    w: &mut W,
    label: &str,
    rows: usize,
    cols: usize,
    get: impl Fn(usize, usize) -> f64,
) -> io::Result<()> {
    writeln!(w, "{label} {rows}x{cols}")?;
    for i in 0..rows {
        let row: Vec<String> = (0..cols).map(|j| format!("{:e}", get(i, j))).collect();
        writeln!(w, "{}", row.join(" "))?;
    }
    Ok(())
}

/// Builds the model at operating point `op`. Pump phases are fixed to zero
/// so every matrix is real.
pub fn build_model(p: &TransducerParams, op: &OperatingPoint) -> Result<StateSpaceModel> {
    p.validate()?;
    let kappa_o = TAU * p.kappa_o;
    let kappa_e = TAU * op.kappa_e_effective;
    let gamma_m = TAU * p.gamma_m;
    // g·ā with ā² = Γκ/(4g²), i.e. √(Γκ)/2
    let coupling_o = TAU * p.g_o * op.n_pump_o.sqrt();
    let coupling_e = TAU * p.g_e * op.n_pump_e.sqrt();
    let (go, ge) = (coupling_o, coupling_e);
    let (ko, ke, gm) = (kappa_o / 2.0, kappa_e / 2.0, gamma_m / 2.0);

    #[rustfmt::skip]
    let a_rwa = Mat6::new(
        -ko, 0.0, 0.0, 0.0, 0.0, -go,
        0.0, -ke, 0.0, 0.0, 0.0, -ge,
        0.0, 0.0, -gm, -go, -ge, 0.0,
        0.0, 0.0, go,  -ko, 0.0, 0.0,
        0.0, 0.0, ge,  0.0, -ke, 0.0,
        go,  ge,  0.0, 0.0, 0.0, -gm,
    );

    let kappa_o_ext = TAU * p.kappa_o_ext;
    let kappa_o_int = TAU * p.kappa_o_int();
    let kappa_e_ext = TAU * p.kappa_e_ext;
    let kappa_e_int = kappa_e - kappa_e_ext;
    if kappa_e_int < 0.0 {
        return Err(Error::InvalidParameter {
            name: "kappa_e_effective",
            reason: "LC linewidth below its external coupling".into(),
        });
    }

    #[rustfmt::skip]
    let m = SMatrix::<f64, 3, 5>::new(
        kappa_o_ext.sqrt(), kappa_o_int.sqrt(), 0.0, 0.0, 0.0,
        0.0, 0.0, kappa_e_ext.sqrt(), kappa_e_int.sqrt(), 0.0,
        0.0, 0.0, 0.0, 0.0, gamma_m.sqrt(),
    );
    let mut b = InputMatrix::zeros();
    b.fixed_view_mut::<3, 5>(0, 0).copy_from(&m);
    b.fixed_view_mut::<3, 5>(3, 5).copy_from(&m);

    let mut c = OutputMatrix::zeros();
    c[(0, 0)] = kappa_o_ext.sqrt();
    c[(1, 1)] = kappa_e_ext.sqrt();
    c[(2, 3)] = kappa_o_ext.sqrt();
    c[(3, 4)] = kappa_e_ext.sqrt();

    let mut d = FeedthroughMatrix::zeros();
    d[(0, 0)] = -1.0;
    d[(1, 2)] = -1.0;
    d[(2, 5)] = -1.0;
    d[(3, 7)] = -1.0;

    let model = StateSpaceModel {
        a_rwa,
        b,
        c,
        d,
        coupling_o,
        coupling_e,
        omega_m: TAU * p.omega_m,
        input_noise: [0.5; 10],
    };
    check_stability(&model.a_rwa)?;
    Ok(model)
}

/// Largest eigenvalue real part of `a`.
pub fn spectral_abscissa(a: &Mat6) -> f64 {
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

fn check_stability(a: &Mat6) -> Result<()> {
    let max_real_part = spectral_abscissa(a);
    if max_real_part.is_finite() && max_real_part < 0.0 {
        Ok(())
    } else {
        Err(Error::UnstableModel { max_real_part })
    }
}

/// Input-to-output response H(ω) = C(iωI − A_RWA)⁻¹B + D at frequency
/// `freq` (Hz, offset from the pumped resonances).
pub fn transfer_matrix(m: &StateSpaceModel, freq: f64) -> Result<TransferMatrix> {
    let omega = TAU * freq;
    let resolvent = Mat6::identity().map(|x| Complex64::new(0.0, omega * x))
        - m.a_rwa.map(|x| Complex64::new(x, 0.0));
    let lu = resolvent.lu();
    let b = m.b.map(|x| Complex64::new(x, 0.0));
    let x = lu.solve(&b).ok_or(Error::SingularMatrix {
        context: "transfer_matrix",
    })?;
    Ok(m.c.map(|x| Complex64::new(x, 0.0)) * x + m.d.map(|x| Complex64::new(x, 0.0)))
}

/// Steady-state covariance V solving A V + V Aᵀ + B N Bᵀ = 0.
pub fn steady_state_covariance(m: &StateSpaceModel) -> Result<Mat6> {
    let a = m.a_rwa;
    let q = m.diffusion();
    // vec(AV + VAᵀ) = (I⊗A + A⊗I) vec(V), column-major
    let mut kron = SMatrix::<f64, 36, 36>::zeros();
    for i in 0..6 {
        for j in 0..6 {
            for k in 0..6 {
                // (I⊗A): block (j,j) holds A
                kron[(j * 6 + i, j * 6 + k)] += a[(i, k)];
                // (A⊗I): block (j,k) holds a[(j,k)]·I
                kron[(j * 6 + i, k * 6 + i)] += a[(j, k)];
            }
        }
    }
    let rhs = SVector::<f64, 36>::from_iterator(q.iter().map(|x| -x));
    let vec_v = kron.lu().solve(&rhs).ok_or(Error::SingularMatrix {
        context: "steady_state_covariance",
    })?;
    let v = Mat6::from_iterator(vec_v.iter().copied());
    let v = (v + v.transpose()) * 0.5;
    let residual = lyapunov_residual(m, &v);
    let scale = q.norm();
    if residual > 1e-10 * scale {
        return Err(Error::NonConvergence(format!(
            "Lyapunov residual {residual:e} exceeds 1e-10·{scale:e}"
        )));
    }
    Ok(v)
}

/// Frobenius norm of A V + V Aᵀ + B N Bᵀ.
pub fn lyapunov_residual(m: &StateSpaceModel, v: &Mat6) -> f64 {
    (m.a_rwa * v + v * m.a_rwa.transpose() + m.diffusion()).norm()
}

/// Time-dependent input for [`propagate`].
pub trait Drive {
    fn at(&self, t: f64) -> Vec10;
}

impl<F: Fn(f64) -> Vec10> Drive for F {
    fn at(&self, t: f64) -> Vec10 {
        self(t)
    }
}

/// Zero input on every port.
pub struct NoDrive;

impl Drive for NoDrive {
    fn at(&self, _t: f64) -> Vec10 {
        Vec10::zeros()
    }
}

/// Per-port drive samples on a uniform grid, linearly interpolated and
/// zero outside the sampled span.
#[derive(Debug, Clone)]
pub struct SampledDrive {
    pub dt: f64,
    pub samples: Vec<Vec10>,
}

impl Drive for SampledDrive {
    fn at(&self, t: f64) -> Vec10 {
        if t < 0.0 || self.samples.is_empty() {
            return Vec10::zeros();
        }
        let pos = t / self.dt;
        let i = pos.floor() as usize;
        if i + 1 >= self.samples.len() {
            return if i + 1 == self.samples.len() && (pos - i as f64) < 1e-9 {
                self.samples[i]
            } else {
                Vec10::zeros()
            };
        }
        let f = pos - i as f64;
        self.samples[i] * (1.0 - f) + self.samples[i + 1] * f
    }
}

/// Sampled result of [`propagate`], including t = 0.
#[derive(Debug, Clone)]
pub struct Propagation {
    pub dt: f64,
    pub states: Vec<Vec6>,
    pub outputs: Vec<Vec4>,
}

impl Propagation {
    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.dt
    }

    /// Output port `port` as a plain series.
    pub fn output_series(&self, port: usize) -> Vec<f64> {
        self.outputs.iter().map(|y| y[port]).collect()
    }
}

/// Integrates ẋ = A(t)x + B·u(t) with classical fourth-order Runge-Kutta.
///
/// The step is fixed; it must satisfy [`StateSpaceModel::max_step`].
pub fn propagate(
    m: &StateSpaceModel,
    drive: &dyn Drive,
    x0: Vec6,
    dt: f64,
    t_end: f64,
    include_counter: bool,
) -> Result<Propagation> {
    ensure_positive("dt", dt)?;
    ensure_non_negative("t_end", t_end)?;
    let limit = m.max_step(include_counter);
    if dt > limit * (1.0 + 1e-12) {
        return Err(Error::StepTooLarge {
            dt,
            limit,
            context: if include_counter {
                "counter-rotating propagation"
            } else {
                "RWA propagation"
            },
        });
    }
    let steps = (t_end / dt).round() as usize;
    let mut states = Vec::with_capacity(steps + 1);
    let mut outputs = Vec::with_capacity(steps + 1);
    let rhs = |t: f64, x: &Vec6, u: &Vec10| m.a(t, include_counter) * x + m.b * u;

    let mut x = x0;
    let mut u0 = drive.at(0.0);
    states.push(x);
    outputs.push(m.c * x + m.d * u0);
    for n in 0..steps {
        let t = n as f64 * dt;
        let um = drive.at(t + 0.5 * dt);
        let u1 = drive.at(t + dt);
        let k1 = rhs(t, &x, &u0);
        let k2 = rhs(t + 0.5 * dt, &(x + k1 * (0.5 * dt)), &um);
        let k3 = rhs(t + 0.5 * dt, &(x + k2 * (0.5 * dt)), &um);
        let k4 = rhs(t + dt, &(x + k3 * dt), &u1);
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonConvergence(format!(
                "state diverged at t = {:e} s",
                t + dt
            )));
        }
        states.push(x);
        outputs.push(m.c * x + m.d * u1);
        u0 = u1;
    }
    Ok(Propagation {
        dt,
        states,
        outputs,
    })
}

/// Uniformly sampled quadrature pair (I, Q).
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureTrace {
    pub dt: f64,
    pub samples: Vec<(f64, f64)>,
    pub label: String,
}

impl QuadratureTrace {
    pub fn new(dt: f64, samples: Vec<(f64, f64)>, label: impl Into<String>) -> Result<Self> {
        ensure_positive("dt", dt)?;
        if samples.iter().any(|(i, q)| !i.is_finite() || !q.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "samples",
                reason: "trace contains non-finite values".into(),
            });
        }
        Ok(Self {
            dt,
            samples,
            label: label.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.dt * self.samples.len().saturating_sub(1) as f64
    }

    pub fn i(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.0)
    }

    pub fn q(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.1)
    }
}

/// Writes traces sharing one time grid as CSV: `t` followed by an I and a Q
/// column per trace.
pub fn write_traces_csv<W: Write>(mut w: W, traces: &[&QuadratureTrace]) -> Result<()> {
    let first = traces
        .first()
        .ok_or_else(|| Error::TraceMismatch("no traces to write".into()))?;
    for tr in traces {
        if tr.len() != first.len() || (tr.dt - first.dt).abs() > 1e-12 * first.dt {
            return Err(Error::TraceMismatch(format!(
                "trace `{}` does not share the time grid of `{}`",
                tr.label, first.label
            )));
        }
    }
    let io_err = |e: io::Error| Error::Config(format!("write failed: {e}"));
    let mut header = vec!["t".to_string()];
    for tr in traces {
        header.push(format!("I_{}", tr.label));
        header.push(format!("Q_{}", tr.label));
    }
    writeln!(w, "{}", header.join(",")).map_err(io_err)?;
    for k in 0..first.len() {
        let mut row = vec![format!("{:e}", k as f64 * first.dt)];
        for tr in traces {
            let (i, q) = tr.samples[k];
            row.push(format!("{i:e}"));
            row.push(format!("{q:e}"));
        }
        writeln!(w, "{}", row.join(",")).map_err(io_err)?;
    }
    Ok(())
}
