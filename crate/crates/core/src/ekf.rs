//! Discrete-time extended Kalman filter over learned or true vector fields.

use nalgebra::{DMatrix, DVector};

use crate::benchsys::System;
use crate::diffcore::{Arith, Eval, Tape};
use crate::error::{Error, Result};
use crate::odesolve::{rk4_step, Excitation, SampledSignal, TimeGrid};
use crate::priors::ModelSpec;

/// Finite-difference step of [`FilterDynamics::jacobian`]'s default.
pub const FD_STEP: f64 = 1e-6;
/// Default process-noise intensity.
pub const DEFAULT_Q: f64 = 1e-4;

/// Vector field the filter propagates.
pub trait FilterDynamics {
    fn dim(&self) -> usize;
    fn field(&self, t: f64, x: &[f64], u: &[f64]) -> Result<Vec<f64>>;

    /// `∂f/∂x` at `(t, x, u)`, by central differences unless overridden.
    fn jacobian(&self, t: f64, x: &[f64], u: &[f64]) -> Result<DMatrix<f64>> {
        let d = self.dim();
        let mut a = DMatrix::zeros(d, d);
        let mut xp = x.to_vec();
        for j in 0..d {
            let h = FD_STEP * x[j].abs().max(1.0);
            xp[j] = x[j] + h;
            let fp = self.field(t, &xp, u)?;
            xp[j] = x[j] - h;
            let fm = self.field(t, &xp, u)?;
            xp[j] = x[j];
            for i in 0..d {
                a[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        Ok(a)
    }
}

fn tape_jacobian<F>(d: usize, x: &[f64], mut record: F) -> Result<DMatrix<f64>>
where
    F: FnMut(&mut Tape, &[crate::diffcore::Var]) -> Result<Vec<crate::diffcore::Var>>,
{
    let mut tape = Tape::new();
    let xv = tape.vars(x);
    let out = record(&mut tape, &xv)?;
    if out.len() != d {
        return Err(Error::dim("vector field output", d, out.len()));
    }
    let mut a = DMatrix::zeros(d, d);
    for (i, &o) in out.iter().enumerate() {
        let g = tape.backward(o).wrt_all(&xv);
        for j in 0..d {
            a[(i, j)] = g[j];
        }
    }
    Ok(a)
}

/// A trained (or hand-set) model with its parameter values.
pub struct ModelDynamics<'a> {
    pub model: &'a ModelSpec,
    pub params: &'a [f64],
}

impl FilterDynamics for ModelDynamics<'_> {
    fn dim(&self) -> usize {
        self.model.state_dim
    }

    fn field(&self, t: f64, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        self.model.eval_field(&mut Eval, self.params, t, x, u)
    }

    fn jacobian(&self, t: f64, x: &[f64], u: &[f64]) -> Result<DMatrix<f64>> {
        tape_jacobian(self.dim(), x, |tape, xv| {
            let p = tape.csts(self.params);
            self.model.eval_field(tape, &p, t, xv, u)
        })
    }
}

/// A benchmark system at its true constants.
pub struct SystemDynamics<'a>(pub &'a System);

impl FilterDynamics for SystemDynamics<'_> {
    fn dim(&self) -> usize {
        self.0.d_x()
    }

    fn field(&self, _t: f64, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        self.0.true_field(x, u)
    }

    fn jacobian(&self, _t: f64, x: &[f64], u: &[f64]) -> Result<DMatrix<f64>> {
        tape_jacobian(self.dim(), x, |tape, xv| {
            let p = tape.csts(&self.0.params());
            self.0.field_with(tape, &p, xv, u)
        })
    }
}

/// Any `f(t, x, u)`; Jacobians by finite differences.
pub struct FnDynamics<F> {
    pub dim: usize,
    pub f: F,
}

impl<F> FilterDynamics for FnDynamics<F>
where
    F: Fn(f64, &[f64], &[f64]) -> Result<Vec<f64>>,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn field(&self, t: f64, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        (self.f)(t, x, u)
    }
}

/// Gaussian belief over the state.
#[derive(Clone, Debug, PartialEq)]
pub struct EkfState {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl EkfState {
    pub fn new(mean: &[f64], cov: DMatrix<f64>) -> Result<EkfState> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::dim("covariance", mean.len(), cov.nrows()));
        }
        Ok(EkfState {
            mean: DVector::from_column_slice(mean),
            cov,
        })
    }

    /// Largest asymmetry `|P − Pᵀ|`.
    pub fn asymmetry(&self) -> f64 {
        (&self.cov - self.cov.transpose()).abs().max()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.cov.clone().symmetric_eigenvalues().min()
    }
}

/// Noise covariances, step and the measured state channels.
#[derive(Clone, Debug, PartialEq)]
pub struct EkfConfig {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub dt: f64,
    pub measured: Vec<usize>,
}

impl EkfConfig {
    /// `Q = 1e−4·I`, `R = r_var·I`.
    pub fn isotropic(d_x: usize, measured: Vec<usize>, dt: f64, r_var: f64) -> EkfConfig {
        let d_y = measured.len();
        EkfConfig {
            q: DMatrix::identity(d_x, d_x) * DEFAULT_Q,
            r: DMatrix::identity(d_y, d_y) * r_var,
            dt,
            measured,
        }
    }

    /// Output selector matrix.
    pub fn h(&self, d_x: usize) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.measured.len(), d_x);
        for (i, &k) in self.measured.iter().enumerate() {
            h[(i, k)] = 1.0;
        }
        h
    }
}

fn symmetrize(p: &DMatrix<f64>) -> DMatrix<f64> {
    (p + p.transpose()) * 0.5
}

/// Time update over one step starting at `t`.
pub fn ekf_predict(
    dynamics: &impl FilterDynamics,
    state: &EkfState,
    t: f64,
    input: Option<&dyn Excitation>,
    cfg: &EkfConfig,
) -> Result<EkfState> {
    if !(cfg.dt > 0.0) {
        return Err(Error::Config(format!("filter step must be positive, got {}", cfg.dt)));
    }
    let d = dynamics.dim();
    if state.mean.len() != d {
        return Err(Error::dim("filter state", d, state.mean.len()));
    }
    let mut u = Vec::new();
    if let Some(inp) = input {
        inp.sample(t, &mut u)?;
    }
    let a = dynamics.jacobian(t, state.mean.as_slice(), &u)?;
    let mut field = |_: &mut Eval, t: f64, x: &[f64], u: &[f64]| dynamics.field(t, x, u);
    let mean = rk4_step(&mut Eval, &mut field, t, state.mean.as_slice(), cfg.dt, input)
        .map_err(|_| Error::FilterDivergence(format!("mean propagation failed at t = {t}")))?;
    let phi = DMatrix::identity(d, d) + a * cfg.dt;
    let cov = symmetrize(&(&phi * &state.cov * phi.transpose() + &cfg.q * cfg.dt));
    if mean.iter().any(|v| !v.is_finite()) || cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::FilterDivergence(format!("non-finite prediction at t = {t}")));
    }
    Ok(EkfState {
        mean: DVector::from_vec(mean),
        cov,
    })
}

/// Measurement update with `y` of the selected channels.
pub fn ekf_update(state: &EkfState, y: &[f64], cfg: &EkfConfig) -> Result<EkfState> {
    let d = state.mean.len();
    if y.len() != cfg.measured.len() {
        return Err(Error::dim("measurement", cfg.measured.len(), y.len()));
    }
    if let Some(&k) = cfg.measured.iter().find(|&&k| k >= d) {
        return Err(Error::Config(format!("measured channel {k} outside a state of dimension {d}")));
    }
    let h = cfg.h(d);
    let pht = &state.cov * h.transpose();
    let s = &h * &pht + &cfg.r;
    let s_inv = s.try_inverse().ok_or_else(|| Error::Singular("innovation covariance is not invertible".into()))?;
    let gain = pht * s_inv;
    let innovation = DVector::from_column_slice(y) - &h * &state.mean;
    let mean = &state.mean + &gain * innovation;
    let cov = symmetrize(&((DMatrix::identity(d, d) - &gain * &h) * &state.cov));
    if mean.iter().any(|v| !v.is_finite()) || cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::FilterDivergence("non-finite measurement update".into()));
    }
    Ok(EkfState { mean, cov })
}

/// Filters `y` from `initial`: update at every sample, predict between.
/// Row `i` of the result is the posterior mean at `t_i`.
pub fn run_filter(
    dynamics: &impl FilterDynamics,
    initial: EkfState,
    y: &SampledSignal,
    input: Option<&dyn Excitation>,
    cfg: &EkfConfig,
) -> Result<Vec<Vec<f64>>> {
    let grid = y.grid;
    if (grid.dt - cfg.dt).abs() > 1e-12 * grid.dt {
        return Err(Error::Config(format!(
            "filter step {} differs from the measurement step {}",
            cfg.dt, grid.dt
        )));
    }
    let mut state = initial;
    let mut out = Vec::with_capacity(grid.n);
    for i in 0..grid.n {
        if i > 0 {
            state = ekf_predict(dynamics, &state, grid.time(i - 1), input, cfg)?;
        }
        state = ekf_update(&state, y.row(i), cfg)?;
        out.push(state.mean.iter().copied().collect());
    }
    Ok(out)
}

/// Rollout of the mean alone, without measurements.
pub fn open_loop(dynamics: &impl FilterDynamics, x0: &[f64], grid: &TimeGrid, input: Option<&dyn Excitation>) -> Result<Vec<Vec<f64>>> {
    crate::odesolve::integrate(
        &mut Eval,
        |_: &mut Eval, t: f64, x: &[f64], u: &[f64]| dynamics.field(t, x, u),
        x0,
        grid,
        input,
    )
}

/// RMSE over all state channels and samples.
pub fn state_rmse(estimate: &[Vec<f64>], truth: &[Vec<f64>]) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (a, b) in estimate.iter().zip(truth) {
        for (p, q) in a.iter().zip(b) {
            sum += (p - q) * (p - q);
            count += 1;
        }
    }
    (sum / count.max(1) as f64).sqrt()
}
