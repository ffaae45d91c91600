//! Fixed-step Runge–Kutta integration, forward and backward in time.
//!
//! Integrators are generic over [`Arith`], so a rollout recorded on a tape
//! is differentiable with respect to the initial state and to every
//! parameter the vector field reads.

use serde::{Deserialize, Serialize};

use crate::diffcore::Arith;
use crate::error::{Error, Result};

/// Slack allowed when a query time falls just outside a sampled signal.
pub const TIME_SLACK: f64 = 1e-9;

/// Uniform sampling times `t_i = t0 + i·dt`, `i < n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub dt: f64,
    pub n: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, dt: f64, n: usize) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Config(format!("time step must be positive, got {dt}")));
        }
        if n < 2 {
            return Err(Error::Config(format!("a time grid needs at least 2 samples, got {n}")));
        }
        Ok(TimeGrid { t0, dt, n })
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    pub fn t_end(&self) -> f64 {
        self.time(self.n - 1)
    }

    pub fn duration(&self) -> f64 {
        (self.n - 1) as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.time(i)).collect()
    }

    /// First `n` samples of this grid.
    pub fn prefix(&self, n: usize) -> Result<TimeGrid> {
        if n > self.n {
            return Err(Error::Precondition(format!(
                "window of {n} samples exceeds trajectory of {} samples",
                self.n
            )));
        }
        TimeGrid::new(self.t0, self.dt, n)
    }
}

/// Source of exogenous values over time.
pub trait Excitation: Sync {
    fn channels(&self) -> usize;
    fn sample(&self, t: f64, out: &mut Vec<f64>) -> Result<()>;
}

/// Channel-major samples on a [`TimeGrid`], stored row by row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampledSignal {
    pub grid: TimeGrid,
    pub channels: usize,
    pub values: Vec<f64>,
}

impl SampledSignal {
    pub fn new(grid: TimeGrid, channels: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n * channels {
            return Err(Error::dim("sampled signal", grid.n * channels, values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("sampled signal contains non-finite values".into()));
        }
        Ok(SampledSignal {
            grid,
            channels,
            values,
        })
    }

    pub fn from_rows(grid: TimeGrid, rows: &[Vec<f64>]) -> Result<Self> {
        let channels = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != channels) {
            return Err(Error::Config("ragged signal rows".into()));
        }
        Self::new(grid, channels, rows.concat())
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.channels..(i + 1) * self.channels]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.channels.max(1)).take(self.grid.n)
    }

    /// First `n` samples.
    pub fn prefix(&self, n: usize) -> Result<SampledSignal> {
        let grid = self.grid.prefix(n)?;
        Ok(SampledSignal {
            grid,
            channels: self.channels,
            values: self.values[..n * self.channels].to_vec(),
        })
    }

    /// Channels `[from, from + count)` of every row.
    pub fn select(&self, from: usize, count: usize) -> SampledSignal {
        let values = self.rows().flat_map(|r| r[from..from + count].iter().copied()).collect();
        SampledSignal {
            grid: self.grid,
            channels: count,
            values,
        }
    }

    /// Row-wise concatenation of two signals on the same grid.
    pub fn stack(&self, other: &SampledSignal) -> Result<SampledSignal> {
        if self.grid != other.grid {
            return Err(Error::Config("stacked signals must share a time grid".into()));
        }
        let values = self
            .rows()
            .zip(other.rows())
            .flat_map(|(a, b)| a.iter().chain(b).copied().collect::<Vec<_>>())
            .collect();
        Ok(SampledSignal {
            grid: self.grid,
            channels: self.channels + other.channels,
            values,
        })
    }

    /// Piecewise-linear value at `t`, exact at grid points.
    pub fn interpolate(&self, t: f64) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.channels);
        self.interpolate_into(t, &mut out)?;
        Ok(out)
    }

    pub fn interpolate_into(&self, t: f64, out: &mut Vec<f64>) -> Result<()> {
        let g = &self.grid;
        let (start, end) = (g.t0, g.t_end());
        if !(t >= start - TIME_SLACK && t <= end + TIME_SLACK) {
            return Err(Error::OutOfDomain { t, start, end });
        }
        out.clear();
        let mut s = ((t - start) / g.dt).clamp(0.0, (g.n - 1) as f64);
        if (s - s.round()).abs() < 1e-9 {
            s = s.round();
        }
        let i = (s.floor() as usize).min(g.n - 2);
        let frac = s - i as f64;
        let (a, b) = (self.row(i), self.row(i + 1));
        if frac == 0.0 {
            out.extend_from_slice(a);
        } else if frac == 1.0 {
            out.extend_from_slice(b);
        } else {
            out.extend(a.iter().zip(b).map(|(x, y)| x + frac * (y - x)));
        }
        Ok(())
    }
}

impl Excitation for SampledSignal {
    fn channels(&self) -> usize {
        self.channels
    }

    fn sample(&self, t: f64, out: &mut Vec<f64>) -> Result<()> {
        self.interpolate_into(t, out)
    }
}

fn check_finite<A: Arith>(ar: &A, k: &[A::V], t: f64) -> Result<()> {
    if k.iter().all(|&v| ar.val(v).is_finite()) {
        Ok(())
    } else {
        Err(Error::Integration { t })
    }
}

fn sample_input(input: Option<&dyn Excitation>, t: f64, buf: &mut Vec<f64>) -> Result<()> {
    match input {
        Some(src) => src.sample(t, buf),
        None => {
            buf.clear();
            Ok(())
        }
    }
}

/// One classical RK4 step of size `dt` (negative for backward time).
///
/// `field(ar, t, x, u)` returns `ẋ`; `u` is sampled from `input` at
/// `t`, `t + dt/2` and `t + dt`.
pub fn rk4_step<A, F>(
    ar: &mut A,
    field: &mut F,
    t: f64,
    x: &[A::V],
    dt: f64,
    input: Option<&dyn Excitation>,
) -> Result<Vec<A::V>>
where
    A: Arith,
    F: FnMut(&mut A, f64, &[A::V], &[f64]) -> Result<Vec<A::V>>,
{
    if dt == 0.0 || !dt.is_finite() {
        return Err(Error::Config(format!("invalid step size {dt}")));
    }
    let mut u = Vec::new();
    let half = 0.5 * dt;

    sample_input(input, t, &mut u)?;
    let k1 = field(ar, t, x, &u)?;
    check_finite(ar, &k1, t)?;
    if k1.len() != x.len() {
        return Err(Error::dim("vector field output", x.len(), k1.len()));
    }

    sample_input(input, t + half, &mut u)?;
    let x2: Vec<A::V> = x.iter().zip(&k1).map(|(&xi, &ki)| ar.lin2(xi, 1.0, ki, half)).collect();
    let k2 = field(ar, t + half, &x2, &u)?;
    check_finite(ar, &k2, t + half)?;

    let x3: Vec<A::V> = x.iter().zip(&k2).map(|(&xi, &ki)| ar.lin2(xi, 1.0, ki, half)).collect();
    let k3 = field(ar, t + half, &x3, &u)?;
    check_finite(ar, &k3, t + half)?;

    sample_input(input, t + dt, &mut u)?;
    let x4: Vec<A::V> = x.iter().zip(&k3).map(|(&xi, &ki)| ar.lin2(xi, 1.0, ki, dt)).collect();
    let k4 = field(ar, t + dt, &x4, &u)?;
    check_finite(ar, &k4, t + dt)?;

    Ok((0..x.len())
        .map(|i| ar.rk4_combine(x[i], [k1[i], k2[i], k3[i], k4[i]], dt))
        .collect())
}

/// Forward rollout on `grid`; row `i` is the state at `t_i`, row 0 is `x0`.
pub fn integrate<A, F>(
    ar: &mut A,
    mut field: F,
    x0: &[A::V],
    grid: &TimeGrid,
    input: Option<&dyn Excitation>,
) -> Result<Vec<Vec<A::V>>>
where
    A: Arith,
    F: FnMut(&mut A, f64, &[A::V], &[f64]) -> Result<Vec<A::V>>,
{
    integrate_substeps(ar, &mut field, x0, grid, input, 1)
}

/// Forward rollout taking `substeps` RK4 steps per grid interval.
pub fn integrate_substeps<A, F>(
    ar: &mut A,
    field: &mut F,
    x0: &[A::V],
    grid: &TimeGrid,
    input: Option<&dyn Excitation>,
    substeps: usize,
) -> Result<Vec<Vec<A::V>>>
where
    A: Arith,
    F: FnMut(&mut A, f64, &[A::V], &[f64]) -> Result<Vec<A::V>>,
{
    if x0.iter().any(|&v| !ar.val(v).is_finite()) {
        return Err(Error::Integration { t: grid.t0 });
    }
    let substeps = substeps.max(1);
    let h = grid.dt / substeps as f64;
    let mut rows = Vec::with_capacity(grid.n);
    rows.push(x0.to_vec());
    let mut x = x0.to_vec();
    for i in 0..grid.n - 1 {
        let ti = grid.time(i);
        for s in 0..substeps {
            x = rk4_step(ar, field, ti + s as f64 * h, &x, h, input)?;
        }
        rows.push(x.clone());
    }
    Ok(rows)
}

/// Rollout from `x_end` at the last grid time down to `t0`.
///
/// Equivalent to integrating `dz/ds = field(t_end − s, z)` forward in `s`
/// with the driver read at `t_end − s`, so a Hurwitz linear filter stays
/// stable while it sweeps the signal from its end to its start. Rows are indexed on the original
/// grid: row `n − 1` is `x_end` and row 0 is the state at `t0`.
pub fn integrate_backward<A, F>(
    ar: &mut A,
    mut field: F,
    x_end: &[A::V],
    grid: &TimeGrid,
    driver: Option<&dyn Excitation>,
) -> Result<Vec<Vec<A::V>>>
where
    A: Arith,
    F: FnMut(&mut A, f64, &[A::V], &[f64]) -> Result<Vec<A::V>>,
{
    if x_end.iter().any(|&v| !ar.val(v).is_finite()) {
        return Err(Error::Integration { t: grid.t_end() });
    }
    // a step of −dt on −field advances s by dt under +field
    let mut reversed = |ar: &mut A, t: f64, x: &[A::V], u: &[f64]| -> Result<Vec<A::V>> {
        let v = field(ar, t, x, u)?;
        Ok(v.into_iter().map(|vi| ar.neg(vi)).collect())
    };
    let mut rows = vec![Vec::new(); grid.n];
    rows[grid.n - 1] = x_end.to_vec();
    let mut x = x_end.to_vec();
    for i in (1..grid.n).rev() {
        x = rk4_step(ar, &mut reversed, grid.time(i), &x, -grid.dt, driver)?;
        rows[i - 1] = x.clone();
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{Eval, Tape};

    fn harmonic<A: Arith>(ar: &mut A, _t: f64, x: &[A::V], _u: &[f64]) -> Result<Vec<A::V>> {
        let v = ar.neg(x[0]);
        Ok(vec![x[1], v])
    }

    fn grid(t0: f64, dt: f64, n: usize) -> TimeGrid {
        TimeGrid::new(t0, dt, n).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(TimeGrid::new(0.0, 0.0, 3).is_err());
        assert!(TimeGrid::new(0.0, 0.1, 1).is_err());
        let g = grid(1.0, 0.5, 3);
        assert_eq!(g.times(), vec![1.0, 1.5, 2.0]);
    }

    #[test]
    fn interpolation_examples() {
        let s = SampledSignal::new(grid(0.0, 1.0, 2), 1, vec![0.0, 2.0]).unwrap();
        assert_eq!(s.interpolate(0.5).unwrap(), vec![1.0]);
        assert_eq!(s.interpolate(1.0).unwrap(), vec![2.0]);
        let s = SampledSignal::new(grid(0.0, 1.0, 3), 1, vec![1.0, 1.0, 3.0]).unwrap();
        assert_eq!(s.interpolate(1.5).unwrap(), vec![2.0]);
        assert_eq!(s.interpolate(1.0).unwrap(), vec![1.0]);
        assert!(matches!(s.interpolate(2.1), Err(Error::OutOfDomain { .. })));
        assert!(s.interpolate(2.0 + 1e-10).is_ok());
        assert!(s.interpolate(-1e-3).is_err());
    }

    #[test]
    fn interpolation_is_exact_on_grid_points() {
        let vals: Vec<f64> = (0..7).map(|i| (i as f64 * 0.37).sin()).collect();
        let g = grid(0.2, 0.03, 7);
        let s = SampledSignal::new(g, 1, vals.clone()).unwrap();
        for (i, v) in vals.iter().enumerate() {
            assert_eq!(s.interpolate(g.time(i)).unwrap()[0], *v);
        }
    }

    #[test]
    fn zero_field_keeps_state() {
        let mut zero = |ar: &mut Eval, _t: f64, x: &[f64], _u: &[f64]| Ok(x.iter().map(|_| ar.cst(0.0)).collect());
        let x = rk4_step(&mut Eval, &mut zero, 0.0, &[1.0, -2.0], 0.1, None).unwrap();
        assert_eq!(x, vec![1.0, -2.0]);
        let rows = integrate(&mut Eval, zero, &[3.0], &grid(0.0, 0.1, 5), None).unwrap();
        assert!(rows.iter().all(|r| r == &vec![3.0]));
    }

    #[test]
    fn decay_step_equals_taylor_polynomial() {
        let mut decay = |ar: &mut Eval, _t: f64, x: &[f64], _u: &[f64]| Ok(vec![ar.neg(x[0])]);
        let x = rk4_step(&mut Eval, &mut decay, 0.0, &[1.0], 0.1, None).unwrap();
        let h: f64 = 0.1;
        let taylor = 1.0 - h + h * h / 2.0 - h.powi(3) / 6.0 + h.powi(4) / 24.0;
        assert!((x[0] - taylor).abs() < 1e-15);
        assert!((x[0] - 0.904_837_5).abs() < 1e-7);
    }

    #[test]
    fn constant_field_is_exact() {
        let mut one = |ar: &mut Eval, _t: f64, _x: &[f64], _u: &[f64]| Ok(vec![ar.cst(1.0)]);
        let x = rk4_step(&mut Eval, &mut one, 0.0, &[0.0], 0.5, None).unwrap();
        assert_eq!(x, vec![0.5]);
    }

    #[test]
    fn exact_for_cubic_time_polynomials() {
        // ẋ = 1 + 2t − 3t² + 4t³, x(0) = 0.5
        let poly = |t: f64| 1.0 + 2.0 * t - 3.0 * t * t + 4.0 * t.powi(3);
        let exact = |t: f64| 0.5 + t + t * t - t.powi(3) + t.powi(4);
        let rows = integrate(
            &mut Eval,
            |ar: &mut Eval, t: f64, _x: &[f64], _u: &[f64]| Ok(vec![ar.cst(poly(t))]),
            &[0.5],
            &grid(0.0, 0.25, 9),
            None,
        )
        .unwrap();
        for (i, r) in rows.iter().enumerate() {
            let t = 0.25 * i as f64;
            assert!((r[0] - exact(t)).abs() < 1e-13, "t={t}");
        }
    }

    #[test]
    fn harmonic_oscillator_matches_cosine() {
        let rows = integrate(&mut Eval, harmonic, &[1.0, 0.0], &grid(0.0, 0.001, 3001), None).unwrap();
        assert!((rows[3000][0] - 3f64.cos()).abs() < 1e-6);
        assert!((rows[3000][0] + 0.989_992_5).abs() < 1e-6);
    }

    #[test]
    fn fourth_order_convergence() {
        let err = |dt: f64| {
            let n = (3.0 / dt).round() as usize + 1;
            let rows = integrate(&mut Eval, harmonic, &[1.0, 0.0], &grid(0.0, dt, n), None).unwrap();
            (rows[n - 1][0] - 3f64.cos()).abs()
        };
        let ratio = err(0.1) / err(0.05);
        let order = ratio.log2();
        assert!((3.5..=4.5).contains(&order), "order {order}");
    }

    #[test]
    fn reverse_exponential() {
        let g = grid(0.0, 0.001, 1001);
        let rows = integrate_backward(
            &mut Eval,
            |_ar: &mut Eval, _t: f64, x: &[f64], _u: &[f64]| Ok(vec![x[0]]),
            &[1.0],
            &g,
            None,
        )
        .unwrap();
        assert_eq!(rows[1000][0], 1.0);
        assert!((rows[0][0] - std::f64::consts::E).abs() < 1e-9);
    }

    #[test]
    fn backward_then_forward_round_trip() {
        let vdp = |ar: &mut Eval, _t: f64, x: &[f64], _u: &[f64]| {
            let (x1, x2) = (x[0], x[1]);
            Ok(vec![x2, ar.cst((1.0 - x1 * x1) * x2 - x1)])
        };
        let reversed = |ar: &mut Eval, t: f64, x: &[f64], u: &[f64]| {
            let v: Vec<f64> = vdp(ar, t, x, u)?;
            Ok(v.into_iter().map(|vi| -vi).collect())
        };
        let g = grid(0.0, 1e-3, 1001);
        let x_end = [1.2, -0.4];
        // running the reversed field backward retraces the true past
        let back = integrate_backward(&mut Eval, reversed, &x_end, &g, None).unwrap();
        let fwd = integrate(&mut Eval, vdp, &back[0], &g, None).unwrap();
        for k in 0..2 {
            assert!((fwd[1000][k] - x_end[k]).abs() < 1e-6);
        }
    }

    #[test]
    fn driver_read_in_reversed_time() {
        // dz/ds = u(2 − s) with u(t) = t: z(t=0) = ∫₀² (2 − s) ds = 2
        let g = grid(0.0, 0.5, 5);
        let drive = SampledSignal::new(g, 1, g.times()).unwrap();
        let rows = integrate_backward(
            &mut Eval,
            |ar: &mut Eval, _t: f64, _x: &[f64], u: &[f64]| Ok(vec![ar.cst(u[0])]),
            &[0.0],
            &g,
            Some(&drive),
        )
        .unwrap();
        assert!((rows[0][0] - 2.0).abs() < 1e-14);
        assert!((rows[2][0] - 1.5).abs() < 1e-14);
    }

    #[test]
    fn non_finite_field_reports_time() {
        let mut bad = |ar: &mut Eval, t: f64, _x: &[f64], _u: &[f64]| Ok(vec![ar.cst(if t > 0.25 { f64::NAN } else { 0.0 })]);
        let err = integrate_substeps(&mut Eval, &mut bad, &[0.0], &grid(0.0, 0.1, 5), None, 1).unwrap_err();
        // first evaluation past 0.25 is the last stage of the step at 0.2
        assert_eq!(err, Error::Integration { t: 0.2 + 0.1 });
    }

    #[test]
    fn endpoint_gradient_matches_differences() {
        let g = grid(0.0, 0.1, 11);
        let damped = |ar: &mut Tape, _t: f64, x: &[crate::diffcore::Var], _u: &[f64]| {
            let s = ar.sin(x[0]);
            let v = ar.lin2(s, -1.0, x[1], -0.3);
            Ok(vec![x[1], v])
        };
        let f = |x0: [f64; 2]| {
            let rows = integrate(
                &mut Eval,
                |ar: &mut Eval, _t: f64, x: &[f64], _u: &[f64]| {
                    let s = ar.sin(x[0]);
                    Ok(vec![x[1], -s - 0.3 * x[1]])
                },
                &x0,
                &g,
                None,
            )
            .unwrap();
            rows[10][0] * rows[10][0] + rows[10][1]
        };
        let mut t = Tape::new();
        let x0 = t.vars(&[0.7, -0.2]);
        let rows = integrate(&mut t, damped, &x0, &g, None).unwrap();
        let sq = t.square(rows[10][0]);
        let loss = t.add(sq, rows[10][1]);
        let gr = t.backward(loss);
        let h = 1e-6;
        for k in 0..2 {
            let mut p = [0.7, -0.2];
            let mut m = p;
            p[k] += h;
            m[k] -= h;
            let fd = (f(p) - f(m)) / (2.0 * h);
            let rel = (gr.wrt(x0[k]) - fd).abs() / fd.abs().max(1e-12);
            assert!(rel < 1e-5, "rel {rel}");
        }
    }
}
