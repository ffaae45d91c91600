//! KKL observer gains, backward-time observer simulation and the
//! recognition models that map an output window to an initial state.

use std::f64::consts::PI;

use nalgebra::{Complex, DMatrix};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Arith, Gru, Mlp, ParamSet};
use crate::error::{Error, Result};
use crate::odesolve::{integrate_backward, SampledSignal};

/// Upper bound enforced on every real part of a trainable `D`.
pub const HURWITZ_MARGIN: f64 = 1e-3;

/// Relative singular-value threshold for numerical rank.
pub const RANK_TOL: f64 = 1e-8;

const PAIR_TOL: f64 = 1e-12;

/// Poles `ω0·exp(iπ(2k + order − 1)/(2·order))`, `k = 1..=order`, with `ω0 = 2π·omega_c`.
pub fn butterworth_poles(order: usize, omega_c: f64) -> Vec<Complex<f64>> {
    let w0 = 2.0 * PI * omega_c;
    (1..=order)
        .map(|k| {
            let theta = PI * (2 * k + order - 1) as f64 / (2 * order) as f64;
            let p = Complex::from_polar(w0, theta);
            // the middle pole of an odd order is real up to rounding
            if p.im.abs() < PAIR_TOL * w0 {
                Complex::new(p.re, 0.0)
            } else {
                p
            }
        })
        .collect()
}

enum Block {
    Real(f64),
    Pair(f64, f64),
}

fn realify(poles: &[Complex<f64>]) -> Result<Vec<Block>> {
    let scale = poles.iter().map(|p| p.norm()).fold(1.0, f64::max);
    let tol = 1e-9 * scale;
    let mut used = vec![false; poles.len()];
    let mut blocks = Vec::new();
    for i in 0..poles.len() {
        if used[i] {
            continue;
        }
        used[i] = true;
        let p = poles[i];
        if p.im.abs() <= tol {
            blocks.push(Block::Real(p.re));
            continue;
        }
        let partner = (0..poles.len()).find(|&j| !used[j] && (poles[j] - p.conj()).norm() <= tol);
        match partner {
            Some(j) => {
                used[j] = true;
                blocks.push(Block::Pair(p.re, p.im.abs()));
            }
            None => {
                return Err(Error::Config(format!(
                    "complex pole {} + {}i has no conjugate partner",
                    p.re, p.im
                )))
            }
        }
    }
    Ok(blocks)
}

fn block_matrix(blocks: &[Block]) -> DMatrix<f64> {
    let n = blocks.iter().map(|b| if let Block::Pair(..) = b { 2 } else { 1 }).sum();
    let mut d = DMatrix::zeros(n, n);
    let mut i = 0;
    for b in blocks {
        match *b {
            Block::Real(p) => {
                d[(i, i)] = p;
                i += 1;
            }
            Block::Pair(re, im) => {
                d[(i, i)] = re;
                d[(i, i + 1)] = im;
                d[(i + 1, i)] = -im;
                d[(i + 1, i + 1)] = re;
                i += 2;
            }
        }
    }
    d
}

/// Real block-diagonal matrix with the given eigenvalues.
///
/// A real pole gives a 1×1 block, a conjugate pair gives
/// `[[Re, Im], [−Im, Re]]` with `Im > 0`.
pub fn build_d(poles: &[Complex<f64>]) -> Result<DMatrix<f64>> {
    Ok(block_matrix(&realify(poles)?))
}

/// Result of [`check_gains`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GainCheck {
    pub hurwitz: bool,
    pub controllable: bool,
}

/// Numerical rank with singular values above `RANK_TOL·σ_max`.
pub fn rank(m: &DMatrix<f64>) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.max();
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOL * max).count()
}

/// `[F, DF, …, D^(n−1)F]` with every column scaled to unit norm.
///
/// Column scaling leaves the rank unchanged and keeps high powers of a
/// fast `D` from swamping the tolerance.
pub fn controllability_matrix(d: &DMatrix<f64>, f: &DMatrix<f64>) -> DMatrix<f64> {
    let n = d.nrows();
    let m = f.ncols();
    let mut out = DMatrix::zeros(n, n * m);
    let mut block = f.clone();
    for k in 0..n {
        for j in 0..m {
            let col = block.column(j);
            let norm = col.norm();
            let scaled = if norm > 0.0 { col / norm } else { col.into_owned() };
            out.set_column(k * m + j, &scaled);
        }
        block = d * &block;
    }
    out
}

/// Hurwitz test from eigenvalues and controllability rank test of `(D, F)`.
pub fn check_gains(d: &DMatrix<f64>, f: &DMatrix<f64>) -> Result<GainCheck> {
    if !d.is_square() {
        return Err(Error::dim("observer matrix D columns", d.nrows(), d.ncols()));
    }
    if f.nrows() != d.nrows() {
        return Err(Error::dim("observer matrix F rows", d.nrows(), f.nrows()));
    }
    let hurwitz = d.clone().complex_eigenvalues().iter().all(|l| l.re < 0.0);
    let controllable = rank(&controllability_matrix(d, f)) == d.nrows();
    Ok(GainCheck { hurwitz, controllable })
}

/// How `D` is initialized.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DInit {
    /// Butterworth poles at the given cutoff in hertz.
    Butterworth { omega_c: f64 },
    /// `diag(−1, …, −d_z)`.
    Diagonal,
}

impl Default for DInit {
    fn default() -> Self {
        DInit::Butterworth { omega_c: 1.0 }
    }
}

impl DInit {
    pub fn poles(&self, d_z: usize) -> Vec<Complex<f64>> {
        match *self {
            DInit::Butterworth { omega_c } => butterworth_poles(d_z, omega_c),
            DInit::Diagonal => (1..=d_z).map(|k| Complex::new(-(k as f64), 0.0)).collect(),
        }
    }
}

/// Block-parametrized observer gains stored in a [`ParamSet`].
///
/// The block holds the real poles followed by `(Re, Im)` of each complex
/// pair. `F` is the all-ones matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KklGains {
    pub n_real: usize,
    pub n_pairs: usize,
    pub d_in: usize,
    pub offset: usize,
    pub trainable: bool,
}

impl KklGains {
    pub fn register(params: &mut ParamSet, name: &str, poles: &[Complex<f64>], d_in: usize, trainable: bool) -> Result<KklGains> {
        if poles.is_empty() || d_in == 0 {
            return Err(Error::Config("observer needs at least one pole and one input".into()));
        }
        let blocks = realify(poles)?;
        let mut values: Vec<f64> = blocks
            .iter()
            .filter_map(|b| if let Block::Real(p) = b { Some(*p) } else { None })
            .collect();
        let n_real = values.len();
        for b in &blocks {
            if let Block::Pair(re, im) = *b {
                values.extend([re, im]);
            }
        }
        let offset = params.push_block(name, values, trainable);
        Ok(KklGains {
            n_real,
            n_pairs: blocks.len() - n_real,
            d_in,
            offset,
            trainable,
        })
    }

    pub fn d_z(&self) -> usize {
        self.n_real + 2 * self.n_pairs
    }

    pub fn param_count(&self) -> usize {
        self.d_z()
    }

    fn blocks(&self, values: &[f64]) -> Vec<Block> {
        let p = &values[self.offset..self.offset + self.param_count()];
        let mut out: Vec<Block> = p[..self.n_real].iter().map(|&r| Block::Real(r)).collect();
        out.extend(p[self.n_real..].chunks(2).map(|c| Block::Pair(c[0], c[1])));
        out
    }

    pub fn d_matrix(&self, values: &[f64]) -> DMatrix<f64> {
        block_matrix(&self.blocks(values))
    }

    pub fn f_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_element(self.d_z(), self.d_in, 1.0)
    }

    pub fn poles(&self, values: &[f64]) -> Vec<Complex<f64>> {
        let mut out = Vec::with_capacity(self.d_z());
        for b in self.blocks(values) {
            match b {
                Block::Real(p) => out.push(Complex::new(p, 0.0)),
                Block::Pair(re, im) => out.extend([Complex::new(re, im), Complex::new(re, -im)]),
            }
        }
        out
    }

    /// Hurwitz test read directly off the block parametrization.
    pub fn is_hurwitz(&self, values: &[f64]) -> bool {
        self.blocks(values).iter().all(|b| match *b {
            Block::Real(p) => p < 0.0,
            Block::Pair(re, _) => re < 0.0,
        })
    }

    pub fn check(&self, values: &[f64]) -> GainCheck {
        let controllable = rank(&controllability_matrix(&self.d_matrix(values), &self.f_matrix())) == self.d_z();
        GainCheck {
            hurwitz: self.is_hurwitz(values),
            controllable,
        }
    }

    /// Projects every real part back to `≤ −HURWITZ_MARGIN`.
    pub fn clamp(&self, values: &mut [f64]) {
        let base = self.offset;
        for i in 0..self.n_real {
            values[base + i] = values[base + i].min(-HURWITZ_MARGIN);
        }
        for k in 0..self.n_pairs {
            let i = base + self.n_real + 2 * k;
            values[i] = values[i].min(-HURWITZ_MARGIN);
        }
    }

    /// `ż = D z + F drive`.
    pub fn field<A: Arith>(&self, ar: &mut A, params: &[A::V], z: &[A::V], drive: &[f64]) -> Result<Vec<A::V>> {
        if z.len() != self.d_z() {
            return Err(Error::dim("observer state", self.d_z(), z.len()));
        }
        if drive.len() != self.d_in {
            return Err(Error::dim("observer driver channels", self.d_in, drive.len()));
        }
        let s: f64 = drive.iter().sum();
        let p = &params[self.offset..self.offset + self.param_count()];
        let mut out = Vec::with_capacity(z.len());
        for i in 0..self.n_real {
            let pz = ar.mul(p[i], z[i]);
            out.push(ar.add_c(pz, s));
        }
        for k in 0..self.n_pairs {
            let (re, im) = (p[self.n_real + 2 * k], p[self.n_real + 2 * k + 1]);
            let i = self.n_real + 2 * k;
            let neg_im = ar.neg(im);
            let a = ar.dot(&[re, im], &z[i..i + 2], None);
            let b = ar.dot(&[neg_im, re], &z[i..i + 2], None);
            out.push(ar.add_c(a, s));
            out.push(ar.add_c(b, s));
        }
        Ok(out)
    }
}

/// Sample count of a window of length `t_c` on step `dt`.
pub fn window_samples(t_c: f64, dt: f64) -> usize {
    (t_c / dt).round() as usize + 1
}

/// Runs the observer from `z(t_c) = 0` backward over `driver` and returns `z(0)`.
pub fn simulate_observer_backward<A: Arith>(
    ar: &mut A,
    gains: &KklGains,
    params: &[A::V],
    driver: &SampledSignal,
    n_c: usize,
) -> Result<Vec<A::V>> {
    if n_c > driver.grid.n {
        return Err(Error::Config(format!(
            "observer window of {n_c} samples exceeds driver of {} samples",
            driver.grid.n
        )));
    }
    let zero = ar.cst(0.0);
    let z_end = vec![zero; gains.d_z()];
    if n_c < 2 {
        return Ok(z_end);
    }
    let window = driver.prefix(n_c)?;
    let rows = integrate_backward(
        ar,
        |ar: &mut A, _t: f64, z: &[A::V], u: &[f64]| gains.field(ar, params, z, u),
        &z_end,
        &window.grid,
        Some(&window),
    )?;
    Ok(rows.into_iter().next().unwrap())
}

/// Solution of `T A − D T = F C` together with its left inverse.
#[derive(Clone, Debug)]
pub struct SylvesterSolution {
    pub t: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub rank: usize,
    /// `(TᵀT)⁻¹Tᵀ` when `T` has full column rank.
    pub left_inverse: Option<DMatrix<f64>>,
}

impl SylvesterSolution {
    pub fn residual(&self, d: &DMatrix<f64>, f: &DMatrix<f64>) -> f64 {
        (&self.t * &self.a - d * &self.t - f * &self.c).norm()
    }
}

/// Solves `T A − D T = F C` for `T` by vectorization.
pub fn solve_sylvester(a: &DMatrix<f64>, c: &DMatrix<f64>, d: &DMatrix<f64>, f: &DMatrix<f64>) -> Result<SylvesterSolution> {
    let (dx, dz) = (a.nrows(), d.nrows());
    if !a.is_square() || !d.is_square() {
        return Err(Error::Config("A and D must be square".into()));
    }
    if c.ncols() != dx {
        return Err(Error::dim("output matrix C columns", dx, c.ncols()));
    }
    if f.nrows() != dz || f.ncols() != c.nrows() {
        return Err(Error::dim("gain matrix F", dz * c.nrows(), f.nrows() * f.ncols()));
    }
    let ea = a.clone().complex_eigenvalues();
    let ed = d.clone().complex_eigenvalues();
    let scale = 1.0 + a.norm() + d.norm();
    for la in ea.iter() {
        for ld in ed.iter() {
            if (la - ld).norm() < 1e-9 * scale {
                return Err(Error::Singular(format!(
                    "A and D share the eigenvalue {} + {}i",
                    la.re, la.im
                )));
            }
        }
    }
    // vec(TA) = (Aᵀ ⊗ I) vec T, vec(DT) = (I ⊗ D) vec T
    let lhs = a.transpose().kronecker(&DMatrix::identity(dz, dz)) - DMatrix::identity(dx, dx).kronecker(d);
    let rhs = f * c;
    let rhs = nalgebra::DVector::from_column_slice(rhs.as_slice());
    let sol = lhs
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("Sylvester system is singular".into()))?;
    let t = DMatrix::from_column_slice(dz, dx, sol.as_slice());
    let r = rank(&t);
    let left_inverse = if r == dx {
        let gram = t.transpose() * &t;
        gram.try_inverse().map(|g| g * t.transpose())
    } else {
        None
    };
    Ok(SylvesterSolution {
        t,
        a: a.clone(),
        c: c.clone(),
        rank: r,
        left_inverse,
    })
}

/// Recognition model family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecognitionKind {
    Direct,
    #[serde(rename = "rnn_plus")]
    RnnPlus,
    Kkl,
    Kklu,
}

impl RecognitionKind {
    pub const ALL: [RecognitionKind; 4] = [
        RecognitionKind::Direct,
        RecognitionKind::RnnPlus,
        RecognitionKind::Kkl,
        RecognitionKind::Kklu,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            RecognitionKind::Direct => "direct",
            RecognitionKind::RnnPlus => "rnn_plus",
            RecognitionKind::Kkl => "kkl",
            RecognitionKind::Kklu => "kklu",
        }
    }
}

/// `d_y(d_x + 1)`
pub fn kkl_dim(d_y: usize, d_x: usize) -> usize {
    d_y * (d_x + 1)
}

/// `(d_y + d_u)(d_x + d_ω + 1)`
pub fn kklu_dim(d_y: usize, d_u: usize, d_x: usize, d_omega: usize) -> usize {
    (d_y + d_u) * (d_x + d_omega + 1)
}

/// Construction settings for a [`RecognitionVariant`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecognitionSetup {
    pub kind: RecognitionKind,
    /// Window length in samples, `round(t_c/dt) + 1`.
    pub n_c: usize,
    pub d_x: usize,
    pub d_y: usize,
    /// Input channels seen by the recognition model (0 when it ignores `u`).
    pub d_u: usize,
    pub d_omega: usize,
    pub d_z: Option<usize>,
    pub d_init: DInit,
    pub train_d: bool,
    pub psi_hidden: Vec<usize>,
}

/// Feature standard deviations below this leave the channel unscaled.
pub const FEATURE_STD_MIN: f64 = 1e-8;

/// A recognition model `x(0) = ψ(z̄(t_c))` and the parts that build `z̄`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecognitionVariant {
    pub kind: RecognitionKind,
    pub n_c: usize,
    pub d_x: usize,
    pub d_y: usize,
    pub d_u: usize,
    pub d_z: usize,
    pub gains: Option<KklGains>,
    pub gru: Option<Gru>,
    pub psi: Mlp,
    /// Feature standardization applied before `ψ`; empty means identity.
    #[serde(default)]
    pub feature_mean: Vec<f64>,
    #[serde(default)]
    pub feature_std: Vec<f64>,
}

impl RecognitionVariant {
    pub fn default_d_z(setup: &RecognitionSetup) -> usize {
        let (dy, du, dx) = (setup.d_y, setup.d_u, setup.d_x);
        match setup.kind {
            RecognitionKind::Direct => 0,
            RecognitionKind::Kkl => kkl_dim(dy, dx),
            RecognitionKind::Kklu => kklu_dim(dy, du, dx, setup.d_omega),
            RecognitionKind::RnnPlus if du > 0 => kklu_dim(dy, du, dx, setup.d_omega),
            RecognitionKind::RnnPlus => kkl_dim(dy, dx),
        }
    }

    /// Width of the assembled `z̄(t_c)`.
    pub fn input_width(kind: RecognitionKind, n_c: usize, d_y: usize, d_u: usize, d_z: usize) -> usize {
        match kind {
            RecognitionKind::Direct => n_c * (d_y + d_u),
            RecognitionKind::RnnPlus | RecognitionKind::Kklu => d_z,
            RecognitionKind::Kkl => d_z + n_c * d_u,
        }
    }

    pub fn register(params: &mut ParamSet, setup: &RecognitionSetup, rng: &mut impl Rng) -> Result<Self> {
        if setup.n_c == 0 || setup.d_x == 0 || setup.d_y == 0 {
            return Err(Error::Config("recognition needs a window and nonzero dimensions".into()));
        }
        if setup.kind == RecognitionKind::Kklu && setup.d_u == 0 {
            return Err(Error::Config("kklu recognition needs an input signal".into()));
        }
        let d_z = match setup.kind {
            RecognitionKind::Direct => 0,
            _ => setup.d_z.unwrap_or_else(|| Self::default_d_z(setup)),
        };
        if setup.kind != RecognitionKind::Direct && d_z == 0 {
            return Err(Error::Config("recognition state dimension must be positive".into()));
        }
        let gains = match setup.kind {
            RecognitionKind::Kkl => Some(KklGains::register(params, "D", &setup.d_init.poles(d_z), setup.d_y, setup.train_d)?),
            RecognitionKind::Kklu => Some(KklGains::register(
                params,
                "D",
                &setup.d_init.poles(d_z),
                setup.d_y + setup.d_u,
                setup.train_d,
            )?),
            _ => None,
        };
        let gru = match setup.kind {
            RecognitionKind::RnnPlus => Some(Gru::register(params, "gru", setup.d_y + setup.d_u, d_z, rng)?),
            _ => None,
        };
        let width = Self::input_width(setup.kind, setup.n_c, setup.d_y, setup.d_u, d_z);
        let mut sizes = vec![width];
        sizes.extend(&setup.psi_hidden);
        sizes.push(setup.d_x);
        let psi = Mlp::register(params, "psi", &sizes, rng)?;
        Ok(RecognitionVariant {
            kind: setup.kind,
            n_c: setup.n_c,
            d_x: setup.d_x,
            d_y: setup.d_y,
            d_u: setup.d_u,
            d_z,
            gains,
            gru,
            psi,
            feature_mean: Vec::new(),
            feature_std: Vec::new(),
        })
    }

    pub fn input_len(&self) -> usize {
        Self::input_width(self.kind, self.n_c, self.d_y, self.d_u, self.d_z)
    }

    /// Whether `z̄` depends only on data, so it can be computed once.
    pub fn features_are_static(&self) -> bool {
        match self.kind {
            RecognitionKind::Direct => true,
            RecognitionKind::RnnPlus => false,
            RecognitionKind::Kkl | RecognitionKind::Kklu => !self.gains.as_ref().is_some_and(|g| g.trainable),
        }
    }

    fn check_windows(&self, y: &SampledSignal, u: Option<&SampledSignal>) -> Result<()> {
        if y.channels != self.d_y {
            return Err(Error::dim("recognition output channels", self.d_y, y.channels));
        }
        if y.grid.n < self.n_c {
            return Err(Error::Precondition(format!(
                "recognition window of {} samples exceeds trajectory of {} samples",
                self.n_c, y.grid.n
            )));
        }
        if self.d_u > 0 {
            let u = u.ok_or_else(|| Error::Config(format!("{} recognition needs an input signal", self.kind.name())))?;
            if u.channels != self.d_u {
                return Err(Error::dim("recognition input channels", self.d_u, u.channels));
            }
            if u.grid.n < self.n_c {
                return Err(Error::Precondition("input window shorter than the recognition window".into()));
            }
        }
        Ok(())
    }

    /// Assembles `z̄(t_c)` from the first `n_c` samples of `y` and `u`.
    pub fn assemble<A: Arith>(&self, ar: &mut A, params: &[A::V], y: &SampledSignal, u: Option<&SampledSignal>) -> Result<Vec<A::V>> {
        self.check_windows(y, u)?;
        let u = if self.d_u > 0 { u } else { None };
        let flat_u = |ar: &mut A| -> Vec<A::V> {
            u.map(|u| u.values[..self.n_c * self.d_u].iter().map(|&v| ar.cst(v)).collect())
                .unwrap_or_default()
        };
        let out = match self.kind {
            RecognitionKind::Direct => {
                let mut v: Vec<A::V> = y.values[..self.n_c * self.d_y].iter().map(|&v| ar.cst(v)).collect();
                v.extend(flat_u(ar));
                v
            }
            RecognitionKind::RnnPlus => {
                let gru = self.gru.as_ref().expect("rnn recognition carries a gru");
                let zero = ar.cst(0.0);
                let mut h = vec![zero; self.d_z];
                for i in (0..self.n_c).rev() {
                    let mut x: Vec<A::V> = y.row(i).iter().map(|&v| ar.cst(v)).collect();
                    if let Some(u) = u {
                        x.extend(u.row(i).iter().map(|&v| ar.cst(v)));
                    }
                    h = gru.step(ar, params, &h, &x)?;
                }
                h
            }
            RecognitionKind::Kkl => {
                let gains = self.gains.as_ref().expect("kkl recognition carries gains");
                let mut z = simulate_observer_backward(ar, gains, params, y, self.n_c)?;
                z.extend(flat_u(ar));
                z
            }
            RecognitionKind::Kklu => {
                let gains = self.gains.as_ref().expect("kklu recognition carries gains");
                let driver = y.stack(u.expect("checked above"))?;
                simulate_observer_backward(ar, gains, params, &driver, self.n_c)?
            }
        };
        debug_assert_eq!(out.len(), self.input_len());
        Ok(out)
    }

    /// `ψ(z̄)` for already assembled features.
    pub fn psi<A: Arith>(&self, ar: &mut A, params: &[A::V], features: &[A::V]) -> Result<Vec<A::V>> {
        if self.feature_mean.is_empty() {
            return self.psi.forward(ar, params, features);
        }
        if features.len() != self.feature_mean.len() {
            return Err(Error::dim("recognition features", self.feature_mean.len(), features.len()));
        }
        let z: Vec<A::V> = features
            .iter()
            .zip(self.feature_mean.iter().zip(&self.feature_std))
            .map(|(&f, (&m, &s))| ar.affine_c(f, 1.0 / s, -m / s))
            .collect();
        self.psi.forward(ar, params, &z)
    }

    /// Standardizes `ψ` inputs with the moments of `samples`. Channels that
    /// do not vary are only centered.
    pub fn fit_feature_scaling(&mut self, samples: &[Vec<f64>]) -> Result<()> {
        let width = self.input_len();
        if samples.is_empty() {
            return Err(Error::Config("feature scaling needs at least one sample".into()));
        }
        if let Some(bad) = samples.iter().find(|s| s.len() != width) {
            return Err(Error::dim("recognition features", width, bad.len()));
        }
        let n = samples.len() as f64;
        let mean: Vec<f64> = (0..width).map(|k| samples.iter().map(|s| s[k]).sum::<f64>() / n).collect();
        let std = (0..width)
            .map(|k| {
                let v = samples.iter().map(|s| (s[k] - mean[k]).powi(2)).sum::<f64>() / n;
                if v.sqrt() > FEATURE_STD_MIN { v.sqrt() } else { 1.0 }
            })
            .collect();
        self.feature_mean = mean;
        self.feature_std = std;
        Ok(())
    }

    /// `x(0) = ψ(z̄(t_c))`.
    pub fn estimate_x0<A: Arith>(&self, ar: &mut A, params: &[A::V], y: &SampledSignal, u: Option<&SampledSignal>) -> Result<Vec<A::V>> {
        let features = self.assemble(ar, params, y, u)?;
        self.psi(ar, params, &features)
    }

    /// Keeps a trainable `D` Hurwitz after an optimizer step.
    pub fn project(&self, params: &mut ParamSet) {
        if let Some(g) = &self.gains {
            if g.trainable {
                g.clamp(&mut params.values);
            }
        }
    }
}
