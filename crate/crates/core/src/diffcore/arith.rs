//! Arithmetic backends shared by every differentiable computation.
//!
//! Vector fields, solvers and networks are written once against [`Arith`]
//! and run either on plain `f64` ([`Eval`]) or recorded on a [`Tape`].

use super::tape::{Tape, Var};

/// Logistic sigmoid.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// SiLU activation `x·σ(x)`.
pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

/// First derivative of SiLU.
pub fn silu_prime(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Second derivative of SiLU.
pub fn silu_second(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 - s) * (2.0 + x * (1.0 - 2.0 * s))
}

fn rk4_value(x: f64, k: [f64; 4], dt: f64) -> f64 {
    x + (k[0] + 2.0 * k[1] + 2.0 * k[2] + k[3]) * dt / 6.0
}

pub trait Arith {
    type V: Copy + std::fmt::Debug;

    fn cst(&mut self, c: f64) -> Self::V;
    fn val(&self, v: Self::V) -> f64;

    fn add(&mut self, a: Self::V, b: Self::V) -> Self::V;
    fn sub(&mut self, a: Self::V, b: Self::V) -> Self::V;
    fn mul(&mut self, a: Self::V, b: Self::V) -> Self::V;
    fn div(&mut self, a: Self::V, b: Self::V) -> Self::V;
    fn neg(&mut self, a: Self::V) -> Self::V;

    /// `ca·a + cb·b`
    fn lin2(&mut self, a: Self::V, ca: f64, b: Self::V, cb: f64) -> Self::V;
    /// `scale·a + offset`
    fn affine_c(&mut self, a: Self::V, scale: f64, offset: f64) -> Self::V;
    /// `c + Σ w_k·x_k` with constant weights.
    fn lincomb(&mut self, terms: &[(Self::V, f64)], c: f64) -> Self::V;

    /// `x + dt·(k1 + 2k2 + 2k3 + k4)/6`, rounded the same way on every backend.
    fn rk4_combine(&mut self, x: Self::V, k: [Self::V; 4], dt: f64) -> Self::V;

    fn sin(&mut self, a: Self::V) -> Self::V;
    fn cos(&mut self, a: Self::V) -> Self::V;
    fn exp(&mut self, a: Self::V) -> Self::V;
    fn tanh(&mut self, a: Self::V) -> Self::V;
    fn sigmoid(&mut self, a: Self::V) -> Self::V;
    fn silu(&mut self, a: Self::V) -> Self::V;
    fn silu_prime(&mut self, a: Self::V) -> Self::V;
    fn square(&mut self, a: Self::V) -> Self::V;
    fn cube(&mut self, a: Self::V) -> Self::V;

    /// `a·b (+ bias)` over equal-length slices.
    fn dot(&mut self, a: &[Self::V], b: &[Self::V], bias: Option<Self::V>) -> Self::V;

    fn add_c(&mut self, a: Self::V, c: f64) -> Self::V {
        self.affine_c(a, 1.0, c)
    }

    fn mul_c(&mut self, a: Self::V, c: f64) -> Self::V {
        self.affine_c(a, c, 0.0)
    }

    fn csts(&mut self, cs: &[f64]) -> Vec<Self::V> {
        cs.iter().map(|&c| self.cst(c)).collect()
    }

    fn vals(&self, vs: &[Self::V]) -> Vec<f64> {
        vs.iter().map(|&v| self.val(v)).collect()
    }

    fn sum(&mut self, xs: &[Self::V]) -> Self::V {
        let terms: Vec<_> = xs.iter().map(|&x| (x, 1.0)).collect();
        self.lincomb(&terms, 0.0)
    }
}

/// Plain floating-point evaluation with no recording.
#[derive(Clone, Copy, Debug, Default)]
pub struct Eval;

impl Arith for Eval {
    type V = f64;

    fn cst(&mut self, c: f64) -> f64 {
        c
    }
    fn val(&self, v: f64) -> f64 {
        v
    }
    fn add(&mut self, a: f64, b: f64) -> f64 {
        a + b
    }
    fn sub(&mut self, a: f64, b: f64) -> f64 {
        a - b
    }
    fn mul(&mut self, a: f64, b: f64) -> f64 {
        a * b
    }
    fn div(&mut self, a: f64, b: f64) -> f64 {
        a / b
    }
    fn neg(&mut self, a: f64) -> f64 {
        -a
    }
    fn lin2(&mut self, a: f64, ca: f64, b: f64, cb: f64) -> f64 {
        ca * a + cb * b
    }
    fn affine_c(&mut self, a: f64, scale: f64, offset: f64) -> f64 {
        scale * a + offset
    }
    fn lincomb(&mut self, terms: &[(f64, f64)], c: f64) -> f64 {
        terms.iter().fold(c, |acc, &(x, w)| acc + w * x)
    }
    fn rk4_combine(&mut self, x: f64, k: [f64; 4], dt: f64) -> f64 {
        rk4_value(x, k, dt)
    }
    fn sin(&mut self, a: f64) -> f64 {
        a.sin()
    }
    fn cos(&mut self, a: f64) -> f64 {
        a.cos()
    }
    fn exp(&mut self, a: f64) -> f64 {
        a.exp()
    }
    fn tanh(&mut self, a: f64) -> f64 {
        a.tanh()
    }
    fn sigmoid(&mut self, a: f64) -> f64 {
        sigmoid(a)
    }
    fn silu(&mut self, a: f64) -> f64 {
        silu(a)
    }
    fn silu_prime(&mut self, a: f64) -> f64 {
        silu_prime(a)
    }
    fn square(&mut self, a: f64) -> f64 {
        a * a
    }
    fn cube(&mut self, a: f64) -> f64 {
        a * a * a
    }
    fn dot(&mut self, a: &[f64], b: &[f64], bias: Option<f64>) -> f64 {
        debug_assert_eq!(a.len(), b.len());
        a.iter()
            .zip(b)
            .fold(bias.unwrap_or(0.0), |acc, (x, y)| acc + x * y)
    }
}

impl Arith for Tape {
    type V = Var;

    fn cst(&mut self, c: f64) -> Var {
        self.var(c)
    }
    fn val(&self, v: Var) -> f64 {
        self.value(v)
    }
    fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.binary(v, a, 1.0, b, 1.0)
    }
    fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.binary(v, a, 1.0, b, -1.0)
    }
    fn mul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        self.binary(x * y, a, y, b, x)
    }
    fn div(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        self.binary(x / y, a, 1.0 / y, b, -x / (y * y))
    }
    fn neg(&mut self, a: Var) -> Var {
        let v = -self.value(a);
        self.unary(v, a, -1.0)
    }
    fn lin2(&mut self, a: Var, ca: f64, b: Var, cb: f64) -> Var {
        let v = ca * self.value(a) + cb * self.value(b);
        self.binary(v, a, ca, b, cb)
    }
    fn affine_c(&mut self, a: Var, scale: f64, offset: f64) -> Var {
        let v = scale * self.value(a) + offset;
        self.unary(v, a, scale)
    }
    fn lincomb(&mut self, terms: &[(Var, f64)], c: f64) -> Var {
        let v = terms
            .iter()
            .fold(c, |acc, &(x, w)| acc + w * self.value(x));
        self.nary(v, terms)
    }
    fn rk4_combine(&mut self, x: Var, k: [Var; 4], dt: f64) -> Var {
        let kv = k.map(|ki| self.value(ki));
        let v = rk4_value(self.value(x), kv, dt);
        let w = dt / 6.0;
        self.nary(v, &[(x, 1.0), (k[0], w), (k[1], 2.0 * w), (k[2], 2.0 * w), (k[3], w)])
    }
    fn sin(&mut self, a: Var) -> Var {
        let x = self.value(a);
        self.unary(x.sin(), a, x.cos())
    }
    fn cos(&mut self, a: Var) -> Var {
        let x = self.value(a);
        self.unary(x.cos(), a, -x.sin())
    }
    fn exp(&mut self, a: Var) -> Var {
        let e = self.value(a).exp();
        self.unary(e, a, e)
    }
    fn tanh(&mut self, a: Var) -> Var {
        let t = self.value(a).tanh();
        self.unary(t, a, 1.0 - t * t)
    }
    fn sigmoid(&mut self, a: Var) -> Var {
        let s = sigmoid(self.value(a));
        self.unary(s, a, s * (1.0 - s))
    }
    fn silu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        self.unary(silu(x), a, silu_prime(x))
    }
    fn silu_prime(&mut self, a: Var) -> Var {
        let x = self.value(a);
        self.unary(silu_prime(x), a, silu_second(x))
    }
    fn square(&mut self, a: Var) -> Var {
        let x = self.value(a);
        self.unary(x * x, a, 2.0 * x)
    }
    fn cube(&mut self, a: Var) -> Var {
        let x = self.value(a);
        self.unary(x * x * x, a, 3.0 * x * x)
    }
    fn dot(&mut self, a: &[Var], b: &[Var], bias: Option<Var>) -> Var {
        self.affine(a, b, bias)
    }
}
