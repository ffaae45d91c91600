//! Structured vector fields: free networks, Hamiltonian forms, coordinate
//! constraints, parametric and extended-state models, and residuals on a
//! known linear prior.
//!
//! Fields act on physical states. Networks read scaled states and inputs
//! and their outputs are rescaled by the state scaler, so structure holds
//! exactly in physical coordinates.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::benchsys::System;
use crate::diffcore::{Arith, Eval, Mlp, ParamSet};
use crate::error::{Error, Result};
use crate::trainer::Scaler;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StructureKind {
    Free,
    HamiltonianGeneral,
    HamiltonianSecondOrder,
    SecondOrderPairs,
    Parametric,
    ExtendedState,
    ResidualOnPrior,
}

impl StructureKind {
    pub const ALL: [StructureKind; 7] = [
        StructureKind::Free,
        StructureKind::HamiltonianGeneral,
        StructureKind::HamiltonianSecondOrder,
        StructureKind::SecondOrderPairs,
        StructureKind::Parametric,
        StructureKind::ExtendedState,
        StructureKind::ResidualOnPrior,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            StructureKind::Free => "free",
            StructureKind::HamiltonianGeneral => "hamiltonian_general",
            StructureKind::HamiltonianSecondOrder => "hamiltonian_second_order",
            StructureKind::SecondOrderPairs => "second_order_pairs",
            StructureKind::Parametric => "parametric",
            StructureKind::ExtendedState => "extended_state",
            StructureKind::ResidualOnPrior => "residual_on_prior",
        }
    }

    pub fn is_hamiltonian(&self) -> bool {
        matches!(self, StructureKind::HamiltonianGeneral | StructureKind::HamiltonianSecondOrder)
    }
}

/// Known linear field `A x + B u`, rows of `A` then rows of `B`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearPrior {
    pub a: Vec<Vec<f64>>,
    #[serde(default)]
    pub b: Vec<Vec<f64>>,
}

impl LinearPrior {
    fn check(&self, d_x: usize, d_u: usize) -> Result<()> {
        if self.a.len() != d_x || self.a.iter().any(|r| r.len() != d_x) {
            return Err(Error::Config(format!("prior matrix A must be {d_x}×{d_x}")));
        }
        let b_ok = if d_u == 0 {
            self.b.iter().all(|r| r.is_empty())
        } else {
            self.b.len() == d_x && self.b.iter().all(|r| r.len() == d_u)
        };
        if !b_ok {
            return Err(Error::Config(format!("prior matrix B must be {d_x}×{d_u}")));
        }
        Ok(())
    }

    /// The exact linear part of a benchmark system, when it has one.
    pub fn of_system(sys: &System) -> Option<LinearPrior> {
        match *sys {
            System::HarmonicOscillator { omega2 } => Some(LinearPrior {
                a: vec![vec![0.0, 1.0], vec![-omega2, 0.0]],
                b: vec![],
            }),
            System::Earthquake { k_over_m: k } => Some(LinearPrior {
                a: vec![
                    vec![0.0, 1.0, 0.0, 0.0],
                    vec![-2.0 * k, 0.0, k, 0.0],
                    vec![0.0, 0.0, 0.0, 1.0],
                    vec![k, 0.0, -k, 0.0],
                ],
                b: vec![vec![0.0], vec![1.0], vec![0.0], vec![1.0]],
            }),
            _ => None,
        }
    }
}

/// How a [`ModelSpec`] is built.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSetup {
    pub kind: StructureKind,
    pub system: System,
    pub hidden: Vec<usize>,
    pub prior: Option<LinearPrior>,
    pub lambda_res: f64,
    /// Defaults to `(0,1), (2,3), …` for second-order pairs.
    pub pair_map: Option<Vec<(usize, usize)>>,
}

/// Trainable physical constants of a parametric model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysicalBlock {
    pub offset: usize,
    pub count: usize,
    /// Stored value is squared before use (oscillator frequency).
    pub squared: bool,
}

/// A structural prior bound to its networks and parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: StructureKind,
    pub system: System,
    /// Dimension of the integrated state, including appended constants.
    pub state_dim: usize,
    pub d_u: usize,
    pub measured: Vec<usize>,
    pub net: Option<Mlp>,
    pub physical: Option<PhysicalBlock>,
    pub prior: Option<LinearPrior>,
    pub lambda_res: f64,
    pub pair_map: Vec<(usize, usize)>,
    pub scaler: Scaler,
}

/// Uniform ranges for initial guesses of physical constants.
pub fn initial_ranges(sys: &System) -> Vec<(f64, f64)> {
    match sys {
        // drawn for ω, the field uses ω²
        System::HarmonicOscillator { .. } => vec![(0.5, 2.0)],
        System::VanDerPol { .. } => vec![(0.5, 1.5)],
        System::FitzHughNagumo { .. } => vec![(0.05, 0.2), (1.0, 2.0), (0.5, 1.1)],
        System::Earthquake { .. } => vec![(8.0, 12.0)],
    }
}

fn default_pairs(d: usize) -> Vec<(usize, usize)> {
    (0..d / 2).map(|i| (2 * i, 2 * i + 1)).collect()
}

impl ModelSpec {
    pub fn build(params: &mut ParamSet, setup: &ModelSetup, scaler: Scaler, rng: &mut impl Rng) -> Result<ModelSpec> {
        let sys = setup.system;
        let d_x = sys.d_x();
        let d_u = sys.d_u();
        let n_phys = sys.params().len();
        let state_dim = if setup.kind == StructureKind::ExtendedState { d_x + n_phys } else { d_x };
        if scaler.x_std.len() != state_dim || scaler.u_std.len() != d_u {
            return Err(Error::dim("state scaler", state_dim, scaler.x_std.len()));
        }
        if !(setup.lambda_res >= 0.0) {
            return Err(Error::Config(format!("residual penalty weight must be non-negative, got {}", setup.lambda_res)));
        }
        if setup.kind.is_hamiltonian() {
            if d_x % 2 != 0 {
                return Err(Error::Config(format!("Hamiltonian structure needs an even state dimension, got {d_x}")));
            }
            if d_u > 0 {
                return Err(Error::Config(format!("Hamiltonian structure needs an autonomous system, {} has inputs", sys.name())));
            }
        }
        let pair_map = match setup.kind {
            StructureKind::SecondOrderPairs => {
                let pairs = setup.pair_map.clone().unwrap_or_else(|| default_pairs(d_x));
                if pairs.is_empty() || pairs.iter().any(|&(i, j)| j != i + 1 || j >= d_x) {
                    return Err(Error::Config(format!("invalid pair map {pairs:?}")));
                }
                pairs
            }
            _ => Vec::new(),
        };
        let sizes = |n_in: usize, n_out: usize| {
            let mut s = vec![n_in];
            s.extend(&setup.hidden);
            s.push(n_out);
            s
        };
        let net_sizes = match setup.kind {
            StructureKind::Free | StructureKind::ResidualOnPrior => Some(sizes(d_x + d_u, d_x)),
            StructureKind::HamiltonianGeneral => Some(sizes(d_x, 1)),
            StructureKind::HamiltonianSecondOrder => Some(sizes(d_x / 2, 1)),
            StructureKind::SecondOrderPairs => Some(sizes(d_x + d_u, d_x - pair_map.len())),
            StructureKind::Parametric | StructureKind::ExtendedState => None,
        };
        let net = net_sizes
            .map(|s| Mlp::register(params, if setup.kind.is_hamiltonian() { "H" } else { "f" }, &s, rng))
            .transpose()?;
        let physical = if setup.kind == StructureKind::Parametric {
            let values: Vec<f64> = initial_ranges(&sys).into_iter().map(|(l, h)| rng.random_range(l..h)).collect();
            let offset = params.push_block("physical", values, true);
            Some(PhysicalBlock {
                offset,
                count: n_phys,
                squared: matches!(sys, System::HarmonicOscillator { .. }),
            })
        } else {
            None
        };
        let prior = if setup.kind == StructureKind::ResidualOnPrior {
            let p = setup
                .prior
                .clone()
                .or_else(|| LinearPrior::of_system(&sys))
                .ok_or_else(|| Error::Config(format!("residual structure needs a linear prior for {}", sys.name())))?;
            p.check(d_x, d_u)?;
            Some(p)
        } else {
            None
        };
        Ok(ModelSpec {
            kind: setup.kind,
            system: sys,
            state_dim,
            d_u,
            measured: sys.measured(),
            net,
            physical,
            prior,
            lambda_res: if setup.kind == StructureKind::ResidualOnPrior { setup.lambda_res } else { 0.0 },
            pair_map,
            scaler,
        })
    }

    pub fn d_y(&self) -> usize {
        self.measured.len()
    }

    fn scaled_inputs<A: Arith>(&self, ar: &mut A, x: &[A::V], u: &[f64], with_u: bool) -> Vec<A::V> {
        let s = &self.scaler;
        let mut out: Vec<A::V> = x
            .iter()
            .enumerate()
            .map(|(k, &xk)| ar.affine_c(xk, 1.0 / s.x_std[k], -s.x_mean[k] / s.x_std[k]))
            .collect();
        if with_u {
            out.extend(u.iter().enumerate().map(|(k, &uk)| ar.cst(s.scale_u(k, uk))));
        }
        out
    }

    fn net(&self) -> &Mlp {
        self.net.as_ref().expect("structure carries a network")
    }

    /// `σ_x ⊙ f_θ(x̃, ũ)` for the rows listed in `rows`.
    fn free_rows<A: Arith>(&self, ar: &mut A, params: &[A::V], x: &[A::V], u: &[f64], rows: &[usize]) -> Result<Vec<A::V>> {
        let inp = self.scaled_inputs(ar, x, u, true);
        let out = self.net().forward(ar, params, &inp)?;
        Ok(out
            .into_iter()
            .zip(rows)
            .map(|(o, &k)| ar.mul_c(o, self.scaler.x_std[k]))
            .collect())
    }

    /// Physical constants in the order of [`System::params`].
    fn physical_values<A: Arith>(&self, ar: &mut A, params: &[A::V]) -> Vec<A::V> {
        let b = self.physical.as_ref().expect("parametric structure carries constants");
        let raw = &params[b.offset..b.offset + b.count];
        if b.squared {
            raw.iter().map(|&w| ar.square(w)).collect()
        } else {
            raw.to_vec()
        }
    }

    /// Physical constants as currently estimated, by name.
    pub fn physical_estimates(&self, values: &[f64]) -> Vec<(String, f64)> {
        match &self.physical {
            Some(_) => {
                let v = self.physical_values(&mut Eval, values);
                self.system
                    .param_names()
                    .iter()
                    .zip(v)
                    .map(|(n, x)| (n.to_string(), x))
                    .collect()
            }
            None => Vec::new(),
        }
    }

    /// `s_H·H_θ(x̃)` and its gradient with respect to the physical state.
    fn hamiltonian_grad<A: Arith>(&self, ar: &mut A, params: &[A::V], coords: &[A::V], idx: &[usize]) -> Result<(A::V, Vec<A::V>)> {
        let s = &self.scaler;
        let sh = s.energy_scale();
        let inp: Vec<A::V> = coords
            .iter()
            .zip(idx)
            .map(|(&c, &k)| ar.affine_c(c, 1.0 / s.x_std[k], -s.x_mean[k] / s.x_std[k]))
            .collect();
        let (h, g) = self.net().value_and_input_grad(ar, params, &inp)?;
        let h = ar.mul_c(h, sh);
        let g = g.into_iter().zip(idx).map(|(gk, &k)| ar.mul_c(gk, sh / s.x_std[k])).collect();
        Ok((h, g))
    }

    /// Structured vector field at `(x, u)`.
    pub fn eval_field<A: Arith>(&self, ar: &mut A, params: &[A::V], _t: f64, x: &[A::V], u: &[f64]) -> Result<Vec<A::V>> {
        if x.len() != self.state_dim {
            return Err(Error::dim("model state", self.state_dim, x.len()));
        }
        if u.len() != self.d_u {
            return Err(Error::dim("model input", self.d_u, u.len()));
        }
        let d = self.state_dim;
        match self.kind {
            StructureKind::Free => self.free_rows(ar, params, x, u, &(0..d).collect::<Vec<_>>()),
            StructureKind::HamiltonianGeneral => {
                let (_, g) = self.hamiltonian_grad(ar, params, x, &(0..d).collect::<Vec<_>>())?;
                let mut out = Vec::with_capacity(d);
                for i in 0..d / 2 {
                    out.push(g[2 * i + 1]);
                    out.push(ar.neg(g[2 * i]));
                }
                Ok(out)
            }
            StructureKind::HamiltonianSecondOrder => {
                let idx: Vec<usize> = (0..d / 2).map(|i| 2 * i).collect();
                let q: Vec<A::V> = idx.iter().map(|&k| x[k]).collect();
                let (_, g) = self.hamiltonian_grad(ar, params, &q, &idx)?;
                let mut out = Vec::with_capacity(d);
                for i in 0..d / 2 {
                    out.push(x[2 * i + 1]);
                    out.push(ar.neg(g[i]));
                }
                Ok(out)
            }
            StructureKind::SecondOrderPairs => {
                let free: Vec<usize> = (0..d).filter(|k| !self.pair_map.iter().any(|p| p.0 == *k)).collect();
                let learned = self.free_rows(ar, params, x, u, &free)?;
                let mut out = x.to_vec();
                for &(i, j) in &self.pair_map {
                    out[i] = x[j];
                }
                for (k, v) in free.into_iter().zip(learned) {
                    out[k] = v;
                }
                Ok(out)
            }
            StructureKind::Parametric => {
                let p = self.physical_values(ar, params);
                self.system.field_with(ar, &p, x, u)
            }
            StructureKind::ExtendedState => {
                let d_x = self.system.d_x();
                let mut out = self.system.field_with(ar, &x[d_x..], &x[..d_x], u)?;
                let zero = ar.cst(0.0);
                out.resize(d, zero);
                Ok(out)
            }
            StructureKind::ResidualOnPrior => {
                let base = self.prior_field(ar, x, u);
                let res = self.free_rows(ar, params, x, u, &(0..d).collect::<Vec<_>>())?;
                Ok(base.into_iter().zip(res).map(|(b, r)| ar.add(b, r)).collect())
            }
        }
    }

    fn prior_field<A: Arith>(&self, ar: &mut A, x: &[A::V], u: &[f64]) -> Vec<A::V> {
        let prior = self.prior.as_ref().expect("residual structure carries a prior");
        (0..self.state_dim)
            .map(|i| {
                let bu: f64 = prior.b.get(i).map_or(0.0, |row| row.iter().zip(u).map(|(b, u)| b * u).sum());
                let terms: Vec<(A::V, f64)> = x.iter().zip(&prior.a[i]).map(|(&xk, &a)| (xk, a)).collect();
                ar.lincomb(&terms, bu)
            })
            .collect()
    }

    /// `λ·mean ‖f_θ(x, u)‖²` over the given points.
    pub fn residual_penalty<A: Arith>(&self, ar: &mut A, params: &[A::V], states: &[Vec<A::V>], inputs: &[Vec<f64>]) -> Result<A::V> {
        if self.kind != StructureKind::ResidualOnPrior {
            return Err(Error::Usage(format!("residual penalty needs a residual structure, got {}", self.kind.name())));
        }
        if states.len() != inputs.len() {
            return Err(Error::dim("penalty inputs", states.len(), inputs.len()));
        }
        if self.lambda_res == 0.0 || states.is_empty() {
            return Ok(ar.cst(0.0));
        }
        let rows: Vec<usize> = (0..self.state_dim).collect();
        let mut sq = Vec::with_capacity(states.len() * self.state_dim);
        for (x, u) in states.iter().zip(inputs) {
            for r in self.free_rows(ar, params, x, u, &rows)? {
                sq.push(ar.square(r));
            }
        }
        let total = ar.sum(&sq);
        Ok(ar.mul_c(total, self.lambda_res / states.len() as f64))
    }

    /// Conserved quantity of a Hamiltonian structure: `H_θ(x)`, or
    /// `½‖p‖² + H_θ(q)` for the second-order form.
    pub fn energy<A: Arith>(&self, ar: &mut A, params: &[A::V], x: &[A::V]) -> Result<A::V> {
        let d = self.state_dim;
        match self.kind {
            StructureKind::HamiltonianGeneral => Ok(self.hamiltonian_grad(ar, params, x, &(0..d).collect::<Vec<_>>())?.0),
            StructureKind::HamiltonianSecondOrder => {
                let idx: Vec<usize> = (0..d / 2).map(|i| 2 * i).collect();
                let q: Vec<A::V> = idx.iter().map(|&k| x[k]).collect();
                let (h, _) = self.hamiltonian_grad(ar, params, &q, &idx)?;
                let p: Vec<A::V> = (0..d / 2).map(|i| ar.square(x[2 * i + 1])).collect();
                let kinetic = ar.sum(&p);
                Ok(ar.lin2(kinetic, 0.5, h, 1.0))
            }
            _ => Err(Error::Usage(format!("{} has no conserved energy", self.kind.name()))),
        }
    }

    /// Gradient of [`ModelSpec::energy`] with respect to the state.
    pub fn energy_gradient(&self, values: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        let mut tape = crate::diffcore::Tape::new();
        let p = tape.vars(values);
        let xv = tape.vars(x);
        let e = self.energy(&mut tape, &p, &xv)?;
        Ok(tape.backward(e).wrt_all(&xv))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::mlp::param_count;
    use crate::diffcore::Tape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(kind: StructureKind, system: System) -> ModelSetup {
        ModelSetup {
            kind,
            system,
            hidden: vec![8, 8],
            prior: None,
            lambda_res: 0.0,
            pair_map: None,
        }
    }

    fn build(kind: StructureKind, system: System) -> (ParamSet, ModelSpec) {
        let mut p = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let extra = if kind == StructureKind::ExtendedState { system.params().len() } else { 0 };
        let scaler = Scaler::identity(system.d_y(), system.d_u(), system.d_x() + extra);
        let m = ModelSpec::build(&mut p, &setup(kind, system), scaler, &mut rng).unwrap();
        (p, m)
    }

    #[test]
    fn hamiltonian_field_is_symplectic_gradient() {
        let mut p = ParamSet::new();
        let sys = System::harmonic_oscillator();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = setup(StructureKind::HamiltonianGeneral, sys);
        s.hidden = vec![];
        let m = ModelSpec::build(&mut p, &s, Scaler::identity(1, 0, 2), &mut rng).unwrap();
        let b = p.block("H").unwrap().clone();
        // H = x1 shares ∇H = (1, 0) with ½(x1² + x2²) at (1, 0)
        p.values[b.offset..b.offset + 3].copy_from_slice(&[1.0, 0.0, 0.0]);
        assert_eq!(m.eval_field(&mut Eval, &p.values, 0.0, &[1.0, 0.0], &[]).unwrap(), vec![0.0, -1.0]);
        p.values[b.offset..b.offset + 3].copy_from_slice(&[0.0, 1.0, 0.0]);
        assert_eq!(m.eval_field(&mut Eval, &p.values, 0.0, &[1.0, 0.0], &[]).unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn parametric_oscillator_example() {
        let (mut p, m) = build(StructureKind::Parametric, System::harmonic_oscillator());
        let b = p.block("physical").unwrap().clone();
        assert!((0.5..2.0).contains(&p.values[b.offset]));
        p.values[b.offset] = 1.0;
        let f = m.eval_field(&mut Eval, &p.values, 0.0, &[0.5, -0.2], &[]).unwrap();
        assert_eq!(f, vec![-0.2, -0.5]);
        p.values[b.offset] = 1.5;
        assert_eq!(m.physical_estimates(&p.values), vec![("omega2".to_string(), 2.25)]);
    }

    #[test]
    fn extended_oscillator_example() {
        let (p, m) = build(StructureKind::ExtendedState, System::harmonic_oscillator());
        assert_eq!(m.state_dim, 3);
        let f = m.eval_field(&mut Eval, &p.values, 0.0, &[1.0, 0.0, 4.0], &[]).unwrap();
        assert_eq!(f, vec![0.0, -4.0, 0.0]);
    }

    #[test]
    fn residual_with_zero_net_is_the_prior() {
        let sys = System::earthquake();
        let (mut p, m) = build(StructureKind::ResidualOnPrior, sys);
        let b = p.block("f").unwrap().clone();
        p.values[b.offset..b.offset + b.len].fill(0.0);
        let x = [0.3, -0.1, 0.7, 0.2];
        let f = m.eval_field(&mut Eval, &p.values, 0.0, &x, &[0.4]).unwrap();
        assert_eq!(f, m.prior_field(&mut Eval, &x, &[0.4]));
        for (a, b) in f.iter().zip(sys.true_field(&x, &[0.4]).unwrap()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn residual_penalty_examples() {
        let sys = System::harmonic_oscillator();
        let mut p = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = setup(StructureKind::ResidualOnPrior, sys);
        s.hidden = vec![];
        s.lambda_res = 0.5;
        let m = ModelSpec::build(&mut p, &s, Scaler::identity(1, 0, 2), &mut rng).unwrap();
        let b = p.block("f").unwrap().clone();
        // zero weights, biases (1, 2)
        let mut w = vec![0.0; param_count(&[2, 2])];
        w[4] = 1.0;
        w[5] = 2.0;
        p.values[b.offset..b.offset + b.len].copy_from_slice(&w);
        let pen = m.residual_penalty(&mut Eval, &p.values, &[vec![0.3, 0.4]], &[vec![]]).unwrap();
        assert!((pen - 2.5).abs() < 1e-15);
        p.values[b.offset..b.offset + b.len].fill(0.0);
        assert_eq!(m.residual_penalty(&mut Eval, &p.values, &[vec![0.3, 0.4]], &[vec![]]).unwrap(), 0.0);
        let (fp, free) = build(StructureKind::Free, sys);
        assert!(matches!(
            free.residual_penalty(&mut Eval, &fp.values, &[], &[]),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn pairs_copy_velocities() {
        let (p, m) = build(StructureKind::SecondOrderPairs, System::earthquake());
        let x = [0.3, -0.1, 0.7, 0.2];
        let f = m.eval_field(&mut Eval, &p.values, 0.0, &x, &[0.1]).unwrap();
        assert_eq!(f[0], x[1]);
        assert_eq!(f[2], x[3]);
    }

    #[test]
    fn hamiltonian_needs_even_autonomous_state() {
        let mut p = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = setup(StructureKind::HamiltonianGeneral, System::van_der_pol());
        assert!(ModelSpec::build(&mut p, &s, Scaler::identity(1, 1, 2), &mut rng).is_err());
    }

    #[test]
    fn hamiltonian_flow_conserves_energy_locally() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for kind in [StructureKind::HamiltonianGeneral, StructureKind::HamiltonianSecondOrder] {
            let (p, m) = build(kind, System::harmonic_oscillator());
            for _ in 0..50 {
                let x = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
                let g = m.energy_gradient(&p.values, &x).unwrap();
                let f = m.eval_field(&mut Eval, &p.values, 0.0, &x, &[]).unwrap();
                let dot: f64 = g.iter().zip(&f).map(|(a, b)| a * b).sum();
                assert!(dot.abs() < 1e-9, "{kind:?}: {dot}");
            }
        }
    }

    #[test]
    fn field_is_differentiable_in_parameters() {
        let (p, m) = build(StructureKind::HamiltonianGeneral, System::harmonic_oscillator());
        let x = [0.4, -0.9];
        let mut t = Tape::new();
        let pv = t.vars(&p.values);
        let xv = t.vars(&x);
        let f = m.eval_field(&mut t, &pv, 0.0, &xv, &[]).unwrap();
        let root = t.lin2(f[0], 1.0, f[1], 0.5);
        let g = t.backward(root).wrt_all(&pv);
        let h = 1e-6;
        for k in [0, 5, 17, p.len() - 1] {
            let mut a = p.values.clone();
            a[k] += h;
            let mut b = p.values.clone();
            b[k] -= h;
            let fa = m.eval_field(&mut Eval, &a, 0.0, &x, &[]).unwrap();
            let fb = m.eval_field(&mut Eval, &b, 0.0, &x, &[]).unwrap();
            let fd = ((fa[0] + 0.5 * fa[1]) - (fb[0] + 0.5 * fb[1])) / (2.0 * h);
            assert!((fd - g[k]).abs() <= 1e-5 * (1.0 + fd.abs()), "param {k}: {fd} vs {}", g[k]);
        }
    }
}
