//! Wengert-list reverse-mode differentiation over scalar nodes.
//!
//! Every recorded node holds one `f64` value and the local partial
//! derivatives with respect to its operands. Dense layers are recorded as
//! strided dot-product nodes, so a neuron costs one node regardless of its
//! fan-in; the partials of a dot node are the operand values themselves and
//! are read back from the value buffer during the reverse sweep.

use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(u32);

impl Var {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

const NO_BIAS: u32 = u32::MAX;

#[derive(Clone, Copy, Debug)]
enum Op {
    Leaf,
    Unary {
        a: u32,
        da: f64,
    },
    Binary {
        a: u32,
        b: u32,
        da: f64,
        db: f64,
    },
    /// `sum_k v[a + k*sa] * v[b + k*sb] (+ v[bias])`
    Dot {
        a: u32,
        sa: u32,
        b: u32,
        sb: u32,
        len: u32,
        bias: u32,
    },
    /// Arbitrary fan-in with explicit partials stored in the side buffers.
    Nary {
        start: u32,
        len: u32,
    },
}

/// Recording of a forward computation.
///
/// A tape is confined to one thread. Reuse a tape across evaluations with
/// [`Tape::clear`], which keeps the allocations.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    vals: Vec<f64>,
    ops: Vec<Op>,
    nary_parents: Vec<u32>,
    nary_partials: Vec<f64>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(nodes: usize) -> Self {
        Tape {
            vals: Vec::with_capacity(nodes),
            ops: Vec::with_capacity(nodes),
            nary_parents: Vec::new(),
            nary_partials: Vec::new(),
        }
    }

    pub fn clear(&mut self) {
        self.vals.clear();
        self.ops.clear();
        self.nary_parents.clear();
        self.nary_partials.clear();
    }

    pub fn len(&self) -> usize {
        self.vals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vals.is_empty()
    }

    #[inline]
    fn push(&mut self, value: f64, op: Op) -> Var {
        let idx = self.vals.len();
        debug_assert!(idx < NO_BIAS as usize, "tape exhausted u32 index space");
        self.vals.push(value);
        self.ops.push(op);
        Var(idx as u32)
    }

    /// Independent input node.
    pub fn var(&mut self, value: f64) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Pushes `values` as consecutive leaves and returns them.
    pub fn vars(&mut self, values: &[f64]) -> Vec<Var> {
        values.iter().map(|&v| self.var(v)).collect()
    }

    #[inline]
    pub fn value(&self, v: Var) -> f64 {
        self.vals[v.index()]
    }

    pub fn values(&self, vs: &[Var]) -> Vec<f64> {
        vs.iter().map(|&v| self.value(v)).collect()
    }

    /// Node with a single operand and local partial `da`.
    #[inline]
    pub fn unary(&mut self, value: f64, a: Var, da: f64) -> Var {
        self.push(value, Op::Unary { a: a.0, da })
    }

    #[inline]
    pub fn binary(&mut self, value: f64, a: Var, da: f64, b: Var, db: f64) -> Var {
        self.push(
            value,
            Op::Binary {
                a: a.0,
                b: b.0,
                da,
                db,
            },
        )
    }

    /// Node with arbitrary operands and their local partials.
    pub fn nary(&mut self, value: f64, parents: &[(Var, f64)]) -> Var {
        let start = self.nary_parents.len() as u32;
        for &(p, d) in parents {
            self.nary_parents.push(p.0);
            self.nary_partials.push(d);
        }
        self.push(
            value,
            Op::Nary {
                start,
                len: parents.len() as u32,
            },
        )
    }

    /// Returns `(start, stride)` when `vs` is an arithmetic progression of
    /// node indices with non-negative stride.
    fn progression(vs: &[Var]) -> Option<(u32, u32)> {
        match vs.len() {
            0 => Some((0, 0)),
            1 => Some((vs[0].0, 0)),
            _ => {
                let start = vs[0].0;
                if vs[1].0 < start {
                    return None;
                }
                let stride = vs[1].0 - start;
                vs.iter()
                    .enumerate()
                    .all(|(k, v)| v.0 as u64 == start as u64 + k as u64 * stride as u64)
                    .then_some((start, stride))
            }
        }
    }

    /// Copies scattered nodes into a contiguous run of identity nodes.
    fn contiguous(&mut self, vs: &[Var]) -> (u32, u32) {
        if let Some(p) = Self::progression(vs) {
            return p;
        }
        let start = self.vals.len() as u32;
        for &v in vs {
            let x = self.value(v);
            self.unary(x, v, 1.0);
        }
        (start, 1)
    }

    /// `a · b + bias`.
    pub fn affine(&mut self, a: &[Var], b: &[Var], bias: Option<Var>) -> Var {
        assert_eq!(a.len(), b.len(), "dot operands differ in length");
        let (ia, sa) = self.contiguous(a);
        let (ib, sb) = self.contiguous(b);
        let len = a.len() as u32;
        let mut acc = 0.0;
        {
            let v = &self.vals;
            for k in 0..len {
                acc += v[(ia + k * sa) as usize] * v[(ib + k * sb) as usize];
            }
            if let Some(bv) = bias {
                acc += v[bv.index()];
            }
        }
        self.push(
            acc,
            Op::Dot {
                a: ia,
                sa,
                b: ib,
                sb,
                len,
                bias: bias.map_or(NO_BIAS, |b| b.0),
            },
        )
    }

    /// Reverse sweep seeded at `root` with adjoint 1.
    pub fn backward(&self, root: Var) -> Gradients {
        let n = root.index() + 1;
        let mut adj = vec![0.0; n];
        adj[root.index()] = 1.0;
        let vals = &self.vals;
        for i in (0..n).rev() {
            let g = adj[i];
            if g == 0.0 {
                continue;
            }
            match self.ops[i] {
                Op::Leaf => {}
                Op::Unary { a, da } => adj[a as usize] += g * da,
                Op::Binary { a, b, da, db } => {
                    adj[a as usize] += g * da;
                    adj[b as usize] += g * db;
                }
                Op::Dot {
                    a,
                    sa,
                    b,
                    sb,
                    len,
                    bias,
                } => {
                    for k in 0..len {
                        let ia = (a + k * sa) as usize;
                        let ib = (b + k * sb) as usize;
                        adj[ia] += g * vals[ib];
                        adj[ib] += g * vals[ia];
                    }
                    if bias != NO_BIAS {
                        adj[bias as usize] += g;
                    }
                }
                Op::Nary { start, len } => {
                    let s = start as usize;
                    let e = s + len as usize;
                    for (p, d) in self.nary_parents[s..e].iter().zip(&self.nary_partials[s..e]) {
                        adj[*p as usize] += g * d;
                    }
                }
            }
        }
        Gradients { adjoints: adj }
    }

    /// Reverse sweep for a root given as an output slice; only scalar roots
    /// are accepted.
    pub fn backward_from(&self, outputs: &[Var]) -> Result<Gradients> {
        match outputs {
            [root] => Ok(self.backward(*root)),
            _ => Err(Error::Usage(format!(
                "backward needs a scalar root, got {} outputs",
                outputs.len()
            ))),
        }
    }
}

/// Adjoints produced by one reverse sweep.
#[derive(Clone, Debug)]
pub struct Gradients {
    adjoints: Vec<f64>,
}

impl Gradients {
    /// Derivative of the root with respect to `v`; zero for nodes recorded
    /// after the root.
    pub fn wrt(&self, v: Var) -> f64 {
        self.adjoints.get(v.index()).copied().unwrap_or(0.0)
    }

    pub fn wrt_all(&self, vs: &[Var]) -> Vec<f64> {
        vs.iter().map(|&v| self.wrt(v)).collect()
    }
}
