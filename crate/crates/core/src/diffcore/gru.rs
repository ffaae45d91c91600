use rand::Rng;
use serde::{Deserialize, Serialize};

use super::arith::Arith;
use super::mlp::glorot_init;
use super::params::ParamSet;
use crate::error::{Error, Result};

/// Layout of a gated recurrent unit inside a [`ParamSet`].
///
/// Per gate `g ∈ {z, r, h}` the block holds `W_g` (`hidden × input`),
/// `U_g` (`hidden × hidden`) and `b_g`, in that gate order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gru {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub offset: usize,
}

impl Gru {
    fn gate_len(input_dim: usize, hidden_dim: usize) -> usize {
        hidden_dim * input_dim + hidden_dim * hidden_dim + hidden_dim
    }

    pub fn param_count_for(input_dim: usize, hidden_dim: usize) -> usize {
        3 * Self::gate_len(input_dim, hidden_dim)
    }

    pub fn param_count(&self) -> usize {
        Self::param_count_for(self.input_dim, self.hidden_dim)
    }

    pub fn register(params: &mut ParamSet, name: &str, input_dim: usize, hidden_dim: usize, rng: &mut impl Rng) -> Result<Gru> {
        if input_dim == 0 || hidden_dim == 0 {
            return Err(Error::Config("GRU dimensions must be positive".into()));
        }
        let mut values = Vec::with_capacity(Self::param_count_for(input_dim, hidden_dim));
        for _ in 0..3 {
            let w = glorot_init(&[input_dim, hidden_dim], rng);
            let u = glorot_init(&[hidden_dim, hidden_dim], rng);
            values.extend_from_slice(&w[..hidden_dim * input_dim]);
            values.extend_from_slice(&u[..hidden_dim * hidden_dim]);
            values.extend(std::iter::repeat_n(0.0, hidden_dim));
        }
        let offset = params.push_block(name, values, true);
        Ok(Gru {
            input_dim,
            hidden_dim,
            offset,
        })
    }

    pub fn register_with(params: &mut ParamSet, name: &str, input_dim: usize, hidden_dim: usize, values: Vec<f64>) -> Result<Gru> {
        let n = Self::param_count_for(input_dim, hidden_dim);
        if values.len() != n {
            return Err(Error::dim("gru parameters", n, values.len()));
        }
        let offset = params.push_block(name, values, true);
        Ok(Gru {
            input_dim,
            hidden_dim,
            offset,
        })
    }

    fn gate_pre<A: Arith>(&self, ar: &mut A, params: &[A::V], gate: usize, x: &[A::V], h: &[A::V]) -> Vec<A::V> {
        let (ni, nh) = (self.input_dim, self.hidden_dim);
        let base = self.offset + gate * Self::gate_len(ni, nh);
        let w = &params[base..base + nh * ni];
        let u = &params[base + nh * ni..base + nh * ni + nh * nh];
        let b = &params[base + nh * ni + nh * nh..base + Self::gate_len(ni, nh)];
        (0..nh)
            .map(|i| {
                let wx = ar.dot(&w[i * ni..(i + 1) * ni], x, Some(b[i]));
                ar.dot(&u[i * nh..(i + 1) * nh], h, Some(wx))
            })
            .collect()
    }

    /// One recurrence step `h' = (1 − z)⊙ĥ + z⊙h`.
    pub fn step<A: Arith>(&self, ar: &mut A, params: &[A::V], h: &[A::V], x: &[A::V]) -> Result<Vec<A::V>> {
        if h.len() != self.hidden_dim {
            return Err(Error::dim("gru hidden state", self.hidden_dim, h.len()));
        }
        if x.len() != self.input_dim {
            return Err(Error::dim("gru input", self.input_dim, x.len()));
        }
        let z: Vec<A::V> = self
            .gate_pre(ar, params, 0, x, h)
            .into_iter()
            .map(|a| ar.sigmoid(a))
            .collect();
        let r: Vec<A::V> = self
            .gate_pre(ar, params, 1, x, h)
            .into_iter()
            .map(|a| ar.sigmoid(a))
            .collect();
        let rh: Vec<A::V> = r.iter().zip(h).map(|(&ri, &hi)| ar.mul(ri, hi)).collect();
        let cand: Vec<A::V> = self
            .gate_pre(ar, params, 2, x, &rh)
            .into_iter()
            .map(|a| ar.tanh(a))
            .collect();
        Ok((0..self.hidden_dim)
            .map(|i| {
                // ĥ + z·(h − ĥ)
                let diff = ar.sub(h[i], cand[i]);
                let zd = ar.mul(z[i], diff);
                ar.add(cand[i], zd)
            })
            .collect())
    }
}
