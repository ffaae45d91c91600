//! Fully connected networks with SiLU hidden activations.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::arith::Arith;
use super::params::ParamSet;
use crate::error::{Error, Result};

/// Layout of a multilayer perceptron inside a [`ParamSet`].
///
/// Each layer stores its weight matrix row-major (`out × in`) followed by
/// its bias vector. Hidden layers apply SiLU, the output layer is affine.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub offset: usize,
}

/// `Σ (in_i + 1)·out_i`
pub fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
}

/// Glorot-uniform weights and zero biases, layer by layer.
pub fn glorot_init(sizes: &[usize], rng: &mut impl Rng) -> Vec<f64> {
    let mut out = Vec::with_capacity(param_count(sizes));
    for w in sizes.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        out.extend((0..fan_in * fan_out).map(|_| rng.random_range(-bound..=bound)));
        out.extend(std::iter::repeat_n(0.0, fan_out));
    }
    out
}

impl Mlp {
    /// Registers a freshly initialized network as a new trainable block.
    pub fn register(
        params: &mut ParamSet,
        name: &str,
        sizes: &[usize],
        rng: &mut impl Rng,
    ) -> Result<Mlp> {
        Self::check_sizes(sizes)?;
        let offset = params.push_block(name, glorot_init(sizes, rng), true);
        Ok(Mlp {
            sizes: sizes.to_vec(),
            offset,
        })
    }

    /// Registers a network with explicit parameter values.
    pub fn register_with(params: &mut ParamSet, name: &str, sizes: &[usize], values: Vec<f64>) -> Result<Mlp> {
        Self::check_sizes(sizes)?;
        if values.len() != param_count(sizes) {
            return Err(Error::dim("mlp parameters", param_count(sizes), values.len()));
        }
        let offset = params.push_block(name, values, true);
        Ok(Mlp {
            sizes: sizes.to_vec(),
            offset,
        })
    }

    fn check_sizes(sizes: &[usize]) -> Result<()> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Config(format!("invalid layer sizes {sizes:?}")));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        param_count(&self.sizes)
    }

    fn layer_offsets(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let mut off = self.offset;
        self.sizes.windows(2).map(move |w| {
            let o = off;
            off += (w[0] + 1) * w[1];
            (o, w[0], w[1])
        })
    }

    /// Forward pass. `params` is the full flat parameter vector.
    pub fn forward<A: Arith>(&self, ar: &mut A, params: &[A::V], input: &[A::V]) -> Result<Vec<A::V>> {
        if input.len() != self.input_dim() {
            return Err(Error::dim("mlp input", self.input_dim(), input.len()));
        }
        let n_layers = self.sizes.len() - 1;
        let mut h: Vec<A::V> = input.to_vec();
        for (l, (off, n_in, n_out)) in self.layer_offsets().enumerate() {
            let w = &params[off..off + n_in * n_out];
            let b = &params[off + n_in * n_out..off + (n_in + 1) * n_out];
            let pre: Vec<A::V> = (0..n_out)
                .map(|i| ar.dot(&w[i * n_in..(i + 1) * n_in], &h, Some(b[i])))
                .collect();
            h = if l + 1 < n_layers {
                pre.into_iter().map(|a| ar.silu(a)).collect()
            } else {
                pre
            };
        }
        Ok(h)
    }

    /// Value and input gradient of a scalar-output network.
    ///
    /// The gradient is built from recorded operations, so on a tape it can
    /// itself be differentiated with respect to the weights.
    pub fn value_and_input_grad<A: Arith>(
        &self,
        ar: &mut A,
        params: &[A::V],
        input: &[A::V],
    ) -> Result<(A::V, Vec<A::V>)> {
        if self.output_dim() != 1 {
            return Err(Error::dim("scalar network output", 1, self.output_dim()));
        }
        if input.len() != self.input_dim() {
            return Err(Error::dim("mlp input", self.input_dim(), input.len()));
        }
        let layers: Vec<_> = self.layer_offsets().collect();
        let n_layers = layers.len();
        let mut pre_acts: Vec<Vec<A::V>> = Vec::with_capacity(n_layers);
        let mut h: Vec<A::V> = input.to_vec();
        for (l, &(off, n_in, n_out)) in layers.iter().enumerate() {
            let w = &params[off..off + n_in * n_out];
            let b = &params[off + n_in * n_out..off + (n_in + 1) * n_out];
            let pre: Vec<A::V> = (0..n_out)
                .map(|i| ar.dot(&w[i * n_in..(i + 1) * n_in], &h, Some(b[i])))
                .collect();
            if l + 1 < n_layers {
                h = pre.iter().map(|&a| ar.silu(a)).collect();
                pre_acts.push(pre);
            } else {
                h = pre;
            }
        }
        let value = h[0];

        // adjoint of the last hidden layer = row of the output weights
        let (off, n_in, _) = layers[n_layers - 1];
        let mut adj: Vec<A::V> = params[off..off + n_in].to_vec();
        for l in (0..n_layers - 1).rev() {
            let dact: Vec<A::V> = pre_acts[l].iter().map(|&a| ar.silu_prime(a)).collect();
            let gated: Vec<A::V> = dact.iter().zip(&adj).map(|(&d, &g)| ar.mul(d, g)).collect();
            let (off, n_in, n_out) = layers[l];
            let w = &params[off..off + n_in * n_out];
            adj = (0..n_in)
                .map(|j| {
                    let col: Vec<A::V> = (0..n_out).map(|i| w[i * n_in + j]).collect();
                    ar.dot(&col, &gated, None)
                })
                .collect();
        }
        Ok((value, adj))
    }
}
