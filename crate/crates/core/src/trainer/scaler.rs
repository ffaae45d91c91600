use serde::{Deserialize, Serialize};

use crate::benchsys::Trajectory;
use crate::error::{Error, Result};
use crate::odesolve::SampledSignal;

/// Smallest standard deviation a channel may be divided by.
pub const STD_FLOOR: f64 = 1e-8;

/// Per-channel affine normalization of outputs, inputs and states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub y_mean: Vec<f64>,
    pub y_std: Vec<f64>,
    pub u_mean: Vec<f64>,
    pub u_std: Vec<f64>,
    pub x_mean: Vec<f64>,
    pub x_std: Vec<f64>,
}

fn moments(columns: usize, rows: impl Iterator<Item = Vec<f64>>) -> (Vec<f64>, Vec<f64>) {
    let mut sum = vec![0.0; columns];
    let mut sq = vec![0.0; columns];
    let mut count = 0usize;
    for r in rows {
        for k in 0..columns {
            sum[k] += r[k];
            sq[k] += r[k] * r[k];
        }
        count += 1;
    }
    let n = count.max(1) as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let std = sq
        .iter()
        .zip(&mean)
        .map(|(q, m)| (q / n - m * m).max(0.0).sqrt().max(STD_FLOOR))
        .collect();
    (mean, std)
}

impl Scaler {
    pub fn identity(d_y: usize, d_u: usize, d_x: usize) -> Self {
        Scaler {
            y_mean: vec![0.0; d_y],
            y_std: vec![1.0; d_y],
            u_mean: vec![0.0; d_u],
            u_std: vec![1.0; d_u],
            x_mean: vec![0.0; d_x],
            x_std: vec![1.0; d_x],
        }
    }

    /// Population moments over every sample of `data`.
    ///
    /// State channel `measured[k]` reuses output channel `k`; every other
    /// state channel gets the mean of the output scalers.
    pub fn fit(data: &[Trajectory], measured: &[usize], state_dim: usize) -> Result<Scaler> {
        let first = data.first().ok_or_else(|| Error::Config("cannot fit a scaler on an empty dataset".into()))?;
        let d_y = first.y.channels;
        if measured.len() != d_y {
            return Err(Error::dim("measured state channels", d_y, measured.len()));
        }
        let (y_mean, y_std) = moments(d_y, data.iter().flat_map(|tr| tr.y.rows().map(|r| r.to_vec()).collect::<Vec<_>>()));
        let d_u = first.u.as_ref().map_or(0, |u| u.channels);
        let (u_mean, u_std) = moments(
            d_u,
            data.iter()
                .flat_map(|tr| tr.u.iter().flat_map(|u| u.rows().map(|r| r.to_vec())).collect::<Vec<_>>()),
        );
        let avg = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let mut x_mean = vec![avg(&y_mean); state_dim];
        let mut x_std = vec![avg(&y_std); state_dim];
        for (k, &i) in measured.iter().enumerate() {
            x_mean[i] = y_mean[k];
            x_std[i] = y_std[k];
        }
        Ok(Scaler {
            y_mean,
            y_std,
            u_mean,
            u_std,
            x_mean,
            x_std,
        })
    }

    pub fn scale_y(&self, k: usize, v: f64) -> f64 {
        (v - self.y_mean[k]) / self.y_std[k]
    }

    pub fn unscale_y(&self, k: usize, v: f64) -> f64 {
        self.y_mean[k] + self.y_std[k] * v
    }

    pub fn scale_u(&self, k: usize, v: f64) -> f64 {
        (v - self.u_mean[k]) / self.u_std[k]
    }

    pub fn unscale_u(&self, k: usize, v: f64) -> f64 {
        self.u_mean[k] + self.u_std[k] * v
    }

    pub fn scale_x(&self, k: usize, v: f64) -> f64 {
        (v - self.x_mean[k]) / self.x_std[k]
    }

    pub fn unscale_x(&self, k: usize, v: f64) -> f64 {
        self.x_mean[k] + self.x_std[k] * v
    }

    fn map_signal(sig: &SampledSignal, f: impl Fn(usize, f64) -> f64) -> SampledSignal {
        let c = sig.channels.max(1);
        SampledSignal {
            grid: sig.grid,
            channels: sig.channels,
            values: sig.values.iter().enumerate().map(|(i, &v)| f(i % c, v)).collect(),
        }
    }

    pub fn scale_y_signal(&self, sig: &SampledSignal) -> SampledSignal {
        Self::map_signal(sig, |k, v| self.scale_y(k, v))
    }

    pub fn scale_u_signal(&self, sig: &SampledSignal) -> SampledSignal {
        Self::map_signal(sig, |k, v| self.scale_u(k, v))
    }

    /// Mean of the state variances, the energy unit of learned Hamiltonians.
    pub fn energy_scale(&self) -> f64 {
        self.x_std.iter().map(|s| s * s).sum::<f64>() / self.x_std.len().max(1) as f64
    }
}
