//! Joint training of dynamics and recognition models, and evaluation.
//!
//! Every trajectory contributes `Σ r²/(2·d_y·n·N)` over scaled output
//! residuals. Recognition reads the first `n_c` samples, the model is then
//! rolled out over the whole trajectory.

mod metrics;
mod scaler;

use std::cell::RefCell;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::benchsys::Trajectory;
use crate::diffcore::{AdamState, Arith, Eval, ParamSet, Tape};
use crate::error::{Error, Result};
use crate::observers::{RecognitionSetup, RecognitionVariant};
use crate::odesolve::{integrate, Excitation, SampledSignal};
use crate::par;
use crate::priors::{ModelSetup, ModelSpec, StructureKind};

pub use metrics::{quantile, MetricsReport};
pub use scaler::{Scaler, STD_FLOOR};

/// Optimizer and schedule settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub lr: f64,
    /// Multiplicative learning-rate factor applied after every epoch.
    pub lr_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping; `None`
    /// trains on every trajectory for all epochs.
    pub patience: Option<usize>,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            lr: 0.005,
            lr_decay: 1.0,
            epochs: 100,
            batch_size: 10,
            patience: None,
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

/// Dynamics model, recognition model and their shared parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Learner {
    pub model: ModelSpec,
    pub recog: RecognitionVariant,
    pub params: ParamSet,
}

impl Learner {
    pub fn new(model: &ModelSetup, recog: &RecognitionSetup, scaler: Scaler, seed: u64) -> Result<Learner> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let model = ModelSpec::build(&mut params, model, scaler, &mut rng)?;
        if recog.d_x != model.state_dim {
            return Err(Error::dim("recognition output", model.state_dim, recog.d_x));
        }
        let recog = RecognitionVariant::register(&mut params, recog, &mut rng)?;
        Ok(Learner { model, recog, params })
    }

    /// Fits recognition feature standardization on `data` at the current
    /// parameters. RNN+ features are left unscaled.
    pub fn fit_feature_scaling(&mut self, data: &[Trajectory]) -> Result<()> {
        if self.recog.kind == crate::observers::RecognitionKind::RnnPlus {
            return Ok(());
        }
        let feats: Vec<Vec<f64>> = prepare(self, data)?
            .into_iter()
            .map(|p| match p.features {
                Some(f) => Ok(f),
                None => self.recog.assemble(&mut Eval, &self.params.values, &p.y, p.rec_u.as_ref()),
            })
            .collect::<Result<_>>()?;
        self.recog.fit_feature_scaling(&feats)
    }

    pub fn scaler(&self) -> &Scaler {
        &self.model.scaler
    }
}

/// A trajectory with the signals each stage consumes.
#[derive(Clone, Debug)]
pub struct Prepared {
    /// Scaled outputs, the regression target.
    pub y: SampledSignal,
    /// Raw inputs fed to the dynamics.
    pub u: Option<SampledSignal>,
    /// Scaled inputs fed to recognition, when it sees them.
    pub rec_u: Option<SampledSignal>,
    /// Recognition features when they do not depend on parameters.
    pub features: Option<Vec<f64>>,
}

impl Prepared {
    pub fn new(learner: &Learner, tr: &Trajectory) -> Result<Prepared> {
        let s = learner.scaler();
        if tr.y.channels != learner.model.d_y() {
            return Err(Error::dim("trajectory outputs", learner.model.d_y(), tr.y.channels));
        }
        if tr.grid.n < learner.recog.n_c {
            return Err(Error::Precondition(format!(
                "recognition window of {} samples exceeds trajectory of {} samples",
                learner.recog.n_c, tr.grid.n
            )));
        }
        let u = if learner.model.d_u > 0 {
            let u = tr
                .u
                .clone()
                .ok_or_else(|| Error::Config("model needs an input signal but the trajectory has none".into()))?;
            if u.channels != learner.model.d_u {
                return Err(Error::dim("trajectory inputs", learner.model.d_u, u.channels));
            }
            Some(u)
        } else {
            None
        };
        let rec_u = if learner.recog.d_u > 0 { u.as_ref().map(|u| s.scale_u_signal(u)) } else { None };
        let y = s.scale_y_signal(&tr.y);
        let features = if learner.recog.features_are_static() {
            Some(learner.recog.assemble(&mut Eval, &learner.params.values, &y, rec_u.as_ref())?)
        } else {
            None
        };
        Ok(Prepared { y, u, rec_u, features })
    }

    pub fn n(&self) -> usize {
        self.y.grid.n
    }
}

pub fn prepare(learner: &Learner, data: &[Trajectory]) -> Result<Vec<Prepared>> {
    data.iter().map(|tr| Prepared::new(learner, tr)).collect()
}

/// `Σ‖ŷ − y‖² / (2·d_y·n·N)` over flattened per-trajectory outputs.
pub fn output_loss(pred: &[Vec<f64>], measured: &[Vec<f64>], d_y: usize, n: usize) -> Result<f64> {
    if pred.len() != measured.len() || pred.is_empty() {
        return Err(Error::Usage(format!(
            "loss needs matching non-empty batches, got {} predictions and {} measurements",
            pred.len(),
            measured.len()
        )));
    }
    let mut total = 0.0;
    for (p, m) in pred.iter().zip(measured) {
        if p.len() != d_y * n || m.len() != d_y * n {
            return Err(Error::Usage(format!("each trajectory needs {} output values", d_y * n)));
        }
        total += p.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    Ok(total / (2 * d_y * n * pred.len()) as f64)
}

fn x0_from_psi<A: Arith>(ar: &mut A, learner: &Learner, params: &[A::V], prep: &Prepared) -> Result<Vec<A::V>> {
    let recog = &learner.recog;
    let features = match &prep.features {
        Some(f) => ar.csts(f),
        None => recog.assemble(ar, params, &prep.y, prep.rec_u.as_ref())?,
    };
    let out = recog.psi(ar, params, &features)?;
    let s = learner.scaler();
    Ok(out
        .into_iter()
        .enumerate()
        .map(|(k, o)| ar.affine_c(o, s.x_std[k], s.x_mean[k]))
        .collect())
}

/// Recognized initial state and rollout over the trajectory grid.
fn rollout<A: Arith>(ar: &mut A, learner: &Learner, params: &[A::V], prep: &Prepared) -> Result<Vec<Vec<A::V>>> {
    let x0 = x0_from_psi(ar, learner, params, prep)?;
    let model = &learner.model;
    let input = prep.u.as_ref().map(|u| u as &dyn Excitation);
    integrate(
        ar,
        |ar: &mut A, t: f64, x: &[A::V], u: &[f64]| model.eval_field(ar, params, t, x, u),
        &x0,
        &prep.y.grid,
        input,
    )
}

/// Per-trajectory objective `Σr²/(2·d_y·n·batch) + penalty/batch`.
fn objective<A: Arith>(ar: &mut A, learner: &Learner, params: &[A::V], prep: &Prepared, batch: usize) -> Result<A::V> {
    let states = rollout(ar, learner, params, prep)?;
    let model = &learner.model;
    let s = learner.scaler();
    let d_y = model.d_y();
    let mut terms = Vec::with_capacity(states.len() * d_y);
    for (i, x) in states.iter().enumerate() {
        for (k, &m) in model.measured.iter().enumerate() {
            // scaled prediction minus scaled target
            let r = ar.affine_c(x[m], 1.0 / s.y_std[k], -s.y_mean[k] / s.y_std[k] - prep.y.row(i)[k]);
            terms.push(ar.square(r));
        }
    }
    let sq = ar.sum(&terms);
    let mut obj = ar.mul_c(sq, 1.0 / (2 * d_y * prep.n() * batch) as f64);
    if model.kind == StructureKind::ResidualOnPrior && model.lambda_res > 0.0 {
        let inputs: Vec<Vec<f64>> = match &prep.u {
            Some(u) => u.rows().map(|r| r.to_vec()).collect(),
            None => vec![Vec::new(); states.len()],
        };
        let pen = model.residual_penalty(ar, params, &states, &inputs)?;
        obj = ar.lin2(obj, 1.0, pen, 1.0 / batch as f64);
    }
    Ok(obj)
}

thread_local! {
    static TAPE: RefCell<Tape> = RefCell::new(Tape::new());
}

/// Objective and gradient of one trajectory's share of a batch.
pub fn trajectory_gradient(learner: &Learner, prep: &Prepared, batch: usize) -> Result<(f64, Vec<f64>)> {
    TAPE.with(|cell| {
        let mut tape = cell.borrow_mut();
        tape.clear();
        let pv = learner.params.load(&mut tape);
        let obj = objective(&mut *tape, learner, &pv, prep, batch)?;
        let value = tape.value(obj);
        let grads = tape.backward(obj).wrt_all(&pv);
        Ok((value, grads))
    })
}

/// Objective of one trajectory's share of a batch without recording.
pub fn trajectory_objective(learner: &Learner, prep: &Prepared, batch: usize) -> Result<f64> {
    objective(&mut Eval, learner, &learner.params.values, prep, batch)
}

/// Batch objective and summed gradient, reduced in index order.
pub fn batch_gradient(learner: &Learner, data: &[Prepared], batch: &[usize]) -> Result<(f64, Vec<f64>)> {
    let parts = par::map_indexed(batch.len(), |k| trajectory_gradient(learner, &data[batch[k]], batch.len()));
    let mut loss = 0.0;
    let mut grad = vec![0.0; learner.params.len()];
    for part in parts {
        let (l, g) = part?;
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    Ok((loss, grad))
}

/// Mean objective over `data`.
pub fn dataset_loss(learner: &Learner, data: &[Prepared]) -> Result<f64> {
    let parts = par::map_indexed(data.len(), |k| trajectory_objective(learner, &data[k], data.len()));
    parts.into_iter().sum()
}

fn as_training_error(e: Error, epoch: usize, trajectory: usize) -> Error {
    match e {
        Error::Integration { .. } => Error::NonFiniteLoss { epoch, trajectory },
        other => other,
    }
}

/// Trains all parameters on `data` and returns the loss curves.
pub fn train(learner: &mut Learner, data: &[Trajectory], cfg: &TrainingConfig) -> Result<MetricsReport> {
    if !(cfg.lr > 0.0) {
        return Err(Error::Config(format!("learning rate must be positive, got {}", cfg.lr)));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    if data.is_empty() {
        return Err(Error::Config("training needs at least one trajectory".into()));
    }
    let prepared = prepare(learner, data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let (train_idx, val_idx) = match cfg.patience {
        Some(_) if data.len() >= 2 => {
            order.shuffle(&mut rng);
            let n_val = ((data.len() as f64 * cfg.val_fraction).round() as usize).clamp(1, data.len() - 1);
            let val = order.split_off(data.len() - n_val);
            (order, val)
        }
        _ => (order, Vec::new()),
    };
    let val_set: Vec<Prepared> = val_idx.iter().map(|&i| prepared[i].clone()).collect();

    let mut adam = AdamState::new(learner.params.len());
    let mut lr = cfg.lr;
    let mut report = MetricsReport::default();
    let mut best = (f64::INFINITY, learner.params.clone(), 0usize);
    let mut idx = train_idx.clone();
    for epoch in 0..cfg.epochs {
        idx.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in idx.chunks(cfg.batch_size) {
            let (loss, grad) = match batch_gradient(learner, &prepared, batch) {
                Ok(v) => v,
                Err(e) => {
                    // name the first trajectory that fails on its own
                    let bad = batch
                        .iter()
                        .copied()
                        .find(|&j| trajectory_objective(learner, &prepared[j], 1).map_or(true, |l| !l.is_finite()))
                        .unwrap_or(batch[0]);
                    return Err(as_training_error(e, epoch, bad));
                }
            };
            if !loss.is_finite() {
                let bad = batch
                    .iter()
                    .copied()
                    .find(|&j| trajectory_objective(learner, &prepared[j], 1).map_or(true, |l| !l.is_finite()))
                    .unwrap_or(batch[0]);
                return Err(Error::NonFiniteLoss { epoch, trajectory: bad });
            }
            epoch_loss += loss * batch.len() as f64 / idx.len() as f64;
            adam.update(&mut learner.params, &grad, lr)?;
            learner.recog.project(&mut learner.params);
        }
        report.train_loss.push(epoch_loss);
        lr *= cfg.lr_decay;
        if let Some(patience) = cfg.patience {
            if val_set.is_empty() {
                continue;
            }
            let v = dataset_loss(learner, &val_set).unwrap_or(f64::INFINITY);
            report.val_loss.push(v);
            if v < best.0 {
                best = (v, learner.params.clone(), epoch);
            } else if epoch - best.2 >= patience {
                log::info!("early stop at epoch {epoch}, best validation loss {:.3e} at epoch {}", best.0, best.2);
                break;
            }
        }
        if epoch % 50 == 0 || epoch + 1 == cfg.epochs {
            log::debug!("epoch {epoch}: train loss {epoch_loss:.4e}");
        }
    }
    if cfg.patience.is_some() && best.0.is_finite() {
        learner.params = best.1;
        report.best_epoch = Some(best.2);
    }
    report.epochs_run = report.train_loss.len();
    report.physical = learner.model.physical_estimates(&learner.params.values).into_iter().collect();
    Ok(report)
}

/// Predicted states and outputs of one trajectory in physical units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
}

pub fn predict(learner: &Learner, tr: &Trajectory) -> Result<Prediction> {
    let prep = Prepared::new(learner, tr)?;
    let x = rollout(&mut Eval, learner, &learner.params.values, &prep)?;
    let y = x.iter().map(|r| learner.model.measured.iter().map(|&k| r[k]).collect()).collect();
    Ok(Prediction { x, y })
}

/// RMSE of scaled predicted outputs against scaled measurements.
pub fn scaled_rmse(learner: &Learner, tr: &Trajectory, pred: &Prediction) -> f64 {
    let s = learner.scaler();
    let mut sum = 0.0;
    let mut count = 0;
    for (i, row) in pred.y.iter().enumerate() {
        for (k, &v) in row.iter().enumerate() {
            let r = s.scale_y(k, v) - s.scale_y(k, tr.y.row(i)[k]);
            sum += r * r;
            count += 1;
        }
    }
    (sum / count.max(1) as f64).sqrt()
}

/// Rolls out every test trajectory from its recognized initial state.
pub fn evaluate_rmse(learner: &Learner, test: &[Trajectory]) -> Result<MetricsReport> {
    if test.is_empty() {
        return Err(Error::Config("evaluation needs at least one trajectory".into()));
    }
    let preds: Vec<Prediction> = par::map_indexed(test.len(), |j| predict(learner, &test[j]))
        .into_iter()
        .collect::<Result<_>>()?;
    let rmse: Vec<f64> = test.iter().zip(&preds).map(|(tr, p)| scaled_rmse(learner, tr, p)).collect();
    let mut report = MetricsReport::from_rmse(rmse);
    report.physical = learner.model.physical_estimates(&learner.params.values).into_iter().collect();
    if learner.model.kind == StructureKind::ExtendedState {
        // constants carried in the state: average their recognized values
        let d_x = learner.model.system.d_x();
        let names = learner.model.system.param_names();
        for (k, name) in names.iter().enumerate() {
            let mean = preds.iter().map(|p| p.x[0][d_x + k]).sum::<f64>() / preds.len() as f64;
            report.physical.insert(name.to_string(), mean);
        }
    }
    Ok(report)
}
