//! Experiment configuration and the end-to-end runs built on it.
//!
//! Configs are JSON objects. Missing keys take the preset of the chosen
//! system; unknown keys are rejected.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::benchsys::{generate_dataset, simulate, InputFamily, NoiseSpec, System, Trajectory, X0Sampler};
use crate::ekf::{open_loop, run_filter, state_rmse, EkfConfig, EkfState, ModelDynamics};
use crate::error::{Error, Result};
use crate::observers::{window_samples, DInit, RecognitionKind, RecognitionSetup};
use crate::odesolve::TimeGrid;
use crate::priors::{ModelSetup, StructureKind};
use crate::trainer::{evaluate_rmse, train, Learner, MetricsReport, Scaler, TrainingConfig};

pub const SCHEMA_VERSION: u32 = 1;
/// Added to the seed of the training set to draw the test set.
pub const TEST_SEED_OFFSET: u64 = 0x5eed_0001;
/// Added to the seed of the training set to draw filter streams.
pub const EKF_SEED_OFFSET: u64 = 0x5eed_0002;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemPreset {
    HarmonicOscillator,
    VanDerPol,
    FitzhughNagumo,
    Earthquake,
}

impl SystemPreset {
    pub const ALL: [SystemPreset; 4] = [
        SystemPreset::HarmonicOscillator,
        SystemPreset::VanDerPol,
        SystemPreset::FitzhughNagumo,
        SystemPreset::Earthquake,
    ];

    pub fn system(&self) -> System {
        match self {
            SystemPreset::HarmonicOscillator => System::harmonic_oscillator(),
            SystemPreset::VanDerPol => System::van_der_pol(),
            SystemPreset::FitzhughNagumo => System::fitzhugh_nagumo(),
            SystemPreset::Earthquake => System::earthquake(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    /// Recognition window in grid steps.
    TcSteps,
    NoiseVariance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationSpec {
    pub axis: AblationAxis,
    pub values: Vec<f64>,
    /// Repetitions per value, each with its own seed offset.
    #[serde(default = "one")]
    pub repeats: usize,
}

fn one() -> usize {
    1
}

/// Filter comparison settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EkfSettings {
    pub dt: f64,
    pub duration: f64,
    pub streams: usize,
    pub q: f64,
    /// Measurement variance; defaults to the data noise variance.
    pub r: Option<f64>,
    /// Half-width of the uniform perturbation of the initial estimate.
    pub init_error: f64,
    pub init_variance: f64,
}

impl Default for EkfSettings {
    fn default() -> Self {
        EkfSettings {
            dt: 1e-3,
            duration: 10.0,
            streams: 10,
            q: crate::ekf::DEFAULT_Q,
            r: None,
            init_error: 0.5,
            init_variance: 0.25,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub system: SystemPreset,
    pub structure: StructureKind,
    pub recognition: RecognitionKind,
    /// Training trajectories.
    pub n_train: usize,
    pub n_test: usize,
    /// Samples per training trajectory.
    pub n_samples: usize,
    /// Length of test trajectories in seconds.
    pub test_duration: f64,
    pub dt: f64,
    /// Recognition window in seconds.
    pub t_c: f64,
    pub noise_variance: f64,
    pub lr: f64,
    pub lr_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: Option<usize>,
    pub val_fraction: f64,
    pub hidden: Vec<usize>,
    pub psi_hidden: Vec<usize>,
    pub d_z: Option<usize>,
    /// Butterworth cutoff in hertz; `null` selects `diag(−1, …, −d_z)`.
    pub omega_c: Option<f64>,
    pub d_omega: usize,
    pub lambda_res: f64,
    pub train_d: bool,
    pub seed: u64,
    pub out_dir: Option<String>,
    pub ablation: Option<AblationSpec>,
    pub ekf: EkfSettings,
}

impl ExperimentConfig {
    pub fn preset(system: SystemPreset) -> ExperimentConfig {
        let mut cfg = ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            system,
            structure: StructureKind::Free,
            recognition: RecognitionKind::Kkl,
            n_train: 50,
            n_test: 100,
            n_samples: 101,
            test_duration: 3.0,
            dt: 0.03,
            t_c: 1.2,
            noise_variance: 1e-3,
            lr: 0.005,
            lr_decay: 1.0,
            epochs: 500,
            batch_size: 10,
            patience: None,
            val_fraction: 0.1,
            hidden: vec![50, 50],
            psi_hidden: vec![50, 50],
            d_z: None,
            omega_c: Some(1.0),
            d_omega: 3,
            lambda_res: 0.0,
            train_d: false,
            seed: 0,
            out_dir: None,
            ablation: None,
            ekf: EkfSettings::default(),
        };
        match system {
            SystemPreset::HarmonicOscillator => {
                cfg.n_train = 20;
                cfg.n_samples = 51;
                cfg.dt = 0.06;
                cfg.test_duration = 9.0;
                cfg.noise_variance = 1e-4;
            }
            SystemPreset::VanDerPol => {}
            SystemPreset::FitzhughNagumo => cfg.noise_variance = 5e-4,
            SystemPreset::Earthquake => cfg.noise_variance = 1e-4,
        }
        cfg
    }

    /// The appendix variant of the oscillator preset, 50 trajectories.
    pub fn oscillator_appendix() -> ExperimentConfig {
        ExperimentConfig {
            n_train: 50,
            ..Self::preset(SystemPreset::HarmonicOscillator)
        }
    }

    /// Parses a JSON config, filling absent keys from the system preset.
    pub fn from_json_str(text: &str) -> Result<ExperimentConfig> {
        let user: Value = serde_json::from_str(text).map_err(|e| Error::Config(format!("config is not valid JSON: {e}")))?;
        let Value::Object(user) = user else {
            return Err(Error::Config("config must be a JSON object".into()));
        };
        let system = match user.get("system") {
            Some(v) => serde_json::from_value(v.clone()).map_err(|e| Error::Config(format!("key `system`: {e}")))?,
            None => SystemPreset::HarmonicOscillator,
        };
        let mut merged = serde_json::to_value(Self::preset(system)).expect("presets serialize");
        let slots = merged.as_object_mut().expect("presets are objects");
        for (k, v) in user {
            if !slots.contains_key(&k) {
                return Err(Error::Config(format!("unknown key `{k}`")));
            }
            slots.insert(k, v);
        }
        let cfg: ExperimentConfig = serde_json::from_value(merged).map_err(|e| Error::Config(format!("schema mismatch: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configs serialize")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!("schema_version {} is not supported (expected {SCHEMA_VERSION})", self.schema_version));
        }
        if self.n_train == 0 {
            return bad("n_train must be at least 1".into());
        }
        if self.n_test == 0 {
            return bad("n_test must be at least 1".into());
        }
        if self.n_samples < 2 {
            return bad("n_samples must be at least 2".into());
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.t_c >= 0.0) {
            return bad(format!("t_c must be non-negative, got {}", self.t_c));
        }
        let steps = self.t_c / self.dt;
        if (steps - steps.round()).abs() > 1e-6 {
            return bad(format!("t_c = {} is not a multiple of dt = {}", self.t_c, self.dt));
        }
        if !(self.test_duration > 0.0) {
            return bad(format!("test_duration must be positive, got {}", self.test_duration));
        }
        if !(self.noise_variance >= 0.0) {
            return bad(format!("noise_variance must be non-negative, got {}", self.noise_variance));
        }
        if !(self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad(format!("lr_decay must lie in (0, 1], got {}", self.lr_decay));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad(format!("val_fraction must lie in (0, 1), got {}", self.val_fraction));
        }
        if let Some(w) = self.omega_c {
            if !(w > 0.0) {
                return bad(format!("omega_c must be positive, got {w}"));
            }
        }
        if !(self.lambda_res >= 0.0) {
            return bad(format!("lambda_res must be non-negative, got {}", self.lambda_res));
        }
        if let Some(a) = &self.ablation {
            if a.values.is_empty() {
                return bad("ablation needs at least one value".into());
            }
            if a.repeats == 0 {
                return bad("ablation repeats must be at least 1".into());
            }
        }
        let e = &self.ekf;
        if !(e.dt > 0.0) || !(e.duration > e.dt) || e.streams == 0 || !(e.q >= 0.0) || !(e.init_variance > 0.0) {
            return bad("ekf settings need dt > 0, duration > dt, streams ≥ 1, q ≥ 0 and init_variance > 0".into());
        }
        if let Some(r) = e.r {
            if !(r > 0.0) {
                return bad(format!("ekf measurement variance must be positive, got {r}"));
            }
        }
        Ok(())
    }

    /// Recognition window in samples.
    pub fn n_c(&self) -> usize {
        window_samples(self.t_c, self.dt)
    }

    pub fn train_grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(0.0, self.dt, self.n_samples)
    }

    pub fn test_grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(0.0, self.dt, (self.test_duration / self.dt).round() as usize + 1)
    }

    pub fn training(&self) -> TrainingConfig {
        TrainingConfig {
            lr: self.lr,
            lr_decay: self.lr_decay,
            epochs: self.epochs,
            batch_size: self.batch_size,
            patience: self.patience,
            val_fraction: self.val_fraction,
            seed: self.seed,
        }
    }

    pub fn model_setup(&self) -> ModelSetup {
        ModelSetup {
            kind: self.structure,
            system: self.system.system(),
            hidden: self.hidden.clone(),
            prior: None,
            lambda_res: self.lambda_res,
            pair_map: None,
        }
    }

    /// Integrated state dimension, including appended constants.
    pub fn state_dim(&self) -> usize {
        let sys = self.system.system();
        match self.structure {
            StructureKind::ExtendedState => sys.d_x() + sys.params().len(),
            _ => sys.d_x(),
        }
    }

    pub fn recognition_setup(&self) -> RecognitionSetup {
        let sys = self.system.system();
        RecognitionSetup {
            kind: self.recognition,
            n_c: self.n_c(),
            d_x: self.state_dim(),
            d_y: sys.d_y(),
            d_u: if sys.recognition_sees_input() { sys.d_u() } else { 0 },
            d_omega: self.d_omega,
            d_z: self.d_z,
            d_init: match self.omega_c {
                Some(omega_c) => DInit::Butterworth { omega_c },
                None => DInit::Diagonal,
            },
            train_d: self.train_d,
            psi_hidden: self.psi_hidden.clone(),
        }
    }

    fn dataset(&self, count: usize, grid: &TimeGrid, seed: u64) -> Result<Vec<Trajectory>> {
        let sys = self.system.system();
        generate_dataset(
            &sys,
            &InputFamily::default_for(&sys),
            &NoiseSpec {
                variance: self.noise_variance,
                seed,
            },
            count,
            grid,
            &X0Sampler::unit_box(sys.d_x()),
        )
    }

    pub fn training_set(&self) -> Result<Vec<Trajectory>> {
        self.dataset(self.n_train, &self.train_grid()?, self.seed)
    }

    pub fn test_set(&self) -> Result<Vec<Trajectory>> {
        self.dataset(self.n_test, &self.test_grid()?, self.seed.wrapping_add(TEST_SEED_OFFSET))
    }

    /// Untrained learner with the scaler fitted on `train`.
    pub fn learner(&self, train: &[Trajectory]) -> Result<Learner> {
        let sys = self.system.system();
        let scaler = Scaler::fit(train, &sys.measured(), self.state_dim())?;
        let mut learner = Learner::new(&self.model_setup(), &self.recognition_setup(), scaler, self.seed)?;
        learner.fit_feature_scaling(train)?;
        Ok(learner)
    }
}

/// A trained learner, its training curves and its test metrics.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub learner: Learner,
    pub training: MetricsReport,
    pub test: MetricsReport,
}

pub fn train_on(cfg: &ExperimentConfig, data: &[Trajectory]) -> Result<(Learner, MetricsReport)> {
    let mut learner = cfg.learner(data)?;
    let report = train(&mut learner, data, &cfg.training())?;
    Ok((learner, report))
}

/// Generates both datasets, trains, then evaluates on the test set.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let data = cfg.training_set()?;
    let (learner, training) = train_on(cfg, &data)?;
    let test = evaluate_rmse(&learner, &cfg.test_set()?)?.with_training(&training);
    Ok(RunOutcome { learner, training, test })
}

/// Median RMSE of the zero predictor on scaled test outputs.
pub fn zero_predictor_median(scaler: &Scaler, test: &[Trajectory]) -> MetricsReport {
    let rmse = test
        .iter()
        .map(|tr| {
            let mut sum = 0.0;
            for row in tr.y.rows() {
                for (k, &v) in row.iter().enumerate() {
                    // prediction 0 in scaled units
                    sum += scaler.scale_y(k, v).powi(2);
                }
            }
            (sum / (tr.y.values.len().max(1)) as f64).sqrt()
        })
        .collect();
    MetricsReport::from_rmse(rmse)
}

/// One ablation cell.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationEntry {
    pub axis: AblationAxis,
    pub value: f64,
    pub repeat: usize,
    pub seed: u64,
    pub report: MetricsReport,
}

/// Config of one ablation cell.
pub fn ablation_config(base: &ExperimentConfig, axis: AblationAxis, value: f64, repeat: usize) -> Result<ExperimentConfig> {
    let mut cfg = base.clone();
    cfg.ablation = None;
    cfg.seed = base.seed.wrapping_add(repeat as u64);
    match axis {
        AblationAxis::TcSteps => {
            if value < 0.0 || value.fract() != 0.0 {
                return Err(Error::Config(format!("t_c steps must be a non-negative integer, got {value}")));
            }
            cfg.t_c = value * base.dt;
        }
        AblationAxis::NoiseVariance => cfg.noise_variance = value,
    }
    cfg.validate()?;
    Ok(cfg)
}

/// One train and evaluate per value and repeat.
pub fn ablate(base: &ExperimentConfig, spec: &AblationSpec) -> Result<Vec<AblationEntry>> {
    if spec.values.is_empty() {
        return Err(Error::Config("ablation needs at least one value".into()));
    }
    let mut out = Vec::with_capacity(spec.values.len() * spec.repeats);
    for repeat in 0..spec.repeats {
        for &value in &spec.values {
            let cfg = ablation_config(base, spec.axis, value, repeat)?;
            log::info!("ablation {:?} = {value}, repeat {repeat}", spec.axis);
            let outcome = run(&cfg)?;
            out.push(AblationEntry {
                axis: spec.axis,
                value,
                repeat,
                seed: cfg.seed,
                report: outcome.test.with_label(format!("{:?}={value}", spec.axis)),
            });
        }
    }
    Ok(out)
}

/// Filter against open-loop rollout on one stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EkfComparison {
    pub stream: usize,
    pub ekf_rmse: f64,
    pub open_loop_rmse: f64,
    /// Posterior means, one row per sample.
    #[serde(skip)]
    pub estimates: Vec<Vec<f64>>,
    #[serde(skip)]
    pub truth: Vec<Vec<f64>>,
}

/// Runs the filter with the learned model on seeded streams of the true
/// system. Both estimators start from the same perturbed initial state.
pub fn ekf_streams(cfg: &ExperimentConfig, learner: &Learner) -> Result<Vec<EkfComparison>> {
    let sys = cfg.system.system();
    let settings = &cfg.ekf;
    let d_x = learner.model.state_dim;
    if d_x != sys.d_x() {
        return Err(Error::Config(format!(
            "filter comparison needs states matching the system, model has {d_x} and {} has {}",
            sys.name(),
            sys.d_x()
        )));
    }
    let grid = TimeGrid::new(0.0, settings.dt, (settings.duration / settings.dt).round() as usize + 1)?;
    let family = InputFamily::default_for(&sys);
    let r = settings.r.unwrap_or(cfg.noise_variance.max(1e-8));
    let mut ekf_cfg = EkfConfig::isotropic(d_x, sys.measured(), settings.dt, r);
    ekf_cfg.q = DMatrix::identity(d_x, d_x) * settings.q;
    let dynamics = ModelDynamics {
        model: &learner.model,
        params: &learner.params.values,
    };
    let seed = cfg.seed.wrapping_add(EKF_SEED_OFFSET);
    (0..settings.streams)
        .map(|j| {
            let mut rng = crate::benchsys::trajectory_rng(seed, j);
            let x0 = X0Sampler::unit_box(d_x).sample(&mut rng);
            let input = family.sample(&mut rng);
            let tr = simulate(&sys, &x0, input, &grid, cfg.noise_variance, &mut rng)?;
            let mut init_rng = ChaCha8Rng::seed_from_u64(seed ^ (j as u64).wrapping_mul(0x9e37_79b9));
            let guess: Vec<f64> = x0
                .iter()
                .map(|v| v + init_rng.random_range(-settings.init_error..=settings.init_error))
                .collect();
            let init = EkfState::new(&guess, DMatrix::identity(d_x, d_x) * settings.init_variance)?;
            let truth: Vec<Vec<f64>> = tr.x.as_ref().expect("simulated").rows().map(|r| r.to_vec()).collect();
            let estimates = run_filter(&dynamics, init, &tr.y, Some(&tr.input), &ekf_cfg)?;
            let open = open_loop(&dynamics, &guess, &grid, Some(&tr.input))?;
            Ok(EkfComparison {
                stream: j,
                ekf_rmse: state_rmse(&estimates, &truth),
                open_loop_rmse: state_rmse(&open, &truth),
                estimates,
                truth,
            })
        })
        .collect()
}
