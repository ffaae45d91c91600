use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use structnode::experiment::{self, ExperimentConfig, SCHEMA_VERSION};
use structnode::trainer::{self, Learner, MetricsReport};
use structnode::{par, Error};

use crate::error::{CliError, CliResult};
use crate::io;
use crate::GlobalOpts;

const DEFAULT_OUT: &str = "structnode-out";

pub struct Context {
    pub cfg: ExperimentConfig,
    pub out: PathBuf,
}

impl Context {
    pub fn new(opts: &GlobalOpts) -> CliResult<Context> {
        let mut cfg = match &opts.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
                ExperimentConfig::from_json_str(&text).map_err(|e| CliError::format(path, e))?
            }
            None => ExperimentConfig::preset(experiment::SystemPreset::HarmonicOscillator),
        };
        if let Some(seed) = opts.seed {
            cfg.seed = seed;
        }
        if let Some(threads) = opts.threads {
            if threads == 0 {
                return Err(Error::Config("--threads must be at least 1".into()).into());
            }
            if !par::configure_threads(threads) {
                log::warn!("thread pool already configured, --threads {threads} ignored");
            }
        }
        par::set_serial(opts.deterministic);
        let out = opts
            .out
            .clone()
            .or_else(|| cfg.out_dir.as_ref().map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
        cfg.out_dir = Some(out.to_string_lossy().into_owned());
        io::create_dir(&out)?;
        Ok(Context { cfg, out })
    }
}

/// Saved model: the config that built it and the learned parameters.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub learner: Learner,
}

pub fn generate(ctx: &Context) -> CliResult<()> {
    let cfg = &ctx.cfg;
    let sys = cfg.system.system();
    let train = cfg.training_set()?;
    let test = cfg.test_set()?;
    io::write_dataset(&ctx.out.join("train"), &train, &sys, cfg.seed, cfg.noise_variance)?;
    io::write_dataset(
        &ctx.out.join("test"),
        &test,
        &sys,
        cfg.seed.wrapping_add(experiment::TEST_SEED_OFFSET),
        cfg.noise_variance,
    )?;
    io::write_json(&ctx.out.join("config.json"), cfg)?;
    log::info!("wrote {} training and {} test trajectories to {}", train.len(), test.len(), ctx.out.display());
    Ok(())
}

fn load_model(ctx: &Context, model: Option<PathBuf>) -> CliResult<(PathBuf, ModelFile)> {
    let path = model.unwrap_or_else(|| ctx.out.join("model.json"));
    let file: ModelFile = io::read_json(&path)?;
    if file.schema_version != SCHEMA_VERSION {
        return Err(CliError::format(&path, format!("unsupported schema_version {}", file.schema_version)));
    }
    Ok((path, file))
}

pub fn train(ctx: &Context, data: Option<PathBuf>) -> CliResult<()> {
    let cfg = &ctx.cfg;
    let dir = data.unwrap_or_else(|| ctx.out.join("train"));
    let train = io::read_dataset(&dir, &cfg.system.system())?;
    let (learner, report) = experiment::train_on(cfg, &train)?;
    let file = ModelFile {
        schema_version: SCHEMA_VERSION,
        config: cfg.clone(),
        learner,
    };
    io::write_json(&ctx.out.join("model.json"), &file)?;
    io::write_json(&ctx.out.join("train_metrics.json"), &report)?;
    log::info!("trained {} epochs, final loss {:?}", report.epochs_run, report.train_loss.last());
    Ok(())
}

fn write_predictions(dir: &Path, learner: &Learner, test: &[structnode::benchsys::Trajectory]) -> CliResult<()> {
    io::create_dir(dir)?;
    let d_y = learner.model.d_y();
    let d_x = learner.model.state_dim;
    let mut header = vec!["t".to_string()];
    header.extend(io::numbered("y", d_y));
    header.extend(io::numbered("y_hat", d_y));
    header.extend(io::numbered("x_hat", d_x));
    for (j, tr) in test.iter().enumerate() {
        let pred = trainer::predict(learner, tr)?;
        let rows = (0..tr.grid.n).map(|i| {
            let mut row = vec![tr.grid.time(i)];
            row.extend_from_slice(tr.y.row(i));
            row.extend_from_slice(&pred.y[i]);
            row.extend_from_slice(&pred.x[i]);
            row
        });
        io::write_rows(&dir.join(format!("pred_{j:04}.csv")), &header, rows)?;
    }
    Ok(())
}

pub fn eval(ctx: &Context, model: Option<PathBuf>, data: Option<PathBuf>) -> CliResult<()> {
    let (_, file) = load_model(ctx, model)?;
    let dir = data.unwrap_or_else(|| ctx.out.join("test"));
    let test = io::read_dataset(&dir, &file.config.system.system())?;
    let mut report = trainer::evaluate_rmse(&file.learner, &test)?;
    let training: Option<MetricsReport> = io::read_json(&ctx.out.join("train_metrics.json")).ok();
    if let Some(t) = &training {
        report = report.with_training(t);
    }
    write_predictions(&ctx.out.join("predictions"), &file.learner, &test)?;
    io::write_json(&ctx.out.join("metrics.json"), &report)?;
    println!("median rmse {:.4} (iqr {:.4}) over {} trajectories", report.median, report.iqr, report.rmse.len());
    for (k, v) in &report.physical {
        println!("{k} = {v:.6}");
    }
    Ok(())
}

pub fn ablate(ctx: &Context) -> CliResult<()> {
    let cfg = &ctx.cfg;
    let spec = cfg
        .ablation
        .clone()
        .ok_or_else(|| Error::Config("config has no `ablation` section".into()))?;
    let entries = experiment::ablate(cfg, &spec)?;
    io::write_json(&ctx.out.join("ablation.json"), &entries)?;
    for e in &entries {
        println!("{:?} = {} (repeat {}): median rmse {:.4}", e.axis, e.value, e.repeat, e.report.median);
    }
    Ok(())
}

#[derive(Serialize)]
struct EkfSummary<'a> {
    streams: &'a [experiment::EkfComparison],
    ekf_median: f64,
    open_loop_median: f64,
}

pub fn ekf(ctx: &Context, model: Option<PathBuf>) -> CliResult<()> {
    let (_, file) = load_model(ctx, model)?;
    let mut cfg = file.config.clone();
    cfg.ekf = ctx.cfg.ekf.clone();
    cfg.seed = ctx.cfg.seed;
    let runs = experiment::ekf_streams(&cfg, &file.learner)?;
    let dir = ctx.out.join("ekf");
    io::create_dir(&dir)?;
    let d_x = file.learner.model.state_dim;
    let mut header = vec!["t".to_string()];
    header.extend(io::numbered("x", d_x));
    header.extend(io::numbered("x_hat", d_x));
    for run in &runs {
        let rows = run.truth.iter().zip(&run.estimates).enumerate().map(|(i, (x, e))| {
            let mut row = vec![i as f64 * cfg.ekf.dt];
            row.extend_from_slice(x);
            row.extend_from_slice(e);
            row
        });
        io::write_rows(&dir.join(format!("stream_{:04}.csv", run.stream)), &header, rows)?;
    }
    let median = |v: Vec<f64>| MetricsReport::from_rmse(v).median;
    let summary = EkfSummary {
        streams: &runs,
        ekf_median: median(runs.iter().map(|r| r.ekf_rmse).collect()),
        open_loop_median: median(runs.iter().map(|r| r.open_loop_rmse).collect()),
    };
    io::write_json(&ctx.out.join("ekf.json"), &summary)?;
    println!(
        "state rmse: filter {:.4}, open loop {:.4} (medians over {} streams)",
        summary.ekf_median,
        summary.open_loop_median,
        runs.len()
    );
    Ok(())
}
