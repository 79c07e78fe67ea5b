//! Subcommand implementations.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use ckm_core::dataset::{assign_splits, quantize, read_dataset, write_dataset, write_png, Split};
use ckm_core::evaluation::{evaluate, export_maps, predict_all, save_report};
use ckm_core::inference::{CgmPredictor, ModelPredictor};
use ckm_core::training::{load_predictor, save_outcome, train, CHECKPOINT_FILE};
use ckm_core::{gen_corpus, CkmError, Dataset, Scheme};
use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::service::{check_location, infer_new_ap, serve, AppState};

pub const CONFIG_ECHO: &str = "run_config.json";

#[derive(Debug, Parser)]
#[command(name = "ckm", version, about = "Cross-AP channel-gain map inference")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Configuration file, JSON or `dotted.key = value` lines.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for data generation and training.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory, which also receives `run_config.json`; unused by `serve`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Extra `dotted.key=value` override, repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a synthetic corpus and write it as a dataset.
    GenData {
        /// Number of environments.
        #[arg(long)]
        maps: Option<usize>,
        /// APs per environment.
        #[arg(long)]
        aps: Option<usize>,
        /// Environments assigned to the validation split.
        #[arg(long)]
        val: Option<usize>,
        /// Grid width in cells.
        #[arg(long)]
        width: Option<usize>,
    },
    /// Train the UNet and keep the best validation checkpoint.
    Train {
        /// Dataset directory.
        #[arg(long, default_value = "data")]
        data: PathBuf,
        /// Number of epochs.
        #[arg(long)]
        epochs: Option<usize>,
        /// Samples per optimizer step.
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Score the model and the baselines on the validation split.
    Eval {
        /// Dataset directory.
        #[arg(long, default_value = "data")]
        data: PathBuf,
        /// Checkpoint file, or a training output directory.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Also export maps for the first N validation samples.
        #[arg(long, default_value_t = 0)]
        export: usize,
    },
    /// Predict the map of a new AP and write it as images plus JSON.
    Infer {
        /// Dataset directory.
        #[arg(long, default_value = "data")]
        data: PathBuf,
        /// Checkpoint file, or a training output directory.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Environment id.
        #[arg(long)]
        env: String,
        /// Target location as `row,col`.
        #[arg(long, value_parser = parse_coord)]
        at: (i64, i64),
        /// Comma-separated schemes; defaults to all.
        #[arg(long, value_delimiter = ',')]
        schemes: Vec<Scheme>,
    },
    /// Run the HTTP inference service.
    Serve {
        /// Dataset directory.
        #[arg(long, default_value = "data")]
        data: PathBuf,
        /// Checkpoint file, or a training output directory.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Port to listen on.
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Address to bind.
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
}

fn parse_coord(s: &str) -> Result<(i64, i64), String> {
    let (r, c) = s.split_once(',').ok_or_else(|| format!("expected `row,col`, got `{s}`"))?;
    let p = |v: &str| v.trim().parse::<i64>().map_err(|e| format!("bad coordinate `{v}`: {e}"));
    Ok((p(r)?, p(c)?))
}

fn effective_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let base = match &cli.common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let mut overrides: Vec<String> = Vec::new();
    if let Some(s) = cli.common.seed {
        overrides.push(format!("data.seed={s}"));
        overrides.push(format!("train.seed={s}"));
    }
    match &cli.command {
        Command::GenData { maps, aps, val, width } => {
            let pairs = [("data.sim.maps", maps), ("data.sim.aps_per_map", aps), ("data.val_envs", val), ("data.sim.grid.width_cells", width)];
            overrides.extend(pairs.iter().filter_map(|(k, v)| v.map(|v| format!("{k}={v}"))));
        }
        Command::Train { epochs, batch_size, .. } => {
            let pairs = [("train.epochs", epochs), ("train.batch_size", batch_size)];
            overrides.extend(pairs.iter().filter_map(|(k, v)| v.map(|v| format!("{k}={v}"))));
        }
        _ => {}
    }
    overrides.extend(cli.common.set.iter().cloned());
    base.with_overrides(overrides.iter().map(String::as_str))
}

fn out_dir(cli: &Cli, default: &str) -> PathBuf {
    cli.common.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn write_echo(config: &RunConfig, dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
    let path = dir.join(CONFIG_ECHO);
    std::fs::write(&path, config.to_json()).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn load_model(checkpoint: &Path) -> Result<ModelPredictor, CliError> {
    let path = if checkpoint.is_dir() {
        checkpoint.join(CHECKPOINT_FILE)
    } else {
        checkpoint.to_path_buf()
    };
    Ok(load_predictor(&path)?)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let config = effective_config(&cli)?;
    match &cli.command {
        Command::GenData { .. } => gen_data(&config, &out_dir(&cli, "data")),
        Command::Train { data, .. } => run_train(&config, data, &out_dir(&cli, "runs/train")),
        Command::Eval { data, checkpoint, export } => {
            run_eval(&config, data, checkpoint, *export, &out_dir(&cli, "runs/eval"))
        }
        Command::Infer { data, checkpoint, env, at, schemes } => {
            run_infer(&config, data, checkpoint, env, *at, schemes, &out_dir(&cli, "runs/infer"))
        }
        Command::Serve { data, checkpoint, port, host } => run_serve(&config, data, checkpoint, host, *port),
    }
}

fn gen_data(config: &RunConfig, out: &Path) -> Result<(), CliError> {
    let d = &config.data;
    if d.val_envs >= d.sim.maps {
        return Err(CliError::Config(format!(
            "val_envs ({}) must be smaller than maps ({})",
            d.val_envs, d.sim.maps
        )));
    }
    d.sim.grid.validate()?;
    let scenarios = gen_corpus(&d.sim, d.seed)?;
    let manifest = write_dataset(&scenarios, &assign_splits(scenarios.len(), d.val_envs), out)?;
    write_echo(config, out)?;
    println!(
        "wrote {} environments ({} train, {} val) to {}",
        manifest.environments.len(),
        manifest.count(Split::Train),
        manifest.count(Split::Val),
        out.display()
    );
    Ok(())
}

fn run_train(config: &RunConfig, data: &Path, out: &Path) -> Result<(), CliError> {
    config.train.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let ds = read_dataset(data)?;
    let outcome = train(&config.train, &ds.split(Split::Train), &ds.split(Split::Val))?;
    save_outcome(&outcome, out)?;
    write_echo(config, out)?;
    let r = &outcome.report;
    println!(
        "best epoch {} of {}: validation mse {:.3} dB^2; checkpoint in {}",
        r.best_epoch + 1,
        r.val_mse_db2.len(),
        r.best_val_mse_db2,
        out.display()
    );
    Ok(())
}

fn run_eval(config: &RunConfig, data: &Path, checkpoint: &Path, export: usize, out: &Path) -> Result<(), CliError> {
    let ds = read_dataset(data)?;
    let val = ds.split(Split::Val);
    let model = if config.eval.schemes.contains(&Scheme::Model) {
        Some(load_model(checkpoint)?)
    } else {
        None
    };
    let model_ref = model.as_ref().map(|m| m as &dyn CgmPredictor);
    let report = evaluate(model_ref, &val, &config.eval)?;
    save_report(&report, out)?;
    write_echo(config, out)?;
    let samples = val.iter().flat_map(|sc| (0..sc.len()).map(move |k| (sc, k)));
    for (sc, k) in samples.take(export) {
        let preds = predict_all(model_ref, &config.eval, sc, k)?;
        export_maps(sc, k, &preds, &out.join("maps"))?;
    }
    print!("{}", report.to_table());
    Ok(())
}

fn find_env<'a>(ds: &'a Dataset, env: &str) -> Result<&'a ckm_core::Scenario, CliError> {
    ds.find(env)
        .ok_or_else(|| CliError::Config(format!("unknown environment `{env}`")))
}

fn run_infer(
    config: &RunConfig,
    data: &Path,
    checkpoint: &Path,
    env: &str,
    at: (i64, i64),
    schemes: &[Scheme],
    out: &Path,
) -> Result<(), CliError> {
    let ds = read_dataset(data)?;
    let sc = find_env(&ds, env)?;
    let coord = check_location(sc, at.0, at.1)?;
    let schemes = if schemes.is_empty() { Scheme::ALL.to_vec() } else { schemes.to_vec() };
    let model = load_model(checkpoint)?;
    let (resp, maps) = infer_new_ap(
        &model,
        &config.eval.baselines,
        sc,
        coord,
        &schemes,
        config.serve.coverage_threshold_db,
    )?;
    std::fs::create_dir_all(out).map_err(|e| CliError::Runtime(format!("{}: {e}", out.display())))?;
    let stem = format!("{}_r{}_c{}", env, coord.row, coord.col);
    for (s, map) in schemes.iter().zip(&maps) {
        let px: Vec<u8> = map.values().iter().map(|&v| quantize(v)).collect();
        write_png(&out.join(format!("{stem}_{}.png", s.name())), sc.spec.width_cells, &px)?;
    }
    let json_path = out.join(format!("{stem}.json"));
    let json = serde_json::to_string(&resp).map_err(CkmError::from)?;
    std::fs::write(&json_path, json).map_err(|e| CliError::Runtime(format!("{}: {e}", json_path.display())))?;
    write_echo(config, out)?;
    for r in &resp.results {
        println!(
            "{:<14} coverage {:.3} (>= {} dB), min {:.1} dB, max {:.1} dB, mean {:.1} dB",
            r.scheme.name(),
            r.stats.coverage_fraction_above_threshold,
            resp.threshold_db,
            r.stats.min_db,
            r.stats.max_db,
            r.stats.mean_db
        );
    }
    Ok(())
}

fn run_serve(config: &RunConfig, data: &Path, checkpoint: &Path, host: &str, port: u16) -> Result<(), CliError> {
    let ds = read_dataset(data)?;
    if ds.scenarios.is_empty() {
        return Err(CliError::Config("dataset has no scenarios to serve".into()));
    }
    let scenarios = ds
        .manifest
        .environments
        .iter()
        .map(|e| e.split)
        .zip(ds.scenarios)
        .collect();
    let state = Arc::new(AppState {
        scenarios,
        model: load_model(checkpoint)?,
        baselines: config.eval.baselines,
        coverage_threshold_db: config.serve.coverage_threshold_db,
    });
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Runtime(e.to_string()))?;
    rt.block_on(serve(state, host, port))
        .map_err(|e| CliError::Runtime(format!("server on {host}:{port}: {e}")))
}
