//! Leave-one-out training of the UNet with per-epoch validation.

use std::path::Path;
use std::time::Instant;

use ckm_nn::{checkpoint, mse_loss, AdamConfig, AdamState, Shape4, Tensor4, UNet, UNetConfig};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assembly::{assemble_padded, check_no_leakage, AssemblyConfig};
use crate::error::{io_err, CkmError, Result};
use crate::grid::{mse, mse_to_rmse, Scenario};
use crate::inference::{CgmPredictor, ModelPredictor};

/// Architecture knobs; unset fields follow the grid-dependent defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub base_width: usize,
    pub depth: Option<usize>,
    pub extra_conv_levels: Option<Vec<usize>>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            base_width: 32,
            depth: None,
            extra_conv_levels: None,
        }
    }
}

impl ModelConfig {
    pub fn resolve(&self, in_channels: usize, grid_width: usize) -> Result<UNetConfig> {
        let depth = self.depth.unwrap_or_else(|| UNetConfig::default_depth(grid_width));
        let config = UNetConfig {
            in_channels,
            base_width: self.base_width,
            depth,
            extra_conv_levels: self
                .extra_conv_levels
                .clone()
                .unwrap_or_else(|| UNetConfig::default_extra_levels(depth)),
        };
        config.validate()?;
        config.check_grid(grid_width)?;
        Ok(config)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub assembly: AssemblyConfig,
    pub seed: u64,
    pub model: ModelConfig,
    /// Feature channels including the target channel; defaults to the largest
    /// AP count in the training and validation scenarios.
    pub in_channels: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 15,
            batch_size: 15,
            adam: AdamConfig::default(),
            assembly: AssemblyConfig::default(),
            seed: 0,
            model: ModelConfig::default(),
            in_channels: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(CkmError::Training("epochs must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(CkmError::Training("batch_size must be positive".into()));
        }
        if !(self.adam.lr > 0.0 && self.adam.lr.is_finite()) {
            return Err(CkmError::Training(format!("learning rate must be positive, got {}", self.adam.lr)));
        }
        self.assembly.validate()
    }
}

/// One supervision sample: scenario index and the record used as target.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleId {
    pub scenario: usize,
    pub record: usize,
}

/// Every (scenario, record) pair, shuffled by a stream fixed by `(seed, epoch)`.
pub fn make_epoch_samples(scenarios: &[Scenario], seed: u64, epoch: usize) -> Vec<SampleId> {
    let mut samples: Vec<SampleId> = scenarios
        .iter()
        .enumerate()
        .flat_map(|(s, sc)| (0..sc.len()).map(move |r| SampleId { scenario: s, record: r }))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    samples.shuffle(&mut rng);
    samples
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub val_mse_db2: Vec<f64>,
    /// Zero-based index into `val_mse_db2`.
    pub best_epoch: usize,
    pub best_val_mse_db2: f64,
    pub model: UNetConfig,
    pub param_count: usize,
    pub config: TrainConfig,
    /// Excluded from reproducibility comparisons.
    pub wall_clock_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationResult {
    pub mse_db2: f64,
    pub rmse_db: f64,
    pub n_samples: usize,
}

/// Leave-one-out error of `predictor` over every record of `scenarios`.
pub fn validate(predictor: &dyn CgmPredictor, scenarios: &[Scenario]) -> Result<ValidationResult> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for sc in scenarios {
        for (k, rec) in sc.records.iter().enumerate() {
            let pred = predictor.predict(sc, rec.ap_coord, Some(k))?;
            sum += mse(&pred, &rec.gain, true)?;
            n += 1;
        }
    }
    if n == 0 {
        return Err(CkmError::Training("validation set has no samples".into()));
    }
    let mse_db2 = sum / n as f64;
    Ok(ValidationResult {
        mse_db2,
        rmse_db: mse_to_rmse(mse_db2)?,
        n_samples: n,
    })
}

/// Index of the smallest value; the earliest wins ties.
pub fn best_epoch(val: &[f64]) -> Option<usize> {
    val.iter()
        .enumerate()
        .fold(None, |best: Option<(usize, f64)>, (i, &v)| match best {
            Some((_, b)) if b <= v => best,
            _ => Some((i, v)),
        })
        .map(|(i, _)| i)
}

/// Trained network (best validation epoch) and its report.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub predictor: ModelPredictor,
    pub report: TrainReport,
}

fn infer_channels(train: &[Scenario], val: &[Scenario]) -> usize {
    train.iter().chain(val).map(Scenario::len).max().unwrap_or(0)
}

fn build_batch(
    scenarios: &[Scenario],
    batch: &[SampleId],
    config: &TrainConfig,
    channels: usize,
) -> Result<(Tensor4<f32>, Tensor4<f32>)> {
    let w = scenarios[batch[0].scenario].spec.width_cells;
    let mut x = Vec::with_capacity(batch.len() * channels * w * w);
    let mut t = Vec::with_capacity(batch.len() * w * w);
    for id in batch {
        let sc = &scenarios[id.scenario];
        let rec = &sc.records[id.record];
        let stack = assemble_padded(sc, rec.ap_coord, &config.assembly, Some(id.record), channels)?;
        check_no_leakage(&stack, rec.gain.values())?;
        x.extend_from_slice(stack.data());
        t.extend(rec.gain.values().iter().map(|&v| v as f32));
    }
    let b = batch.len();
    Ok((
        Tensor4::from_vec(Shape4::new(b, channels, w, w), x)?,
        Tensor4::from_vec(Shape4::new(b, 1, w, w), t)?,
    ))
}

fn check_grids(train: &[Scenario], val: &[Scenario]) -> Result<usize> {
    let first = train
        .first()
        .ok_or_else(|| CkmError::Training("training split is empty".into()))?;
    if val.is_empty() {
        return Err(CkmError::Training("validation split is empty".into()));
    }
    for sc in train.iter().chain(val) {
        if sc.spec != first.spec {
            return Err(CkmError::SpecMismatch(format!(
                "environment {} uses a different grid than {}",
                sc.environment_id, first.environment_id
            )));
        }
        if sc.len() < 2 {
            return Err(CkmError::Training(format!(
                "environment {} needs at least 2 APs for leave-one-out training",
                sc.environment_id
            )));
        }
    }
    Ok(first.spec.width_cells)
}

/// Trains on `train`, validates on `val` after every epoch and returns the
/// parameters of the epoch with the lowest validation MSE.
pub fn train(config: &TrainConfig, train: &[Scenario], val: &[Scenario]) -> Result<TrainOutcome> {
    config.validate()?;
    let width = check_grids(train, val)?;
    let channels = config.in_channels.unwrap_or_else(|| infer_channels(train, val));
    if let Some(sc) = train.iter().chain(val).find(|s| s.len() > channels) {
        return Err(CkmError::TooManyAps {
            existing: sc.len() - 1,
            slots: channels.saturating_sub(1),
        });
    }
    let net_config = config.model.resolve(channels, width)?;
    let mut net = UNet::<f32>::build(net_config.clone(), config.seed)?;
    let mut adam = AdamState::new(config.adam, net.params());
    let started = Instant::now();

    let mut train_loss = Vec::with_capacity(config.epochs);
    let mut val_mse = Vec::with_capacity(config.epochs);
    let mut best: Option<UNet<f32>> = None;

    for epoch in 0..config.epochs {
        let samples = make_epoch_samples(train, config.seed, epoch);
        let mut loss_sum = 0.0;
        for batch in samples.chunks(config.batch_size) {
            let (x, t) = build_batch(train, batch, config, channels)?;
            let (y, trace) = net.forward_traced(&x)?;
            let loss = mse_loss(&y, &t)?;
            if !loss.value.is_finite() {
                return Err(CkmError::NonFiniteLoss {
                    epoch,
                    samples: batch
                        .iter()
                        .map(|id| format!("{}/ap_{}", train[id.scenario].environment_id, id.record))
                        .collect(),
                });
            }
            net.zero_grad();
            net.backward(&trace, &loss.grad)?;
            adam.step(net.params_mut())?;
            loss_sum += loss.value as f64 * batch.len() as f64;
        }
        let epoch_loss = loss_sum / samples.len() as f64;
        let predictor = ModelPredictor::new(net.clone(), config.assembly);
        let v = validate(&predictor, val)?;
        log::info!(
            "epoch {}/{}: train loss {epoch_loss:.6}, val mse {:.3} dB^2 (rmse {:.3} dB)",
            epoch + 1,
            config.epochs,
            v.mse_db2,
            v.rmse_db
        );
        if val_mse.iter().all(|&b| v.mse_db2 < b) {
            best = Some(net.clone());
        }
        train_loss.push(epoch_loss);
        val_mse.push(v.mse_db2);
    }

    let best_idx = best_epoch(&val_mse).expect("at least one epoch");
    let net = best.expect("best epoch recorded");
    let report = TrainReport {
        train_loss,
        best_val_mse_db2: val_mse[best_idx],
        val_mse_db2: val_mse,
        best_epoch: best_idx,
        param_count: net.count_params(),
        model: net_config,
        config: config.clone(),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    Ok(TrainOutcome {
        predictor: ModelPredictor::new(net, config.assembly),
        report,
    })
}

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const REPORT_FILE: &str = "train_report.json";

/// Writes `model.ckpt` and `train_report.json` under `dir`.
pub fn save_outcome(outcome: &TrainOutcome, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let meta = serde_json::json!({ "assembly": outcome.predictor.assembly });
    checkpoint::save(&dir.join(CHECKPOINT_FILE), &outcome.predictor.net, &meta)?;
    let path = dir.join(REPORT_FILE);
    let json = serde_json::to_string_pretty(&outcome.report)?;
    std::fs::write(&path, json).map_err(io_err(path))?;
    Ok(())
}

/// Loads a checkpoint written by [`save_outcome`].
pub fn load_predictor(path: &Path) -> Result<ModelPredictor> {
    if !path.exists() {
        return Err(CkmError::MissingFile(path.to_path_buf()));
    }
    let (net, meta) = checkpoint::load(path)?;
    let assembly = match meta.get("assembly") {
        Some(v) => serde_json::from_value(v.clone())?,
        None => AssemblyConfig::default(),
    };
    assembly.validate()?;
    Ok(ModelPredictor::new(net, assembly))
}
