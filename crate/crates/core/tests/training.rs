//! Training loop, validation and checkpoint selection on tiny corpora.

use ckm_core::grid::{mse, Coord, GridMap, GridSpec, Scenario};
use ckm_core::inference::CgmPredictor;
use ckm_core::sim::{gen_corpus, SimConfig};
use ckm_core::training::{load_predictor, make_epoch_samples, save_outcome, train, validate, ModelConfig, TrainConfig};
use ckm_core::{CkmError, Result};
use ckm_nn::AdamConfig;

fn tiny_corpus(maps: usize, seed: u64) -> Vec<Scenario> {
    let config = SimConfig {
        grid: GridSpec { width_cells: 16, ..GridSpec::default() },
        maps,
        aps_per_map: 3,
        min_buildings: 1,
        max_buildings: 3,
        ..SimConfig::default()
    };
    gen_corpus(&config, seed).unwrap()
}

fn tiny_config() -> TrainConfig {
    TrainConfig {
        epochs: 3,
        batch_size: 4,
        model: ModelConfig { base_width: 4, depth: Some(2), extra_conv_levels: None },
        ..TrainConfig::default()
    }
}

struct Oracle;
impl CgmPredictor for Oracle {
    fn predict(&self, sc: &Scenario, _t: Coord, exclude: Option<usize>) -> Result<GridMap> {
        Ok(sc.records[exclude.unwrap()].gain.clone())
    }
}

struct Constant(f64);
impl CgmPredictor for Constant {
    fn predict(&self, sc: &Scenario, _t: Coord, _e: Option<usize>) -> Result<GridMap> {
        GridMap::filled(sc.spec, self.0)
    }
}

#[test]
fn validation_with_stub_predictors() {
    let val = tiny_corpus(2, 9);
    let v = validate(&Oracle, &val).unwrap();
    assert_eq!((v.mse_db2, v.n_samples), (0.0, 6));

    // A constant c scores mean((x - c)^2) over every cell of every target,
    // which at the all-sample mean is the variance of the targets in dB.
    let all: Vec<f64> = val.iter().flat_map(|s| s.records.iter().flat_map(|r| r.gain.to_db())).collect();
    let mean_db = all.iter().sum::<f64>() / all.len() as f64;
    let var_db = all.iter().map(|x| (x - mean_db).powi(2)).sum::<f64>() / all.len() as f64;
    let c = val[0].spec.normalize_db(mean_db).unwrap();
    let v = validate(&Constant(c), &val).unwrap();
    assert!((v.mse_db2 - var_db).abs() < 1e-6 * var_db, "{} vs {var_db}", v.mse_db2);
    assert!((v.rmse_db - var_db.sqrt()).abs() < 1e-6);

    let per_sample: Vec<f64> = val
        .iter()
        .flat_map(|s| s.records.iter().map(|r| mse(&GridMap::filled(s.spec, c).unwrap(), &r.gain, true).unwrap()))
        .collect();
    let mean = per_sample.iter().sum::<f64>() / per_sample.len() as f64;
    assert!((v.mse_db2 - mean).abs() < 1e-9);
}

#[test]
fn epoch_orders_differ_between_epochs() {
    let scs = tiny_corpus(5, 1);
    let counts = make_epoch_samples(&scs, 0, 0).len();
    assert_eq!(counts, 15);
    for seed in 0..10 {
        assert_ne!(make_epoch_samples(&scs, seed, 3), make_epoch_samples(&scs, seed, 4));
    }
}

#[test]
fn training_is_deterministic_and_selects_the_best_epoch() {
    let data = tiny_corpus(5, 4);
    let (tr, val) = data.split_at(4);
    let a = train(&tiny_config(), tr, val).unwrap();
    let b = train(&tiny_config(), tr, val).unwrap();
    let strip = |mut r: ckm_core::TrainReport| {
        r.wall_clock_seconds = 0.0;
        r
    };
    assert_eq!(strip(a.report.clone()), strip(b.report.clone()));
    assert_eq!(a.predictor.net, b.predictor.net);

    let r = &a.report;
    assert_eq!(r.val_mse_db2.len(), 3);
    let min = r.val_mse_db2.iter().cloned().fold(f64::INFINITY, f64::min);
    assert_eq!(r.val_mse_db2[r.best_epoch], min);
    assert!(min <= *r.val_mse_db2.last().unwrap());
    let revalidated = validate(&a.predictor, val).unwrap();
    assert_eq!(revalidated.mse_db2, r.best_val_mse_db2);
}

#[test]
fn checkpoint_round_trip_reproduces_predictions() {
    let data = tiny_corpus(3, 5);
    let (tr, val) = data.split_at(2);
    let out = train(&TrainConfig { epochs: 1, ..tiny_config() }, tr, val).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_outcome(&out, dir.path()).unwrap();
    let loaded = load_predictor(&dir.path().join("model.ckpt")).unwrap();
    let t = val[0].records[1].ap_coord;
    assert_eq!(
        loaded.predict(&val[0], t, Some(1)).unwrap(),
        out.predictor.predict(&val[0], t, Some(1)).unwrap()
    );
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("train_report.json")).unwrap()).unwrap();
    assert_eq!(report["best_epoch"], 0);
    assert!(matches!(
        load_predictor(&dir.path().join("absent.ckpt")),
        Err(CkmError::MissingFile(_))
    ));
}

#[test]
fn divergence_aborts_with_diagnostics() {
    let data = tiny_corpus(3, 6);
    let (tr, val) = data.split_at(2);
    let config = TrainConfig {
        adam: AdamConfig { lr: 1e30, ..AdamConfig::default() },
        epochs: 4,
        ..tiny_config()
    };
    match train(&config, tr, val) {
        Err(CkmError::NonFiniteLoss { samples, .. }) => {
            assert!(!samples.is_empty());
            assert!(samples[0].starts_with("env_"));
        }
        Err(CkmError::Nn(ckm_nn::NnError::NonFiniteGradient { .. })) => {}
        other => panic!("expected a non-finite abort, got {:?}", other.map(|o| o.report)),
    }
}

#[test]
fn empty_or_incompatible_splits_are_rejected() {
    let data = tiny_corpus(2, 7);
    assert!(train(&tiny_config(), &data, &[]).is_err());
    assert!(train(&tiny_config(), &[], &data).is_err());
    let odd = TrainConfig {
        model: ModelConfig { base_width: 4, depth: Some(6), extra_conv_levels: None },
        ..tiny_config()
    };
    assert!(train(&odd, &data[..1], &data[1..]).is_err());
}
