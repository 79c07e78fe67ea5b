//! Leave-one-out comparison of the model against the baselines.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{quantize, write_png};
use crate::error::{io_err, CkmError, Result};
use crate::grid::{mse, mse_to_rmse, GridMap, Scenario};
use crate::inference::{predict_baseline, BaselineConfig, CgmPredictor, Scheme};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub baselines: BaselineConfig,
    /// Schemes to score, reported in [`Scheme::ALL`] order.
    pub schemes: Vec<Scheme>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            baselines: BaselineConfig::default(),
            schemes: Scheme::ALL.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemeSummary {
    pub scheme: Scheme,
    pub label: String,
    pub mse_db2: f64,
    pub rmse_db: f64,
    pub n_samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    pub env_id: String,
    pub ap_index: usize,
    pub row: usize,
    pub col: usize,
    pub mse_db2: BTreeMap<Scheme, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schemes: Vec<SchemeSummary>,
    pub samples: Vec<SampleRow>,
    /// Share of samples where the model beats the weighted baseline.
    pub model_beats_weighted: Option<f64>,
    pub config: EvalConfig,
}

impl EvalReport {
    pub fn summary(&self, scheme: Scheme) -> Option<&SchemeSummary> {
        self.schemes.iter().find(|s| s.scheme == scheme)
    }

    /// One line per sample: `env_id,ap_index,row,col,<scheme>...`.
    pub fn to_csv(&self) -> String {
        let names: Vec<Scheme> = self.schemes.iter().map(|s| s.scheme).collect();
        let mut out = String::from("env_id,ap_index,row,col");
        for s in &names {
            out.push(',');
            out.push_str(s.name());
        }
        out.push('\n');
        for r in &self.samples {
            let _ = write!(out, "{},{},{},{}", r.env_id, r.ap_index, r.row, r.col);
            for s in &names {
                let _ = write!(out, ",{}", r.mse_db2[s]);
            }
            out.push('\n');
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("{:<40} {:>12} {:>10} {:>8}\n", "scheme", "mse [dB^2]", "rmse [dB]", "samples");
        for s in &self.schemes {
            let _ = writeln!(
                out,
                "{:<40} {:>12.3} {:>10.3} {:>8}",
                s.label, s.mse_db2, s.rmse_db, s.n_samples
            );
        }
        if let Some(f) = self.model_beats_weighted {
            let _ = writeln!(out, "model beats weighted on {:.1}% of samples", 100.0 * f);
        }
        out
    }
}

fn ordered(schemes: &[Scheme]) -> Vec<Scheme> {
    Scheme::ALL.into_iter().filter(|s| schemes.contains(s)).collect()
}

/// Every scheme's prediction for record `k` of `scenario`, in report order.
pub fn predict_all(
    model: Option<&dyn CgmPredictor>,
    config: &EvalConfig,
    scenario: &Scenario,
    k: usize,
) -> Result<Vec<(Scheme, GridMap)>> {
    let target = scenario.records[k].ap_coord;
    ordered(&config.schemes)
        .into_iter()
        .map(|s| {
            let map = match s {
                Scheme::Model => model
                    .ok_or_else(|| CkmError::InvalidScenario("model scheme requested without a model".into()))?
                    .predict(scenario, target, Some(k))?,
                _ => predict_baseline(s, &config.baselines, scenario, target, Some(k))?,
            };
            Ok((s, map))
        })
        .collect()
}

/// Scores every scheme on every (scenario, record) pair of `scenarios`.
pub fn evaluate(model: Option<&dyn CgmPredictor>, scenarios: &[Scenario], config: &EvalConfig) -> Result<EvalReport> {
    let schemes = ordered(&config.schemes);
    if schemes.is_empty() {
        return Err(CkmError::InvalidScenario("no schemes selected".into()));
    }
    let mut samples = Vec::new();
    for sc in scenarios {
        for (k, rec) in sc.records.iter().enumerate() {
            let mut row = SampleRow {
                env_id: sc.environment_id.clone(),
                ap_index: k,
                row: rec.ap_coord.row,
                col: rec.ap_coord.col,
                mse_db2: BTreeMap::new(),
            };
            for (s, map) in predict_all(model, config, sc, k)? {
                row.mse_db2.insert(s, mse(&map, &rec.gain, true)?);
            }
            samples.push(row);
        }
    }
    if samples.is_empty() {
        return Err(CkmError::InvalidScenario("evaluation set has no samples".into()));
    }
    let n = samples.len();
    let summaries = schemes
        .iter()
        .map(|&s| {
            let m = samples.iter().map(|r| r.mse_db2[&s]).sum::<f64>() / n as f64;
            Ok(SchemeSummary {
                scheme: s,
                label: s.label().to_string(),
                mse_db2: m,
                rmse_db: mse_to_rmse(m)?,
                n_samples: n,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let paired = (schemes.contains(&Scheme::Model) && schemes.contains(&Scheme::Weighted)).then(|| {
        let wins = samples
            .iter()
            .filter(|r| r.mse_db2[&Scheme::Model] < r.mse_db2[&Scheme::Weighted])
            .count();
        wins as f64 / n as f64
    });
    Ok(EvalReport {
        schemes: summaries,
        samples,
        model_beats_weighted: paired,
        config: config.clone(),
    })
}

/// Writes `eval_report.json` and `eval_samples.csv` under `dir`.
pub fn save_report(report: &EvalReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let json = dir.join("eval_report.json");
    std::fs::write(&json, serde_json::to_string_pretty(report)?).map_err(io_err(json))?;
    let csv = dir.join("eval_samples.csv");
    std::fs::write(&csv, report.to_csv()).map_err(io_err(csv))?;
    Ok(())
}

/// Writes `{env}_{ap}_truth.png`, one `{env}_{ap}_{scheme}.png` per prediction
/// and a `{env}_{ap}.json` sidecar with the per-scheme errors.
pub fn export_maps(scenario: &Scenario, k: usize, predictions: &[(Scheme, GridMap)], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let rec = &scenario.records[k];
    let w = scenario.spec.width_cells;
    let stem = format!("{}_{}", scenario.environment_id, k);
    let to_png = |map: &GridMap, name: &str| {
        let px: Vec<u8> = map.values().iter().map(|&v| quantize(v)).collect();
        write_png(&dir.join(format!("{stem}_{name}.png")), w, &px)
    };
    to_png(&rec.gain, "truth")?;
    let mut errors = BTreeMap::new();
    for (s, map) in predictions {
        to_png(map, s.name())?;
        errors.insert(*s, mse(map, &rec.gain, true)?);
    }
    let sidecar = serde_json::json!({
        "env_id": scenario.environment_id,
        "ap_index": k,
        "ap_coord": rec.ap_coord,
        "mse_db2": errors,
    });
    let path = dir.join(format!("{stem}.json"));
    std::fs::write(&path, serde_json::to_string_pretty(&sidecar)?).map_err(io_err(path))?;
    Ok(())
}
