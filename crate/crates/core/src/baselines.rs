//! Non-learned reference schemes: a distance-softmax blend of existing maps
//! and the 3GPP TR 38.901 UMi street-canyon path-loss model.

use serde::{Deserialize, Serialize};

use crate::error::{CkmError, Result};
use crate::grid::{Coord, GridMap, GridSpec, ObstacleMask, Scenario};
use crate::raycast::blocked_between;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightedConfig {
    /// Decay per meter of AP-to-AP distance.
    pub beta: f64,
}

impl Default for WeightedConfig {
    fn default() -> Self {
        Self { beta: 0.1 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LosMode {
    AlwaysLos,
    /// NLOS wherever the 2-D ray from the AP crosses an obstacle cell; falls
    /// back to always-LOS when no mask is known.
    MaskBased,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathLossConfig {
    pub freq_ghz: f64,
    pub tx_power_dbm: f64,
    pub ap_height_m: f64,
    pub ut_height_m: f64,
    pub los_mode: LosMode,
}

impl Default for PathLossConfig {
    fn default() -> Self {
        Self {
            freq_ghz: 3.5,
            tx_power_dbm: 0.0,
            ap_height_m: 10.0,
            ut_height_m: 1.5,
            los_mode: LosMode::MaskBased,
        }
    }
}

/// `w_n = exp(-beta d_n) / sum_i exp(-beta d_i)`, distances in meters between
/// cell centers. Evaluated with the largest exponent subtracted.
pub fn softmax_weights(target: Coord, ap_coords: &[Coord], beta: f64, cell_size_m: f64) -> Result<Vec<f64>> {
    if ap_coords.is_empty() {
        return Err(CkmError::InvalidScenario("no existing APs to weight".into()));
    }
    if !(beta.is_finite() && beta >= 0.0) {
        return Err(CkmError::InvalidScenario(format!("beta must be >= 0, got {beta}")));
    }
    let logits: Vec<f64> = ap_coords
        .iter()
        .map(|&c| {
            let dr = c.row as f64 - target.row as f64;
            let dc = c.col as f64 - target.col as f64;
            -beta * dr.hypot(dc) * cell_size_m
        })
        .collect();
    let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Cellwise convex combination of every record's map.
pub fn weighted_infer(scenario: &Scenario, target: Coord, config: &WeightedConfig) -> Result<GridMap> {
    scenario.spec.check(target)?;
    let weights = softmax_weights(target, &scenario.ap_coords(), config.beta, scenario.spec.cell_size_m)?;
    let mut acc = vec![0.0; scenario.spec.cells()];
    for (w, rec) in weights.iter().zip(&scenario.records) {
        for (a, g) in acc.iter_mut().zip(rec.gain.values()) {
            *a += w * g;
        }
    }
    // Rounding can push a convex combination a hair past [0, 1].
    acc.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    GridMap::new(scenario.spec, acc)
}

/// UMi street-canyon LOS path loss, `d_3d` in meters (at least 1 m).
pub fn umi_los_db(d_3d: f64, freq_ghz: f64) -> f64 {
    32.4 + 21.0 * d_3d.max(1.0).log10() + 20.0 * freq_ghz.log10()
}

/// UMi street-canyon NLOS path loss: `max(LOS, PL')`.
pub fn umi_nlos_db(d_3d: f64, freq_ghz: f64, ut_height_m: f64) -> f64 {
    let d = d_3d.max(1.0);
    let pl_prime = 22.4 + 35.3 * d.log10() + 21.3 * freq_ghz.log10() - 0.3 * (ut_height_m - 1.5);
    umi_los_db(d, freq_ghz).max(pl_prime)
}

/// Path-loss map for an AP at `target`.
pub fn pathloss_infer(
    target: Coord,
    spec: &GridSpec,
    config: &PathLossConfig,
    obstacle_mask: Option<&ObstacleMask>,
) -> Result<GridMap> {
    spec.check(target)?;
    if !(config.ap_height_m > 0.0 && config.ut_height_m > 0.0 && config.freq_ghz > 0.0) {
        return Err(CkmError::InvalidScenario(format!("invalid path-loss config {config:?}")));
    }
    let dh = config.ap_height_m - config.ut_height_m;
    let mask = match config.los_mode {
        LosMode::MaskBased => obstacle_mask,
        LosMode::AlwaysLos => None,
    };
    let db: Vec<f64> = (0..spec.cells())
        .map(|i| {
            let cell = spec.coord(i);
            let d_3d = spec.distance_m(target, cell).hypot(dh);
            let nlos = mask.is_some_and(|m| blocked_between(m, target, cell) > 0);
            let pl = if nlos {
                umi_nlos_db(d_3d, config.freq_ghz, config.ut_height_m)
            } else {
                umi_los_db(d_3d, config.freq_ghz)
            };
            config.tx_power_dbm - pl
        })
        .collect();
    GridMap::from_db(*spec, &db)
}
