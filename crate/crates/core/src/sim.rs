//! Synthetic environments and channel-gain maps.
//!
//! The propagation model is free-space path loss plus a fixed penetration
//! loss for every building cell the direct ray crosses. There is no
//! reflection or diffraction, which makes building shadows sharp.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CkmError, Result};
use crate::grid::{CkmRecord, Coord, GridMap, GridSpec, ObstacleMask, Scenario};
use crate::raycast::blocked_between;

/// Minimum share of free cells in a generated environment.
pub const MIN_FREE_FRACTION: f64 = 0.4;
const MAX_ATTEMPTS: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct Environment {
    pub spec: GridSpec,
    pub obstacles: ObstacleMask,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PropagationParams {
    pub freq_ghz: f64,
    /// Transmit reference. 0 dB makes the map the channel gain `-PL`.
    pub tx_power_dbm: f64,
    pub wall_loss_db: f64,
    pub los_exponent: f64,
}

impl Default for PropagationParams {
    fn default() -> Self {
        Self {
            freq_ghz: 3.5,
            tx_power_dbm: 0.0,
            wall_loss_db: 15.0,
            los_exponent: 2.0,
        }
    }
}

impl PropagationParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.freq_ghz, self.tx_power_dbm, self.wall_loss_db, self.los_exponent]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.freq_ghz <= 0.0 || self.wall_loss_db < 0.0 {
            return Err(CkmError::Generation(format!("invalid propagation params {self:?}")));
        }
        Ok(())
    }
}

/// Free-space path loss in dB for a distance in meters (clamped below at
/// `min_distance_m`) and a frequency in GHz.
pub fn fspl_db(distance_m: f64, min_distance_m: f64, freq_ghz: f64, exponent: f64) -> f64 {
    10.0 * exponent * distance_m.max(min_distance_m).log10() + 20.0 * freq_ghz.log10() + 32.45
}

/// Axis-aligned rectangular buildings, possibly overlapping. Deterministic in
/// `(spec, n_buildings, seed)`.
pub fn gen_environment(spec: GridSpec, n_buildings: usize, seed: u64) -> Result<Environment> {
    spec.validate()?;
    let w = spec.width_cells;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lo = (w / 16).max(2);
    let hi = (w / 5).max(lo + 1);
    for _ in 0..MAX_ATTEMPTS {
        let mut mask = ObstacleMask::empty(w);
        for _ in 0..n_buildings {
            let bh = rng.gen_range(lo..=hi).min(w);
            let bw = rng.gen_range(lo..=hi).min(w);
            let r0 = rng.gen_range(0..=w - bh);
            let c0 = rng.gen_range(0..=w - bw);
            for r in r0..r0 + bh {
                for c in c0..c0 + bw {
                    mask.set(Coord::new(r, c), true);
                }
            }
        }
        if 1.0 - mask.blocked_fraction() >= MIN_FREE_FRACTION {
            return Ok(Environment {
                spec,
                obstacles: mask,
                seed,
            });
        }
    }
    Err(CkmError::Generation(format!(
        "{n_buildings} buildings leave less than {:.0}% free cells after {MAX_ATTEMPTS} attempts",
        MIN_FREE_FRACTION * 100.0
    )))
}

/// Channel-gain map of an AP at `ap`, normalized by the grid spec.
pub fn simulate_cgm(env: &Environment, ap: Coord, params: &PropagationParams) -> Result<GridMap> {
    params.validate()?;
    env.spec.check(ap)?;
    if env.obstacles.is_blocked(ap) {
        return Err(CkmError::ApInObstacle { row: ap.row, col: ap.col });
    }
    let db: Vec<f64> = (0..env.spec.cells())
        .map(|i| gain_db(env, ap, env.spec.coord(i), params))
        .collect();
    GridMap::from_db(env.spec, &db)
}

/// Unclamped gain in dB at `cell`.
pub fn gain_db(env: &Environment, ap: Coord, cell: Coord, params: &PropagationParams) -> f64 {
    let d = env.spec.distance_m(ap, cell);
    let walls = blocked_between(&env.obstacles, ap, cell) as f64;
    params.tx_power_dbm
        - fspl_db(d, env.spec.cell_size_m, params.freq_ghz, params.los_exponent)
        - params.wall_loss_db * walls
}

/// `n_aps` distinct free-cell APs, each with its simulated map.
pub fn gen_scenario(
    env: &Environment,
    n_aps: usize,
    params: &PropagationParams,
    seed: u64,
) -> Result<Scenario> {
    if n_aps < 2 {
        return Err(CkmError::InvalidScenario(format!("need at least 2 APs, got {n_aps}")));
    }
    let free = env.obstacles.free_cells();
    if free.len() < n_aps {
        return Err(CkmError::InsufficientFreeCells {
            needed: n_aps,
            available: free.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = sample(&mut rng, free.len(), n_aps)
        .into_iter()
        .map(|i| {
            let ap = free[i];
            Ok(CkmRecord {
                ap_coord: ap,
                gain: simulate_cgm(env, ap, params)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Scenario::new(
        env.spec,
        records,
        format!("env_{}", env.seed),
        Some(env.obstacles.clone()),
    )
}

/// Settings for generating a whole synthetic corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub grid: GridSpec,
    pub propagation: PropagationParams,
    pub min_buildings: usize,
    pub max_buildings: usize,
    pub maps: usize,
    pub aps_per_map: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec::default(),
            propagation: PropagationParams::default(),
            min_buildings: 4,
            max_buildings: 10,
            maps: 50,
            aps_per_map: 8,
        }
    }
}

/// Generates `config.maps` scenarios named `env_0000`, `env_0001`, ...
///
/// Per-map seeds are drawn from a master generator seeded with `seed`, so
/// map `i` is the same regardless of how many maps follow it.
pub fn gen_corpus(config: &SimConfig, seed: u64) -> Result<Vec<Scenario>> {
    if config.min_buildings > config.max_buildings {
        return Err(CkmError::Generation(format!(
            "min_buildings {} exceeds max_buildings {}",
            config.min_buildings, config.max_buildings
        )));
    }
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    (0..config.maps)
        .map(|i| {
            let env_seed: u64 = master.gen();
            let ap_seed: u64 = master.gen();
            let n_buildings = master.gen_range(config.min_buildings..=config.max_buildings);
            let env = gen_environment(config.grid, n_buildings, env_seed)?;
            let mut s = gen_scenario(&env, config.aps_per_map, &config.propagation, ap_seed)?;
            s.environment_id = format!("env_{i:04}");
            Ok(s)
        })
        .collect()
}
