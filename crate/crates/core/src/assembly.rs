//! Model input construction.
//!
//! Channel 0 is the target location map, one-hot and dilated by a 3x3
//! all-ones kernel. Channels 1.. hold one feature map per existing AP,
//! `(1 - omega) * gain + omega * one_hot(ap)`, in record order. The target's
//! own gain map never enters the stack.

use serde::{Deserialize, Serialize};

use crate::error::{CkmError, Result};
use crate::grid::{CkmRecord, Coord, GridSpec, Scenario};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssemblyConfig {
    pub omega: f64,
}

impl Default for AssemblyConfig {
    fn default() -> Self {
        Self { omega: 0.5 }
    }
}

impl AssemblyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.omega) {
            return Err(CkmError::Assembly(format!("omega must be in [0, 1], got {}", self.omega)));
        }
        Ok(())
    }
}

/// `(channels, W, W)` model input, row-major per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct InputStack {
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl InputStack {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn channel(&self, i: usize) -> &[f32] {
        let plane = self.width * self.width;
        &self.data[i * plane..(i + 1) * plane]
    }

    /// Appends all-zero channels up to `channels`.
    pub fn pad_to(&mut self, channels: usize) -> Result<()> {
        if channels < self.channels {
            return Err(CkmError::TooManyAps {
                existing: self.channels - 1,
                slots: channels.saturating_sub(1),
            });
        }
        self.data.resize(channels * self.width * self.width, 0.0);
        self.channels = channels;
        Ok(())
    }
}

pub fn one_hot_map(coord: Coord, spec: &GridSpec) -> Result<Vec<f64>> {
    spec.check(coord)?;
    let mut m = vec![0.0; spec.cells()];
    m[spec.index(coord)] = 1.0;
    Ok(m)
}

pub fn feature_map(record: &CkmRecord, omega: f64) -> Result<Vec<f64>> {
    AssemblyConfig { omega }.validate()?;
    let spec = record.gain.spec();
    spec.check(record.ap_coord)?;
    let ap = spec.index(record.ap_coord);
    Ok(record
        .gain
        .values()
        .iter()
        .enumerate()
        .map(|(i, &g)| (1.0 - omega) * g + if i == ap { omega } else { 0.0 })
        .collect())
}

/// Zero-padded 3x3 all-ones convolution of a one-hot map, clamped to {0, 1}.
pub fn preconvolve_target(loc_map: &[f64], width: usize) -> Result<Vec<f64>> {
    if loc_map.len() != width * width {
        return Err(CkmError::Assembly(format!(
            "location map has {} cells, expected {}",
            loc_map.len(),
            width * width
        )));
    }
    let ones = loc_map.iter().filter(|&&v| v == 1.0).count();
    let zeros = loc_map.iter().filter(|&&v| v == 0.0).count();
    if ones != 1 || ones + zeros != loc_map.len() {
        return Err(CkmError::Assembly("target location map is not one-hot".into()));
    }
    let w = width as isize;
    let mut out = vec![0.0; loc_map.len()];
    for r in 0..w {
        for c in 0..w {
            let mut acc = 0.0;
            for dr in -1..=1 {
                for dc in -1..=1 {
                    let (rr, cc) = (r + dr, c + dc);
                    if (0..w).contains(&rr) && (0..w).contains(&cc) {
                        acc += loc_map[(rr * w + cc) as usize];
                    }
                }
            }
            out[(r * w + c) as usize] = acc.min(1.0);
        }
    }
    Ok(out)
}

/// Builds the stack for `target_coord`.
///
/// With `exclude_index = Some(k)` (training / leave-one-out) record `k` must
/// sit at `target_coord` and is left out; with `None` every record is used.
pub fn assemble(
    scenario: &Scenario,
    target_coord: Coord,
    config: &AssemblyConfig,
    exclude_index: Option<usize>,
) -> Result<InputStack> {
    config.validate()?;
    let spec = &scenario.spec;
    spec.check(target_coord)?;
    if let Some(k) = exclude_index {
        let rec = scenario.records.get(k).ok_or_else(|| {
            CkmError::Assembly(format!("exclude index {k} out of range for {} records", scenario.len()))
        })?;
        if rec.ap_coord != target_coord {
            return Err(CkmError::Assembly(format!(
                "record {k} is at {}, not at target {target_coord}",
                rec.ap_coord
            )));
        }
    }
    let target = preconvolve_target(&one_hot_map(target_coord, spec)?, spec.width_cells)?;
    let existing = scenario
        .records
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != exclude_index);
    let mut data: Vec<f32> = target.iter().map(|&v| v as f32).collect();
    let mut channels = 1;
    for (_, rec) in existing {
        data.extend(feature_map(rec, config.omega)?.into_iter().map(|v| v as f32));
        channels += 1;
    }
    Ok(InputStack {
        width: spec.width_cells,
        channels,
        data,
    })
}

/// [`assemble`] padded with zero channels to exactly `channels`.
pub fn assemble_padded(
    scenario: &Scenario,
    target_coord: Coord,
    config: &AssemblyConfig,
    exclude_index: Option<usize>,
    channels: usize,
) -> Result<InputStack> {
    let mut stack = assemble(scenario, target_coord, config, exclude_index)?;
    stack.pad_to(channels)?;
    Ok(stack)
}

/// Fails if any channel reproduces `target` exactly.
pub fn check_no_leakage(stack: &InputStack, target: &[f64]) -> Result<()> {
    for ch in 0..stack.channels() {
        let same = stack
            .channel(ch)
            .iter()
            .zip(target)
            .all(|(&a, &b)| a == b as f32);
        if same {
            return Err(CkmError::Assembly(format!(
                "channel {ch} reproduces the supervision target"
            )));
        }
    }
    Ok(())
}

/// Inference-mode view of a scenario limited to the `slots` existing APs
/// closest to `target` (ties by record order), kept in record order.
pub fn nearest_records(scenario: &Scenario, target: Coord, slots: usize) -> Scenario {
    if scenario.len() <= slots {
        return scenario.clone();
    }
    let mut order: Vec<usize> = (0..scenario.len()).collect();
    order.sort_by(|&a, &b| {
        let da = scenario.spec.distance_m(scenario.records[a].ap_coord, target);
        let db = scenario.spec.distance_m(scenario.records[b].ap_coord, target);
        da.total_cmp(&db).then(a.cmp(&b))
    });
    let mut keep = order[..slots].to_vec();
    keep.sort_unstable();
    let mut s = scenario.clone();
    s.records = keep.into_iter().map(|i| scenario.records[i].clone()).collect();
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridMap;

    fn spec(w: usize) -> GridSpec {
        GridSpec { width_cells: w, ..GridSpec::default() }
    }

    #[test]
    fn one_hot_examples() {
        let s = spec(8);
        let m = one_hot_map(Coord::new(3, 2), &s).unwrap();
        assert_eq!(m.iter().sum::<f64>(), 1.0);
        assert_eq!(m[3 * 8 + 2], 1.0);
        let corner = one_hot_map(Coord::new(0, 0), &s).unwrap();
        assert_eq!(corner[0], 1.0);
        assert_eq!(corner.iter().sum::<f64>(), 1.0);
        assert!(one_hot_map(Coord::new(8, 0), &s).is_err());
    }

    #[test]
    fn feature_map_endpoints() {
        let s = spec(8);
        let gain = GridMap::new(s, (0..64).map(|i| i as f64 / 80.0).collect()).unwrap();
        let mut vals = gain.values().to_vec();
        vals[2 * 8 + 5] = 0.8;
        let rec = CkmRecord { ap_coord: Coord::new(2, 5), gain: GridMap::new(s, vals).unwrap() };
        assert_eq!(feature_map(&rec, 0.0).unwrap(), rec.gain.values());
        assert_eq!(feature_map(&rec, 1.0).unwrap(), one_hot_map(rec.ap_coord, &s).unwrap());
        assert!((feature_map(&rec, 0.5).unwrap()[2 * 8 + 5] - 0.9).abs() < 1e-15);
        assert!(feature_map(&rec, 1.5).is_err());
    }

    fn ones_after_preconv(w: usize, c: Coord) -> usize {
        let m = preconvolve_target(&one_hot_map(c, &spec(w)).unwrap(), w).unwrap();
        m.iter().filter(|&&v| v == 1.0).count()
    }

    #[test]
    fn preconvolution_block_sizes() {
        let w = 8;
        assert_eq!(ones_after_preconv(w, Coord::new(4, 4)), 9);
        assert_eq!(ones_after_preconv(w, Coord::new(0, 0)), 4);
        assert_eq!(ones_after_preconv(w, Coord::new(0, 4)), 6);
        assert_eq!(ones_after_preconv(w, Coord::new(7, 7)), 4);
    }

    #[test]
    fn preconvolution_center_of_5x5() {
        let mut m = vec![0.0; 25];
        m[12] = 1.0;
        let out = preconvolve_target(&m, 5).unwrap();
        for r in 0..5 {
            for c in 0..5 {
                let inside = (1..=3).contains(&r) && (1..=3).contains(&c);
                assert_eq!(out[r * 5 + c], if inside { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn preconvolution_rejects_non_one_hot() {
        assert!(preconvolve_target(&[0.0; 25], 5).is_err());
        let mut two = vec![0.0; 25];
        two[0] = 1.0;
        two[3] = 1.0;
        assert!(preconvolve_target(&two, 5).is_err());
        let mut frac = vec![0.0; 25];
        frac[0] = 1.0;
        frac[1] = 0.5;
        assert!(preconvolve_target(&frac, 5).is_err());
    }

    fn scenario3() -> Scenario {
        let s = spec(8);
        let rec = |r, c, v| CkmRecord { ap_coord: Coord::new(r, c), gain: GridMap::filled(s, v).unwrap() };
        Scenario::new(s, vec![rec(1, 1, 0.1), rec(4, 4, 0.2), rec(6, 2, 0.3)], "e", None).unwrap()
    }

    #[test]
    fn channel_counts() {
        let sc = scenario3();
        let cfg = AssemblyConfig::default();
        let train = assemble(&sc, Coord::new(4, 4), &cfg, Some(1)).unwrap();
        assert_eq!(train.channels(), 3);
        let infer = assemble(&sc, Coord::new(5, 5), &cfg, None).unwrap();
        assert_eq!(infer.channels(), 4);
        // channel order follows record order with the target removed
        assert!((train.channel(1)[0] - 0.05).abs() < 1e-7);
        assert!((train.channel(2)[0] - 0.15).abs() < 1e-7);
    }

    #[test]
    fn exclude_must_match_target() {
        let sc = scenario3();
        let err = assemble(&sc, Coord::new(5, 5), &AssemblyConfig::default(), Some(1));
        assert!(matches!(err, Err(CkmError::Assembly(_))));
        assert!(assemble(&sc, Coord::new(5, 5), &AssemblyConfig::default(), Some(9)).is_err());
    }

    #[test]
    fn padding_rules() {
        let sc = scenario3();
        let cfg = AssemblyConfig::default();
        let p = assemble_padded(&sc, Coord::new(4, 4), &cfg, Some(1), 6).unwrap();
        assert_eq!(p.channels(), 6);
        assert!(p.channel(5).iter().all(|&v| v == 0.0));
        let err = assemble_padded(&sc, Coord::new(5, 5), &cfg, None, 3);
        assert!(matches!(err, Err(CkmError::TooManyAps { existing: 3, slots: 2 })));
    }

    #[test]
    fn nearest_records_keeps_order() {
        let sc = scenario3();
        let near = nearest_records(&sc, Coord::new(5, 3), 2);
        assert_eq!(near.ap_coords(), vec![Coord::new(4, 4), Coord::new(6, 2)]);
        assert_eq!(nearest_records(&sc, Coord::new(0, 0), 5), sc);
    }

    #[test]
    fn leakage_detected_when_target_present() {
        let sc = scenario3();
        let cfg = AssemblyConfig { omega: 0.0 };
        let leaky = assemble(&sc, Coord::new(4, 4), &cfg, None).unwrap();
        assert!(check_no_leakage(&leaky, sc.records[1].gain.values()).is_err());
        let clean = assemble(&sc, Coord::new(4, 4), &cfg, Some(1)).unwrap();
        assert!(check_no_leakage(&clean, sc.records[1].gain.values()).is_ok());
    }
}
