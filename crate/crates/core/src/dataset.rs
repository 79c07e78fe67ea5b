//! On-disk datasets.
//!
//! ```text
//! root/manifest.json            DatasetManifest (JSON, versioned)
//! root/<env_id>/ap_<k>.json     {"row", "col", grid dB metadata}
//! root/<env_id>/gain_<k>.png    8-bit grayscale, pixel p encodes gain p/255
//! root/<env_id>/obstacles.png   optional; 255 = building, 0 = free
//! ```
//!
//! Normalized gains are quantized with round-half-up, so a write/read round
//! trip changes each cell by at most half a step (1/510).

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::codecs::png::PngEncoder;
use image::{ExtendedColorType, GrayImage, ImageEncoder};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, CkmError, Result};
use crate::grid::{CkmRecord, Coord, GridMap, GridSpec, ObstacleMask, Scenario};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const OBSTACLE_FILE: &str = "obstacles.png";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentEntry {
    pub id: String,
    pub n_aps: usize,
    pub split: Split,
    pub obstacles: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    pub grid: GridSpec,
    pub environments: Vec<EnvironmentEntry>,
}

impl DatasetManifest {
    pub fn count(&self, split: Split) -> usize {
        self.environments.iter().filter(|e| e.split == split).count()
    }
}

/// A loaded dataset; `scenarios[i]` belongs to `manifest.environments[i]`.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub scenarios: Vec<Scenario>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> Vec<Scenario> {
        self.manifest
            .environments
            .iter()
            .zip(&self.scenarios)
            .filter(|(e, _)| e.split == split)
            .map(|(_, s)| s.clone())
            .collect()
    }

    pub fn find(&self, env_id: &str) -> Option<&Scenario> {
        self.scenarios.iter().find(|s| s.environment_id == env_id)
    }
}

/// The last `val_count` environments go to validation, the rest to training.
pub fn assign_splits(n: usize, val_count: usize) -> Vec<Split> {
    let cut = n.saturating_sub(val_count);
    (0..n).map(|i| if i < cut { Split::Train } else { Split::Val }).collect()
}

/// Pixel value for a normalized gain, round-half-up.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

pub fn dequantize(p: u8) -> f64 {
    p as f64 / 255.0
}

#[derive(Serialize, Deserialize)]
struct ApFile {
    row: usize,
    col: usize,
    width_cells: usize,
    cell_size_m: f64,
    gain_floor_db: f64,
    gain_span_db: f64,
}

pub fn write_dataset(scenarios: &[Scenario], splits: &[Split], root: &Path) -> Result<DatasetManifest> {
    let first = scenarios
        .first()
        .ok_or_else(|| CkmError::Dataset("no scenarios to write".into()))?;
    if splits.len() != scenarios.len() {
        return Err(CkmError::Dataset(format!(
            "{} split labels for {} scenarios",
            splits.len(),
            scenarios.len()
        )));
    }
    let grid = first.spec;
    let mut seen = std::collections::HashSet::new();
    for s in scenarios {
        s.validate()?;
        if s.spec != grid {
            return Err(CkmError::SpecMismatch(format!(
                "environment `{}` uses {:?}, dataset uses {grid:?}",
                s.environment_id, s.spec
            )));
        }
        if !seen.insert(s.environment_id.as_str()) {
            return Err(CkmError::Dataset(format!("duplicate environment id `{}`", s.environment_id)));
        }
    }

    fs::create_dir_all(root).map_err(io_err(root))?;
    let mut environments = Vec::with_capacity(scenarios.len());
    for (s, &split) in scenarios.iter().zip(splits) {
        let dir = root.join(&s.environment_id);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        for (k, rec) in s.records.iter().enumerate() {
            let meta = ApFile {
                row: rec.ap_coord.row,
                col: rec.ap_coord.col,
                width_cells: grid.width_cells,
                cell_size_m: grid.cell_size_m,
                gain_floor_db: grid.gain_floor_db,
                gain_span_db: grid.gain_span_db,
            };
            write_json(&dir.join(format!("ap_{k}.json")), &meta)?;
            let pixels: Vec<u8> = rec.gain.values().iter().map(|&v| quantize(v)).collect();
            write_png(&dir.join(format!("gain_{k}.png")), grid.width_cells, &pixels)?;
        }
        if let Some(mask) = &s.obstacles {
            let pixels: Vec<u8> = mask.cells().iter().map(|&b| if b { 255 } else { 0 }).collect();
            write_png(&dir.join(OBSTACLE_FILE), grid.width_cells, &pixels)?;
        }
        environments.push(EnvironmentEntry {
            id: s.environment_id.clone(),
            n_aps: s.len(),
            split,
            obstacles: s.obstacles.is_some(),
        });
    }
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        grid,
        environments,
    };
    write_json(&root.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

pub fn read_manifest(root: &Path) -> Result<DatasetManifest> {
    let path = root.join(MANIFEST_FILE);
    if !path.is_file() {
        return Err(CkmError::MissingFile(path));
    }
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)?;
    if manifest.version != MANIFEST_VERSION {
        return Err(CkmError::Dataset(format!(
            "unsupported manifest version {} (expected {MANIFEST_VERSION})",
            manifest.version
        )));
    }
    manifest.grid.validate()?;
    Ok(manifest)
}

pub fn read_dataset(root: &Path) -> Result<Dataset> {
    let manifest = read_manifest(root)?;
    let grid = manifest.grid;
    let mut scenarios = Vec::with_capacity(manifest.environments.len());
    for entry in &manifest.environments {
        let dir = root.join(&entry.id);
        let mut records = Vec::with_capacity(entry.n_aps);
        for k in 0..entry.n_aps {
            let meta_path = dir.join(format!("ap_{k}.json"));
            let meta: ApFile = read_json(&meta_path)?;
            let pixels = read_png(&dir.join(format!("gain_{k}.png")), grid.width_cells)?;
            let ap_coord = Coord::new(meta.row, meta.col);
            grid.check(ap_coord)?;
            records.push(CkmRecord {
                ap_coord,
                gain: GridMap::new(grid, pixels.into_iter().map(dequantize).collect())?,
            });
        }
        let obstacles = if entry.obstacles {
            let pixels = read_png(&dir.join(OBSTACLE_FILE), grid.width_cells)?;
            Some(ObstacleMask::from_cells(
                grid.width_cells,
                pixels.into_iter().map(|p| p >= 128).collect(),
            )?)
        } else {
            None
        };
        scenarios.push(Scenario::new(grid, records, entry.id.clone(), obstacles)?);
    }
    Ok(Dataset {
        manifest,
        scenarios,
    })
}

/// Loads environments laid out as `root/<env_id>/<k>.png` (one gain image per
/// AP, `k = 0, 1, ...` contiguous, at most 80), with an optional
/// `root/<env_id>/<k>.json` holding `{"row": r, "col": c}`. Without a
/// coordinate file the AP is recovered with [`recover_ap_coord`].
pub fn read_radiomapseer(root: &Path, env_ids: &[String], spec: GridSpec) -> Result<Vec<Scenario>> {
    const MAX_APS: usize = 80;
    if env_ids.is_empty() {
        return Ok(Vec::new());
    }
    if !root.is_dir() {
        return Err(CkmError::ExternalDatasetNotFound(root.to_path_buf()));
    }
    env_ids
        .iter()
        .map(|id| {
            let dir = root.join(id);
            if !dir.is_dir() {
                return Err(CkmError::MissingFile(dir));
            }
            let mut records = Vec::new();
            for k in 0..MAX_APS {
                let img = dir.join(format!("{k}.png"));
                if !img.is_file() {
                    break;
                }
                let pixels = read_png(&img, spec.width_cells)?;
                let gain = GridMap::new(spec, pixels.into_iter().map(dequantize).collect())?;
                let coord_path = dir.join(format!("{k}.json"));
                let ap_coord = if coord_path.is_file() {
                    let c: Coord = read_json(&coord_path)?;
                    spec.check(c)?;
                    c
                } else {
                    recover_ap_coord(&gain)
                };
                records.push(CkmRecord { ap_coord, gain });
            }
            if records.is_empty() {
                return Err(CkmError::MissingFile(dir.join("0.png")));
            }
            Scenario::new(spec, records, id.clone(), None)
        })
        .collect()
}

/// Location of the strongest cell.
///
/// Saturated maps have a plateau of maximal cells around the AP. Ties go to
/// the maximal cell around which the in-bounds 7x7 window is most nearly
/// radially non-increasing (fewest pairs where a farther cell is stronger),
/// then to row-major order.
pub fn recover_ap_coord(map: &GridMap) -> Coord {
    const RADIUS: isize = 3;
    let spec = map.spec();
    let w = spec.width_cells as isize;
    let max = map.values().iter().cloned().fold(f64::MIN, f64::max);
    let violations = |c: Coord| {
        let mut cells = Vec::new();
        for dr in -RADIUS..=RADIUS {
            for dc in -RADIUS..=RADIUS {
                let (r, cc) = (c.row as isize + dr, c.col as isize + dc);
                if (0..w).contains(&r) && (0..w).contains(&cc) {
                    cells.push((dr * dr + dc * dc, map.get(Coord::new(r as usize, cc as usize))));
                }
            }
        }
        let mut n = 0usize;
        for &(da, va) in &cells {
            n += cells.iter().filter(|&&(db, vb)| da < db && va < vb).count();
        }
        n
    };
    let mut best: Option<(Coord, usize)> = None;
    for (i, &v) in map.values().iter().enumerate() {
        if v != max {
            continue;
        }
        let c = spec.coord(i);
        let score = violations(c);
        if best.map_or(true, |(_, s)| score < s) {
            best = Some((c, score));
        }
    }
    best.map(|(c, _)| c).unwrap_or(Coord::new(0, 0))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    if !path.is_file() {
        return Err(CkmError::MissingFile(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| CkmError::Dataset(format!("{}: {e}", path.display())))
}

/// Single-channel 8-bit PNG bytes.
pub fn encode_png(width: usize, pixels: &[u8]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    PngEncoder::new(Cursor::new(&mut buf))
        .write_image(pixels, width as u32, (pixels.len() / width) as u32, ExtendedColorType::L8)
        .map_err(|source| CkmError::Image {
            path: PathBuf::from("<memory>"),
            source,
        })?;
    Ok(buf)
}

pub fn write_png(path: &Path, width: usize, pixels: &[u8]) -> Result<()> {
    let bytes = encode_png(width, pixels).map_err(|e| match e {
        CkmError::Image { source, .. } => CkmError::Image {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })?;
    fs::write(path, bytes).map_err(io_err(path))
}

/// Reads a square grayscale image of exactly `width` x `width` pixels.
pub fn read_png(path: &Path, width: usize) -> Result<Vec<u8>> {
    if !path.is_file() {
        return Err(CkmError::MissingFile(path.to_path_buf()));
    }
    let img: GrayImage = image::open(path)
        .map_err(|source| CkmError::Image {
            path: path.to_path_buf(),
            source,
        })?
        .into_luma8();
    if img.width() as usize != width || img.height() as usize != width {
        return Err(CkmError::Dataset(format!(
            "{}: image is {}x{}, expected {width}x{width}",
            path.display(),
            img.width(),
            img.height()
        )));
    }
    Ok(img.into_raw())
}
