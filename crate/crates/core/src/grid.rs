//! Grid geometry, normalized gain maps and the per-environment scenario.
//!
//! Gains are stored normalized to `[0, 1]`; decibels appear only at I/O and
//! metric boundaries via [`GridSpec::normalize_db`] / [`GridSpec::denormalize_db`].

use serde::{Deserialize, Serialize};

use crate::error::{CkmError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub width_cells: usize,
    pub cell_size_m: f64,
    pub gain_floor_db: f64,
    pub gain_span_db: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            width_cells: 64,
            cell_size_m: 1.0,
            gain_floor_db: -147.0,
            gain_span_db: 100.0,
        }
    }
}

impl GridSpec {
    pub fn new(width_cells: usize, cell_size_m: f64, gain_floor_db: f64, gain_span_db: f64) -> Result<Self> {
        let spec = Self {
            width_cells,
            cell_size_m,
            gain_floor_db,
            gain_span_db,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Layout used for RadioMapSeer-style 256x256 maps.
    pub fn radiomapseer() -> Self {
        Self {
            width_cells: 256,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width_cells < 8 {
            return Err(CkmError::InvalidSpec(format!(
                "width_cells must be >= 8, got {}",
                self.width_cells
            )));
        }
        if !(self.cell_size_m.is_finite() && self.cell_size_m > 0.0) {
            return Err(CkmError::InvalidSpec(format!(
                "cell_size_m must be positive, got {}",
                self.cell_size_m
            )));
        }
        if !self.gain_floor_db.is_finite() {
            return Err(CkmError::InvalidSpec("gain_floor_db must be finite".into()));
        }
        if !(self.gain_span_db.is_finite() && self.gain_span_db > 0.0) {
            return Err(CkmError::InvalidSpec(format!(
                "gain_span_db must be positive, got {}",
                self.gain_span_db
            )));
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.width_cells * self.width_cells
    }

    pub fn ceiling_db(&self) -> f64 {
        self.gain_floor_db + self.gain_span_db
    }

    /// Clamps to `[floor, floor + span]` and maps affinely onto `[0, 1]`.
    pub fn normalize_db(&self, gain_db: f64) -> Result<f64> {
        if !gain_db.is_finite() {
            return Err(CkmError::NonFinite(format!("gain {gain_db} dB")));
        }
        let clamped = gain_db.clamp(self.gain_floor_db, self.ceiling_db());
        Ok((clamped - self.gain_floor_db) / self.gain_span_db)
    }

    pub fn denormalize_db(&self, normalized: f64) -> f64 {
        self.gain_floor_db + normalized * self.gain_span_db
    }

    pub fn contains(&self, coord: Coord) -> bool {
        coord.row < self.width_cells && coord.col < self.width_cells
    }

    pub fn check(&self, coord: Coord) -> Result<()> {
        if self.contains(coord) {
            Ok(())
        } else {
            Err(CkmError::OutOfBounds {
                row: coord.row,
                col: coord.col,
                width: self.width_cells,
            })
        }
    }

    /// Row-major flat index.
    pub fn index(&self, coord: Coord) -> usize {
        coord.row * self.width_cells + coord.col
    }

    pub fn coord(&self, index: usize) -> Coord {
        Coord::new(index / self.width_cells, index % self.width_cells)
    }

    /// Euclidean distance between cell centers in meters.
    pub fn distance_m(&self, a: Coord, b: Coord) -> f64 {
        let dr = a.row as f64 - b.row as f64;
        let dc = a.col as f64 - b.col as f64;
        dr.hypot(dc) * self.cell_size_m
    }

    fn same_as(&self, other: &GridSpec) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(CkmError::SpecMismatch(format!("{self:?} vs {other:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Coord {
    pub row: usize,
    pub col: usize,
}

impl Coord {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }

    /// Quarter turn clockwise inside a `width`-cell grid.
    pub fn rotate90(self, width: usize) -> Self {
        Self::new(self.col, width - 1 - self.row)
    }
}

impl std::fmt::Display for Coord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {})", self.row, self.col)
    }
}

/// W x W field of normalized gain in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GridMap {
    spec: GridSpec,
    values: Vec<f64>,
}

impl GridMap {
    pub fn new(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if values.len() != spec.cells() {
            return Err(CkmError::InvalidMap(format!(
                "{} values for a {}x{} grid",
                values.len(),
                spec.width_cells,
                spec.width_cells
            )));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && (0.0..=1.0).contains(*v)))
        {
            return Err(CkmError::InvalidMap(format!(
                "value {v} at {} is outside [0, 1]",
                spec.coord(i)
            )));
        }
        Ok(Self { spec, values })
    }

    pub fn filled(spec: GridSpec, value: f64) -> Result<Self> {
        Self::new(spec, vec![value; spec.cells()])
    }

    /// Normalizes a dB field, clamping to the spec's range.
    pub fn from_db(spec: GridSpec, db: &[f64]) -> Result<Self> {
        let values = db.iter().map(|&v| spec.normalize_db(v)).collect::<Result<_>>()?;
        Self::new(spec, values)
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, coord: Coord) -> f64 {
        self.values[self.spec.index(coord)]
    }

    pub fn to_db(&self) -> Vec<f64> {
        self.values.iter().map(|&v| self.spec.denormalize_db(v)).collect()
    }

    pub fn rotate90(&self) -> Self {
        let w = self.spec.width_cells;
        let mut out = vec![0.0; self.values.len()];
        for (i, &v) in self.values.iter().enumerate() {
            let c = self.spec.coord(i).rotate90(w);
            out[self.spec.index(c)] = v;
        }
        Self {
            spec: self.spec,
            values: out,
        }
    }
}

/// Mean squared cell difference; in dB^2 after denormalizing when `in_db`.
pub fn mse(a: &GridMap, b: &GridMap, in_db: bool) -> Result<f64> {
    a.spec.same_as(&b.spec)?;
    let scale = if in_db { a.spec.gain_span_db } else { 1.0 };
    let sum: f64 = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| {
            let d = (x - y) * scale;
            d * d
        })
        .sum();
    Ok(sum / a.values.len() as f64)
}

pub fn mse_to_rmse(mse_db2: f64) -> Result<f64> {
    if mse_db2.is_nan() {
        return Err(CkmError::NonFinite("mse".into()));
    }
    if mse_db2 < 0.0 {
        return Err(CkmError::NegativeMse(mse_db2));
    }
    Ok(mse_db2.sqrt())
}

/// W x W occupancy grid; `true` marks a building cell.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ObstacleMask {
    width: usize,
    cells: Vec<bool>,
}

impl ObstacleMask {
    pub fn empty(width: usize) -> Self {
        Self {
            width,
            cells: vec![false; width * width],
        }
    }

    pub fn from_cells(width: usize, cells: Vec<bool>) -> Result<Self> {
        if cells.len() != width * width {
            return Err(CkmError::InvalidMap(format!(
                "{} mask cells for a {width}x{width} grid",
                cells.len()
            )));
        }
        Ok(Self { width, cells })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    #[inline]
    pub fn is_blocked(&self, coord: Coord) -> bool {
        self.cells[coord.row * self.width + coord.col]
    }

    pub fn set(&mut self, coord: Coord, blocked: bool) {
        self.cells[coord.row * self.width + coord.col] = blocked;
    }

    pub fn blocked_fraction(&self) -> f64 {
        self.cells.iter().filter(|&&b| b).count() as f64 / self.cells.len() as f64
    }

    pub fn free_cells(&self) -> Vec<Coord> {
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, &b)| !b)
            .map(|(i, _)| Coord::new(i / self.width, i % self.width))
            .collect()
    }

    pub fn rotate90(&self) -> Self {
        let mut out = Self::empty(self.width);
        for (i, &b) in self.cells.iter().enumerate() {
            let c = Coord::new(i / self.width, i % self.width).rotate90(self.width);
            out.set(c, b);
        }
        out
    }
}

/// One AP's location plus its channel-gain map.
#[derive(Clone, Debug, PartialEq)]
pub struct CkmRecord {
    pub ap_coord: Coord,
    pub gain: GridMap,
}

/// All CKM records of one physical environment.
///
/// `obstacles` is kept for the path-loss baseline and for rejecting service
/// queries inside buildings; it is never fed to the network.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub spec: GridSpec,
    pub records: Vec<CkmRecord>,
    pub environment_id: String,
    pub obstacles: Option<ObstacleMask>,
}

impl Scenario {
    pub fn new(
        spec: GridSpec,
        records: Vec<CkmRecord>,
        environment_id: impl Into<String>,
        obstacles: Option<ObstacleMask>,
    ) -> Result<Self> {
        let s = Self {
            spec,
            records,
            environment_id: environment_id.into(),
            obstacles,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.records.is_empty() {
            return Err(CkmError::InvalidScenario(format!(
                "environment `{}` has no records",
                self.environment_id
            )));
        }
        for r in &self.records {
            self.spec.same_as(&r.gain.spec)?;
            self.spec.check(r.ap_coord)?;
        }
        if let Some(m) = &self.obstacles {
            if m.width() != self.spec.width_cells {
                return Err(CkmError::InvalidScenario(format!(
                    "obstacle mask width {} vs grid {}",
                    m.width(),
                    self.spec.width_cells
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn ap_coords(&self) -> Vec<Coord> {
        self.records.iter().map(|r| r.ap_coord).collect()
    }

    /// Copy with record `index` removed; the remaining order is preserved.
    pub fn without(&self, index: usize) -> Scenario {
        let mut s = self.clone();
        s.records.remove(index);
        s
    }

    pub fn rotate90(&self) -> Scenario {
        let w = self.spec.width_cells;
        Scenario {
            spec: self.spec,
            environment_id: self.environment_id.clone(),
            obstacles: self.obstacles.as_ref().map(ObstacleMask::rotate90),
            records: self
                .records
                .iter()
                .map(|r| CkmRecord {
                    ap_coord: r.ap_coord.rotate90(w),
                    gain: r.gain.rotate90(),
                })
                .collect(),
        }
    }
}
