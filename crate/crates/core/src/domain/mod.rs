//! Surfaces, grid discretizations, noisy observation and the training dataset.
//!
//! Every grid is indexed row-major with `x2` as the outer (row) axis and `x1`
//! as the inner (column) axis; row 0 is the southern edge (`x2_min`).

mod raster;

pub use raster::{load_raster, Raster, RasterError};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance used when checking that a grid tiles its domain exactly.
pub const TILING_TOLERANCE: f64 = 1e-9;

/// Measurement noise variance used by the noisy benchmark configurations.
pub const CANONICAL_NOISE_VARIANCE: f64 = 0.02;

/// Row-major index of a grid cell.
pub type CellIndex = usize;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("position ({x1}, {x2}) lies outside the surface domain")]
    OutOfDomain { x1: f64, x2: f64 },
    #[error("position ({x1}, {x2}) is not aligned with a raster cell")]
    NotOnCell { x1: f64, x2: f64 },
    #[error("cell at ({x1}, {x2}) holds no data")]
    NoData { x1: f64, x2: f64 },
    #[error("raster carries {got} values but the grid has {expected} cells")]
    ValueCount { expected: usize, got: usize },
}

/// A planar position `r = (x1, x2)` in surface units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x1: f64,
    pub x2: f64,
}

impl Point {
    pub const fn new(x1: f64, x2: f64) -> Self {
        Self { x1, x2 }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x1 - other.x1).hypot(self.x2 - other.x2)
    }

    pub fn distance_squared(&self, other: &Point) -> f64 {
        let d1 = self.x1 - other.x1;
        let d2 = self.x2 - other.x2;
        d1 * d1 + d2 * d2
    }
}

/// Axis-aligned square-cell discretization of a planar domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x1_min: f64,
    pub x1_max: f64,
    pub x2_min: f64,
    pub x2_max: f64,
    pub step: f64,
}

fn steps_across(min: f64, max: f64, step: f64, axis: &str) -> Result<usize, DomainError> {
    if !(min.is_finite() && max.is_finite()) {
        return Err(DomainError::InvalidGrid(format!("{axis} bounds must be finite")));
    }
    if max < min {
        return Err(DomainError::InvalidGrid(format!(
            "{axis} range is reversed ({min} > {max})"
        )));
    }
    let ratio = (max - min) / step;
    let rounded = ratio.round();
    if (ratio - rounded).abs() > TILING_TOLERANCE {
        return Err(DomainError::InvalidGrid(format!(
            "{axis} extent {} is not a whole number of {step} steps",
            max - min
        )));
    }
    if rounded > 1e7 {
        return Err(DomainError::InvalidGrid(format!("{axis} has too many cells")));
    }
    Ok(rounded as usize)
}

impl GridSpec {
    /// Validates that `step > 0` and that both axes are tiled by `step`.
    ///
    /// A zero-extent axis (`min == max`) is accepted and yields one cell.
    pub fn new(x1_min: f64, x1_max: f64, x2_min: f64, x2_max: f64, step: f64) -> Result<Self, DomainError> {
        let spec = Self { x1_min, x1_max, x2_min, x2_max, step };
        spec.validate()?;
        Ok(spec)
    }

    /// The square grid `[lo:step:hi]²`.
    pub fn square(lo: f64, hi: f64, step: f64) -> Result<Self, DomainError> {
        Self::new(lo, hi, lo, hi, step)
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        if !(self.step.is_finite() && self.step > 0.0) {
            return Err(DomainError::InvalidGrid(format!("step must be positive, got {}", self.step)));
        }
        let n1 = steps_across(self.x1_min, self.x1_max, self.step, "x1")?;
        let n2 = steps_across(self.x2_min, self.x2_max, self.step, "x2")?;
        if (n1 + 1).saturating_mul(n2 + 1) > 50_000_000 {
            return Err(DomainError::InvalidGrid("grid has too many cells".into()));
        }
        Ok(())
    }

    /// Number of cells along x1.
    pub fn ncols(&self) -> usize {
        ((self.x1_max - self.x1_min) / self.step).round() as usize + 1
    }

    /// Number of cells along x2.
    pub fn nrows(&self) -> usize {
        ((self.x2_max - self.x2_min) / self.step).round() as usize + 1
    }

    pub fn cell_count(&self) -> usize {
        self.ncols() * self.nrows()
    }

    pub fn index(&self, col: usize, row: usize) -> CellIndex {
        row * self.ncols() + col
    }

    /// `(col, row)` of a cell.
    pub fn col_row(&self, cell: CellIndex) -> (usize, usize) {
        let ncols = self.ncols();
        (cell % ncols, cell / ncols)
    }

    pub fn point(&self, cell: CellIndex) -> Point {
        let (col, row) = self.col_row(cell);
        Point::new(
            self.x1_min + col as f64 * self.step,
            self.x2_min + row as f64 * self.step,
        )
    }

    pub fn contains(&self, r: Point) -> bool {
        let tol = TILING_TOLERANCE * self.step.max(1.0);
        r.x1 >= self.x1_min - tol
            && r.x1 <= self.x1_max + tol
            && r.x2 >= self.x2_min - tol
            && r.x2 <= self.x2_max + tol
    }

    /// The cell whose node coincides with `r`, if any.
    pub fn cell_of(&self, r: Point) -> Option<CellIndex> {
        if !self.contains(r) {
            return None;
        }
        let fc = (r.x1 - self.x1_min) / self.step;
        let fr = (r.x2 - self.x2_min) / self.step;
        let (c, rr) = (fc.round(), fr.round());
        if (fc - c).abs() > 1e-6 || (fr - rr).abs() > 1e-6 {
            return None;
        }
        let (c, rr) = (c.max(0.0) as usize, rr.max(0.0) as usize);
        (c < self.ncols() && rr < self.nrows()).then(|| self.index(c, rr))
    }

    /// Maps `r` affinely so the grid bounds become `[-1, 1]` on each axis;
    /// a zero-extent axis maps to 0.
    pub fn to_unit(&self, r: Point) -> Point {
        let unit = |v: f64, lo: f64, hi: f64| if hi > lo { 2.0 * (v - lo) / (hi - lo) - 1.0 } else { 0.0 };
        Point::new(unit(r.x1, self.x1_min, self.x1_max), unit(r.x2, self.x2_min, self.x2_max))
    }

    /// The minimum corner `(x1_min, x2_min)`.
    pub fn min_corner(&self) -> Point {
        Point::new(self.x1_min, self.x2_min)
    }
}

/// A grid plus the set of cells an agent may occupy.
///
/// Analytic surfaces reach every cell; rasters exclude `nodata` cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    spec: GridSpec,
    reachable: Vec<bool>,
}

impl Grid {
    pub fn full(spec: GridSpec) -> Self {
        Self { reachable: vec![true; spec.cell_count()], spec }
    }

    pub fn with_mask(spec: GridSpec, reachable: Vec<bool>) -> Result<Self, DomainError> {
        if reachable.len() != spec.cell_count() {
            return Err(DomainError::ValueCount { expected: spec.cell_count(), got: reachable.len() });
        }
        Ok(Self { spec, reachable })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn cell_count(&self) -> usize {
        self.reachable.len()
    }

    pub fn is_reachable(&self, cell: CellIndex) -> bool {
        self.reachable.get(cell).copied().unwrap_or(false)
    }

    pub fn reachable_cells(&self) -> impl Iterator<Item = CellIndex> + '_ {
        self.reachable.iter().enumerate().filter(|(_, ok)| **ok).map(|(i, _)| i)
    }

    pub fn reachable_count(&self) -> usize {
        self.reachable.iter().filter(|ok| **ok).count()
    }

    pub fn point(&self, cell: CellIndex) -> Point {
        self.spec.point(cell)
    }

    pub fn cell_of(&self, r: Point) -> Option<CellIndex> {
        self.spec.cell_of(r)
    }

    /// Reachable cells within Chebyshev distance `radius` (in cells) of
    /// `cell`, excluding `cell` itself, in row-major order.
    pub fn neighborhood(&self, cell: CellIndex, radius: usize) -> Vec<CellIndex> {
        let (col, row) = self.spec.col_row(cell);
        let (ncols, nrows) = (self.spec.ncols(), self.spec.nrows());
        let r_lo = row.saturating_sub(radius);
        let r_hi = (row + radius).min(nrows - 1);
        let c_lo = col.saturating_sub(radius);
        let c_hi = (col + radius).min(ncols - 1);
        let mut out = Vec::with_capacity((2 * radius + 1).pow(2));
        for r in r_lo..=r_hi {
            for c in c_lo..=c_hi {
                let idx = self.spec.index(c, r);
                if idx != cell && self.reachable[idx] {
                    out.push(idx);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SurfaceKind {
    Parabola,
    Townsend,
    Raster,
}

/// A static scalar field over a gridded planar domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Surface {
    kind: SurfaceKind,
    grid: Grid,
    noise_variance: f64,
    raster_values: Option<Vec<f64>>,
    true_min: Point,
}

/// `x1² + x2²`
pub fn parabola(r: Point) -> f64 {
    r.x1 * r.x1 + r.x2 * r.x2
}

/// Townsend: `−cos((x1 − 0.1)·x2)² − x1·sin(3·x1 + x2)`.
///
/// On `[-1.75:0.1:1.75]²` its grid minimum is the corner `(−1.75, −1.75)`.
pub fn townsend(r: Point) -> f64 {
    let c = ((r.x1 - 0.1) * r.x2).cos();
    -c * c - r.x1 * (3.0 * r.x1 + r.x2).sin()
}

impl Surface {
    /// Parabola on `[-1:0.1:1]²`.
    pub fn parabola(noise_variance: f64) -> Self {
        Self::analytic(SurfaceKind::Parabola, GridSpec::square(-1.0, 1.0, 0.1).unwrap(), noise_variance)
            .unwrap()
    }

    /// Townsend on `[-1.75:0.1:1.75]²`.
    pub fn townsend(noise_variance: f64) -> Self {
        Self::analytic(SurfaceKind::Townsend, GridSpec::square(-1.75, 1.75, 0.1).unwrap(), noise_variance)
            .unwrap()
    }

    pub fn analytic(kind: SurfaceKind, spec: GridSpec, noise_variance: f64) -> Result<Self, DomainError> {
        spec.validate()?;
        check_noise(noise_variance)?;
        let true_min = match kind {
            SurfaceKind::Parabola => Point::new(0.0, 0.0),
            SurfaceKind::Townsend => Point::new(-1.75, -1.75),
            SurfaceKind::Raster => {
                return Err(DomainError::InvalidGrid("raster surfaces need values".into()))
            }
        };
        Ok(Self { kind, grid: Grid::full(spec), noise_variance, raster_values: None, true_min })
    }

    /// Raster surface from row-major (south row first) values. NaN marks
    /// cells without data.
    pub fn raster(spec: GridSpec, values: Vec<f64>, noise_variance: f64) -> Result<Self, DomainError> {
        spec.validate()?;
        check_noise(noise_variance)?;
        if values.len() != spec.cell_count() {
            return Err(DomainError::ValueCount { expected: spec.cell_count(), got: values.len() });
        }
        let mask: Vec<bool> = values.iter().map(|v| !v.is_nan()).collect();
        let grid = Grid::with_mask(spec, mask)?;
        let best = grid
            .reachable_cells()
            .fold(None::<CellIndex>, |best, i| match best {
                Some(b) if values[b] <= values[i] => Some(b),
                _ => Some(i),
            })
            .ok_or_else(|| DomainError::InvalidGrid("raster holds no data cells".into()))?;
        let true_min = spec.point(best);
        Ok(Self { kind: SurfaceKind::Raster, grid, noise_variance, raster_values: Some(values), true_min })
    }

    pub fn kind(&self) -> SurfaceKind {
        self.kind
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn spec(&self) -> &GridSpec {
        self.grid.spec()
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn with_noise(mut self, noise_variance: f64) -> Result<Self, DomainError> {
        check_noise(noise_variance)?;
        self.noise_variance = noise_variance;
        Ok(self)
    }

    /// Whether the noise level is one of the benchmark settings (0 or 0.02).
    pub fn is_canonical_noise(&self) -> bool {
        self.noise_variance == 0.0 || self.noise_variance == CANONICAL_NOISE_VARIANCE
    }

    pub fn raster_values(&self) -> Option<&[f64]> {
        self.raster_values.as_deref()
    }

    /// Noiseless ground truth `f(r)`.
    pub fn evaluate(&self, r: Point) -> Result<f64, DomainError> {
        let spec = self.grid.spec();
        if !spec.contains(r) {
            return Err(DomainError::OutOfDomain { x1: r.x1, x2: r.x2 });
        }
        match self.kind {
            SurfaceKind::Parabola => Ok(parabola(r)),
            SurfaceKind::Townsend => Ok(townsend(r)),
            SurfaceKind::Raster => {
                let cell = spec.cell_of(r).ok_or(DomainError::NotOnCell { x1: r.x1, x2: r.x2 })?;
                self.value_at(cell)
            }
        }
    }

    /// Ground truth at a grid cell.
    pub fn value_at(&self, cell: CellIndex) -> Result<f64, DomainError> {
        match &self.raster_values {
            Some(values) => {
                let v = values[cell];
                if v.is_nan() {
                    let p = self.grid.point(cell);
                    Err(DomainError::NoData { x1: p.x1, x2: p.x2 })
                } else {
                    Ok(v)
                }
            }
            None => self.evaluate(self.grid.point(cell)),
        }
    }

    /// Ground truth at every cell; unreachable cells hold NaN.
    pub fn truth(&self) -> Vec<f64> {
        (0..self.grid.cell_count())
            .map(|i| if self.grid.is_reachable(i) { self.value_at(i).unwrap_or(f64::NAN) } else { f64::NAN })
            .collect()
    }

    /// `f(r) + ε` with `ε ~ N(0, σ²_noise)`. No draw is taken when the
    /// surface is noiseless.
    pub fn observe<R: Rng + ?Sized>(&self, r: Point, rng: &mut R) -> Result<f64, DomainError> {
        let truth = self.evaluate(r)?;
        Ok(truth + self.noise_draw(rng))
    }

    pub fn observe_cell<R: Rng + ?Sized>(&self, cell: CellIndex, rng: &mut R) -> Result<f64, DomainError> {
        let truth = self.value_at(cell)?;
        Ok(truth + self.noise_draw(rng))
    }

    fn noise_draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.noise_variance == 0.0 {
            return 0.0;
        }
        let z: f64 = rng.sample(StandardNormal);
        z * self.noise_variance.sqrt()
    }

    /// Reachable grid positions, row-major.
    pub fn grid_points(&self) -> Vec<Point> {
        self.grid.reachable_cells().map(|i| self.grid.point(i)).collect()
    }

    pub fn true_minimum(&self) -> Point {
        self.true_min
    }
}

fn check_noise(noise_variance: f64) -> Result<(), DomainError> {
    if noise_variance.is_finite() && noise_variance >= 0.0 {
        Ok(())
    } else {
        Err(DomainError::InvalidGrid(format!("noise variance must be >= 0, got {noise_variance}")))
    }
}

/// One row of the training set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    /// Sample counter, starting at 1.
    pub index: usize,
    pub position: Point,
    pub value: f64,
}

/// Observations in the order the agent collected them.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    rows: Vec<Sample>,
}

impl Dataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (Point, f64)>) -> Self {
        let mut ds = Self::new();
        for (p, v) in pairs {
            ds.push(p, v);
        }
        ds
    }

    pub fn push(&mut self, position: Point, value: f64) {
        let index = self.rows.len() + 1;
        self.rows.push(Sample { index, position, value });
    }

    pub fn rows(&self) -> &[Sample] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn positions(&self) -> Vec<Point> {
        self.rows.iter().map(|s| s.position).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.rows.iter().map(|s| s.value).collect()
    }
}

/// Per-cell predictive mean and variance.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorField {
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
}

impl PosteriorField {
    /// Builds a field, clamping round-off negatives in the variances to 0.
    pub fn new(means: Vec<f64>, mut variances: Vec<f64>) -> Self {
        assert_eq!(means.len(), variances.len(), "mean/variance length mismatch");
        for v in &mut variances {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        Self { means, variances }
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }
}
