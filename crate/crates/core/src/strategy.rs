//! Science-blind sweeps, random-walk seeding and the constrained
//! variance-greedy suggestion policy.
//!
//! Cells are addressed by row-major [`CellIndex`]; ties anywhere in this
//! module are broken toward the lowest index.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{CellIndex, Grid, Point, PosteriorField};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("no candidate cells inside the prediction horizon")]
    EmptyHorizon,
    #[error("agent at cell {0} has no reachable neighbour")]
    Stranded(CellIndex),
    #[error("cell {0} is outside the posterior field")]
    OffGrid(CellIndex),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum HorizonKind {
    NearestNeighbor,
    Local,
    Global,
}

/// Which cells the policy may consider as its next target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HorizonSpec {
    pub kind: HorizonKind,
    /// Chebyshev radius in cells; ignored for `Global`.
    pub radius_cells: usize,
}

impl HorizonSpec {
    pub const NEAREST_NEIGHBOR: HorizonSpec = HorizonSpec { kind: HorizonKind::NearestNeighbor, radius_cells: 1 };
    pub const LOCAL: HorizonSpec = HorizonSpec { kind: HorizonKind::Local, radius_cells: 3 };
    pub const GLOBAL: HorizonSpec = HorizonSpec { kind: HorizonKind::Global, radius_cells: 0 };

    pub fn label(&self) -> &'static str {
        match self.kind {
            HorizonKind::NearestNeighbor => "nn",
            HorizonKind::Local => "local",
            HorizonKind::Global => "global",
        }
    }
}

/// Waypoints in visiting order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub waypoints: Vec<Point>,
}

impl Trajectory {
    pub fn from_cells(grid: &Grid, cells: &[CellIndex]) -> Self {
        Self { waypoints: cells.iter().map(|&c| grid.point(c)).collect() }
    }

    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }
}

/// Where the agent is and where it has been.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub position: CellIndex,
    pub history: Vec<CellIndex>,
}

impl AgentState {
    pub fn new(start: CellIndex) -> Self {
        Self { position: start, history: vec![start] }
    }

    pub fn move_to(&mut self, cell: CellIndex) {
        self.position = cell;
        self.history.push(cell);
    }
}

fn strided(n: usize, step: usize) -> Vec<usize> {
    (0..n).step_by(step.max(1)).collect()
}

/// Boustrophedon sweep over the `step_cells`-strided sublattice, starting at
/// the minimum corner and reversing x1 direction on every row. Unreachable
/// cells are skipped.
pub fn snake_path(grid: &Grid, step_cells: usize) -> Vec<CellIndex> {
    let spec = grid.spec();
    let cols = strided(spec.ncols(), step_cells);
    let rows = strided(spec.nrows(), step_cells);
    let mut out = Vec::with_capacity(cols.len() * rows.len());
    for (k, &r) in rows.iter().enumerate() {
        let mut push = |c: usize| {
            let idx = spec.index(c, r);
            if grid.is_reachable(idx) {
                out.push(idx);
            }
        };
        if k % 2 == 0 {
            cols.iter().copied().for_each(&mut push);
        } else {
            cols.iter().rev().copied().for_each(&mut push);
        }
    }
    out
}

/// Inward rectangular spiral over the strided sublattice: east along the
/// bottom edge, north, west, south, then the next ring in.
pub fn spiral_path(grid: &Grid, step_cells: usize) -> Vec<CellIndex> {
    let spec = grid.spec();
    let cols = strided(spec.ncols(), step_cells);
    let rows = strided(spec.nrows(), step_cells);
    let mut order: Vec<(usize, usize)> = Vec::with_capacity(cols.len() * rows.len());
    let (mut c_lo, mut c_hi) = (0isize, cols.len() as isize - 1);
    let (mut r_lo, mut r_hi) = (0isize, rows.len() as isize - 1);
    while c_lo <= c_hi && r_lo <= r_hi {
        for c in c_lo..=c_hi {
            order.push((c as usize, r_lo as usize));
        }
        for r in (r_lo + 1)..=r_hi {
            order.push((c_hi as usize, r as usize));
        }
        if r_lo < r_hi {
            for c in (c_lo..c_hi).rev() {
                order.push((c as usize, r_hi as usize));
            }
        }
        if c_lo < c_hi {
            for r in ((r_lo + 1)..r_hi).rev() {
                order.push((c_lo as usize, r as usize));
            }
        }
        c_lo += 1;
        c_hi -= 1;
        r_lo += 1;
        r_hi -= 1;
    }
    order
        .into_iter()
        .map(|(c, r)| spec.index(cols[c], rows[r]))
        .filter(|&idx| grid.is_reachable(idx))
        .collect()
}

/// `n` waypoints starting at `start`; each step goes to a uniformly drawn
/// 8-connected neighbour, redrawing moves that leave the reachable grid.
/// An agent with no reachable neighbour stays put.
pub fn random_walk_seed<R: Rng + ?Sized>(grid: &Grid, start: CellIndex, n: usize, rng: &mut R) -> Vec<CellIndex> {
    const MOVES: [(isize, isize); 8] = [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)];
    let spec = grid.spec();
    let (ncols, nrows) = (spec.ncols() as isize, spec.nrows() as isize);
    let mut walk = Vec::with_capacity(n);
    if n == 0 {
        return walk;
    }
    walk.push(start);
    let mut here = start;
    let stuck = grid.neighborhood(start, 1).is_empty();
    while walk.len() < n {
        if stuck {
            walk.push(here);
            continue;
        }
        let (c, r) = spec.col_row(here);
        let (dc, dr) = MOVES[rng.random_range(0..MOVES.len())];
        let (nc, nr) = (c as isize + dc, r as isize + dr);
        if nc < 0 || nr < 0 || nc >= ncols || nr >= nrows {
            continue;
        }
        let next = spec.index(nc as usize, nr as usize);
        if !grid.is_reachable(next) {
            continue;
        }
        walk.push(next);
        here = next;
    }
    walk
}

/// Candidate target cells for the policy, row-major, never including the
/// agent's own cell.
pub fn horizon_cells(grid: &Grid, position: CellIndex, spec: HorizonSpec) -> Vec<CellIndex> {
    match spec.kind {
        HorizonKind::Global => grid.reachable_cells().filter(|&c| c != position).collect(),
        _ => grid.neighborhood(position, spec.radius_cells.max(1)),
    }
}

/// The candidate with the largest predicted variance.
pub fn select_target(posterior: &PosteriorField, candidates: &[CellIndex]) -> Result<CellIndex, PolicyError> {
    let mut best: Option<(CellIndex, f64)> = None;
    for &c in candidates {
        let v = *posterior.variances.get(c).ok_or(PolicyError::OffGrid(c))?;
        best = match best {
            Some((bc, bv)) if bv > v || (bv == v && bc < c) => Some((bc, bv)),
            _ => Some((c, v)),
        };
    }
    best.map(|(c, _)| c).ok_or(PolicyError::EmptyHorizon)
}

/// The reachable 8-connected neighbour of `position` closest (Euclidean) to
/// `target`.
pub fn next_step(grid: &Grid, position: CellIndex, target: CellIndex) -> Result<CellIndex, PolicyError> {
    let goal = grid.point(target);
    grid.neighborhood(position, 1)
        .into_iter()
        .map(|c| (c, grid.point(c).distance_squared(&goal)))
        .fold(None, |best: Option<(CellIndex, f64)>, (c, d)| match best {
            Some((_, bd)) if bd <= d => best,
            _ => Some((c, d)),
        })
        .map(|(c, _)| c)
        .ok_or(PolicyError::Stranded(position))
}

/// Chebyshev distance between two cells, in cells.
pub fn chebyshev_cells(grid: &Grid, a: CellIndex, b: CellIndex) -> usize {
    let (ac, ar) = grid.spec().col_row(a);
    let (bc, br) = grid.spec().col_row(b);
    ac.abs_diff(bc).max(ar.abs_diff(br))
}
