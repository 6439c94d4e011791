//! Accuracy and convergence metrics computed from a trial's error trace.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Point, PosteriorField, Surface};

/// Width of the settling band as a fraction of the initial-to-final drop.
pub const SETTLING_FRACTION: f64 = 0.02;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("posterior covers {got} cells but the surface grid has {expected}")]
    Shape { expected: usize, got: usize },
    #[error("trace is empty")]
    EmptyTrace,
}

/// Model state after one appended sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    /// 1-based position in the trace.
    pub index: usize,
    pub rms: f64,
    pub mean_variance: f64,
    pub fit_seconds: f64,
    pub position: Point,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ErrorTrace {
    pub records: Vec<TraceRecord>,
}

impl ErrorTrace {
    pub fn push(&mut self, rms: f64, mean_variance: f64, fit_seconds: f64, position: Point) {
        let index = self.records.len() + 1;
        self.records.push(TraceRecord { index, rms, mean_variance, fit_seconds, position });
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn errors(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.rms).collect()
    }

    pub fn total_fit_seconds(&self) -> f64 {
        self.records.iter().map(|r| r.fit_seconds).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub e0: f64,
    pub ef: f64,
    pub e_band: f64,
    pub e_c: f64,
    /// 1-based trace index of convergence.
    pub i_c: usize,
    pub d_c: f64,
    pub e_min: f64,
    pub converged: bool,
}

fn check_shape(posterior: &PosteriorField, surface: &Surface) -> Result<(), MetricsError> {
    let expected = surface.grid().cell_count();
    if posterior.len() != expected || posterior.variances.len() != expected {
        return Err(MetricsError::Shape { expected, got: posterior.len() });
    }
    Ok(())
}

/// Root-mean-squared error of the posterior mean against the noiseless
/// truth, over every reachable cell.
pub fn rms_error(posterior: &PosteriorField, surface: &Surface) -> Result<f64, MetricsError> {
    check_shape(posterior, surface)?;
    let grid = surface.grid();
    let truth = surface.truth();
    let mut sum = 0.0;
    let mut n = 0usize;
    for cell in grid.reachable_cells() {
        let d = posterior.means[cell] - truth[cell];
        sum += d * d;
        n += 1;
    }
    Ok((sum / n as f64).sqrt())
}

/// Mean predicted variance over reachable cells.
pub fn mean_variance(posterior: &PosteriorField, surface: &Surface) -> Result<f64, MetricsError> {
    check_shape(posterior, surface)?;
    let grid = surface.grid();
    let n = grid.reachable_count() as f64;
    Ok(grid.reachable_cells().map(|c| posterior.variances[c]).sum::<f64>() / n)
}

/// `(e_band, e_c)` with `e_band = 0.02·(e0 − ef)` and `e_c = ef + e_band`.
pub fn convergence_threshold(e0: f64, ef: f64) -> (f64, f64) {
    let band = SETTLING_FRACTION * (e0 - ef);
    (band, ef + band)
}

/// 1-based index minimizing `|e_i − e_c|`, first index on ties.
///
/// # Panics
/// If `errors` is empty.
pub fn samples_until_convergence(errors: &[f64], e_c: f64) -> usize {
    assert!(!errors.is_empty(), "samples_until_convergence needs a nonempty trace");
    let mut best = 0;
    let mut best_gap = f64::INFINITY;
    for (i, e) in errors.iter().enumerate() {
        let gap = (e - e_c).abs();
        if gap < best_gap {
            best = i;
            best_gap = gap;
        }
    }
    best + 1
}

/// Path length from the first waypoint to waypoint `i_c` (1-based).
pub fn distance_until_convergence(waypoints: &[Point], i_c: usize) -> f64 {
    let end = i_c.min(waypoints.len());
    if end < 2 {
        return 0.0;
    }
    waypoints[..end].windows(2).map(|w| w[0].distance(&w[1])).sum()
}

/// Distance from the true minimum to the posterior-mean minimum over
/// reachable cells (first cell on ties).
pub fn min_position_error(posterior: &PosteriorField, surface: &Surface) -> Result<f64, MetricsError> {
    check_shape(posterior, surface)?;
    let grid = surface.grid();
    let best = grid
        .reachable_cells()
        .fold(None::<usize>, |best, c| match best {
            Some(b) if posterior.means[b] <= posterior.means[c] => Some(b),
            _ => Some(c),
        })
        .expect("grid has at least one reachable cell");
    Ok(surface.true_minimum().distance(&grid.point(best)))
}

/// Whether every error from `i_c` on lies inside `ef ± e_band` and the
/// trace actually improved.
pub fn is_converged(errors: &[f64], i_c: usize, ef: f64, e_band: f64) -> bool {
    let e0 = errors.first().copied().unwrap_or(ef);
    if !(e0 > ef) {
        return false;
    }
    let (lo, hi) = (ef - e_band, ef + e_band);
    errors[i_c.saturating_sub(1)..].iter().all(|&e| e >= lo && e <= hi)
}

impl ConvergenceReport {
    /// Builds the report from a trace. `waypoints` is the full sampling path
    /// and `waypoint_offset` the number of waypoints visited before the
    /// first trace record, so the distance runs to waypoint
    /// `waypoint_offset + i_c`.
    pub fn from_trace(
        trace: &ErrorTrace,
        waypoints: &[Point],
        waypoint_offset: usize,
        final_posterior: &PosteriorField,
        surface: &Surface,
    ) -> Result<Self, MetricsError> {
        if trace.is_empty() {
            return Err(MetricsError::EmptyTrace);
        }
        let errors = trace.errors();
        let e0 = errors[0];
        let ef = *errors.last().unwrap();
        let (e_band, e_c) = convergence_threshold(e0, ef);
        let i_c = samples_until_convergence(&errors, e_c);
        Ok(Self {
            e0,
            ef,
            e_band,
            e_c,
            i_c,
            d_c: distance_until_convergence(waypoints, waypoint_offset + i_c),
            e_min: min_position_error(final_posterior, surface)?,
            converged: is_converged(&errors, i_c, ef, e_band),
        })
    }
}
