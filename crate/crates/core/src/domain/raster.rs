//! Plain-text gridded rasters (ESRI ASCII grid layout).
//!
//! ```text
//! ncols 3
//! nrows 2
//! xllcorner 0.0
//! yllcorner 0.0
//! cellsize 0.5
//! nodata -9999
//! 1 2 3
//! 4 5 6
//! ```
//!
//! The first body line is the northernmost row. Cell `(col, row)` of the
//! body sits at `(xllcorner + col·cellsize, yllcorner + (nrows − 1 − row)·cellsize)`.

use std::fmt::Write as _;
use std::str::FromStr;

use thiserror::Error;

use super::{DomainError, GridSpec, Surface};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RasterError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: expected {expected} values, found {found}")]
    RowLength { line: usize, expected: usize, found: usize },
    #[error("expected {expected} data rows, found {found}")]
    RowCount { expected: usize, found: usize },
    #[error(transparent)]
    Domain(#[from] DomainError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub ncols: usize,
    pub nrows: usize,
    pub xllcorner: f64,
    pub yllcorner: f64,
    pub cellsize: f64,
    pub nodata: f64,
    /// Body values as written: north row first.
    pub values: Vec<f64>,
}

const HEADER: [&[&str]; 6] = [
    &["ncols"],
    &["nrows"],
    &["xllcorner"],
    &["yllcorner"],
    &["cellsize"],
    &["nodata", "nodata_value"],
];

fn header_value<'a>(line_no: usize, line: &'a str, names: &[&str]) -> Result<&'a str, RasterError> {
    let mut parts = line.split_whitespace();
    let key = parts.next().ok_or_else(|| RasterError::Syntax {
        line: line_no,
        message: format!("missing `{}` header", names[0]),
    })?;
    if !names.iter().any(|n| n.eq_ignore_ascii_case(key)) {
        return Err(RasterError::Syntax {
            line: line_no,
            message: format!("expected `{}` header, found `{key}`", names[0]),
        });
    }
    let value = parts.next().ok_or_else(|| RasterError::Syntax {
        line: line_no,
        message: format!("`{key}` has no value"),
    })?;
    if parts.next().is_some() {
        return Err(RasterError::Syntax { line: line_no, message: format!("trailing tokens after `{key}`") });
    }
    Ok(value)
}

fn parse_real(line: usize, token: &str) -> Result<f64, RasterError> {
    let v: f64 = token
        .parse()
        .map_err(|_| RasterError::Syntax { line, message: format!("`{token}` is not a number") })?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(RasterError::Syntax { line, message: format!("`{token}` is not finite") })
    }
}

fn parse_count(line: usize, token: &str) -> Result<usize, RasterError> {
    let n: usize = token
        .parse()
        .map_err(|_| RasterError::Syntax { line, message: format!("`{token}` is not a positive integer") })?;
    if n == 0 || n > 100_000 {
        return Err(RasterError::Syntax { line, message: format!("dimension {n} out of range") });
    }
    Ok(n)
}

impl FromStr for Raster {
    type Err = RasterError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut header = [""; 6];
        for (slot, names) in header.iter_mut().zip(HEADER) {
            let (line_no, line) = lines
                .next()
                .ok_or_else(|| RasterError::Syntax { line: 0, message: format!("missing `{}` header", names[0]) })?;
            *slot = header_value(line_no, line, names)?;
        }
        let ncols = parse_count(1, header[0])?;
        let nrows = parse_count(2, header[1])?;
        let xllcorner = parse_real(3, header[2])?;
        let yllcorner = parse_real(4, header[3])?;
        let cellsize = parse_real(5, header[4])?;
        if cellsize <= 0.0 {
            return Err(RasterError::Syntax { line: 5, message: "cellsize must be positive".into() });
        }
        let nodata = parse_real(6, header[5])?;
        if ncols.saturating_mul(nrows) > 10_000_000 {
            return Err(RasterError::Syntax { line: 2, message: "raster too large".into() });
        }

        let mut values = Vec::with_capacity(ncols * nrows);
        let mut rows = 0;
        for (line_no, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            if rows == nrows {
                return Err(RasterError::RowCount { expected: nrows, found: rows + 1 });
            }
            let before = values.len();
            for token in line.split_whitespace() {
                values.push(parse_real(line_no, token)?);
            }
            let found = values.len() - before;
            if found != ncols {
                return Err(RasterError::RowLength { line: line_no, expected: ncols, found });
            }
            rows += 1;
        }
        if rows != nrows {
            return Err(RasterError::RowCount { expected: nrows, found: rows });
        }
        Ok(Raster { ncols, nrows, xllcorner, yllcorner, cellsize, nodata, values })
    }
}

impl Raster {
    pub fn grid_spec(&self) -> Result<GridSpec, DomainError> {
        GridSpec::new(
            self.xllcorner,
            self.xllcorner + (self.ncols - 1) as f64 * self.cellsize,
            self.yllcorner,
            self.yllcorner + (self.nrows - 1) as f64 * self.cellsize,
            self.cellsize,
        )
    }

    /// Converts to a surface; `nodata` cells become unreachable.
    pub fn to_surface(&self, noise_variance: f64) -> Result<Surface, DomainError> {
        let spec = self.grid_spec()?;
        // grid rows run south to north, the body north to south
        let mut grid_values = Vec::with_capacity(self.values.len());
        for row in (0..self.nrows).rev() {
            for &v in &self.values[row * self.ncols..(row + 1) * self.ncols] {
                grid_values.push(if v == self.nodata { f64::NAN } else { v });
            }
        }
        Surface::raster(spec, grid_values, noise_variance)
    }

    pub fn to_ascii(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "ncols {}", self.ncols);
        let _ = writeln!(out, "nrows {}", self.nrows);
        let _ = writeln!(out, "xllcorner {}", self.xllcorner);
        let _ = writeln!(out, "yllcorner {}", self.yllcorner);
        let _ = writeln!(out, "cellsize {}", self.cellsize);
        let _ = writeln!(out, "nodata {}", self.nodata);
        for row in self.values.chunks(self.ncols) {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }
}

/// Parses raster text into a noiseless raster surface.
pub fn load_raster(text: &str) -> Result<Surface, RasterError> {
    let raster: Raster = text.parse()?;
    Ok(raster.to_surface(0.0)?)
}
