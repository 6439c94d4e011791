//! CSV persistence of trial results and grouped statistics for plotting.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bnn::Optimizer;
use crate::experiment::{OracleKind, SurfaceSource, TrialConfig, TrialResult};

#[derive(Debug, Error)]
pub enum ResultsError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {message}")]
    Csv { path: PathBuf, message: String },
    #[error("no results to aggregate")]
    Empty,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ResultsError + '_ {
    move |source| ResultsError::Io { path: path.to_path_buf(), source }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> ResultsError + '_ {
    move |e| ResultsError::Csv { path: path.to_path_buf(), message: e.to_string() }
}

/// One line of `summary.csv`. Report fields are empty for trials that
/// failed before producing a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsRow {
    pub surface: String,
    pub oracle: String,
    pub strategy: String,
    pub horizon: String,
    pub noise: String,
    pub trial: usize,
    pub seed: u64,
    pub samples_taken: usize,
    pub e0: Option<f64>,
    pub ef: Option<f64>,
    pub e_c: Option<f64>,
    pub i_c: Option<usize>,
    pub d_c: Option<f64>,
    pub e_min: Option<f64>,
    pub converged: Option<bool>,
    pub total_fit_seconds: f64,
    pub mean_fit_seconds: f64,
    pub failure: Option<String>,
}

impl ResultsRow {
    pub fn from_result(r: &TrialResult) -> Self {
        let c = &r.config;
        let rep = r.report.as_ref();
        Self {
            surface: c.surface.name.clone(),
            oracle: c.oracle.label().into(),
            strategy: c.strategy.label().into(),
            horizon: c.horizon_label().into(),
            noise: c.noise_label().into(),
            trial: c.trial,
            seed: c.seed,
            samples_taken: r.samples_taken(),
            e0: rep.map(|x| x.e0),
            ef: rep.map(|x| x.ef),
            e_c: rep.map(|x| x.e_c),
            i_c: rep.map(|x| x.i_c),
            d_c: rep.map(|x| x.d_c),
            e_min: rep.map(|x| x.e_min),
            converged: rep.map(|x| x.converged),
            total_fit_seconds: r.total_fit_seconds,
            mean_fit_seconds: r.mean_fit_seconds(),
            failure: r.failure.clone(),
        }
    }

    fn sort_key(&self) -> (&str, &str, &str, &str, &str, usize) {
        (&self.surface, &self.oracle, &self.strategy, &self.horizon, &self.noise, self.trial)
    }

    /// Figure group label: `SB` pools snake and spiral.
    pub fn label(&self) -> &'static str {
        match (self.strategy.as_str(), self.horizon.as_str()) {
            ("al", "nn") => "AL-NN",
            ("al", "local") => "AL-Local",
            ("al", "global") => "AL-Global",
            ("al", _) => "AL",
            _ => "SB",
        }
    }
}

/// One line of a trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub sample_index: usize,
    pub x1: f64,
    pub x2: f64,
    pub observed: f64,
    pub rms: Option<f64>,
    pub mean_variance: Option<f64>,
    pub fit_seconds: Option<f64>,
}

/// Rows for every sample; samples taken before the first fit carry no
/// model columns.
pub fn trace_rows(r: &TrialResult) -> Vec<TraceRow> {
    let first_fit = r.seed_count.saturating_sub(1);
    r.trajectory
        .waypoints
        .iter()
        .zip(&r.observations)
        .enumerate()
        .map(|(i, (p, y))| {
            let rec = i.checked_sub(first_fit).and_then(|k| r.trace.records.get(k));
            TraceRow {
                sample_index: i + 1,
                x1: p.x1,
                x2: p.x2,
                observed: *y,
                rms: rec.map(|t| t.rms),
                mean_variance: rec.map(|t| t.mean_variance),
                fit_seconds: rec.map(|t| t.fit_seconds),
            }
        })
        .collect()
}

pub fn trace_csv(r: &TrialResult) -> Result<String, csv::Error> {
    // Header written by hand so an empty trace still carries it.
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(["sample_index", "x1", "x2", "observed", "rms", "mean_variance", "fit_seconds"])?;
    for row in trace_rows(r) {
        w.serialize(row)?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn summary_rows(results: &[TrialResult]) -> Vec<ResultsRow> {
    let mut rows: Vec<ResultsRow> = results.iter().map(ResultsRow::from_result).collect();
    rows.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    rows
}

pub fn summary_csv(rows: &[ResultsRow]) -> Result<String, csv::Error> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record([
        "surface",
        "oracle",
        "strategy",
        "horizon",
        "noise",
        "trial",
        "seed",
        "samples_taken",
        "e0",
        "ef",
        "e_c",
        "i_c",
        "d_c",
        "e_min",
        "converged",
        "total_fit_seconds",
        "mean_fit_seconds",
        "failure",
    ])?;
    for row in rows {
        w.serialize(row)?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Parses `summary.csv` content.
pub fn read_summary(text: &str) -> Result<Vec<ResultsRow>, csv::Error> {
    csv::Reader::from_reader(text.as_bytes()).deserialize().collect()
}

fn echo_line(c: &TrialConfig) -> String {
    let mut s = format!("{}: surface={} ", c.trial_id(), c.surface.name);
    match &c.surface.source {
        SurfaceSource::Parabola(g) | SurfaceSource::Townsend(g) => {
            let kind = if matches!(c.surface.source, SurfaceSource::Parabola(_)) { "parabola" } else { "townsend" };
            let _ = write!(s, "kind={kind} x1={}:{}:{} x2={}:{}:{}", g.x1_min, g.step, g.x1_max, g.x2_min, g.step, g.x2_max);
        }
        SurfaceSource::Raster(r) => {
            let _ = write!(
                s,
                "kind=raster ncols={} nrows={} xllcorner={} yllcorner={} cellsize={}",
                r.ncols, r.nrows, r.xllcorner, r.yllcorner, r.cellsize
            );
        }
    }
    let _ = write!(
        s,
        " noise={} noise_variance={} budget={} seed={} seed_points={} step_cells={}",
        c.noise_label(),
        if c.noise { c.surface.noise_variance } else { 0.0 },
        c.sample_budget,
        c.seed,
        c.seed_points,
        c.step_cells
    );
    if let Some(p) = c.start {
        let _ = write!(s, " start={},{}", p.x1, p.x2);
    }
    match c.oracle {
        OracleKind::Gp => {
            let _ = write!(s, " gp_iterations={}", c.gp.iterations);
        }
        OracleKind::Bnn => {
            let b = &c.bnn;
            let _ = write!(
                s,
                " bnn_epochs={} bnn_learning_rate={} bnn_mc_passes={} bnn_optimizer={} bnn_dropout={} bnn_l2={} bnn_warm_start={}",
                b.train.epochs,
                b.train.learning_rate,
                b.train.mc_passes,
                match b.train.optimizer {
                    Optimizer::GradientDescent => "sgd",
                    _ => "adam",
                },
                b.dropout_rate,
                b.l2_weight,
                b.warm_start
            );
        }
    }
    s
}

/// The resolved configuration of every trial, one line each, in summary order.
pub fn campaign_echo(results: &[TrialResult]) -> String {
    let mut order: Vec<&TrialResult> = results.iter().collect();
    order.sort_by_cached_key(|r| {
        let row = ResultsRow::from_result(r);
        (row.surface, row.oracle, row.strategy, row.horizon, row.noise, row.trial)
    });
    order.iter().map(|r| echo_line(&r.config) + "\n").collect()
}

fn write_file(path: &Path, body: &str) -> Result<(), ResultsError> {
    fs::write(path, body).map_err(io_err(path))
}

/// Writes `summary.csv`, one `trace_<trial-id>.csv` per trial and
/// `campaign.echo` into `dir`, creating it if needed.
pub fn write_results(results: &[TrialResult], dir: &Path) -> Result<(), ResultsError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let summary = dir.join("summary.csv");
    write_file(&summary, &summary_csv(&summary_rows(results)).map_err(csv_err(&summary))?)?;
    for r in results {
        let path = dir.join(format!("trace_{}.csv", r.config.trial_id()));
        write_file(&path, &trace_csv(r).map_err(csv_err(&path))?)?;
    }
    write_file(&dir.join("campaign.echo"), &campaign_echo(results))
}

/// Metrics emitted for plotting, with the file stem used for each.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotMetric {
    FitTime,
    RmsAtConvergence,
    SamplesToConvergence,
    DistanceToConvergence,
    MinPositionError,
}

impl PlotMetric {
    pub const ALL: [PlotMetric; 5] = [
        PlotMetric::FitTime,
        PlotMetric::RmsAtConvergence,
        PlotMetric::SamplesToConvergence,
        PlotMetric::DistanceToConvergence,
        PlotMetric::MinPositionError,
    ];

    pub fn stem(self) -> &'static str {
        match self {
            PlotMetric::FitTime => "fit_time",
            PlotMetric::RmsAtConvergence => "rms_at_convergence",
            PlotMetric::SamplesToConvergence => "samples_to_convergence",
            PlotMetric::DistanceToConvergence => "distance_to_convergence",
            PlotMetric::MinPositionError => "min_position_error",
        }
    }

    pub fn value(self, row: &ResultsRow) -> Option<f64> {
        match self {
            PlotMetric::FitTime => row.failure.is_none().then_some(row.mean_fit_seconds),
            PlotMetric::RmsAtConvergence => row.e_c,
            PlotMetric::SamplesToConvergence => row.i_c.map(|v| v as f64),
            PlotMetric::DistanceToConvergence => row.d_c,
            PlotMetric::MinPositionError => row.e_min,
        }
    }
}

/// Mean and sample standard deviation of one figure group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub surface: String,
    /// Empty when noise levels are pooled.
    pub noise: String,
    pub label: String,
    pub oracle: String,
    pub mean: f64,
    pub standard_deviation: f64,
    pub n: usize,
    /// Set for single-trial groups, whose deviation is reported as 0.
    pub degenerate: bool,
}

/// `(mean, sample standard deviation)`; the deviation is 0 for one value.
pub fn mean_and_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    (mean, (ss / (n - 1.0)).sqrt())
}

fn label_rank(label: &str) -> usize {
    ["SB", "AL-NN", "AL-Local", "AL-Global", "AL"].iter().position(|l| *l == label).unwrap_or(usize::MAX)
}

/// Groups rows by surface, strategy label and oracle (and noise when
/// `by_noise`), skipping rows that lack the metric.
pub fn plot_groups(rows: &[ResultsRow], metric: PlotMetric, by_noise: bool) -> Vec<PlotRow> {
    let mut groups: BTreeMap<(String, String, usize, String), Vec<f64>> = BTreeMap::new();
    for row in rows {
        let Some(v) = metric.value(row) else { continue };
        let noise = if by_noise { row.noise.clone() } else { String::new() };
        groups
            .entry((row.surface.clone(), noise, label_rank(row.label()), row.oracle.clone()))
            .or_default()
            .push(v);
    }
    let label_of = |rank: usize| ["SB", "AL-NN", "AL-Local", "AL-Global", "AL"].get(rank).copied().unwrap_or("?");
    groups
        .into_iter()
        .map(|((surface, noise, rank, oracle), values)| {
            let (mean, standard_deviation) = mean_and_sd(&values);
            PlotRow {
                surface,
                noise,
                label: label_of(rank).into(),
                oracle,
                mean,
                standard_deviation,
                n: values.len(),
                degenerate: values.len() == 1,
            }
        })
        .collect()
}

fn plot_csv(rows: &[PlotRow], by_noise: bool) -> Result<String, csv::Error> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    if by_noise {
        w.write_record(["surface", "noise", "label", "oracle", "mean", "standard_deviation", "n", "degenerate"])?;
    } else {
        w.write_record(["surface", "label", "oracle", "mean", "standard_deviation", "n", "degenerate"])?;
    }
    for r in rows {
        let mut rec = vec![r.surface.clone()];
        if by_noise {
            rec.push(r.noise.clone());
        }
        rec.extend([
            r.label.clone(),
            r.oracle.clone(),
            ryu_string(r.mean),
            ryu_string(r.standard_deviation),
            r.n.to_string(),
            r.degenerate.to_string(),
        ]);
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn ryu_string(v: f64) -> String {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.serialize(v).expect("in-memory write");
    let bytes = w.into_inner().expect("in-memory write");
    String::from_utf8(bytes).expect("utf-8").trim_end().to_string()
}

/// Writes `plot_<metric>.csv` (noise pooled) and
/// `plot_<metric>_by_noise.csv` for every plotted metric. Returns the
/// files written.
pub fn emit_plot_data(rows: &[ResultsRow], dir: &Path) -> Result<Vec<PathBuf>, ResultsError> {
    if rows.is_empty() {
        return Err(ResultsError::Empty);
    }
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();
    for metric in PlotMetric::ALL {
        for by_noise in [false, true] {
            let name = if by_noise { format!("plot_{}_by_noise.csv", metric.stem()) } else { format!("plot_{}.csv", metric.stem()) };
            let path = dir.join(name);
            let body = plot_csv(&plot_groups(rows, metric, by_noise), by_noise).map_err(csv_err(&path))?;
            write_file(&path, &body)?;
            written.push(path);
        }
    }
    Ok(written)
}
