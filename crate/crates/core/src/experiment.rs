//! Single trials (seed, then explore/fit/predict until the budget is spent)
//! and replicated campaigns over a configuration matrix.

use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::bnn::{self, BnnRegressor, TrainConfig};
use crate::domain::{
    CellIndex, Dataset, DomainError, GridSpec, Point, PosteriorField, Raster, Surface, SurfaceKind,
    CANONICAL_NOISE_VARIANCE,
};
use crate::gp::{self, GpModel, KernelParams};
use crate::metrics::{self, ConvergenceReport, ErrorTrace};
use crate::strategy::{self, HorizonSpec, Trajectory};

pub const DEFAULT_SEED_POINTS: usize = 10;
pub const DEFAULT_TRIALS_EACH: usize = 3;

const NOISE_STREAM: u64 = 0;
const WALK_STREAM: u64 = 1;
const ORACLE_STREAM: u64 = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExperimentError {
    #[error("invalid trial configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OracleKind {
    Gp,
    Bnn,
}

impl OracleKind {
    pub fn label(self) -> &'static str {
        match self {
            OracleKind::Gp => "gp",
            OracleKind::Bnn => "bnn",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StrategyKind {
    Snake,
    Spiral,
    ActiveLearning,
}

impl StrategyKind {
    pub fn label(self) -> &'static str {
        match self {
            StrategyKind::Snake => "snake",
            StrategyKind::Spiral => "spiral",
            StrategyKind::ActiveLearning => "al",
        }
    }

    pub fn is_science_blind(self) -> bool {
        self != StrategyKind::ActiveLearning
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SurfaceSource {
    Parabola(GridSpec),
    Townsend(GridSpec),
    Raster(Arc<Raster>),
}

/// A named surface plus the per-surface defaults of the benchmark matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceSpec {
    pub name: String,
    pub source: SurfaceSource,
    /// Variance used when noise is switched on.
    pub noise_variance: f64,
    pub default_budget: usize,
    /// Sublattice stride of the science-blind paths.
    pub sb_step: usize,
}

impl SurfaceSpec {
    pub fn parabola() -> Self {
        Self {
            name: "parabola".into(),
            source: SurfaceSource::Parabola(GridSpec::square(-1.0, 1.0, 0.1).unwrap()),
            noise_variance: CANONICAL_NOISE_VARIANCE,
            default_budget: 219,
            sb_step: 2,
        }
    }

    pub fn townsend() -> Self {
        Self {
            name: "townsend".into(),
            source: SurfaceSource::Townsend(GridSpec::square(-1.75, 1.75, 0.1).unwrap()),
            noise_variance: CANONICAL_NOISE_VARIANCE,
            default_budget: 219,
            sb_step: 4,
        }
    }

    pub fn raster(name: impl Into<String>, raster: Raster, default_budget: usize, sb_step: usize) -> Self {
        Self {
            name: name.into(),
            source: SurfaceSource::Raster(Arc::new(raster)),
            noise_variance: CANONICAL_NOISE_VARIANCE,
            default_budget,
            sb_step,
        }
    }

    /// 3 km lunar patch defaults (budget 83).
    pub fn lunar3(raster: Raster) -> Self {
        Self::raster("lunar3", raster, 83, 2)
    }

    /// 6 km lunar patch defaults (budget 311).
    pub fn lunar6(raster: Raster) -> Self {
        Self::raster("lunar6", raster, 311, 2)
    }

    pub fn build(&self, noise: bool) -> Result<Surface, DomainError> {
        let variance = if noise { self.noise_variance } else { 0.0 };
        match &self.source {
            SurfaceSource::Parabola(spec) => Surface::analytic(SurfaceKind::Parabola, *spec, variance),
            SurfaceSource::Townsend(spec) => Surface::analytic(SurfaceKind::Townsend, *spec, variance),
            SurfaceSource::Raster(r) => r.to_surface(variance),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpSettings {
    /// Hyperparameter descent iterations per fit.
    pub iterations: usize,
}

impl Default for GpSettings {
    fn default() -> Self {
        Self { iterations: gp::DEFAULT_ITERATIONS }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BnnSettings {
    pub train: TrainConfig,
    pub dropout_rate: f64,
    pub l2_weight: f64,
    pub warm_start: bool,
}

impl Default for BnnSettings {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            dropout_rate: bnn::DEFAULT_DROPOUT,
            l2_weight: bnn::DEFAULT_L2,
            warm_start: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialConfig {
    pub surface: SurfaceSpec,
    pub oracle: OracleKind,
    pub strategy: StrategyKind,
    /// Required for active learning, ignored otherwise.
    pub horizon: Option<HorizonSpec>,
    pub step_cells: usize,
    pub noise: bool,
    pub sample_budget: usize,
    pub seed: u64,
    pub seed_points: usize,
    /// Agent start for active learning; `None` is the grid minimum corner.
    pub start: Option<Point>,
    pub gp: GpSettings,
    pub bnn: BnnSettings,
    /// Replicate number within a campaign.
    pub trial: usize,
}

impl TrialConfig {
    /// Defaults: surface budget, 10 seed points, NN horizon for active
    /// learning, the surface's sublattice stride for science-blind paths.
    pub fn new(surface: SurfaceSpec, oracle: OracleKind, strategy: StrategyKind) -> Self {
        let (horizon, step_cells) = match strategy {
            StrategyKind::ActiveLearning => (Some(HorizonSpec::NEAREST_NEIGHBOR), 1),
            _ => (None, surface.sb_step),
        };
        Self {
            sample_budget: surface.default_budget,
            surface,
            oracle,
            strategy,
            horizon,
            step_cells,
            noise: false,
            seed: 0,
            seed_points: DEFAULT_SEED_POINTS,
            start: None,
            gp: GpSettings::default(),
            bnn: BnnSettings::default(),
            trial: 0,
        }
    }

    pub fn with_horizon(mut self, horizon: HorizonSpec) -> Self {
        self.horizon = Some(horizon);
        self
    }

    pub fn with_budget(mut self, budget: usize) -> Self {
        self.sample_budget = budget;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_noise(mut self, noise: bool) -> Self {
        self.noise = noise;
        self
    }

    pub fn horizon_label(&self) -> &'static str {
        match (self.strategy, self.horizon) {
            (StrategyKind::ActiveLearning, Some(h)) => h.label(),
            _ => "none",
        }
    }

    pub fn noise_label(&self) -> &'static str {
        if self.noise {
            "on"
        } else {
            "off"
        }
    }

    /// `<surface>_<oracle>_<strategy>_<horizon>_<noise>_<trial>`
    pub fn trial_id(&self) -> String {
        format!(
            "{}_{}_{}_{}_{}_{}",
            self.surface.name,
            self.oracle.label(),
            self.strategy.label(),
            self.horizon_label(),
            self.noise_label(),
            self.trial
        )
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        if self.seed_points == 0 {
            return bad("seed_points must be at least 1".into());
        }
        if self.sample_budget < self.seed_points {
            return bad(format!("sample budget {} is below the {} seed points", self.sample_budget, self.seed_points));
        }
        if self.step_cells == 0 {
            return bad("step_cells must be at least 1".into());
        }
        if self.strategy == StrategyKind::ActiveLearning {
            if self.horizon.is_none() {
                return bad("active learning needs a prediction horizon".into());
            }
            if self.step_cells != 1 {
                return bad(format!("active learning moves one cell per step, got step_cells = {}", self.step_cells));
            }
        }
        if !(self.surface.noise_variance.is_finite() && self.surface.noise_variance >= 0.0) {
            return bad(format!("noise variance {}", self.surface.noise_variance));
        }
        self.bnn.train.validate().map_err(|e| ExperimentError::Config(e.to_string()))?;
        if !(0.0..1.0).contains(&self.bnn.dropout_rate) {
            return bad(format!("dropout rate {} outside [0, 1)", self.bnn.dropout_rate));
        }
        Ok(())
    }
}

/// The five strategy rows of the benchmark matrix.
pub fn strategy_rows() -> [(StrategyKind, Option<HorizonSpec>); 5] {
    [
        (StrategyKind::Snake, None),
        (StrategyKind::Spiral, None),
        (StrategyKind::ActiveLearning, Some(HorizonSpec::NEAREST_NEIGHBOR)),
        (StrategyKind::ActiveLearning, Some(HorizonSpec::LOCAL)),
        (StrategyKind::ActiveLearning, Some(HorizonSpec::GLOBAL)),
    ]
}

/// Every combination of surface, noise setting, strategy row and oracle,
/// in that nesting order.
pub fn campaign_matrix(
    surfaces: &[SurfaceSpec],
    noise: &[bool],
    rows: &[(StrategyKind, Option<HorizonSpec>)],
    oracles: &[OracleKind],
) -> Vec<TrialConfig> {
    let mut out = Vec::new();
    for s in surfaces {
        for &n in noise {
            for &(strategy, horizon) in rows {
                for &oracle in oracles {
                    let mut cfg = TrialConfig::new(s.clone(), oracle, strategy).with_noise(n);
                    if let Some(h) = horizon {
                        cfg.horizon = Some(h);
                    }
                    out.push(cfg);
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FitClock {
    /// Wall-clock seconds around each fit.
    #[default]
    Wall,
    /// Always records 0, which makes traces byte-reproducible.
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TrialOptions {
    pub clock: FitClock,
}

/// One decision of the active-learning policy, as handed to observers.
#[derive(Debug)]
pub struct PolicyStep<'a> {
    pub position: CellIndex,
    pub candidates: &'a [CellIndex],
    pub posterior: &'a PosteriorField,
    pub target: CellIndex,
    pub next: CellIndex,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub config: TrialConfig,
    /// One record for the fit that closes seeding, then one per appended
    /// sample.
    pub trace: ErrorTrace,
    /// Every sampled position, seed walk included.
    pub trajectory: Trajectory,
    pub cells: Vec<CellIndex>,
    pub observations: Vec<f64>,
    /// Samples taken before the first fit.
    pub seed_count: usize,
    pub report: Option<ConvergenceReport>,
    pub total_fit_seconds: f64,
    /// Set when the trial stopped early on a numerical or policy failure.
    pub failure: Option<String>,
}

impl TrialResult {
    pub fn samples_taken(&self) -> usize {
        self.trajectory.len()
    }

    pub fn mean_fit_seconds(&self) -> f64 {
        if self.trace.is_empty() {
            0.0
        } else {
            self.total_fit_seconds / self.trace.len() as f64
        }
    }

    /// Trajectory index (0-based) of the sample that trace record `k`
    /// (0-based) was fit after.
    pub fn sample_of_record(&self, k: usize) -> usize {
        self.seed_count - 1 + k
    }
}

enum Oracle {
    Gp { iterations: usize, model: Option<GpModel> },
    Bnn { regressor: BnnRegressor, train: TrainConfig },
}

impl Oracle {
    fn new(cfg: &TrialConfig, bounds: GridSpec, rng: &mut ChaCha8Rng) -> Self {
        match cfg.oracle {
            OracleKind::Gp => Oracle::Gp { iterations: cfg.gp.iterations, model: None },
            OracleKind::Bnn => {
                let net = bnn::init_network_with(rng, cfg.bnn.dropout_rate, cfg.bnn.l2_weight);
                Oracle::Bnn { regressor: BnnRegressor::new(net, bounds, cfg.bnn.warm_start), train: cfg.bnn.train }
            }
        }
    }

    /// `unit` holds the training set with inputs already mapped to `[-1, 1]`.
    fn fit(&mut self, unit: &Dataset, physical: &Dataset, rng: &mut ChaCha8Rng) -> Result<(), String> {
        match self {
            Oracle::Gp { iterations, model } => {
                let init = KernelParams::initial_for(&unit.values());
                *model = Some(gp::fit(unit, init, *iterations).map_err(|e| format!("gp fit: {e}"))?);
            }
            Oracle::Bnn { regressor, train } => {
                regressor.fit(physical, train, rng).map_err(|e| format!("bnn fit: {e}"))?;
            }
        }
        Ok(())
    }

    fn predict(&self, unit_targets: &[Point], targets: &[Point], rng: &mut ChaCha8Rng) -> PosteriorField {
        match self {
            Oracle::Gp { model, .. } => model.as_ref().expect("predict after fit").predict(unit_targets),
            Oracle::Bnn { regressor, train } => regressor.predict(targets, train, rng),
        }
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

pub fn run_trial(cfg: &TrialConfig) -> Result<TrialResult, ExperimentError> {
    run_trial_with(cfg, TrialOptions::default(), &mut |_| {})
}

/// Runs one trial, calling `observer` at every active-learning decision.
pub fn run_trial_with(
    cfg: &TrialConfig,
    options: TrialOptions,
    observer: &mut dyn FnMut(&PolicyStep),
) -> Result<TrialResult, ExperimentError> {
    cfg.validate()?;
    let surface = cfg.surface.build(cfg.noise)?;
    let grid = surface.grid();
    let spec = *grid.spec();

    let mut noise_rng = stream(cfg.seed, NOISE_STREAM);
    let mut walk_rng = stream(cfg.seed, WALK_STREAM);
    let mut oracle_rng = stream(cfg.seed, ORACLE_STREAM);

    let start = match cfg.start {
        Some(p) => grid
            .cell_of(p)
            .filter(|&c| grid.is_reachable(c))
            .ok_or_else(|| ExperimentError::Config(format!("start ({}, {}) is not a reachable cell", p.x1, p.x2)))?,
        None => grid.reachable_cells().next().expect("surface has a reachable cell"),
    };
    let path = match cfg.strategy {
        StrategyKind::Snake => strategy::snake_path(grid, cfg.step_cells),
        StrategyKind::Spiral => strategy::spiral_path(grid, cfg.step_cells),
        StrategyKind::ActiveLearning => strategy::random_walk_seed(grid, start, cfg.seed_points, &mut walk_rng),
    };

    let targets: Vec<Point> = (0..spec.cell_count()).map(|c| spec.point(c)).collect();
    let unit_targets: Vec<Point> = targets.iter().map(|p| spec.to_unit(*p)).collect();
    let mut oracle = Oracle::new(cfg, spec, &mut oracle_rng);

    let mut cells = Vec::with_capacity(cfg.sample_budget);
    let mut observations = Vec::with_capacity(cfg.sample_budget);
    let mut physical = Dataset::new();
    let mut unit = Dataset::new();
    let mut take = |cell: CellIndex,
                    cells: &mut Vec<CellIndex>,
                    observations: &mut Vec<f64>,
                    physical: &mut Dataset,
                    unit: &mut Dataset|
     -> Result<(), ExperimentError> {
        let y = surface.observe_cell(cell, &mut noise_rng)?;
        let p = grid.point(cell);
        cells.push(cell);
        observations.push(y);
        physical.push(p, y);
        unit.push(spec.to_unit(p), y);
        Ok(())
    };

    for &cell in path.iter().take(cfg.seed_points.min(cfg.sample_budget)) {
        take(cell, &mut cells, &mut observations, &mut physical, &mut unit)?;
    }
    let seed_count = cells.len();

    let mut trace = ErrorTrace::default();
    let mut failure = None;
    let mut posterior = None;

    loop {
        let started = Instant::now();
        if let Err(e) = oracle.fit(&unit, &physical, &mut oracle_rng) {
            failure = Some(e);
            break;
        }
        let fit_seconds = match options.clock {
            FitClock::Wall => started.elapsed().as_secs_f64(),
            FitClock::Zero => 0.0,
        };
        let field = oracle.predict(&unit_targets, &targets, &mut oracle_rng);
        if grid.reachable_cells().any(|c| !field.means[c].is_finite() || !field.variances[c].is_finite()) {
            failure = Some("oracle produced a non-finite prediction".into());
            break;
        }
        let rms = metrics::rms_error(&field, &surface).expect("posterior covers the grid");
        let var = metrics::mean_variance(&field, &surface).expect("posterior covers the grid");
        trace.push(rms, var, fit_seconds, grid.point(*cells.last().unwrap()));
        let field = posterior.insert(field);

        if cells.len() >= cfg.sample_budget {
            break;
        }
        let next = match cfg.strategy {
            StrategyKind::ActiveLearning => {
                let here = *cells.last().unwrap();
                let horizon = cfg.horizon.expect("validated");
                let candidates = strategy::horizon_cells(grid, here, horizon);
                let step = strategy::select_target(field, &candidates)
                    .and_then(|target| strategy::next_step(grid, here, target).map(|next| (target, next)));
                match step {
                    Ok((target, next)) => {
                        observer(&PolicyStep { position: here, candidates: &candidates, posterior: field, target, next });
                        next
                    }
                    Err(e) => {
                        failure = Some(format!("policy: {e}"));
                        break;
                    }
                }
            }
            _ => match path.get(cells.len()) {
                Some(&c) => c,
                None => break,
            },
        };
        take(next, &mut cells, &mut observations, &mut physical, &mut unit)?;
    }

    let trajectory = Trajectory::from_cells(grid, &cells);
    let report = posterior
        .as_ref()
        .and_then(|p| ConvergenceReport::from_trace(&trace, &trajectory.waypoints, seed_count - 1, p, &surface).ok());
    Ok(TrialResult {
        config: cfg.clone(),
        total_fit_seconds: trace.total_fit_seconds(),
        trace,
        trajectory,
        cells,
        observations,
        seed_count,
        report,
        failure,
    })
}

/// Expands every config into `trials_each` replicates with seeds
/// `seed + trial` and runs them on at most `parallelism` threads. Results
/// come back ordered by (config, trial).
pub fn run_campaign(
    configs: &[TrialConfig],
    trials_each: usize,
    parallelism: usize,
) -> Result<Vec<TrialResult>, ExperimentError> {
    run_campaign_with(configs, trials_each, parallelism, TrialOptions::default())
}

pub fn run_campaign_with(
    configs: &[TrialConfig],
    trials_each: usize,
    parallelism: usize,
    options: TrialOptions,
) -> Result<Vec<TrialResult>, ExperimentError> {
    if trials_each == 0 {
        return Err(ExperimentError::Config("trials_each must be at least 1".into()));
    }
    for cfg in configs {
        cfg.validate()?;
    }
    let jobs: Vec<TrialConfig> = configs
        .iter()
        .flat_map(|c| {
            (0..trials_each).map(move |t| {
                let mut cfg = c.clone();
                cfg.seed = c.seed.wrapping_add(t as u64);
                cfg.trial = t;
                cfg
            })
        })
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| ExperimentError::Config(format!("thread pool: {e}")))?;
    pool.install(|| jobs.par_iter().map(|cfg| run_one(cfg, options)).collect())
}

fn run_one(cfg: &TrialConfig, options: TrialOptions) -> Result<TrialResult, ExperimentError> {
    match run_trial_with(cfg, options, &mut |_| {}) {
        Err(ExperimentError::Domain(e)) => Ok(TrialResult {
            config: cfg.clone(),
            trace: ErrorTrace::default(),
            trajectory: Trajectory::default(),
            cells: Vec::new(),
            observations: Vec::new(),
            seed_count: 0,
            report: None,
            total_fit_seconds: 0.0,
            failure: Some(e.to_string()),
        }),
        other => other,
    }
}
