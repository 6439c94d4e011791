//! Campaign files: a line-oriented `key = value` format with `#` comments
//! and `[surface NAME]` sections.
//!
//! ```text
//! surface  = parabola, townsend, lunar3
//! oracle   = gp, bnn
//! strategy = snake, spiral, al
//! horizon  = nn, local, global
//! noise    = off, on
//!
//! [surface lunar3]
//! kind = lunar3
//! path = dem_3km.asc
//! ```
//!
//! Top-level keys, all optional except `surface`:
//! `surface`, `oracle`, `strategy`, `horizon`, `noise`, `budget`,
//! `seed_points`, `trials_each`, `seed`, `parallelism`, `output`, `start`,
//! `gp_iterations`, `bnn_epochs`, `bnn_learning_rate`, `bnn_mc_passes`,
//! `bnn_dropout`, `bnn_l2`, `bnn_warm_start`, `bnn_optimizer`.
//!
//! Section keys: `kind` (`parabola`, `townsend`, `raster`, `lunar3`,
//! `lunar6`), `path`, `x1`, `x2` (`min:step:max`), `noise_variance`,
//! `budget`, `sb_step`. The names `parabola` and `townsend` are predefined
//! and may be used without a section.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::bnn::Optimizer;
use crate::domain::{GridSpec, Point, Raster};
use crate::experiment::{
    campaign_matrix, strategy_rows, ExperimentError, OracleKind, StrategyKind, SurfaceSource, SurfaceSpec,
    TrialConfig, DEFAULT_TRIALS_EACH,
};
use crate::strategy::{HorizonKind, HorizonSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CampaignError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key `{key}`")]
    DuplicateKey { line: usize, key: String },
    #[error("line {line}: invalid value for `{key}`: {message}")]
    Value { line: usize, key: String, message: String },
    #[error("surface `{name}`: inconsistent grid: {message}")]
    Grid { name: String, message: String },
    #[error("surface `{name}`: cannot load raster {path}: {message}")]
    Raster { name: String, path: String, message: String },
    #[error("unknown surface `{0}`")]
    UnknownSurface(String),
    #[error("surface section `{0}` is never used")]
    UnusedSurface(String),
    #[error("missing required key `{0}`")]
    Missing(String),
    #[error(transparent)]
    Config(#[from] ExperimentError),
}

/// A fully resolved campaign.
#[derive(Debug, Clone, PartialEq)]
pub struct Campaign {
    pub configs: Vec<TrialConfig>,
    pub trials_each: usize,
    pub parallelism: usize,
    pub output: PathBuf,
}

const TOP_KEYS: &[&str] = &[
    "surface",
    "oracle",
    "strategy",
    "horizon",
    "noise",
    "budget",
    "seed_points",
    "trials_each",
    "seed",
    "parallelism",
    "output",
    "start",
    "gp_iterations",
    "bnn_epochs",
    "bnn_learning_rate",
    "bnn_mc_passes",
    "bnn_dropout",
    "bnn_l2",
    "bnn_warm_start",
    "bnn_optimizer",
];

const SECTION_KEYS: &[&str] = &["kind", "path", "x1", "x2", "noise_variance", "budget", "sb_step"];

#[derive(Debug, Clone)]
struct Entry {
    line: usize,
    value: String,
}

type Table = BTreeMap<String, Entry>;

struct Document {
    top: Table,
    sections: Vec<(String, usize, Table)>,
}

fn syntax(line: usize, message: impl Into<String>) -> CampaignError {
    CampaignError::Syntax { line, message: message.into() }
}

fn tokenize(text: &str) -> Result<Document, CampaignError> {
    let mut doc = Document { top: Table::new(), sections: Vec::new() };
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(header) = content.strip_prefix('[') {
            let inner = header.strip_suffix(']').ok_or_else(|| syntax(line, "unterminated section header"))?;
            let mut words = inner.split_whitespace();
            match (words.next(), words.next(), words.next()) {
                (Some("surface"), Some(name), None) if valid_name(name) => {
                    if doc.sections.iter().any(|(n, _, _)| n == name) {
                        return Err(syntax(line, format!("surface section `{name}` defined twice")));
                    }
                    doc.sections.push((name.to_string(), line, Table::new()));
                }
                _ => return Err(syntax(line, "expected `[surface NAME]`")),
            }
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| syntax(line, "expected `key = value`"))?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || !valid_name(key) {
            return Err(syntax(line, format!("malformed key `{key}`")));
        }
        let (table, allowed) = match doc.sections.last_mut() {
            Some((_, _, t)) => (t, SECTION_KEYS),
            None => (&mut doc.top, TOP_KEYS),
        };
        if !allowed.contains(&key) {
            return Err(CampaignError::UnknownKey { line, key: key.into() });
        }
        if table.contains_key(key) {
            return Err(CampaignError::DuplicateKey { line, key: key.into() });
        }
        table.insert(key.into(), Entry { line, value: value.into() });
    }
    Ok(doc)
}

fn valid_name(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

fn value_err(key: &str, e: &Entry, message: impl Into<String>) -> CampaignError {
    CampaignError::Value { line: e.line, key: key.into(), message: message.into() }
}

fn list<'a>(e: &'a Entry) -> Vec<&'a str> {
    e.value.split(',').map(str::trim).filter(|s| !s.is_empty()).collect()
}

fn get<T: std::str::FromStr>(table: &Table, key: &str) -> Result<Option<T>, CampaignError>
where
    T::Err: std::fmt::Display,
{
    match table.get(key) {
        None => Ok(None),
        Some(e) => e.value.parse::<T>().map(Some).map_err(|err| value_err(key, e, err.to_string())),
    }
}

fn get_finite(table: &Table, key: &str) -> Result<Option<f64>, CampaignError> {
    match get::<f64>(table, key)? {
        Some(v) if !v.is_finite() => Err(value_err(key, &table[key], "must be finite")),
        other => Ok(other),
    }
}

fn get_bool(table: &Table, key: &str) -> Result<Option<bool>, CampaignError> {
    match table.get(key) {
        None => Ok(None),
        Some(e) => match e.value.to_ascii_lowercase().as_str() {
            "true" | "on" | "yes" => Ok(Some(true)),
            "false" | "off" | "no" => Ok(Some(false)),
            _ => Err(value_err(key, e, "expected on/off")),
        },
    }
}

/// `min:step:max`
fn get_range(table: &Table, key: &str) -> Result<Option<(f64, f64, f64)>, CampaignError> {
    let Some(e) = table.get(key) else { return Ok(None) };
    let parts: Vec<&str> = e.value.split(':').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(value_err(key, e, "expected min:step:max"));
    }
    let mut v = [0.0; 3];
    for (slot, p) in v.iter_mut().zip(&parts) {
        *slot = p.parse::<f64>().map_err(|err| value_err(key, e, err.to_string()))?;
        if !slot.is_finite() {
            return Err(value_err(key, e, "must be finite"));
        }
    }
    Ok(Some((v[0], v[1], v[2])))
}

fn parse_list<T>(
    table: &Table,
    key: &str,
    default: Vec<T>,
    item: impl Fn(&str) -> Option<T>,
) -> Result<Vec<T>, CampaignError> {
    let Some(e) = table.get(key) else { return Ok(default) };
    let mut out = Vec::new();
    for word in list(e) {
        let v = item(&word.to_ascii_lowercase()).ok_or_else(|| value_err(key, e, format!("unknown value `{word}`")))?;
        out.push(v);
    }
    if out.is_empty() {
        return Err(value_err(key, e, "empty list"));
    }
    Ok(out)
}

fn has_duplicates<T: PartialEq>(v: &[T]) -> bool {
    v.iter().enumerate().any(|(i, x)| v[..i].contains(x))
}

fn grid_from(name: &str, table: &Table, default: GridSpec) -> Result<GridSpec, CampaignError> {
    let x1 = get_range(table, "x1")?.unwrap_or((default.x1_min, default.step, default.x1_max));
    let x2 = get_range(table, "x2")?.unwrap_or((default.x2_min, default.step, default.x2_max));
    if x1.1 != x2.1 {
        return Err(CampaignError::Grid {
            name: name.into(),
            message: format!("x1 step {} differs from x2 step {}", x1.1, x2.1),
        });
    }
    GridSpec::new(x1.0, x1.2, x2.0, x2.2, x1.1)
        .map_err(|e| CampaignError::Grid { name: name.into(), message: e.to_string() })
}

fn surface_from_section(
    name: &str,
    line: usize,
    table: &Table,
    load: &dyn Fn(&Path) -> Result<Raster, String>,
) -> Result<SurfaceSpec, CampaignError> {
    let kind_entry = table.get("kind").ok_or_else(|| syntax(line, format!("surface `{name}` needs a `kind`")))?;
    let kind = kind_entry.value.to_ascii_lowercase();
    let mut spec = match kind.as_str() {
        "parabola" | "townsend" => {
            if table.contains_key("path") {
                return Err(value_err("path", &table["path"], "analytic surfaces take no raster"));
            }
            let mut s = if kind == "parabola" { SurfaceSpec::parabola() } else { SurfaceSpec::townsend() };
            let default = match s.source {
                SurfaceSource::Parabola(g) | SurfaceSource::Townsend(g) => g,
                SurfaceSource::Raster(_) => unreachable!(),
            };
            let g = grid_from(name, table, default)?;
            s.source = if kind == "parabola" { SurfaceSource::Parabola(g) } else { SurfaceSource::Townsend(g) };
            s
        }
        "raster" | "lunar3" | "lunar6" => {
            for k in ["x1", "x2"] {
                if let Some(e) = table.get(k) {
                    return Err(value_err(k, e, "raster grids come from the raster header"));
                }
            }
            let path_entry = table.get("path").ok_or_else(|| CampaignError::Missing(format!("[surface {name}] path")))?;
            let path = PathBuf::from(&path_entry.value);
            let raster = load(&path).map_err(|message| CampaignError::Raster {
                name: name.into(),
                path: path.display().to_string(),
                message,
            })?;
            match kind.as_str() {
                "lunar3" => SurfaceSpec::lunar3(raster),
                "lunar6" => SurfaceSpec::lunar6(raster),
                _ => {
                    let budget = get::<usize>(table, "budget")?
                        .ok_or_else(|| CampaignError::Missing(format!("[surface {name}] budget")))?;
                    SurfaceSpec::raster(name, raster, budget, 2)
                }
            }
        }
        _ => return Err(value_err("kind", kind_entry, format!("unknown surface kind `{kind}`"))),
    };
    spec.name = name.to_string();
    if let Some(v) = get_finite(table, "noise_variance")? {
        if v < 0.0 {
            return Err(value_err("noise_variance", &table["noise_variance"], "must be non-negative"));
        }
        spec.noise_variance = v;
    }
    if let Some(b) = get::<usize>(table, "budget")? {
        spec.default_budget = b;
    }
    if let Some(s) = get::<usize>(table, "sb_step")? {
        if s == 0 {
            return Err(value_err("sb_step", &table["sb_step"], "must be at least 1"));
        }
        spec.sb_step = s;
    }
    Ok(spec)
}

/// Parses a campaign, resolving raster paths against `base_dir`.
pub fn parse_campaign(text: &str, base_dir: &Path) -> Result<Campaign, CampaignError> {
    parse_campaign_with(text, &|p: &Path| {
        let full = base_dir.join(p);
        let body = std::fs::read_to_string(&full).map_err(|e| e.to_string())?;
        body.parse::<Raster>().map_err(|e| e.to_string())
    })
}

/// Parses a campaign, obtaining rasters through `load`.
pub fn parse_campaign_with(
    text: &str,
    load: &dyn Fn(&Path) -> Result<Raster, String>,
) -> Result<Campaign, CampaignError> {
    let doc = tokenize(text)?;
    let top = &doc.top;

    let mut defined: BTreeMap<String, SurfaceSpec> = BTreeMap::new();
    for (name, line, table) in &doc.sections {
        defined.insert(name.clone(), surface_from_section(name, *line, table, load)?);
    }
    let surface_entry = top.get("surface").ok_or_else(|| CampaignError::Missing("surface".into()))?;
    let mut surfaces = Vec::new();
    for name in list(surface_entry) {
        let spec = match (defined.get(name), name) {
            (Some(s), _) => s.clone(),
            (None, "parabola") => SurfaceSpec::parabola(),
            (None, "townsend") => SurfaceSpec::townsend(),
            _ => return Err(CampaignError::UnknownSurface(name.into())),
        };
        if surfaces.iter().any(|s: &SurfaceSpec| s.name == spec.name) {
            return Err(value_err("surface", surface_entry, format!("`{name}` listed twice")));
        }
        surfaces.push(spec);
    }
    if surfaces.is_empty() {
        return Err(value_err("surface", surface_entry, "empty list"));
    }
    if let Some((name, _, _)) = doc.sections.iter().find(|(n, _, _)| !surfaces.iter().any(|s| &s.name == n)) {
        return Err(CampaignError::UnusedSurface(name.clone()));
    }

    let oracles = parse_list(top, "oracle", vec![OracleKind::Gp, OracleKind::Bnn], |w| match w {
        "gp" => Some(OracleKind::Gp),
        "bnn" => Some(OracleKind::Bnn),
        _ => None,
    })?;
    let strategies = parse_list(
        top,
        "strategy",
        vec![StrategyKind::Snake, StrategyKind::Spiral, StrategyKind::ActiveLearning],
        |w| match w {
            "snake" => Some(StrategyKind::Snake),
            "spiral" => Some(StrategyKind::Spiral),
            "al" => Some(StrategyKind::ActiveLearning),
            _ => None,
        },
    )?;
    let horizons = parse_list(
        top,
        "horizon",
        vec![HorizonKind::NearestNeighbor, HorizonKind::Local, HorizonKind::Global],
        |w| match w {
            "nn" => Some(HorizonKind::NearestNeighbor),
            "local" => Some(HorizonKind::Local),
            "global" => Some(HorizonKind::Global),
            _ => None,
        },
    )?;
    let noise = parse_list(top, "noise", vec![false], |w| match w {
        "off" => Some(false),
        "on" => Some(true),
        _ => None,
    })?;
    let rows: Vec<(StrategyKind, Option<HorizonSpec>)> = strategy_rows()
        .into_iter()
        .filter(|(s, h)| strategies.contains(s) && h.is_none_or(|h| horizons.contains(&h.kind)))
        .collect();
    if has_duplicates(&noise) {
        return Err(value_err("noise", &top["noise"], "value listed twice"));
    }
    if has_duplicates(&oracles) {
        return Err(value_err("oracle", &top["oracle"], "value listed twice"));
    }

    let mut configs = campaign_matrix(&surfaces, &noise, &rows, &oracles);
    let budget = get::<usize>(top, "budget")?;
    let seed_points = get::<usize>(top, "seed_points")?;
    let seed = get::<u64>(top, "seed")?.unwrap_or(0);
    let start = match top.get("start") {
        None => None,
        Some(e) => {
            let parts: Vec<&str> = e.value.split(',').map(str::trim).collect();
            let coords: Option<Vec<f64>> = parts.iter().map(|p| p.parse::<f64>().ok().filter(|v| v.is_finite())).collect();
            match coords.as_deref() {
                Some([a, b]) => Some(Point::new(*a, *b)),
                _ => return Err(value_err("start", e, "expected `x1, x2`")),
            }
        }
    };
    let gp_iterations = get::<usize>(top, "gp_iterations")?;
    let epochs = get::<usize>(top, "bnn_epochs")?;
    let lr = get_finite(top, "bnn_learning_rate")?;
    let mc = get::<usize>(top, "bnn_mc_passes")?;
    let dropout = get_finite(top, "bnn_dropout")?;
    let l2 = get_finite(top, "bnn_l2")?;
    let warm = get_bool(top, "bnn_warm_start")?;
    let optimizer = match top.get("bnn_optimizer") {
        None => None,
        Some(e) => match e.value.to_ascii_lowercase().as_str() {
            "adam" => Some(Optimizer::default()),
            "sgd" => Some(Optimizer::GradientDescent),
            _ => return Err(value_err("bnn_optimizer", e, "expected adam or sgd")),
        },
    };
    let section_budget: BTreeMap<&str, bool> =
        doc.sections.iter().map(|(n, _, t)| (n.as_str(), t.contains_key("budget"))).collect();

    for cfg in &mut configs {
        if let Some(b) = budget {
            if !section_budget.get(cfg.surface.name.as_str()).copied().unwrap_or(false) {
                cfg.sample_budget = b;
            }
        }
        if let Some(n) = seed_points {
            cfg.seed_points = n;
        }
        cfg.seed = seed;
        cfg.start = start;
        if let Some(it) = gp_iterations {
            cfg.gp.iterations = it;
        }
        if let Some(v) = epochs {
            cfg.bnn.train.epochs = v;
        }
        if let Some(v) = lr {
            cfg.bnn.train.learning_rate = v;
        }
        if let Some(v) = mc {
            cfg.bnn.train.mc_passes = v;
        }
        if let Some(v) = optimizer {
            cfg.bnn.train.optimizer = v;
        }
        if let Some(v) = dropout {
            cfg.bnn.dropout_rate = v;
        }
        if let Some(v) = l2 {
            cfg.bnn.l2_weight = v;
        }
        if let Some(v) = warm {
            cfg.bnn.warm_start = v;
        }
        cfg.validate()?;
    }

    let trials_each = get::<usize>(top, "trials_each")?.unwrap_or(DEFAULT_TRIALS_EACH);
    if trials_each == 0 {
        return Err(value_err("trials_each", &top["trials_each"], "must be at least 1"));
    }
    let parallelism = get::<usize>(top, "parallelism")?.unwrap_or(1).max(1);
    let output = top.get("output").map(|e| PathBuf::from(&e.value)).unwrap_or_else(|| PathBuf::from("results"));
    Ok(Campaign { configs, trials_each, parallelism, output })
}
