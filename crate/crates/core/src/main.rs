use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use trailscout::campaign::parse_campaign;
use trailscout::domain::Raster;
use trailscout::experiment::{run_campaign, run_trial, OracleKind, StrategyKind, SurfaceSpec, TrialConfig};
use trailscout::results::{emit_plot_data, read_summary, summary_rows, write_results};
use trailscout::strategy::HorizonSpec;

#[derive(Parser)]
#[command(name = "trailscout", version, about = "Constrained active-learning exploration of 2-D surfaces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every trial of a campaign file and write results plus plot data.
    Run {
        campaign: PathBuf,
        /// Overrides the campaign's `output` directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the campaign's `parallelism`.
        #[arg(long)]
        parallelism: Option<usize>,
    },
    /// Run a single trial.
    Trial(TrialArgs),
    /// Regenerate plot data from an existing results directory.
    Plots { results_dir: PathBuf },
    /// Parse a campaign file and report its size without running it.
    Validate { campaign: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum OracleArg {
    Gp,
    Bnn,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Snake,
    Spiral,
    Al,
}

#[derive(Clone, Copy, ValueEnum)]
enum HorizonArg {
    Nn,
    Local,
    Global,
}

#[derive(Clone, Copy, ValueEnum)]
enum NoiseArg {
    Off,
    On,
}

#[derive(clap::Args)]
struct TrialArgs {
    /// `parabola`, `townsend`, or a path to an ASCII raster.
    #[arg(long)]
    surface: String,
    #[arg(long, value_enum, default_value = "gp")]
    oracle: OracleArg,
    #[arg(long, value_enum, default_value = "al")]
    strategy: StrategyArg,
    #[arg(long, value_enum, default_value = "nn")]
    horizon: HorizonArg,
    #[arg(long, value_enum, default_value = "off")]
    noise: NoiseArg,
    /// Defaults to the surface's budget (219 for the analytic surfaces).
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "results")]
    out: PathBuf,
    #[arg(long)]
    gp_iterations: Option<usize>,
    #[arg(long)]
    bnn_epochs: Option<usize>,
    #[arg(long)]
    mc_passes: Option<usize>,
}

fn surface_arg(name: &str) -> Result<SurfaceSpec, String> {
    match name {
        "parabola" => Ok(SurfaceSpec::parabola()),
        "townsend" => Ok(SurfaceSpec::townsend()),
        path => {
            let text = fs::read_to_string(path).map_err(|e| format!("{path}: {e}"))?;
            let raster: Raster = text.parse().map_err(|e| format!("{path}: {e}"))?;
            let budget = raster.values.iter().filter(|v| **v != raster.nodata).count() / 2;
            let stem = Path::new(path).file_stem().and_then(|s| s.to_str()).unwrap_or("raster");
            Ok(SurfaceSpec::raster(stem, raster, budget.max(10), 2))
        }
    }
}

fn trial(args: TrialArgs) -> Result<(), String> {
    let oracle = match args.oracle {
        OracleArg::Gp => OracleKind::Gp,
        OracleArg::Bnn => OracleKind::Bnn,
    };
    let strategy = match args.strategy {
        StrategyArg::Snake => StrategyKind::Snake,
        StrategyArg::Spiral => StrategyKind::Spiral,
        StrategyArg::Al => StrategyKind::ActiveLearning,
    };
    let mut cfg = TrialConfig::new(surface_arg(&args.surface)?, oracle, strategy)
        .with_seed(args.seed)
        .with_noise(matches!(args.noise, NoiseArg::On));
    if strategy == StrategyKind::ActiveLearning {
        cfg.horizon = Some(match args.horizon {
            HorizonArg::Nn => HorizonSpec::NEAREST_NEIGHBOR,
            HorizonArg::Local => HorizonSpec::LOCAL,
            HorizonArg::Global => HorizonSpec::GLOBAL,
        });
    }
    if let Some(b) = args.budget {
        cfg.sample_budget = b;
    }
    if let Some(v) = args.gp_iterations {
        cfg.gp.iterations = v;
    }
    if let Some(v) = args.bnn_epochs {
        cfg.bnn.train.epochs = v;
    }
    if let Some(v) = args.mc_passes {
        cfg.bnn.train.mc_passes = v;
    }
    let result = run_trial(&cfg).map_err(|e| e.to_string())?;
    write_results(std::slice::from_ref(&result), &args.out).map_err(|e| e.to_string())?;
    let rows = summary_rows(std::slice::from_ref(&result));
    emit_plot_data(&rows, &args.out).map_err(|e| e.to_string())?;
    report(&rows);
    if let Some(f) = &result.failure {
        eprintln!("warning: trial stopped early: {f}");
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

fn report(rows: &[trailscout::results::ResultsRow]) {
    for r in rows {
        let show = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        println!(
            "{} {} {} {} noise={} trial={} samples={} ef={} e_min={} i_c={} fit={:.3}s{}",
            r.surface,
            r.oracle,
            r.strategy,
            r.horizon,
            r.noise,
            r.trial,
            r.samples_taken,
            show(r.ef),
            show(r.e_min),
            r.i_c.map_or("-".to_string(), |v| v.to_string()),
            r.total_fit_seconds,
            if r.failure.is_some() { " FAILED" } else { "" }
        );
    }
}

fn load_campaign(path: &Path) -> Result<trailscout::campaign::Campaign, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_campaign(&text, base).map_err(|e| format!("{}: {e}", path.display()))
}

fn run(path: &Path, out: Option<PathBuf>, parallelism: Option<usize>) -> Result<(), String> {
    let campaign = load_campaign(path)?;
    let out = out.unwrap_or_else(|| {
        let base = path.parent().unwrap_or(Path::new("."));
        base.join(&campaign.output)
    });
    let parallelism = parallelism.unwrap_or(campaign.parallelism);
    let results = run_campaign(&campaign.configs, campaign.trials_each, parallelism).map_err(|e| e.to_string())?;
    write_results(&results, &out).map_err(|e| e.to_string())?;
    let rows = summary_rows(&results);
    if !rows.is_empty() {
        emit_plot_data(&rows, &out).map_err(|e| e.to_string())?;
    }
    report(&rows);
    println!("wrote {} trials to {}", rows.len(), out.display());
    Ok(())
}

fn plots(dir: &Path) -> Result<(), String> {
    let path = dir.join("summary.csv");
    let text = fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let rows = read_summary(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    let files = emit_plot_data(&rows, dir).map_err(|e| e.to_string())?;
    println!("wrote {} plot files to {}", files.len(), dir.display());
    Ok(())
}

fn validate(path: &Path) -> Result<(), String> {
    let c = load_campaign(path)?;
    println!(
        "{}: {} configs x {} trials = {} trials, parallelism {}, output {}",
        path.display(),
        c.configs.len(),
        c.trials_each,
        c.configs.len() * c.trials_each,
        c.parallelism,
        c.output.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run { campaign, out, parallelism } => run(&campaign, out, parallelism),
        Command::Trial(args) => trial(args),
        Command::Plots { results_dir } => plots(&results_dir),
        Command::Validate { campaign } => validate(&campaign),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
