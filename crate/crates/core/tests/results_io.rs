use std::fs;
use std::path::Path;

use trailscout::campaign::parse_campaign;
use trailscout::domain::GridSpec;
use trailscout::experiment::{
    campaign_matrix, run_campaign_with, strategy_rows, FitClock, OracleKind, SurfaceSource, SurfaceSpec, TrialConfig,
    TrialOptions, TrialResult,
};
use trailscout::results::{emit_plot_data, read_summary, summary_rows, write_results, ResultsRow};

fn small_surface() -> SurfaceSpec {
    let mut s = SurfaceSpec::parabola();
    s.source = SurfaceSource::Parabola(GridSpec::square(-1.0, 1.0, 0.25).unwrap());
    s
}

fn cheap(mut cfg: TrialConfig) -> TrialConfig {
    cfg.gp.iterations = 3;
    cfg.bnn.train.epochs = 10;
    cfg.bnn.train.mc_passes = 3;
    cfg.with_budget(16)
}

fn small_campaign() -> Vec<TrialResult> {
    let configs: Vec<TrialConfig> =
        campaign_matrix(&[small_surface()], &[false, true], &strategy_rows(), &[OracleKind::Gp, OracleKind::Bnn])
            .into_iter()
            .map(cheap)
            .collect();
    run_campaign_with(&configs, 2, 2, TrialOptions { clock: FitClock::Zero }).unwrap()
}

fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap()
}

#[test]
fn summary_traces_and_echo() {
    let results = small_campaign();
    let dir = tempfile::tempdir().unwrap();
    write_results(&results, dir.path()).unwrap();

    let rows = read_summary(&read(&dir.path().join("summary.csv"))).unwrap();
    assert_eq!(rows, summary_rows(&results));
    assert_eq!(rows.len(), results.len());
    let keys: Vec<_> = rows.iter().map(|r| (&r.surface, &r.oracle, &r.strategy, &r.horizon, &r.noise, r.trial)).collect();
    assert!(keys.windows(2).all(|w| w[0] < w[1]));

    for r in &results {
        let text = read(&dir.path().join(format!("trace_{}.csv", r.config.trial_id())));
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("sample_index,x1,x2,observed,rms,mean_variance,fit_seconds"));
        assert_eq!(lines.count(), r.samples_taken());
    }
    assert_eq!(read(&dir.path().join("campaign.echo")).lines().count(), results.len());
}

#[test]
fn output_is_byte_stable() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    write_results(&small_campaign(), a.path()).unwrap();
    write_results(&small_campaign(), b.path()).unwrap();
    let mut names: Vec<_> = fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() > 3);
    for name in names {
        assert_eq!(fs::read(a.path().join(&name)).unwrap(), fs::read(b.path().join(&name)).unwrap(), "{name:?}");
    }
}

#[test]
fn empty_results_give_header_only_summary() {
    let dir = tempfile::tempdir().unwrap();
    write_results(&[], dir.path()).unwrap();
    let text = read(&dir.path().join("summary.csv"));
    assert_eq!(text.lines().count(), 1);
    assert!(text.starts_with("surface,oracle,strategy,horizon,noise,trial,seed,samples_taken,e0,ef,e_c,i_c,d_c,e_min,"));
    assert!(emit_plot_data(&[], dir.path()).is_err());
}

#[test]
fn write_to_unwritable_path_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let err = write_results(&[], &blocker.join("sub")).unwrap_err();
    assert!(err.to_string().contains("file"));
}

fn row(surface: &str, strategy: &str, horizon: &str, noise: &str, trial: usize, d_c: f64) -> ResultsRow {
    ResultsRow {
        surface: surface.into(),
        oracle: "gp".into(),
        strategy: strategy.into(),
        horizon: horizon.into(),
        noise: noise.into(),
        trial,
        seed: trial as u64,
        samples_taken: 30,
        e0: Some(0.4),
        ef: Some(0.1),
        e_c: Some(0.106),
        i_c: Some(7),
        d_c: Some(d_c),
        e_min: Some(0.0),
        converged: Some(true),
        total_fit_seconds: 1.0,
        mean_fit_seconds: 0.05,
        failure: None,
    }
}

#[test]
fn plot_data_pools_and_splits() {
    let rows = vec![
        row("parabola", "snake", "none", "off", 0, 2.0),
        row("parabola", "spiral", "none", "on", 1, 4.0),
        row("parabola", "snake", "none", "on", 2, 6.0),
        row("parabola", "al", "global", "off", 0, 1.5),
    ];
    let dir = tempfile::tempdir().unwrap();
    let files = emit_plot_data(&rows, dir.path()).unwrap();
    assert_eq!(files.len(), 10);
    let pooled = read(&dir.path().join("plot_distance_to_convergence.csv"));
    let lines: Vec<&str> = pooled.lines().collect();
    assert_eq!(lines[0], "surface,label,oracle,mean,standard_deviation,n,degenerate");
    assert_eq!(lines[1], "parabola,SB,gp,4.0,2.0,3,false");
    assert_eq!(lines[2], "parabola,AL-Global,gp,1.5,0.0,1,true");
    let split = read(&dir.path().join("plot_distance_to_convergence_by_noise.csv"));
    assert!(split.lines().any(|l| l == "parabola,on,SB,gp,5.0,1.4142135623730951,2,false"));
}

#[test]
fn raster_campaign_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let raster = "ncols 6\nnrows 5\nxllcorner 100\nyllcorner 200\ncellsize 10\nNODATA_value -9999\n\
                  5 4 3 3 4 5\n4 3 2 2 3 4\n3 2 1 -9999 2 3\n4 3 2 2 3 4\n5 4 3 3 4 5\n";
    fs::write(dir.path().join("patch.asc"), raster).unwrap();
    let text = "surface = patch\noracle = gp\nstrategy = snake, al\nhorizon = local\ntrials_each = 1\n\
                gp_iterations = 2\n\n[surface patch]\nkind = raster\npath = patch.asc\nbudget = 18\nsb_step = 1\n";
    let campaign = parse_campaign(text, dir.path()).unwrap();
    assert_eq!(campaign.configs.len(), 2);
    let results = run_campaign_with(&campaign.configs, 1, 1, TrialOptions::default()).unwrap();
    let nodata = trailscout::domain::Point::new(130.0, 220.0);
    for r in &results {
        assert!(r.failure.is_none(), "{:?}", r.failure);
        assert_eq!(r.samples_taken(), 18);
        assert!(r.trajectory.waypoints.iter().all(|p| *p != nodata));
    }
    let out = dir.path().join("out");
    write_results(&results, &out).unwrap();
    assert!(read(&out.join("campaign.echo")).contains("kind=raster"));
    let missing = "surface = patch\n[surface patch]\nkind = raster\npath = nowhere.asc\nbudget = 12\n";
    assert!(parse_campaign(missing, dir.path()).unwrap_err().to_string().contains("nowhere.asc"));
}
