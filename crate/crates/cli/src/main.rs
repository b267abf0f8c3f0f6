//! `fluxtomo`: simulate, fit and invert single-spin traces of spin chains.
//!
//! Exit codes: 0 success, 1 bad input (config, files, arguments), 2 runtime
//! failure or a flagged result without `--allow-flagged`.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fluxtomo::config::{config_hash, load_config};
use fluxtomo::export;
use fluxtomo::fit::{fit_cosines, FitOptions};
use fluxtomo::hilbert::{protocol_series, SampleSeries, SeriesMeta};
use fluxtomo::model::{Basis, SamplingPlan, Shots, ValidatedConfig};
use fluxtomo::pipeline::{
    self, batch_random, combine_passes, fit_seed, invert_fit, pass_is_flagged, run_tomography,
    EstimationResult, PipelineOptions, SweepDimension,
};
use fluxtomo::Error;

#[derive(Parser)]
#[command(
    name = "fluxtomo",
    version,
    about = "Hamiltonian tomography of spin chains from one spin"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Experiment document (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Override `sampling.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Exit 0 even when a fit or reconstruction is flagged.
    #[arg(long, global = true)]
    allow_flagged: bool,
    #[arg(long, short, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the measured series of the configured chain.
    Simulate,
    /// Fit cosines to a series CSV.
    Fit {
        #[arg(long)]
        series: PathBuf,
        /// Chain length; taken from `--config` or the series sidecar if omitted.
        #[arg(long)]
        sites: Option<usize>,
        /// Fit a damped trial function. Defaults to the sidecar's noise flag.
        #[arg(long)]
        damped: Option<bool>,
    },
    /// Reconstruct couplings from fit JSON files.
    Invert {
        /// One fit for an XX chain; X then Y fits for an XY chain.
        #[arg(long, required = true, num_args = 1..=2)]
        fit: Vec<PathBuf>,
        /// Series the fits came from, in the same order; enables refinement.
        #[arg(long, num_args = 1..=2)]
        series: Vec<PathBuf>,
        #[arg(long)]
        sites: Option<usize>,
    },
    /// Simulate, fit and invert; writes a full report bundle.
    Run,
    /// Random XX chains of the configured length.
    Batch {
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 0.5)]
        min: f64,
        #[arg(long, default_value_t = 1.5)]
        max: f64,
    },
    /// Error statistics versus one parameter.
    Sweep {
        /// n_meas, gamma, big_gamma or spurious.
        #[arg(long)]
        dimension: String,
        /// Comma-separated values; 0 means exact for n_meas.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long, default_value_t = 10)]
        repeats: usize,
    },
}

enum Failure {
    Input(String),
    Runtime(String),
    Flagged(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Validation(_)
            | Error::Parse(_)
            | Error::Io(_)
            | Error::Json(_)
            | Error::FitInput(_) => Failure::Input(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

type Outcome = Result<(), Failure>;

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn load(g: &Global) -> Result<ValidatedConfig, Failure> {
    let path = g
        .config
        .as_ref()
        .ok_or_else(|| Failure::Input("--config is required for this command".into()))?;
    let cfg = load_config(&read(path)?)
        .map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    match g.seed {
        Some(seed) => Ok(cfg.with_plan(SamplingPlan {
            seed,
            ..*cfg.plan()
        })?),
        None => Ok(cfg),
    }
}

fn maybe_load(g: &Global) -> Result<Option<ValidatedConfig>, Failure> {
    g.config.as_ref().map(|_| load(g)).transpose()
}

fn say(g: &Global, msg: impl AsRef<str>) {
    if !g.quiet {
        println!("{}", msg.as_ref());
    }
}

fn check_flagged(g: &Global, flagged: bool, what: &str) -> Outcome {
    if flagged && !g.allow_flagged {
        Err(Failure::Flagged(format!(
            "{what} is flagged; rerun with --allow-flagged to accept it"
        )))
    } else {
        Ok(())
    }
}

/// Bases the pipeline measures for this chain.
fn bases(cfg: &ValidatedConfig) -> &'static [Basis] {
    if cfg.spec().is_xy() {
        &[Basis::X, Basis::Y]
    } else {
        &[Basis::X]
    }
}

fn simulate(g: &Global) -> Outcome {
    let cfg = load(g)?;
    let hash = config_hash(&cfg)?;
    fs::create_dir_all(&g.out).map_err(Error::from)?;
    for &basis in bases(&cfg) {
        let plan = SamplingPlan {
            basis,
            ..*cfg.plan()
        };
        let mut series = protocol_series(cfg.spec(), cfg.noise(), &plan)?;
        series.meta.config_hash = Some(hash.clone());
        let files = export::write_series(&g.out, &format!("series_{}", basis.as_str()), &series)?;
        say(g, format!("wrote {}", files[0].display()));
    }
    Ok(())
}

/// Series CSV plus its `.json` sidecar when present.
fn load_series(
    path: &Path,
    fallback: impl FnOnce() -> Option<SeriesMeta>,
) -> Result<SampleSeries, Failure> {
    let text = read(path)?;
    let sidecar = path.with_extension("json");
    let meta = if sidecar.exists() {
        serde_json::from_str(&read(&sidecar)?)
            .map_err(|e| Failure::Input(format!("{}: {e}", sidecar.display())))?
    } else {
        fallback().ok_or_else(|| {
            Failure::Input(format!(
                "{}: no meta sidecar; pass --sites or --config",
                path.display()
            ))
        })?
    };
    Ok(export::parse_series_csv(&text, meta)?)
}

fn bare_meta(n_sites: usize, seed: u64) -> SeriesMeta {
    SeriesMeta {
        n_sites,
        basis: Basis::X,
        n_meas: Shots::Exact,
        runs: 1,
        seed,
        noise_active: false,
        config_hash: None,
    }
}

fn fit(g: &Global, series_path: &Path, sites: Option<usize>, damped: Option<bool>) -> Outcome {
    let cfg = maybe_load(g)?;
    let n_hint = sites.or(cfg.as_ref().map(|c| c.spec().n_sites()));
    let mut series = load_series(series_path, || {
        n_hint.map(|n| bare_meta(n, g.seed.unwrap_or(0)))
    })?;
    if let Some(seed) = g.seed {
        series.meta.seed = seed;
    }
    let n = n_hint.unwrap_or(series.meta.n_sites);
    if n < 2 {
        return Err(Failure::Input(format!(
            "chain needs at least 2 sites, got {n}"
        )));
    }
    let damped = damped.unwrap_or(series.meta.noise_active);
    let mut opts = FitOptions::for_chain(n, damped);
    opts.seed = fit_seed(series.meta.seed, series.meta.basis);
    let result = fit_cosines(&series, &opts)?;
    fs::create_dir_all(&g.out).map_err(Error::from)?;
    let path = export::write_file(
        &g.out,
        &format!("fit_{}.json", series.meta.basis.as_str()),
        &export::fit_json(&result)?,
    )?;
    say(g, format!("wrote {}", path.display()));
    for m in &result.modes {
        say(
            g,
            format!("  A = {:.6}  omega = {:.6}", m.amplitude, m.omega),
        );
    }
    check_flagged(g, result.is_flagged(), "fit")
}

fn invert(g: &Global, fits: &[PathBuf], series: &[PathBuf], sites: Option<usize>) -> Outcome {
    let cfg = maybe_load(g)?;
    if !series.is_empty() && series.len() != fits.len() {
        return Err(Failure::Input("give one --series per --fit".into()));
    }
    let n = sites
        .or(cfg.as_ref().map(|c| c.spec().n_sites()))
        .ok_or_else(|| Failure::Input("pass --sites or --config".into()))?;
    let defaults = PipelineOptions::default();
    let mut passes = Vec::with_capacity(fits.len());
    for (i, path) in fits.iter().enumerate() {
        let fit = export::parse_fit_json(&read(path)?)?;
        let (series, steps) = match series.get(i) {
            Some(p) => {
                let s = load_series(p, || Some(bare_meta(n, 0)))?;
                let steps = defaults.steps(s.meta.noise_active, s.meta.n_meas.is_exact());
                (s, steps)
            }
            None => {
                let mut meta = bare_meta(n, 0);
                meta.basis = if i == 0 { Basis::X } else { Basis::Y };
                let empty = SampleSeries {
                    times: vec![],
                    values: vec![],
                    std_errors: vec![],
                    meta,
                };
                (empty, defaults.steps(false, true))
            }
        };
        passes.push(invert_fit(series, fit, n, steps));
    }
    let hat = combine_passes(&passes).ok_or_else(|| {
        Failure::Runtime(format!(
            "reconstruction failed: {}",
            passes
                .iter()
                .flat_map(|p| p.issues.clone())
                .collect::<Vec<_>>()
                .join("; ")
        ))
    })?;
    let (labels, truth) = match &cfg {
        Some(c) => {
            let (l, t) = pipeline::truth(c.spec());
            (l, (t.len() == hat.len()).then_some(t))
        }
        None if passes.len() == 2 => {
            let half = hat.len() / 2;
            let mut l: Vec<String> = (1..=half).map(|i| format!("X{i}")).collect();
            l.extend((1..=half).map(|i| format!("Y{i}")));
            (l, None)
        }
        None => ((1..=hat.len()).map(|i| i.to_string()).collect(), None),
    };
    let est = EstimationResult::new(labels, hat, truth);
    fs::create_dir_all(&g.out).map_err(Error::from)?;
    export::write_file(&g.out, "result.csv", &export::result_csv(&est)?)?;
    let path = export::write_file(&g.out, "result.json", &export::result_json(&est)?)?;
    say(g, format!("wrote {}", path.display()));
    say(g, format!("  couplings {:?}", est.couplings_hat));
    for p in &passes {
        for issue in &p.issues {
            eprintln!("warning: {issue}");
        }
    }
    check_flagged(g, passes.iter().any(pass_is_flagged), "reconstruction")
}

fn run(g: &Global) -> Outcome {
    let cfg = load(g)?;
    let report = run_tomography(&cfg, &PipelineOptions::default())?;
    export::write_report(&g.out, &cfg, &report)?;
    say(g, format!("wrote report to {}", g.out.display()));
    if let Some(e) = &report.estimate {
        say(g, format!("  couplings {:?}", e.couplings_hat));
        if let Some(m) = e.max_rel_error {
            say(g, format!("  max relative error {m:.3e}"));
        }
    }
    check_flagged(g, report.flagged, "run")
}

fn batch(g: &Global, trials: usize, min: f64, max: f64) -> Outcome {
    let cfg = load(g)?;
    let report = batch_random(
        trials,
        cfg.spec().n_sites(),
        (min, max),
        cfg.plan(),
        cfg.noise(),
        &PipelineOptions::default(),
    )?;
    fs::create_dir_all(&g.out).map_err(Error::from)?;
    export::write_file(&g.out, "batch.csv", &export::batch_csv(&report)?)?;
    export::write_file(
        &g.out,
        "batch.json",
        &serde_json::to_string_pretty(&report).map_err(Error::from)?,
    )?;
    say(g, format!("wrote {}", g.out.join("batch.csv").display()));
    if let (Some(mean), Some(worst)) = (report.mean_rel_error, report.max_rel_error) {
        say(
            g,
            format!("  mean relative error {mean:.3e}, worst {worst:.3e}"),
        );
    }
    check_flagged(
        g,
        report.flagged_trials > 0,
        &format!("{} trial(s)", report.flagged_trials),
    )
}

fn sweep(g: &Global, dimension: &str, values: &[f64], repeats: usize) -> Outcome {
    let cfg = load(g)?;
    let dim = SweepDimension::parse(dimension)
        .ok_or_else(|| Failure::Input(format!("unknown sweep dimension \"{dimension}\"")))?;
    let table = pipeline::sweep(dim, values, &cfg, repeats, &PipelineOptions::default())?;
    fs::create_dir_all(&g.out).map_err(Error::from)?;
    export::write_file(&g.out, "sweep.csv", &export::sweep_csv(&table)?)?;
    export::write_file(
        &g.out,
        "sweep.json",
        &serde_json::to_string_pretty(&table).map_err(Error::from)?,
    )?;
    say(g, format!("wrote {}", g.out.join("sweep.csv").display()));
    for r in &table.rows {
        if let Some(m) = r.median_max_rel_error {
            say(
                g,
                format!("  {} = {}: median max error {m:.3e}", dim.as_str(), r.value),
            );
        }
    }
    Ok(())
}

fn threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("FLUXTOMO_THREADS") else {
        return Ok(());
    };
    let n: usize = v.parse().ok().filter(|n| *n > 0).ok_or_else(|| {
        Failure::Input(format!(
            "FLUXTOMO_THREADS must be a positive integer, got \"{v}\""
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Runtime(e.to_string()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let g = &cli.global;
    let outcome = threads().and_then(|_| match &cli.command {
        Command::Simulate => simulate(g),
        Command::Fit {
            series,
            sites,
            damped,
        } => fit(g, series, *sites, *damped),
        Command::Invert { fit, series, sites } => invert(g, fit, series, *sites),
        Command::Run => run(g),
        Command::Batch { trials, min, max } => batch(g, *trials, *min, *max),
        Command::Sweep {
            dimension,
            values,
            repeats,
        } => sweep(g, dimension, values, *repeats),
    });
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) | Err(Failure::Flagged(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
