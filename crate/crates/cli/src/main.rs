//! Command-line front end for the voltcast forecasting library.
//!
//! Subcommands: `stats`, `fit`, `simulate`, `score`, `backtest`, `resume`.
//! Exit codes: 0 success, 1 usage error, 2 data error (unreadable or
//! malformed inputs), 3 numerical failure (estimation or simulation
//! breakdown, or a backtest with too many skipped windows).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::exit;

use clap::{ArgAction, Parser, Subcommand};

use voltcast::backtest::{
    read_manifest_config, resume, run_backtest, BacktestConfig, BacktestModel, BacktestOutcome,
};
use voltcast::error::Error;
use voltcast::estimators::{fit_mean_model, mean_fit_from_kv, mean_fit_to_kv, FitMethod};
use voltcast::kv::{format_f64, KvDoc};
use voltcast::market_data::{descriptive_stats, read_series_file, DailyBivariateSeries};
use voltcast::optimizer::LadderFitter;
use voltcast::residual_models::{fit_from_kv, fit_to_kv, ModelTag};
use voltcast::scoring::score_window;
use voltcast::simulator::{simulate_paths, PathEnsemble, SimHistory};

/// Environment variable naming the default worker-thread count.
const WORKERS_VAR: &str = "VOLTCAST_WORKERS";

#[derive(Parser)]
#[command(
    name = "voltcast",
    version,
    about = "Bivariate probabilistic forecasting of daily peak/off-peak electricity prices",
    disable_help_subcommand = true
)]
struct Cli {
    /// Increase log verbosity on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print descriptive statistics of a price file.
    ///
    /// The input holds either daily rows `date off-peak peak` or hourly rows
    /// `date hour price`; hourly data is aggregated to the daily pair first.
    Stats {
        /// Price file to summarize.
        #[arg(long)]
        input: PathBuf,
        /// Also write the rendered table to this file.
        #[arg(long)]
        output: Option<PathBuf>,
    },

    /// Fit the conditional-mean model and one residual model; persist both.
    Fit {
        /// Training price file (daily or hourly).
        #[arg(long)]
        input: PathBuf,
        /// Conditional-mean estimator: "ols" or "enet".
        #[arg(long, default_value = "enet")]
        method: String,
        /// Residual model: gauss, ij, bij, bij-mu, garch, or bij-mu-garch.
        /// Prerequisite models in the initialization ladder are fit
        /// automatically.
        #[arg(long, default_value = "gauss")]
        model: String,
        /// Directory receiving mean.txt and residual.txt.
        #[arg(long)]
        output: PathBuf,
    },

    /// Simulate a forecast ensemble from fits persisted by `fit`.
    Simulate {
        /// Directory holding mean.txt and residual.txt from `fit`.
        #[arg(long)]
        fits: PathBuf,
        /// The training price file the fits were computed from; supplies the
        /// lagged history the simulation starts from.
        #[arg(long)]
        input: PathBuf,
        /// Days ahead to simulate.
        #[arg(long, default_value_t = 7)]
        horizons: usize,
        /// Monte Carlo paths.
        #[arg(long, default_value_t = 16000)]
        paths: usize,
        /// RNG seed; the ensemble is a deterministic function of it.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Output ensemble file (binary).
        #[arg(long)]
        output: PathBuf,
        /// Also write the first few paths as a plot-ready text table.
        #[arg(long)]
        sample_output: Option<PathBuf>,
        /// How many paths the text sample holds.
        #[arg(long, default_value_t = 12)]
        sample_paths: usize,
    },

    /// Score a persisted ensemble against realized prices.
    ///
    /// Prints one row per forecast day with the absolute error of the
    /// ensemble median, squared error of the mean, mean pinball loss over
    /// the percentile grid, and the energy score with its distance and
    /// interdependence parts.
    Score {
        /// Ensemble file written by `simulate`.
        #[arg(long)]
        ensemble: PathBuf,
        /// Price file covering the forecast dates.
        #[arg(long)]
        realized: PathBuf,
        /// Also write the score table to this file.
        #[arg(long)]
        output: Option<PathBuf>,
    },

    /// Run a rolling-window backtest and write report files.
    Backtest {
        /// Price file backing the whole exercise.
        #[arg(long)]
        input: PathBuf,
        /// Output directory for window files, reports, and the manifest.
        #[arg(long)]
        out: PathBuf,
        /// Config file of `key = value` lines (same keys as the manifest);
        /// explicit flags below override file values.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Training window length in days.
        #[arg(long)]
        window: Option<usize>,
        /// Forecast horizon in days.
        #[arg(long)]
        horizons: Option<usize>,
        /// Monte Carlo paths per window and model.
        #[arg(long)]
        paths: Option<usize>,
        /// Comma-separated model list (default: all seven).
        #[arg(long)]
        models: Option<String>,
        /// Which mean fit supplies residuals to the residual models:
        /// "ols" or "enet".
        #[arg(long)]
        residual_source: Option<String>,
        /// Master seed; per-window, per-model seeds derive from it.
        #[arg(long)]
        seed: Option<u64>,
        /// Warm-start each window's likelihood fits from the previous
        /// window's optimum (sequential) instead of the strict ladder.
        #[arg(long)]
        warm_start: Option<bool>,
    },

    /// Resume an interrupted backtest from its output directory.
    Resume {
        /// The same price file the run was started with.
        #[arg(long)]
        input: PathBuf,
        /// Output directory of the interrupted run.
        #[arg(long)]
        out: PathBuf,
    },
}

/// Errors at the CLI boundary: bad invocations versus failures from the
/// library, which carry their own data/numerical split.
enum CliError {
    Usage(String),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(Error::Io(e))
    }
}

type CliResult<T> = Result<T, CliError>;

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // clap exits 2 by default; remap to the documented usage code.
            let code = if err.use_stderr() { 1 } else { 0 };
            let _ = err.print();
            exit(code);
        }
    };

    init_logger(cli.verbose);
    if let Err(message) = configure_workers() {
        eprintln!("usage error: {message}");
        exit(1);
    }

    match dispatch(cli.command) {
        Ok(()) => {}
        Err(CliError::Usage(message)) => {
            eprintln!("usage error: {message}");
            exit(1);
        }
        Err(CliError::Core(err)) => {
            eprintln!("error: {err}");
            exit(if err.is_data_error() { 2 } else { 3 });
        }
    }
}

fn init_logger(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
}

/// Apply the worker-count environment variable to the global thread pool.
fn configure_workers() -> Result<(), String> {
    let Ok(raw) = std::env::var(WORKERS_VAR) else {
        return Ok(());
    };
    let workers: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| format!("{WORKERS_VAR} must be a positive integer, got {raw:?}"))?;
    // A failure here means the pool already exists, which is equivalent.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global();
    Ok(())
}

fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::Stats { input, output } => cmd_stats(&input, output.as_deref()),
        Command::Fit { input, method, model, output } => {
            cmd_fit(&input, &method, &model, &output)
        }
        Command::Simulate {
            fits,
            input,
            horizons,
            paths,
            seed,
            output,
            sample_output,
            sample_paths,
        } => cmd_simulate(
            &fits,
            &input,
            horizons,
            paths,
            seed,
            &output,
            sample_output.as_deref(),
            sample_paths,
        ),
        Command::Score { ensemble, realized, output } => {
            cmd_score(&ensemble, &realized, output.as_deref())
        }
        Command::Backtest {
            input,
            out,
            config,
            window,
            horizons,
            paths,
            models,
            residual_source,
            seed,
            warm_start,
        } => {
            let series = load_series(&input)?;
            let mut cfg = match config {
                Some(path) => BacktestConfig::from_kv(&KvDoc::read_file(&path)?, &out)?,
                None => BacktestConfig::new(&out),
            };
            if let Some(v) = window {
                cfg.window = v;
            }
            if let Some(v) = horizons {
                cfg.horizons = v;
            }
            if let Some(v) = paths {
                cfg.paths = v;
            }
            if let Some(text) = models {
                cfg.models = parse_model_list(&text)?;
            }
            if let Some(text) = residual_source {
                cfg.residual_source = parse_method(&text)?;
            }
            if let Some(v) = seed {
                cfg.master_seed = v;
            }
            if let Some(v) = warm_start {
                cfg.warm_start = v;
            }
            let outcome = run_backtest(&series, &cfg)?;
            finish_backtest(&cfg.out_dir, &outcome)
        }
        Command::Resume { input, out } => {
            let series = load_series(&input)?;
            // Fails cleanly when the directory holds no manifest.
            let _ = read_manifest_config(&out)?;
            let outcome = resume(&series, &out)?;
            finish_backtest(&out, &outcome)
        }
    }
}

fn load_series(input: &Path) -> CliResult<DailyBivariateSeries> {
    let report = read_series_file(input)?;
    log::info!(
        "read {} days ({:?}) from {}",
        report.series.len(),
        report.kind,
        input.display()
    );
    for note in &report.notes {
        log::info!("{note}");
    }
    Ok(report.series)
}

fn parse_method(text: &str) -> CliResult<FitMethod> {
    FitMethod::parse(&text.to_lowercase())
        .map_err(|_| CliError::Usage(format!("unknown fit method {text:?}; use ols or enet")))
}

fn parse_tag(text: &str) -> CliResult<ModelTag> {
    ModelTag::parse(&text.to_uppercase()).map_err(|_| {
        CliError::Usage(format!(
            "unknown residual model {text:?}; use gauss, ij, bij, bij-mu, garch, or bij-mu-garch"
        ))
    })
}

fn parse_model_list(text: &str) -> CliResult<Vec<BacktestModel>> {
    let names: Vec<&str> = text
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .collect();
    if names.is_empty() {
        return Err(CliError::Usage("empty model list".into()));
    }
    names
        .into_iter()
        .map(|name| {
            BacktestModel::parse(name)
                .map_err(|_| CliError::Usage(format!("unknown model {name:?}")))
        })
        .collect()
}

fn cmd_stats(input: &Path, output: Option<&Path>) -> CliResult<()> {
    let series = load_series(input)?;
    let table = descriptive_stats(&series)?;
    let text = table.render();
    print!("{text}");
    if let Some(path) = output {
        fs::write(path, &text)?;
        log::info!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_fit(input: &Path, method: &str, model: &str, out_dir: &Path) -> CliResult<()> {
    let method = parse_method(method)?;
    let tag = parse_tag(model)?;
    let series = load_series(input)?;

    let mean = fit_mean_model(&series, method)?;
    // Lagged observations aligned with the residual days, for the
    // state-dependent jump size.
    let prev_y: Vec<[f64; 2]> =
        (0..mean.residuals.len()).map(|k| series.get(7 + k)).collect();
    let mut ladder = LadderFitter::new(&mean.residuals, Some(&prev_y));
    let fit = ladder.fit(tag)?;

    fs::create_dir_all(out_dir)?;
    mean_fit_to_kv(&mean)?.write_file(&out_dir.join("mean.txt"))?;
    fit_to_kv(&fit)?.write_file(&out_dir.join("residual.txt"))?;

    println!("mean method: {}", mean.method.name());
    for i in 0..2 {
        if let Some(lambda) = mean.lambda[i] {
            println!("lambda series {}: {}", i + 1, format_f64(lambda));
        }
    }
    println!("residual model: {}", tag.name());
    println!("log-likelihood: {}", format_f64(fit.loglik));
    println!("converged: {} after {} iterations", fit.converged, fit.iterations);
    println!("fits written to {}", out_dir.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    fits: &Path,
    input: &Path,
    horizons: usize,
    paths: usize,
    seed: u64,
    output: &Path,
    sample_output: Option<&Path>,
    sample_paths: usize,
) -> CliResult<()> {
    let series = load_series(input)?;
    let mean = mean_fit_from_kv(&KvDoc::read_file(&fits.join("mean.txt"))?, &series)?;
    let fit = fit_from_kv(&KvDoc::read_file(&fits.join("residual.txt"))?)?;
    let history = SimHistory::from_series(&series)?;

    let ensemble = simulate_paths(&mean, &fit, &history, horizons, paths, seed)?;
    ensemble.write_binary(output)?;
    println!(
        "simulated {} paths x {} days ({} model, {} mean), first forecast day {}",
        paths,
        horizons,
        ensemble.residual_model().name(),
        ensemble.mean_method(),
        ensemble.dates()[0]
    );
    println!("ensemble written to {}", output.display());
    if let Some(path) = sample_output {
        ensemble.write_text_sample(path, sample_paths)?;
        println!("path sample written to {}", path.display());
    }
    Ok(())
}

fn cmd_score(ensemble_path: &Path, realized_path: &Path, output: Option<&Path>) -> CliResult<()> {
    let ensemble = PathEnsemble::read_binary(ensemble_path)?;
    let series = load_series(realized_path)?;

    // Pull the realized pair for each forecast date; every date must be
    // covered by the realized file.
    let mut realized = Vec::with_capacity(ensemble.horizons());
    for date in ensemble.dates() {
        let offset = (*date - series.first_day()).num_days();
        if offset < 0 || offset as usize >= series.len() {
            return Err(Error::Data(format!(
                "realized prices do not cover forecast date {date}"
            ))
            .into());
        }
        realized.push(series.get(offset as usize));
    }

    let losses = score_window(&ensemble, &realized)?;
    let mut text =
        String::from("horizon\tae_1\tae_2\tse_1\tse_2\tpb_1\tpb_2\tes\ted\tei\n");
    for (h0, day) in losses.iter().enumerate() {
        text.push_str(&(h0 + 1).to_string());
        for value in day.flatten() {
            text.push('\t');
            text.push_str(&format_f64(value));
        }
        text.push('\n');
    }
    print!("{text}");
    if let Some(path) = output {
        fs::write(path, &text)?;
        log::info!("wrote {}", path.display());
    }
    Ok(())
}

/// Print the end-of-run summary and map an invalid run to a numerical
/// failure exit.
fn finish_backtest(out_dir: &Path, outcome: &BacktestOutcome) -> CliResult<()> {
    let completed = outcome.processed - outcome.skipped.len();
    println!(
        "windows: {} completed: {} skipped: {}",
        outcome.n_windows,
        completed,
        outcome.skipped.len()
    );
    println!(
        "scored windows per horizon: {}",
        outcome
            .per_horizon_n
            .iter()
            .map(|n| n.to_string())
            .collect::<Vec<_>>()
            .join(" ")
    );
    if !outcome.reports.is_empty() {
        let horizons = outcome.reports[0].1.horizons();
        let mut header = String::from("mean energy score\tmodel");
        for h in 1..=horizons {
            header.push_str(&format!("\th{h}"));
        }
        println!("{header}");
        for (model, report) in &outcome.reports {
            let mut row = format!("\t{}", model.name());
            for h0 in 0..horizons {
                row.push_str(&format!("\t{:.4}", report.es[h0]));
            }
            println!("{row}");
        }
    }
    println!("report files under {}", out_dir.join("report").display());
    if outcome.invalid {
        return Err(Error::Numerical(format!(
            "{} of {} windows were skipped (over the 5% limit); results are not trustworthy",
            outcome.skipped.len(),
            outcome.n_windows
        ))
        .into());
    }
    Ok(())
}
