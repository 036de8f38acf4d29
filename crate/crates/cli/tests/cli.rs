//! End-to-end tests of the `voltcast` binary: every subcommand, the exit-code
//! contract, and bit-exact agreement between the standalone
//! fit/simulate/score pipeline and the backtest's in-line scoring.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use chrono::NaiveDate;
use nalgebra::DVector;
use tempfile::TempDir;

use voltcast::backtest::{BacktestConfig, BacktestModel};
use voltcast::design_matrix::DesignSpec;
use voltcast::estimators::{FitMethod, MeanModelFit};
use voltcast::kv::{format_f64, KvDoc};
use voltcast::market_data::DailyBivariateSeries;
use voltcast::residual_models::{ContCov, ResidualModel, ResidualModelFit};
use voltcast::simulator::{simulate_paths, SimHistory};

fn voltcast(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_voltcast"))
        .args(args)
        .env_remove("VOLTCAST_WORKERS")
        .output()
        .expect("binary runs")
}

fn run_ok(args: &[&str]) -> String {
    let out = voltcast(args);
    assert!(
        out.status.success(),
        "command {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("utf8 stdout")
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

/// A stationary bivariate daily series: one simulated path from a mild
/// autoregression with Gaussian noise, preceded by its constant history.
fn toy_series(len: usize, seed: u64) -> DailyBivariateSeries {
    let spec = DesignSpec::full();
    let p = spec.param_count();
    let labels = spec.labels();
    let mut beta = [DVector::zeros(p), DVector::zeros(p)];
    for i in 0..2 {
        beta[i][0] = if i == 0 { 30.0 } else { 20.0 };
        beta[i][1 + i * 8] = 0.35;
        beta[i][1 + (1 - i) * 8] = 0.10;
        beta[i][17] = 1.5;
    }
    let mean_fit = MeanModelFit {
        method: FitMethod::ElasticNet,
        spec,
        beta,
        lambda: [None, None],
        alpha: 0.5,
        labels,
        residuals: Vec::new(),
        first_residual_date: NaiveDate::from_ymd_opt(2020, 1, 9).unwrap(),
    };
    let resid_fit = ResidualModelFit {
        model: ResidualModel::Gauss { cov: ContCov::new(3.0, 2.0, 0.4).unwrap() },
        loglik: 0.0,
        converged: true,
        iterations: 0,
        grad_norm: 0.0,
        terminal_eps: [0.0; 2],
        terminal_var: [9.0, 4.0],
    };
    let history =
        SimHistory::new(NaiveDate::from_ymd_opt(2020, 1, 8).unwrap(), vec![[45.0, 30.0]; 8])
            .unwrap();
    let ens = simulate_paths(&mean_fit, &resid_fit, &history, len - 8, 1, seed).unwrap();
    let mut values = vec![[45.0, 30.0]; 8];
    for h in 1..=(len - 8) {
        values.push([ens.value(0, h, 0).unwrap(), ens.value(0, h, 1).unwrap()]);
    }
    DailyBivariateSeries::new(NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(), values).unwrap()
}

/// Write `date off-peak peak` rows; exact float round-trip via the shortest
/// representation.
fn write_daily_file(path: &Path, series: &DailyBivariateSeries, days: usize) {
    let mut text = String::from("# date\toff_peak\tpeak\n");
    for d in 0..days {
        let v = series.get(d);
        text.push_str(&format!(
            "{}\t{}\t{}\n",
            series.date_at(d),
            format_f64(v[0]),
            format_f64(v[1])
        ));
    }
    fs::write(path, text).unwrap();
}

#[test]
fn stats_agree_between_daily_and_hourly_input() {
    let dir = TempDir::new().unwrap();
    let daily = dir.path().join("daily.txt");
    let hourly = dir.path().join("hourly.txt");
    let start = NaiveDate::from_ymd_opt(2021, 3, 1).unwrap();

    let mut daily_text = String::new();
    let mut hourly_text = String::from("date\thour\tprice\n");
    for d in 0..30i64 {
        let date = start + chrono::Duration::days(d);
        let off = 25.0 + 3.0 * (d as f64 / 5.0).sin();
        let peak = 35.0 + 4.0 * (d as f64 / 7.0).cos();
        daily_text.push_str(&format!("{date}\t{}\t{}\n", format_f64(off), format_f64(peak)));
        for h in 0..24 {
            let price = if (8..=19).contains(&h) { peak } else { off };
            hourly_text.push_str(&format!("{date}\t{h}\t{}\n", format_f64(price)));
        }
    }
    fs::write(&daily, daily_text).unwrap();
    fs::write(&hourly, hourly_text).unwrap();

    let out_daily = dir.path().join("stats_daily.txt");
    let out_hourly = dir.path().join("stats_hourly.txt");
    let stdout = run_ok(&[
        "stats",
        "--input",
        daily.to_str().unwrap(),
        "--output",
        out_daily.to_str().unwrap(),
    ]);
    run_ok(&[
        "stats",
        "--input",
        hourly.to_str().unwrap(),
        "--output",
        out_hourly.to_str().unwrap(),
    ]);

    // The hourly file aggregates to exactly the daily pairs, so the two
    // rendered tables are identical.
    let table_daily = fs::read_to_string(&out_daily).unwrap();
    let table_hourly = fs::read_to_string(&out_hourly).unwrap();
    assert_eq!(table_daily, table_hourly);
    assert_eq!(stdout, table_daily);
    for token in ["mean", "sd", "cor"] {
        assert!(stdout.contains(token), "missing {token} in:\n{stdout}");
    }
}

#[test]
fn fit_simulate_score_pipeline_round_trips() {
    let dir = TempDir::new().unwrap();
    let series = toy_series(123, 3);
    let train = dir.path().join("train.txt");
    let full = dir.path().join("full.txt");
    write_daily_file(&train, &series, 120);
    write_daily_file(&full, &series, 123);
    let fits = dir.path().join("fits");

    let stdout = run_ok(&[
        "fit",
        "--input",
        train.to_str().unwrap(),
        "--method",
        "enet",
        "--model",
        "bij",
        "--output",
        fits.to_str().unwrap(),
    ]);
    assert!(stdout.contains("residual model: BIJ"), "{stdout}");
    let residual_doc = fs::read_to_string(fits.join("residual.txt")).unwrap();
    assert!(residual_doc.contains("model = BIJ"), "{residual_doc}");
    // Jump-state probabilities live on the simplex.
    let doc = KvDoc::parse(&residual_doc).unwrap();
    let probs: Vec<f64> = ["p_00", "p_10", "p_01", "p_11"]
        .iter()
        .map(|k| doc.require_f64(k).unwrap())
        .collect();
    assert!(probs.iter().all(|&p| (0.0..=1.0).contains(&p)), "{probs:?}");
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12, "{probs:?}");

    let ens1 = dir.path().join("ens1.bin");
    let ens2 = dir.path().join("ens2.bin");
    let sample = dir.path().join("paths.txt");
    for (target, extra) in
        [(&ens1, Some(&sample)), (&ens2, None)]
    {
        let mut args = vec![
            "simulate",
            "--fits",
            fits.to_str().unwrap(),
            "--input",
            train.to_str().unwrap(),
            "--horizons",
            "3",
            "--paths",
            "60",
            "--seed",
            "7",
            "--output",
            target.to_str().unwrap(),
        ];
        if let Some(sample_path) = extra {
            args.extend(["--sample-output", sample_path.to_str().unwrap()]);
        }
        run_ok(&args);
    }
    // Same fits, seed, and history: bit-identical ensembles.
    assert_eq!(fs::read(&ens1).unwrap(), fs::read(&ens2).unwrap());
    assert!(fs::read_to_string(&sample).unwrap().lines().count() > 3);

    let table = run_ok(&[
        "score",
        "--ensemble",
        ens1.to_str().unwrap(),
        "--realized",
        full.to_str().unwrap(),
    ]);
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "horizon\tae_1\tae_2\tse_1\tse_2\tpb_1\tpb_2\tes\ted\tei");
    assert_eq!(lines.len(), 4); // header + one row per simulated day
    for (h, line) in lines[1..].iter().enumerate() {
        let cells: Vec<&str> = line.split('\t').collect();
        assert_eq!(cells.len(), 10);
        assert_eq!(cells[0], (h + 1).to_string());
        for cell in &cells[1..] {
            let value: f64 = cell.parse().unwrap();
            assert!(value.is_finite() && value >= 0.0, "{line}");
        }
    }

    // Realized prices that do not cover the forecast dates: a data error.
    let short = voltcast(&[
        "score",
        "--ensemble",
        ens1.to_str().unwrap(),
        "--realized",
        train.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&short), 2);
    assert!(String::from_utf8_lossy(&short.stderr).contains("cover"), "wrong message");
}

#[test]
fn score_reproduces_backtest_window_losses_bit_exactly() {
    let dir = TempDir::new().unwrap();
    let series = toy_series(92, 5);
    let full = dir.path().join("full.txt");
    let train = dir.path().join("train.txt");
    write_daily_file(&full, &series, 92);
    write_daily_file(&train, &series, 90);
    let bt = dir.path().join("bt");

    run_ok(&[
        "backtest",
        "--input",
        full.to_str().unwrap(),
        "--out",
        bt.to_str().unwrap(),
        "--window",
        "90",
        "--horizons",
        "2",
        "--paths",
        "40",
        "--models",
        "arx-ij",
        "--residual-source",
        "enet",
        "--seed",
        "11",
    ]);

    let doc =
        KvDoc::read_file(&bt.join("windows").join("window_00000.txt")).unwrap();
    assert_eq!(doc.get("realized_h"), Some("2"));
    let seed = doc.get("model.ARX-IJ.seed").unwrap().to_string();

    // Re-run the first window by hand through the standalone subcommands.
    let fits = dir.path().join("fits");
    run_ok(&[
        "fit",
        "--input",
        train.to_str().unwrap(),
        "--method",
        "enet",
        "--model",
        "ij",
        "--output",
        fits.to_str().unwrap(),
    ]);
    let ens = dir.path().join("ens.bin");
    run_ok(&[
        "simulate",
        "--fits",
        fits.to_str().unwrap(),
        "--input",
        train.to_str().unwrap(),
        "--horizons",
        "2",
        "--paths",
        "40",
        "--seed",
        &seed,
        "--output",
        ens.to_str().unwrap(),
    ]);
    let table = run_ok(&[
        "score",
        "--ensemble",
        ens.to_str().unwrap(),
        "--realized",
        full.to_str().unwrap(),
    ]);

    // The scores printed by `score` match the backtest's persisted loss rows
    // digit for digit: both sides run the same fit, simulation, and scoring
    // code on the same inputs.
    for (h0, line) in table.lines().skip(1).enumerate() {
        let cells: Vec<&str> = line.split('\t').collect();
        let persisted = doc
            .get(&format!("model.ARX-IJ.loss.h{}", h0 + 1))
            .unwrap_or_else(|| panic!("missing loss row for horizon {}", h0 + 1));
        let expected: Vec<&str> = persisted.split(' ').collect();
        assert_eq!(&cells[1..], &expected[..], "horizon {}", h0 + 1);
    }
}

#[test]
fn backtest_accepts_config_file_with_flag_overrides_and_resumes() {
    let dir = TempDir::new().unwrap();
    let series = toy_series(92, 9);
    let full = dir.path().join("full.txt");
    write_daily_file(&full, &series, 92);

    // Config file with a deliberately different seed; the flag wins.
    let mut cfg = BacktestConfig::new(dir.path().join("unused"));
    cfg.window = 90;
    cfg.horizons = 1;
    cfg.paths = 30;
    cfg.models = vec![BacktestModel::ArxOls, BacktestModel::ArxEnet];
    cfg.master_seed = 1;
    let cfg_path = dir.path().join("backtest.cfg");
    cfg.to_kv().unwrap().write_file(&cfg_path).unwrap();

    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    run_ok(&[
        "backtest",
        "--input",
        full.to_str().unwrap(),
        "--config",
        cfg_path.to_str().unwrap(),
        "--seed",
        "11",
        "--out",
        out_a.to_str().unwrap(),
    ]);
    let stdout_b = run_ok(&[
        "backtest",
        "--input",
        full.to_str().unwrap(),
        "--window",
        "90",
        "--horizons",
        "1",
        "--paths",
        "30",
        "--models",
        "arx-ols,arx-enet",
        "--residual-source",
        "enet",
        "--seed",
        "11",
        "--out",
        out_b.to_str().unwrap(),
    ]);
    assert!(stdout_b.contains("completed: 2"), "{stdout_b}");

    let scores_a = fs::read_to_string(out_a.join("report/scores.tsv")).unwrap();
    let scores_b = fs::read_to_string(out_b.join("report/scores.tsv")).unwrap();
    assert_eq!(scores_a, scores_b);

    // The baseline-relative table carries its normalization in a comment.
    let rel = fs::read_to_string(out_a.join("report/rel_scores.tsv")).unwrap();
    assert!(rel.starts_with('#'), "{rel}");
    assert!(rel.contains("ARX-OLS"), "{rel}");

    // Resuming a finished run is a no-op that reports the same summary.
    let resumed = run_ok(&[
        "resume",
        "--input",
        full.to_str().unwrap(),
        "--out",
        out_a.to_str().unwrap(),
    ]);
    assert!(resumed.contains("completed: 2"), "{resumed}");
    assert_eq!(scores_a, fs::read_to_string(out_a.join("report/scores.tsv")).unwrap());
}

#[test]
fn exit_codes_match_the_documented_contract() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("data.txt");
    write_daily_file(&data, &toy_series(40, 2), 40);

    // 0: success.
    assert_eq!(exit_code(&voltcast(&["stats", "--input", data.to_str().unwrap()])), 0);

    // 1: structural usage errors, remapped from the parser's default.
    assert_eq!(exit_code(&voltcast(&["frobnicate"])), 1);
    assert_eq!(exit_code(&voltcast(&["stats"])), 1); // missing required flag

    // 1: invalid flag values caught before any computation.
    let bad_model = voltcast(&[
        "backtest",
        "--input",
        data.to_str().unwrap(),
        "--out",
        dir.path().join("x").to_str().unwrap(),
        "--models",
        "arx-nonsense",
    ]);
    assert_eq!(exit_code(&bad_model), 1);
    assert!(String::from_utf8_lossy(&bad_model.stderr).contains("usage error"));

    // 1: malformed worker-count environment variable.
    let bad_env = Command::new(env!("CARGO_BIN_EXE_voltcast"))
        .args(["stats", "--input", data.to_str().unwrap()])
        .env("VOLTCAST_WORKERS", "three")
        .output()
        .unwrap();
    assert_eq!(exit_code(&bad_env), 1);

    // A valid worker count is accepted.
    let good_env = Command::new(env!("CARGO_BIN_EXE_voltcast"))
        .args(["stats", "--input", data.to_str().unwrap()])
        .env("VOLTCAST_WORKERS", "2")
        .output()
        .unwrap();
    assert_eq!(exit_code(&good_env), 0);

    // 2: unreadable input.
    let missing = voltcast(&["stats", "--input", "/nonexistent/prices.txt"]);
    assert_eq!(exit_code(&missing), 2);
    assert!(!String::from_utf8_lossy(&missing.stderr).is_empty());

    // 2: malformed input contents.
    let garbled = dir.path().join("garbled.txt");
    fs::write(&garbled, "2020-01-01\t1\n2020-01-02\t2\t3\t4\t5\n").unwrap();
    assert_eq!(exit_code(&voltcast(&["stats", "--input", garbled.to_str().unwrap()])), 2);

    // 3: numerical preconditions violated (window too short to fit).
    let short_window = voltcast(&[
        "backtest",
        "--input",
        data.to_str().unwrap(),
        "--out",
        dir.path().join("y").to_str().unwrap(),
        "--window",
        "30",
        "--horizons",
        "2",
        "--paths",
        "10",
        "--models",
        "arx-enet",
    ]);
    assert_eq!(exit_code(&short_window), 3);
}
