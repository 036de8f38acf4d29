//! Rolling-window evaluation: estimate, simulate, score, persist, advance
//! one day, repeat.
//!
//! Window `w` trains on days `[w, w + window - 1]`; its horizon-`h` target
//! is day `w + window - 1 + h`. A window exists for every day with at least
//! the one-step realization, so a series of `D` days yields `N = D - window`
//! windows, the last `H - 1` of which score only the horizons that have
//! realized data (per-horizon window counts are reported alongside the
//! scores).
//!
//! Persistence is append-only: a manifest written once up front, one
//! immutable file per window, and a completion log appended after each
//! window file lands. Resuming re-reads the log, recomputes only what is
//! missing, and aggregates every report from the persisted files, so a
//! resumed run is bit-identical to an uninterrupted one.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::Write as IoWrite;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;

use crate::design_matrix::DesignSpec;
use crate::error::{Error, Result};
use crate::estimators::{fit_mean_model, mean_fit_to_kv, FitMethod, MeanModelFit};
use crate::kv::{fnv1a64, format_f64, parse_f64, KvDoc};
use crate::market_data::DailyBivariateSeries;
use crate::optimizer::{fit_gauss, LadderFitter};
use crate::residual_models::{model_from_kv, ModelTag, ResidualModel, ResidualModelFit};
use crate::scoring::{dm_test, score_window, DayLosses, DmOutcome, ScoreReport, DAY_LOSS_COUNT};
use crate::simulator::{simulate_paths, SimHistory};

/// The seven named model configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BacktestModel {
    /// Conditional mean by ordinary least squares, Gaussian residuals.
    ArxOls,
    /// Conditional mean by the elastic net, Gaussian residuals.
    ArxEnet,
    /// Independent jumps per series.
    ArxIj,
    /// Bivariate jumps.
    ArxBij,
    /// Bivariate jumps with state-dependent jump size.
    ArxBijMu,
    /// Constant-correlation GARCH continuous part, no jumps.
    ArxGarch,
    /// Bivariate state-dependent jumps on a GARCH continuous part.
    ArxBijMuGarch,
}

impl BacktestModel {
    pub const ALL: [BacktestModel; 7] = [
        BacktestModel::ArxOls,
        BacktestModel::ArxEnet,
        BacktestModel::ArxIj,
        BacktestModel::ArxBij,
        BacktestModel::ArxBijMu,
        BacktestModel::ArxGarch,
        BacktestModel::ArxBijMuGarch,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            BacktestModel::ArxOls => "ARX-OLS",
            BacktestModel::ArxEnet => "ARX-ENET",
            BacktestModel::ArxIj => "ARX-IJ",
            BacktestModel::ArxBij => "ARX-BIJ",
            BacktestModel::ArxBijMu => "ARX-BIJ-MU",
            BacktestModel::ArxGarch => "ARX-GARCH",
            BacktestModel::ArxBijMuGarch => "ARX-BIJ-MU-GARCH",
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let canon = text.trim().to_ascii_uppercase();
        Self::ALL
            .into_iter()
            .find(|m| m.name() == canon)
            .ok_or_else(|| Error::Parse(format!("unknown model {text:?}")))
    }

    /// The residual model this configuration simulates with.
    pub fn residual_tag(&self) -> ModelTag {
        match self {
            BacktestModel::ArxOls | BacktestModel::ArxEnet => ModelTag::Gauss,
            BacktestModel::ArxIj => ModelTag::Ij,
            BacktestModel::ArxBij => ModelTag::Bij,
            BacktestModel::ArxBijMu => ModelTag::BijMu,
            BacktestModel::ArxGarch => ModelTag::Garch,
            BacktestModel::ArxBijMuGarch => ModelTag::BijMuGarch,
        }
    }

    /// Which mean estimate the configuration forecasts with. The first two
    /// models are pinned to their namesake; the richer residual models
    /// follow the configured residual source.
    pub fn mean_method(&self, residual_source: FitMethod) -> FitMethod {
        match self {
            BacktestModel::ArxOls => FitMethod::Ols,
            BacktestModel::ArxEnet => FitMethod::ElasticNet,
            _ => residual_source,
        }
    }

    /// Whether the residual model is fitted through the shared
    /// initialization ladder (versus the closed-form Gaussian fit).
    fn uses_ladder(&self) -> bool {
        !matches!(self, BacktestModel::ArxOls | BacktestModel::ArxEnet)
    }
}

/// Configuration of one rolling-window run.
#[derive(Debug, Clone, PartialEq)]
pub struct BacktestConfig {
    /// Training window length in days.
    pub window: usize,
    /// Forecast horizons per window.
    pub horizons: usize,
    /// Simulated paths per model and window.
    pub paths: usize,
    /// Models to evaluate, in report order.
    pub models: Vec<BacktestModel>,
    /// Which mean fit supplies the residuals for the ladder models.
    pub residual_source: FitMethod,
    /// Master seed; every (window, model) ensemble seed derives from it.
    pub master_seed: u64,
    /// Start each window's residual fits from the previous window's optimum
    /// (sequential). Off by default: the strict ladder refits from scratch
    /// and lets windows run concurrently.
    pub warm_start: bool,
    /// Output directory for the manifest, window files, and reports.
    pub out_dir: PathBuf,
}

impl BacktestConfig {
    /// Defaults mirroring the reference experiment: 730-day window, 7
    /// horizons, 16000 paths, all seven models, elastic-net residuals,
    /// strict ladder.
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self {
            window: 730,
            horizons: 7,
            paths: 16_000,
            models: BacktestModel::ALL.to_vec(),
            residual_source: FitMethod::ElasticNet,
            master_seed: 1,
            warm_start: false,
            out_dir: out_dir.into(),
        }
    }

    pub fn validate(&self, data_len: usize) -> Result<()> {
        if self.horizons == 0 {
            return Err(Error::InvalidParam("horizons must be at least 1".into()));
        }
        if self.paths == 0 {
            return Err(Error::InvalidParam("paths must be at least 1".into()));
        }
        if self.models.is_empty() {
            return Err(Error::InvalidParam("model list is empty".into()));
        }
        if self.window < 9 {
            return Err(Error::InvalidParam(
                "window must cover the lag order plus at least one row".into(),
            ));
        }
        if self.window + self.horizons > data_len {
            return Err(Error::InvalidParam(format!(
                "window {} + horizons {} exceeds the data length {}",
                self.window, self.horizons, data_len
            )));
        }
        Ok(())
    }

    /// Number of rolling windows on a series of `data_len` days.
    pub fn window_count(&self, data_len: usize) -> usize {
        data_len.saturating_sub(self.window)
    }

    /// Realized horizons of window `w`.
    pub fn realized_horizons(&self, data_len: usize, w: usize) -> usize {
        self.horizons.min(data_len - self.window - w)
    }

    /// Canonical key-value form of every field that defines the run
    /// (the output location deliberately excluded).
    pub fn to_kv(&self) -> Result<KvDoc> {
        let mut doc = KvDoc::new();
        doc.set("window", self.window)?;
        doc.set("horizons", self.horizons)?;
        doc.set("paths", self.paths)?;
        let names: Vec<&str> = self.models.iter().map(|m| m.name()).collect();
        doc.set("models", names.join(" "))?;
        doc.set("residual_source", self.residual_source.name())?;
        doc.set("master_seed", self.master_seed)?;
        doc.set("warm_start", self.warm_start)?;
        Ok(doc)
    }

    pub fn from_kv(doc: &KvDoc, out_dir: impl Into<PathBuf>) -> Result<Self> {
        let models = doc
            .require("models")?
            .split_whitespace()
            .map(BacktestModel::parse)
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            window: doc.require_usize("window")?,
            horizons: doc.require_usize("horizons")?,
            paths: doc.require_usize("paths")?,
            models,
            residual_source: FitMethod::parse(doc.require("residual_source")?)?,
            master_seed: doc.require_u64("master_seed")?,
            warm_start: doc.require_bool("warm_start")?,
            out_dir: out_dir.into(),
        })
    }

    /// Hash of the canonical configuration text.
    pub fn config_hash(&self) -> Result<u64> {
        Ok(fnv1a64(self.to_kv()?.to_text().as_bytes()))
    }
}

/// Ensemble seed of one (window, model) cell: keyed by the model NAME so
/// extending the model list never perturbs existing models' draws.
pub fn window_model_seed(master_seed: u64, window: usize, model: BacktestModel) -> u64 {
    fnv1a64(format!("{master_seed}:{window}:{}", model.name()).as_bytes())
}

/// Fingerprint of the input series (start date, length, every value).
pub fn data_fingerprint(series: &DailyBivariateSeries) -> u64 {
    let mut text = format!("{};{};", series.date_at(0), series.len());
    for d in 0..series.len() {
        let v = series.get(d);
        text.push_str(&format_f64(v[0]));
        text.push(',');
        text.push_str(&format_f64(v[1]));
        text.push(';');
    }
    fnv1a64(text.as_bytes())
}

/// A run is invalid when more than 5% of its windows were skipped.
pub fn run_is_invalid(skipped: usize, total: usize) -> bool {
    skipped * 20 > total
}

/// Outcome of a (possibly partial) run.
#[derive(Debug, Clone, PartialEq)]
pub struct BacktestOutcome {
    /// Total rolling windows of the configuration.
    pub n_windows: usize,
    /// Windows with persisted results (completed or recorded as skipped).
    pub processed: usize,
    /// Indices of skipped windows.
    pub skipped: Vec<usize>,
    /// More than 5% of windows skipped.
    pub invalid: bool,
    /// The run stopped early (window limit); no reports were aggregated.
    pub partial: bool,
    /// Mean losses per model, in configuration order.
    pub reports: Vec<(BacktestModel, ScoreReport)>,
    /// Completed windows contributing to each horizon.
    pub per_horizon_n: Vec<usize>,
}

// ---------------------------------------------------------------------------
// Per-window computation
// ---------------------------------------------------------------------------

fn merge_prefixed(doc: &mut KvDoc, prefix: &str, sub: &KvDoc) -> Result<()> {
    for key in sub.keys() {
        doc.set(&format!("{prefix}.{key}"), sub.get(key).expect("own key"))?;
    }
    Ok(())
}

fn join_floats(values: impl IntoIterator<Item = f64>) -> String {
    values.into_iter().map(format_f64).collect::<Vec<_>>().join(" ")
}

fn parse_floats(text: &str) -> Result<Vec<f64>> {
    text.split_whitespace()
        .map(|tok| parse_f64(tok).ok_or_else(|| Error::Parse(format!("bad float {tok:?}"))))
        .collect()
}

/// Compute one window end to end and serialize it. `warm` optionally maps
/// residual tags to the previous window's optima.
fn compute_window(
    series: &DailyBivariateSeries,
    cfg: &BacktestConfig,
    w: usize,
    warm: Option<&HashMap<ModelTag, ResidualModel>>,
) -> Result<KvDoc> {
    let train = series.window(w, cfg.window)?;
    let realized_h = cfg.realized_horizons(series.len(), w);
    let realized: Vec<[f64; 2]> =
        (0..realized_h).map(|h| series.get(w + cfg.window + h)).collect();

    let ols = fit_mean_model(&train, FitMethod::Ols)?;
    let enet = fit_mean_model(&train, FitMethod::ElasticNet)?;
    let source = match cfg.residual_source {
        FitMethod::Ols => &ols,
        FitMethod::ElasticNet => &enet,
    };
    // Lagged observations aligned with the residual days, for the
    // state-dependent jump size.
    let prev_y: Vec<[f64; 2]> =
        (0..source.residuals.len()).map(|k| train.get(7 + k)).collect();

    let mut ladder = LadderFitter::new(&source.residuals, Some(&prev_y));
    let history = SimHistory::from_series(&train)?;

    let mut doc = KvDoc::new();
    doc.set("format", "backtest-window")?;
    doc.set("status", "completed")?;
    doc.set("window", w)?;
    doc.set("first_train_date", train.date_at(0))?;
    doc.set("realized_h", realized_h)?;
    for (h0, pair) in realized.iter().enumerate() {
        doc.set(&format!("realized.h{}", h0 + 1), join_floats(pair.iter().copied()))?;
    }
    merge_prefixed(&mut doc, "mean.ols", &mean_fit_to_kv(&ols)?)?;
    merge_prefixed(&mut doc, "mean.enet", &mean_fit_to_kv(&enet)?)?;
    for i in 0..2 {
        let bits: String =
            enet.beta[i].iter().map(|&b| if b != 0.0 { '1' } else { '0' }).collect();
        doc.set(&format!("inclusion.{}", i + 1), bits)?;
    }

    let mut done: BTreeSet<&str> = BTreeSet::new();
    for model in &cfg.models {
        if !done.insert(model.name()) {
            continue; // duplicate list entries share one computation
        }
        let mean_fit: &MeanModelFit = match model.mean_method(cfg.residual_source) {
            FitMethod::Ols => &ols,
            FitMethod::ElasticNet => &enet,
        };
        let resid_fit: ResidualModelFit = if model.uses_ladder() {
            let tag = model.residual_tag();
            match warm.and_then(|m| m.get(&tag)) {
                Some(prev) => ladder.fit_warm(tag, prev)?,
                None => ladder.fit(tag)?,
            }
        } else {
            fit_gauss(&mean_fit.residuals)?
        };
        let seed = window_model_seed(cfg.master_seed, w, *model);
        let ensemble =
            simulate_paths(mean_fit, &resid_fit, &history, realized_h, cfg.paths, seed)?;
        let losses = score_window(&ensemble, &realized)?;

        let prefix = format!("model.{}", model.name());
        doc.set(&format!("{prefix}.seed"), seed)?;
        doc.set(
            &format!("{prefix}.mean_method"),
            model.mean_method(cfg.residual_source).name(),
        )?;
        merge_prefixed(
            &mut doc,
            &format!("{prefix}.resid"),
            &crate::residual_models::fit_to_kv(&resid_fit)?,
        )?;
        for (h0, day) in losses.iter().enumerate() {
            doc.set(&format!("{prefix}.loss.h{}", h0 + 1), join_floats(day.flatten()))?;
        }
    }
    Ok(doc)
}

fn skip_doc(w: usize, message: &str) -> KvDoc {
    let mut doc = KvDoc::new();
    doc.set("format", "backtest-window").expect("static key");
    doc.set("status", "skipped").expect("static key");
    doc.set("window", w).expect("static key");
    doc.set("error", message.replace('\n', " ")).expect("sanitized message");
    doc
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

fn windows_dir(out: &Path) -> PathBuf {
    out.join("windows")
}

fn report_dir(out: &Path) -> PathBuf {
    out.join("report")
}

fn window_path(out: &Path, w: usize) -> PathBuf {
    windows_dir(out).join(format!("window_{w:05}.txt"))
}

fn manifest_path(out: &Path) -> PathBuf {
    out.join("manifest.txt")
}

fn completed_log_path(out: &Path) -> PathBuf {
    out.join("completed.log")
}

/// Write a window file atomically (temp file + rename) so the completion
/// log can never point at a half-written document.
fn write_window_doc(out: &Path, w: usize, doc: &KvDoc) -> Result<()> {
    let target = window_path(out, w);
    let tmp = target.with_extension("txt.tmp");
    doc.write_file(&tmp)?;
    fs::rename(&tmp, &target)?;
    Ok(())
}

fn write_manifest(
    cfg: &BacktestConfig,
    series: &DailyBivariateSeries,
    n_windows: usize,
) -> Result<()> {
    let mut doc = KvDoc::new();
    doc.set("format", "backtest-manifest")?;
    merge_prefixed(&mut doc, "config", &cfg.to_kv()?)?;
    doc.set("config_hash", format!("{:016x}", cfg.config_hash()?))?;
    doc.set("data_fingerprint", format!("{:016x}", data_fingerprint(series)))?;
    doc.set("data_len", series.len())?;
    doc.set("n_windows", n_windows)?;
    doc.write_file(&manifest_path(&cfg.out_dir))
}

/// Check an existing manifest against the requested run.
fn verify_manifest(cfg: &BacktestConfig, series: &DailyBivariateSeries) -> Result<()> {
    let doc = KvDoc::read_file(&manifest_path(&cfg.out_dir))?;
    if doc.get("format") != Some("backtest-manifest") {
        return Err(Error::Parse("not a backtest manifest".into()));
    }
    let want_hash = format!("{:016x}", cfg.config_hash()?);
    if doc.require("config_hash")? != want_hash {
        return Err(Error::Data(
            "output directory belongs to a different configuration".into(),
        ));
    }
    let want_fp = format!("{:016x}", data_fingerprint(series));
    if doc.require("data_fingerprint")? != want_fp {
        return Err(Error::Data("output directory belongs to different data".into()));
    }
    Ok(())
}

/// Read the manifest of `out_dir` back into a configuration.
pub fn read_manifest_config(out_dir: &Path) -> Result<BacktestConfig> {
    let doc = KvDoc::read_file(&manifest_path(out_dir))?;
    if doc.get("format") != Some("backtest-manifest") {
        return Err(Error::Parse("not a backtest manifest".into()));
    }
    // Strip the "config." prefix back off.
    let mut sub = KvDoc::new();
    for key in doc.keys() {
        if let Some(plain) = key.strip_prefix("config.") {
            sub.set(plain, doc.get(key).expect("own key"))?;
        }
    }
    let cfg = BacktestConfig::from_kv(&sub, out_dir)?;
    let recorded = doc.require("config_hash")?;
    if format!("{:016x}", cfg.config_hash()?) != recorded {
        return Err(Error::Parse("manifest config hash does not match its fields".into()));
    }
    Ok(cfg)
}

/// Windows recorded complete AND whose file parses; broken entries are
/// silently recomputed.
fn read_completed(out: &Path, n_windows: usize) -> BTreeSet<usize> {
    let mut done = BTreeSet::new();
    let Ok(text) = fs::read_to_string(completed_log_path(out)) else {
        return done;
    };
    for line in text.lines() {
        let Ok(w) = line.trim().parse::<usize>() else { continue };
        if w < n_windows && KvDoc::read_file(&window_path(out, w)).is_ok() {
            done.insert(w);
        }
    }
    done
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

struct Aggregated {
    skipped: Vec<usize>,
    /// `losses[model][h0]` = loss series over completed windows (ascending
    /// window order; identical window sets across models).
    losses: HashMap<BacktestModel, Vec<Vec<DayLosses>>>,
    per_horizon_n: Vec<usize>,
    /// Inclusion counts per series and coefficient, over completed windows.
    inclusion_counts: [Vec<usize>; 2],
    completed: usize,
}

fn aggregate(cfg: &BacktestConfig, n_windows: usize) -> Result<Aggregated> {
    let labels = DesignSpec::full().labels();
    let mut agg = Aggregated {
        skipped: Vec::new(),
        losses: HashMap::new(),
        per_horizon_n: vec![0; cfg.horizons],
        inclusion_counts: [vec![0; labels.len()], vec![0; labels.len()]],
        completed: 0,
    };
    for model in &cfg.models {
        agg.losses.entry(*model).or_insert_with(|| vec![Vec::new(); cfg.horizons]);
    }
    for w in 0..n_windows {
        let doc = KvDoc::read_file(&window_path(&cfg.out_dir, w))?;
        match doc.require("status")? {
            "skipped" => {
                agg.skipped.push(w);
                continue;
            }
            "completed" => {}
            other => return Err(Error::Parse(format!("bad window status {other:?}"))),
        }
        agg.completed += 1;
        let realized_h = doc.require_usize("realized_h")?;
        for h0 in 0..realized_h.min(cfg.horizons) {
            agg.per_horizon_n[h0] += 1;
        }
        for i in 0..2 {
            let bits = doc.require(&format!("inclusion.{}", i + 1))?;
            if bits.len() != labels.len() {
                return Err(Error::Parse(format!(
                    "window {w}: inclusion mask length {} != {}",
                    bits.len(),
                    labels.len()
                )));
            }
            for (c, bit) in bits.chars().enumerate() {
                if bit == '1' {
                    agg.inclusion_counts[i][c] += 1;
                }
            }
        }
        for model in agg.losses.keys().copied().collect::<Vec<_>>() {
            for h0 in 0..realized_h {
                let key = format!("model.{}.loss.h{}", model.name(), h0 + 1);
                let values = parse_floats(doc.require(&key)?)?;
                if values.len() != DAY_LOSS_COUNT {
                    return Err(Error::Parse(format!("window {w}: bad loss row {key}")));
                }
                let day = DayLosses::from_flat(&values)?;
                agg.losses.get_mut(&model).expect("seeded above")[h0].push(day);
            }
        }
    }
    if agg.completed == 0 {
        return Err(Error::Numerical("every window failed; nothing to aggregate".into()));
    }
    Ok(agg)
}

fn report_from_losses(per_horizon: &[Vec<DayLosses>]) -> ScoreReport {
    let horizons = per_horizon.iter().take_while(|v| !v.is_empty()).count();
    let mut report = ScoreReport {
        mae: vec![[0.0; 2]; horizons],
        mse: vec![[0.0; 2]; horizons],
        pb: vec![[0.0; 2]; horizons],
        es: vec![0.0; horizons],
        ed: vec![0.0; horizons],
        ei: vec![0.0; horizons],
    };
    for (h0, days) in per_horizon.iter().take(horizons).enumerate() {
        let n = days.len() as f64;
        for day in days {
            for i in 0..2 {
                report.mae[h0][i] += day.ae[i] / n;
                report.mse[h0][i] += day.se[i] / n;
                report.pb[h0][i] += day.pb[i] / n;
            }
            report.es[h0] += day.es / n;
            report.ed[h0] += day.ed / n;
            report.ei[h0] += day.ei / n;
        }
    }
    report
}

/// The criterion columns reported and compared pairwise: per-series
/// absolute, squared, and pinball losses plus the joint energy score.
const DM_CRITERIA: [(&str, &str, usize); 7] = [
    ("mae_1", "ae", 0),
    ("mae_2", "ae", 1),
    ("mse_1", "se", 0),
    ("mse_2", "se", 1),
    ("pb_1", "pb", 0),
    ("pb_2", "pb", 1),
    ("es", "es", 0),
];

fn write_reports(cfg: &BacktestConfig, agg: &Aggregated) -> Result<()> {
    let rep_dir = report_dir(&cfg.out_dir);
    fs::create_dir_all(rep_dir.join("dm"))?;
    let reports: Vec<(BacktestModel, ScoreReport)> = cfg
        .models
        .iter()
        .map(|m| (*m, report_from_losses(&agg.losses[m])))
        .collect();

    // Absolute scores, one row per model x horizon x criterion x series.
    let mut table = String::from("model\thorizon\tcriterion\tseries\tvalue\n");
    for (model, report) in &reports {
        table.push_str(&report.delimited_rows(model.name()));
    }
    fs::write(rep_dir.join("scores.tsv"), &table)?;

    // Relative scores, normalized cell-by-cell by the plain OLS model.
    if let Some((_, base)) = reports.iter().find(|(m, _)| *m == BacktestModel::ArxOls) {
        let base = base.clone();
        let mut rel = String::from(
            "# each value divided by the matching ARX-OLS cell\nmodel\thorizon\tcriterion\tseries\tvalue\n",
        );
        for (model, report) in &reports {
            for h in 1..=report.horizons().min(base.horizons()) {
                let h0 = h - 1;
                for (name, values, denom) in [
                    ("mae", &report.mae, &base.mae),
                    ("mse", &report.mse, &base.mse),
                    ("pb", &report.pb, &base.pb),
                ] {
                    for i in 0..2 {
                        rel.push_str(&format!(
                            "{}\t{h}\t{name}\t{}\t{}\n",
                            model.name(),
                            i + 1,
                            format_f64(values[h0][i] / denom[h0][i])
                        ));
                    }
                }
                for (name, values, denom) in [
                    ("es", &report.es, &base.es),
                    ("ed", &report.ed, &base.ed),
                    ("ei", &report.ei, &base.ei),
                ] {
                    rel.push_str(&format!(
                        "{}\t{h}\t{name}\tjoint\t{}\n",
                        model.name(),
                        format_f64(values[h0] / denom[h0])
                    ));
                }
            }
        }
        fs::write(rep_dir.join("rel_scores.tsv"), &rel)?;
    }

    // Structured summary.
    let mut summary = KvDoc::new();
    summary.set("format", "backtest-report")?;
    summary.set("status", if run_is_invalid(agg.skipped.len(), cfg.window_count_hint()) {
        "invalid"
    } else {
        "valid"
    })?;
    summary.set("completed", agg.completed)?;
    summary.set("skipped", agg.skipped.len())?;
    if !agg.skipped.is_empty() {
        summary.set(
            "skipped_windows",
            agg.skipped.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(" "),
        )?;
    }
    summary.set(
        "per_horizon_n",
        agg.per_horizon_n.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(" "),
    )?;
    // Key-value keys are unique per model name, so a model listed twice
    // (identical scores by construction) contributes one block.
    let mut summarized: Vec<&str> = Vec::new();
    for (model, report) in &reports {
        if summarized.contains(&model.name()) {
            continue;
        }
        summarized.push(model.name());
        for h in 1..=report.horizons() {
            let h0 = h - 1;
            let prefix = format!("score.{}.h{h}", model.name());
            for i in 0..2 {
                summary.set_f64(&format!("{prefix}.mae.{}", i + 1), report.mae[h0][i])?;
                summary.set_f64(&format!("{prefix}.mse.{}", i + 1), report.mse[h0][i])?;
                summary.set_f64(&format!("{prefix}.pb.{}", i + 1), report.pb[h0][i])?;
            }
            summary.set_f64(&format!("{prefix}.es"), report.es[h0])?;
            summary.set_f64(&format!("{prefix}.ed"), report.ed[h0])?;
            summary.set_f64(&format!("{prefix}.ei"), report.ei[h0])?;
        }
    }
    summary.write_file(&rep_dir.join("scores.txt"))?;

    // Elastic-net inclusion percentages.
    let labels = DesignSpec::full().labels();
    let mut inc = String::from("coefficient\tpeak_pct\toffpeak_pct\n");
    for (c, label) in labels.iter().enumerate() {
        let pct = |i: usize| 100.0 * agg.inclusion_counts[i][c] as f64 / agg.completed as f64;
        inc.push_str(&format!("{label}\t{}\t{}\n", format_f64(pct(0)), format_f64(pct(1))));
    }
    fs::write(rep_dir.join("inclusion.txt"), &inc)?;

    // Pairwise comparison matrices per criterion and horizon.
    for (file_name, field, series) in DM_CRITERIA {
        for h in 1..=cfg.horizons {
            let h0 = h - 1;
            let mut t_table = String::from("model");
            let mut p_table = String::from("model");
            for (model, _) in &reports {
                t_table.push_str(&format!("\t{}", model.name()));
                p_table.push_str(&format!("\t{}", model.name()));
            }
            t_table.push('\n');
            p_table.push('\n');
            let series_of = |model: &BacktestModel| -> Vec<f64> {
                agg.losses[model][h0]
                    .iter()
                    .map(|day| day.criterion(field, series).expect("known criterion"))
                    .collect()
            };
            let mut any = false;
            for (row_model, _) in &reports {
                let a = series_of(row_model);
                if a.len() < 2 {
                    continue;
                }
                any = true;
                t_table.push_str(row_model.name());
                p_table.push_str(row_model.name());
                for (col_model, _) in &reports {
                    let b = series_of(col_model);
                    match dm_test(&a, &b)? {
                        DmOutcome::Statistic { t, p_first_better, .. } => {
                            t_table.push_str(&format!("\t{}", format_f64(t)));
                            p_table.push_str(&format!("\t{}", format_f64(p_first_better)));
                        }
                        DmOutcome::Degenerate => {
                            t_table.push_str("\tdegenerate");
                            p_table.push_str("\tdegenerate");
                        }
                    }
                }
                t_table.push('\n');
                p_table.push('\n');
            }
            if any {
                fs::write(rep_dir.join("dm").join(format!("{file_name}_h{h}_t.tsv")), &t_table)?;
                fs::write(rep_dir.join("dm").join(format!("{file_name}_h{h}_p.tsv")), &p_table)?;
            }
        }
    }
    Ok(())
}

impl BacktestConfig {
    /// Total windows recorded in the manifest directory; aggregation-time
    /// helper when the data length is not at hand.
    fn window_count_hint(&self) -> usize {
        KvDoc::read_file(&manifest_path(&self.out_dir))
            .ok()
            .and_then(|doc| doc.require_usize("n_windows").ok())
            .unwrap_or(0)
    }
}

// ---------------------------------------------------------------------------
// The run loop
// ---------------------------------------------------------------------------

/// Run (or continue) the rolling-window experiment and aggregate reports.
pub fn run_backtest(
    series: &DailyBivariateSeries,
    cfg: &BacktestConfig,
) -> Result<BacktestOutcome> {
    run_backtest_limited(series, cfg, None)
}

/// Like [`run_backtest`], but stop after computing `stop_after` new windows
/// (used to exercise interruption; the partial outcome carries no reports).
pub fn run_backtest_limited(
    series: &DailyBivariateSeries,
    cfg: &BacktestConfig,
    stop_after: Option<usize>,
) -> Result<BacktestOutcome> {
    cfg.validate(series.len())?;
    let n_windows = cfg.window_count(series.len());
    fs::create_dir_all(windows_dir(&cfg.out_dir))?;
    fs::create_dir_all(report_dir(&cfg.out_dir))?;
    if manifest_path(&cfg.out_dir).exists() {
        verify_manifest(cfg, series)?;
    } else {
        write_manifest(cfg, series, n_windows)?;
    }

    let done = read_completed(&cfg.out_dir, n_windows);
    let pending: Vec<usize> = (0..n_windows).filter(|w| !done.contains(w)).collect();
    let todo: &[usize] = match stop_after {
        Some(k) => &pending[..k.min(pending.len())],
        None => &pending,
    };

    let log = Mutex::new(
        fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(completed_log_path(&cfg.out_dir))?,
    );
    let record = |w: usize, doc: &KvDoc| -> Result<()> {
        write_window_doc(&cfg.out_dir, w, doc)?;
        let mut file = log.lock().expect("completion log lock");
        writeln!(file, "{w}")?;
        file.flush()?;
        Ok(())
    };

    if cfg.warm_start {
        // Sequential: each window warms from the previous window's
        // persisted optimum, which keeps resumed runs on the identical
        // chain an uninterrupted run follows.
        for &w in todo {
            let warm = if w > 0 { load_warm_models(cfg, w - 1) } else { None };
            let doc = match compute_window(series, cfg, w, warm.as_ref()) {
                Ok(doc) => doc,
                Err(err) => {
                    log::warn!("window {w} skipped: {err}");
                    skip_doc(w, &err.to_string())
                }
            };
            record(w, &doc)?;
        }
    } else {
        todo.par_iter().try_for_each(|&w| -> Result<()> {
            let doc = match compute_window(series, cfg, w, None) {
                Ok(doc) => doc,
                Err(err) => {
                    log::warn!("window {w} skipped: {err}");
                    skip_doc(w, &err.to_string())
                }
            };
            record(w, &doc)
        })?;
    }

    let processed = done.len() + todo.len();
    if processed < n_windows {
        return Ok(BacktestOutcome {
            n_windows,
            processed,
            skipped: Vec::new(),
            invalid: false,
            partial: true,
            reports: Vec::new(),
            per_horizon_n: Vec::new(),
        });
    }

    let agg = aggregate(cfg, n_windows)?;
    write_reports(cfg, &agg)?;
    let reports = cfg
        .models
        .iter()
        .map(|m| (*m, report_from_losses(&agg.losses[m])))
        .collect();
    Ok(BacktestOutcome {
        n_windows,
        processed,
        invalid: run_is_invalid(agg.skipped.len(), n_windows),
        skipped: agg.skipped,
        partial: false,
        reports,
        per_horizon_n: agg.per_horizon_n,
    })
}

/// Continue an interrupted run from its output directory.
pub fn resume(series: &DailyBivariateSeries, out_dir: &Path) -> Result<BacktestOutcome> {
    let cfg = read_manifest_config(out_dir)?;
    run_backtest(series, &cfg)
}

/// The previous window's fitted residual models, keyed by tag, read back
/// from its persisted file. `None` when the window is absent or skipped.
fn load_warm_models(cfg: &BacktestConfig, w: usize) -> Option<HashMap<ModelTag, ResidualModel>> {
    let doc = KvDoc::read_file(&window_path(&cfg.out_dir, w)).ok()?;
    if doc.get("status") != Some("completed") {
        return None;
    }
    let mut map = HashMap::new();
    for model in &cfg.models {
        if !model.uses_ladder() {
            continue;
        }
        // Rebuild the sub-document of this model's residual fit.
        let prefix = format!("model.{}.resid.", model.name());
        let mut sub = KvDoc::new();
        for key in doc.keys() {
            if let Some(plain) = key.strip_prefix(&prefix) {
                sub.set(plain, doc.get(key).expect("own key")).ok()?;
            }
        }
        if let Ok(parsed) = model_from_kv(&sub) {
            map.insert(parsed.tag(), parsed);
        }
    }
    Some(map)
}
