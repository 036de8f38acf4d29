//! Forecast evaluation: absolute and squared errors, pinball loss over a
//! fixed quantile grid, the energy score with its distance/interdependence
//! decomposition, and the Diebold-Mariano comparison test.
//!
//! Conventions:
//! * the absolute error is taken against the ensemble **median**, the
//!   squared error against the ensemble **mean**;
//! * the pinball day value averages the per-quantile losses over the grid
//!   `{0.01, ..., 0.99}`;
//! * the energy score uses the consecutive-circular interdependence
//!   estimator (`Y[M+1] = Y[1]`), so it depends on path order — the
//!   backtest keeps paths in generation order;
//! * the Diebold-Mariano statistic uses the plain i.i.d. sample variance by
//!   default, with a Newey-West (Bartlett) variant available separately.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::kv::format_f64;
use crate::simulator::{ensemble_mean, quantile_of_sorted, PathEnsemble};

/// Number of points in the evaluation quantile grid.
pub const QUANTILE_GRID_K: usize = 99;

/// The evaluation grid `{0.01, 0.02, ..., 0.99}`.
pub fn quantile_grid() -> Vec<f64> {
    (1..=QUANTILE_GRID_K).map(|k| k as f64 / 100.0).collect()
}

/// Absolute error of a median forecast.
pub fn ae(obs: f64, median_forecast: f64) -> f64 {
    (obs - median_forecast).abs()
}

/// Squared error of a mean forecast.
pub fn se(obs: f64, mean_forecast: f64) -> f64 {
    (obs - mean_forecast) * (obs - mean_forecast)
}

/// Pinball loss of a single quantile forecast at level `q`:
/// `(1-q)(f - y)` when the forecast overshoots, `q(y - f)` otherwise.
pub fn pinball(obs: f64, forecast: f64, q: f64) -> f64 {
    if forecast >= obs {
        (1.0 - q) * (forecast - obs)
    } else {
        q * (obs - forecast)
    }
}

/// Per-quantile pinball losses over the grid plus their mean (the day
/// value). `quantile_forecasts` must be aligned with [`quantile_grid`].
pub fn pinball_day(obs: f64, quantile_forecasts: &[f64]) -> Result<(Vec<f64>, f64)> {
    if quantile_forecasts.len() != QUANTILE_GRID_K {
        return Err(Error::InvalidParam(format!(
            "expected {QUANTILE_GRID_K} quantile forecasts, got {}",
            quantile_forecasts.len()
        )));
    }
    let losses: Vec<f64> = quantile_grid()
        .iter()
        .zip(quantile_forecasts)
        .map(|(&q, &f)| pinball(obs, f, q))
        .collect();
    let mean = losses.iter().sum::<f64>() / losses.len() as f64;
    Ok((losses, mean))
}

/// Energy-score decomposition of one day: the score itself, the mean
/// distance to the observation, and the circular interdependence term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyDecomposition {
    pub es: f64,
    pub ed: f64,
    pub ei: f64,
}

fn euclid(a: [f64; 2], b: [f64; 2]) -> f64 {
    let d0 = a[0] - b[0];
    let d1 = a[1] - b[1];
    (d0 * d0 + d1 * d1).sqrt()
}

/// Energy score of an M-member bivariate ensemble against one observation:
/// `ED = (1/M) sum ||Y[m] - Y||`, `EI = (1/M) sum ||Y[m] - Y[m+1]||` with
/// circular closure, `ES = ED - EI/2`.
pub fn energy_score_day(paths: &[[f64; 2]], obs: [f64; 2]) -> Result<EnergyDecomposition> {
    if paths.is_empty() {
        return Err(Error::InvalidParam("energy score of an empty ensemble".into()));
    }
    let m = paths.len();
    let mut ed = 0.0;
    let mut ei = 0.0;
    for (k, p) in paths.iter().enumerate() {
        ed += euclid(*p, obs);
        ei += euclid(*p, paths[(k + 1) % m]);
    }
    ed /= m as f64;
    ei /= m as f64;
    Ok(EnergyDecomposition { es: ed - 0.5 * ei, ed, ei })
}

/// Arithmetic mean of a loss series.
pub fn aggregate(losses: &[f64]) -> Result<f64> {
    if losses.is_empty() {
        return Err(Error::InvalidParam("mean of an empty loss series".into()));
    }
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

// ---------------------------------------------------------------------------
// Diebold-Mariano
// ---------------------------------------------------------------------------

/// Outcome of a Diebold-Mariano comparison. The statistic is
/// `mean(delta) / (sd(delta)/sqrt(N))` with `delta = loss_a - loss_b`;
/// negative values favor the first series. Both one-sided p-values come
/// from the standard normal. A loss differential with zero sample variance
/// (identical series, or a constant shift) carries no information about
/// the variance and is flagged as degenerate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DmOutcome {
    Statistic {
        t: f64,
        /// P-value of the one-sided test that the FIRST series has lower
        /// expected loss.
        p_first_better: f64,
        /// P-value of the one-sided test that the SECOND series has lower
        /// expected loss.
        p_second_better: f64,
    },
    Degenerate,
}

fn dm_from_mean_var(mean: f64, var: f64, n: usize) -> DmOutcome {
    if !(var > 0.0) || !var.is_finite() {
        return DmOutcome::Degenerate;
    }
    let t = mean / (var / n as f64).sqrt();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    DmOutcome::Statistic { t, p_first_better: normal.cdf(t), p_second_better: 1.0 - normal.cdf(t) }
}

fn check_dm_inputs(loss_a: &[f64], loss_b: &[f64]) -> Result<Vec<f64>> {
    if loss_a.len() != loss_b.len() {
        return Err(Error::InvalidParam(format!(
            "loss series lengths differ: {} vs {}",
            loss_a.len(),
            loss_b.len()
        )));
    }
    if loss_a.len() < 2 {
        return Err(Error::InvalidParam("need at least 2 loss pairs".into()));
    }
    let delta: Vec<f64> = loss_a.iter().zip(loss_b).map(|(a, b)| a - b).collect();
    if delta.iter().any(|d| !d.is_finite()) {
        return Err(Error::Numerical("non-finite loss differential".into()));
    }
    Ok(delta)
}

/// Diebold-Mariano test with the plain sample variance (no autocorrelation
/// correction).
pub fn dm_test(loss_a: &[f64], loss_b: &[f64]) -> Result<DmOutcome> {
    let delta = check_dm_inputs(loss_a, loss_b)?;
    let n = delta.len();
    let mean = delta.iter().sum::<f64>() / n as f64;
    let var = delta.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n as f64 - 1.0);
    Ok(dm_from_mean_var(mean, var, n))
}

/// Diebold-Mariano test with a Newey-West long-run variance using Bartlett
/// weights up to `max_lag`; `max_lag = 0` reduces to the uncorrected
/// (population-variance) statistic.
pub fn dm_test_hac(loss_a: &[f64], loss_b: &[f64], max_lag: usize) -> Result<DmOutcome> {
    let delta = check_dm_inputs(loss_a, loss_b)?;
    let n = delta.len();
    if max_lag >= n {
        return Err(Error::InvalidParam(format!(
            "HAC lag {max_lag} must be below the series length {n}"
        )));
    }
    let mean = delta.iter().sum::<f64>() / n as f64;
    let gamma = |lag: usize| -> f64 {
        (lag..n).map(|d| (delta[d] - mean) * (delta[d - lag] - mean)).sum::<f64>() / n as f64
    };
    let mut var = gamma(0);
    for lag in 1..=max_lag {
        let weight = 1.0 - lag as f64 / (max_lag as f64 + 1.0);
        var += 2.0 * weight * gamma(lag);
    }
    Ok(dm_from_mean_var(mean, var, n))
}

// ---------------------------------------------------------------------------
// Window scoring
// ---------------------------------------------------------------------------

/// The nine per-day losses of one model at one horizon: absolute and
/// squared errors and mean pinball per series, then the joint energy-score
/// decomposition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DayLosses {
    pub ae: [f64; 2],
    pub se: [f64; 2],
    pub pb: [f64; 2],
    pub es: f64,
    pub ed: f64,
    pub ei: f64,
}

/// Number of values in the fixed flattening order.
pub const DAY_LOSS_COUNT: usize = 9;

impl DayLosses {
    /// Fixed persistence order:
    /// `ae1 ae2 se1 se2 pb1 pb2 es ed ei`.
    pub fn flatten(&self) -> [f64; DAY_LOSS_COUNT] {
        [
            self.ae[0], self.ae[1], self.se[0], self.se[1], self.pb[0], self.pb[1], self.es,
            self.ed, self.ei,
        ]
    }

    pub fn from_flat(values: &[f64]) -> Result<Self> {
        if values.len() != DAY_LOSS_COUNT {
            return Err(Error::Parse(format!(
                "expected {DAY_LOSS_COUNT} loss values, got {}",
                values.len()
            )));
        }
        Ok(Self {
            ae: [values[0], values[1]],
            se: [values[2], values[3]],
            pb: [values[4], values[5]],
            es: values[6],
            ed: values[7],
            ei: values[8],
        })
    }

    /// The value of one named criterion; series-resolved criteria take
    /// `series` 0/1, joint criteria ignore it.
    pub fn criterion(&self, name: &str, series: usize) -> Result<f64> {
        match name {
            "ae" => Ok(self.ae[series]),
            "se" => Ok(self.se[series]),
            "pb" => Ok(self.pb[series]),
            "es" => Ok(self.es),
            "ed" => Ok(self.ed),
            "ei" => Ok(self.ei),
            other => Err(Error::InvalidParam(format!("unknown criterion {other}"))),
        }
    }
}

/// Score one simulated ensemble against the realized pairs of its horizon
/// dates (one pair per horizon, in horizon order). Every published
/// criterion flows through this single path: the absolute error uses the
/// ensemble median, the squared error the ensemble mean, pinball the grid
/// quantiles, and the energy score the paths in generation order.
pub fn score_window(ensemble: &PathEnsemble, realized: &[[f64; 2]]) -> Result<Vec<DayLosses>> {
    if realized.len() != ensemble.horizons() {
        return Err(Error::InvalidParam(format!(
            "{} realized pairs for {} horizons",
            realized.len(),
            ensemble.horizons()
        )));
    }
    if realized.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite realized value".into()));
    }
    let grid = quantile_grid();
    let mut out = Vec::with_capacity(realized.len());
    for (h0, obs) in realized.iter().enumerate() {
        let h = h0 + 1;
        let mut ae_h = [0.0; 2];
        let mut se_h = [0.0; 2];
        let mut pb_h = [0.0; 2];
        for i in 0..2 {
            let mut values = ensemble.horizon_values(h, i)?;
            let mean = ensemble_mean(ensemble, h, i)?;
            values.sort_by(f64::total_cmp);
            let median = quantile_of_sorted(&values, 0.5)?;
            let forecasts: Vec<f64> = grid
                .iter()
                .map(|&q| quantile_of_sorted(&values, q))
                .collect::<Result<Vec<_>>>()?;
            ae_h[i] = ae(obs[i], median);
            se_h[i] = se(obs[i], mean);
            pb_h[i] = pinball_day(obs[i], &forecasts)?.1;
        }
        let paths: Vec<[f64; 2]> = (0..ensemble.paths())
            .map(|m| -> Result<[f64; 2]> {
                Ok([ensemble.value(m, h, 0)?, ensemble.value(m, h, 1)?])
            })
            .collect::<Result<Vec<_>>>()?;
        let energy = energy_score_day(&paths, *obs)?;
        out.push(DayLosses {
            ae: ae_h,
            se: se_h,
            pb: pb_h,
            es: energy.es,
            ed: energy.ed,
            ei: energy.ei,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Aggregated report
// ---------------------------------------------------------------------------

/// Mean losses per horizon over the evaluation windows.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreReport {
    /// `mae[h-1][i]`, etc.
    pub mae: Vec<[f64; 2]>,
    pub mse: Vec<[f64; 2]>,
    pub pb: Vec<[f64; 2]>,
    pub es: Vec<f64>,
    pub ed: Vec<f64>,
    pub ei: Vec<f64>,
}

impl ScoreReport {
    /// Average per-window losses (an `N x H` table of day losses) into the
    /// per-horizon report.
    pub fn from_day_losses(per_window: &[Vec<DayLosses>]) -> Result<Self> {
        if per_window.is_empty() {
            return Err(Error::InvalidParam("no windows to aggregate".into()));
        }
        let horizons = per_window[0].len();
        if horizons == 0 || per_window.iter().any(|w| w.len() != horizons) {
            return Err(Error::InvalidParam("ragged day-loss table".into()));
        }
        let n = per_window.len() as f64;
        let mut report = ScoreReport {
            mae: vec![[0.0; 2]; horizons],
            mse: vec![[0.0; 2]; horizons],
            pb: vec![[0.0; 2]; horizons],
            es: vec![0.0; horizons],
            ed: vec![0.0; horizons],
            ei: vec![0.0; horizons],
        };
        for window in per_window {
            for (h0, day) in window.iter().enumerate() {
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
        Ok(report)
    }

    pub fn horizons(&self) -> usize {
        self.es.len()
    }

    /// Delimited rows `model horizon criterion series value`, one per
    /// criterion cell, tab-separated. Joint criteria carry series `joint`.
    pub fn delimited_rows(&self, model: &str) -> String {
        let mut out = String::new();
        for h in 1..=self.horizons() {
            for (name, values) in
                [("mae", &self.mae), ("mse", &self.mse), ("pb", &self.pb)]
            {
                for i in 0..2 {
                    out.push_str(&format!(
                        "{model}\t{h}\t{name}\t{}\t{}\n",
                        i + 1,
                        format_f64(values[h - 1][i])
                    ));
                }
            }
            for (name, values) in [("es", &self.es), ("ed", &self.ed), ("ei", &self.ei)] {
                out.push_str(&format!(
                    "{model}\t{h}\t{name}\tjoint\t{}\n",
                    format_f64(values[h - 1])
                ));
            }
        }
        out
    }
}
