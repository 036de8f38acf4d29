//! Regression targets and regressor rows for the autoregressive mean
//! equation.
//!
//! For each series i and day d the conditional mean is
//!
//! ```text
//! Y_{d,i} = b_{i,0}
//!         + sum_{k=1..8} ( b_{i,k,1} Y_{d-k,1} + b_{i,k,2} Y_{d-k,2} )
//!         + sum_{k=1..7} ( b_{i,k,3} + b_{i,k,4} Y_{d-1,1} + b_{i,k,5} Y_{d-1,2} ) DoW_d^k
//!         + e_{d,i}
//! ```
//!
//! where DoW_d^k is the day-of-week dummy (1 = Monday ... 7 = Sunday). The
//! full layout has p = 1 + 2*8 + 3*7 = 38 columns. A reduced layout drops the
//! two Wednesday lag-interaction columns (p = 36); the plain least-squares
//! variant uses it because the intercept plus the complete dummy set is
//! already collinear, and the reduced interaction set is the conventional
//! remedy for the interaction block. The dummy block itself is kept intact in
//! both layouts.
//!
//! Rows exist for days 8.. of a window (the first 8 days only feed lags).

use chrono::{Datelike, NaiveDate};
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::market_data::DailyBivariateSeries;

/// Autoregressive lag order.
pub const LAG_ORDER: usize = 8;
/// Number of day-of-week dummies.
pub const DOW_COUNT: usize = 7;
/// Day-of-week index (1-based) whose lag interactions the reduced layout
/// drops: Wednesday.
pub const DROPPED_INTERACTION_DOW: usize = 3;

const DOW_NAMES: [&str; DOW_COUNT] = ["Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun"];

/// Column layout selector for the mean equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DesignSpec {
    /// Keep the Wednesday lag-interaction pair (full layout) or drop it
    /// (reduced layout).
    pub wednesday_interactions: bool,
}

impl DesignSpec {
    /// Full layout, p = 38 columns.
    pub fn full() -> Self {
        Self { wednesday_interactions: true }
    }

    /// Reduced layout with the Wednesday lag-interaction pair dropped,
    /// p = 36 columns.
    pub fn reduced() -> Self {
        Self { wednesday_interactions: false }
    }

    /// Number of regressor columns.
    pub fn param_count(&self) -> usize {
        let base = 1 + 2 * LAG_ORDER + 3 * DOW_COUNT;
        if self.wednesday_interactions {
            base
        } else {
            base - 2
        }
    }

    /// Whether interactions with day-of-week `dow` (1-based) are included.
    fn has_interaction(&self, dow: usize) -> bool {
        self.wednesday_interactions || dow != DROPPED_INTERACTION_DOW
    }

    /// Column labels, in layout order: `cons`; lags of series 1 then series 2
    /// (`AR_k_i`); dummies `Mon..Sun`; lag-1 interactions with series 1 then
    /// series 2 (`Mon_AR_1_1`, ...).
    pub fn labels(&self) -> Vec<String> {
        let mut labels = Vec::with_capacity(self.param_count());
        labels.push("cons".to_string());
        for i in 1..=2 {
            for k in 1..=LAG_ORDER {
                labels.push(format!("AR_{k}_{i}"));
            }
        }
        for name in DOW_NAMES {
            labels.push(name.to_string());
        }
        for i in 1..=2 {
            for (idx, name) in DOW_NAMES.iter().enumerate() {
                if self.has_interaction(idx + 1) {
                    labels.push(format!("{name}_AR_1_{i}"));
                }
            }
        }
        labels
    }
}

/// A built regression problem for one target series.
#[derive(Debug, Clone)]
pub struct RegressionProblem {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub labels: Vec<String>,
    pub spec: DesignSpec,
    /// Target series index, 0 = off-peak, 1 = peak.
    pub target: usize,
    /// Date of the first target row (day 8 of the window).
    pub first_target_date: NaiveDate,
}

impl RegressionProblem {
    pub fn rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn cols(&self) -> usize {
        self.x.ncols()
    }
}

/// Regressor vector for a single day given its 8 lagged pairs.
///
/// `history` holds exactly the 8 previous daily pairs, most recent last
/// (`history[7]` is Y_{d-1}); `date` is the calendar day of the row itself.
pub fn build_forecast_row(
    history: &[[f64; 2]],
    date: NaiveDate,
    spec: DesignSpec,
) -> Result<Vec<f64>> {
    if history.len() != LAG_ORDER {
        return Err(Error::Layout(format!(
            "forecast row needs exactly {LAG_ORDER} lagged pairs, got {}",
            history.len()
        )));
    }
    let dow = date.weekday().number_from_monday() as usize;
    let prev = history[LAG_ORDER - 1];
    let mut row = Vec::with_capacity(spec.param_count());
    row.push(1.0);
    for i in 0..2 {
        for k in 1..=LAG_ORDER {
            row.push(history[LAG_ORDER - k][i]);
        }
    }
    for k in 1..=DOW_COUNT {
        row.push(if k == dow { 1.0 } else { 0.0 });
    }
    for i in 0..2 {
        for k in 1..=DOW_COUNT {
            if spec.has_interaction(k) {
                row.push(if k == dow { prev[i] } else { 0.0 });
            }
        }
    }
    debug_assert_eq!(row.len(), spec.param_count());
    Ok(row)
}

/// Build the regression problem for one target series over a window.
///
/// Row r corresponds to day d = r + 8 of `series`; the target entry is
/// Y_{d,target}.
pub fn build_problem(
    series: &DailyBivariateSeries,
    target: usize,
    spec: DesignSpec,
) -> Result<RegressionProblem> {
    if target > 1 {
        return Err(Error::Layout(format!("target series index {target} (want 0 or 1)")));
    }
    let n = series.len();
    if n <= LAG_ORDER {
        return Err(Error::Data(format!(
            "series too short for the lag structure: {n} days, need at least {}",
            LAG_ORDER + 1
        )));
    }
    let rows = n - LAG_ORDER;
    let p = spec.param_count();
    let values = series.values();
    let mut x = DMatrix::zeros(rows, p);
    let mut y = DVector::zeros(rows);
    for r in 0..rows {
        let d = r + LAG_ORDER;
        let row = build_forecast_row(&values[d - LAG_ORDER..d], series.date_at(d), spec)?;
        for (c, v) in row.into_iter().enumerate() {
            x[(r, c)] = v;
        }
        y[r] = values[d][target];
    }
    Ok(RegressionProblem {
        x,
        y,
        labels: spec.labels(),
        spec,
        target,
        first_target_date: series.date_at(LAG_ORDER),
    })
}
