//! Ingestion of hourly electricity prices, aggregation to daily peak and
//! off-peak series, and descriptive cross-moment statistics.
//!
//! The peak price of a day is the mean of the 12 hourly day-ahead prices for
//! delivery hours 8:00-20:00 (hour labels 8..=19); the off-peak price is the
//! mean of the remaining 12 hours of the same calendar day. The base price is
//! recovered as the average of the two. Every calendar day is included,
//! weekends as well.
//!
//! Cross moments use the notation m_{i,j} = E[z1^i z2^j] where z1, z2 are the
//! two series standardized with the population (divide-by-n) standard
//! deviation, which makes m_{2,0} = m_{0,2} = 1 hold exactly. The descriptive
//! table's `sd` column uses the conventional sample (divide-by-(n-1))
//! standard deviation instead; both conventions are deliberate and exposed.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{Datelike, NaiveDate};

use crate::error::{Error, Result};

pub const HOURS_PER_DAY: usize = 24;
/// First delivery hour of the peak block (interval start label).
pub const PEAK_START_HOUR: usize = 8;
/// Last delivery hour of the peak block, inclusive.
pub const PEAK_END_HOUR: usize = 19;

/// Index of the off-peak series inside a bivariate pair.
pub const OFF_PEAK: usize = 0;
/// Index of the peak series inside a bivariate pair.
pub const PEAK: usize = 1;

fn is_peak_hour(hour: usize) -> bool {
    (PEAK_START_HOUR..=PEAK_END_HOUR).contains(&hour)
}

/// Hourly prices on a contiguous range of days, 24 values per day.
///
/// Construction normalizes clock-change days (23 or 25 raw records) so the
/// 24-per-day invariant holds: see [`HourlySeries::from_records`].
#[derive(Debug, Clone)]
pub struct HourlySeries {
    first_day: NaiveDate,
    prices: Vec<[f64; HOURS_PER_DAY]>,
    notes: Vec<String>,
}

impl HourlySeries {
    /// Build a series from raw `(date, hour, price)` records, in any order.
    ///
    /// Days must form a contiguous date range. A day normally has 24 distinct
    /// hours. Clock-change days are normalized: a 23-record day (one missing
    /// hour) duplicates the adjacent earlier hour's price into the gap, and a
    /// 25-record day (one hour label appearing twice) averages the two prices
    /// for that label. Both cases are recorded in [`HourlySeries::notes`].
    /// Anything else (missing days, several missing hours, non-finite prices)
    /// is an error naming the offending date.
    pub fn from_records(records: &[(NaiveDate, u8, f64)]) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Data("no hourly records supplied".into()));
        }
        let mut by_day: BTreeMap<NaiveDate, Vec<(u8, f64)>> = BTreeMap::new();
        for &(date, hour, price) in records {
            if hour as usize >= HOURS_PER_DAY {
                return Err(Error::Data(format!("{date}: hour {hour} out of range 0..=23")));
            }
            if !price.is_finite() {
                return Err(Error::Data(format!("{date} hour {hour}: non-finite price")));
            }
            by_day.entry(date).or_default().push((hour, price));
        }

        let mut notes = Vec::new();
        let mut prices = Vec::with_capacity(by_day.len());
        let first_day = *by_day.keys().next().expect("nonempty");
        let mut expected = first_day;
        for (date, recs) in &by_day {
            if *date != expected {
                return Err(Error::Data(format!(
                    "missing day {expected}: days must be contiguous"
                )));
            }
            expected = expected.succ_opt().ok_or_else(|| {
                Error::Data(format!("date overflow after {date}"))
            })?;
            prices.push(normalize_day(*date, recs, &mut notes)?);
        }
        Ok(Self { first_day, prices, notes })
    }

    pub fn len_days(&self) -> usize {
        self.prices.len()
    }

    pub fn first_day(&self) -> NaiveDate {
        self.first_day
    }

    pub fn day_prices(&self, index: usize) -> &[f64; HOURS_PER_DAY] {
        &self.prices[index]
    }

    pub fn date_at(&self, index: usize) -> NaiveDate {
        self.first_day + chrono::Days::new(index as u64)
    }

    /// Diagnostics emitted while normalizing clock-change days.
    pub fn notes(&self) -> &[String] {
        &self.notes
    }
}

/// Turn one day's raw records into 24 hourly prices, normalizing DST days.
fn normalize_day(
    date: NaiveDate,
    recs: &[(u8, f64)],
    notes: &mut Vec<String>,
) -> Result<[f64; HOURS_PER_DAY]> {
    let mut buckets: [Vec<f64>; HOURS_PER_DAY] = Default::default();
    for &(hour, price) in recs {
        buckets[hour as usize].push(price);
    }
    let missing: Vec<usize> = (0..HOURS_PER_DAY).filter(|&h| buckets[h].is_empty()).collect();
    let doubled: Vec<usize> = (0..HOURS_PER_DAY).filter(|&h| buckets[h].len() == 2).collect();
    let overfull: Vec<usize> = (0..HOURS_PER_DAY).filter(|&h| buckets[h].len() > 2).collect();

    if !overfull.is_empty() {
        return Err(Error::Data(format!(
            "{date}: hour {} appears more than twice",
            overfull[0]
        )));
    }
    match (missing.len(), doubled.len()) {
        (0, 0) => {}
        (1, 0) => {
            // Spring clock change: one missing hour, filled by duplicating
            // the neighboring hour's price.
            let gap = missing[0];
            let donor = if gap == 0 { 1 } else { gap - 1 };
            let value = buckets[donor][0];
            buckets[gap].push(value);
            notes.push(format!(
                "{date}: 23-hour day, filled hour {gap} by duplicating hour {donor}"
            ));
        }
        (0, 1) => {
            // Autumn clock change: one hour label recorded twice, averaged.
            let label = doubled[0];
            notes.push(format!(
                "{date}: 25-hour day, averaged the two prices for hour {label}"
            ));
        }
        _ => {
            return Err(Error::Data(format!(
                "{date}: incomplete day ({} hourly records)",
                recs.len()
            )));
        }
    }

    let mut out = [0.0; HOURS_PER_DAY];
    for (hour, bucket) in buckets.iter().enumerate() {
        out[hour] = if bucket.len() == 2 {
            (bucket[0] + bucket[1]) / 2.0
        } else {
            bucket[0]
        };
    }
    Ok(out)
}

/// Daily bivariate series of (off-peak, peak) prices on contiguous dates.
#[derive(Debug, Clone, PartialEq)]
pub struct DailyBivariateSeries {
    first_day: NaiveDate,
    values: Vec<[f64; 2]>,
}

impl DailyBivariateSeries {
    pub fn new(first_day: NaiveDate, values: Vec<[f64; 2]>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Data("empty daily series".into()));
        }
        for (i, v) in values.iter().enumerate() {
            if !v[0].is_finite() || !v[1].is_finite() {
                let date = first_day + chrono::Days::new(i as u64);
                return Err(Error::Data(format!("{date}: non-finite daily value")));
            }
        }
        Ok(Self { first_day, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn first_day(&self) -> NaiveDate {
        self.first_day
    }

    pub fn last_day(&self) -> NaiveDate {
        self.date_at(self.len() - 1)
    }

    pub fn date_at(&self, index: usize) -> NaiveDate {
        self.first_day + chrono::Days::new(index as u64)
    }

    /// Day of week of day `index`: 1 = Monday ... 7 = Sunday.
    pub fn day_of_week(&self, index: usize) -> u32 {
        self.date_at(index).weekday().number_from_monday()
    }

    pub fn values(&self) -> &[[f64; 2]] {
        &self.values
    }

    pub fn get(&self, index: usize) -> [f64; 2] {
        self.values[index]
    }

    /// Copy of the sub-series of `len` days starting at day `start`.
    pub fn window(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.values.len() || len == 0 {
            return Err(Error::Layout(format!(
                "window [{start}, {start}+{len}) out of range for series of length {}",
                self.values.len()
            )));
        }
        Ok(Self {
            first_day: self.date_at(start),
            values: self.values[start..start + len].to_vec(),
        })
    }

    /// One series as a plain vector (0 = off-peak, 1 = peak).
    pub fn series(&self, i: usize) -> Vec<f64> {
        self.values.iter().map(|v| v[i]).collect()
    }
}

/// Aggregate hourly prices to the daily (off-peak, peak) pair per day.
pub fn aggregate_daily(hourly: &HourlySeries) -> Result<DailyBivariateSeries> {
    let mut values = Vec::with_capacity(hourly.len_days());
    for d in 0..hourly.len_days() {
        let day = hourly.day_prices(d);
        let mut peak_sum = 0.0;
        let mut off_sum = 0.0;
        for (hour, &price) in day.iter().enumerate() {
            if is_peak_hour(hour) {
                peak_sum += price;
            } else {
                off_sum += price;
            }
        }
        let pair = [off_sum / 12.0, peak_sum / 12.0];
        if !pair[0].is_finite() || !pair[1].is_finite() {
            return Err(Error::Data(format!(
                "{}: non-finite aggregated price",
                hourly.date_at(d)
            )));
        }
        values.push(pair);
    }
    DailyBivariateSeries::new(hourly.first_day(), values)
}

/// Base price of a day: the average of the off-peak and peak prices, which
/// equals the mean of all 24 hourly prices.
pub fn base_from_peak_offpeak(pair: [f64; 2]) -> f64 {
    (pair[OFF_PEAK] + pair[PEAK]) / 2.0
}

/// Per-series summary used by the standardized moments.
fn population_standardize(series: &DailyBivariateSeries) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = series.len();
    if n < 2 {
        return Err(Error::Data("need at least 2 days for moments".into()));
    }
    let mut out = Vec::with_capacity(2);
    for i in 0..2 {
        let vals = series.series(i);
        let mean = vals.iter().sum::<f64>() / n as f64;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        if var <= 0.0 {
            return Err(Error::Data(format!("series {} has zero variance", i + 1)));
        }
        let sd = var.sqrt();
        out.push(vals.iter().map(|v| (v - mean) / sd).collect::<Vec<f64>>());
    }
    let peak = out.pop().expect("two series");
    let off = out.pop().expect("two series");
    Ok((off, peak))
}

/// Sample estimator of the standardized cross moment
/// m_{i,j} = mean over days of z1^i * z2^j, with population-sd
/// standardization (so `standardized_moment(s, 2, 0) == 1` exactly up to
/// rounding).
pub fn standardized_moment(series: &DailyBivariateSeries, i: u32, j: u32) -> Result<f64> {
    let (z1, z2) = population_standardize(series)?;
    let n = z1.len() as f64;
    let total: f64 = z1
        .iter()
        .zip(&z2)
        .map(|(a, b)| a.powi(i as i32) * b.powi(j as i32))
        .sum();
    Ok(total / n)
}

/// Descriptive statistics of both series plus the cross moments.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentTable {
    pub mean: [f64; 2],
    /// Sample (divide-by-(n-1)) standard deviation.
    pub sd: [f64; 2],
    pub median: [f64; 2],
    pub min: [f64; 2],
    pub max: [f64; 2],
    /// Correlation, the m_{1,1} cross moment (same for both series).
    pub correlation: f64,
    /// Skewness per series: m_{3,0} and m_{0,3}.
    pub skewness: [f64; 2],
    /// Coskewness per series: m_{2,1} and m_{1,2}.
    pub coskewness: [f64; 2],
    pub days: usize,
}

fn median_of(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Compute the full descriptive table.
pub fn descriptive_stats(series: &DailyBivariateSeries) -> Result<MomentTable> {
    let n = series.len();
    // Validates length and non-degeneracy before anything else.
    let correlation = standardized_moment(series, 1, 1)?;
    let mut mean = [0.0; 2];
    let mut sd = [0.0; 2];
    let mut median = [0.0; 2];
    let mut min = [0.0; 2];
    let mut max = [0.0; 2];
    for i in 0..2 {
        let mut vals = series.series(i);
        mean[i] = vals.iter().sum::<f64>() / n as f64;
        let ss: f64 = vals.iter().map(|v| (v - mean[i]) * (v - mean[i])).sum();
        sd[i] = (ss / (n as f64 - 1.0)).sqrt();
        min[i] = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        max[i] = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        median[i] = median_of(&mut vals);
    }
    let skewness = [
        standardized_moment(series, 3, 0)?,
        standardized_moment(series, 0, 3)?,
    ];
    let coskewness = [
        standardized_moment(series, 2, 1)?,
        standardized_moment(series, 1, 2)?,
    ];
    Ok(MomentTable {
        mean,
        sd,
        median,
        min,
        max,
        correlation,
        skewness,
        coskewness,
        days: n,
    })
}

impl MomentTable {
    /// Human-readable table: one row per series with 9 columns
    /// (series, mean, sd, median, min, max, cor, skewness, coskewness).
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<10} {:>9} {:>9} {:>9} {:>9} {:>9} {:>7} {:>9} {:>9}\n",
            "series", "mean", "sd", "median", "min", "max", "cor", "skew", "coskew"
        ));
        for (name, i) in [("off-peak", OFF_PEAK), ("peak", PEAK)] {
            out.push_str(&format!(
                "{:<10} {:>9.2} {:>9.2} {:>9.2} {:>9.2} {:>9.2} {:>7.2} {:>9.2} {:>9.2}\n",
                name,
                self.mean[i],
                self.sd[i],
                self.median[i],
                self.min[i],
                self.max[i],
                self.correlation,
                self.skewness[i],
                self.coskewness[i],
            ));
        }
        out.push_str(&format!("days = {}\n", self.days));
        out
    }
}

/// What an input file turned out to contain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputKind {
    /// `date, hour, price` records, 23-25 per day.
    Hourly,
    /// `date, off-peak, peak` records, one per day.
    DailyPairs,
}

/// Result of reading an input file: the daily series plus ingestion
/// diagnostics (clock-change normalizations and the detected format).
#[derive(Debug, Clone)]
pub struct IngestReport {
    pub series: DailyBivariateSeries,
    pub kind: InputKind,
    pub notes: Vec<String>,
}

fn split_fields(line: &str) -> Vec<&str> {
    line.split(|c: char| c == ',' || c == ';' || c.is_whitespace())
        .filter(|f| !f.is_empty())
        .collect()
}

fn parse_date(field: &str, lineno: usize) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(field, "%Y-%m-%d")
        .map_err(|_| Error::Parse(format!("line {lineno}: bad date {field:?} (want YYYY-MM-DD)")))
}

/// Parse delimited text records.
///
/// Two layouts are accepted, both three fields per line (comma, semicolon,
/// or whitespace separated; `#` comments and an optional header line are
/// skipped):
///
/// * hourly: `date, hour (0-23), price` with 23-25 records per day;
/// * pre-aggregated: `date, off-peak, peak`, one record per day.
///
/// The layout is detected from the records themselves: an integer second
/// field in 0..=23 with repeated dates reads as hourly; unique dates with
/// decimal fields read as pre-aggregated. If both interpretations are valid
/// the input is ambiguous and rejected.
pub fn parse_series_text(text: &str) -> Result<IngestReport> {
    struct Row<'a> {
        lineno: usize,
        date: NaiveDate,
        f1: &'a str,
        f2: &'a str,
    }
    let mut rows: Vec<Row> = Vec::new();
    let mut header_skipped = false;
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields = split_fields(line);
        if fields.len() != 3 {
            if rows.is_empty() && !header_skipped {
                header_skipped = true;
                continue;
            }
            return Err(Error::Parse(format!(
                "line {}: expected 3 fields, got {}",
                idx + 1,
                fields.len()
            )));
        }
        let date = match parse_date(fields[0], idx + 1) {
            Ok(d) => d,
            Err(e) => {
                // Allow a single leading header line whose fields do not
                // parse as data.
                if rows.is_empty() && !header_skipped {
                    header_skipped = true;
                    continue;
                }
                return Err(e);
            }
        };
        rows.push(Row { lineno: idx + 1, date, f1: fields[1], f2: fields[2] });
    }
    if rows.is_empty() {
        return Err(Error::Data("no data records in input".into()));
    }

    // Try the hourly interpretation.
    let hourly_attempt: Result<HourlySeries> = (|| {
        let mut records = Vec::with_capacity(rows.len());
        for row in &rows {
            let hour: u8 = row.f1.parse().map_err(|_| {
                Error::Parse(format!(
                    "line {}: hour field {:?} is not an integer",
                    row.lineno, row.f1
                ))
            })?;
            if hour >= 24 {
                return Err(Error::Parse(format!(
                    "line {}: hour {hour} out of range 0..=23",
                    row.lineno
                )));
            }
            let price: f64 = row.f2.parse().map_err(|_| {
                Error::Parse(format!("line {}: bad price {:?}", row.lineno, row.f2))
            })?;
            records.push((row.date, hour, price));
        }
        HourlySeries::from_records(&records)
    })();

    // Try the pre-aggregated interpretation.
    let daily_attempt: Result<DailyBivariateSeries> = (|| {
        let mut seen = BTreeMap::new();
        for row in &rows {
            let off: f64 = row.f1.parse().map_err(|_| {
                Error::Parse(format!("line {}: bad off-peak value {:?}", row.lineno, row.f1))
            })?;
            let peak: f64 = row.f2.parse().map_err(|_| {
                Error::Parse(format!("line {}: bad peak value {:?}", row.lineno, row.f2))
            })?;
            if seen.insert(row.date, [off, peak]).is_some() {
                return Err(Error::Data(format!(
                    "duplicate date {} in pre-aggregated input",
                    row.date
                )));
            }
        }
        let first = *seen.keys().next().expect("nonempty");
        let mut expected = first;
        let mut values = Vec::with_capacity(seen.len());
        for (date, pair) in seen {
            if date != expected {
                return Err(Error::Data(format!(
                    "missing day {expected}: days must be contiguous"
                )));
            }
            expected = expected.succ_opt().ok_or_else(|| {
                Error::Data(format!("date overflow after {date}"))
            })?;
            values.push(pair);
        }
        DailyBivariateSeries::new(first, values)
    })();

    match (hourly_attempt, daily_attempt) {
        (Ok(_), Ok(_)) => Err(Error::Data(
            "ambiguous input: records parse as both hourly and pre-aggregated daily data".into(),
        )),
        (Ok(hourly), Err(_)) => {
            let series = aggregate_daily(&hourly)?;
            Ok(IngestReport {
                series,
                kind: InputKind::Hourly,
                notes: hourly.notes().to_vec(),
            })
        }
        (Err(_), Ok(series)) => Ok(IngestReport {
            series,
            kind: InputKind::DailyPairs,
            notes: Vec::new(),
        }),
        (Err(hourly_err), Err(daily_err)) => Err(Error::Parse(format!(
            "input matches neither layout; as hourly data: {hourly_err}; as daily pairs: {daily_err}"
        ))),
    }
}

/// Read and parse an input file (see [`parse_series_text`]).
pub fn read_series_file(path: &Path) -> Result<IngestReport> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    parse_series_text(&text)
}
