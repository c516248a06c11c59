//! Bar ingestion, return/volume series, per-asset statistics and calendar
//! alignment between markets with different trading sessions.
//!
//! Bars are one row per interval with an open timestamp in UTC epoch
//! milliseconds. Missing intervals are never filled: they are recorded as
//! [`Gap`]s and any return or volume interval that touches one is dropped.

use std::fmt;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats;

pub const MINUTE_MS: i64 = 60_000;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("integrity error at line {line}: {message}")]
    Integrity { line: usize, message: String },
    #[error("non-positive close {price} at timestamp {timestamp}")]
    Domain { timestamp: i64, price: f64 },
    #[error("degenerate series: zero standard deviation")]
    Degenerate,
    #[error("invalid sampling interval: {0}")]
    InvalidInterval(String),
    #[error("insufficient data: {0}")]
    Insufficient(String),
    #[error("mean inter-trade time undefined: series has zero trades")]
    NoTrades,
    #[error("alignment failed: {0}")]
    Alignment(String),
    #[error("session spec line {line}: {message}")]
    Session { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, IngestError>;

/// One OHLCV bar. `volume` is the quote-currency value traded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bar {
    pub timestamp: i64,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub volume: f64,
    pub trade_count: u64,
}

impl Bar {
    fn check(&self) -> std::result::Result<(), String> {
        let lo = self.open.min(self.close);
        let hi = self.open.max(self.close);
        if !(self.low <= lo && hi <= self.high) {
            return Err(format!(
                "OHLC violates low <= min(open, close) <= max(open, close) <= high \
                 (o={}, h={}, l={}, c={})",
                self.open, self.high, self.low, self.close
            ));
        }
        if !(self.volume >= 0.0) {
            return Err(format!("negative volume {}", self.volume));
        }
        Ok(())
    }
}

/// A run of missing bars: `missing` intervals directly after the bar
/// stamped `after`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gap {
    pub after: i64,
    pub missing: usize,
}

impl Gap {
    pub fn missing_timestamps(&self, interval_ms: i64) -> impl Iterator<Item = i64> + '_ {
        let after = self.after;
        (1..=self.missing as i64).map(move |k| after + k * interval_ms)
    }
}

/// Validated, strictly increasing bars on a fixed interval grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarSeries {
    pub symbol: String,
    pub interval_ms: i64,
    bars: Vec<Bar>,
    gaps: Vec<Gap>,
}

impl BarSeries {
    /// Validate `bars` (already sorted) and record gaps.
    pub fn new(symbol: impl Into<String>, interval_ms: i64, bars: Vec<Bar>) -> Result<Self> {
        let lines: Vec<usize> = (1..=bars.len()).collect();
        Self::with_lines(symbol.into(), interval_ms, bars, &lines)
    }

    fn with_lines(symbol: String, interval_ms: i64, bars: Vec<Bar>, lines: &[usize]) -> Result<Self> {
        if interval_ms <= 0 {
            return Err(IngestError::InvalidInterval(format!(
                "bar interval must be positive, got {interval_ms} ms"
            )));
        }
        let mut gaps = Vec::new();
        for (i, bar) in bars.iter().enumerate() {
            bar.check().map_err(|message| IngestError::Integrity {
                line: lines[i],
                message,
            })?;
            if i == 0 {
                continue;
            }
            let prev = bars[i - 1].timestamp;
            let diff = bar.timestamp - prev;
            if diff <= 0 {
                return Err(IngestError::Integrity {
                    line: lines[i],
                    message: format!(
                        "timestamp {} not strictly after {} (line {})",
                        bar.timestamp,
                        prev,
                        lines[i - 1]
                    ),
                });
            }
            if diff % interval_ms != 0 {
                return Err(IngestError::Integrity {
                    line: lines[i],
                    message: format!("timestamp {} is off the {interval_ms} ms grid", bar.timestamp),
                });
            }
            let missing = (diff / interval_ms - 1) as usize;
            if missing > 0 {
                gaps.push(Gap { after: prev, missing });
            }
        }
        Ok(Self {
            symbol,
            interval_ms,
            bars,
            gaps,
        })
    }

    pub fn bars(&self) -> &[Bar] {
        &self.bars
    }

    pub fn gaps(&self) -> &[Gap] {
        &self.gaps
    }

    pub fn len(&self) -> usize {
        self.bars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bars.is_empty()
    }

    pub fn timestamps(&self) -> impl Iterator<Item = i64> + '_ {
        self.bars.iter().map(|b| b.timestamp)
    }

    /// Every timestamp absent from the grid between the first and last bar.
    pub fn missing_timestamps(&self) -> Vec<i64> {
        self.gaps
            .iter()
            .flat_map(|g| g.missing_timestamps(self.interval_ms))
            .collect()
    }

    /// Keep only bars whose timestamp satisfies `keep`; gaps are recomputed.
    pub fn filter(&self, mut keep: impl FnMut(i64) -> bool) -> BarSeries {
        let bars: Vec<Bar> = self.bars.iter().copied().filter(|b| keep(b.timestamp)).collect();
        BarSeries::new(self.symbol.clone(), self.interval_ms, bars)
            .expect("subset of a valid series is valid")
    }
}

/// Column positions inside a bar file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Columns {
    /// Resolve by header name: `timestamp,open,high,low,close,volume,trade_count`.
    Named,
    /// Fixed zero-based indices for headerless exports.
    Indexed {
        timestamp: usize,
        open: usize,
        high: usize,
        low: usize,
        close: usize,
        volume: usize,
        trade_count: usize,
    },
}

/// How to read a bar file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BarFormat {
    pub interval_ms: i64,
    pub has_header: bool,
    pub delimiter: u8,
    pub columns: Columns,
}

impl BarFormat {
    /// Native one-minute CSV with header
    /// `timestamp,open,high,low,close,volume,trade_count`.
    pub fn native() -> Self {
        Self {
            interval_ms: MINUTE_MS,
            has_header: true,
            delimiter: b',',
            columns: Columns::Named,
        }
    }

    /// Headerless Binance kline export. Volume is taken from the quote-asset
    /// volume column (index 7) and the trade count from index 8.
    pub fn binance_kline() -> Self {
        Self {
            interval_ms: MINUTE_MS,
            has_header: false,
            delimiter: b',',
            columns: Columns::Indexed {
                timestamp: 0,
                open: 1,
                high: 2,
                low: 3,
                close: 4,
                volume: 7,
                trade_count: 8,
            },
        }
    }
}

impl Default for BarFormat {
    fn default() -> Self {
        Self::native()
    }
}

const NATIVE_HEADER: [&str; 7] = ["timestamp", "open", "high", "low", "close", "volume", "trade_count"];

/// Read and validate a bar file. The symbol is taken from the file stem.
pub fn parse_bars(path: &Path, format: &BarFormat) -> Result<BarSeries> {
    let file = std::fs::File::open(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let symbol = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_bars_from_reader(symbol, file, format)
}

/// Parse bars from any reader. Rows may arrive unsorted; they are sorted by
/// timestamp before validation and errors report the original line number.
pub fn parse_bars_from_reader<R: Read>(symbol: impl Into<String>, reader: R, format: &BarFormat) -> Result<BarSeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(format.has_header)
        .delimiter(format.delimiter)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let idx: [usize; 7] = match &format.columns {
        Columns::Indexed {
            timestamp,
            open,
            high,
            low,
            close,
            volume,
            trade_count,
        } => [*timestamp, *open, *high, *low, *close, *volume, *trade_count],
        Columns::Named => {
            let header = rdr.headers().map_err(|e| IngestError::Parse {
                line: 1,
                message: e.to_string(),
            })?;
            let mut idx = [0usize; 7];
            for (slot, name) in idx.iter_mut().zip(NATIVE_HEADER) {
                *slot = header
                    .iter()
                    .position(|h| h.eq_ignore_ascii_case(name))
                    .ok_or_else(|| IngestError::Parse {
                        line: 1,
                        message: format!("missing column `{name}`"),
                    })?;
            }
            idx
        }
    };

    let mut rows: Vec<(usize, Bar)> = Vec::new();
    let mut record = csv::StringRecord::new();
    loop {
        match rdr.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => {
                let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
                return Err(IngestError::Parse {
                    line,
                    message: e.to_string(),
                });
            }
        }
        let line = record.position().map(|p| p.line() as usize).unwrap_or(rows.len() + 1);
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        let field = |k: usize| -> Result<&str> {
            record.get(idx[k]).ok_or_else(|| IngestError::Parse {
                line,
                message: format!("missing field `{}` (column {})", NATIVE_HEADER[k], idx[k]),
            })
        };
        let num = |k: usize| -> Result<f64> {
            let raw = field(k)?;
            raw.parse::<f64>().map_err(|_| IngestError::Parse {
                line,
                message: format!("field `{}`: cannot parse `{raw}` as a number", NATIVE_HEADER[k]),
            })
        };
        let timestamp = {
            let raw = field(0)?;
            raw.parse::<i64>().map_err(|_| IngestError::Parse {
                line,
                message: format!("field `timestamp`: cannot parse `{raw}` as integer milliseconds"),
            })?
        };
        let trade_count = {
            let raw = field(6)?;
            raw.parse::<u64>().map_err(|_| IngestError::Parse {
                line,
                message: format!("field `trade_count`: cannot parse `{raw}` as a non-negative integer"),
            })?
        };
        let bar = Bar {
            timestamp,
            open: num(1)?,
            high: num(2)?,
            low: num(3)?,
            close: num(4)?,
            volume: num(5)?,
            trade_count,
        };
        rows.push((line, bar));
    }

    rows.sort_by_key(|(_, b)| b.timestamp);
    let (lines, bars): (Vec<usize>, Vec<Bar>) = rows.into_iter().unzip();
    BarSeries::with_lines(symbol.into(), format.interval_ms, bars, &lines)
}

/// Series sampled on a fixed Δt grid that can be globally normalized.
pub trait SampledSeries {
    fn values(&self) -> &[f64];
    fn set_normalization(&mut self, mean: f64, stdev: f64, normalized: Vec<f64>);
}

/// Log-returns `R(t_i) = ln Q(t_i) - ln Q(t_{i-1})` on a Δt grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnSeries {
    pub dt_minutes: u32,
    /// Timestamp of the bar closing each interval.
    pub timestamps: Vec<i64>,
    pub values: Vec<f64>,
    /// Intervals dropped because they touch a gap.
    pub dropped: usize,
    pub mean: f64,
    pub stdev: f64,
    pub normalized: Option<Vec<f64>>,
}

/// Traded value per Δt interval, aligned with [`ReturnSeries`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeSeries {
    pub dt_minutes: u32,
    pub timestamps: Vec<i64>,
    pub values: Vec<f64>,
    pub dropped: usize,
    pub mean: f64,
    pub stdev: f64,
    pub normalized: Option<Vec<f64>>,
}

impl SampledSeries for ReturnSeries {
    fn values(&self) -> &[f64] {
        &self.values
    }
    fn set_normalization(&mut self, mean: f64, stdev: f64, normalized: Vec<f64>) {
        self.mean = mean;
        self.stdev = stdev;
        self.normalized = Some(normalized);
    }
}

impl SampledSeries for VolumeSeries {
    fn values(&self) -> &[f64] {
        &self.values
    }
    fn set_normalization(&mut self, mean: f64, stdev: f64, normalized: Vec<f64>) {
        self.mean = mean;
        self.stdev = stdev;
        self.normalized = Some(normalized);
    }
}

impl ReturnSeries {
    pub fn abs_values(&self) -> Vec<f64> {
        self.values.iter().map(|r| r.abs()).collect()
    }

    /// Normalized values, or an error if [`normalize`] has not been applied.
    pub fn normalized(&self) -> Option<&[f64]> {
        self.normalized.as_deref()
    }
}

impl VolumeSeries {
    pub fn normalized(&self) -> Option<&[f64]> {
        self.normalized.as_deref()
    }
}

/// Grid intervals `(i-1)k ..= ik` (in bar positions from the first bar) whose
/// bars are all present. Yields `(first_index, last_index)` into `bars`.
fn complete_intervals(series: &BarSeries, k: usize) -> (Vec<(usize, usize)>, usize) {
    let bars = series.bars();
    if bars.is_empty() {
        return (Vec::new(), 0);
    }
    let t0 = bars[0].timestamp;
    let last_pos = ((bars[bars.len() - 1].timestamp - t0) / series.interval_ms) as usize;
    let mut at: Vec<Option<usize>> = vec![None; last_pos + 1];
    for (i, b) in bars.iter().enumerate() {
        at[((b.timestamp - t0) / series.interval_ms) as usize] = Some(i);
    }
    let n_intervals = last_pos / k;
    let mut out = Vec::with_capacity(n_intervals);
    let mut dropped = 0;
    for i in 1..=n_intervals {
        let lo = (i - 1) * k;
        let hi = i * k;
        if at[lo..=hi].iter().all(Option::is_some) {
            out.push((at[lo].unwrap(), at[hi].unwrap()));
        } else {
            dropped += 1;
        }
    }
    (out, dropped)
}

fn bars_per_interval(series: &BarSeries, dt_minutes: u32) -> Result<usize> {
    let span = dt_minutes as i64 * MINUTE_MS;
    if dt_minutes == 0 || span % series.interval_ms != 0 {
        return Err(IngestError::InvalidInterval(format!(
            "Δt = {dt_minutes} min is not a positive multiple of the {} ms bar interval",
            series.interval_ms
        )));
    }
    Ok((span / series.interval_ms) as usize)
}

/// Log-returns at `dt_minutes`, anchored on the first bar. Intervals that
/// touch a missing bar are dropped and counted.
pub fn log_returns(series: &BarSeries, dt_minutes: u32) -> Result<ReturnSeries> {
    let k = bars_per_interval(series, dt_minutes)?;
    if series.len() < 2 {
        return Err(IngestError::Insufficient(format!(
            "{} closes, need at least 2",
            series.len()
        )));
    }
    if let Some(b) = series.bars().iter().find(|b| !(b.close > 0.0)) {
        return Err(IngestError::Domain {
            timestamp: b.timestamp,
            price: b.close,
        });
    }
    let bars = series.bars();
    let (intervals, dropped) = complete_intervals(series, k);
    let mut timestamps = Vec::with_capacity(intervals.len());
    let mut values = Vec::with_capacity(intervals.len());
    for (lo, hi) in intervals {
        timestamps.push(bars[hi].timestamp);
        values.push(bars[hi].close.ln() - bars[lo].close.ln());
    }
    let (mean, stdev) = stats::mean_std(&values);
    Ok(ReturnSeries {
        dt_minutes,
        timestamps,
        values,
        dropped,
        mean,
        stdev,
        normalized: None,
    })
}

/// Volume traded in each Δt interval: the sum over the bars after the
/// interval's opening close up to and including its closing bar.
pub fn volume_series(series: &BarSeries, dt_minutes: u32) -> Result<VolumeSeries> {
    let k = bars_per_interval(series, dt_minutes)?;
    let bars = series.bars();
    let (intervals, dropped) = complete_intervals(series, k);
    let mut timestamps = Vec::with_capacity(intervals.len());
    let mut values = Vec::with_capacity(intervals.len());
    for (lo, hi) in intervals {
        timestamps.push(bars[hi].timestamp);
        values.push(bars[lo + 1..=hi].iter().map(|b| b.volume).sum());
    }
    let (mean, stdev) = stats::mean_std(&values);
    Ok(VolumeSeries {
        dt_minutes,
        timestamps,
        values,
        dropped,
        mean,
        stdev,
        normalized: None,
    })
}

/// Global (full-sample) normalization `(x - μ) / σ` with the population σ.
pub fn normalize_values(values: &[f64]) -> Result<(f64, f64, Vec<f64>)> {
    if values.is_empty() {
        return Err(IngestError::Insufficient("cannot normalize an empty series".into()));
    }
    let (mu, sigma) = stats::mean_std(values);
    let scale = values.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if !(sigma > f64::EPSILON * scale) {
        return Err(IngestError::Degenerate);
    }
    Ok((mu, sigma, values.iter().map(|x| (x - mu) / sigma).collect()))
}

/// Fill the normalized variant of a return or volume series.
pub fn normalize<S: SampledSeries>(mut series: S) -> Result<S> {
    let (mu, sigma, normalized) = normalize_values(series.values())?;
    series.set_normalization(mu, sigma, normalized);
    Ok(series)
}

/// Liquidity group by mean inter-transaction time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Group {
    I,
    II,
    III,
}

impl Group {
    /// `< 1 s` → I, `1 s ≤ δt < 2 s` → II, `≥ 2 s` → III.
    pub fn from_intertrade_seconds(dt: f64) -> Group {
        if dt < 1.0 {
            Group::I
        } else if dt < 2.0 {
            Group::II
        } else {
            Group::III
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Group::I => "I",
            Group::II => "II",
            Group::III => "III",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetStats {
    pub symbol: String,
    /// δt: covered seconds divided by the number of trades.
    pub mean_intertrade_time_s: f64,
    /// Fraction of exactly-zero returns.
    pub zero_return_fraction: f64,
    /// W: mean traded value per minute.
    pub mean_volume_per_min: f64,
    /// Market capitalization, carried through untouched.
    pub capitalization: Option<f64>,
    pub group: Group,
}

pub fn asset_stats(bars: &BarSeries, returns: &ReturnSeries, capitalization: Option<f64>) -> Result<AssetStats> {
    if bars.is_empty() {
        return Err(IngestError::Insufficient("no bars".into()));
    }
    if returns.values.is_empty() {
        return Err(IngestError::Insufficient("no returns".into()));
    }
    let trades: u64 = bars.bars().iter().map(|b| b.trade_count).sum();
    if trades == 0 {
        return Err(IngestError::NoTrades);
    }
    let covered_s = bars.len() as f64 * bars.interval_ms as f64 / 1000.0;
    let covered_min = covered_s / 60.0;
    let dt = covered_s / trades as f64;
    let zeros = returns.values.iter().filter(|r| **r == 0.0).count();
    let volume: f64 = bars.bars().iter().map(|b| b.volume).sum();
    Ok(AssetStats {
        symbol: bars.symbol.clone(),
        mean_intertrade_time_s: dt,
        zero_return_fraction: zeros as f64 / returns.values.len() as f64,
        mean_volume_per_min: volume / covered_min,
        capitalization,
        group: Group::from_intertrade_seconds(dt),
    })
}

/// Write the per-asset statistics table as CSV.
pub fn write_stats_csv<W: std::io::Write>(out: W, rows: &[AssetStats]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "symbol",
        "mean_intertrade_time_s",
        "zero_return_fraction",
        "mean_volume_per_min",
        "capitalization",
        "group",
    ])?;
    for r in rows {
        w.write_record([
            r.symbol.clone(),
            r.mean_intertrade_time_s.to_string(),
            r.zero_return_fraction.to_string(),
            r.mean_volume_per_min.to_string(),
            r.capitalization.map(|c| c.to_string()).unwrap_or_default(),
            r.group.to_string(),
        ])?;
    }
    w.flush()
}

/// Running sum of log-returns.
pub fn cumulative_returns(returns: &ReturnSeries) -> Vec<f64> {
    returns
        .values
        .iter()
        .scan(0.0, |acc, r| {
            *acc += r;
            Some(*acc)
        })
        .collect()
}

const WEEK_MIN: u32 = 7 * 24 * 60;
const DAY_MIN: u32 = 24 * 60;

/// Weekly trading calendar in UTC.
///
/// Text form, one directive per line (`#` starts a comment):
///
/// ```text
/// open SUN 22:00 - FRI 20:15
/// break 20:15 - 22:00
/// ```
///
/// `open` intervals are weekly and may wrap past Sunday midnight; `break`
/// intervals repeat daily and are removed from every open interval. `always`
/// opens the whole week. A bar is in session when its open timestamp falls
/// inside an open interval and outside every break.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionSpec {
    /// Half-open minute-of-week intervals, Monday 00:00 = 0.
    open: Vec<(u32, u32)>,
    /// Half-open minute-of-day intervals.
    breaks: Vec<(u32, u32)>,
}

impl SessionSpec {
    pub fn always() -> Self {
        Self {
            open: vec![(0, WEEK_MIN)],
            breaks: Vec::new(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut open = Vec::new();
        let mut breaks = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let err = |message: String| IngestError::Session { line, message };
            let (directive, rest) = content
                .split_once(char::is_whitespace)
                .map(|(d, r)| (d, r.trim()))
                .unwrap_or((content, ""));
            match directive.to_ascii_lowercase().as_str() {
                "always" => open.push((0, WEEK_MIN)),
                "open" => {
                    let (a, b) = rest.split_once('-').ok_or_else(|| err("expected `DAY HH:MM - DAY HH:MM`".into()))?;
                    let start = parse_week_point(a.trim()).map_err(&err)?;
                    let end = parse_week_point(b.trim()).map_err(&err)?;
                    push_wrapped(&mut open, start, end, WEEK_MIN);
                }
                "break" => {
                    let (a, b) = rest.split_once('-').ok_or_else(|| err("expected `HH:MM - HH:MM`".into()))?;
                    let start = parse_clock(a.trim()).map_err(&err)?;
                    let end = parse_clock(b.trim()).map_err(&err)?;
                    push_wrapped(&mut breaks, start, end, DAY_MIN);
                }
                other => return Err(err(format!("unknown directive `{other}`"))),
            }
        }
        if open.is_empty() {
            return Err(IngestError::Session {
                line: 0,
                message: "no open interval defined".into(),
            });
        }
        Ok(Self { open, breaks })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| IngestError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn contains(&self, timestamp_ms: i64) -> bool {
        let minutes = timestamp_ms.div_euclid(MINUTE_MS);
        let days = minutes.div_euclid(DAY_MIN as i64);
        // 1970-01-01 was a Thursday.
        let weekday = (days + 3).rem_euclid(7) as u32;
        let of_day = minutes.rem_euclid(DAY_MIN as i64) as u32;
        let of_week = weekday * DAY_MIN + of_day;
        self.open.iter().any(|&(a, b)| a <= of_week && of_week < b)
            && !self.breaks.iter().any(|&(a, b)| a <= of_day && of_day < b)
    }
}

fn push_wrapped(out: &mut Vec<(u32, u32)>, start: u32, end: u32, period: u32) {
    if start < end {
        out.push((start, end));
    } else {
        out.push((start, period));
        if end > 0 {
            out.push((0, end));
        }
    }
}

fn parse_clock(s: &str) -> std::result::Result<u32, String> {
    let (h, m) = s.split_once(':').ok_or_else(|| format!("bad time `{s}`"))?;
    let h: u32 = h.trim().parse().map_err(|_| format!("bad hour in `{s}`"))?;
    let m: u32 = m.trim().parse().map_err(|_| format!("bad minute in `{s}`"))?;
    if h > 24 || m > 59 || (h == 24 && m != 0) {
        return Err(format!("time out of range `{s}`"));
    }
    Ok(h * 60 + m)
}

fn parse_week_point(s: &str) -> std::result::Result<u32, String> {
    let (day, clock) = s.split_once(char::is_whitespace).ok_or_else(|| format!("expected `DAY HH:MM`, got `{s}`"))?;
    let weekday = match day.to_ascii_uppercase().as_str() {
        "MON" => 0,
        "TUE" => 1,
        "WED" => 2,
        "THU" => 3,
        "FRI" => 4,
        "SAT" => 5,
        "SUN" => 6,
        other => return Err(format!("unknown weekday `{other}`")),
    };
    Ok(weekday * DAY_MIN + parse_clock(clock.trim())?)
}

/// Two bar series restricted to their common in-session timestamps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedPair {
    pub timestamps: Vec<i64>,
    pub series_a: BarSeries,
    pub series_b: BarSeries,
    /// Fraction of `a`'s bars that survived alignment.
    pub coverage_fraction: f64,
}

pub fn align_calendars(a: &BarSeries, b: &BarSeries, sessions: &SessionSpec) -> Result<AlignedPair> {
    let aligned = align_all(&[a.clone(), b.clone()], sessions)?;
    let mut it = aligned.series.into_iter();
    let series_a = it.next().unwrap();
    let series_b = it.next().unwrap();
    Ok(AlignedPair {
        timestamps: series_a.timestamps().collect(),
        series_a,
        series_b,
        coverage_fraction: aligned.coverage[0],
    })
}

/// Several series restricted to their common in-session timestamps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedSet {
    pub series: Vec<BarSeries>,
    /// Per input: fraction of its bars retained.
    pub coverage: Vec<f64>,
}

pub fn align_all(inputs: &[BarSeries], sessions: &SessionSpec) -> Result<AlignedSet> {
    let Some(first) = inputs.first() else {
        return Err(IngestError::Alignment("no series given".into()));
    };
    if let Some(other) = inputs.iter().find(|s| s.interval_ms != first.interval_ms) {
        return Err(IngestError::Alignment(format!(
            "{} has a {} ms interval but {} has {} ms",
            other.symbol, other.interval_ms, first.symbol, first.interval_ms
        )));
    }
    let mut common: Vec<i64> = first.timestamps().filter(|t| sessions.contains(*t)).collect();
    for s in &inputs[1..] {
        common = intersect_sorted(&common, s.bars());
    }
    if common.is_empty() {
        return Err(IngestError::Alignment("series share no in-session timestamps".into()));
    }
    let series: Vec<BarSeries> = inputs
        .iter()
        .map(|s| {
            let kept: Vec<Bar> = intersect_bars(s.bars(), &common);
            BarSeries::new(s.symbol.clone(), s.interval_ms, kept).expect("subset of a valid series is valid")
        })
        .collect();
    let coverage = inputs
        .iter()
        .map(|s| if s.is_empty() { 0.0 } else { common.len() as f64 / s.len() as f64 })
        .collect();
    Ok(AlignedSet { series, coverage })
}

fn intersect_sorted(ts: &[i64], bars: &[Bar]) -> Vec<i64> {
    let mut out = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < ts.len() && j < bars.len() {
        match ts[i].cmp(&bars[j].timestamp) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push(ts[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out
}

fn intersect_bars(bars: &[Bar], ts: &[i64]) -> Vec<Bar> {
    let mut out = Vec::with_capacity(ts.len());
    let mut j = 0;
    for &t in ts {
        while bars[j].timestamp < t {
            j += 1;
        }
        out.push(bars[j]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::E;

    fn bar(ts: i64, close: f64) -> Bar {
        Bar {
            timestamp: ts,
            open: close,
            high: close,
            low: close,
            close,
            volume: 1.0,
            trade_count: 1,
        }
    }

    fn series(closes: &[f64]) -> BarSeries {
        let bars = closes
            .iter()
            .enumerate()
            .map(|(i, c)| bar(i as i64 * MINUTE_MS, *c))
            .collect();
        BarSeries::new("T", MINUTE_MS, bars).unwrap()
    }

    #[test]
    fn parses_three_rows() {
        let csv = "timestamp,open,high,low,close,volume,trade_count\n\
                   0,1,2,0.5,1.5,10,3\n\
                   60000,1.5,1.6,1.4,1.5,5,2\n\
                   120000,1.5,1.7,1.5,1.7,7,1\n";
        let s = parse_bars_from_reader("X", csv.as_bytes(), &BarFormat::native()).unwrap();
        assert_eq!(s.len(), 3);
        assert!(s.gaps().is_empty());
    }

    #[test]
    fn unsorted_rows_are_sorted() {
        let csv = "timestamp,open,high,low,close,volume,trade_count\n\
                   60000,1,1,1,1,1,1\n\
                   0,1,1,1,1,1,1\n";
        let s = parse_bars_from_reader("X", csv.as_bytes(), &BarFormat::native()).unwrap();
        assert_eq!(s.timestamps().collect::<Vec<_>>(), vec![0, 60000]);
    }

    #[test]
    fn high_below_low_names_the_row() {
        let csv = "timestamp,open,high,low,close,volume,trade_count\n\
                   0,1,2,0.5,1.5,10,3\n\
                   60000,1.5,1.0,1.4,1.5,5,2\n";
        match parse_bars_from_reader("X", csv.as_bytes(), &BarFormat::native()) {
            Err(IngestError::Integrity { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected integrity error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_row_reports_line() {
        let csv = "timestamp,open,high,low,close,volume,trade_count\n\
                   0,1,1,1,1,1,1\n\
                   60000,abc,1,1,1,1,1\n";
        match parse_bars_from_reader("X", csv.as_bytes(), &BarFormat::native()) {
            Err(IngestError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_timestamp_is_integrity_error() {
        let csv = "timestamp,open,high,low,close,volume,trade_count\n\
                   0,1,1,1,1,1,1\n\
                   0,1,1,1,1,1,1\n";
        assert!(matches!(
            parse_bars_from_reader("X", csv.as_bytes(), &BarFormat::native()),
            Err(IngestError::Integrity { .. })
        ));
    }

    #[test]
    fn binance_layout_reads_quote_volume() {
        let row = "1609459200000,29000,29100,28900,29050,12.5,1609459259999,362000.0,420,6,174000,0\n";
        let s = parse_bars_from_reader("BTCUSDT", row.as_bytes(), &BarFormat::binance_kline()).unwrap();
        assert_eq!(s.bars()[0].volume, 362000.0);
        assert_eq!(s.bars()[0].trade_count, 420);
    }

    #[test]
    fn log_returns_small_cases() {
        let r = log_returns(&series(&[1.0, E, E]), 1).unwrap();
        assert!((r.values[0] - 1.0).abs() < 1e-15);
        assert_eq!(r.values[1], 0.0);

        let r = log_returns(&series(&[E, E * E, E.powi(4)]), 2).unwrap();
        assert_eq!(r.values.len(), 1);
        assert!((r.values[0] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn constant_closes_give_zero_returns() {
        let s = series(&vec![42.0; 1000]);
        let r = log_returns(&s, 1).unwrap();
        assert_eq!(r.values.len(), 999);
        assert!(r.values.iter().all(|v| *v == 0.0));
        let st = asset_stats(&s, &r, None).unwrap();
        assert_eq!(st.zero_return_fraction, 1.0);
    }

    #[test]
    fn non_positive_close_is_domain_error() {
        let s = series(&[1.0, 0.0, 2.0]);
        assert!(matches!(log_returns(&s, 1), Err(IngestError::Domain { .. })));
    }

    #[test]
    fn dt_must_divide_bar_interval() {
        let bars = vec![bar(0, 1.0), bar(5 * MINUTE_MS, 1.0)];
        let s = BarSeries::new("T", 5 * MINUTE_MS, bars).unwrap();
        assert!(matches!(log_returns(&s, 3), Err(IngestError::InvalidInterval(_))));
        assert!(log_returns(&s, 10).unwrap().values.is_empty());
        assert_eq!(log_returns(&s, 5).unwrap().values.len(), 1);
    }

    #[test]
    fn returns_across_gap_are_dropped() {
        let bars = vec![bar(0, 1.0), bar(MINUTE_MS, 2.0), bar(3 * MINUTE_MS, 4.0), bar(4 * MINUTE_MS, 8.0)];
        let s = BarSeries::new("T", MINUTE_MS, bars).unwrap();
        let r = log_returns(&s, 1).unwrap();
        assert_eq!(r.values.len(), 2);
        assert_eq!(r.dropped, 2);
        assert_eq!(r.timestamps, vec![MINUTE_MS, 4 * MINUTE_MS]);
    }

    #[test]
    fn normalize_symmetric_pair() {
        let (mu, sigma, n) = normalize_values(&[-1.0, 1.0]).unwrap();
        assert_eq!(mu, 0.0);
        assert_eq!(sigma, 1.0);
        assert_eq!(n, vec![-1.0, 1.0]);
        assert!(matches!(normalize_values(&[0.3; 10]), Err(IngestError::Degenerate)));
    }

    #[test]
    fn stats_examples() {
        let bars: Vec<Bar> = (0..60).map(|i| bar(i * MINUTE_MS, 1.0)).collect();
        let s = BarSeries::new("T", MINUTE_MS, bars).unwrap();
        let r = log_returns(&s, 1).unwrap();
        let st = asset_stats(&s, &r, Some(1e9)).unwrap();
        assert_eq!(st.mean_intertrade_time_s, 60.0);
        assert_eq!(st.group, Group::III);
        assert_eq!(st.capitalization, Some(1e9));
        assert_eq!(st.mean_volume_per_min, 1.0);

        let fake = ReturnSeries {
            dt_minutes: 1,
            timestamps: vec![0; 4],
            values: vec![0.0, 0.0, 1.0, -1.0],
            dropped: 0,
            mean: 0.0,
            stdev: 0.0,
            normalized: None,
        };
        assert_eq!(asset_stats(&s, &fake, None).unwrap().zero_return_fraction, 0.5);
    }

    #[test]
    fn zero_trades_is_an_error() {
        let bars: Vec<Bar> = (0..3)
            .map(|i| Bar {
                trade_count: 0,
                ..bar(i * MINUTE_MS, 1.0)
            })
            .collect();
        let s = BarSeries::new("T", MINUTE_MS, bars).unwrap();
        let r = log_returns(&s, 1).unwrap();
        assert!(matches!(asset_stats(&s, &r, None), Err(IngestError::NoTrades)));
    }

    #[test]
    fn group_thresholds_are_closed_left() {
        assert_eq!(Group::from_intertrade_seconds(0.999), Group::I);
        assert_eq!(Group::from_intertrade_seconds(1.0), Group::II);
        assert_eq!(Group::from_intertrade_seconds(1.999), Group::II);
        assert_eq!(Group::from_intertrade_seconds(2.0), Group::III);
    }

    #[test]
    fn cumulative_returns_examples() {
        let r = ReturnSeries {
            dt_minutes: 1,
            timestamps: vec![0; 3],
            values: vec![1.0, -1.0, 2.0],
            dropped: 0,
            mean: 0.0,
            stdev: 0.0,
            normalized: None,
        };
        assert_eq!(cumulative_returns(&r), vec![1.0, 0.0, 2.0]);
        let empty = ReturnSeries { values: vec![], ..r };
        assert!(cumulative_returns(&empty).is_empty());
    }

    #[test]
    fn session_parsing_and_membership() {
        let spec = SessionSpec::parse("open SUN 22:00 - FRI 20:15\nbreak 20:15 - 22:00 # daily\n").unwrap();
        // 2024-01-07 was a Sunday.
        let sunday_2200 = 1_704_664_800_000;
        assert!(spec.contains(sunday_2200));
        assert!(!spec.contains(sunday_2200 - MINUTE_MS));
        // Monday 20:30 falls in the daily break.
        let monday_2030 = sunday_2200 + (22 * 60 + 30) * MINUTE_MS;
        assert!(!spec.contains(monday_2030));
        assert!(spec.contains(monday_2030 + 90 * MINUTE_MS));
        // Saturday noon is closed.
        let saturday_noon = sunday_2200 - (34 * 60) * MINUTE_MS;
        assert!(!spec.contains(saturday_noon));
        assert!(SessionSpec::parse("open XYZ 10:00 - MON 11:00").is_err());
        assert!(SessionSpec::parse("").is_err());
    }
}
