//! Ingestion of per-stock OHLCV series, alignment onto a shared trading
//! calendar, and construction of windowed samples with next-day labels.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

/// The five per-day indicators, in relation order.
pub const INDICATORS: [&str; 5] = ["open", "high", "low", "close", "volume"];
pub const NUM_INDICATORS: usize = INDICATORS.len();
pub const CLOSE: usize = 3;
pub const VOLUME: usize = 4;

/// Fraction of calendar days a stock must be present on to be kept.
pub const DEFAULT_COVERAGE: f64 = 0.98;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Format {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("{path}: no valid rows")]
    EmptyInput { path: PathBuf },
    #[error("need at least 2 series, got {0}")]
    TooFewSeries(usize),
    #[error("fewer than 2 stocks meet the coverage threshold {coverage}; presence: {}", fmt_presence(.presence))]
    Coverage {
        coverage: f64,
        presence: Vec<(String, f64)>,
    },
    #[error("need at least {needed} trading days, panel has {available}")]
    InsufficientData { needed: usize, available: usize },
    #[error("non-positive price ({0}, {1})")]
    NonPositivePrice(f64, f64),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("panel cache {path}: {message}")]
    Cache { path: PathBuf, message: String },
}

fn fmt_presence(presence: &[(String, f64)]) -> String {
    presence
        .iter()
        .map(|(t, p)| format!("{t}={p:.4}"))
        .collect::<Vec<_>>()
        .join(", ")
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;

/// One trading day of indicators, in [`INDICATORS`] order.
pub type Bar = [f64; NUM_INDICATORS];

#[derive(Debug, Clone, PartialEq)]
pub struct InstrumentSeries {
    pub ticker: String,
    pub dates: Vec<NaiveDate>,
    pub bars: Vec<Bar>,
}

impl InstrumentSeries {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }
}

#[derive(Debug, Clone, Default)]
pub struct LoadOutcome {
    pub series: Vec<InstrumentSeries>,
    /// Rows skipped because a field was missing or unparsable, a price was
    /// non-positive, or the date repeated.
    pub dropped_rows: usize,
}

/// Reads one CSV file with header `date,open,high,low,close,volume` and an
/// optional `ticker` column. Without a ticker column the file stem names the
/// series.
pub fn load_csv(path: &Path) -> Result<LoadOutcome> {
    let io_err = |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => io_err(io),
            other => DataError::Format {
                path: path.to_path_buf(),
                line: 1,
                message: format!("{other:?}"),
            },
        })?;
    let headers = reader.headers().map_err(|e| DataError::Format {
        path: path.to_path_buf(),
        line: 1,
        message: e.to_string(),
    })?;
    let column = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let date_col = column("date");
    let mut cols = [0usize; NUM_INDICATORS];
    let mut missing = Vec::new();
    for (slot, name) in cols.iter_mut().zip(INDICATORS) {
        match column(name) {
            Some(c) => *slot = c,
            None => missing.push(name),
        }
    }
    let Some(date_col) = date_col.filter(|_| missing.is_empty()) else {
        if date_col.is_none() {
            missing.insert(0, "date");
        }
        return Err(DataError::Format {
            path: path.to_path_buf(),
            line: 1,
            message: format!("header is missing column(s): {}", missing.join(", ")),
        });
    };
    let ticker_col = column("ticker");
    let default_ticker = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();

    let mut rows: BTreeMap<String, Vec<(NaiveDate, Bar)>> = BTreeMap::new();
    let mut dropped = 0;
    for record in reader.records() {
        let Ok(record) = record else {
            dropped += 1;
            continue;
        };
        let parsed = parse_row(&record, date_col, &cols);
        let ticker = match ticker_col {
            Some(c) => record.get(c).filter(|t| !t.is_empty()).map(str::to_owned),
            None => Some(default_ticker.clone()),
        };
        match (parsed, ticker) {
            (Some(row), Some(ticker)) => rows.entry(ticker).or_default().push(row),
            _ => dropped += 1,
        }
    }

    let mut series = Vec::with_capacity(rows.len());
    for (ticker, mut rows) in rows {
        rows.sort_by_key(|(d, _)| *d);
        let before = rows.len();
        rows.dedup_by_key(|(d, _)| *d);
        dropped += before - rows.len();
        let (dates, bars) = rows.into_iter().unzip();
        series.push(InstrumentSeries { ticker, dates, bars });
    }
    if series.is_empty() {
        return Err(DataError::EmptyInput {
            path: path.to_path_buf(),
        });
    }
    if dropped > 0 {
        log::warn!("{}: dropped {dropped} invalid row(s)", path.display());
    }
    Ok(LoadOutcome {
        series,
        dropped_rows: dropped,
    })
}

fn parse_row(record: &csv::StringRecord, date_col: usize, cols: &[usize; NUM_INDICATORS]) -> Option<(NaiveDate, Bar)> {
    let date = NaiveDate::parse_from_str(record.get(date_col)?, "%Y-%m-%d").ok()?;
    let mut bar = [0.0; NUM_INDICATORS];
    for (value, &c) in bar.iter_mut().zip(cols) {
        *value = record.get(c)?.parse::<f64>().ok().filter(|v| v.is_finite())?;
    }
    let prices_ok = bar[..VOLUME].iter().all(|&p| p > 0.0);
    (prices_ok && bar[VOLUME] >= 0.0).then_some((date, bar))
}

/// Loads every `*.csv` in a directory, in file-name order.
pub fn load_dir(dir: &Path) -> Result<LoadOutcome> {
    let entries = fs::read_dir(dir).map_err(|source| DataError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(DataError::EmptyInput {
            path: dir.to_path_buf(),
        });
    }
    let mut out = LoadOutcome::default();
    for file in files {
        let loaded = load_csv(&file)?;
        out.dropped_rows += loaded.dropped_rows;
        out.series.extend(loaded.series);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FillCount {
    /// Calendar days whose prices were forward- or back-filled.
    pub price_days: usize,
    /// Days whose volume was missing or below the floor of 1.
    pub volume_days: usize,
}

/// Stocks × indicators × trading days, aligned on one calendar.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketPanel {
    tickers: Vec<String>,
    calendar: Vec<NaiveDate>,
    /// Row-major `[stock][indicator][day]`.
    data: Vec<f64>,
    pub fill_counts: Vec<FillCount>,
    pub dropped: Vec<(String, f64)>,
}

impl MarketPanel {
    /// Builds a panel from `[stock][indicator][day]` values.
    pub fn new(tickers: Vec<String>, calendar: Vec<NaiveDate>, data: Vec<f64>) -> Result<Self> {
        let (n, t) = (tickers.len(), calendar.len());
        if n < 2 {
            return Err(DataError::TooFewSeries(n));
        }
        if data.len() != n * NUM_INDICATORS * t {
            return Err(DataError::Config(format!(
                "panel data has {} values, expected {n}x{NUM_INDICATORS}x{t}",
                data.len()
            )));
        }
        if calendar.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DataError::Config("calendar must be strictly increasing".into()));
        }
        for (i, row) in data.chunks(t).enumerate() {
            let indicator = i % NUM_INDICATORS;
            if row.iter().any(|v| !v.is_finite() || (indicator != VOLUME && *v <= 0.0)) {
                return Err(DataError::Config(format!(
                    "stock {} has a non-finite or non-positive {}",
                    tickers[i / NUM_INDICATORS],
                    INDICATORS[indicator]
                )));
            }
        }
        Ok(Self {
            fill_counts: vec![FillCount::default(); n],
            tickers,
            calendar,
            data,
            dropped: Vec::new(),
        })
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn calendar(&self) -> &[NaiveDate] {
        &self.calendar
    }

    pub fn num_stocks(&self) -> usize {
        self.tickers.len()
    }

    pub fn num_days(&self) -> usize {
        self.calendar.len()
    }

    pub fn value(&self, stock: usize, indicator: usize, day: usize) -> f64 {
        self.data[(stock * NUM_INDICATORS + indicator) * self.num_days() + day]
    }

    /// The full series of one indicator for one stock.
    pub fn series(&self, stock: usize, indicator: usize) -> &[f64] {
        let t = self.num_days();
        let start = (stock * NUM_INDICATORS + indicator) * t;
        &self.data[start..start + t]
    }

    /// Raw window `[indicator][stock][offset]` covering days `end+1-tau ..= end`.
    pub fn raw_window(&self, end: usize, tau: usize) -> Result<Tensor> {
        if tau == 0 || end + 1 < tau || end >= self.num_days() {
            return Err(DataError::InsufficientData {
                needed: tau.max(end + 1),
                available: self.num_days(),
            });
        }
        let n = self.num_stocks();
        let mut out = Vec::with_capacity(NUM_INDICATORS * n * tau);
        for r in 0..NUM_INDICATORS {
            for i in 0..n {
                out.extend_from_slice(&self.series(i, r)[end + 1 - tau..=end]);
            }
        }
        Ok(Tensor::new(&[NUM_INDICATORS, n, tau], out).expect("window shape"))
    }
}

/// Aligns series onto the calendar of dates that appear in at least half of
/// them, drops stocks present on fewer than `coverage` of those days, and
/// fills the remaining gaps.
///
/// Price gaps take the last observed value (leading gaps the first observed
/// one). Missing volume counts as 0, and every volume is floored to 1.
pub fn align_panel(series: &[InstrumentSeries], coverage: f64) -> Result<MarketPanel> {
    if series.len() < 2 {
        return Err(DataError::TooFewSeries(series.len()));
    }
    let mut counts: BTreeMap<NaiveDate, usize> = BTreeMap::new();
    for s in series {
        for d in &s.dates {
            *counts.entry(*d).or_default() += 1;
        }
    }
    let calendar: Vec<NaiveDate> = counts
        .into_iter()
        .filter(|&(_, c)| 2 * c >= series.len())
        .map(|(d, _)| d)
        .collect();
    let t = calendar.len();
    let day_index: HashMap<NaiveDate, usize> = calendar.iter().enumerate().map(|(i, d)| (*d, i)).collect();

    let mut tickers = Vec::new();
    let mut data = Vec::new();
    let mut fill_counts = Vec::new();
    let mut presence = Vec::new();
    let mut dropped = Vec::new();
    for s in series {
        let mut slots: Vec<Option<&Bar>> = vec![None; t];
        for (d, bar) in s.dates.iter().zip(&s.bars) {
            if let Some(&i) = day_index.get(d) {
                slots[i] = Some(bar);
            }
        }
        let present = slots.iter().filter(|b| b.is_some()).count();
        let fraction = if t == 0 { 0.0 } else { present as f64 / t as f64 };
        presence.push((s.ticker.clone(), fraction));
        if present == 0 || fraction < coverage {
            dropped.push((s.ticker.clone(), fraction));
            continue;
        }
        // Seeding with the first observation back-fills any leading gap.
        let first = slots.iter().flatten().next().copied().expect("present > 0");
        let mut last = *first;
        let mut rows = vec![vec![0.0; t]; NUM_INDICATORS];
        let mut fills = FillCount::default();
        for (day, slot) in slots.iter().enumerate() {
            let bar = match slot {
                Some(bar) => {
                    last = **bar;
                    **bar
                }
                None => {
                    fills.price_days += 1;
                    let mut filled = last;
                    filled[VOLUME] = 0.0;
                    filled
                }
            };
            for (r, row) in rows.iter_mut().enumerate() {
                row[day] = bar[r];
            }
            if rows[VOLUME][day] < 1.0 {
                rows[VOLUME][day] = 1.0;
                fills.volume_days += 1;
            }
        }
        tickers.push(s.ticker.clone());
        data.extend(rows.into_iter().flatten());
        fill_counts.push(fills);
    }
    if tickers.len() < 2 {
        return Err(DataError::Coverage { coverage, presence });
    }
    let mut panel = MarketPanel::new(tickers, calendar, data)?;
    panel.fill_counts = fill_counts;
    panel.dropped = dropped;
    Ok(panel)
}

/// 1 when the close strictly rises into the next day, else 0.
pub fn gen_label(close_today: f64, close_next: f64) -> Result<u8> {
    if close_today <= 0.0 || close_next <= 0.0 || close_today.is_nan() || close_next.is_nan() {
        return Err(DataError::NonPositivePrice(close_today, close_next));
    }
    Ok(u8::from(close_next > close_today))
}

/// One training instance ending at day `t_index`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    pub t_index: usize,
    pub end_date: NaiveDate,
    pub label_date: NaiveDate,
    /// Z-scored model inputs, `[indicator][stock][offset]`.
    pub features: Tensor,
    /// The unnormalized window, same layout; consumed by graph generation.
    pub raw: Tensor,
    /// Next-day trend per stock.
    pub labels: Vec<u8>,
}

/// One sample per end-day `t` in `tau-1 ..= T-2`, so `T - tau` in total.
///
/// Features are z-scored per (indicator, stock) row of each window; a
/// constant row maps to zeros.
pub fn make_windows(panel: &MarketPanel, tau: usize) -> Result<Vec<WindowSample>> {
    let days = panel.num_days();
    if tau == 0 || days < tau + 1 {
        return Err(DataError::InsufficientData {
            needed: tau + 1,
            available: days,
        });
    }
    let n = panel.num_stocks();
    (tau - 1..=days - 2)
        .map(|t| {
            let raw = panel.raw_window(t, tau)?;
            let mut z = raw.data().to_vec();
            for row in z.chunks_mut(tau) {
                zscore_in_place(row);
            }
            let labels = (0..n)
                .map(|i| gen_label(panel.value(i, CLOSE, t), panel.value(i, CLOSE, t + 1)))
                .collect::<Result<Vec<_>>>()?;
            Ok(WindowSample {
                t_index: t,
                end_date: panel.calendar[t],
                label_date: panel.calendar[t + 1],
                features: Tensor::new(raw.shape(), z).expect("window shape"),
                raw,
                labels,
            })
        })
        .collect()
}

fn zscore_in_place(row: &mut [f64]) {
    let len = row.len() as f64;
    let mean = row.iter().sum::<f64>() / len;
    let std = (row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / len).sqrt();
    if std < 1e-12 {
        row.iter_mut().for_each(|v| *v = 0.0);
    } else {
        row.iter_mut().for_each(|v| *v = (*v - mean) / std);
    }
}

/// Fraction of positive labels over a set of samples.
pub fn label_balance(samples: &[WindowSample]) -> f64 {
    let (ones, total) = samples.iter().fold((0usize, 0usize), |(o, t), s| {
        (o + s.labels.iter().filter(|&&l| l == 1).count(), t + s.labels.len())
    });
    if total == 0 {
        0.0
    } else {
        ones as f64 / total as f64
    }
}

/// Inclusive date interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Self {
        Self { start, end }
    }

    pub fn contains(&self, d: NaiveDate) -> bool {
        self.start <= d && d <= self.end
    }
}

#[derive(Debug, Clone, Default)]
pub struct Splits {
    pub train: Vec<WindowSample>,
    pub val: Vec<WindowSample>,
    pub test: Vec<WindowSample>,
}

/// Assigns samples to periods by end date. A sample whose label day falls
/// outside the period of its end day is excluded.
pub fn split_periods(
    samples: &[WindowSample],
    train: DateRange,
    val: DateRange,
    test: DateRange,
) -> Result<Splits> {
    let ranges = [("train", train), ("val", val), ("test", test)];
    for (name, r) in &ranges {
        if r.start > r.end {
            return Err(DataError::Config(format!("{name} range ends before it starts")));
        }
    }
    for pair in ranges.windows(2) {
        let ((a, ra), (b, rb)) = (pair[0], pair[1]);
        if ra.end >= rb.start {
            return Err(DataError::Config(format!(
                "{a} range ({} to {}) must end before {b} range starts ({})",
                ra.start, ra.end, rb.start
            )));
        }
    }
    let pick = |r: DateRange| -> Vec<WindowSample> {
        samples
            .iter()
            .filter(|s| r.contains(s.end_date) && r.contains(s.label_date))
            .cloned()
            .collect()
    };
    Ok(Splits {
        train: pick(train),
        val: pick(val),
        test: pick(test),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelManifest {
    pub layout: String,
    pub tickers: Vec<String>,
    pub calendar: Vec<NaiveDate>,
    pub fill_counts: BTreeMap<String, FillCount>,
    pub dropped_tickers: Vec<DroppedTicker>,
    pub dropped_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedTicker {
    pub ticker: String,
    pub presence: f64,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl MarketPanel {
    pub fn manifest(&self, dropped_rows: usize) -> PanelManifest {
        PanelManifest {
            layout: format!("date,{}", INDICATORS.join(",")),
            tickers: self.tickers.clone(),
            calendar: self.calendar.clone(),
            fill_counts: self
                .tickers
                .iter()
                .cloned()
                .zip(self.fill_counts.iter().copied())
                .collect(),
            dropped_tickers: self
                .dropped
                .iter()
                .map(|(ticker, presence)| DroppedTicker {
                    ticker: ticker.clone(),
                    presence: *presence,
                })
                .collect(),
            dropped_rows,
        }
    }

    /// Writes one `<ticker>.csv` per stock plus `manifest.json` into `dir`.
    /// Values use the shortest representation that parses back exactly.
    pub fn write_cache(&self, dir: &Path, dropped_rows: usize) -> Result<PanelManifest> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| DataError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        for (i, ticker) in self.tickers.iter().enumerate() {
            if ticker.contains(['/', '\\']) || ticker.starts_with('.') {
                return Err(DataError::Config(format!("ticker {ticker:?} is not a valid file name")));
            }
            let path = dir.join(format!("{ticker}.csv"));
            let mut body = format!("date,{}\n", INDICATORS.join(","));
            for (day, date) in self.calendar.iter().enumerate() {
                body.push_str(&date.format("%Y-%m-%d").to_string());
                for r in 0..NUM_INDICATORS {
                    body.push(',');
                    body.push_str(&self.value(i, r, day).to_string());
                }
                body.push('\n');
            }
            fs::write(&path, body).map_err(io(&path))?;
        }
        let manifest = self.manifest(dropped_rows);
        let path = dir.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, json + "\n").map_err(io(&path))?;
        Ok(manifest)
    }

    /// Reloads a panel written by [`MarketPanel::write_cache`].
    pub fn read_cache(dir: &Path) -> Result<(Self, PanelManifest)> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|source| DataError::Io {
            path: path.clone(),
            source,
        })?;
        let manifest: PanelManifest = serde_json::from_str(&text).map_err(|e| DataError::Cache {
            path: path.clone(),
            message: e.to_string(),
        })?;
        let t = manifest.calendar.len();
        let mut data = Vec::with_capacity(manifest.tickers.len() * NUM_INDICATORS * t);
        for ticker in &manifest.tickers {
            let file = dir.join(format!("{ticker}.csv"));
            let loaded = load_csv(&file)?;
            let series = &loaded.series[0];
            if loaded.dropped_rows > 0 || series.dates != manifest.calendar {
                return Err(DataError::Cache {
                    path: file,
                    message: "rows do not match the manifest calendar".into(),
                });
            }
            for r in 0..NUM_INDICATORS {
                data.extend(series.bars.iter().map(|b| b[r]));
            }
        }
        let mut panel = MarketPanel::new(manifest.tickers.clone(), manifest.calendar.clone(), data)?;
        panel.fill_counts = manifest
            .tickers
            .iter()
            .map(|t| manifest.fill_counts.get(t).copied().unwrap_or_default())
            .collect();
        panel.dropped = manifest
            .dropped_tickers
            .iter()
            .map(|d| (d.ticker.clone(), d.presence))
            .collect();
        Ok((panel, manifest))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn day(i: i64) -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, 1, 1).unwrap() + chrono::Duration::days(i)
    }

    fn series(ticker: &str, days: impl IntoIterator<Item = i64>) -> InstrumentSeries {
        let dates: Vec<NaiveDate> = days.into_iter().map(day).collect();
        let bars = (0..dates.len())
            .map(|i| {
                let p = 10.0 + i as f64;
                [p, p + 1.0, p - 1.0, p + 0.5, 1000.0 + i as f64]
            })
            .collect();
        InstrumentSeries {
            ticker: ticker.into(),
            dates,
            bars,
        }
    }

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let path = dir.join(name);
        fs::File::create(&path).unwrap().write_all(body.as_bytes()).unwrap();
        path
    }

    const HEADER: &str = "date,open,high,low,close,volume\n";

    #[test]
    fn loads_well_formed_file() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!(
            "{HEADER}2020-01-03,1,2,0.5,1.5,100\n2020-01-01,1,2,0.5,1.5,100\n2020-01-02,1,2,0.5,1.5,100\n"
        );
        let path = write(dir.path(), "AAA.csv", &body);
        let out = load_csv(&path).unwrap();
        assert_eq!(out.series.len(), 1);
        assert_eq!(out.series[0].ticker, "AAA");
        assert_eq!(out.series[0].len(), 3);
        assert_eq!(out.series[0].dates[0], day(0));
        assert_eq!(out.dropped_rows, 0);
    }

    #[test]
    fn missing_close_column_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(dir.path(), "x.csv", "date,open,high,low,volume\n2020-01-01,1,1,1,1\n");
        let err = load_csv(&path).unwrap_err();
        assert!(matches!(err, DataError::Format { line: 1, .. }), "{err}");
        assert!(err.to_string().contains("close"));
        assert!(err.to_string().contains("x.csv:1"));
    }

    #[test]
    fn unparsable_volume_drops_the_row() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!("{HEADER}2020-01-01,1,2,0.5,1.5,abc\n2020-01-02,1,2,0.5,1.5,7\n");
        let out = load_csv(&write(dir.path(), "B.csv", &body)).unwrap();
        assert_eq!(out.dropped_rows, 1);
        assert_eq!(out.series[0].len(), 1);
    }

    #[test]
    fn zero_valid_rows_is_empty_input() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!("{HEADER}2020-01-01,1,2,0.5,-1,7\n");
        let err = load_csv(&write(dir.path(), "C.csv", &body)).unwrap_err();
        assert!(matches!(err, DataError::EmptyInput { .. }));
    }

    #[test]
    fn long_format_splits_by_ticker() {
        let dir = tempfile::tempdir().unwrap();
        let body = "ticker,date,open,high,low,close,volume\n\
                    B,2020-01-01,1,1,1,1,1\nA,2020-01-01,2,2,2,2,2\nA,2020-01-02,2,2,2,2,2\nA,2020-01-02,3,3,3,3,3\n";
        let out = load_csv(&write(dir.path(), "all.csv", body)).unwrap();
        let names: Vec<_> = out.series.iter().map(|s| s.ticker.as_str()).collect();
        assert_eq!(names, ["A", "B"]);
        assert_eq!(out.series[0].len(), 2);
        assert_eq!(out.dropped_rows, 1, "duplicate date");
    }

    #[test]
    fn empty_directory_is_empty_input() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_dir(dir.path()), Err(DataError::EmptyInput { .. })));
    }

    #[test]
    fn identical_calendars_need_no_fill() {
        let panel = align_panel(&[series("A", 0..10), series("B", 0..10)], DEFAULT_COVERAGE).unwrap();
        assert_eq!((panel.num_stocks(), panel.num_days()), (2, 10));
        assert!(panel.fill_counts.iter().all(|f| *f == FillCount::default()));
    }

    #[test]
    fn one_missing_day_in_a_hundred_is_forward_filled() {
        let gappy = series("B", (0..100).filter(|&d| d != 50));
        let panel = align_panel(&[series("A", 0..100), gappy.clone(), series("C", 0..100)], DEFAULT_COVERAGE).unwrap();
        assert_eq!(panel.num_stocks(), 3);
        assert_eq!(panel.num_days(), 100);
        let b = 1;
        for r in 0..VOLUME {
            assert_eq!(panel.value(b, r, 50), panel.value(b, r, 49));
        }
        assert_eq!(panel.value(b, VOLUME, 50), 1.0);
        assert_eq!(panel.fill_counts[b], FillCount { price_days: 1, volume_days: 1 });
    }

    #[test]
    fn ninety_of_hundred_days_is_dropped() {
        let sparse = series("S", 10..100);
        let panel = align_panel(&[series("A", 0..100), series("B", 0..100), sparse], DEFAULT_COVERAGE).unwrap();
        assert_eq!(panel.tickers(), ["A", "B"]);
        assert_eq!(panel.dropped, vec![("S".to_string(), 0.9)]);
    }

    #[test]
    fn leading_gap_is_back_filled() {
        let late = series("L", 1..100);
        let panel = align_panel(&[series("A", 0..100), late.clone(), series("B", 0..100)], 0.98).unwrap();
        let l = panel.tickers().iter().position(|t| t == "L").unwrap();
        assert_eq!(panel.value(l, CLOSE, 0), late.bars[0][CLOSE]);
    }

    #[test]
    fn coverage_error_lists_presence() {
        let err = align_panel(&[series("A", 0..10), series("B", 5..15)], 0.98).unwrap_err();
        match err {
            DataError::Coverage { presence, .. } => {
                assert_eq!(presence.len(), 2);
                assert!(presence.iter().all(|(_, p)| *p < 0.98));
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn labels_follow_strict_increase() {
        assert_eq!(gen_label(100.0, 101.0).unwrap(), 1);
        assert_eq!(gen_label(100.0, 99.0).unwrap(), 0);
        assert_eq!(gen_label(100.0, 100.0).unwrap(), 0);
        assert!(gen_label(0.0, 1.0).is_err());
    }

    fn panel_with_days(t: usize) -> MarketPanel {
        align_panel(&[series("A", 0..t as i64), series("B", 0..t as i64)], 0.98).unwrap()
    }

    #[test]
    fn window_counts() {
        assert_eq!(make_windows(&panel_with_days(22), 21).unwrap().len(), 1);
        assert_eq!(make_windows(&panel_with_days(25), 21).unwrap().len(), 4);
        assert!(matches!(
            make_windows(&panel_with_days(21), 21),
            Err(DataError::InsufficientData { needed: 22, available: 21 })
        ));
    }

    #[test]
    fn window_contents_and_labels() {
        let panel = panel_with_days(25);
        let samples = make_windows(&panel, 21).unwrap();
        for s in &samples {
            for r in 0..NUM_INDICATORS {
                for i in 0..2 {
                    for o in 0..21 {
                        assert_eq!(s.raw.get(&[r, i, o]), panel.value(i, r, s.t_index + 1 + o - 21));
                    }
                }
            }
            for i in 0..2 {
                let expected = gen_label(panel.value(i, CLOSE, s.t_index), panel.value(i, CLOSE, s.t_index + 1));
                assert_eq!(s.labels[i], expected.unwrap());
            }
            assert_eq!(s.label_date, panel.calendar()[s.t_index + 1]);
        }
        // z-scored rows have zero mean and unit variance
        let row = &samples[0].features.data()[..21];
        let mean = row.iter().sum::<f64>() / 21.0;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 21.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
        assert_eq!(label_balance(&samples), 1.0);
    }

    #[test]
    fn splits_respect_label_leakage() {
        let panel = panel_with_days(30);
        let samples = make_windows(&panel, 5).unwrap();
        let cal = panel.calendar();
        let train = DateRange::new(cal[0], cal[14]);
        let val = DateRange::new(cal[15], cal[22]);
        let test = DateRange::new(cal[23], cal[29]);
        let s = split_periods(&samples, train, val, test).unwrap();
        assert!(s.train.iter().all(|x| x.t_index <= 13));
        assert_eq!(s.train.last().unwrap().t_index, 13, "t=14 labels day 15 (val) and is excluded");
        assert_eq!(s.val.first().unwrap().t_index, 15);
        assert_eq!(s.train.len() + s.val.len() + s.test.len(), samples.len() - 2);

        let later = DateRange::new(cal[29] + chrono::Duration::days(10), cal[29] + chrono::Duration::days(20));
        let s = split_periods(&samples, train, val, later).unwrap();
        assert!(s.test.is_empty());

        let overlapping = DateRange::new(cal[14], cal[20]);
        assert!(matches!(split_periods(&samples, train, overlapping, test), Err(DataError::Config(_))));
    }

    #[test]
    fn cache_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = series("A", 0..12);
        s.bars.iter_mut().enumerate().for_each(|(i, b)| b[CLOSE] = 1.0 / 3.0 + i as f64 * 0.1);
        let panel = align_panel(&[s, series("B", 0..12), series("C", 1..12)], 0.9).unwrap();
        panel.write_cache(dir.path(), 4).unwrap();
        let (back, manifest) = MarketPanel::read_cache(dir.path()).unwrap();
        assert_eq!(back, panel);
        assert_eq!(manifest.dropped_rows, 4);
        assert_eq!(manifest.tickers, ["A", "B", "C"]);
    }
}
