//! Seeded synthetic markets with planted, learnable labels.
//!
//! Prices follow independent geometric random walks. Each window is labeled
//! by the sign of a fixed zero-sum linear functional of its raw close row,
//! then a fraction of labels is flipped at random. Because the weights sum to
//! zero, per-window z-scoring keeps the sign, so the label is recoverable from
//! the model features alone.

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::market_data::{make_windows, DataError, MarketPanel, WindowSample, CLOSE, NUM_INDICATORS};

/// Shape of the planted functional over the close row of a window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Functional {
    /// Centered ramp `j - (tau-1)/2`: sign of the least-squares trend.
    Trend,
    /// Last close minus the window mean.
    LastMinusMean,
}

impl Functional {
    pub fn weights(self, tau: usize) -> Vec<f64> {
        let t = tau as f64;
        match self {
            Functional::Trend => (0..tau).map(|j| j as f64 - (t - 1.0) / 2.0).collect(),
            Functional::LastMinusMean => (0..tau)
                .map(|j| if j + 1 == tau { 1.0 - 1.0 / t } else { -1.0 / t })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedConfig {
    pub num_stocks: usize,
    pub num_days: usize,
    pub tau: usize,
    /// Probability that a planted label is flipped.
    pub noise: f64,
    /// Standard deviation of daily log returns.
    pub volatility: f64,
    pub functional: Functional,
    pub start: NaiveDate,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            num_stocks: 12,
            num_days: 60,
            tau: 21,
            noise: 0.05,
            volatility: 0.02,
            functional: Functional::Trend,
            start: NaiveDate::from_ymd_opt(2020, 1, 2).expect("valid date"),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedMarket {
    pub panel: MarketPanel,
    pub weights: Vec<f64>,
    /// Windows with planted labels in place of next-day trends.
    pub samples: Vec<WindowSample>,
    pub flipped: usize,
}

/// `count` consecutive weekdays starting at `start` (rolled forward off a weekend).
pub fn business_days(start: NaiveDate, count: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(count);
    let mut d = start;
    while out.len() < count {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d += Duration::days(1);
    }
    out
}

/// A random-walk panel of `num_stocks` tickers `S00, S01, ...`.
pub fn random_walk_panel(
    num_stocks: usize,
    num_days: usize,
    volatility: f64,
    start: NaiveDate,
    rng: &mut impl Rng,
) -> Result<MarketPanel, DataError> {
    let normal = Normal::new(0.0, volatility).map_err(|e| DataError::Config(e.to_string()))?;
    let mut data = Vec::with_capacity(num_stocks * NUM_INDICATORS * num_days);
    for _ in 0..num_stocks {
        let mut close = Vec::with_capacity(num_days);
        let mut price: f64 = rng.gen_range(20.0..200.0);
        for _ in 0..num_days {
            price *= f64::exp(normal.sample(rng));
            close.push(price);
        }
        let open: Vec<f64> = close.iter().map(|c| c * f64::exp(normal.sample(rng) * 0.5)).collect();
        let high = open.iter().zip(&close).map(|(o, c)| o.max(*c) * (1.0 + rng.gen_range(0.0..volatility))).collect();
        let low = open.iter().zip(&close).map(|(o, c)| o.min(*c) * (1.0 - rng.gen_range(0.0..volatility))).collect();
        let volume = (0..num_days).map(|_| rng.gen_range(1e5..1e6f64).round()).collect();
        for row in [open, high, low, close, volume] {
            data.extend::<Vec<f64>>(row);
        }
    }
    let tickers = (0..num_stocks).map(|i| format!("S{i:02}")).collect();
    MarketPanel::new(tickers, business_days(start, num_days), data)
}

pub fn planted_market(config: &PlantedConfig) -> Result<PlantedMarket, DataError> {
    if !(0.0..=1.0).contains(&config.noise) {
        return Err(DataError::Config(format!("noise {} outside [0, 1]", config.noise)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let panel = random_walk_panel(config.num_stocks, config.num_days, config.volatility, config.start, &mut rng)?;
    let weights = config.functional.weights(config.tau);
    let mut samples = make_windows(&panel, config.tau)?;
    let mut flipped = 0;
    for s in &mut samples {
        let n = config.num_stocks;
        let close = &s.raw.data()[CLOSE * n * config.tau..(CLOSE + 1) * n * config.tau];
        for (i, row) in close.chunks(config.tau).enumerate() {
            let score: f64 = row.iter().zip(&weights).map(|(x, w)| x * w).sum();
            let mut label = u8::from(score > 0.0);
            if rng.gen_bool(config.noise) {
                label ^= 1;
                flipped += 1;
            }
            s.labels[i] = label;
        }
    }
    Ok(PlantedMarket {
        panel,
        weights,
        samples,
        flipped,
    })
}
