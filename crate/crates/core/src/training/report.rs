use serde::{Deserialize, Serialize};

use super::metrics::Confusion;
use super::trainer::Evaluation;
use crate::market_data::DateRange;

/// Test-period metrics of one trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub market: String,
    pub period: DateRange,
    pub acc: f64,
    pub mcc: f64,
    pub f1: f64,
    pub confusion: Confusion,
    pub seed: u64,
    pub config_hash: String,
}

impl MetricsReport {
    pub fn new(market: &str, period: DateRange, seed: u64, config_hash: &str, eval: Evaluation) -> Self {
        Self {
            market: market.to_string(),
            period,
            acc: eval.acc,
            mcc: eval.mcc,
            f1: eval.f1,
            confusion: eval.confusion,
            seed,
            config_hash: config_hash.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub std: f64,
}

impl MeanStd {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() < 2 {
            0.0
        } else {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub acc: MeanStd,
    pub mcc: MeanStd,
    pub f1: MeanStd,
}

/// Several seeds of one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiSeedReport {
    pub runs: Vec<MetricsReport>,
    pub summary: SeedSummary,
}

impl MultiSeedReport {
    pub fn new(runs: Vec<MetricsReport>) -> Self {
        assert!(!runs.is_empty(), "summary of zero runs");
        let pick = |f: fn(&MetricsReport) -> f64| MeanStd::of(&runs.iter().map(f).collect::<Vec<_>>());
        let summary = SeedSummary {
            acc: pick(|r| r.acc),
            mcc: pick(|r| r.mcc),
            f1: pick(|r| r.f1),
        };
        Self { runs, summary }
    }
}
