use serde::{Deserialize, Serialize};

use super::TrainError;

/// Binary confusion counts with "up" (label 1) as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Confusion {
    pub fn from_predictions(pred: &[u8], truth: &[u8]) -> Result<Self, TrainError> {
        if pred.len() != truth.len() {
            return Err(TrainError::LengthMismatch {
                predictions: pred.len(),
                truth: truth.len(),
            });
        }
        let mut c = Self::default();
        for (&p, &t) in pred.iter().zip(truth) {
            match (p != 0, t != 0) {
                (true, true) => c.tp += 1,
                (false, false) => c.tn += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    /// Associative, commutative merge of partial counts.
    pub fn merge(self, other: Self) -> Self {
        Self {
            tp: self.tp + other.tp,
            tn: self.tn + other.tn,
            fp: self.fp + other.fp,
            fn_: self.fn_ + other.fn_,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => (self.tp + self.tn) as f64 / n as f64,
        }
    }

    pub fn mcc(&self) -> f64 {
        mcc(self)
    }

    pub fn f1(&self) -> f64 {
        f1(self)
    }
}

/// Fraction of positions where `pred` equals `truth`.
pub fn accuracy(pred: &[u8], truth: &[u8]) -> Result<f64, TrainError> {
    if pred.len() != truth.len() {
        return Err(TrainError::LengthMismatch {
            predictions: pred.len(),
            truth: truth.len(),
        });
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Matthews correlation coefficient; 0 when any marginal is empty.
pub fn mcc(c: &Confusion) -> f64 {
    let (tp, tn, fp, fn_) = (c.tp as f64, c.tn as f64, c.fp as f64, c.fn_ as f64);
    let denom = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    if denom == 0.0 {
        0.0
    } else {
        (tp * tn - fp * fn_) / denom.sqrt()
    }
}

/// Binary F1 of the positive class; 0 when undefined.
pub fn f1(c: &Confusion) -> f64 {
    let denom = 2 * c.tp + c.fp + c.fn_;
    if denom == 0 {
        0.0
    } else {
        (2 * c.tp) as f64 / denom as f64
    }
}
