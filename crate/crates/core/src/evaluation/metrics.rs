//! Per-asset performance metrics of a daily pnl series and their
//! cross-sectional aggregates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::{ANNUALIZATION, STD_FLOOR};

pub const TRADING_DAYS: f64 = 252.0;

/// Metric names in report column order.
pub const METRIC_NAMES: [&str; 9] = [
    "ann_ret",
    "ann_vol",
    "sharpe",
    "calmar",
    "sortino",
    "downside_risk",
    "max_drawdown",
    "skew",
    "kurtosis",
];

fn check(x: &[f64]) -> Result<()> {
    if x.len() < 2 {
        return Err(Error::Window(format!("metrics need at least 2 observations, got {}", x.len())));
    }
    Ok(())
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// `k`-th central moment (population).
fn central_moment(x: &[f64], k: i32) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(k)).sum::<f64>() / x.len() as f64
}

fn pop_std(x: &[f64]) -> f64 {
    central_moment(x, 2).sqrt()
}

fn ratio(num: f64, den: f64) -> f64 {
    num / den.max(STD_FLOOR)
}

pub fn ann_ret(x: &[f64]) -> f64 {
    mean(x) * TRADING_DAYS
}

pub fn ann_vol(x: &[f64]) -> f64 {
    pop_std(x) * ANNUALIZATION
}

/// Same definition and floor as the training objective.
pub fn sharpe(x: &[f64]) -> f64 {
    ratio(mean(x), pop_std(x)) * ANNUALIZATION
}

pub fn downside_risk(x: &[f64]) -> f64 {
    let sq = x.iter().map(|v| v.min(0.0).powi(2)).sum::<f64>() / x.len() as f64;
    sq.sqrt() * ANNUALIZATION
}

pub fn sortino(x: &[f64]) -> f64 {
    ratio(ann_ret(x), downside_risk(x))
}

/// Largest relative decline of the compounded curve `prod(1 + x)` from
/// its running peak, starting from 1. Never positive.
pub fn max_drawdown(x: &[f64]) -> f64 {
    let mut wealth = 1.0;
    let mut peak = 1.0;
    let mut mdd: f64 = 0.0;
    for v in x {
        wealth *= 1.0 + v;
        if wealth > peak {
            peak = wealth;
        }
        mdd = mdd.min(wealth / peak - 1.0);
    }
    mdd
}

pub fn calmar(x: &[f64]) -> f64 {
    ratio(ann_ret(x), max_drawdown(x).abs())
}

pub fn skew(x: &[f64]) -> f64 {
    central_moment(x, 3) / pop_std(x).max(STD_FLOOR).powi(3)
}

/// Non-excess kurtosis (3 for a normal distribution).
pub fn kurtosis(x: &[f64]) -> f64 {
    central_moment(x, 4) / pop_std(x).max(STD_FLOOR).powi(4)
}

/// The nine metrics of one pnl series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssetMetrics {
    pub ann_ret: f64,
    pub ann_vol: f64,
    pub sharpe: f64,
    pub calmar: f64,
    pub sortino: f64,
    pub downside_risk: f64,
    pub max_drawdown: f64,
    pub skew: f64,
    pub kurtosis: f64,
}

impl AssetMetrics {
    pub fn from_pnl(x: &[f64]) -> Result<Self> {
        check(x)?;
        Ok(Self {
            ann_ret: ann_ret(x),
            ann_vol: ann_vol(x),
            sharpe: sharpe(x),
            calmar: calmar(x),
            sortino: sortino(x),
            downside_risk: downside_risk(x),
            max_drawdown: max_drawdown(x),
            skew: skew(x),
            kurtosis: kurtosis(x),
        })
    }

    /// Values in [`METRIC_NAMES`] order.
    pub fn values(&self) -> [f64; 9] {
        [
            self.ann_ret,
            self.ann_vol,
            self.sharpe,
            self.calmar,
            self.sortino,
            self.downside_risk,
            self.max_drawdown,
            self.skew,
            self.kurtosis,
        ]
    }
}

/// Mean, sample SD, median and mean absolute deviation of one metric
/// across assets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
    pub median: f64,
    pub mad: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InsufficientData { what: "metric summary".into(), msg: "no values".into() });
        }
        let n = values.len() as f64;
        let m = mean(values);
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let h = sorted.len() / 2;
        let median = if sorted.len() % 2 == 1 { sorted[h] } else { (sorted[h - 1] + sorted[h]) / 2.0 };
        let mad = values.iter().map(|v| (v - m).abs()).sum::<f64>() / n;
        Ok(Self { mean: m, sd, median, mad })
    }
}
