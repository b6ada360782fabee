//! Runs a strategy over the trailing holdout of a panel and summarises
//! the resulting pnl.

use std::collections::BTreeMap;

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use super::metrics::{AssetMetrics, Summary, METRIC_NAMES};
use crate::baselines::{matrix_csv, SignalMatrix, Strategy};
use crate::data::ReturnsPanel;
use crate::error::{Error, Result};

/// Metric summaries keyed by metric name.
pub type Aggregates = BTreeMap<String, Summary>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetRow {
    pub market: String,
    pub asset: String,
    pub metrics: AssetMetrics,
}

/// Per-asset metrics with per-market and global aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub strategy: String,
    pub assets: Vec<AssetRow>,
    pub markets: BTreeMap<String, Aggregates>,
    pub global: Aggregates,
}

fn aggregate(rows: &[&AssetRow]) -> Result<Aggregates> {
    let mut out = Aggregates::new();
    for (i, name) in METRIC_NAMES.iter().enumerate() {
        let vals: Vec<f64> = rows.iter().map(|r| r.metrics.values()[i]).collect();
        out.insert(name.to_string(), Summary::of(&vals)?);
    }
    Ok(out)
}

impl MetricsReport {
    pub fn new(strategy: impl Into<String>, assets: Vec<AssetRow>) -> Result<Self> {
        if assets.is_empty() {
            return Err(Error::InsufficientData { what: "metrics report".into(), msg: "no assets".into() });
        }
        let mut by_market: BTreeMap<String, Vec<&AssetRow>> = BTreeMap::new();
        for r in &assets {
            by_market.entry(r.market.clone()).or_default().push(r);
        }
        let markets = by_market
            .iter()
            .map(|(m, rows)| Ok((m.clone(), aggregate(rows)?)))
            .collect::<Result<_>>()?;
        let global = aggregate(&assets.iter().collect::<Vec<_>>())?;
        Ok(Self { strategy: strategy.into(), assets, markets, global })
    }

    /// Merges several single-market reports of the same strategy.
    pub fn combine(strategy: impl Into<String>, parts: &[MetricsReport]) -> Result<Self> {
        Self::new(strategy, parts.iter().flat_map(|p| p.assets.iter().cloned()).collect())
    }

    /// One row per asset.
    pub fn to_csv_string(&self) -> String {
        let mut s = format!("market,asset,{}\n", METRIC_NAMES.join(","));
        for r in &self.assets {
            let vals: Vec<String> = r.metrics.values().iter().map(|v| format!("{v:?}")).collect();
            s.push_str(&format!("{},{},{}\n", r.market, r.asset, vals.join(",")));
        }
        s
    }

    /// Aggregates only, as JSON.
    pub fn aggregates_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct View<'a> {
            strategy: &'a str,
            global: &'a Aggregates,
            markets: &'a BTreeMap<String, Aggregates>,
        }
        Ok(serde_json::to_string_pretty(&View { strategy: &self.strategy, global: &self.global, markets: &self.markets })?)
    }

    /// Per-asset values of one metric in row order.
    pub fn metric(&self, name: &str) -> Result<Vec<f64>> {
        let i = METRIC_NAMES
            .iter()
            .position(|n| *n == name)
            .ok_or_else(|| Error::config(format!("unknown metric {name}")))?;
        Ok(self.assets.iter().map(|r| r.metrics.values()[i]).collect())
    }
}

/// Signals, pnl and metrics of one strategy on one market's holdout.
#[derive(Debug, Clone, PartialEq)]
pub struct Backtest {
    pub signals: SignalMatrix,
    /// Column index where evaluation starts.
    pub start: usize,
    /// `n x (T - start)`.
    pub pnl: Array2<f64>,
    pub report: MetricsReport,
}

impl Backtest {
    pub fn pnl_csv(&self) -> String {
        matrix_csv(&self.signals.asset_ids, &self.signals.dates[self.start..], &self.pnl)
    }

    pub fn signals_csv(&self) -> String {
        self.signals.slice(self.start, self.signals.len()).to_csv_string()
    }
}

/// Evaluates precomputed signals on columns `[start, T)`, skipping any
/// warm-up columns.
pub fn backtest_signals(name: &str, signals: SignalMatrix, panel: &ReturnsPanel, start: usize) -> Result<Backtest> {
    if signals.signals.dim() != panel.returns().dim() {
        return Err(Error::shape(
            "signals",
            format!("{:?}", panel.returns().dim()),
            format!("{:?}", signals.signals.dim()),
        ));
    }
    let start = start.max(signals.warmup);
    if start + 2 > panel.len() {
        return Err(Error::InsufficientData {
            what: panel.market_id().to_string(),
            msg: format!("holdout starting at {start} leaves fewer than 2 observations"),
        });
    }
    let pnl = &signals.signals.slice(s![.., start..]) * &panel.returns().slice(s![.., start..]);
    let assets = pnl
        .rows()
        .into_iter()
        .zip(panel.asset_ids())
        .map(|(row, a)| {
            Ok(AssetRow {
                market: panel.market_id().to_string(),
                asset: a.clone(),
                metrics: AssetMetrics::from_pnl(&row.to_vec())?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let report = MetricsReport::new(name, assets)?;
    Ok(Backtest { signals, start, pnl, report })
}

/// Runs `strategy` over the whole panel and evaluates the last `holdout`
/// columns.
pub fn backtest(strategy: &dyn Strategy, panel: &ReturnsPanel, holdout: usize) -> Result<Backtest> {
    if holdout < 2 || holdout >= panel.len() {
        return Err(Error::InvalidSplit { holdout, len: panel.len() });
    }
    let start = panel.len() - holdout;
    let signals = strategy.signals(panel, start)?;
    backtest_signals(&strategy.name(), signals, panel, start)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::Baseline;
    use crate::data::business_days;
    use crate::objective::sharpe_per_asset;
    use approx::assert_abs_diff_eq;

    fn panel(rows: &[Vec<f64>]) -> ReturnsPanel {
        let n = rows.len();
        let t = rows[0].len();
        let r = Array2::from_shape_fn((n, t), |(j, c)| rows[j][c]);
        ReturnsPanel::new("m", (0..n).map(|j| format!("a{j}")).collect(), business_days(t), r).unwrap()
    }

    struct Zero;
    impl Strategy for Zero {
        fn name(&self) -> String {
            "zero".into()
        }
        fn signals(&self, panel: &ReturnsPanel, _start: usize) -> Result<SignalMatrix> {
            SignalMatrix::for_panel(panel, Array2::zeros(panel.returns().dim()), 0)
        }
    }

    #[test]
    fn zero_signals_give_zero_pnl() {
        let p = panel(&[vec![0.01, -0.02, 0.03, 0.01, -0.01], vec![0.0, 0.02, -0.01, 0.02, 0.01]]);
        let b = backtest(&Zero, &p, 3).unwrap();
        assert!(b.pnl.iter().all(|&v| v == 0.0));
        assert_eq!(b.report.global["sharpe"].median, 0.0);
        assert_eq!(b.report.global["max_drawdown"].mean, 0.0);
        assert_eq!(b.report.global["calmar"].mean, 0.0);
    }

    #[test]
    fn buy_and_hold_matches_objective_sharpe() {
        let p = panel(&[vec![0.05, 0.01, 0.0, 0.02]]);
        let b = backtest(&Baseline::BuyAndHold, &p, 3).unwrap();
        assert_eq!(b.pnl.row(0).to_vec(), vec![0.01, 0.0, 0.02]);
        let obj = sharpe_per_asset(Array2::ones((1, 3)).view(), p.returns().slice(s![.., 1..])).unwrap();
        assert_abs_diff_eq!(b.report.assets[0].metrics.sharpe, obj[0], epsilon = 1e-12);
        assert_abs_diff_eq!(b.report.assets[0].metrics.sharpe, 19.442, epsilon = 5e-4);
    }

    #[test]
    fn holdout_bounds() {
        let p = panel(&[vec![0.01; 5]]);
        assert!(matches!(backtest(&Zero, &p, 5), Err(Error::InvalidSplit { .. })));
        assert!(matches!(backtest(&Zero, &p, 1), Err(Error::InvalidSplit { .. })));
    }

    #[test]
    fn warmup_is_skipped() {
        let p = panel(&[vec![0.01, -0.01, 0.02, 0.0, 0.01, 0.02], vec![0.0, 0.01, 0.0, -0.01, 0.02, 0.01]]);
        let b = backtest(&Baseline::TsMomentum { lookback: 3 }, &p, 5).unwrap();
        assert_eq!(b.start, 3);
        assert_eq!(b.pnl.ncols(), 3);
    }

    #[test]
    fn report_exports() {
        let p = panel(&[vec![0.01, -0.02, 0.03, 0.01], vec![0.0, 0.02, -0.01, 0.02]]);
        let b = backtest(&Baseline::BuyAndHold, &p, 3).unwrap();
        let csv = b.report.to_csv_string();
        assert!(csv.starts_with("market,asset,ann_ret,ann_vol,sharpe"));
        assert_eq!(csv.lines().count(), 3);
        let json: serde_json::Value = serde_json::from_str(&b.report.aggregates_json().unwrap()).unwrap();
        assert!(json["global"]["sharpe"]["median"].is_number());
        assert_eq!(b.report.metric("sharpe").unwrap().len(), 2);
        assert!(b.pnl_csv().starts_with("date,a0,a1\n"));
    }
}
