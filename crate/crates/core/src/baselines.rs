//! Non-learned benchmark strategies: buy and hold, inverse-volatility risk
//! parity, time-series momentum and cross-sectional momentum.
//!
//! Every windowed strategy is causal: the signal at column `t` only reads
//! returns in `[t - lookback, t)`, and columns before the first full window
//! are flat and counted as warm-up.

use chrono::NaiveDate;
use ndarray::{Array2, ArrayView1};

use crate::data::ReturnsPanel;
use crate::error::{Error, Result};

/// Volatility floor applied before inverting in risk parity.
pub const VOL_FLOOR: f64 = 1e-8;

/// Default trailing window, roughly one trading year.
pub const DEFAULT_LOOKBACK: usize = 252;

/// Default cross-sectional quantile.
pub const DEFAULT_QUANTILE: f64 = 0.33;

/// Strategy output with entries in `[-1, 1]`, aligned with a return panel.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalMatrix {
    pub market_id: String,
    pub asset_ids: Vec<String>,
    pub dates: Vec<NaiveDate>,
    pub signals: Array2<f64>,
    /// Leading columns that are flat only because a lookback window was not full yet.
    pub warmup: usize,
}

impl SignalMatrix {
    pub fn for_panel(panel: &ReturnsPanel, signals: Array2<f64>, warmup: usize) -> Result<Self> {
        if signals.dim() != panel.returns().dim() {
            return Err(Error::shape(
                format!("signals for {}", panel.market_id()),
                format!("{:?}", panel.returns().dim()),
                format!("{:?}", signals.dim()),
            ));
        }
        if let Some(v) = signals.iter().find(|v| !(v.abs() <= 1.0)) {
            return Err(Error::State(format!("signal {v} outside [-1, 1]")));
        }
        Ok(Self {
            market_id: panel.market_id().to_string(),
            asset_ids: panel.asset_ids().to_vec(),
            dates: panel.dates().to_vec(),
            signals,
            warmup,
        })
    }

    /// Columns `[start, end)`, with the warm-up count shifted accordingly.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        Self {
            market_id: self.market_id.clone(),
            asset_ids: self.asset_ids.clone(),
            dates: self.dates[start..end].to_vec(),
            signals: self.signals.slice(ndarray::s![.., start..end]).to_owned(),
            warmup: self.warmup.saturating_sub(start).min(end - start),
        }
    }

    pub fn n_assets(&self) -> usize {
        self.asset_ids.len()
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    /// Same layout as a return panel CSV.
    pub fn to_csv_string(&self) -> String {
        matrix_csv(&self.asset_ids, &self.dates, &self.signals)
    }
}

/// `date,asset...` CSV of an `n x T` matrix.
pub fn matrix_csv(asset_ids: &[String], dates: &[NaiveDate], m: &Array2<f64>) -> String {
    let mut out = String::from("date");
    for id in asset_ids {
        out.push(',');
        out.push_str(id);
    }
    out.push('\n');
    for (t, d) in dates.iter().enumerate() {
        out.push_str(&d.format("%Y-%m-%d").to_string());
        for j in 0..asset_ids.len() {
            out.push(',');
            out.push_str(&m[(j, t)].to_string());
        }
        out.push('\n');
    }
    out
}

/// Anything that maps a return panel to signals.
pub trait Strategy {
    fn name(&self) -> String;

    /// Signals for every column of `panel`; only columns `>= start` are traded.
    fn signals(&self, panel: &ReturnsPanel, start: usize) -> Result<SignalMatrix>;
}

fn check_lookback(panel: &ReturnsPanel, lookback: usize) -> Result<()> {
    if lookback < 2 || panel.len() <= lookback {
        return Err(Error::Window(format!(
            "{}: lookback {lookback} needs at least 2 and fewer than the {} observations",
            panel.market_id(),
            panel.len()
        )));
    }
    Ok(())
}

fn window_mean(row: ArrayView1<f64>, t: usize, lookback: usize) -> f64 {
    let mut sum = 0.0;
    for k in t - lookback..t {
        sum += row[k];
    }
    sum / lookback as f64
}

fn window_sample_std(row: ArrayView1<f64>, t: usize, lookback: usize) -> f64 {
    let mean = window_mean(row, t, lookback);
    let mut ss = 0.0;
    for k in t - lookback..t {
        let d = row[k] - mean;
        ss += d * d;
    }
    (ss / (lookback - 1) as f64).sqrt()
}

/// Always long one unit.
pub fn buy_and_hold(panel: &ReturnsPanel) -> SignalMatrix {
    let signals = Array2::ones(panel.returns().dim());
    SignalMatrix::for_panel(panel, signals, 0).expect("ones fit any panel")
}

/// Inverse-volatility weights normalised to sum to one at every active column.
pub fn risk_parity(panel: &ReturnsPanel, lookback: usize) -> Result<SignalMatrix> {
    check_lookback(panel, lookback)?;
    let r = panel.returns();
    let (n, len) = r.dim();
    let mut s = Array2::zeros((n, len));
    let mut inv = vec![0.0; n];
    for t in lookback..len {
        for (j, w) in inv.iter_mut().enumerate() {
            *w = 1.0 / window_sample_std(r.row(j), t, lookback).max(VOL_FLOOR);
        }
        let total: f64 = inv.iter().sum();
        for (j, w) in inv.iter().enumerate() {
            s[(j, t)] = w / total;
        }
    }
    SignalMatrix::for_panel(panel, s, lookback)
}

/// Trailing mean return, clamped to `[-1, 1]`.
pub fn ts_momentum(panel: &ReturnsPanel, lookback: usize) -> Result<SignalMatrix> {
    check_lookback(panel, lookback)?;
    let r = panel.returns();
    let (n, len) = r.dim();
    let mut s = Array2::zeros((n, len));
    for t in lookback..len {
        for j in 0..n {
            s[(j, t)] = window_mean(r.row(j), t, lookback).clamp(-1.0, 1.0);
        }
    }
    SignalMatrix::for_panel(panel, s, lookback)
}

/// Linear-interpolation quantile of already sorted values.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = q * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Cross-sectional momentum.
///
/// Winners above the `1 - q` quantile of trailing means get `mu`; losers
/// below the `q` quantile get `-mu` (a positive number for a negative mean,
/// exactly as the rule is usually printed); everything else is flat.
pub fn cs_momentum(panel: &ReturnsPanel, lookback: usize, q: f64) -> Result<SignalMatrix> {
    check_lookback(panel, lookback)?;
    if !(q > 0.0 && q < 0.5) {
        return Err(Error::config(format!("quantile q={q} must lie in (0, 0.5)")));
    }
    if panel.n_assets() < 2 {
        return Err(Error::config("cross-sectional momentum needs at least 2 assets"));
    }
    let r = panel.returns();
    let (n, len) = r.dim();
    let mut s = Array2::zeros((n, len));
    let mut mu = vec![0.0; n];
    let mut sorted = vec![0.0; n];
    for t in lookback..len {
        for (j, m) in mu.iter_mut().enumerate() {
            *m = window_mean(r.row(j), t, lookback);
        }
        sorted.copy_from_slice(&mu);
        sorted.sort_by(f64::total_cmp);
        let upper = quantile_sorted(&sorted, 1.0 - q);
        let lower = quantile_sorted(&sorted, q);
        for (j, &m) in mu.iter().enumerate() {
            s[(j, t)] = if m > upper {
                m.clamp(-1.0, 1.0)
            } else if m < lower {
                (-m).clamp(-1.0, 1.0)
            } else {
                0.0
            };
        }
    }
    SignalMatrix::for_panel(panel, s, lookback)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Baseline {
    BuyAndHold,
    RiskParity { lookback: usize },
    TsMomentum { lookback: usize },
    CsMomentum { lookback: usize, q: f64 },
}

impl Baseline {
    /// The four benchmarks with their customary parameters.
    pub fn all() -> [Baseline; 4] {
        [
            Baseline::BuyAndHold,
            Baseline::RiskParity { lookback: DEFAULT_LOOKBACK },
            Baseline::TsMomentum { lookback: DEFAULT_LOOKBACK },
            Baseline::CsMomentum { lookback: DEFAULT_LOOKBACK, q: DEFAULT_QUANTILE },
        ]
    }
}

impl Strategy for Baseline {
    fn name(&self) -> String {
        match self {
            Baseline::BuyAndHold => "buy-and-hold",
            Baseline::RiskParity { .. } => "risk-parity",
            Baseline::TsMomentum { .. } => "ts-momentum",
            Baseline::CsMomentum { .. } => "cs-momentum",
        }
        .to_string()
    }

    fn signals(&self, panel: &ReturnsPanel, _start: usize) -> Result<SignalMatrix> {
        match *self {
            Baseline::BuyAndHold => Ok(buy_and_hold(panel)),
            Baseline::RiskParity { lookback } => risk_parity(panel, lookback),
            Baseline::TsMomentum { lookback } => ts_momentum(panel, lookback),
            Baseline::CsMomentum { lookback, q } => cs_momentum(panel, lookback, q),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::business_days;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn panel(rows: &[Vec<f64>]) -> ReturnsPanel {
        let len = rows[0].len();
        let ids = (0..rows.len()).map(|j| format!("a{j}")).collect();
        let r = Array2::from_shape_fn((rows.len(), len), |(j, t)| rows[j][t]);
        ReturnsPanel::new("m", ids, business_days(len), r).unwrap()
    }

    #[test]
    fn buy_and_hold_is_all_ones() {
        let p = panel(&vec![vec![0.01, -0.02, 0.0, 0.03, 0.01]; 3]);
        let s = buy_and_hold(&p);
        assert_eq!(s.signals.dim(), (3, 5));
        assert!(s.signals.iter().all(|&v| v == 1.0));
        let p = panel(&[vec![0.5, 0.1]]);
        assert_eq!(buy_and_hold(&p).signals, Array2::<f64>::ones((1, 2)));
    }

    #[test]
    fn risk_parity_inverse_vol_weights() {
        // Alternating +-a has window std proportional to a.
        let alt = |a: f64| (0..6).map(|t| if t % 2 == 0 { a } else { -a }).collect::<Vec<_>>();
        let p = panel(&[alt(0.01), alt(0.03)]);
        let s = risk_parity(&p, 4).unwrap();
        for t in 4..6 {
            assert_abs_diff_eq!(s.signals[(0, t)], 0.75, epsilon = 1e-12);
            assert_abs_diff_eq!(s.signals[(1, t)], 0.25, epsilon = 1e-12);
        }
        for t in 0..4 {
            assert_eq!(s.signals.column(t).sum(), 0.0);
        }
        assert_eq!(s.warmup, 4);

        let p = panel(&[alt(0.02), alt(0.02), alt(0.02)]);
        let s = risk_parity(&p, 4).unwrap();
        assert_abs_diff_eq!(s.signals[(1, 5)], 1.0 / 3.0, epsilon = 1e-15);

        let p = panel(&[alt(0.02)]);
        assert_eq!(risk_parity(&p, 4).unwrap().signals[(0, 5)], 1.0);
    }

    #[test]
    fn risk_parity_floors_zero_vol() {
        let p = panel(&[vec![0.0; 6], vec![0.01, -0.01, 0.01, -0.01, 0.01, -0.01]]);
        let s = risk_parity(&p, 4).unwrap();
        assert!(s.signals[(0, 5)] > 0.999_999);
        assert_abs_diff_eq!(s.signals.column(5).sum(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn ts_momentum_examples() {
        let p = panel(&[vec![0.002; 253]]);
        let s = ts_momentum(&p, 252).unwrap();
        assert_abs_diff_eq!(s.signals[(0, 252)], 0.002, epsilon = 1e-15);
        let alt: Vec<f64> = (0..253).map(|t| if t % 2 == 0 { 0.01 } else { -0.01 }).collect();
        let s = ts_momentum(&panel(&[alt]), 252).unwrap();
        assert_eq!(s.signals[(0, 252)], 0.0);
        let s = ts_momentum(&panel(&[vec![2.0; 5]]), 3).unwrap();
        assert_eq!(s.signals[(0, 4)], 1.0);
    }

    #[test]
    fn cs_momentum_examples() {
        let p = panel(&[vec![0.01; 4], vec![0.0; 4], vec![-0.01; 4]]);
        let s = cs_momentum(&p, 3, 0.33).unwrap();
        assert_abs_diff_eq!(s.signals[(0, 3)], 0.01, epsilon = 1e-15);
        assert_eq!(s.signals[(1, 3)], 0.0);
        assert_abs_diff_eq!(s.signals[(2, 3)], 0.01, epsilon = 1e-15);

        let p = panel(&vec![vec![0.005; 4]; 4]);
        let s = cs_momentum(&p, 3, 0.33).unwrap();
        assert!(s.signals.iter().all(|&v| v == 0.0));

        let p = panel(&[vec![0.02; 4], vec![-0.02; 4]]);
        let s = cs_momentum(&p, 3, 0.33).unwrap();
        assert_abs_diff_eq!(s.signals[(0, 3)], 0.02, epsilon = 1e-15);
        assert_abs_diff_eq!(s.signals[(1, 3)], 0.02, epsilon = 1e-15);
    }

    #[test]
    fn windowed_strategies_need_history() {
        let p = panel(&[vec![0.0; 5], vec![0.0; 5]]);
        assert!(matches!(ts_momentum(&p, 5), Err(Error::Window(_))));
        assert!(cs_momentum(&p, 3, 0.6).is_err());
        assert!(cs_momentum(&panel(&[vec![0.0; 5]]), 3, 0.33).is_err());
    }

    #[test]
    fn quantile_interpolates_linearly() {
        let v = [-0.01, 0.0, 0.01];
        assert_abs_diff_eq!(quantile_sorted(&v, 0.5), 0.0);
        assert_abs_diff_eq!(quantile_sorted(&v, 0.25), -0.005, epsilon = 1e-18);
        assert_abs_diff_eq!(quantile_sorted(&v, 1.0), 0.01);
    }

    fn arb_panel() -> impl proptest::strategy::Strategy<Value = ReturnsPanel> {
        use proptest::strategy::Strategy as _;
        (1usize..5, 12usize..30).prop_flat_map(|(n, len)| {
            proptest::collection::vec(-0.05f64..0.05, n * len).prop_map(move |v| {
                let r = Array2::from_shape_vec((n, len), v).unwrap();
                let ids = (0..n).map(|j| format!("a{j}")).collect();
                ReturnsPanel::new("m", ids, business_days(len), r).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn baselines_bounded_and_causal(p in arb_panel(), cut in 6usize..12, bump in -0.5f64..0.5) {
            let lookback = 5;
            let mut all = vec![risk_parity(&p, lookback).unwrap(), ts_momentum(&p, lookback).unwrap()];
            if p.n_assets() >= 2 {
                all.push(cs_momentum(&p, lookback, 0.33).unwrap());
            }
            for s in &all {
                prop_assert!(s.signals.iter().all(|v| v.abs() <= 1.0));
            }
            // Perturb everything from column `cut` on: signals up to `cut` must not move.
            let mut r = p.returns().clone();
            for t in cut..p.len() {
                for j in 0..p.n_assets() { r[(j, t)] += bump; }
            }
            let q = ReturnsPanel::new("m", p.asset_ids().to_vec(), p.dates().to_vec(), r).unwrap();
            let mut again = vec![risk_parity(&q, lookback).unwrap(), ts_momentum(&q, lookback).unwrap()];
            if q.n_assets() >= 2 {
                again.push(cs_momentum(&q, lookback, 0.33).unwrap());
            }
            for (a, b) in all.iter().zip(&again) {
                for t in 0..=cut {
                    prop_assert_eq!(a.signals.column(t), b.signals.column(t));
                }
            }
        }

        #[test]
        fn risk_parity_weights_sum_to_one(p in arb_panel()) {
            let s = risk_parity(&p, 5).unwrap();
            for t in 5..p.len() {
                prop_assert!((s.signals.column(t).sum() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn cs_momentum_leg_sizes(p in arb_panel()) {
            prop_assume!(p.n_assets() >= 2);
            let q = 0.33;
            let s = cs_momentum(&p, 5, q).unwrap();
            let r = p.returns();
            let cap = (q * p.n_assets() as f64).ceil() as usize + 1;
            for t in 5..p.len() {
                let mu: Vec<f64> = (0..p.n_assets()).map(|j| window_mean(r.row(j), t, 5)).collect();
                let mut sorted = mu.clone();
                sorted.sort_by(f64::total_cmp);
                let longs = mu.iter().filter(|&&m| m > quantile_sorted(&sorted, 1.0 - q)).count();
                let shorts = mu.iter().filter(|&&m| m < quantile_sorted(&sorted, q)).count();
                prop_assert!(longs <= cap && shorts <= cap);
                let active = s.signals.column(t).iter().filter(|v| **v != 0.0).count();
                prop_assert!(active <= longs + shorts);
            }
        }
    }
}
