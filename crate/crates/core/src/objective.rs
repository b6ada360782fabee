//! Differentiable annualised Sharpe objective.
//!
//! The pnl of asset `j` at step `t` is `x = s_t * r_t`: the signal is built
//! from returns up to `t - 1` and earns the same-step return. Per-asset
//! Sharpe uses the population standard deviation with a floor, and the loss
//! is the negated average over assets, then over markets.

use ndarray::{Array1, Array2, ArrayView2, Zip};

use crate::error::{Error, Result};

/// Annualisation factor for daily data.
pub const ANNUALIZATION: f64 = 15.874_507_866_387_544; // sqrt(252)

/// Floor on the pnl standard deviation.
pub const STD_FLOOR: f64 = 1e-8;

/// `s * r`, elementwise.
pub fn window_pnl(signals: ArrayView2<f64>, returns: ArrayView2<f64>) -> Result<Array2<f64>> {
    if signals.dim() != returns.dim() {
        return Err(Error::shape("pnl window", format!("{:?}", returns.dim()), format!("{:?}", signals.dim())));
    }
    Ok(&signals * &returns)
}

/// Mean and population standard deviation of one pnl row.
fn moments(x: impl Iterator<Item = f64> + Clone, k: f64) -> (f64, f64) {
    let mean = x.clone().sum::<f64>() / k;
    let var = x.map(|v| (v - mean) * (v - mean)).sum::<f64>() / k;
    (mean, var.sqrt())
}

/// Annualised Sharpe per asset of a pnl matrix (`assets x steps`).
pub fn sharpe_of_pnl(pnl: ArrayView2<f64>) -> Result<Array1<f64>> {
    let k = pnl.ncols();
    if k < 2 {
        return Err(Error::Window(format!("Sharpe needs at least 2 steps, got {k}")));
    }
    Ok(pnl
        .rows()
        .into_iter()
        .map(|row| {
            let (mean, sd) = moments(row.iter().copied(), k as f64);
            mean / sd.max(STD_FLOOR) * ANNUALIZATION
        })
        .collect())
}

/// Annualised Sharpe of `signals * returns`, one value per asset.
pub fn sharpe_per_asset(signals: ArrayView2<f64>, returns: ArrayView2<f64>) -> Result<Array1<f64>> {
    sharpe_of_pnl(window_pnl(signals, returns)?.view())
}

/// Gradient of `sum_j weight_j * rho_j` with respect to every signal.
fn sharpe_grad(signals: ArrayView2<f64>, returns: ArrayView2<f64>, weight: f64) -> Result<Array2<f64>> {
    let pnl = window_pnl(signals, returns)?;
    let k = pnl.ncols();
    if k < 2 {
        return Err(Error::Window(format!("Sharpe needs at least 2 steps, got {k}")));
    }
    let kf = k as f64;
    let mut grad = Array2::zeros(pnl.dim());
    for (j, row) in pnl.rows().into_iter().enumerate() {
        let (mean, sd) = moments(row.iter().copied(), kf);
        for t in 0..k {
            let dx = if sd > STD_FLOOR {
                ANNUALIZATION * (1.0 / (kf * sd) - mean * (row[t] - mean) / (kf * sd * sd * sd))
            } else {
                ANNUALIZATION / (kf * STD_FLOOR)
            };
            grad[(j, t)] = weight * dx * returns[(j, t)];
        }
    }
    Ok(grad)
}

/// One market's window: signals and the returns they earn, both `n x k`.
#[derive(Debug, Clone, Copy)]
pub struct MarketWindow<'a> {
    pub signals: ArrayView2<'a, f64>,
    pub returns: ArrayView2<'a, f64>,
}

fn check_windows(windows: &[MarketWindow<'_>]) -> Result<()> {
    if windows.is_empty() {
        return Err(Error::config("loss needs at least one market"));
    }
    for w in windows {
        if w.signals.dim() != w.returns.dim() {
            return Err(Error::shape(
                "market window",
                format!("{:?}", w.returns.dim()),
                format!("{:?}", w.signals.dim()),
            ));
        }
        if w.signals.nrows() == 0 {
            return Err(Error::config("market window has no assets"));
        }
    }
    Ok(())
}

/// `-(1/N) sum_i (1/n_i) sum_j rho_ij`.
pub fn quantnet_loss(windows: &[MarketWindow<'_>]) -> Result<f64> {
    check_windows(windows)?;
    let mut total = 0.0;
    for w in windows {
        total += sharpe_per_asset(w.signals, w.returns)?.mean().expect("non-empty");
    }
    Ok(-total / windows.len() as f64)
}

/// Loss value and its gradient with respect to each market's signals.
pub fn loss_backward(windows: &[MarketWindow<'_>]) -> Result<(f64, Vec<Array2<f64>>)> {
    let loss = quantnet_loss(windows)?;
    let n_markets = windows.len() as f64;
    let grads = windows
        .iter()
        .map(|w| sharpe_grad(w.signals, w.returns, -1.0 / (n_markets * w.signals.nrows() as f64)))
        .collect::<Result<Vec<_>>>()?;
    Ok((loss, grads))
}

/// Whether every entry of a matrix is finite.
pub fn all_finite(m: &Array2<f64>) -> bool {
    Zip::from(m).all(|v| v.is_finite())
}
