//! OLS factor regression with an intercept and classical standard errors.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ridge added to the Gram matrix diagonal before solving.
pub const GRAM_RIDGE: f64 = 1e-12;
/// Gram condition numbers above this are treated as collinear.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorModelFit {
    /// Intercept (alpha) first, then one loading per factor.
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// `coefficient / std_error`; 0 where the standard error is exactly 0.
    pub t_stats: Vec<f64>,
    pub residual_variance: f64,
    pub n_obs: usize,
    pub condition_number: f64,
}

/// Regresses `y` (length `T`) on an intercept and the columns of
/// `factors` (`T x F`).
pub fn factor_regression(y: &[f64], factors: ArrayView2<f64>) -> Result<FactorModelFit> {
    let (t, f) = factors.dim();
    if y.len() != t {
        return Err(Error::shape("factor regression rows", y.len(), t));
    }
    let p = f + 1;
    if t <= p {
        return Err(Error::Rank(format!("{t} observations cannot identify {p} coefficients")));
    }
    if y.iter().chain(factors.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InsufficientData { what: "factor regression".into(), msg: "non-finite input".into() });
    }
    let x = DMatrix::from_fn(t, p, |r, c| if c == 0 { 1.0 } else { factors[(r, c - 1)] });
    let yv = DVector::from_column_slice(y);
    let gram = x.transpose() * &x;
    let eig = gram.clone().symmetric_eigenvalues();
    let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| (lo.min(e.abs()), hi.max(e.abs())));
    let condition_number = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if condition_number > MAX_CONDITION {
        return Err(Error::Rank(format!("factor matrix is collinear (condition number {condition_number:.3e})")));
    }
    let ridged = &gram + DMatrix::identity(p, p) * GRAM_RIDGE;
    let chol = ridged
        .cholesky()
        .ok_or_else(|| Error::Rank("Gram matrix is not positive definite".into()))?;
    let beta = chol.solve(&(x.transpose() * &yv));
    let resid = &yv - &x * &beta;
    let rss = resid.norm_squared();
    let residual_variance = rss / (t - p) as f64;
    let inv = chol.inverse();
    let std_errors: Vec<f64> = (0..p).map(|i| (residual_variance * inv[(i, i)]).max(0.0).sqrt()).collect();
    let coefficients: Vec<f64> = beta.iter().copied().collect();
    let t_stats = coefficients
        .iter()
        .zip(&std_errors)
        .map(|(c, s)| if *s > 0.0 { c / s } else { 0.0 })
        .collect();
    Ok(FactorModelFit { coefficients, std_errors, t_stats, residual_variance, n_obs: t, condition_number })
}

/// Daily factor returns keyed by date.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorTable {
    pub names: Vec<String>,
    pub rows: BTreeMap<NaiveDate, Vec<f64>>,
}

/// Expected factor file header after the date column.
pub const FACTOR_COLUMNS: [&str; 6] = ["mkt_rf", "smb", "hml", "rmw", "cma", "mom"];

impl FactorTable {
    /// Parses `date,<factors...>` with values in percent.
    pub fn parse(name: &str, text: &str) -> Result<Self> {
        let perr = |line: u64, msg: String| Error::Parse { path: name.into(), line, msg };
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let header = rdr.headers().map_err(|e| perr(1, e.to_string()))?.clone();
        if header.len() < 2 || header.get(0).map(str::trim) != Some("date") {
            return Err(perr(1, "factor header must start with `date` and name at least one factor".into()));
        }
        let names: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
        let mut rows = BTreeMap::new();
        for (i, rec) in rdr.records().enumerate() {
            let line = i as u64 + 2;
            let rec = rec.map_err(|e| perr(line, e.to_string()))?;
            let date = NaiveDate::parse_from_str(rec.get(0).unwrap_or("").trim(), "%Y-%m-%d")
                .map_err(|e| perr(line, format!("bad date: {e}")))?;
            let vals = rec
                .iter()
                .skip(1)
                .map(|c| {
                    c.trim()
                        .parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .map(|v| v / 100.0)
                        .ok_or_else(|| perr(line, format!("bad factor value {c:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            if rows.insert(date, vals).is_some() {
                return Err(perr(line, format!("duplicate date {date}")));
            }
        }
        Ok(Self { names, rows })
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingInput(path.to_path_buf()));
        }
        Self::parse(&path.display().to_string(), &std::fs::read_to_string(path)?)
    }

    /// Factor matrix for `dates` (`T x F`).
    pub fn align(&self, dates: &[NaiveDate]) -> Result<Array2<f64>> {
        let f = self.names.len();
        let mut out = Array2::zeros((dates.len(), f));
        for (r, d) in dates.iter().enumerate() {
            let row = self.rows.get(d).ok_or(Error::Alignment { date: d.to_string() })?;
            for (c, v) in row.iter().enumerate() {
                out[(r, c)] = *v;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn exact_linear_case() {
        let f: Vec<f64> = (0..50).map(|t| ((t * 7) % 11) as f64 * 0.01 - 0.05).collect();
        let y: Vec<f64> = f.iter().map(|v| 2.0 * v + 0.001).collect();
        let x = Array2::from_shape_vec((50, 1), f).unwrap();
        let fit = factor_regression(&y, x.view()).unwrap();
        assert_abs_diff_eq!(fit.coefficients[0], 0.001, epsilon = 1e-10);
        assert_abs_diff_eq!(fit.coefficients[1], 2.0, epsilon = 1e-10);
        assert!(fit.residual_variance < 1e-20);
        assert!(fit.t_stats.iter().all(|t| t.is_finite()));
    }

    #[test]
    fn orthogonal_factors_match_univariate_projections() {
        // Centred, mutually orthogonal columns (Walsh patterns).
        let t = 16;
        let f1: Vec<f64> = (0..t).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let f2: Vec<f64> = (0..t).map(|i| if (i / 2) % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let y: Vec<f64> = (0..t).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = Array2::from_shape_fn((t, 2), |(r, c)| if c == 0 { f1[r] } else { f2[r] });
        let fit = factor_regression(&y, x.view()).unwrap();
        let proj = |f: &[f64]| y.iter().zip(f).map(|(a, b)| a * b).sum::<f64>() / f.iter().map(|v| v * v).sum::<f64>();
        assert_abs_diff_eq!(fit.coefficients[0], y.iter().sum::<f64>() / t as f64, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.coefficients[1], proj(&f1), epsilon = 1e-12);
        assert_abs_diff_eq!(fit.coefficients[2], proj(&f2), epsilon = 1e-12);
    }

    #[test]
    fn noise_alpha_is_insignificant() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let x = Array2::from_shape_fn((1000, 5), |_| rng.random_range(-0.02..0.02));
        let y: Vec<f64> = (0..1000).map(|_| rng.random_range(-0.01..0.01)).collect();
        let fit = factor_regression(&y, x.view()).unwrap();
        assert!(fit.t_stats[0].abs() < 4.0);
    }

    #[test]
    fn rank_errors() {
        let x = Array2::from_shape_vec((3, 2), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert!(matches!(factor_regression(&[1.0, 2.0, 3.0], x.view()), Err(Error::Rank(_))));
        let x = Array2::from_shape_fn((20, 2), |(r, _)| r as f64);
        let y: Vec<f64> = (0..20).map(|r| r as f64).collect();
        assert!(matches!(factor_regression(&y, x.view()), Err(Error::Rank(_))));
    }

    #[test]
    fn factor_file_parsing() {
        let text = "date,mkt_rf,smb,hml,rmw,cma,mom\n2020-01-02,1.5,0,0,0,0,-2\n2020-01-03,0.5,0,0,0,0,1\n";
        let t = FactorTable::parse("f.csv", text).unwrap();
        assert_eq!(t.names, FACTOR_COLUMNS);
        let d = |s| NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap();
        let m = t.align(&[d("2020-01-03"), d("2020-01-02")]).unwrap();
        assert_eq!(m[(1, 0)], 0.015);
        assert_eq!(m[(1, 5)], -0.02);
        assert!(matches!(t.align(&[d("2020-01-06")]), Err(Error::Alignment { .. })));
        assert!(matches!(
            FactorTable::parse("f.csv", "date,mkt\n2020-01-02,x\n"),
            Err(Error::Parse { line: 2, .. })
        ));
    }
}
