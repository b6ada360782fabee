//! Backtesting, performance metrics, two-sample tests, factor regression
//! and clustering of market representations.

pub mod backtest;
pub mod cluster;
pub mod metrics;
pub mod regression;
pub mod stats;

pub use backtest::{backtest, backtest_signals, Aggregates, AssetRow, Backtest, MetricsReport};
pub use cluster::{cluster_markets, cut_tree, ward_linkage, Clustering, Merge, DEFAULT_CLUSTERS};
pub use metrics::{AssetMetrics, Summary, METRIC_NAMES};
pub use regression::{factor_regression, FactorModelFit, FactorTable};
pub use stats::{ks_test, rank_sum_test, KsResult, RankSumResult};
