//! Return panels: CSV ingestion, excess-return construction, holdout splits
//! and a synthetic multi-market generator with a shared latent factor.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Trading days per year, used for rate day-count and annualisation.
pub const TRADING_DAYS: f64 = 252.0;

/// Largest absolute value accepted as a daily simple return in `returns` mode.
/// Anything above is almost certainly a price pasted into a returns file.
pub const MAX_ABS_DAILY_RETURN: f64 = 10.0;

const DATE_FMT: &str = "%Y-%m-%d";
const MISSING_TOKENS: [&str; 6] = ["", "NA", "N/A", "NaN", "nan", "null"];

/// Per-market matrix of daily excess returns, assets by time.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnsPanel {
    market_id: String,
    asset_ids: Vec<String>,
    dates: Vec<NaiveDate>,
    returns: Array2<f64>,
}

impl ReturnsPanel {
    pub fn new(
        market_id: impl Into<String>,
        asset_ids: Vec<String>,
        dates: Vec<NaiveDate>,
        returns: Array2<f64>,
    ) -> Result<Self> {
        let market_id = market_id.into();
        if asset_ids.is_empty() {
            return Err(Error::InsufficientData {
                what: market_id,
                msg: "panel has no assets".into(),
            });
        }
        if dates.len() < 2 {
            return Err(Error::InsufficientData {
                what: market_id,
                msg: format!("panel needs at least 2 observations, got {}", dates.len()),
            });
        }
        let expected = (asset_ids.len(), dates.len());
        if returns.dim() != expected {
            return Err(Error::shape(
                format!("returns of {market_id}"),
                format!("{expected:?}"),
                format!("{:?}", returns.dim()),
            ));
        }
        let mut seen = HashSet::new();
        for id in &asset_ids {
            if !seen.insert(id) {
                return Err(Error::config(format!("duplicate asset id {id} in {market_id}")));
            }
        }
        if let Some(w) = dates.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::InsufficientData {
                what: market_id,
                msg: format!("dates not strictly increasing at {}", w[1]),
            });
        }
        if returns.iter().any(|v| !v.is_finite()) {
            return Err(Error::InsufficientData {
                what: market_id,
                msg: "non-finite return".into(),
            });
        }
        Ok(Self { market_id, asset_ids, dates, returns })
    }

    pub fn market_id(&self) -> &str {
        &self.market_id
    }

    pub fn asset_ids(&self) -> &[String] {
        &self.asset_ids
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    /// `n_assets x len` matrix.
    pub fn returns(&self) -> &Array2<f64> {
        &self.returns
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

    /// Columns `[start, end)` as a new panel. Needs at least two columns.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.len() {
            return Err(Error::Window(format!(
                "column range {start}..{end} outside panel of length {}",
                self.len()
            )));
        }
        Self::new(
            self.market_id.clone(),
            self.asset_ids.clone(),
            self.dates[start..end].to_vec(),
            self.returns.slice(s![.., start..end]).to_owned(),
        )
    }

    /// Subtracts the daily reference rate (annualised percent, ACT/252) matched by date.
    pub fn to_excess(&self, rates: &RateSeries) -> Result<Self> {
        let mut out = self.returns.clone();
        for (t, date) in self.dates.iter().enumerate() {
            let daily = rates.daily(*date)?;
            out.column_mut(t).mapv_inplace(|r| r - daily);
        }
        Self::new(self.market_id.clone(), self.asset_ids.clone(), self.dates.clone(), out)
    }

    /// Serialises in the ingestion layout (`date,asset...`, returns as cells).
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        out.push_str("date");
        for id in &self.asset_ids {
            out.push(',');
            out.push_str(id);
        }
        out.push('\n');
        for (t, date) in self.dates.iter().enumerate() {
            out.push_str(&date.format(DATE_FMT).to_string());
            for j in 0..self.n_assets() {
                out.push(',');
                out.push_str(&self.returns[(j, t)].to_string());
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv_string())?;
        Ok(())
    }
}

/// How cells of an input CSV are interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IngestMode {
    #[default]
    Prices,
    Returns,
}

impl std::str::FromStr for IngestMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prices" => Ok(IngestMode::Prices),
            "returns" => Ok(IngestMode::Returns),
            other => Err(Error::config(format!("unknown ingest mode {other:?}"))),
        }
    }
}

/// Reference rate series, annualised percent keyed by date.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RateSeries {
    rates: BTreeMap<NaiveDate, f64>,
}

impl RateSeries {
    pub fn new(rates: BTreeMap<NaiveDate, f64>) -> Self {
        Self { rates }
    }

    /// Parses `date,rate` CSV text.
    pub fn parse(name: &str, text: &str) -> Result<Self> {
        let mut rates = BTreeMap::new();
        let mut reader = csv::ReaderBuilder::new()
            .flexible(true)
            .from_reader(text.as_bytes());
        for rec in reader.records() {
            let rec = rec.map_err(|e| csv_error(name, &e))?;
            let line = rec.position().map_or(0, |p| p.line());
            if rec.len() != 2 {
                return Err(parse_err(name, line, format!("expected 2 fields, got {}", rec.len())));
            }
            let date = parse_date(name, line, &rec[0])?;
            let rate: f64 = rec[1]
                .trim()
                .parse()
                .map_err(|_| parse_err(name, line, format!("bad rate {:?}", &rec[1])))?;
            if !rate.is_finite() {
                return Err(parse_err(name, line, "non-finite rate"));
            }
            rates.insert(date, rate);
        }
        Ok(Self { rates })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        Self::parse(&path.display().to_string(), &text)
    }

    /// Per-trading-day rate as a fraction.
    pub fn daily(&self, date: NaiveDate) -> Result<f64> {
        self.rates
            .get(&date)
            .map(|r| r / 100.0 / TRADING_DAYS)
            .ok_or_else(|| Error::Alignment { date: date.format(DATE_FMT).to_string() })
    }
}

fn read_text(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    Ok(fs::read_to_string(path)?)
}

fn parse_err(name: &str, line: u64, msg: impl Into<String>) -> Error {
    Error::Parse { path: name.to_string(), line, msg: msg.into() }
}

fn csv_error(name: &str, e: &csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    parse_err(name, line, e.to_string())
}

fn parse_date(name: &str, line: u64, raw: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(raw.trim(), DATE_FMT)
        .map_err(|_| parse_err(name, line, format!("bad date {raw:?}")))
}

/// Ingests one market file. The market id is the file stem.
pub fn ingest_csv(path: &Path, rate_path: Option<&Path>, mode: IngestMode) -> Result<ReturnsPanel> {
    let text = read_text(path)?;
    let market = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "market".into());
    let rates = rate_path.map(RateSeries::load).transpose()?;
    ingest_str(&market, &path.display().to_string(), &text, mode, rates.as_ref())
}

/// Ingests CSV text: `date,asset1,...,assetN` with prices or raw returns.
///
/// Dates with any missing cell are dropped before returns are formed, so a
/// price panel stays rectangular.
pub fn ingest_str(
    market_id: &str,
    source: &str,
    text: &str,
    mode: IngestMode,
    rates: Option<&RateSeries>,
) -> Result<ReturnsPanel> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| csv_error(source, &e))?.clone();
    if header.len() < 2 || header[0].trim() != "date" {
        return Err(parse_err(source, 1, "header must be `date,asset1,...`"));
    }
    let asset_ids: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
    let n = asset_ids.len();

    let mut dates = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut dropped = 0usize;
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_error(source, &e))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != n + 1 {
            return Err(parse_err(source, line, format!("expected {} fields, got {}", n + 1, rec.len())));
        }
        let date = parse_date(source, line, &rec[0])?;
        let mut row = Vec::with_capacity(n);
        let mut missing = false;
        for cell in rec.iter().skip(1) {
            let cell = cell.trim();
            if MISSING_TOKENS.contains(&cell) {
                missing = true;
                continue;
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_err(source, line, format!("bad number {cell:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(source, line, format!("non-finite value {cell:?}")));
            }
            match mode {
                IngestMode::Prices if v <= 0.0 => {
                    return Err(parse_err(source, line, format!("non-positive price {cell}")));
                }
                IngestMode::Returns if v.abs() > MAX_ABS_DAILY_RETURN => {
                    return Err(parse_err(
                        source,
                        line,
                        format!("value {cell} is not a plausible daily return (price in returns mode?)"),
                    ));
                }
                _ => {}
            }
            row.push(v);
        }
        if missing {
            dropped += 1;
            continue;
        }
        if let Some(prev) = dates.last() {
            if date <= *prev {
                return Err(parse_err(source, line, format!("date {date} not after {prev}")));
            }
        }
        dates.push(date);
        rows.push(row);
    }
    if dropped > 0 {
        log::info!("{market_id}: dropped {dropped} rows with missing cells");
    }

    let (dates, values) = match mode {
        IngestMode::Returns => (dates, rows),
        IngestMode::Prices => {
            if rows.len() < 3 {
                return Err(Error::InsufficientData {
                    what: market_id.to_string(),
                    msg: format!("{} usable price rows, need at least 3", rows.len()),
                });
            }
            let rets = rows
                .windows(2)
                .map(|w| w[1].iter().zip(&w[0]).map(|(p1, p0)| p1 / p0 - 1.0).collect())
                .collect();
            (dates[1..].to_vec(), rets)
        }
    };
    if values.len() < 2 {
        return Err(Error::InsufficientData {
            what: market_id.to_string(),
            msg: format!("{} usable return rows, need at least 2", values.len()),
        });
    }
    let t_len = values.len();
    let returns = Array2::from_shape_fn((n, t_len), |(j, t)| values[t][j]);
    let panel = ReturnsPanel::new(market_id, asset_ids, dates, returns)?;
    match rates {
        Some(r) => panel.to_excess(r),
        None => Ok(panel),
    }
}

/// Train / validation split where validation is the trailing `holdout_len` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelSplit {
    pub train: ReturnsPanel,
    pub validation: ReturnsPanel,
    pub holdout_len: usize,
}

/// Holds out the last `holdout_len` observations. Both parts need two columns.
pub fn split_holdout(panel: &ReturnsPanel, holdout_len: usize) -> Result<PanelSplit> {
    let len = panel.len();
    if holdout_len == 0 || holdout_len >= len {
        return Err(Error::InvalidSplit { holdout: holdout_len, len });
    }
    let cut = len - holdout_len;
    let part = |a, b| {
        panel.slice(a, b).map_err(|_| Error::InsufficientData {
            what: panel.market_id().to_string(),
            msg: format!("split at {cut} leaves a part with fewer than 2 observations"),
        })
    };
    Ok(PanelSplit { train: part(0, cut)?, validation: part(cut, len)?, holdout_len })
}

/// Parameters of the synthetic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub n_markets: usize,
    pub assets_per_market: usize,
    pub length: usize,
    /// AR(1) coefficient of the shared factor, in `[0, 1)`.
    pub factor_persistence: f64,
    pub factor_loading: f64,
    pub idio_vol: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_markets: 8,
            assets_per_market: 5,
            length: 1500,
            factor_persistence: 0.9,
            factor_loading: 1.0,
            idio_vol: SYNTH_IDIO_VOL_40PCT,
            seed: 0,
        }
    }
}

/// Idiosyncratic vol at which a unit-loading factor explains 40% of the
/// average asset variance: loadings are Uniform(-1, 1), so E[b^2] = 1/3 and
/// (1/3) / (1/3 + s^2) = 0.4 gives s^2 = 1/2.
pub const SYNTH_IDIO_VOL_40PCT: f64 = std::f64::consts::FRAC_1_SQRT_2;

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_markets == 0 || self.assets_per_market == 0 {
            return Err(Error::config("synthetic spec needs at least one market and one asset"));
        }
        if self.length < 2 {
            return Err(Error::config("synthetic length must be at least 2"));
        }
        if !(0.0..1.0).contains(&self.factor_persistence) {
            return Err(Error::config("factor_persistence must lie in [0, 1)"));
        }
        if !(self.factor_loading >= 0.0 && self.factor_loading.is_finite()) {
            return Err(Error::config("factor_loading must be finite and >= 0"));
        }
        if !(self.idio_vol > 0.0 && self.idio_vol.is_finite()) {
            return Err(Error::config("idio_vol must be finite and > 0"));
        }
        Ok(())
    }
}

/// Weekday calendar starting 2000-01-03.
pub fn business_days(count: usize) -> Vec<NaiveDate> {
    let mut d = NaiveDate::from_ymd_opt(2000, 1, 3).expect("valid date");
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d += Duration::days(1);
    }
    out
}

/// Generates `n_markets` panels driven by one shared AR(1) factor.
///
/// `f_t = phi f_{t-1} + sqrt(1 - phi^2) eps_t` with `f_0 ~ N(0, 1)`, so the
/// factor has unit stationary variance. Asset `a` returns
/// `loading * beta_a * f_t + idio_vol * eta_{a,t}` with `beta_a ~ U(-1, 1)`.
pub fn generate_synth(spec: &SynthSpec) -> Result<Vec<ReturnsPanel>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (m, n, len) = (spec.n_markets, spec.assets_per_market, spec.length);

    let betas: Vec<f64> = (0..m * n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let phi = spec.factor_persistence;
    let innov = (1.0 - phi * phi).sqrt();
    let mut factor = Vec::with_capacity(len);
    let mut f: f64 = rng.sample(StandardNormal);
    for t in 0..len {
        if t > 0 {
            let eps: f64 = rng.sample(StandardNormal);
            f = phi * f + innov * eps;
        }
        factor.push(f);
    }

    let dates = business_days(len);
    let width = (m.max(1) - 1).to_string().len().max(2);
    (0..m)
        .map(|i| {
            let market_id = format!("synth_{i:0width$}");
            let asset_ids = (0..n).map(|a| format!("{market_id}_a{a}")).collect();
            let mut returns = Array2::zeros((n, len));
            for a in 0..n {
                let beta = betas[i * n + a];
                for (t, f) in factor.iter().enumerate() {
                    let eta: f64 = rng.sample(StandardNormal);
                    returns[(a, t)] = spec.factor_loading * beta * f + spec.idio_vol * eta;
                }
            }
            ReturnsPanel::new(market_id, asset_ids, dates.clone(), returns)
        })
        .collect()
}

/// Name of the index file in a market data directory.
pub const MARKET_INDEX: &str = "markets.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketEntry {
    pub id: String,
    pub file: String,
    pub n_assets: usize,
    pub n_obs: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MarketIndex {
    pub markets: Vec<MarketEntry>,
}

/// Writes one normalised panel CSV per market plus `markets.json`.
pub fn write_market_dir(dir: &Path, panels: &[ReturnsPanel]) -> Result<MarketIndex> {
    fs::create_dir_all(dir)?;
    let mut index = MarketIndex::default();
    for p in panels {
        let file = format!("{}.csv", p.market_id());
        p.write_csv(&dir.join(&file))?;
        index.markets.push(MarketEntry {
            id: p.market_id().to_string(),
            file,
            n_assets: p.n_assets(),
            n_obs: p.len(),
        });
    }
    let mut f = fs::File::create(dir.join(MARKET_INDEX))?;
    serde_json::to_writer_pretty(&mut f, &index)?;
    f.write_all(b"\n")?;
    Ok(index)
}

/// Reads every market listed in `markets.json`, in index order.
pub fn read_market_dir(dir: &Path) -> Result<Vec<ReturnsPanel>> {
    if !dir.is_dir() {
        return Err(Error::MissingInput(dir.to_path_buf()));
    }
    let index_path = dir.join(MARKET_INDEX);
    let index: MarketIndex = serde_json::from_str(&read_text(&index_path)?)?;
    if index.markets.is_empty() {
        return Err(Error::InsufficientData {
            what: dir.display().to_string(),
            msg: "market index lists no markets".into(),
        });
    }
    index
        .markets
        .iter()
        .map(|m| {
            let path = dir.join(&m.file);
            let text = read_text(&path)?;
            let panel = ingest_raw_returns(&m.id, &path.display().to_string(), &text)?;
            if panel.n_assets() != m.n_assets || panel.len() != m.n_obs {
                return Err(Error::shape(
                    format!("market {}", m.id),
                    format!("{}x{}", m.n_assets, m.n_obs),
                    format!("{}x{}", panel.n_assets(), panel.len()),
                ));
            }
            Ok(panel)
        })
        .collect()
}

/// Reads a normalised panel CSV without the plausibility bound of `returns` mode.
fn ingest_raw_returns(market_id: &str, source: &str, text: &str) -> Result<ReturnsPanel> {
    let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| csv_error(source, &e))?.clone();
    if header.len() < 2 || &header[0] != "date" {
        return Err(parse_err(source, 1, "header must be `date,asset1,...`"));
    }
    let asset_ids: Vec<String> = header.iter().skip(1).map(String::from).collect();
    let mut dates = Vec::new();
    let mut cols: Vec<f64> = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_error(source, &e))?;
        let line = rec.position().map_or(0, |p| p.line());
        dates.push(parse_date(source, line, &rec[0])?);
        for cell in rec.iter().skip(1) {
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_err(source, line, format!("bad number {cell:?}")))?;
            cols.push(v);
        }
    }
    let n = asset_ids.len();
    let len = dates.len();
    let returns = Array2::from_shape_fn((n, len), |(j, t)| cols[t * n + j]);
    ReturnsPanel::new(market_id, asset_ids, dates, returns)
}
