//! Mini-batch training on the Sharpe loss with AMSGrad, and random
//! hyperparameter search.
//!
//! Each step samples markets, picks one random window per sample, runs the
//! forward and truncated backward passes from zero states, reduces the
//! gradients in sample order and applies one AMSGrad update to the
//! parameters the batch touched.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::time::Instant;

use ndarray::s;
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{split_holdout, ReturnsPanel};
use crate::error::{Error, Result};
use crate::model::{ArchSpec, BlockKind, MarketSpec, Model, ModelFamily};
use crate::nn::{GradBuffer, Masks, ParamId, ParamStore};
use crate::objective::{loss_backward, sharpe_per_asset, MarketWindow};

pub const DEFAULT_STEPS: usize = 2000;

fn default_steps() -> usize {
    DEFAULT_STEPS
}

/// Training hyperparameters, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default)]
    pub family: ModelFamily,
    #[serde(default)]
    pub arch: ArchSpec,
    /// Number of (market, window) samples per step.
    pub batch_markets: usize,
    pub seq_len: usize,
    pub learning_rate: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default)]
    pub seed: u64,
    /// Global gradient-norm clip; off when absent.
    #[serde(default)]
    pub grad_clip: Option<f64>,
    /// Backpropagation horizon in steps; the whole window when absent.
    #[serde(default)]
    pub truncation: Option<usize>,
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(format!("train config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        if self.batch_markets == 0 {
            return Err(Error::config("batch_markets must be at least 1"));
        }
        if self.seq_len < 2 {
            return Err(Error::config("seq_len must be at least 2"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be positive"));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::config("grad_clip must be positive"));
            }
        }
        if self.truncation == Some(0) {
            return Err(Error::config("truncation must be at least 1"));
        }
        Ok(())
    }

    /// Chunk length used for evaluation signals.
    pub fn eval_window(&self) -> usize {
        self.seq_len
    }
}

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// AMSGrad moments of one tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub v_max: Vec<f64>,
}

impl Moments {
    pub fn zeros(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], v_max: vec![0.0; len] }
    }
}

/// One AMSGrad update of `theta` in place (no bias correction).
pub fn amsgrad_update(theta: &mut [f64], grad: &[f64], mom: &mut Moments, lr: f64) -> Result<()> {
    let n = theta.len();
    if grad.len() != n || mom.m.len() != n {
        return Err(Error::shape("amsgrad tensor", n, grad.len()));
    }
    for i in 0..n {
        let g = grad[i];
        mom.m[i] = BETA1 * mom.m[i] + (1.0 - BETA1) * g;
        mom.v[i] = BETA2 * mom.v[i] + (1.0 - BETA2) * g * g;
        mom.v_max[i] = mom.v_max[i].max(mom.v[i]);
        theta[i] -= lr * mom.m[i] / (mom.v_max[i].sqrt() + ADAM_EPS);
    }
    Ok(())
}

/// Optimizer state for a whole store; moments appear on first touch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub slots: BTreeMap<ParamId, Moments>,
}

/// Updates `ids` from the store's gradient buffers.
pub fn amsgrad_step(store: &mut ParamStore, ids: &[ParamId], state: &mut OptimizerState, lr: f64) -> Result<()> {
    state.step += 1;
    for &id in ids {
        let grad = store.grad(id).to_vec();
        let mom = state.slots.entry(id).or_insert_with(|| Moments::zeros(grad.len()));
        amsgrad_update(store.value_mut(id).data_mut(), &grad, mom, lr)?;
    }
    Ok(())
}

/// One (market, window) draw. The window covers signal columns
/// `[end - k, end)`, driven by returns `[end - k - 1, end - 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sample {
    pub market: usize,
    pub end: usize,
    pub mask_seed: u64,
}

/// Loss of one batch and each sample's parameter gradient, in sample order.
pub fn batch_gradients(
    model: &Model,
    panels: &[ReturnsPanel],
    samples: &[Sample],
    seq_len: usize,
    truncation: Option<usize>,
) -> Result<(f64, Vec<GradBuffer>)> {
    if samples.is_empty() {
        return Err(Error::config("empty batch"));
    }
    let k = seq_len;
    let forwards = samples
        .par_iter()
        .map(|smp| {
            let r = panels[smp.market].returns();
            if smp.end < k + 1 || smp.end > r.ncols() {
                return Err(Error::Window(format!("window end {} outside [{}, {}]", smp.end, k + 1, r.ncols())));
            }
            let inputs = r.slice(s![.., smp.end - k - 1..smp.end - 1]);
            let mut rng = ChaCha8Rng::seed_from_u64(smp.mask_seed);
            model.forward_window(smp.market, inputs, &model.zero_state(smp.market), Masks::Sample(&mut rng))
        })
        .collect::<Result<Vec<_>>>()?;
    let windows: Vec<MarketWindow<'_>> = samples
        .iter()
        .zip(&forwards)
        .map(|(smp, f)| MarketWindow {
            signals: f.signals.view(),
            returns: panels[smp.market].returns().slice(s![.., smp.end - k..smp.end]),
        })
        .collect();
    let (loss, d_signals) = loss_backward(&windows)?;
    let grads = samples
        .par_iter()
        .zip(forwards.par_iter())
        .zip(d_signals.par_iter())
        .map(|((smp, f), ds)| {
            let mut buf = GradBuffer::new();
            model.network(smp.market).backward(model.store(), &f.tape, ds.view(), truncation, &mut buf)?;
            Ok(buf)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((loss, grads))
}

/// One line of the loss trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub clipped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub loss_trace: Vec<LossRecord>,
    pub optimizer: OptimizerState,
}

/// Limits on total training work, shared across search trials.
#[derive(Debug, Clone, Default)]
pub struct Budget {
    pub deadline: Option<Instant>,
    pub steps_left: Option<u64>,
}

impl Budget {
    pub fn unlimited() -> Self {
        Self::default()
    }

    fn consume(&mut self) -> bool {
        if self.deadline.is_some_and(|d| Instant::now() >= d) {
            return false;
        }
        match &mut self.steps_left {
            Some(0) => false,
            Some(n) => {
                *n -= 1;
                true
            }
            None => true,
        }
    }
}

/// Pairs each model market with its training panel by id.
fn align_panels(model: &Model, panels: &[ReturnsPanel]) -> Result<Vec<ReturnsPanel>> {
    model
        .markets()
        .iter()
        .map(|m| {
            let p = panels
                .iter()
                .find(|p| p.market_id() == m.id)
                .ok_or_else(|| Error::config(format!("no training panel for market {}", m.id)))?;
            if p.n_assets() != m.n_assets {
                return Err(Error::shape(format!("market {}", m.id), m.n_assets, p.n_assets()));
            }
            Ok(p.clone())
        })
        .collect()
}

/// Trains `model` in place on the training panels.
pub fn train(model: &mut Model, panels: &[ReturnsPanel], cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with_budget(model, panels, cfg, &mut Budget::unlimited())
}

pub fn train_with_budget(
    model: &mut Model,
    panels: &[ReturnsPanel],
    cfg: &TrainConfig,
    budget: &mut Budget,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let panels = align_panels(model, panels)?;
    let k = cfg.seq_len;
    for p in &panels {
        if p.len() <= k {
            return Err(Error::config(format!(
                "seq_len {k} needs more than {k} training observations; market {} has {}",
                p.market_id(),
                p.len()
            )));
        }
    }
    let n = panels.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = OptimizerState::default();
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        if !budget.consume() {
            return Err(Error::BudgetExhausted { completed: 0 });
        }
        let mut markets: Vec<usize> = if cfg.batch_markets <= n {
            sample_indices(&mut rng, n, cfg.batch_markets).into_vec()
        } else {
            (0..cfg.batch_markets).map(|_| rng.random_range(0..n)).collect()
        };
        markets.sort();
        let samples: Vec<Sample> = markets
            .into_iter()
            .map(|market| Sample {
                market,
                end: rng.random_range(k + 1..=panels[market].len()),
                mask_seed: rng.random(),
            })
            .collect();
        let (loss, grads) = batch_gradients(model, &panels, &samples, k, cfg.truncation)?;
        if !loss.is_finite() {
            return Err(Error::Numeric { step, what: "non-finite loss".into() });
        }
        let store = model.store_mut();
        store.zero_grads();
        for g in &grads {
            store.accumulate(g);
        }
        let touched: Vec<ParamId> = grads.iter().flat_map(GradBuffer::ids).collect::<BTreeSet<_>>().into_iter().collect();
        let mut sq = 0.0;
        for &id in &touched {
            sq += store.grad(id).iter().map(|g| g * g).sum::<f64>();
        }
        let grad_norm = sq.sqrt();
        if !grad_norm.is_finite() {
            return Err(Error::Numeric { step, what: "non-finite gradient".into() });
        }
        let clipped = cfg.grad_clip.is_some_and(|c| grad_norm > c);
        if clipped {
            let scale = cfg.grad_clip.expect("clip set") / grad_norm;
            log::info!("step {step}: gradient norm {grad_norm:.6e} clipped");
            for &id in &touched {
                store.grad_mut(id).iter_mut().for_each(|g| *g *= scale);
            }
        }
        amsgrad_step(store, &touched, &mut opt, cfg.learning_rate)?;
        if touched.iter().any(|&id| store.value(id).data().iter().any(|v| !v.is_finite())) {
            return Err(Error::Numeric { step, what: "non-finite parameter after update".into() });
        }
        trace.push(LossRecord { step, loss, grad_norm, clipped });
    }
    Ok(TrainOutcome { loss_trace: trace, optimizer: opt })
}

/// Builds a fresh model for the config over `panels` and trains it.
pub fn fit(panels: &[ReturnsPanel], cfg: &TrainConfig) -> Result<(Model, TrainOutcome)> {
    let specs: Vec<MarketSpec> = panels.iter().map(MarketSpec::of).collect();
    let mut model = Model::new(cfg.family, cfg.arch.clone(), &specs, cfg.seed)?;
    let out = train(&mut model, panels, cfg)?;
    Ok((model, out))
}

/// Mean Sharpe over every asset of every market on the last `holdout`
/// columns, with signals generated from the start of that span.
pub fn validation_sharpe(model: &Model, panels: &[ReturnsPanel], holdout: usize, eval_window: usize) -> Result<f64> {
    let mut all = Vec::new();
    for p in panels {
        if holdout < 2 || holdout >= p.len() {
            return Err(Error::InvalidSplit { holdout, len: p.len() });
        }
        let start = p.len() - holdout;
        let sig = model.signals(p, start, eval_window)?;
        let rho = sharpe_per_asset(sig.signals.slice(s![.., start..]), p.returns().slice(s![.., start..]))?;
        all.extend(rho.iter().copied());
    }
    Ok(all.iter().sum::<f64>() / all.len() as f64)
}

/// Serialises records as one JSON object per line.
pub fn write_jsonl<T: Serialize>(mut w: impl Write, records: &[T]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Search ranges for one architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpace {
    pub family: ModelFamily,
    #[serde(default = "lstm")]
    pub encoder: BlockKind,
    #[serde(default = "lstm")]
    pub decoder: BlockKind,
    #[serde(default = "linear")]
    pub transfer: BlockKind,
    pub batch: [usize; 2],
    pub seq_len: [usize; 2],
    pub learning_rate: [f64; 2],
    #[serde(default = "one_one")]
    pub enc_dec_layers: [usize; 2],
    #[serde(default = "no_dropout")]
    pub ed_dropout: [f64; 2],
    #[serde(default = "one_one")]
    pub transfer_layers: [usize; 2],
    #[serde(default = "no_dropout")]
    pub tl_dropout: [f64; 2],
    pub dims: Vec<usize>,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default)]
    pub seed: u64,
    /// Trailing training observations held out to rank trials.
    pub search_holdout: usize,
    #[serde(default)]
    pub grad_clip: Option<f64>,
    #[serde(default)]
    pub budget_secs: Option<f64>,
    /// Total training steps across all trials.
    #[serde(default)]
    pub budget_steps: Option<u64>,
}

fn lstm() -> BlockKind {
    BlockKind::Lstm
}
fn linear() -> BlockKind {
    BlockKind::Linear
}
fn one_one() -> [usize; 2] {
    [1, 1]
}
fn no_dropout() -> [f64; 2] {
    [0.0, 0.0]
}

impl SearchSpace {
    /// Published ranges for a family and block layout. Stacking and dropout
    /// ranges apply only to recurrent blocks.
    pub fn table3(family: ModelFamily, ed: BlockKind, tl: BlockKind) -> Self {
        let recurrent_ed = match family {
            ModelFamily::NoTransferLstm => true,
            ModelFamily::NoTransferLinear => false,
            ModelFamily::Quantnet => ed == BlockKind::Lstm,
        };
        let recurrent_tl = family == ModelFamily::Quantnet && tl == BlockKind::Lstm;
        let wide = family != ModelFamily::Quantnet || (ed == BlockKind::Linear && tl == BlockKind::Linear);
        Self {
            family,
            encoder: ed,
            decoder: ed,
            transfer: tl,
            batch: if wide { [16, 128] } else { [16, 96] },
            seq_len: if wide { [21, 504] } else { [21, 252] },
            learning_rate: if family == ModelFamily::Quantnet && !wide { [1e-4, 0.5] } else { [1e-4, 0.1] },
            enc_dec_layers: if recurrent_ed { [1, 2] } else { [1, 1] },
            ed_dropout: if recurrent_ed { [0.1, 0.9] } else { [0.0, 0.0] },
            transfer_layers: if recurrent_tl { [1, 2] } else { [1, 1] },
            tl_dropout: if recurrent_tl { [0.1, 0.9] } else { [0.0, 0.0] },
            dims: vec![10, 25, 50, 100],
            steps: DEFAULT_STEPS,
            seed: 0,
            search_holdout: 252,
            grad_clip: None,
            budget_secs: None,
            budget_steps: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Self = toml::from_str(text).map_err(|e| Error::config(format!("search space: {e}")))?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let ordered = |name: &str, ok: bool| if ok { Ok(()) } else { Err(Error::config(format!("{name} range is empty or invalid"))) };
        ordered("batch", 1 <= self.batch[0] && self.batch[0] <= self.batch[1])?;
        ordered("seq_len", 2 <= self.seq_len[0] && self.seq_len[0] <= self.seq_len[1])?;
        ordered(
            "learning_rate",
            0.0 < self.learning_rate[0] && self.learning_rate[0] <= self.learning_rate[1] && self.learning_rate[1].is_finite(),
        )?;
        ordered("enc_dec_layers", 1 <= self.enc_dec_layers[0] && self.enc_dec_layers[0] <= self.enc_dec_layers[1] && self.enc_dec_layers[1] <= 2)?;
        ordered("transfer_layers", 1 <= self.transfer_layers[0] && self.transfer_layers[0] <= self.transfer_layers[1] && self.transfer_layers[1] <= 2)?;
        ordered("ed_dropout", 0.0 <= self.ed_dropout[0] && self.ed_dropout[0] <= self.ed_dropout[1] && self.ed_dropout[1] < 1.0)?;
        ordered("tl_dropout", 0.0 <= self.tl_dropout[0] && self.tl_dropout[0] <= self.tl_dropout[1] && self.tl_dropout[1] < 1.0)?;
        ordered("dims", !self.dims.is_empty() && self.dims.iter().all(|&d| d >= 1))?;
        ordered("search_holdout", self.search_holdout >= 2)?;
        Ok(())
    }

    /// Draws one config; `max_seq_len` caps the sequence-length range.
    pub fn sample(&self, rng: &mut impl Rng, max_seq_len: usize) -> Result<TrainConfig> {
        let hi = self.seq_len[1].min(max_seq_len);
        if hi < self.seq_len[0] {
            return Err(Error::config(format!(
                "sequence length range starts at {} but the data allows at most {max_seq_len}",
                self.seq_len[0]
            )));
        }
        let uni = |rng: &mut dyn rand::RngCore, r: [f64; 2]| if r[0] < r[1] { rng.random_range(r[0]..=r[1]) } else { r[0] };
        let batch_markets = rng.random_range(self.batch[0]..=self.batch[1]);
        let seq_len = rng.random_range(self.seq_len[0]..=hi);
        let (lo, up) = (self.learning_rate[0].ln(), self.learning_rate[1].ln());
        let learning_rate = if lo < up { rng.random_range(lo..=up).exp() } else { self.learning_rate[0] };
        let learning_rate = learning_rate.clamp(self.learning_rate[0], self.learning_rate[1]);
        let enc_dec_layers = rng.random_range(self.enc_dec_layers[0]..=self.enc_dec_layers[1]);
        let ed_dropout = uni(rng, self.ed_dropout);
        let transfer_layers = rng.random_range(self.transfer_layers[0]..=self.transfer_layers[1]);
        let tl_dropout = uni(rng, self.tl_dropout);
        let dim = self.dims[rng.random_range(0..self.dims.len())];
        let seed = rng.random();
        Ok(TrainConfig {
            family: self.family,
            arch: ArchSpec {
                encoder: self.encoder,
                decoder: self.decoder,
                transfer: self.transfer,
                dim,
                enc_dec_layers,
                transfer_layers,
                ed_dropout,
                tl_dropout,
            },
            batch_markets,
            seq_len,
            learning_rate,
            steps: self.steps,
            seed,
            grad_clip: self.grad_clip,
            truncation: None,
        })
    }
}

/// One line of the trial log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub config: TrainConfig,
    /// Mean validation Sharpe; absent for trials that did not train.
    pub val_sharpe: Option<f64>,
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub best: TrialRecord,
    /// Trial indices from best to worst.
    pub ranking: Vec<usize>,
    pub trials: Vec<TrialRecord>,
}

/// Orders trials by validation Sharpe, best first; untrained trials last;
/// ties go to the lowest trial index.
pub fn rank_trials(trials: &[TrialRecord]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..trials.len()).collect();
    let key = |t: &TrialRecord| t.val_sharpe.filter(|v| v.is_finite());
    idx.sort_by(|&a, &b| match (key(&trials[a]), key(&trials[b])) {
        (Some(x), Some(y)) => y.total_cmp(&x).then(a.cmp(&b)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.cmp(&b),
    });
    idx
}

/// Random search over `space`, ranking trials on a split carved from the
/// end of each training panel. `on_trial` sees every finished trial in
/// order, so callers can persist the log as it grows.
pub fn random_search(
    space: &SearchSpace,
    n_trials: usize,
    panels: &[ReturnsPanel],
    mut on_trial: impl FnMut(&TrialRecord) -> Result<()>,
) -> Result<SearchOutcome> {
    space.validate()?;
    if n_trials == 0 {
        return Err(Error::config("search needs at least one trial"));
    }
    if panels.is_empty() {
        return Err(Error::config("search needs at least one market"));
    }
    let splits = panels
        .iter()
        .map(|p| split_holdout(p, space.search_holdout))
        .collect::<Result<Vec<_>>>()?;
    let train: Vec<ReturnsPanel> = splits.iter().map(|s| s.train.clone()).collect();
    let max_seq = train.iter().map(ReturnsPanel::len).min().expect("non-empty") - 1;
    let mut budget = Budget {
        deadline: space.budget_secs.map(|s| Instant::now() + std::time::Duration::from_secs_f64(s.max(0.0))),
        steps_left: space.budget_steps,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(space.seed);
    let mut trials = Vec::with_capacity(n_trials);
    for trial in 0..n_trials {
        let cfg = space.sample(&mut rng, max_seq)?;
        let started = Instant::now();
        let (model, _) = match fit_with_budget(&train, &cfg, &mut budget) {
            Err(Error::BudgetExhausted { .. }) => return Err(Error::BudgetExhausted { completed: trial }),
            other => other?,
        };
        let val_sharpe = if cfg.steps == 0 {
            None
        } else {
            Some(validation_sharpe(&model, panels, space.search_holdout, cfg.eval_window())?)
        };
        let rec = TrialRecord { trial, config: cfg, val_sharpe, wall_time: started.elapsed().as_secs_f64() };
        on_trial(&rec)?;
        log::info!("trial {trial}: val_sharpe {:?}", rec.val_sharpe);
        trials.push(rec);
    }
    let ranking = rank_trials(&trials);
    Ok(SearchOutcome { best: trials[ranking[0]].clone(), ranking, trials })
}

fn fit_with_budget(panels: &[ReturnsPanel], cfg: &TrainConfig, budget: &mut Budget) -> Result<(Model, TrainOutcome)> {
    let specs: Vec<MarketSpec> = panels.iter().map(MarketSpec::of).collect();
    let mut model = Model::new(cfg.family, cfg.arch.clone(), &specs, cfg.seed)?;
    let out = train_with_budget(&mut model, panels, cfg, budget)?;
    Ok((model, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{business_days, generate_synth, SynthSpec};
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;

    fn small_cfg(family: ModelFamily) -> TrainConfig {
        TrainConfig {
            family,
            arch: ArchSpec { dim: 3, ..ArchSpec::default() },
            batch_markets: 2,
            seq_len: 8,
            learning_rate: 0.01,
            steps: 5,
            seed: 11,
            grad_clip: None,
            truncation: None,
        }
    }

    fn synth(n: usize, len: usize) -> Vec<ReturnsPanel> {
        let spec = SynthSpec { n_markets: n, assets_per_market: 3, length: len, ..Default::default() };
        generate_synth(&spec).unwrap().into_iter().map(|p| scale(p, 0.01)).collect()
    }

    fn scale(p: ReturnsPanel, c: f64) -> ReturnsPanel {
        ReturnsPanel::new(p.market_id(), p.asset_ids().to_vec(), p.dates().to_vec(), p.returns() * c).unwrap()
    }

    #[test]
    fn amsgrad_scalar_hand_iteration() {
        let mut theta = [0.0];
        let mut mom = Moments::zeros(1);
        let (mut m, mut v, mut vmax, mut th) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for _ in 0..3 {
            amsgrad_update(&mut theta, &[1.0], &mut mom, 0.1).unwrap();
            m = 0.9 * m + (1.0 - 0.9);
            v = 0.999 * v + (1.0 - 0.999);
            vmax = vmax.max(v);
            th -= 0.1 * m / (vmax.sqrt() + 1e-8);
            assert_eq!(theta[0], th);
        }
        let mut first = [0.0];
        amsgrad_update(&mut first, &[1.0], &mut Moments::zeros(1), 0.1).unwrap();
        assert_abs_diff_eq!(first[0], -0.1 * 0.1 / (0.001f64.sqrt() + 1e-8), epsilon = 1e-15);
        assert_abs_diff_eq!(first[0], -0.316_227, epsilon = 1e-6);
    }

    #[test]
    fn amsgrad_zero_gradient_is_noop_and_vmax_monotone() {
        let mut theta = [0.3, -0.2];
        let mut mom = Moments::zeros(2);
        amsgrad_update(&mut theta, &[0.0, 0.0], &mut mom, 0.1).unwrap();
        assert_eq!(theta, [0.3, -0.2]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut prev = mom.v_max.clone();
        for _ in 0..100 {
            let g = [rng.random_range(-3.0..3.0), rng.random_range(-0.1..0.1)];
            amsgrad_update(&mut theta, &g, &mut mom, 0.01).unwrap();
            assert!(mom.v_max.iter().zip(&prev).all(|(a, b)| a >= b));
            prev = mom.v_max.clone();
        }
        assert!(amsgrad_update(&mut theta, &[1.0], &mut mom, 0.1).is_err());
    }

    #[test]
    fn zero_steps_leave_model_unchanged() {
        let panels = synth(2, 40);
        let cfg = TrainConfig { steps: 0, ..small_cfg(ModelFamily::Quantnet) };
        let specs: Vec<_> = panels.iter().map(MarketSpec::of).collect();
        let mut model = Model::new(cfg.family, cfg.arch.clone(), &specs, 5).unwrap();
        let before = model.clone();
        let out = train(&mut model, &panels, &cfg).unwrap();
        assert!(out.loss_trace.is_empty());
        assert_eq!(model, before);
    }

    #[test]
    fn training_is_deterministic() {
        let panels = synth(3, 60);
        let mut cfg = small_cfg(ModelFamily::Quantnet);
        cfg.arch.enc_dec_layers = 2;
        cfg.arch.ed_dropout = 0.3;
        let (a, ta) = fit(&panels, &cfg).unwrap();
        let (b, tb) = fit(&panels, &cfg).unwrap();
        assert_eq!(ta, tb);
        assert_eq!(a.to_checkpoint(8).to_json().unwrap(), b.to_checkpoint(8).to_json().unwrap());
    }

    #[test]
    fn unsampled_markets_do_not_move() {
        let panels = synth(3, 40);
        let cfg = TrainConfig { batch_markets: 1, steps: 1, ..small_cfg(ModelFamily::Quantnet) };
        let specs: Vec<_> = panels.iter().map(MarketSpec::of).collect();
        let mut model = Model::new(cfg.family, cfg.arch.clone(), &specs, 5).unwrap();
        let before = model.clone();
        train(&mut model, &panels, &cfg).unwrap();
        let moved: Vec<usize> = (0..3)
            .filter(|&i| model.market_ids(i).iter().any(|&id| model.store().value(id) != before.store().value(id)))
            .collect();
        assert_eq!(moved.len(), 1);
        assert!(model.shared_ids().iter().any(|&id| model.store().value(id) != before.store().value(id)));
    }

    #[test]
    fn shared_gradient_is_sum_of_market_contributions() {
        let panels = synth(3, 40);
        let cfg = small_cfg(ModelFamily::Quantnet);
        let specs: Vec<_> = panels.iter().map(MarketSpec::of).collect();
        let model = Model::new(cfg.family, ArchSpec { transfer: BlockKind::Lstm, dim: 3, ..ArchSpec::default() }, &specs, 2)
            .unwrap();
        let samples = [
            Sample { market: 0, end: 20, mask_seed: 1 },
            Sample { market: 1, end: 33, mask_seed: 2 },
            Sample { market: 2, end: 9, mask_seed: 3 },
        ];
        let (_, grads) = batch_gradients(&model, &panels, &samples, 8, None).unwrap();
        let mut store = model.store().clone();
        store.zero_grads();
        for g in &grads {
            store.accumulate(g);
        }
        for &id in model.shared_ids() {
            for (i, total) in store.grad(id).iter().enumerate() {
                let sum: f64 = grads.iter().map(|g| g.get(id).map_or(0.0, |v| v[i])).sum();
                assert_abs_diff_eq!(*total, sum, epsilon = 1e-10);
            }
        }
        for (s, g) in samples.iter().zip(&grads) {
            for other in (0..3).filter(|&m| m != s.market) {
                assert!(model.market_ids(other).iter().all(|&id| g.get(id).is_none()));
            }
        }
    }

    #[test]
    fn linear_no_transfer_learns_persistent_sign() {
        // r_t = 0.9 * sign(r_{t-1}) * 0.01 + noise: a trend-follower earns a positive Sharpe.
        let len = 600;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut r = vec![0.01];
        for t in 1..len {
            let prev: f64 = r[t - 1];
            r.push(0.9 * prev.signum() * 0.01 + rng.random_range(-0.01..0.01));
        }
        let p = ReturnsPanel::new("trend", vec!["x".into()], business_days(len), Array2::from_shape_vec((1, len), r).unwrap())
            .unwrap();
        let cfg = TrainConfig {
            family: ModelFamily::NoTransferLinear,
            batch_markets: 1,
            seq_len: 21,
            learning_rate: 0.01,
            steps: 400,
            seed: 1,
            ..small_cfg(ModelFamily::NoTransferLinear)
        };
        let (_, out) = fit(&[p], &cfg).unwrap();
        let mean = |v: &[LossRecord]| v.iter().map(|r| r.loss).sum::<f64>() / v.len() as f64;
        let first = mean(&out.loss_trace[..100]);
        let last = mean(&out.loss_trace[out.loss_trace.len() - 100..]);
        assert!(last < first, "first {first} last {last}");
    }

    #[test]
    fn short_market_is_a_config_error() {
        let panels = synth(2, 8);
        let err = fit(&panels, &small_cfg(ModelFamily::Quantnet)).unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("synth_00")), "{err}");
    }

    #[test]
    fn gradient_clip_is_recorded() {
        let panels = synth(2, 40);
        let cfg = TrainConfig { grad_clip: Some(1e-9), steps: 2, ..small_cfg(ModelFamily::NoTransferLstm) };
        let (_, out) = fit(&panels, &cfg).unwrap();
        assert!(out.loss_trace.iter().all(|r| r.clipped));
    }

    #[test]
    fn config_toml_round_trip() {
        let text = r#"
family = "quantnet"
batch_markets = 4
seq_len = 21
learning_rate = 0.01
steps = 3
seed = 9

[arch]
encoder = "lstm"
decoder = "lstm"
transfer = "linear"
dim = 10
"#;
        let cfg = TrainConfig::from_toml(text).unwrap();
        assert_eq!(cfg.arch.dim, 10);
        assert_eq!(cfg.grad_clip, None);
        assert_eq!(TrainConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        assert!(TrainConfig::from_toml("batch_markets = 1\nseq_len = 4\nlearning_rate = 0.1\nbogus = 1").is_err());
        assert!(TrainConfig::from_toml("batch_markets = 1\nseq_len = 4\nlearning_rate = -0.1").is_err());
    }

    #[test]
    fn sampled_configs_stay_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for (fam, ed, tl) in [
            (ModelFamily::NoTransferLinear, BlockKind::Linear, BlockKind::Linear),
            (ModelFamily::NoTransferLstm, BlockKind::Lstm, BlockKind::Linear),
            (ModelFamily::Quantnet, BlockKind::Linear, BlockKind::Linear),
            (ModelFamily::Quantnet, BlockKind::Lstm, BlockKind::Lstm),
        ] {
            let space = SearchSpace::table3(fam, ed, tl);
            for _ in 0..1000 {
                let c = space.sample(&mut rng, 10_000).unwrap();
                assert!((1e-4..=0.5).contains(&c.learning_rate));
                assert!((21..=504).contains(&c.seq_len));
                assert!((16..=128).contains(&c.batch_markets));
                assert!([10, 25, 50, 100].contains(&c.arch.dim));
                c.validate().unwrap();
            }
        }
        let space = SearchSpace::table3(ModelFamily::Quantnet, BlockKind::Lstm, BlockKind::Linear);
        assert!(space.sample(&mut rng, 20).is_err());
        assert!(space.sample(&mut rng, 30).unwrap().seq_len <= 30);
    }

    fn tiny_space(steps: usize) -> SearchSpace {
        SearchSpace {
            batch: [1, 2],
            seq_len: [5, 8],
            dims: vec![2, 3],
            steps,
            search_holdout: 10,
            ..SearchSpace::table3(ModelFamily::Quantnet, BlockKind::Lstm, BlockKind::Linear)
        }
    }

    #[test]
    fn search_logs_every_trial_and_is_reproducible() {
        let panels = synth(2, 50);
        let mut log = Vec::new();
        let a = random_search(&tiny_space(3), 2, &panels, |r| {
            log.push(r.clone());
            Ok(())
        })
        .unwrap();
        assert_eq!(log.len(), 2);
        assert!(a.trials.iter().all(|t| t.val_sharpe.is_some_and(f64::is_finite)));
        let b = random_search(&tiny_space(3), 2, &panels, |_| Ok(())).unwrap();
        let strip = |o: &SearchOutcome| o.trials.iter().map(|t| (t.config.clone(), t.val_sharpe)).collect::<Vec<_>>();
        assert_eq!(strip(&a), strip(&b));
        let one = random_search(&tiny_space(3), 1, &panels, |_| Ok(())).unwrap();
        assert_eq!(one.best.trial, 0);
    }

    #[test]
    fn untrained_trials_rank_by_index() {
        let panels = synth(2, 50);
        let out = random_search(&tiny_space(0), 3, &panels, |_| Ok(())).unwrap();
        assert_eq!(out.ranking, vec![0, 1, 2]);
        assert_eq!(out.best.trial, 0);
        assert!(random_search(&tiny_space(0), 0, &panels, |_| Ok(())).is_err());
    }

    #[test]
    fn budget_exhaustion_reports_completed_trials() {
        let panels = synth(2, 50);
        let space = SearchSpace { budget_steps: Some(5), ..tiny_space(3) };
        let mut logged = 0;
        let err = random_search(&space, 4, &panels, |_| {
            logged += 1;
            Ok(())
        })
        .unwrap_err();
        assert!(matches!(err, Error::BudgetExhausted { completed: 1 }));
        assert_eq!(logged, 1);
    }

    #[test]
    fn ranking_puts_missing_last() {
        let rec = |trial, v| TrialRecord { trial, config: small_cfg(ModelFamily::Quantnet), val_sharpe: v, wall_time: 0.0 };
        let trials = [rec(0, None), rec(1, Some(0.5)), rec(2, Some(1.5)), rec(3, Some(0.5)), rec(4, Some(f64::NAN))];
        assert_eq!(rank_trials(&trials), vec![2, 1, 3, 0, 4]);
    }
}
