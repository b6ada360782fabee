//! Per-market encoder/decoder networks around one shared transfer layer,
//! and the per-market no-transfer ablations.
//!
//! Every market owns a [`Network`] whose layers read from a single
//! [`ParamStore`]. QuantNet markets reference the same transfer-layer
//! tensors (the only shared parameters); everything else is private to one
//! market. Signals at column `t` are computed from the return at `t - 1`.

use std::collections::BTreeMap;

use ndarray::{s, Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{SignalMatrix, Strategy};
use crate::data::ReturnsPanel;
use crate::error::{Error, Result};
use crate::nn::{
    add_layer, lookup_layer, Forward, LayerKind, LayerShape, Masks, NetLayer, NetState, Network, ParamCheckpoint,
    ParamId, ParamStore, Stage,
};

/// Functional form of an encoder, decoder or transfer block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockKind {
    Linear,
    Lstm,
}

impl BlockKind {
    fn layer_kind(self) -> LayerKind {
        match self {
            BlockKind::Linear => LayerKind::Affine,
            BlockKind::Lstm => LayerKind::Lstm,
        }
    }
}

/// Which model family to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelFamily {
    #[default]
    Quantnet,
    NoTransferLstm,
    NoTransferLinear,
}

impl ModelFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelFamily::Quantnet => "quantnet",
            ModelFamily::NoTransferLstm => "no-transfer-lstm",
            ModelFamily::NoTransferLinear => "no-transfer-linear",
        }
    }
}

impl std::str::FromStr for ModelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quantnet" => Ok(ModelFamily::Quantnet),
            "no-transfer-lstm" => Ok(ModelFamily::NoTransferLstm),
            "no-transfer-linear" => Ok(ModelFamily::NoTransferLinear),
            other => Err(Error::config(format!("unknown model family {other:?}"))),
        }
    }
}

fn one() -> usize {
    1
}

/// Architecture of a QuantNet model.
///
/// Encoder, decoder and transfer widths all equal `dim`. Linear blocks are a
/// single stateless affine map; LSTM blocks stack `enc_dec_layers` (or
/// `transfer_layers`) cells with inverted dropout between stacked cells.
/// The no-transfer LSTM uses `enc_dec_layers` and `ed_dropout` only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    pub encoder: BlockKind,
    pub decoder: BlockKind,
    pub transfer: BlockKind,
    pub dim: usize,
    #[serde(default = "one")]
    pub enc_dec_layers: usize,
    #[serde(default = "one")]
    pub transfer_layers: usize,
    #[serde(default)]
    pub ed_dropout: f64,
    #[serde(default)]
    pub tl_dropout: f64,
}

impl Default for ArchSpec {
    fn default() -> Self {
        Self {
            encoder: BlockKind::Lstm,
            decoder: BlockKind::Lstm,
            transfer: BlockKind::Linear,
            dim: 10,
            enc_dec_layers: 1,
            transfer_layers: 1,
            ed_dropout: 0.0,
            tl_dropout: 0.0,
        }
    }
}

impl ArchSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::config("arch dim must be at least 1"));
        }
        for (name, layers) in [("enc_dec_layers", self.enc_dec_layers), ("transfer_layers", self.transfer_layers)] {
            if !(1..=2).contains(&layers) {
                return Err(Error::config(format!("{name} must be 1 or 2, got {layers}")));
            }
        }
        for (name, p) in [("ed_dropout", self.ed_dropout), ("tl_dropout", self.tl_dropout)] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::config(format!("{name} must lie in [0, 1), got {p}")));
            }
        }
        Ok(())
    }

    /// Short label such as `lstm-linear-lstm` (encoder-transfer-decoder).
    pub fn label(&self) -> String {
        let k = |b: BlockKind| match b {
            BlockKind::Linear => "linear",
            BlockKind::Lstm => "lstm",
        };
        format!("{}-{}-{}", k(self.encoder), k(self.transfer), k(self.decoder))
    }
}

/// A market and its asset count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarketSpec {
    pub id: String,
    pub n_assets: usize,
}

impl MarketSpec {
    pub fn new(id: impl Into<String>, n_assets: usize) -> Self {
        Self { id: id.into(), n_assets }
    }

    pub fn of(panel: &ReturnsPanel) -> Self {
        Self::new(panel.market_id(), panel.n_assets())
    }
}

struct PlannedLayer {
    shape: LayerShape,
    stage: Stage,
    dropout: f64,
}

fn block(prefix: &str, kind: BlockKind, stage: Stage, input: usize, dim: usize, layers: usize, dropout: f64) -> Vec<PlannedLayer> {
    let count = if kind == BlockKind::Linear { 1 } else { layers };
    (0..count)
        .map(|l| PlannedLayer {
            shape: LayerShape {
                prefix: format!("{prefix}.{l}"),
                kind: kind.layer_kind(),
                input: if l == 0 { input } else { dim },
                output: dim,
            },
            stage,
            dropout: if l + 1 < count { dropout } else { 0.0 },
        })
        .collect()
}

fn plan_market(family: ModelFamily, arch: &ArchSpec, m: &MarketSpec) -> (Vec<PlannedLayer>, LayerShape) {
    let n = m.n_assets;
    let id = &m.id;
    let (layers, width) = match family {
        ModelFamily::Quantnet => {
            let d = arch.dim;
            let mut v = block(&format!("{id}.enc"), arch.encoder, Stage::Encoder, n, d, arch.enc_dec_layers, arch.ed_dropout);
            v.extend(shared_plan(arch));
            v.extend(block(&format!("{id}.dec"), arch.decoder, Stage::Decoder, d, d, arch.enc_dec_layers, arch.ed_dropout));
            (v, d)
        }
        ModelFamily::NoTransferLstm => (
            block(&format!("{id}.rnn"), BlockKind::Lstm, Stage::Decoder, n, n, arch.enc_dec_layers, arch.ed_dropout),
            n,
        ),
        ModelFamily::NoTransferLinear => (Vec::new(), n),
    };
    let head = LayerShape { prefix: format!("{id}.head"), kind: LayerKind::Affine, input: width, output: n };
    (layers, head)
}

fn shared_plan(arch: &ArchSpec) -> Vec<PlannedLayer> {
    block("shared.transfer", arch.transfer, Stage::Transfer, arch.dim, arch.dim, arch.transfer_layers, arch.tl_dropout)
}

/// Multi-market model: one network per market over one parameter store.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    family: ModelFamily,
    arch: ArchSpec,
    markets: Vec<MarketSpec>,
    networks: Vec<Network>,
    store: ParamStore,
    shared: Vec<ParamId>,
}

impl Model {
    /// Builds and initialises a model; shared tensors are drawn first, then
    /// each market's in the given order.
    pub fn new(family: ModelFamily, arch: ArchSpec, markets: &[MarketSpec], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::build(family, arch, markets, |store, shape| add_layer(store, shape, &mut rng))
    }

    /// Builds the layout and reads tensor handles from an existing store.
    fn build(
        family: ModelFamily,
        arch: ArchSpec,
        markets: &[MarketSpec],
        mut make: impl FnMut(&mut ParamStore, &LayerShape) -> Result<crate::nn::LayerParams>,
    ) -> Result<Self> {
        arch.validate()?;
        if markets.is_empty() {
            return Err(Error::config("model needs at least one market"));
        }
        let mut seen = std::collections::HashSet::new();
        for m in markets {
            if m.n_assets == 0 {
                return Err(Error::config(format!("market {} has no assets", m.id)));
            }
            if !seen.insert(&m.id) {
                return Err(Error::config(format!("duplicate market {}", m.id)));
            }
        }
        let mut store = ParamStore::new();
        let mut shared_layers = BTreeMap::new();
        if family == ModelFamily::Quantnet {
            for p in shared_plan(&arch) {
                let lp = make(&mut store, &p.shape)?;
                shared_layers.insert(p.shape.prefix.clone(), lp);
            }
        }
        let shared: Vec<ParamId> = shared_layers
            .values()
            .flat_map(|p| [Some(p.w), p.v, Some(p.b)].into_iter().flatten())
            .collect();
        let mut networks = Vec::with_capacity(markets.len());
        for m in markets {
            let (plan, head_shape) = plan_market(family, &arch, m);
            let mut layers = Vec::with_capacity(plan.len());
            for p in plan {
                let params = match shared_layers.get(&p.shape.prefix) {
                    Some(lp) if p.stage == Stage::Transfer => *lp,
                    _ => make(&mut store, &p.shape)?,
                };
                layers.push(NetLayer { params, stage: p.stage, dropout: p.dropout });
            }
            let head = make(&mut store, &head_shape)?;
            networks.push(Network::new(layers, head)?);
        }
        Ok(Self { family, arch, markets: markets.to_vec(), networks, store, shared })
    }

    pub fn family(&self) -> ModelFamily {
        self.family
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn markets(&self) -> &[MarketSpec] {
        &self.markets
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn network(&self, market: usize) -> &Network {
        &self.networks[market]
    }

    /// Tensors shared by every market (empty for no-transfer models).
    pub fn shared_ids(&self) -> &[ParamId] {
        &self.shared
    }

    /// Tensors private to one market.
    pub fn market_ids(&self, market: usize) -> Vec<ParamId> {
        self.networks[market]
            .param_ids()
            .into_iter()
            .filter(|id| !self.shared.contains(id))
            .collect()
    }

    pub fn market_index(&self, market_id: &str) -> Result<usize> {
        self.markets
            .iter()
            .position(|m| m.id == market_id)
            .ok_or_else(|| Error::config(format!("unknown market {market_id}")))
    }

    /// Forward pass of one market over `returns_window` (`n x k`), where
    /// column `c` is the input for step `c`.
    pub fn forward_window(
        &self,
        market: usize,
        inputs: ArrayView2<f64>,
        state: &NetState,
        masks: Masks<'_>,
    ) -> Result<Forward> {
        let net = self.networks.get(market).ok_or_else(|| Error::config(format!("no market index {market}")))?;
        net.forward(&self.store, inputs, state, masks)
    }

    pub fn zero_state(&self, market: usize) -> NetState {
        self.networks[market].zero_state()
    }

    /// Evaluation signals for columns `[start, len)` of `panel`.
    ///
    /// States start at zero at `start`; encoder and decoder states carry
    /// across consecutive `eval_window` chunks while the transfer layer
    /// restarts each chunk. Columns before `start` are zero.
    pub fn signals(&self, panel: &ReturnsPanel, start: usize, eval_window: usize) -> Result<SignalMatrix> {
        let market = self.market_index(panel.market_id())?;
        self.check_panel(market, panel)?;
        if start >= panel.len() {
            return Err(Error::Window(format!("start {start} beyond panel of length {}", panel.len())));
        }
        let net = &self.networks[market];
        let inputs = lagged_inputs(panel.returns().view(), start, panel.len());
        let mut out = Array2::zeros(panel.returns().dim());
        let mut state = net.zero_state();
        let chunk = eval_window.max(1);
        let mut c0 = 0;
        while c0 < inputs.ncols() {
            let c1 = (c0 + chunk).min(inputs.ncols());
            net.reset_stage(&mut state, Stage::Transfer);
            let f = net.forward(&self.store, inputs.slice(s![.., c0..c1]), &state, Masks::Off)?;
            out.slice_mut(s![.., start + c0..start + c1]).assign(&f.signals);
            state = f.state;
            if !state.is_finite() {
                return Err(Error::Numeric { step: start + c1, what: "non-finite recurrent state".into() });
            }
            c0 = c1;
        }
        SignalMatrix::for_panel(panel, out, start)
    }

    fn check_panel(&self, market: usize, panel: &ReturnsPanel) -> Result<()> {
        let want = self.markets[market].n_assets;
        if panel.n_assets() != want {
            return Err(Error::shape(format!("market {}", panel.market_id()), want, panel.n_assets()));
        }
        Ok(())
    }

    /// Time-mean of the encoder output over columns `[start, len)` of each
    /// panel, keyed by market id.
    pub fn encoder_scores(&self, panels: &[ReturnsPanel], holdout: Option<usize>) -> Result<BTreeMap<String, Vec<f64>>> {
        if self.family != ModelFamily::Quantnet {
            return Err(Error::State("only QuantNet models have an encoder".into()));
        }
        if panels.is_empty() {
            return Err(Error::State("no panels to score".into()));
        }
        let mut scores = BTreeMap::new();
        for panel in panels {
            let market = self.market_index(panel.market_id())?;
            self.check_panel(market, panel)?;
            let net = &self.networks[market];
            let enc = net.last_of(Stage::Encoder).expect("quantnet has an encoder");
            let start = match holdout {
                Some(h) if h >= 1 && h < panel.len() => panel.len() - h,
                Some(h) => return Err(Error::InvalidSplit { holdout: h, len: panel.len() }),
                None => 0,
            };
            let inputs = lagged_inputs(panel.returns().view(), start, panel.len());
            let f = net.forward(&self.store, inputs.view(), &net.zero_state(), Masks::Off)?;
            let mut mean = vec![0.0; self.arch.dim];
            for t in 0..f.tape.len() {
                for (m, e) in mean.iter_mut().zip(f.tape.layer_output(t, enc)) {
                    *m += e;
                }
            }
            let k = f.tape.len() as f64;
            mean.iter_mut().for_each(|m| *m /= k);
            scores.insert(panel.market_id().to_string(), mean);
        }
        Ok(scores)
    }

    pub fn to_checkpoint(&self, eval_window: usize) -> ModelCheckpoint {
        ModelCheckpoint {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            family: self.family,
            arch: self.arch.clone(),
            markets: self.markets.clone(),
            eval_window,
            params: self.store.to_checkpoint(),
        }
    }

    pub fn from_checkpoint(ck: &ModelCheckpoint) -> Result<Self> {
        if ck.format != MODEL_FORMAT || ck.version != MODEL_VERSION {
            return Err(Error::State(format!("unsupported model checkpoint {} v{}", ck.format, ck.version)));
        }
        let loaded = ParamStore::from_checkpoint(&ck.params)?;
        let mut model = Self::build(ck.family, ck.arch.clone(), &ck.markets, |_, shape| lookup_layer(&loaded, shape))?;
        model.store = loaded;
        if model.store.len() != model.expected_tensor_count() {
            return Err(Error::State("checkpoint has tensors the architecture does not use".into()));
        }
        Ok(model)
    }

    fn expected_tensor_count(&self) -> usize {
        let mut ids: Vec<ParamId> = self.networks.iter().flat_map(Network::param_ids).collect();
        ids.sort();
        ids.dedup();
        ids.len()
    }
}

pub const MODEL_FORMAT: &str = "quantnet-model";
pub const MODEL_VERSION: u32 = 1;

/// Parameter checkpoint plus architecture header and market registry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub format: String,
    pub version: u32,
    pub family: ModelFamily,
    pub arch: ArchSpec,
    pub markets: Vec<MarketSpec>,
    /// Chunk length used when generating evaluation signals.
    pub eval_window: usize,
    pub params: ParamCheckpoint,
}

impl ModelCheckpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Inputs for signal columns `[start, end)`: column `c` holds returns at
/// `start + c - 1` (zeros before the first observation).
pub fn lagged_inputs(returns: ArrayView2<f64>, start: usize, end: usize) -> Array2<f64> {
    let n = returns.nrows();
    let mut out = Array2::zeros((n, end - start));
    let from = start.max(1);
    if from < end {
        out.slice_mut(s![.., from - start..]).assign(&returns.slice(s![.., from - 1..end - 1]));
    }
    out
}

/// A trained model viewed as a trading strategy.
pub struct ModelStrategy<'a> {
    pub model: &'a Model,
    pub eval_window: usize,
}

impl Strategy for ModelStrategy<'_> {
    fn name(&self) -> String {
        self.model.family.as_str().to_string()
    }

    fn signals(&self, panel: &ReturnsPanel, start: usize) -> Result<SignalMatrix> {
        self.model.signals(panel, start, self.eval_window)
    }
}
