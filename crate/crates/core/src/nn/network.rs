//! A stack of affine/LSTM layers feeding a tanh signal head, with a
//! recorded forward pass and exact truncated reverse-mode gradients.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cell::{affine_backward, affine_forward, lstm_backward, lstm_forward, LstmCache, LstmState, SIGNAL_BOUND};
use super::params::{GradSink, LayerKind, LayerParams, ParamStore};
use crate::error::{Error, Result};

/// Which part of a market model a layer belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Encoder,
    Transfer,
    Decoder,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetLayer {
    pub params: LayerParams,
    pub stage: Stage,
    /// Inverted dropout on this layer's output, training only.
    pub dropout: f64,
}

/// Layers applied in order to each input vector, then `tanh(W x + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<NetLayer>,
    head: LayerParams,
}

/// Recurrent state of every layer; `None` for stateless affine layers.
#[derive(Debug, Clone, PartialEq)]
pub struct NetState {
    pub layers: Vec<Option<LstmState>>,
}

impl NetState {
    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .flatten()
            .all(|s| s.hidden.iter().chain(&s.cell).all(|v| v.is_finite()))
    }
}

/// Dropout masks for one step, one entry per layer.
pub type StepMasks = Vec<Option<Vec<f64>>>;

/// How dropout masks are produced during a forward pass.
pub enum Masks<'a> {
    /// Evaluation: no dropout.
    Off,
    /// Training: fresh masks from the generator.
    Sample(&'a mut ChaCha8Rng),
    /// Reuse masks recorded on an earlier tape.
    Replay(&'a [StepMasks]),
}

#[derive(Debug, Clone, PartialEq)]
enum LayerRecord {
    Affine { x: Vec<f64>, y: Vec<f64> },
    Lstm(LstmCache),
}

impl LayerRecord {
    fn output(&self) -> &[f64] {
        match self {
            LayerRecord::Affine { y, .. } => y,
            LayerRecord::Lstm(c) => &c.h,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct StepRecord {
    layers: Vec<LayerRecord>,
    masks: StepMasks,
    head_in: Vec<f64>,
    raw: Vec<f64>,
    signal: Vec<f64>,
}

/// Activations of a forward pass over one window, enough for the reverse pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Tape {
    init: NetState,
    inputs: Array2<f64>,
    steps: Vec<StepRecord>,
}

impl Tape {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn init_state(&self) -> &NetState {
        &self.init
    }

    pub fn inputs(&self) -> ArrayView2<'_, f64> {
        self.inputs.view()
    }

    pub fn masks(&self) -> Vec<StepMasks> {
        self.steps.iter().map(|s| s.masks.clone()).collect()
    }

    /// Pre-dropout output of `layer` at step `t`.
    pub fn layer_output(&self, t: usize, layer: usize) -> &[f64] {
        self.steps[t].layers[layer].output()
    }

    pub fn signal(&self, t: usize) -> &[f64] {
        &self.steps[t].signal
    }
}

/// Output of [`Network::forward`].
#[derive(Debug, Clone)]
pub struct Forward {
    /// `outputs x steps`.
    pub signals: Array2<f64>,
    pub tape: Tape,
    pub state: NetState,
}

type Adjoint = Vec<Option<(Vec<f64>, Vec<f64>)>>;

impl Network {
    pub fn new(layers: Vec<NetLayer>, head: LayerParams) -> Result<Self> {
        if head.kind != LayerKind::Affine {
            return Err(Error::config("signal head must be affine"));
        }
        let mut width = None;
        for l in layers.iter().map(|l| &l.params).chain(std::iter::once(&head)) {
            if let Some(w) = width {
                if l.input != w {
                    return Err(Error::shape("layer input", w, l.input));
                }
            }
            width = Some(l.output);
        }
        if let Some(l) = layers.iter().find(|l| !(0.0..1.0).contains(&l.dropout)) {
            return Err(Error::config(format!("dropout {} outside [0, 1)", l.dropout)));
        }
        Ok(Self { layers, head })
    }

    pub fn layers(&self) -> &[NetLayer] {
        &self.layers
    }

    pub fn head(&self) -> &LayerParams {
        &self.head
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(self.head.input, |l| l.params.input)
    }

    pub fn output_dim(&self) -> usize {
        self.head.output
    }

    /// Index of the last layer of `stage`, if any.
    pub fn last_of(&self, stage: Stage) -> Option<usize> {
        self.layers.iter().rposition(|l| l.stage == stage)
    }

    /// Every parameter this network reads.
    pub fn param_ids(&self) -> Vec<super::params::ParamId> {
        let mut ids = Vec::new();
        for p in self.layers.iter().map(|l| &l.params).chain(std::iter::once(&self.head)) {
            ids.push(p.w);
            ids.extend(p.v);
            ids.push(p.b);
        }
        ids
    }

    pub fn zero_state(&self) -> NetState {
        NetState {
            layers: self
                .layers
                .iter()
                .map(|l| (l.params.kind == LayerKind::Lstm).then(|| LstmState::zeros(l.params.output)))
                .collect(),
        }
    }

    /// Zeros the recurrent state of every layer in `stage`.
    pub fn reset_stage(&self, state: &mut NetState, stage: Stage) {
        for (l, s) in self.layers.iter().zip(&mut state.layers) {
            if l.stage == stage {
                if let Some(s) = s {
                    *s = LstmState::zeros(s.dim());
                }
            }
        }
    }

    fn check_state(&self, state: &NetState) -> Result<()> {
        if state.layers.len() != self.layers.len() {
            return Err(Error::State(format!(
                "state has {} layers, network has {}",
                state.layers.len(),
                self.layers.len()
            )));
        }
        for (l, s) in self.layers.iter().zip(&state.layers) {
            let ok = match (l.params.kind, s) {
                (LayerKind::Affine, None) => true,
                (LayerKind::Lstm, Some(s)) => s.hidden.len() == l.params.output && s.cell.len() == l.params.output,
                _ => false,
            };
            if !ok {
                return Err(Error::State("recurrent state does not match network layout".into()));
            }
        }
        Ok(())
    }

    /// Runs every column of `inputs` (`input_dim x steps`) through the network.
    pub fn forward(
        &self,
        store: &ParamStore,
        inputs: ArrayView2<f64>,
        state: &NetState,
        mut masks: Masks<'_>,
    ) -> Result<Forward> {
        self.check_state(state)?;
        let (rows, steps) = inputs.dim();
        if rows != self.input_dim() {
            return Err(Error::shape("network input", self.input_dim(), rows));
        }
        if let Masks::Replay(m) = &masks {
            if m.len() != steps {
                return Err(Error::State("replayed masks do not cover the window".into()));
            }
        }
        let init = state.clone();
        let mut cur = state.clone();
        let mut signals = Array2::zeros((self.output_dim(), steps));
        let mut records = Vec::with_capacity(steps);
        for t in 0..steps {
            let mut x: Vec<f64> = inputs.column(t).to_vec();
            let mut layer_recs = Vec::with_capacity(self.layers.len());
            let mut step_masks = Vec::with_capacity(self.layers.len());
            for (l, layer) in self.layers.iter().enumerate() {
                let p = &layer.params;
                let (rec, mut out) = match p.kind {
                    LayerKind::Affine => {
                        let y = affine_forward(store.value(p.w), store.value(p.b), &x);
                        (LayerRecord::Affine { x, y: y.clone() }, y)
                    }
                    LayerKind::Lstm => {
                        let s = cur.layers[l].as_mut().expect("checked layout");
                        let v = p.v.expect("lstm layer has recurrent weights");
                        let c = lstm_forward(store.value(p.w), store.value(v), store.value(p.b), &x, &s.hidden, &s.cell);
                        s.hidden.clone_from(&c.h);
                        s.cell.clone_from(&c.c);
                        let h = c.h.clone();
                        (LayerRecord::Lstm(c), h)
                    }
                };
                let mask = match &mut masks {
                    Masks::Off => None,
                    Masks::Sample(rng) if layer.dropout > 0.0 => {
                        let keep = 1.0 - layer.dropout;
                        Some(
                            (0..out.len())
                                .map(|_| if rng.random::<f64>() < layer.dropout { 0.0 } else { 1.0 / keep })
                                .collect::<Vec<_>>(),
                        )
                    }
                    Masks::Sample(_) => None,
                    Masks::Replay(m) => m[t].get(l).cloned().flatten(),
                };
                if let Some(m) = &mask {
                    for (o, k) in out.iter_mut().zip(m) {
                        *o *= k;
                    }
                }
                layer_recs.push(rec);
                step_masks.push(mask);
                x = out;
            }
            let pre = affine_forward(store.value(self.head.w), store.value(self.head.b), &x);
            let raw: Vec<f64> = pre.iter().map(|a| a.tanh()).collect();
            let signal: Vec<f64> = raw.iter().map(|s| s.clamp(-SIGNAL_BOUND, SIGNAL_BOUND)).collect();
            for (j, s) in signal.iter().enumerate() {
                signals[(j, t)] = *s;
            }
            records.push(StepRecord { layers: layer_recs, masks: step_masks, head_in: x, raw, signal });
        }
        Ok(Forward {
            signals,
            tape: Tape { init, inputs: inputs.to_owned(), steps: records },
            state: cur,
        })
    }

    /// Re-runs the recorded window with its own masks and checks every
    /// activation is bit-identical.
    pub fn replay_matches(&self, store: &ParamStore, tape: &Tape) -> Result<bool> {
        let masks = tape.masks();
        let again = self.forward(store, tape.inputs(), &tape.init, Masks::Replay(&masks))?;
        Ok(again.tape == *tape)
    }

    /// Reverse pass over a recorded window.
    ///
    /// `d_signals` (`outputs x steps`) is the loss gradient for every emitted
    /// signal. Credit from the signal at step `t` reaches steps
    /// `t, t-1, ..., t-h+1` where `h = truncation`; `None` (or `h >= steps`)
    /// is full backpropagation through the window. Gradients are added to
    /// whatever `sink` already holds.
    pub fn backward(
        &self,
        store: &ParamStore,
        tape: &Tape,
        d_signals: ArrayView2<f64>,
        truncation: Option<usize>,
        sink: &mut impl GradSink,
    ) -> Result<()> {
        let steps = tape.len();
        if d_signals.dim() != (self.output_dim(), steps) {
            return Err(Error::State(format!(
                "loss gradient {:?} does not match tape window {:?}",
                d_signals.dim(),
                (self.output_dim(), steps)
            )));
        }
        if tape.steps.first().is_some_and(|s| s.layers.len() != self.layers.len()) {
            return Err(Error::State("tape was recorded by a different network".into()));
        }
        let horizon = match truncation {
            Some(0) => return Err(Error::config("truncation horizon must be at least 1")),
            Some(h) if h < steps => h,
            _ => steps,
        };
        if horizon >= steps {
            let mut adj: Adjoint = vec![None; self.layers.len()];
            for t in (0..steps).rev() {
                let ds = d_signals.column(t).to_vec();
                adj = self.step_back(store, &tape.steps[t], Some(&ds), adj, sink);
            }
            return Ok(());
        }
        // One adjoint per originating signal, each dropped after `horizon` steps.
        let mut active: Vec<(usize, Adjoint)> = Vec::new();
        for t in (0..steps).rev() {
            active.push((t, vec![None; self.layers.len()]));
            let ds = d_signals.column(t).to_vec();
            for (origin, adj) in active.iter_mut() {
                let inject = (*origin == t).then_some(ds.as_slice());
                let a = std::mem::take(adj);
                *adj = self.step_back(store, &tape.steps[t], inject, a, sink);
            }
            active.retain(|(origin, _)| origin - t + 1 < horizon);
        }
        Ok(())
    }

    fn step_back(
        &self,
        store: &ParamStore,
        rec: &StepRecord,
        ds: Option<&[f64]>,
        mut adj: Adjoint,
        sink: &mut impl GradSink,
    ) -> Adjoint {
        let mut out: Adjoint = vec![None; self.layers.len()];
        let mut dy: Option<Vec<f64>> = ds.map(|ds| {
            let dpre: Vec<f64> = ds.iter().zip(&rec.raw).map(|(g, s)| g * (1.0 - s * s)).collect();
            affine_backward(&self.head, store.value(self.head.w), &rec.head_in, &dpre, sink, true)
                .expect("dx requested")
        });
        for l in (0..self.layers.len()).rev() {
            if let (Some(d), Some(mask)) = (dy.as_mut(), &rec.masks[l]) {
                for (g, k) in d.iter_mut().zip(mask) {
                    *g *= k;
                }
            }
            let p = &self.layers[l].params;
            let need_dx = l > 0;
            dy = match &rec.layers[l] {
                LayerRecord::Affine { x, .. } => {
                    dy.and_then(|d| affine_backward(p, store.value(p.w), x, &d, sink, need_dx))
                }
                LayerRecord::Lstm(cache) => {
                    let carried = adj[l].take();
                    if dy.is_none() && carried.is_none() {
                        None
                    } else {
                        let d = p.output;
                        let (mut dh, dc) = carried.unwrap_or_else(|| (vec![0.0; d], vec![0.0; d]));
                        if let Some(g) = &dy {
                            for (a, b) in dh.iter_mut().zip(g) {
                                *a += b;
                            }
                        }
                        let v = store.value(p.v.expect("lstm layer has recurrent weights"));
                        let (dx, dh_prev, dc_prev) =
                            lstm_backward(p, store.value(p.w), v, cache, &dh, &dc, sink, need_dx);
                        out[l] = Some((dh_prev, dc_prev));
                        dx
                    }
                }
            };
        }
        out
    }
}
