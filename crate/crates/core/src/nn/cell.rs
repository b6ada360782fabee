//! Forward and reverse kernels for the affine map, the LSTM cell and the
//! bounded tanh signal head.

use serde::{Deserialize, Serialize};

use super::params::{GradSink, LayerKind, LayerParams, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Signals are clamped to `+-SIGNAL_BOUND` after the tanh.
pub const SIGNAL_BOUND: f64 = 1.0 - 1e-12;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Hidden and cell vectors of one LSTM layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmState {
    pub hidden: Vec<f64>,
    pub cell: Vec<f64>,
}

impl LstmState {
    pub fn zeros(dim: usize) -> Self {
        Self { hidden: vec![0.0; dim], cell: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.hidden.len()
    }
}

/// `y = W x + b`.
pub(crate) fn affine_forward(w: &Tensor, b: &Tensor, x: &[f64]) -> Vec<f64> {
    let cols = w.cols();
    let wd = w.data();
    let bd = b.data();
    (0..w.rows())
        .map(|r| {
            let row = &wd[r * cols..(r + 1) * cols];
            let mut acc = bd[r];
            for (wi, xi) in row.iter().zip(x) {
                acc += wi * xi;
            }
            acc
        })
        .collect()
}

/// Accumulates `dW += dy x^T`, `db += dy` and returns `W^T dy` when asked.
pub(crate) fn affine_backward(
    layer: &LayerParams,
    w: &Tensor,
    x: &[f64],
    dy: &[f64],
    sink: &mut impl GradSink,
    need_dx: bool,
) -> Option<Vec<f64>> {
    let cols = w.cols();
    {
        let gw = sink.grad_slot(layer.w, w.len());
        for (r, &d) in dy.iter().enumerate() {
            if d != 0.0 {
                let row = &mut gw[r * cols..(r + 1) * cols];
                for (g, xi) in row.iter_mut().zip(x) {
                    *g += d * xi;
                }
            }
        }
    }
    {
        let gb = sink.grad_slot(layer.b, dy.len());
        for (g, d) in gb.iter_mut().zip(dy) {
            *g += d;
        }
    }
    need_dx.then(|| transpose_matvec(w, dy))
}

fn transpose_matvec(w: &Tensor, dy: &[f64]) -> Vec<f64> {
    let cols = w.cols();
    let wd = w.data();
    let mut dx = vec![0.0; cols];
    for (r, &d) in dy.iter().enumerate() {
        if d != 0.0 {
            for (o, wi) in dx.iter_mut().zip(&wd[r * cols..(r + 1) * cols]) {
                *o += wi * d;
            }
        }
    }
    dx
}

/// Everything the reverse pass needs from one LSTM step.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LstmCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    /// Activated gates, `[input | forget | output | candidate]`.
    pub gates: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

pub(crate) fn lstm_forward(
    w: &Tensor,
    v: &Tensor,
    b: &Tensor,
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
) -> LstmCache {
    let d = h_prev.len();
    let mut u = affine_forward(w, b, x);
    let vd = v.data();
    for (r, ur) in u.iter_mut().enumerate() {
        let row = &vd[r * d..(r + 1) * d];
        for (vi, hi) in row.iter().zip(h_prev) {
            *ur += vi * hi;
        }
    }
    let mut gates = u;
    for (k, g) in gates.iter_mut().enumerate() {
        *g = if k < 3 * d { sigmoid(*g) } else { g.tanh() };
    }
    let mut c = vec![0.0; d];
    let mut tanh_c = vec![0.0; d];
    let mut h = vec![0.0; d];
    for k in 0..d {
        let (i, f, o, g) = (gates[k], gates[d + k], gates[2 * d + k], gates[3 * d + k]);
        c[k] = f * c_prev[k] + i * g;
        tanh_c[k] = c[k].tanh();
        h[k] = o * tanh_c[k];
    }
    LstmCache {
        x: x.to_vec(),
        h_prev: h_prev.to_vec(),
        c_prev: c_prev.to_vec(),
        gates,
        c,
        tanh_c,
        h,
    }
}

/// Reverse pass of one LSTM step given adjoints of `h_t` and `c_t`.
///
/// Returns `(dx, dh_{t-1}, dc_{t-1})`; `dx` only when requested.
pub(crate) fn lstm_backward(
    layer: &LayerParams,
    w: &Tensor,
    v: &Tensor,
    cache: &LstmCache,
    dh: &[f64],
    dc_in: &[f64],
    sink: &mut impl GradSink,
    need_dx: bool,
) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let d = dh.len();
    let g = &cache.gates;
    let mut du = vec![0.0; 4 * d];
    let mut dc_prev = vec![0.0; d];
    for k in 0..d {
        let (i, f, o, gg) = (g[k], g[d + k], g[2 * d + k], g[3 * d + k]);
        let tc = cache.tanh_c[k];
        let d_o = dh[k] * tc;
        let dc = dc_in[k] + dh[k] * o * (1.0 - tc * tc);
        let d_f = dc * cache.c_prev[k];
        let d_i = dc * gg;
        let d_g = dc * i;
        dc_prev[k] = dc * f;
        du[k] = d_i * i * (1.0 - i);
        du[d + k] = d_f * f * (1.0 - f);
        du[2 * d + k] = d_o * o * (1.0 - o);
        du[3 * d + k] = d_g * (1.0 - gg * gg);
    }
    let dx = affine_backward(layer, w, &cache.x, &du, sink, need_dx);
    let v_id = layer.v.expect("lstm layer has recurrent weights");
    {
        let gv = sink.grad_slot(v_id, v.len());
        for (r, &dr) in du.iter().enumerate() {
            if dr != 0.0 {
                for (gvi, hi) in gv[r * d..(r + 1) * d].iter_mut().zip(&cache.h_prev) {
                    *gvi += dr * hi;
                }
            }
        }
    }
    let dh_prev = transpose_matvec(v, &du);
    (dx, dh_prev, dc_prev)
}

fn check_input(store: &ParamStore, layer: &LayerParams, x: &[f64]) -> Result<()> {
    if x.len() != layer.input {
        return Err(Error::shape(store.name(layer.w), layer.input, x.len()));
    }
    Ok(())
}

fn check_kind(store: &ParamStore, layer: &LayerParams, kind: LayerKind) -> Result<()> {
    if layer.kind != kind {
        return Err(Error::shape(store.name(layer.w), format!("{kind:?} layer"), format!("{:?} layer", layer.kind)));
    }
    Ok(())
}

/// One LSTM step on `x` from `state`.
pub fn lstm_step(store: &ParamStore, layer: &LayerParams, x: &[f64], state: &LstmState) -> Result<LstmState> {
    check_kind(store, layer, LayerKind::Lstm)?;
    check_input(store, layer, x)?;
    let v = layer.v.expect("lstm layer has recurrent weights");
    if state.hidden.len() != layer.output || state.cell.len() != layer.output {
        return Err(Error::shape(store.name(v), layer.output, state.hidden.len()));
    }
    let c = lstm_forward(store.value(layer.w), store.value(v), store.value(layer.b), x, &state.hidden, &state.cell);
    Ok(LstmState { hidden: c.h, cell: c.c })
}

/// `W x + b`.
pub fn linear_step(store: &ParamStore, layer: &LayerParams, x: &[f64]) -> Result<Vec<f64>> {
    check_kind(store, layer, LayerKind::Affine)?;
    check_input(store, layer, x)?;
    Ok(affine_forward(store.value(layer.w), store.value(layer.b), x))
}

/// `clamp(tanh(W d + b))`, strictly inside `(-1, 1)`.
pub fn tanh_head(store: &ParamStore, layer: &LayerParams, d: &[f64]) -> Result<Vec<f64>> {
    Ok(linear_step(store, layer, d)?
        .into_iter()
        .map(|a| a.tanh().clamp(-SIGNAL_BOUND, SIGNAL_BOUND))
        .collect())
}
