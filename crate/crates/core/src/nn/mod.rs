//! Minimal differentiable kernel: parameter store, affine and LSTM layers,
//! tanh signal head and truncated backpropagation through time.

pub mod cell;
pub mod network;
pub mod params;

pub use cell::{linear_step, lstm_step, sigmoid, tanh_head, LstmState, SIGNAL_BOUND};
pub use network::{Forward, Masks, NetLayer, NetState, Network, Stage, StepMasks, Tape};
pub use params::{
    add_layer, init_params, lookup_layer, GradBuffer, GradSink, LayerKind, LayerParams, LayerShape, ParamCheckpoint,
    ParamId, ParamStore, Tensor,
};
