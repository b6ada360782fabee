use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of a tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Row-major matrix of f64. Vectors are stored with `cols == 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape("tensor data", rows * cols, data.len()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }
}

/// Destination for parameter gradients.
pub trait GradSink {
    /// Gradient buffer for `id`; `len` is the tensor size.
    fn grad_slot(&mut self, id: ParamId, len: usize) -> &mut [f64];
}

/// Sparse gradient buffer: only tensors that received gradient are allocated.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradBuffer {
    slots: BTreeMap<ParamId, Vec<f64>>,
}

impl GradBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.slots.get(&id).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.slots.iter().map(|(k, v)| (*k, v.as_slice()))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.slots.keys().copied()
    }
}

impl GradSink for GradBuffer {
    fn grad_slot(&mut self, id: ParamId, len: usize) -> &mut [f64] {
        self.slots.entry(id).or_insert_with(|| vec![0.0; len])
    }
}

/// Named trainable tensors with same-shaped gradient buffers.
///
/// Names are unique and shapes are fixed once a tensor is added.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    index: HashMap<String, ParamId>,
    values: Vec<Tensor>,
    grads: Vec<Vec<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::config(format!("duplicate parameter name {name}")));
        }
        let id = ParamId(self.values.len());
        self.grads.push(vec![0.0; value.len()]);
        self.values.push(value);
        self.index.insert(name.clone(), id);
        self.names.push(name);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &[f64] {
        &self.grads[id.0]
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.grads[id.0]
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.fill(0.0);
        }
    }

    /// Adds a sparse buffer into the dense gradients, in ascending id order.
    pub fn accumulate(&mut self, buf: &GradBuffer) {
        for (id, g) in buf.iter() {
            for (dst, src) in self.grads[id.0].iter_mut().zip(g) {
                *dst += src;
            }
        }
    }

    /// Total number of scalar parameters.
    pub fn n_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn to_checkpoint(&self) -> ParamCheckpoint {
        ParamCheckpoint {
            format: PARAM_FORMAT.to_string(),
            version: PARAM_VERSION,
            params: self
                .names
                .iter()
                .zip(&self.values)
                .map(|(name, t)| NamedTensor {
                    name: name.clone(),
                    shape: t.shape(),
                    values: t.data.clone(),
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(ck: &ParamCheckpoint) -> Result<Self> {
        if ck.format != PARAM_FORMAT || ck.version != PARAM_VERSION {
            return Err(Error::State(format!(
                "unsupported parameter checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        let mut store = Self::new();
        for p in &ck.params {
            store.add(p.name.clone(), Tensor::from_vec(p.shape[0], p.shape[1], p.values.clone())?)?;
        }
        Ok(store)
    }

    /// Overwrites values from a checkpoint with identical names and shapes.
    pub fn load_values(&mut self, ck: &ParamCheckpoint) -> Result<()> {
        let other = Self::from_checkpoint(ck)?;
        if other.names != self.names {
            return Err(Error::State("checkpoint parameter names differ from the model".into()));
        }
        for (dst, src) in self.values.iter_mut().zip(other.values) {
            if dst.shape() != src.shape() {
                return Err(Error::shape("checkpoint tensor", format!("{:?}", dst.shape()), format!("{:?}", src.shape())));
            }
            *dst = src;
        }
        Ok(())
    }
}

impl GradSink for ParamStore {
    fn grad_slot(&mut self, id: ParamId, _len: usize) -> &mut [f64] {
        &mut self.grads[id.0]
    }
}

pub const PARAM_FORMAT: &str = "quantnet-params";
pub const PARAM_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: [usize; 2],
    pub values: Vec<f64>,
}

/// Flat `name -> shape -> row-major values` map, serialised as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamCheckpoint {
    pub format: String,
    pub version: u32,
    pub params: Vec<NamedTensor>,
}

/// Which kind of layer a set of parameters belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Affine,
    Lstm,
}

/// Shape of one layer to initialise.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerShape {
    pub prefix: String,
    pub kind: LayerKind,
    pub input: usize,
    pub output: usize,
}

/// Parameter handles of one layer inside a store.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerParams {
    pub kind: LayerKind,
    pub input: usize,
    pub output: usize,
    /// Input weights: `output x input` for affine, `4*output x input` for LSTM.
    pub w: ParamId,
    /// Recurrent weights, LSTM only: `4*output x output`.
    pub v: Option<ParamId>,
    pub b: ParamId,
}

/// Forget-gate bias at initialisation.
pub const FORGET_BIAS_INIT: f64 = 1.0;

fn uniform_tensor(rows: usize, cols: usize, fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor { rows, cols, data }
}

/// Adds one layer's tensors under `prefix`, drawing weights from
/// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`. Biases start at zero except the
/// LSTM forget gate, which starts at [`FORGET_BIAS_INIT`].
///
/// LSTM gate blocks are stacked in the order input, forget, output, candidate.
pub fn add_layer(store: &mut ParamStore, shape: &LayerShape, rng: &mut impl Rng) -> Result<LayerParams> {
    let LayerShape { prefix, kind, input, output } = shape;
    let (input, output) = (*input, *output);
    if input == 0 || output == 0 {
        return Err(Error::config(format!("layer {prefix} has a zero dimension")));
    }
    match kind {
        LayerKind::Affine => {
            let w = store.add(format!("{prefix}.W"), uniform_tensor(output, input, input, rng))?;
            let b = store.add(format!("{prefix}.b"), Tensor::zeros(output, 1))?;
            Ok(LayerParams { kind: LayerKind::Affine, input, output, w, v: None, b })
        }
        LayerKind::Lstm => {
            let w = store.add(format!("{prefix}.W"), uniform_tensor(4 * output, input, input, rng))?;
            let v = store.add(format!("{prefix}.V"), uniform_tensor(4 * output, output, output, rng))?;
            let mut bias = Tensor::zeros(4 * output, 1);
            for r in output..2 * output {
                bias.set(r, 0, FORGET_BIAS_INIT);
            }
            let b = store.add(format!("{prefix}.b"), bias)?;
            Ok(LayerParams { kind: LayerKind::Lstm, input, output, w, v: Some(v), b })
        }
    }
}

/// Builds a fresh store for a list of layer shapes, deterministically per seed.
pub fn init_params(shapes: &[LayerShape], seed: u64) -> Result<(ParamStore, Vec<LayerParams>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let layers = shapes
        .iter()
        .map(|s| add_layer(&mut store, s, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    Ok((store, layers))
}

/// Resolves an existing layer's handles by prefix.
pub fn lookup_layer(store: &ParamStore, shape: &LayerShape) -> Result<LayerParams> {
    let get = |suffix: &str| {
        store
            .id(&format!("{}.{suffix}", shape.prefix))
            .ok_or_else(|| Error::State(format!("parameter {}.{suffix} missing", shape.prefix)))
    };
    let (w, b) = (get("W")?, get("b")?);
    let v = match shape.kind {
        LayerKind::Affine => None,
        LayerKind::Lstm => Some(get("V")?),
    };
    let gates = if shape.kind == LayerKind::Lstm { 4 } else { 1 };
    let expect = [gates * shape.output, shape.input];
    if store.value(w).shape() != expect {
        return Err(Error::shape(
            format!("{}.W", shape.prefix),
            format!("{expect:?}"),
            format!("{:?}", store.value(w).shape()),
        ));
    }
    Ok(LayerParams { kind: shape.kind, input: shape.input, output: shape.output, w, v, b })
}
