//! Two-layer recurrent network: an LSTM layer feeding a fully-connected
//! read-out layer, plus its placement on crossbar partitions.
//!
//! Parameters are kept in crossbar orientation: a layer's stacked matrix has
//! one row per input line (`x`, then `h`, then the bias line) and one column
//! per output. The LSTM columns are grouped in gate blocks ordered
//! cell-activation, input, forget, output. A layer computes `z = P^T u`
//! with `u = [x; h; 1]`.

use std::ops::Range;

use ndarray::{s, Array2, ArrayView2, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{fold_pair_currents, Codec};
use crate::device::{Crossbar, Partition, ProgramReport};
use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Cell,
    Input,
    Forget,
    Output,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Cell, Gate::Input, Gate::Forget, Gate::Output];

    fn block(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerId {
    Lstm,
    Fc,
}

impl LayerId {
    pub fn name(self) -> &'static str {
        match self {
            LayerId::Lstm => "lstm",
            LayerId::Fc => "fc",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LstmLayerSpec {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub has_bias: bool,
}

impl LstmLayerSpec {
    pub fn param_rows(&self) -> usize {
        self.input_dim + self.hidden_dim + usize::from(self.has_bias)
    }

    pub fn param_cols(&self) -> usize {
        4 * self.hidden_dim
    }

    pub fn input_rows(&self) -> Range<usize> {
        0..self.input_dim
    }

    pub fn recurrent_rows(&self) -> Range<usize> {
        self.input_dim..self.input_dim + self.hidden_dim
    }

    pub fn bias_row(&self) -> Option<usize> {
        self.has_bias.then_some(self.input_dim + self.hidden_dim)
    }

    pub fn gate_cols(&self, gate: Gate) -> Range<usize> {
        let h = self.hidden_dim;
        gate.block() * h..(gate.block() + 1) * h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FcLayerSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub has_bias: bool,
    pub activation: Activation,
}

impl FcLayerSpec {
    pub fn param_rows(&self) -> usize {
        self.input_dim + usize::from(self.has_bias)
    }

    pub fn param_cols(&self) -> usize {
        self.output_dim
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub lstm: LstmLayerSpec,
    pub fc: FcLayerSpec,
}

impl NetworkSpec {
    pub fn new(lstm: LstmLayerSpec, fc: FcLayerSpec) -> Result<Self> {
        if lstm.input_dim == 0 || lstm.hidden_dim == 0 || fc.output_dim == 0 {
            return Err(Error::Config("layer dimensions must be non-zero".into()));
        }
        check_len("fc input vs lstm hidden", lstm.hidden_dim, fc.input_dim)?;
        Ok(Self { lstm, fc })
    }

    /// 1 input, 15 LSTM units and one sigmoid output, both layers biased.
    pub fn airline() -> Self {
        Self::new(
            LstmLayerSpec {
                input_dim: 1,
                hidden_dim: 15,
                has_bias: true,
            },
            FcLayerSpec {
                input_dim: 15,
                output_dim: 1,
                has_bias: true,
                activation: Activation::Sigmoid,
            },
        )
        .expect("valid airline network")
    }

    /// 50 inputs, 14 LSTM units and 8 softmax outputs, no bias lines.
    pub fn gait() -> Self {
        Self::new(
            LstmLayerSpec {
                input_dim: 50,
                hidden_dim: 14,
                has_bias: false,
            },
            FcLayerSpec {
                input_dim: 14,
                output_dim: 8,
                has_bias: false,
                activation: Activation::Softmax,
            },
        )
        .expect("valid gait network")
    }

    pub fn layer_shape(&self, layer: LayerId) -> (usize, usize) {
        match layer {
            LayerId::Lstm => (self.lstm.param_rows(), self.lstm.param_cols()),
            LayerId::Fc => (self.fc.param_rows(), self.fc.param_cols()),
        }
    }
}

/// One matrix per layer. Used for parameters, gradients, updates and
/// optimizer state alike.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub lstm: Array2<f64>,
    pub fc: Array2<f64>,
}

impl ParamSet {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        Self {
            lstm: Array2::zeros(spec.layer_shape(LayerId::Lstm)),
            fc: Array2::zeros(spec.layer_shape(LayerId::Fc)),
        }
    }

    pub fn uniform<R: Rng + ?Sized>(spec: &NetworkSpec, scale: f64, rng: &mut R) -> Self {
        let mut p = Self::zeros(spec);
        if scale > 0.0 {
            p.lstm.mapv_inplace(|_| rng.random_range(-scale..scale));
            p.fc.mapv_inplace(|_| rng.random_range(-scale..scale));
        }
        p
    }

    pub fn layer(&self, layer: LayerId) -> &Array2<f64> {
        match layer {
            LayerId::Lstm => &self.lstm,
            LayerId::Fc => &self.fc,
        }
    }

    pub fn layer_mut(&mut self, layer: LayerId) -> &mut Array2<f64> {
        match layer {
            LayerId::Lstm => &mut self.lstm,
            LayerId::Fc => &mut self.fc,
        }
    }

    pub fn matches(&self, spec: &NetworkSpec) -> bool {
        self.lstm.dim() == spec.layer_shape(LayerId::Lstm)
            && self.fc.dim() == spec.layer_shape(LayerId::Fc)
    }

    pub fn same_shape(&self, other: &ParamSet) -> bool {
        self.lstm.dim() == other.lstm.dim() && self.fc.dim() == other.fc.dim()
    }

    pub fn add_assign(&mut self, other: &ParamSet) {
        self.lstm += &other.lstm;
        self.fc += &other.fc;
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.lstm.iter().chain(self.fc.iter())
    }

    pub fn max_abs(&self) -> f64 {
        self.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }

    /// Weights of one gate on the `x` inputs, as an `input x hidden` view.
    pub fn input_weights(&self, spec: &LstmLayerSpec, gate: Gate) -> ArrayView2<'_, f64> {
        self.lstm.slice(s![spec.input_rows(), spec.gate_cols(gate)])
    }

    pub fn recurrent_weights(&self, spec: &LstmLayerSpec, gate: Gate) -> ArrayView2<'_, f64> {
        self.lstm
            .slice(s![spec.recurrent_rows(), spec.gate_cols(gate)])
    }

    pub fn gate_bias(&self, spec: &LstmLayerSpec, gate: Gate) -> Option<Vec<f64>> {
        spec.bias_row()
            .map(|r| self.lstm.slice(s![r, spec.gate_cols(gate)]).to_vec())
    }
}

/// Executes the linear part of each layer, either in floating point or on
/// a crossbar.
pub trait MatVecEngine {
    /// `z = P^T u`, where `u` already includes the bias line.
    fn forward(&mut self, layer: LayerId, input: &[f64]) -> Result<Vec<f64>>;
    /// `P delta`, one entry per input line (bias line included).
    fn backward(&mut self, layer: LayerId, delta: &[f64]) -> Result<Vec<f64>>;
}

pub(crate) fn dense_forward(p: &Array2<f64>, input: &[f64]) -> Result<Vec<f64>> {
    check_len("layer input", p.nrows(), input.len())?;
    let mut z = vec![0.0; p.ncols()];
    for (row, &u) in p.rows().into_iter().zip(input) {
        if u == 0.0 {
            continue;
        }
        for (zj, &w) in z.iter_mut().zip(row.iter()) {
            *zj += w * u;
        }
    }
    Ok(z)
}

pub(crate) fn dense_backward(p: &Array2<f64>, delta: &[f64]) -> Result<Vec<f64>> {
    check_len("layer delta", p.ncols(), delta.len())?;
    Ok(p.rows()
        .into_iter()
        .map(|row| row.iter().zip(delta).map(|(w, d)| w * d).sum())
        .collect())
}

impl MatVecEngine for ParamSet {
    fn forward(&mut self, layer: LayerId, input: &[f64]) -> Result<Vec<f64>> {
        dense_forward(self.layer(layer), input)
    }

    fn backward(&mut self, layer: LayerId, delta: &[f64]) -> Result<Vec<f64>> {
        dense_backward(self.layer(layer), delta)
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    /// Cell state before the output tanh.
    pub c_hat: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: vec![0.0; hidden],
            c_hat: vec![0.0; hidden],
        }
    }
}

/// Everything one time step needs to be differentiated later.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_hat_prev: Vec<f64>,
    pub a: Vec<f64>,
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub o: Vec<f64>,
    pub c_hat: Vec<f64>,
    pub c: Vec<f64>,
    pub h: Vec<f64>,
    pub y_hat: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LstmCache {
    pub steps: Vec<StepCache>,
}

impl LstmCache {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

fn augmented(parts: &[&[f64]], bias: bool) -> Vec<f64> {
    let mut u: Vec<f64> = parts.iter().flat_map(|p| p.iter().copied()).collect();
    if bias {
        u.push(1.0);
    }
    u
}

/// One LSTM time step through the stacked matrix product.
pub fn lstm_step<E: MatVecEngine + ?Sized>(
    spec: &LstmLayerSpec,
    engine: &mut E,
    state: &LstmState,
    x: &[f64],
) -> Result<(Vec<f64>, LstmState, StepCache)> {
    check_len("lstm input", spec.input_dim, x.len())?;
    check_len("lstm state h", spec.hidden_dim, state.h.len())?;
    check_len("lstm state c", spec.hidden_dim, state.c_hat.len())?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("lstm input"));
    }
    let u = augmented(&[x, &state.h], spec.has_bias);
    let z = engine.forward(LayerId::Lstm, &u)?;
    check_len("lstm pre-activations", spec.param_cols(), z.len())?;

    let block = |g: Gate| &z[spec.gate_cols(g)];
    let a: Vec<f64> = block(Gate::Cell).iter().map(|v| v.tanh()).collect();
    let i: Vec<f64> = block(Gate::Input).iter().map(|&v| sigmoid(v)).collect();
    let f: Vec<f64> = block(Gate::Forget).iter().map(|&v| sigmoid(v)).collect();
    let o: Vec<f64> = block(Gate::Output).iter().map(|&v| sigmoid(v)).collect();

    let c_hat: Vec<f64> = (0..spec.hidden_dim)
        .map(|k| i[k] * a[k] + f[k] * state.c_hat[k])
        .collect();
    let c: Vec<f64> = c_hat.iter().map(|v| v.tanh()).collect();
    let h: Vec<f64> = o.iter().zip(&c).map(|(o, c)| o * c).collect();

    let cache = StepCache {
        x: x.to_vec(),
        h_prev: state.h.clone(),
        c_hat_prev: state.c_hat.clone(),
        a,
        i,
        f,
        o,
        c_hat: c_hat.clone(),
        c,
        h: h.clone(),
        y_hat: Vec::new(),
        y: Vec::new(),
    };
    Ok((h.clone(), LstmState { h, c_hat }, cache))
}

/// The same step written gate by gate (`W x + U h + b` per gate, then the
/// activations and cell update). Float parameters only.
pub fn lstm_step_per_gate(
    spec: &LstmLayerSpec,
    params: &ParamSet,
    state: &LstmState,
    x: &[f64],
) -> Result<(Vec<f64>, LstmState)> {
    check_len("lstm input", spec.input_dim, x.len())?;
    check_len("lstm state h", spec.hidden_dim, state.h.len())?;
    let pre = |gate: Gate| -> Vec<f64> {
        let w = params.input_weights(spec, gate);
        let u = params.recurrent_weights(spec, gate);
        let b = params.gate_bias(spec, gate);
        (0..spec.hidden_dim)
            .map(|j| {
                let wx: f64 = (0..spec.input_dim).map(|k| w[(k, j)] * x[k]).sum();
                let uh: f64 = (0..spec.hidden_dim).map(|k| u[(k, j)] * state.h[k]).sum();
                wx + uh + b.as_ref().map_or(0.0, |b| b[j])
            })
            .collect()
    };
    let a: Vec<f64> = pre(Gate::Cell).into_iter().map(f64::tanh).collect();
    let i: Vec<f64> = pre(Gate::Input).into_iter().map(sigmoid).collect();
    let f: Vec<f64> = pre(Gate::Forget).into_iter().map(sigmoid).collect();
    let o: Vec<f64> = pre(Gate::Output).into_iter().map(sigmoid).collect();
    let c_hat: Vec<f64> = (0..spec.hidden_dim)
        .map(|k| i[k] * a[k] + f[k] * state.c_hat[k])
        .collect();
    let h: Vec<f64> = (0..spec.hidden_dim)
        .map(|k| o[k] * c_hat[k].tanh())
        .collect();
    Ok((h.clone(), LstmState { h, c_hat }))
}

/// Read-out layer: returns `(y, y_hat)`.
pub fn fc_forward<E: MatVecEngine + ?Sized>(
    spec: &FcLayerSpec,
    engine: &mut E,
    h: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_len("fc input", spec.input_dim, h.len())?;
    let u = augmented(&[h], spec.has_bias);
    let y_hat = engine.forward(LayerId::Fc, &u)?;
    check_len("fc outputs", spec.output_dim, y_hat.len())?;
    let y = match spec.activation {
        Activation::Sigmoid => y_hat.iter().map(|&v| sigmoid(v)).collect(),
        Activation::Softmax => softmax(&y_hat),
    };
    Ok((y, y_hat))
}

/// Run a whole sequence from a zero state.
pub fn sequence_forward<E: MatVecEngine + ?Sized>(
    spec: &NetworkSpec,
    engine: &mut E,
    inputs: &[Vec<f64>],
) -> Result<(Vec<Vec<f64>>, LstmCache)> {
    if inputs.is_empty() {
        return Err(Error::DimensionMismatch {
            context: "sequence length",
            expected: 1,
            actual: 0,
        });
    }
    let mut state = LstmState::zeros(spec.lstm.hidden_dim);
    let mut outputs = Vec::with_capacity(inputs.len());
    let mut cache = LstmCache {
        steps: Vec::with_capacity(inputs.len()),
    };
    for x in inputs {
        let (h, next, mut step) = lstm_step(&spec.lstm, engine, &state, x)?;
        let (y, y_hat) = fc_forward(&spec.fc, engine, &h)?;
        step.y_hat = y_hat;
        step.y = y.clone();
        outputs.push(y);
        cache.steps.push(step);
        state = next;
    }
    Ok((outputs, cache))
}

/// Index of the largest output at the last step; ties go to the lowest index.
pub fn classify_final_step(outputs: &[Vec<f64>]) -> Option<usize> {
    let last = outputs.last()?;
    let mut best: Option<(usize, f64)> = None;
    for (k, &v) in last.iter().enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((k, v));
        }
    }
    best.map(|(k, _)| k)
}

/// Placement of one layer on a crossbar partition. Logical input line `k`
/// uses physical rows `2k` and `2k + 1`; logical output `j` is column `j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerMapping {
    pub layer: LayerId,
    pub partition: Partition,
    pub logical_rows: usize,
    pub logical_cols: usize,
    pub bias_row: Option<usize>,
}

impl LayerMapping {
    pub fn new(
        layer: LayerId,
        partition: Partition,
        logical_rows: usize,
        logical_cols: usize,
        bias_row: Option<usize>,
    ) -> Result<Self> {
        if partition.row_count != 2 * logical_rows || partition.col_count != logical_cols {
            return Err(Error::Config(format!(
                "{} partition is {}x{} but the layer needs {}x{}",
                layer.name(),
                partition.row_count,
                partition.col_count,
                2 * logical_rows,
                logical_cols
            )));
        }
        Ok(Self {
            layer,
            partition,
            logical_rows,
            logical_cols,
            bias_row,
        })
    }

    /// Absolute crossbar rows of the (plus, minus) pair of a logical line.
    pub fn pair_rows(&self, logical: usize) -> (usize, usize) {
        let r = self.partition.row_start + 2 * logical;
        (r, r + 1)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.partition.shape()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetworkMapping {
    pub lstm: LayerMapping,
    pub fc: LayerMapping,
}

impl NetworkMapping {
    pub fn new(
        spec: &NetworkSpec,
        lstm_partition: Partition,
        fc_partition: Partition,
        crossbar_rows: usize,
        crossbar_cols: usize,
    ) -> Result<Self> {
        for p in [&lstm_partition, &fc_partition] {
            if !p.fits(crossbar_rows, crossbar_cols) {
                return Err(Error::PartitionOutOfBounds {
                    partition: *p,
                    rows: crossbar_rows,
                    cols: crossbar_cols,
                });
            }
        }
        if lstm_partition.overlaps(&fc_partition) {
            return Err(Error::Config(format!(
                "lstm partition {lstm_partition:?} overlaps fc partition {fc_partition:?}"
            )));
        }
        let (lr, lc) = spec.layer_shape(LayerId::Lstm);
        let (fr, fc) = spec.layer_shape(LayerId::Fc);
        let fc_bias = spec.fc.has_bias.then_some(spec.fc.input_dim);
        Ok(Self {
            lstm: LayerMapping::new(LayerId::Lstm, lstm_partition, lr, lc, spec.lstm.bias_row())?,
            fc: LayerMapping::new(LayerId::Fc, fc_partition, fr, fc, fc_bias)?,
        })
    }

    /// 34x60 LSTM block and a 32x1 read-out column on the 128x64 array.
    pub fn airline() -> Self {
        Self::new(
            &NetworkSpec::airline(),
            Partition::new(0, 34, 0, 60),
            Partition::new(0, 32, 60, 1),
            128,
            64,
        )
        .expect("airline layout fits the reference array")
    }

    /// 128x56 LSTM block and a 28x8 read-out block on the 128x64 array.
    pub fn gait() -> Self {
        Self::new(
            &NetworkSpec::gait(),
            Partition::new(0, 128, 0, 56),
            Partition::new(0, 28, 56, 8),
            128,
            64,
        )
        .expect("gait layout fits the reference array")
    }

    pub fn layer(&self, layer: LayerId) -> &LayerMapping {
        match layer {
            LayerId::Lstm => &self.lstm,
            LayerId::Fc => &self.fc,
        }
    }

    pub fn layers(&self) -> [&LayerMapping; 2] {
        [&self.lstm, &self.fc]
    }
}

/// A network whose matrix products run on a simulated crossbar.
#[derive(Debug, Clone)]
pub struct CrossbarNetwork {
    pub crossbar: Crossbar,
    pub mapping: NetworkMapping,
    pub codec: Codec,
}

impl CrossbarNetwork {
    pub fn new(crossbar: Crossbar, mapping: NetworkMapping, codec: Codec) -> Result<Self> {
        for m in mapping.layers() {
            if !m.partition.fits(crossbar.rows(), crossbar.cols()) {
                return Err(Error::PartitionOutOfBounds {
                    partition: m.partition,
                    rows: crossbar.rows(),
                    cols: crossbar.cols(),
                });
            }
        }
        Ok(Self {
            crossbar,
            mapping,
            codec,
        })
    }

    /// Weights currently represented by the conductances.
    pub fn decode_layer(&self, layer: LayerId) -> Result<Array2<f64>> {
        let g = self
            .crossbar
            .read_conductances(&self.mapping.layer(layer).partition)?;
        self.codec.weights.decode_interleaved(&g)
    }

    pub fn decode_params(&self) -> Result<ParamSet> {
        Ok(ParamSet {
            lstm: self.decode_layer(LayerId::Lstm)?,
            fc: self.decode_layer(LayerId::Fc)?,
        })
    }

    /// Ex-situ load of a full parameter set with write-and-verify.
    pub fn load_params(
        &mut self,
        params: &ParamSet,
        tolerance: f64,
        max_iters: u32,
    ) -> Result<[ProgramReport; 2]> {
        let mut load = |layer: LayerId| -> Result<ProgramReport> {
            let m = *self.mapping.layer(layer);
            let w = params.layer(layer);
            check_len("loaded rows", m.logical_rows, w.nrows())?;
            check_len("loaded cols", m.logical_cols, w.ncols())?;
            let targets = self.codec.weights.encode_weights(w).interleaved();
            self.crossbar
                .program_write_verify(&m.partition, &targets, tolerance, max_iters)
        };
        Ok([load(LayerId::Lstm)?, load(LayerId::Fc)?])
    }
}

impl MatVecEngine for CrossbarNetwork {
    fn forward(&mut self, layer: LayerId, input: &[f64]) -> Result<Vec<f64>> {
        let m = *self.mapping.layer(layer);
        check_len("layer input", m.logical_rows, input.len())?;
        let volts = self.codec.voltages.row_voltages(input)?;
        let currents = self.crossbar.read_mvm(&m.partition, &volts)?;
        Ok(self
            .codec
            .voltages
            .currents_to_values(&currents, &self.codec.weights))
    }

    /// Deltas are scaled by their largest magnitude so the column voltages
    /// stay within the read window, and the scale is restored afterwards.
    fn backward(&mut self, layer: LayerId, delta: &[f64]) -> Result<Vec<f64>> {
        let m = *self.mapping.layer(layer);
        check_len("layer delta", m.logical_cols, delta.len())?;
        if delta.iter().any(|d| !d.is_finite()) {
            return Err(Error::NonFinite("backward delta"));
        }
        let scale = delta.iter().fold(0.0f64, |a, d| a.max(d.abs()));
        if scale == 0.0 {
            return Ok(vec![0.0; m.logical_rows]);
        }
        let vfs = self.codec.voltages.v_full_scale;
        let volts: Vec<f64> = delta.iter().map(|d| vfs * (d / scale)).collect();
        let currents = self.crossbar.read_mvm_transposed(&m.partition, &volts)?;
        let k = scale / (self.codec.weights.g_per_w * vfs);
        Ok(fold_pair_currents(&currents)
            .into_iter()
            .map(|i| i * k)
            .collect())
    }
}

/// Element-wise relative agreement helper used by tests and diagnostics.
pub fn max_rel_diff(a: &Array2<f64>, b: &Array2<f64>, floor: f64) -> f64 {
    Zip::from(a).and(b).fold(0.0f64, |m, &x, &y| {
        m.max((x - y).abs() / x.abs().max(y.abs()).max(floor))
    })
}
