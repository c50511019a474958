//! Losses, backpropagation through time, optimizers and the in-situ update
//! that turns weight updates into programming pulses.

use std::fmt::Write as _;

use ndarray::{Array2, Zip};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::device::ProgramReport;
use crate::error::{check_len, Error, Result};
use crate::network::{
    sequence_forward, Activation, CrossbarNetwork, LayerId, LstmCache, MatVecEngine, NetworkSpec,
    ParamSet,
};

/// Accumulated parameter gradients, shaped like the parameters.
pub type GradientSet = ParamSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    /// Sigmoid outputs, squared error at every step.
    Regression,
    /// Softmax outputs, cross-entropy at the last step.
    Classification,
}

impl Task {
    pub fn for_activation(a: Activation) -> Self {
        match a {
            Activation::Sigmoid => Task::Regression,
            Activation::Softmax => Task::Classification,
        }
    }
}

/// `sum_t 0.5 * |y_t - target_t|^2 / T` for one sequence.
pub fn loss_mse_sequence(outputs: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<f64> {
    check_len("mse targets", outputs.len(), targets.len())?;
    if outputs.is_empty() {
        return Ok(0.0);
    }
    let t_len = outputs.len() as f64;
    let mut total = 0.0;
    for (y, target) in outputs.iter().zip(targets) {
        check_len("mse step width", y.len(), target.len())?;
        total += 0.5
            * y.iter()
                .zip(target)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
    }
    Ok(total / t_len)
}

/// `-sum_c target_c * ln(y_c)` on the last-step distribution.
pub fn loss_crossentropy_final(y_last: &[f64], target_onehot: &[f64]) -> Result<f64> {
    check_len("cross-entropy target", y_last.len(), target_onehot.len())?;
    let total: f64 = y_last.iter().sum();
    if y_last.iter().any(|&p| !(p > 0.0) || !p.is_finite()) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::NotAProbability(format!(
            "entries must be positive and sum to 1 (sum = {total})"
        )));
    }
    Ok(-y_last
        .iter()
        .zip(target_onehot)
        .filter(|(_, &t)| t != 0.0)
        .map(|(p, t)| t * p.ln())
        .sum::<f64>())
}

pub fn one_hot(class: usize, n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[class] = 1.0;
    v
}

/// Loss gradient with respect to the read-out pre-activation at step `t`
/// (0-based) of a `len`-step sequence.
pub fn output_delta(task: Task, y: &[f64], target: &[f64], t: usize, len: usize) -> Vec<f64> {
    match task {
        // Gradient of the time-summed error; the reported loss divides by T.
        Task::Regression => y
            .iter()
            .zip(target)
            .map(|(&y, &d)| (y - d) * y * (1.0 - y))
            .collect(),
        Task::Classification if t + 1 == len => y.iter().zip(target).map(|(y, d)| y - d).collect(),
        Task::Classification => vec![0.0; y.len()],
    }
}

fn add_outer(acc: &mut Array2<f64>, rows: &[f64], cols: &[f64]) {
    for (mut r, &u) in acc.rows_mut().into_iter().zip(rows) {
        if u == 0.0 {
            continue;
        }
        for (a, &d) in r.iter_mut().zip(cols) {
            *a += u * d;
        }
    }
}

/// Gradients of one sequence. The two transposed products (read-out delta
/// back into `h`, and gate deltas back into `[x; h]`) go through the engine,
/// so on a crossbar they are transposed reads.
pub fn bptt<E: MatVecEngine + ?Sized>(
    spec: &NetworkSpec,
    cache: &LstmCache,
    output_deltas: &[Vec<f64>],
    engine: &mut E,
) -> Result<GradientSet> {
    if cache.len() != output_deltas.len() {
        return Err(Error::IncompleteCache(format!(
            "{} cached steps for {} output deltas",
            cache.len(),
            output_deltas.len()
        )));
    }
    let hid = spec.lstm.hidden_dim;
    let n_in = spec.lstm.input_dim;
    let mut grad = GradientSet::zeros(spec);
    let mut dh_next = vec![0.0; hid];
    let mut dc_carry = vec![0.0; hid];
    let mut dz = vec![0.0; 4 * hid];

    for (t, (step, dy)) in cache.steps.iter().zip(output_deltas).enumerate().rev() {
        if step.h.len() != hid || step.x.len() != n_in || step.y.len() != spec.fc.output_dim {
            return Err(Error::IncompleteCache(format!(
                "step {t} is missing activations"
            )));
        }
        check_len("output delta", spec.fc.output_dim, dy.len())?;

        let mut fc_in = step.h.clone();
        if spec.fc.has_bias {
            fc_in.push(1.0);
        }
        add_outer(&mut grad.fc, &fc_in, dy);

        let back = engine.backward(LayerId::Fc, dy)?;
        let dh: Vec<f64> = (0..hid).map(|k| back[k] + dh_next[k]).collect();

        for k in 0..hid {
            let (a, i, f, o, c) = (step.a[k], step.i[k], step.f[k], step.o[k], step.c[k]);
            let d_o = dh[k] * c * o * (1.0 - o);
            let dc = dh[k] * o * (1.0 - c * c) + dc_carry[k];
            let d_a = dc * i * (1.0 - a * a);
            let d_i = dc * a * i * (1.0 - i);
            let d_f = dc * step.c_hat_prev[k] * f * (1.0 - f);
            dc_carry[k] = dc * f;
            dz[k] = d_a;
            dz[hid + k] = d_i;
            dz[2 * hid + k] = d_f;
            dz[3 * hid + k] = d_o;
        }

        let mut lstm_in = Vec::with_capacity(spec.lstm.param_rows());
        lstm_in.extend_from_slice(&step.x);
        lstm_in.extend_from_slice(&step.h_prev);
        if spec.lstm.has_bias {
            lstm_in.push(1.0);
        }
        add_outer(&mut grad.lstm, &lstm_in, &dz);

        let back = engine.backward(LayerId::Lstm, &dz)?;
        dh_next.copy_from_slice(&back[spec.lstm.recurrent_rows()]);
    }
    Ok(grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum OptimizerConfig {
    Sgdm {
        learning_rate: f64,
        momentum: f64,
    },
    Rmsprop {
        learning_rate: f64,
        #[serde(default)]
        momentum: f64,
        decay: f64,
        epsilon: f64,
    },
}

impl OptimizerConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let (lr, momentum) = match *self {
            OptimizerConfig::Sgdm {
                learning_rate,
                momentum,
            } => (learning_rate, momentum),
            OptimizerConfig::Rmsprop {
                learning_rate,
                momentum,
                decay,
                epsilon,
            } => {
                if !(0.0..1.0).contains(&decay) {
                    out.push(format!("decay must lie in [0, 1), got {decay}"));
                }
                if !(epsilon > 0.0) {
                    out.push(format!("epsilon must be positive, got {epsilon}"));
                }
                (learning_rate, momentum)
            }
        };
        if !(lr > 0.0 && lr.is_finite()) {
            out.push(format!("learning rate must be positive, got {lr}"));
        }
        if !(0.0..1.0).contains(&momentum) {
            out.push(format!("momentum must lie in [0, 1), got {momentum}"));
        }
        out
    }
}

/// Velocity and mean-square accumulators for one parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: OptimizerConfig,
    /// Previous step's velocity; the applied update is its negation.
    pub velocity: ParamSet,
    pub mean_square: ParamSet,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig, spec: &NetworkSpec) -> Self {
        Self {
            config,
            velocity: ParamSet::zeros(spec),
            mean_square: ParamSet::zeros(spec),
        }
    }

    pub fn step(&mut self, grad: &GradientSet) -> Result<ParamSet> {
        match self.config {
            OptimizerConfig::Sgdm { .. } => self.sgdm_step(grad),
            OptimizerConfig::Rmsprop { .. } => self.rmsprop_step(grad),
        }
    }

    /// `v = momentum * v + lr * grad`, update `-v`.
    pub fn sgdm_step(&mut self, grad: &GradientSet) -> Result<ParamSet> {
        let (lr, momentum) = match self.config {
            OptimizerConfig::Sgdm {
                learning_rate,
                momentum,
            } => (learning_rate, momentum),
            OptimizerConfig::Rmsprop {
                learning_rate,
                momentum,
                ..
            } => (learning_rate, momentum),
        };
        self.check(grad)?;
        let mut delta = grad.clone();
        for layer in [LayerId::Lstm, LayerId::Fc] {
            Zip::from(self.velocity.layer_mut(layer))
                .and(delta.layer_mut(layer))
                .for_each(|v, d| {
                    *v = momentum * *v + lr * *d;
                    *d = -*v;
                });
        }
        Ok(delta)
    }

    /// `ms = decay * ms + (1 - decay) * grad^2`,
    /// `v = momentum * v + lr * grad / (sqrt(ms) + eps)`, update `-v`.
    pub fn rmsprop_step(&mut self, grad: &GradientSet) -> Result<ParamSet> {
        let OptimizerConfig::Rmsprop {
            learning_rate: lr,
            momentum,
            decay,
            epsilon,
        } = self.config
        else {
            return Err(Error::Config(
                "rmsprop step on a non-rmsprop optimizer".into(),
            ));
        };
        self.check(grad)?;
        let mut delta = grad.clone();
        for layer in [LayerId::Lstm, LayerId::Fc] {
            let (ms, v) = (&mut self.mean_square, &mut self.velocity);
            Zip::from(ms.layer_mut(layer))
                .and(v.layer_mut(layer))
                .and(delta.layer_mut(layer))
                .for_each(|ms, v, d| {
                    let g = *d;
                    *ms = decay * *ms + (1.0 - decay) * g * g;
                    *v = momentum * *v + lr * g / (ms.sqrt() + epsilon);
                    *d = -*v;
                });
        }
        Ok(delta)
    }

    fn check(&self, grad: &GradientSet) -> Result<()> {
        if !grad.same_shape(&self.velocity) {
            return Err(Error::DimensionMismatch {
                context: "optimizer gradient",
                expected: self.velocity.lstm.len() + self.velocity.fc.len(),
                actual: grad.lstm.len() + grad.fc.len(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateReport {
    pub lstm: ProgramReport,
    pub fc: ProgramReport,
}

impl UpdateReport {
    pub fn clamped_cells(&self) -> usize {
        self.lstm.clamped_cells() + self.fc.clamped_cells()
    }

    pub fn programmed_cells(&self) -> usize {
        self.lstm.programmed_cells() + self.fc.programmed_cells()
    }
}

/// Apply a weight update to the crossbar: decode the present weights, add
/// the update, re-encode and two-pulse program every pair whose weight
/// changes.
pub fn insitu_update(net: &mut CrossbarNetwork, delta: &ParamSet) -> Result<UpdateReport> {
    let mut program = |layer: LayerId| -> Result<ProgramReport> {
        let m = *net.mapping.layer(layer);
        let dw = delta.layer(layer);
        check_len("update rows", m.logical_rows, dw.nrows())?;
        check_len("update cols", m.logical_cols, dw.ncols())?;
        let mut w = net.decode_layer(layer)?;
        w += dw;
        let targets = net.codec.weights.encode_weights(&w).interleaved();
        let mask = Array2::from_shape_fn(m.shape(), |(r, c)| dw[(r / 2, c)] != 0.0);
        net.crossbar
            .program_two_pulse(&m.partition, &targets, &mask)
    };
    Ok(UpdateReport {
        lstm: program(LayerId::Lstm)?,
        fc: program(LayerId::Fc)?,
    })
}

/// A model that can execute the network and absorb weight updates.
pub trait Trainable: MatVecEngine {
    fn apply_update(&mut self, delta: &ParamSet) -> Result<()>;
}

impl Trainable for ParamSet {
    fn apply_update(&mut self, delta: &ParamSet) -> Result<()> {
        if !self.same_shape(delta) {
            return Err(Error::DimensionMismatch {
                context: "parameter update",
                expected: self.lstm.len() + self.fc.len(),
                actual: delta.lstm.len() + delta.fc.len(),
            });
        }
        self.add_assign(delta);
        Ok(())
    }
}

impl Trainable for CrossbarNetwork {
    fn apply_update(&mut self, delta: &ParamSet) -> Result<()> {
        insitu_update(self, delta).map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    /// One target vector per step.
    Sequence(Vec<Vec<f64>>),
    /// Class label checked at the last step.
    Class(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub inputs: Vec<Vec<f64>>,
    pub target: Target,
}

/// Loss and per-step output deltas of one sample.
pub fn sample_loss_and_deltas(
    spec: &NetworkSpec,
    outputs: &[Vec<f64>],
    target: &Target,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let len = outputs.len();
    match (Task::for_activation(spec.fc.activation), target) {
        (Task::Regression, Target::Sequence(targets)) => {
            let loss = loss_mse_sequence(outputs, targets)?;
            let deltas = outputs
                .iter()
                .zip(targets)
                .enumerate()
                .map(|(t, (y, d))| output_delta(Task::Regression, y, d, t, len))
                .collect();
            Ok((loss, deltas))
        }
        (Task::Classification, &Target::Class(c)) => {
            let n = spec.fc.output_dim;
            if c >= n {
                return Err(Error::Data(format!(
                    "label {c} out of range for {n} classes"
                )));
            }
            let onehot = one_hot(c, n);
            let loss = loss_crossentropy_final(&outputs[len - 1], &onehot)?;
            let deltas = outputs
                .iter()
                .enumerate()
                .map(|(t, y)| output_delta(Task::Classification, y, &onehot, t, len))
                .collect();
            Ok((loss, deltas))
        }
        _ => Err(Error::Config(
            "sample target does not match the read-out activation".into(),
        )),
    }
}

/// Forward, loss and BPTT over a batch; gradients are summed over samples.
pub fn batch_gradient<E: MatVecEngine + ?Sized>(
    spec: &NetworkSpec,
    engine: &mut E,
    batch: &[&Sample],
) -> Result<(f64, GradientSet)> {
    let mut grad = GradientSet::zeros(spec);
    let mut loss = 0.0;
    for sample in batch {
        let (outputs, cache) = sequence_forward(spec, engine, &sample.inputs)?;
        let (l, deltas) = sample_loss_and_deltas(spec, &outputs, &sample.target)?;
        let g = bptt(spec, &cache, &deltas, engine)?;
        grad.add_assign(&g);
        loss += l;
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Samples per update; 0 means the whole training set.
    pub batch_size: usize,
    pub shuffle: bool,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchRecord {
    pub epoch: usize,
    pub batch: usize,
    /// Mean loss per sample in the batch.
    pub loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub metric: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingLog {
    pub batches: Vec<BatchRecord>,
    pub epochs: Vec<EpochRecord>,
}

const LOG_HEADER: &str = "record,epoch,batch,value";

impl TrainingLog {
    pub fn is_empty(&self) -> bool {
        self.batches.is_empty() && self.epochs.is_empty()
    }

    /// Mean batch loss of an epoch (1-based).
    pub fn epoch_loss(&self, epoch: usize) -> Option<f64> {
        let losses: Vec<f64> = self
            .batches
            .iter()
            .filter(|b| b.epoch == epoch)
            .map(|b| b.loss)
            .collect();
        (!losses.is_empty()).then(|| losses.iter().sum::<f64>() / losses.len() as f64)
    }

    /// CSV with a fixed column order; batch rows precede the epoch's metric row.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{LOG_HEADER}");
        let mut b = self.batches.iter().peekable();
        for e in &self.epochs {
            while let Some(r) = b.next_if(|r| r.epoch <= e.epoch) {
                let _ = writeln!(s, "batch_loss,{},{},{:.12e}", r.epoch, r.batch, r.loss);
            }
            let _ = writeln!(s, "test_metric,{},,{:.12e}", e.epoch, e.metric);
        }
        for r in b {
            let _ = writeln!(s, "batch_loss,{},{},{:.12e}", r.epoch, r.batch, r.loss);
        }
        s
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(LOG_HEADER) {
            return Err(Error::Format("training log header".into()));
        }
        let mut log = TrainingLog::default();
        let bad = |l: &str| Error::Format(format!("training log line `{l}`"));
        for line in lines.filter(|l| !l.is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(bad(line));
            }
            let epoch: usize = f[1].parse().map_err(|_| bad(line))?;
            let value: f64 = f[3].parse().map_err(|_| bad(line))?;
            match f[0] {
                "batch_loss" => log.batches.push(BatchRecord {
                    epoch,
                    batch: f[2].parse().map_err(|_| bad(line))?,
                    loss: value,
                }),
                "test_metric" => log.epochs.push(EpochRecord {
                    epoch,
                    metric: value,
                }),
                _ => return Err(bad(line)),
            }
        }
        Ok(log)
    }
}

/// Mini-batch training. After every epoch `evaluate` produces the test metric.
pub fn train_loop<M, F>(
    config: &TrainConfig,
    spec: &NetworkSpec,
    model: &mut M,
    train: &[Sample],
    mut evaluate: F,
) -> Result<TrainingLog>
where
    M: Trainable + ?Sized,
    F: FnMut(&NetworkSpec, &mut M) -> Result<f64>,
{
    if let Some(v) = config.optimizer.violations().first() {
        return Err(Error::Config(v.clone()));
    }
    let mut log = TrainingLog::default();
    if config.epochs == 0 {
        return Ok(log);
    }
    if train.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    let task = Task::for_activation(spec.fc.activation);
    let consistent = train.iter().all(|s| {
        matches!(
            (task, &s.target),
            (Task::Regression, Target::Sequence(_)) | (Task::Classification, Target::Class(_))
        )
    });
    if !consistent {
        return Err(Error::Config(
            "training targets do not match the read-out activation".into(),
        ));
    }

    let batch_size = if config.batch_size == 0 {
        train.len()
    } else {
        config.batch_size
    };
    let mut optimizer = OptimizerState::new(config.optimizer, spec);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=config.epochs {
        if config.shuffle {
            order.shuffle(&mut rng);
        }
        for (b, chunk) in order.chunks(batch_size).enumerate() {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train[i]).collect();
            let (loss, grad) = batch_gradient(spec, model, &batch)?;
            if !grad.is_finite() {
                return Err(Error::NonFinite("gradient"));
            }
            let delta = optimizer.step(&grad)?;
            model.apply_update(&delta)?;
            log.batches.push(BatchRecord {
                epoch,
                batch: b + 1,
                loss: loss / batch.len() as f64,
            });
        }
        let metric = evaluate(spec, model)?;
        log.epochs.push(EpochRecord { epoch, metric });
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{Codec, VoltageCodec, WeightCodec};
    use crate::device::{Crossbar, DeviceParams, NoiseModel};
    use crate::network::{LstmLayerSpec, NetworkMapping};
    use rand::Rng;

    fn sgdm(lr: f64, momentum: f64) -> OptimizerConfig {
        OptimizerConfig::Sgdm {
            learning_rate: lr,
            momentum,
        }
    }

    fn gait_rmsprop() -> OptimizerConfig {
        OptimizerConfig::Rmsprop {
            learning_rate: 0.01,
            momentum: 0.0,
            decay: 0.9,
            epsilon: 1e-8,
        }
    }

    fn tiny_spec() -> NetworkSpec {
        NetworkSpec::new(
            LstmLayerSpec {
                input_dim: 1,
                hidden_dim: 1,
                has_bias: false,
            },
            crate::network::FcLayerSpec {
                input_dim: 1,
                output_dim: 1,
                has_bias: false,
                activation: Activation::Sigmoid,
            },
        )
        .unwrap()
    }

    fn filled(spec: &NetworkSpec, v: f64) -> ParamSet {
        let mut p = ParamSet::zeros(spec);
        p.lstm.fill(v);
        p.fc.fill(v);
        p
    }

    #[test]
    fn mse_examples() {
        assert_eq!(loss_mse_sequence(&[vec![0.3]], &[vec![0.3]]).unwrap(), 0.0);
        assert_eq!(loss_mse_sequence(&[vec![1.0]], &[vec![0.0]]).unwrap(), 0.5);
        assert!(loss_mse_sequence(&[vec![1.0]], &[]).is_err());
    }

    #[test]
    fn mse_matches_naive_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ys: Vec<Vec<f64>> = (0..7).map(|_| vec![rng.random(), rng.random()]).collect();
        let ts: Vec<Vec<f64>> = (0..7).map(|_| vec![rng.random(), rng.random()]).collect();
        let mut naive = 0.0;
        for t in 0..7 {
            for k in 0..2 {
                naive += 0.5 * (ys[t][k] - ts[t][k]).powi(2) / 7.0;
            }
        }
        assert!((loss_mse_sequence(&ys, &ts).unwrap() - naive).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_examples() {
        assert_eq!(
            loss_crossentropy_final(&[1.0, 0.0 + f64::MIN_POSITIVE], &[1.0, 0.0]).unwrap(),
            0.0
        );
        let u = vec![0.125; 8];
        let l = loss_crossentropy_final(&u, &one_hot(3, 8)).unwrap();
        assert!((l - 8f64.ln()).abs() < 1e-15);
        assert!((l - 2.0794).abs() < 1e-4);
        assert!(loss_crossentropy_final(&[0.5, 0.6], &[1.0, 0.0]).is_err());
        assert!(loss_crossentropy_final(&[1.0, 0.0], &[1.0, 0.0]).is_err());
        let p = [0.2, 0.5, 0.3];
        let l = loss_crossentropy_final(&p, &one_hot(1, 3)).unwrap();
        assert_eq!(l, -(0.5f64.ln()));
    }

    #[test]
    fn output_delta_examples() {
        assert_eq!(
            output_delta(Task::Regression, &[0.4], &[0.4], 0, 1),
            vec![0.0]
        );
        assert_eq!(
            output_delta(Task::Regression, &[0.5], &[0.0], 0, 1),
            vec![0.125]
        );
        assert_eq!(
            output_delta(Task::Regression, &[0.5], &[0.0], 3, 5),
            vec![0.125]
        );
        let y = [0.2, 0.8];
        let d = [0.0, 1.0];
        assert_eq!(
            output_delta(Task::Classification, &y, &d, 0, 3),
            vec![0.0, 0.0]
        );
        assert_eq!(
            output_delta(Task::Classification, &y, &d, 1, 3),
            vec![0.0, 0.0]
        );
        let last = output_delta(Task::Classification, &y, &d, 2, 3);
        assert!((last[0] - 0.2).abs() < 1e-15 && (last[1] + 0.2).abs() < 1e-15);
    }

    #[test]
    fn zero_output_deltas_give_zero_gradients() {
        let spec = NetworkSpec::airline();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = ParamSet::uniform(&spec, 0.5, &mut rng);
        let xs = vec![vec![0.2], vec![0.5], vec![0.9]];
        let (_, cache) = sequence_forward(&spec, &mut p, &xs).unwrap();
        let g = bptt(&spec, &cache, &vec![vec![0.0]; 3], &mut p).unwrap();
        assert_eq!(g.max_abs(), 0.0);
        assert!(matches!(
            bptt(&spec, &cache, &vec![vec![0.0]; 2], &mut p),
            Err(Error::IncompleteCache(_))
        ));
    }

    // Single unit, T = 1, no bias: chain rule written out by hand.
    #[test]
    fn scalar_chain_rule() {
        let spec = tiny_spec();
        let mut p = ParamSet::zeros(&spec);
        let (wa, wi, wf, wo, wfc) = (0.7, -0.3, 0.4, 0.9, 1.3);
        p.lstm[(0, 0)] = wa;
        p.lstm[(0, 1)] = wi;
        p.lstm[(0, 2)] = wf;
        p.lstm[(0, 3)] = wo;
        p.fc[(0, 0)] = wfc;
        let x = 0.8;
        let target = 0.1;
        let (ys, cache) = sequence_forward(&spec, &mut p, &[vec![x]]).unwrap();
        let (_, deltas) =
            sample_loss_and_deltas(&spec, &ys, &Target::Sequence(vec![vec![target]])).unwrap();
        let g = bptt(&spec, &cache, &deltas, &mut p).unwrap();

        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let a = (wa * x).tanh();
        let i = sig(wi * x);
        let o = sig(wo * x);
        let c_hat = i * a; // previous cell state is zero
        let c = c_hat.tanh();
        let h = o * c;
        let y = sig(wfc * h);
        let dyhat = (y - target) * y * (1.0 - y);
        let dh = wfc * dyhat;
        let dc = dh * o * (1.0 - c * c);
        assert!((g.fc[(0, 0)] - dyhat * h).abs() < 1e-15);
        assert!((g.lstm[(0, 0)] - dc * i * (1.0 - a * a) * x).abs() < 1e-15);
        assert!((g.lstm[(0, 1)] - dc * a * i * (1.0 - i) * x).abs() < 1e-15);
        assert_eq!(g.lstm[(0, 2)], 0.0);
        assert!((g.lstm[(0, 3)] - dh * c * o * (1.0 - o) * x).abs() < 1e-15);
        // Recurrent rows see h_prev = 0.
        assert_eq!(g.lstm.row(1).iter().map(|v| v.abs()).sum::<f64>(), 0.0);
    }

    #[test]
    fn batch_gradient_is_sum_of_sample_gradients() {
        let spec = NetworkSpec::gait();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = ParamSet::uniform(&spec, 0.2, &mut rng);
        let samples: Vec<Sample> = (0..3)
            .map(|k| Sample {
                inputs: (0..4)
                    .map(|_| (0..50).map(|_| rng.random_range(0.0..1.0)).collect())
                    .collect(),
                target: Target::Class(k),
            })
            .collect();
        let refs: Vec<&Sample> = samples.iter().collect();
        let (_, total) = batch_gradient(&spec, &mut p, &refs).unwrap();
        let mut sum = ParamSet::zeros(&spec);
        for s in &samples {
            let (_, g) = batch_gradient(&spec, &mut p, &[s]).unwrap();
            sum.add_assign(&g);
        }
        assert_eq!(total, sum);
    }

    #[test]
    fn sgdm_examples() {
        let spec = tiny_spec();
        let mut st = OptimizerState::new(sgdm(0.01, 0.9), &spec);
        let g = filled(&spec, 1.0);
        let d1 = st.sgdm_step(&g).unwrap();
        assert!(d1.iter().all(|&v| v == -0.01));
        let d2 = st.sgdm_step(&g).unwrap();
        assert!(d2.iter().all(|&v| (v + 0.019).abs() < 1e-12));

        let mut plain = OptimizerState::new(sgdm(0.01, 0.0), &spec);
        let g = filled(&spec, 3.0);
        for _ in 0..3 {
            let d = plain.step(&g).unwrap();
            assert!(d.iter().all(|&v| v == -0.01 * 3.0));
        }
    }

    #[test]
    fn rmsprop_examples() {
        let spec = tiny_spec();
        let mut st = OptimizerState::new(gait_rmsprop(), &spec);
        let d = st.rmsprop_step(&filled(&spec, 1.0)).unwrap();
        let want = -0.01 / (0.1f64.sqrt() + 1e-8);
        assert!(d.iter().all(|&v| (v - want).abs() < 1e-12));
        assert!((want + 0.031623).abs() < 1e-6);
        assert!(st.mean_square.iter().all(|&m| (m - 0.1).abs() < 1e-15));

        let mut st = OptimizerState::new(gait_rmsprop(), &spec);
        let d = st.rmsprop_step(&ParamSet::zeros(&spec)).unwrap();
        assert_eq!(d.max_abs(), 0.0);

        let mut sg = OptimizerState::new(sgdm(0.01, 0.9), &spec);
        assert!(sg.rmsprop_step(&filled(&spec, 1.0)).is_err());
    }

    #[test]
    fn rmsprop_is_separable() {
        let spec = NetworkSpec::airline();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = ParamSet::uniform(&spec, 2.0, &mut rng);
        let mut st = OptimizerState::new(gait_rmsprop(), &spec);
        let d = st.rmsprop_step(&g).unwrap();
        for (&dv, &gv) in d.iter().zip(g.iter()) {
            let ms: f64 = 0.9 * 0.0 + 0.1 * gv * gv;
            assert!((dv + 0.01 * gv / (ms.sqrt() + 1e-8)).abs() < 1e-15);
        }
    }

    #[test]
    fn optimizer_config_checks() {
        assert!(sgdm(0.01, 0.9).violations().is_empty());
        assert!(gait_rmsprop().violations().is_empty());
        assert_eq!(sgdm(0.0, 1.0).violations().len(), 2);
    }

    fn airline_net() -> CrossbarNetwork {
        let params = DeviceParams::default();
        let mut xbar = Crossbar::reference(params, NoiseModel::ideal(), 0).unwrap();
        xbar.init_array();
        let codec = Codec {
            weights: WeightCodec::new(1e-4, params.g_max()).unwrap(),
            voltages: VoltageCodec::new(0.2, -1.0, 1.0, params.v_read).unwrap(),
        };
        CrossbarNetwork::new(xbar, NetworkMapping::airline(), codec).unwrap()
    }

    #[test]
    fn insitu_zero_update_leaves_conductances() {
        let mut net = airline_net();
        let spec = NetworkSpec::airline();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        net.load_params(&ParamSet::uniform(&spec, 0.3, &mut rng), 1e-12, 2)
            .unwrap();
        let before = net.crossbar.snapshot();
        let r = insitu_update(&mut net, &ParamSet::zeros(&spec)).unwrap();
        assert_eq!(r.programmed_cells(), 0);
        assert_eq!(before, net.crossbar.snapshot());
    }

    #[test]
    fn insitu_single_weight() {
        let mut net = airline_net();
        let spec = NetworkSpec::airline();
        let mut dw = ParamSet::zeros(&spec);
        dw.lstm[(2, 5)] = 0.2;
        let r = insitu_update(&mut net, &dw).unwrap();
        assert_eq!(r.lstm.programmed_cells(), 2);
        let g = net
            .crossbar
            .read_conductances(&net.mapping.lstm.partition)
            .unwrap();
        assert!((g[(4, 5)] - 2e-5).abs() < 1e-20);
        assert_eq!(g[(5, 5)], 0.0);
        let w = net.decode_params().unwrap();
        assert!((w.lstm[(2, 5)] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn insitu_updates_accumulate() {
        let mut net = airline_net();
        let spec = NetworkSpec::airline();
        let mut dw = ParamSet::zeros(&spec);
        dw.fc[(3, 0)] = 0.01;
        dw.lstm[(0, 7)] = -0.02;
        for _ in 0..20 {
            insitu_update(&mut net, &dw).unwrap();
        }
        let w = net.decode_params().unwrap();
        assert!((w.fc[(3, 0)] - 0.2).abs() < 1e-12);
        assert!((w.lstm[(0, 7)] + 0.4).abs() < 1e-12);
        // Past the representable range the weight saturates.
        for _ in 0..20 {
            insitu_update(&mut net, &dw).unwrap();
        }
        let w = net.decode_params().unwrap();
        assert!((w.lstm[(0, 7)] + net.codec.weights.w_max()).abs() < 1e-12);
    }

    #[test]
    fn insitu_update_moves_decoded_weights_by_delta() {
        let mut net = airline_net();
        let spec = NetworkSpec::airline();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        net.load_params(&ParamSet::uniform(&spec, 0.3, &mut rng), 1e-12, 2)
            .unwrap();
        let before = net.decode_params().unwrap();
        let dw = ParamSet::uniform(&spec, 0.2, &mut rng);
        let r = insitu_update(&mut net, &dw).unwrap();
        assert_eq!(r.clamped_cells(), 0);
        let after = net.decode_params().unwrap();
        for ((a, b), d) in after.iter().zip(before.iter()).zip(dw.iter()) {
            assert!((a - b - d).abs() < 1e-12);
        }
    }

    fn toy_regression() -> Vec<Sample> {
        let xs: Vec<f64> = (0..12)
            .map(|t| 0.5 + 0.3 * (t as f64 * 0.7).sin())
            .collect();
        vec![Sample {
            inputs: xs[..11].iter().map(|&v| vec![v]).collect(),
            target: Target::Sequence(xs[1..].iter().map(|&v| vec![v]).collect()),
        }]
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let mut net = airline_net();
        let before = net.crossbar.snapshot();
        let cfg = TrainConfig {
            epochs: 0,
            batch_size: 0,
            shuffle: false,
            seed: 1,
            optimizer: sgdm(0.01, 0.9),
        };
        let log = train_loop(
            &cfg,
            &NetworkSpec::airline(),
            &mut net,
            &toy_regression(),
            |_, _| Ok(0.0),
        )
        .unwrap();
        assert!(log.is_empty());
        assert_eq!(before, net.crossbar.snapshot());
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let spec = NetworkSpec::airline();
        let cfg = TrainConfig {
            epochs: 60,
            batch_size: 0,
            shuffle: false,
            seed: 1,
            optimizer: sgdm(0.1, 0.9),
        };
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(12);
            let mut p = ParamSet::uniform(&spec, 0.3, &mut rng);
            train_loop(&cfg, &spec, &mut p, &toy_regression(), |_, _| Ok(1.0)).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
        assert!(a.epoch_loss(60).unwrap() < a.epoch_loss(1).unwrap());
        assert_eq!(a.epochs.len(), 60);
    }

    #[test]
    fn mismatched_targets_rejected() {
        let spec = NetworkSpec::airline();
        let mut p = ParamSet::zeros(&spec);
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 1,
            shuffle: false,
            seed: 0,
            optimizer: sgdm(0.01, 0.9),
        };
        let bad = vec![Sample {
            inputs: vec![vec![0.1]],
            target: Target::Class(0),
        }];
        assert!(train_loop(&cfg, &spec, &mut p, &bad, |_, _| Ok(0.0)).is_err());
    }

    #[test]
    fn log_csv_round_trip() {
        let log = TrainingLog {
            batches: vec![
                BatchRecord {
                    epoch: 1,
                    batch: 1,
                    loss: 0.25,
                },
                BatchRecord {
                    epoch: 1,
                    batch: 2,
                    loss: 0.125,
                },
                BatchRecord {
                    epoch: 2,
                    batch: 1,
                    loss: 0.0625,
                },
            ],
            epochs: vec![
                EpochRecord {
                    epoch: 1,
                    metric: 0.5,
                },
                EpochRecord {
                    epoch: 2,
                    metric: 0.75,
                },
            ],
        };
        let text = log.to_csv();
        assert!(text.starts_with("record,epoch,batch,value\nbatch_loss,1,1,"));
        assert_eq!(TrainingLog::parse_csv(&text).unwrap(), log);
        assert_eq!(log.epoch_loss(1), Some(0.1875));
    }
}
