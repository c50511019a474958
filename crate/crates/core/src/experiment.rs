//! End-to-end runs of the two reference experiments and their artifacts.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Task};
use crate::data::airline::{load_airline, make_regression_pairs, AirlineSeries, RegressionData};
use crate::data::gait::GaitDataset;
use crate::data::synth::synth_gait_dataset;
use crate::device::{Crossbar, CrossbarSnapshot};
use crate::error::{Error, Result};
use crate::mapfile::MatrixMap;
use crate::network::{
    classify_final_step, sequence_forward, CrossbarNetwork, LayerId, MatVecEngine, NetworkSpec,
    ParamSet,
};
use crate::train::{train_loop, Sample, Target, Trainable, TrainingLog};

/// Stream offset separating the weight-initialization RNG from the device RNG.
const INIT_STREAM: u64 = 0x5eed_1417;

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len()) as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}

pub fn rmse(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    (a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n as f64).sqrt()
}

/// Prepared inputs for a task.
#[derive(Debug, Clone)]
pub enum TaskData {
    Airline {
        series: AirlineSeries,
        pairs: RegressionData,
        /// Training window length and stride; length 0 is the whole split.
        window: (usize, usize),
    },
    Gait(GaitDataset),
}

impl TaskData {
    pub fn load(cfg: &ExperimentConfig) -> Result<Self> {
        match cfg.task {
            Task::Airline => {
                let a = cfg
                    .airline
                    .as_ref()
                    .ok_or_else(|| Error::Config("missing [airline] section".into()))?;
                let series = load_airline(a.data_path.as_deref())?;
                let pairs =
                    make_regression_pairs(&series.values, a.train_len, (a.norm_low, a.norm_high))?;
                Ok(TaskData::Airline {
                    series,
                    pairs,
                    window: (a.window_len, a.window_stride),
                })
            }
            Task::GaitSynthetic => {
                let g = cfg
                    .gait
                    .as_ref()
                    .ok_or_else(|| Error::Config("missing [gait] section".into()))?;
                let mut ds = synth_gait_dataset(g)?;
                ds.scale_features(cfg.codec.input_min, cfg.codec.input_max)?;
                Ok(TaskData::Gait(ds))
            }
        }
    }

    pub fn training_samples(&self) -> Vec<Sample> {
        match self {
            TaskData::Airline { pairs, window, .. } => {
                let n = pairs.train_inputs.len();
                let (len, stride) = if window.0 == 0 { (n, 1) } else { *window };
                (0..=n - len)
                    .step_by(stride)
                    .map(|s| Sample {
                        inputs: pairs.train_inputs[s..s + len]
                            .iter()
                            .map(|&v| vec![v])
                            .collect(),
                        target: Target::Sequence(
                            pairs.train_targets[s..s + len]
                                .iter()
                                .map(|&v| vec![v])
                                .collect(),
                        ),
                    })
                    .collect()
            }
            TaskData::Gait(ds) => ds
                .train
                .iter()
                .map(|s| Sample {
                    inputs: s.frames.clone(),
                    target: Target::Class(s.label),
                })
                .collect(),
        }
    }
}

/// Normalized one-step-ahead predictions for every input month. With a
/// window length of 0 the whole series runs as one sequence; otherwise each
/// month is predicted from a fresh state over at most `window` months.
pub fn airline_predictions<E: MatVecEngine + ?Sized>(
    spec: &NetworkSpec,
    engine: &mut E,
    pairs: &RegressionData,
    window: usize,
) -> Result<Vec<f64>> {
    let inputs: Vec<Vec<f64>> = pairs.all_inputs.iter().map(|&v| vec![v]).collect();
    if window == 0 {
        let (outputs, _) = sequence_forward(spec, engine, &inputs)?;
        return Ok(outputs.into_iter().map(|y| y[0]).collect());
    }
    (0..inputs.len())
        .map(|t| {
            let start = (t + 1).saturating_sub(window);
            let (outputs, _) = sequence_forward(spec, engine, &inputs[start..=t])?;
            Ok(outputs[outputs.len() - 1][0])
        })
        .collect()
}

/// Test-split quality of airline predictions, in passengers (thousands).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionScore {
    pub test_rmse: f64,
    pub test_pearson: f64,
    pub train_pearson: f64,
}

pub fn score_airline(pairs: &RegressionData, predicted: &[f64]) -> RegressionScore {
    let sc = pairs.scaler;
    let pred: Vec<f64> = predicted.iter().map(|&u| sc.denormalize(u)).collect();
    let actual: Vec<f64> = pairs
        .all_targets
        .iter()
        .map(|&u| sc.denormalize(u))
        .collect();
    let k = pairs.first_test_pair();
    RegressionScore {
        test_rmse: rmse(&pred[k..], &actual[k..]),
        test_pearson: pearson(&pred[k..], &actual[k..]),
        train_pearson: pearson(&pred[..k], &actual[..k]),
    }
}

/// Last-step predictions for every test sequence.
pub fn gait_predictions<E: MatVecEngine + ?Sized>(
    spec: &NetworkSpec,
    engine: &mut E,
    ds: &GaitDataset,
) -> Result<Vec<usize>> {
    ds.test
        .iter()
        .map(|s| {
            let (out, _) = sequence_forward(spec, engine, &s.frames)?;
            classify_final_step(&out).ok_or(Error::NonFinite("classifier output"))
        })
        .collect()
}

pub fn accuracy(ds: &GaitDataset, predicted: &[usize]) -> f64 {
    if ds.test.is_empty() {
        return 0.0;
    }
    let hits = ds
        .test
        .iter()
        .zip(predicted)
        .filter(|(s, &p)| s.label == p)
        .count();
    hits as f64 / ds.test.len() as f64
}

/// Per-epoch test metric: RMSE for airline, accuracy for gait.
pub fn evaluate<E: MatVecEngine + ?Sized>(
    spec: &NetworkSpec,
    engine: &mut E,
    data: &TaskData,
) -> Result<f64> {
    match data {
        TaskData::Airline { pairs, window, .. } => {
            let p = airline_predictions(spec, engine, pairs, window.0)?;
            Ok(score_airline(pairs, &p).test_rmse)
        }
        TaskData::Gait(ds) => {
            let p = gait_predictions(spec, engine, ds)?;
            Ok(accuracy(ds, &p))
        }
    }
}

/// Crossbar with the random initial weights loaded by write-and-verify.
pub fn build_network(cfg: &ExperimentConfig) -> Result<CrossbarNetwork> {
    cfg.validate()?;
    let n = &cfg.network;
    let mut crossbar = Crossbar::new(
        n.crossbar_rows,
        n.crossbar_cols,
        cfg.device,
        cfg.noise,
        cfg.seed,
    )?;
    crossbar.init_array();
    let spec = cfg.network_spec()?;
    let mut net = CrossbarNetwork::new(crossbar, cfg.mapping()?, cfg.build_codec()?)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(INIT_STREAM));
    let init = ParamSet::uniform(&spec, cfg.init.weight_scale, &mut rng);
    net.load_params(
        &init,
        cfg.init.load_tolerance_siemens,
        cfg.init.load_max_iterations,
    )?;
    Ok(net)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Predictions {
    /// Denormalized (actual, predicted) for every input month.
    Airline {
        months: Vec<String>,
        actual: Vec<f64>,
        predicted: Vec<f64>,
        first_test: usize,
    },
    /// (label, predicted) per test sequence.
    Gait(Vec<(usize, usize)>),
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub network: CrossbarNetwork,
    pub log: TrainingLog,
    pub baseline: Option<(ParamSet, TrainingLog)>,
    /// Named scalar results, in a fixed order.
    pub metrics: Vec<(String, f64)>,
    pub predictions: Option<Predictions>,
}

impl ExperimentResult {
    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics
            .iter()
            .find(|(k, _)| k == name)
            .map(|(_, v)| *v)
    }
}

fn collect_metrics<E: MatVecEngine + ?Sized>(
    prefix: &str,
    spec: &NetworkSpec,
    engine: &mut E,
    data: &TaskData,
    log: &TrainingLog,
    out: &mut Vec<(String, f64)>,
) -> Result<Option<Predictions>> {
    let mut push = |k: &str, v: f64| out.push((format!("{prefix}{k}"), v));
    if let (Some(first), Some(last)) = (log.epoch_loss(1), log.epochs.last()) {
        let last_loss = log.epoch_loss(last.epoch).unwrap_or(f64::NAN);
        push("epoch1_loss", first);
        push("final_loss", last_loss);
        push("loss_ratio", last_loss / first);
    }
    match data {
        TaskData::Airline {
            series,
            pairs,
            window,
        } => {
            let p = airline_predictions(spec, engine, pairs, window.0)?;
            let s = score_airline(pairs, &p);
            push("test_rmse", s.test_rmse);
            push("test_pearson", s.test_pearson);
            push("train_pearson", s.train_pearson);
            let sc = pairs.scaler;
            Ok(Some(Predictions::Airline {
                months: series.months[1..].to_vec(),
                actual: series.values[1..].to_vec(),
                predicted: p.iter().map(|&u| sc.denormalize(u)).collect(),
                first_test: pairs.first_test_pair(),
            }))
        }
        TaskData::Gait(ds) => {
            let p = gait_predictions(spec, engine, ds)?;
            push("test_accuracy", accuracy(ds, &p));
            if let Some(best) = log.epochs.iter().map(|e| e.metric).reduce(f64::max) {
                push("best_test_accuracy", best);
            }
            Ok(Some(Predictions::Gait(
                ds.test.iter().zip(p).map(|(s, q)| (s.label, q)).collect(),
            )))
        }
    }
}

fn train_model<M: Trainable + ?Sized>(
    cfg: &ExperimentConfig,
    spec: &NetworkSpec,
    model: &mut M,
    data: &TaskData,
    samples: &[Sample],
) -> Result<TrainingLog> {
    train_loop(&cfg.train_config(), spec, model, samples, |spec, m| {
        evaluate(spec, m, data)
    })
}

/// Build, train and score. With zero epochs only the initialized crossbar
/// is returned.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let mut network = build_network(cfg)?;
    let spec = cfg.network_spec()?;
    if cfg.epochs == 0 {
        return Ok(ExperimentResult {
            config: cfg.clone(),
            network,
            log: TrainingLog::default(),
            baseline: None,
            metrics: Vec::new(),
            predictions: None,
        });
    }
    let data = TaskData::load(cfg)?;
    let samples = data.training_samples();
    let mut metrics = Vec::new();

    let baseline = if cfg.float_baseline {
        let mut params = network.decode_params()?;
        let log = train_model(cfg, &spec, &mut params, &data, &samples)?;
        Some((params, log))
    } else {
        None
    };

    let log = train_model(cfg, &spec, &mut network, &data, &samples)?;
    let predictions = collect_metrics("", &spec, &mut network, &data, &log, &mut metrics)?;
    if let Some((params, blog)) = &baseline {
        let mut p = params.clone();
        collect_metrics("baseline_", &spec, &mut p, &data, blog, &mut metrics)?;
    }
    Ok(ExperimentResult {
        config: cfg.clone(),
        network,
        log,
        baseline,
        metrics,
        predictions,
    })
}

/// Everything needed to rebuild a trained network.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SavedState {
    pub config: ExperimentConfig,
    pub crossbar: CrossbarSnapshot,
}

pub fn save_state(
    cfg: &ExperimentConfig,
    net: &CrossbarNetwork,
    path: impl AsRef<Path>,
) -> Result<()> {
    let state = SavedState {
        config: cfg.clone(),
        crossbar: net.crossbar.snapshot(),
    };
    let text = serde_json::to_string(&state).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_state(path: impl AsRef<Path>) -> Result<(ExperimentConfig, CrossbarNetwork)> {
    let text = std::fs::read_to_string(path)?;
    let state: SavedState =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("state file: {e}")))?;
    let cfg = state.config;
    let crossbar = Crossbar::from_snapshot(&state.crossbar)?;
    let net = CrossbarNetwork::new(crossbar, cfg.mapping()?, cfg.build_codec()?)?;
    Ok((cfg, net))
}

/// Conductance and decoded weight maps of every mapped partition.
pub fn export_maps(
    net: &CrossbarNetwork,
    seed: u64,
    dir: impl AsRef<Path>,
) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for layer in [LayerId::Lstm, LayerId::Fc] {
        let m = net.mapping.layer(layer);
        let g = net.crossbar.read_conductances(&m.partition)?;
        let w = net.decode_layer(layer)?;
        for (suffix, map) in [
            ("conductance", MatrixMap::conductance(g, seed)),
            ("weights", MatrixMap::weights(w, seed)),
        ] {
            let path = dir.join(format!("{}_{suffix}.txt", layer.name()));
            map.write(&path)?;
            written.push(path);
        }
    }
    Ok(written)
}

fn metrics_csv(metrics: &[(String, f64)]) -> String {
    let mut s = String::from("metric,value\n");
    for (k, v) in metrics {
        let _ = writeln!(s, "{k},{v}");
    }
    s
}

fn predictions_csv(p: &Predictions) -> String {
    let mut s = String::new();
    match p {
        Predictions::Airline {
            months,
            actual,
            predicted,
            first_test,
        } => {
            s.push_str("month,split,actual,predicted\n");
            for (i, ((m, a), q)) in months.iter().zip(actual).zip(predicted).enumerate() {
                let split = if i < *first_test { "train" } else { "test" };
                let _ = writeln!(s, "{m},{split},{a},{q}");
            }
        }
        Predictions::Gait(rows) => {
            s.push_str("sequence,label,predicted\n");
            for (i, (l, q)) in rows.iter().enumerate() {
                let _ = writeln!(s, "{i},{l},{q}");
            }
        }
    }
    s
}

fn summary(r: &ExperimentResult) -> String {
    let c = &r.config;
    let mut s = String::new();
    let _ = writeln!(s, "task: {}", c.task.name());
    let _ = writeln!(s, "seed: {}", c.seed);
    let _ = writeln!(s, "epochs: {}", c.epochs);
    let n = &c.network;
    let _ = writeln!(
        s,
        "lstm partition: {}x{} at ({}, {})",
        n.lstm_partition.row_count,
        n.lstm_partition.col_count,
        n.lstm_partition.row_start,
        n.lstm_partition.col_start
    );
    let _ = writeln!(
        s,
        "fc partition: {}x{} at ({}, {})",
        n.fc_partition.row_count,
        n.fc_partition.col_count,
        n.fc_partition.row_start,
        n.fc_partition.col_start
    );
    for (k, v) in &r.metrics {
        let _ = writeln!(s, "{k}: {v:.6}");
    }
    s
}

/// Write every artifact of a run into `dir` and return the paths.
pub fn write_artifacts(r: &ExperimentResult, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut put = |name: &str, text: String| -> Result<()> {
        let p = dir.join(name);
        std::fs::write(&p, text)?;
        written.push(p);
        Ok(())
    };
    put("config.toml", r.config.to_toml()?)?;
    if !r.log.is_empty() {
        put("training_log.csv", r.log.to_csv())?;
        if let Some((_, blog)) = &r.baseline {
            put("baseline_log.csv", blog.to_csv())?;
        }
        put("metrics.csv", metrics_csv(&r.metrics))?;
        if let Some(p) = &r.predictions {
            put("predictions.csv", predictions_csv(p))?;
        }
        put("summary.txt", summary(r))?;
    }
    let state = dir.join("state.json");
    save_state(&r.config, &r.network, &state)?;
    written.push(state);
    written.extend(export_maps(&r.network, r.config.seed, dir.join("maps"))?);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pearson_and_rmse() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]) - 1.0).abs() < 1e-15);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-15);
        assert_eq!(pearson(&[1.0, 1.0], &[1.0, 2.0]), 0.0);
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert!((rmse(&[0.0, 0.0], &[3.0, 4.0]) - 12.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn zero_epoch_run_has_maps_only() {
        let mut cfg = ExperimentConfig::airline();
        cfg.epochs = 0;
        let r = run_experiment(&cfg).unwrap();
        assert!(r.log.is_empty() && r.metrics.is_empty());
        let dir = tempfile::tempdir().unwrap();
        write_artifacts(&r, dir.path()).unwrap();
        assert!(dir.path().join("maps/lstm_conductance.txt").exists());
        assert!(!dir.path().join("training_log.csv").exists());
    }

    #[test]
    fn initial_weights_are_loaded() {
        let cfg = ExperimentConfig::airline();
        let net = build_network(&cfg).unwrap();
        let w = net.decode_params().unwrap();
        assert!(w.max_abs() > 0.05 && w.max_abs() <= 0.1 + 1e-9);
    }

    #[test]
    fn state_round_trip_and_export_shapes() {
        let cfg = ExperimentConfig::gait_synthetic();
        let net = build_network(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.json");
        save_state(&cfg, &net, &path).unwrap();
        let (cfg2, net2) = load_state(&path).unwrap();
        assert_eq!(cfg2, cfg);
        assert_eq!(net2.crossbar.snapshot(), net.crossbar.snapshot());
        export_maps(&net2, cfg.seed, dir.path().join("maps")).unwrap();
        let g = MatrixMap::read(dir.path().join("maps/lstm_conductance.txt")).unwrap();
        assert_eq!(g.values.dim(), (128, 56));
        let g = MatrixMap::read(dir.path().join("maps/fc_conductance.txt")).unwrap();
        assert_eq!(g.values.dim(), (28, 8));
        let w = MatrixMap::read(dir.path().join("maps/fc_weights.txt")).unwrap();
        assert_eq!(w.values, net.decode_layer(LayerId::Fc).unwrap());
    }
}
