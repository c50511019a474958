//! Experiment configuration, stored as TOML with units in the key names.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::codec::{Codec, VoltageCodec, WeightCodec};
use crate::data::synth::SynthGaitConfig;
use crate::device::{DeviceParams, NoiseModel, Partition, REFERENCE_COLS, REFERENCE_ROWS};
use crate::error::{Error, Result};
use crate::network::{Activation, FcLayerSpec, LstmLayerSpec, NetworkMapping, NetworkSpec};
use crate::train::{OptimizerConfig, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Airline,
    GaitSynthetic,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Airline => "airline",
            Task::GaitSynthetic => "gait-synthetic",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "airline" => Some(Task::Airline),
            "gait-synthetic" => Some(Task::GaitSynthetic),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodecConfig {
    pub g_per_w_siemens: f64,
    pub v_full_scale_volts: f64,
    /// Range of the values presented on the input lines.
    pub input_min: f64,
    pub input_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub lstm_bias: bool,
    pub fc_bias: bool,
    pub activation: Activation,
    pub crossbar_rows: usize,
    pub crossbar_cols: usize,
    pub lstm_partition: Partition,
    pub fc_partition: Partition,
}

/// Random initial weights, loaded by write-and-verify before training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitConfig {
    /// Weights are drawn uniformly from `[-weight_scale, weight_scale]`.
    pub weight_scale: f64,
    pub load_tolerance_siemens: f64,
    pub load_max_iterations: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AirlineConfig {
    /// Series file; the bundled copy when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_path: Option<PathBuf>,
    pub train_len: usize,
    pub norm_low: f64,
    pub norm_high: f64,
    /// Training window length in months; 0 trains on the whole split as one sequence.
    #[serde(default)]
    pub window_len: usize,
    /// Step between window starts.
    #[serde(default = "one")]
    pub window_stride: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    pub seed: u64,
    pub epochs: usize,
    /// Samples per update; 0 means the whole training set.
    pub batch_size: usize,
    /// Also train a floating-point copy from the same initial weights.
    pub float_baseline: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub device: DeviceParams,
    pub noise: NoiseModel,
    pub codec: CodecConfig,
    pub network: NetworkConfig,
    pub optimizer: OptimizerConfig,
    pub init: InitConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub airline: Option<AirlineConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gait: Option<SynthGaitConfig>,
}

/// A named broken invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub name: &'static str,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.name, self.message)
    }
}

pub const PRESETS: [&str; 2] = ["airline", "gait-synthetic"];

impl ExperimentConfig {
    pub fn preset(name: &str) -> Result<Self> {
        match Task::from_name(name) {
            Some(Task::Airline) => Ok(Self::airline()),
            Some(Task::GaitSynthetic) => Ok(Self::gait_synthetic()),
            None => Err(Error::Config(format!(
                "unknown preset `{name}` (available: {})",
                PRESETS.join(", ")
            ))),
        }
    }

    pub fn airline() -> Self {
        Self {
            task: Task::Airline,
            seed: 1,
            epochs: 800,
            batch_size: 4,
            float_baseline: true,
            output_dir: None,
            device: DeviceParams::default(),
            noise: NoiseModel::ideal(),
            codec: CodecConfig {
                g_per_w_siemens: 1e-4,
                v_full_scale_volts: 0.2,
                input_min: -1.0,
                input_max: 1.0,
            },
            network: NetworkConfig {
                input_dim: 1,
                hidden_dim: 15,
                output_dim: 1,
                lstm_bias: true,
                fc_bias: true,
                activation: Activation::Sigmoid,
                crossbar_rows: REFERENCE_ROWS,
                crossbar_cols: REFERENCE_COLS,
                lstm_partition: Partition::new(0, 34, 0, 60),
                fc_partition: Partition::new(0, 32, 60, 1),
            },
            optimizer: OptimizerConfig::Sgdm {
                learning_rate: 0.01,
                momentum: 0.9,
            },
            init: InitConfig {
                weight_scale: 0.1,
                load_tolerance_siemens: 1e-7,
                load_max_iterations: 10,
            },
            airline: Some(AirlineConfig {
                data_path: None,
                train_len: 96,
                norm_low: 0.1,
                norm_high: 0.6,
                window_len: 48,
                window_stride: 1,
            }),
            gait: None,
        }
    }

    pub fn gait_synthetic() -> Self {
        Self {
            task: Task::GaitSynthetic,
            seed: 2,
            epochs: 50,
            batch_size: 50,
            float_baseline: true,
            output_dir: None,
            device: DeviceParams::default(),
            noise: NoiseModel::ideal(),
            codec: CodecConfig {
                g_per_w_siemens: 3e-4,
                v_full_scale_volts: 0.2,
                input_min: -1.0,
                input_max: 1.0,
            },
            network: NetworkConfig {
                input_dim: 50,
                hidden_dim: 14,
                output_dim: 8,
                lstm_bias: false,
                fc_bias: false,
                activation: Activation::Softmax,
                crossbar_rows: REFERENCE_ROWS,
                crossbar_cols: REFERENCE_COLS,
                lstm_partition: Partition::new(0, 128, 0, 56),
                fc_partition: Partition::new(0, 28, 56, 8),
            },
            optimizer: OptimizerConfig::Rmsprop {
                learning_rate: 0.01,
                momentum: 0.0,
                decay: 0.9,
                epsilon: 1e-8,
            },
            init: InitConfig {
                weight_scale: 0.1,
                load_tolerance_siemens: 1e-7,
                load_max_iterations: 10,
            },
            airline: None,
            gait: Some(SynthGaitConfig {
                seed: 2,
                ..SynthGaitConfig::default()
            }),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn network_spec(&self) -> Result<NetworkSpec> {
        let n = &self.network;
        NetworkSpec::new(
            LstmLayerSpec {
                input_dim: n.input_dim,
                hidden_dim: n.hidden_dim,
                has_bias: n.lstm_bias,
            },
            FcLayerSpec {
                input_dim: n.hidden_dim,
                output_dim: n.output_dim,
                has_bias: n.fc_bias,
                activation: n.activation,
            },
        )
    }

    pub fn mapping(&self) -> Result<NetworkMapping> {
        let n = &self.network;
        NetworkMapping::new(
            &self.network_spec()?,
            n.lstm_partition,
            n.fc_partition,
            n.crossbar_rows,
            n.crossbar_cols,
        )
    }

    pub fn build_codec(&self) -> Result<Codec> {
        Ok(Codec {
            weights: WeightCodec::new(self.codec.g_per_w_siemens, self.device.g_max())?,
            voltages: VoltageCodec::new(
                self.codec.v_full_scale_volts,
                self.codec.input_min,
                self.codec.input_max,
                self.device.v_read,
            )?,
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            shuffle: self.task == Task::GaitSynthetic,
            seed: self.seed,
            optimizer: self.optimizer,
        }
    }

    /// Every violated invariant; empty when the configuration is usable.
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut push = |name: &'static str, message: String| out.push(Violation { name, message });

        for m in self.device.violations() {
            push("device", m);
        }
        for m in self.noise.violations() {
            push("noise", m);
        }
        let c = &self.codec;
        if !(c.g_per_w_siemens > 0.0 && c.g_per_w_siemens.is_finite()) {
            push(
                "codec-g-per-w",
                format!("g_per_w must be positive, got {}", c.g_per_w_siemens),
            );
        }
        if !(c.v_full_scale_volts > 0.0) {
            push(
                "codec-full-scale",
                format!(
                    "v_full_scale must be positive, got {}",
                    c.v_full_scale_volts
                ),
            );
        } else if c.v_full_scale_volts > self.device.v_read {
            push(
                "codec-full-scale",
                format!(
                    "v_full_scale {} V exceeds the read limit {} V",
                    c.v_full_scale_volts, self.device.v_read
                ),
            );
        }
        if !(c.input_min <= -1.0 && c.input_max >= 1.0) {
            push(
                "codec-input-range",
                format!(
                    "input range [{}, {}] must cover the hidden state range [-1, 1]",
                    c.input_min, c.input_max
                ),
            );
        }

        let n = &self.network;
        match self.network_spec() {
            Err(e) => push("network", e.to_string()),
            Ok(spec) => {
                let expected = match self.task {
                    Task::Airline => (Activation::Sigmoid, 1),
                    Task::GaitSynthetic => (Activation::Softmax, n.output_dim),
                };
                if (n.activation, n.output_dim) != expected {
                    push(
                        "network-task",
                        format!("{} needs a {:?} read-out", self.task.name(), expected.0),
                    );
                }
                if self.task == Task::GaitSynthetic && n.input_dim != crate::data::gait::FEATURE_DIM
                {
                    push(
                        "network-task",
                        format!("gait features are 50-dimensional, got {}", n.input_dim),
                    );
                }
                if let Some(g) = &self.gait {
                    if g.n_classes != n.output_dim {
                        push(
                            "network-task",
                            format!("{} classes but {} outputs", g.n_classes, n.output_dim),
                        );
                    }
                }
                for (name, p, (rows, cols)) in [
                    (
                        "lstm",
                        n.lstm_partition,
                        spec.layer_shape(crate::network::LayerId::Lstm),
                    ),
                    (
                        "fc",
                        n.fc_partition,
                        spec.layer_shape(crate::network::LayerId::Fc),
                    ),
                ] {
                    if !p.fits(n.crossbar_rows, n.crossbar_cols) {
                        push(
                            "partition-bounds",
                            format!(
                                "{name} partition {p:?} exceeds the {}x{} array",
                                n.crossbar_rows, n.crossbar_cols
                            ),
                        );
                    }
                    if p.shape() != (2 * rows, cols) {
                        push(
                            "partition-shape",
                            format!(
                                "{name} partition is {}x{} but the layer needs {}x{}",
                                p.row_count,
                                p.col_count,
                                2 * rows,
                                cols
                            ),
                        );
                    }
                }
            }
        }
        if n.lstm_partition.overlaps(&n.fc_partition) {
            push(
                "partition-overlap",
                format!("{:?} overlaps {:?}", n.lstm_partition, n.fc_partition),
            );
        }

        for m in self.optimizer.violations() {
            push("optimizer", m);
        }
        let i = &self.init;
        if !(i.weight_scale >= 0.0 && i.weight_scale.is_finite()) {
            push(
                "init",
                format!("weight scale must be non-negative, got {}", i.weight_scale),
            );
        }
        if !(i.load_tolerance_siemens > 0.0) || i.load_max_iterations == 0 {
            push(
                "init",
                "write-verify needs a positive tolerance and iteration budget".into(),
            );
        }

        match (self.task, &self.airline, &self.gait) {
            (Task::Airline, Some(a), None) => {
                if a.train_len < 2 || a.train_len >= crate::data::airline::SERIES_LEN {
                    push(
                        "airline",
                        format!("training split {} out of range", a.train_len),
                    );
                } else if a.window_len >= a.train_len {
                    push(
                        "airline",
                        format!(
                            "window of {} months does not fit {} training pairs",
                            a.window_len,
                            a.train_len - 1
                        ),
                    );
                }
                if a.window_stride == 0 {
                    push("airline", "window stride must be positive".into());
                }
                if !(0.0 <= a.norm_low && a.norm_low < a.norm_high && a.norm_high <= 1.0) {
                    push(
                        "airline",
                        format!(
                            "normalization range [{}, {}] invalid",
                            a.norm_low, a.norm_high
                        ),
                    );
                } else if a.norm_low < c.input_min || a.norm_high > c.input_max {
                    push(
                        "airline",
                        "normalization range exceeds the codec input range".into(),
                    );
                }
            }
            (Task::GaitSynthetic, None, Some(g)) => {
                for m in g.violations() {
                    push("gait", m);
                }
            }
            (task, _, _) => push(
                "task-section",
                format!("{} needs exactly its own data section", task.name()),
            ),
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            let text: Vec<String> = v.iter().map(ToString::to_string).collect();
            Err(Error::Config(text.join("; ")))
        }
    }
}

/// Parse and check a configuration file.
pub fn validate_config(path: impl AsRef<Path>) -> Result<Vec<Violation>> {
    Ok(ExperimentConfig::load(path)?.violations())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(c: &ExperimentConfig) -> Vec<&'static str> {
        c.violations().into_iter().map(|v| v.name).collect()
    }

    #[test]
    fn presets_are_clean_and_round_trip() {
        for name in PRESETS {
            let c = ExperimentConfig::preset(name).unwrap();
            assert!(c.violations().is_empty(), "{name}: {:?}", c.violations());
            let text = c.to_toml().unwrap();
            assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), c);
            c.mapping().unwrap();
        }
        assert!(ExperimentConfig::preset("mnist").is_err());
    }

    #[test]
    fn keys_carry_units() {
        let text = ExperimentConfig::airline().to_toml().unwrap();
        for key in [
            "v_set_volts",
            "dvgate_per_dg_volts_per_siemens",
            "g_per_w_siemens",
            "v_full_scale_volts",
        ] {
            assert!(text.contains(key), "missing {key}");
        }
    }

    #[test]
    fn overlapping_partitions_are_named() {
        let mut c = ExperimentConfig::airline();
        c.network.fc_partition = Partition::new(0, 32, 59, 1);
        assert!(names(&c).contains(&"partition-overlap"));
    }

    #[test]
    fn full_scale_above_read_limit_is_named() {
        let mut c = ExperimentConfig::gait_synthetic();
        c.codec.v_full_scale_volts = 0.25;
        assert_eq!(names(&c), vec!["codec-full-scale"]);
    }

    #[test]
    fn every_violation_is_listed() {
        let mut c = ExperimentConfig::airline();
        c.network.fc_partition = Partition::new(0, 30, 60, 1);
        c.optimizer = OptimizerConfig::Sgdm {
            learning_rate: -1.0,
            momentum: 0.9,
        };
        c.device.v_read = -0.1;
        let n = names(&c);
        for want in ["partition-shape", "optimizer", "device"] {
            assert!(n.contains(&want), "{n:?}");
        }
        assert!(c.validate().is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = ExperimentConfig::airline().to_toml().unwrap();
        let bad = text.replace("v_set_volts", "v_set");
        assert!(ExperimentConfig::from_toml(&bad).is_err());
    }

    #[test]
    fn missing_data_section_is_named() {
        let mut c = ExperimentConfig::airline();
        c.airline = None;
        assert!(names(&c).contains(&"task-section"));
    }
}
