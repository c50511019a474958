//! Datasets and preprocessing.

pub mod airline;
pub mod gait;
pub mod synth;

pub use airline::{
    load_airline, make_regression_pairs, AirlineSeries, MinMaxScaler, RegressionData,
};
pub use gait::{
    detect_gait_cycles, downsample_profile, segment_sequences, width_profile, GaitDataset,
    GaitSequence, Silhouette,
};
pub use synth::{synth_gait_dataset, SynthGaitConfig};
