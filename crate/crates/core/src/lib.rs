#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Simulation of LSTM networks executed and trained on 1T1R memristor
//! crossbars.

pub mod codec;
pub mod config;
pub mod data;
pub mod device;
pub mod error;
pub mod experiment;
pub mod mapfile;
pub mod network;
pub mod train;

pub use error::{Error, Result};
