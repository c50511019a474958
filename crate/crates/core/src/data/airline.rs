//! Monthly airline passenger totals, Jan 1949 to Dec 1960.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// The bundled series file.
pub const BUNDLED_CSV: &str = include_str!("../../data/airline_passengers.csv");
/// SHA-256 of [`BUNDLED_CSV`].
pub const BUNDLED_SHA256: &str = "eda0181c2450975f5ad68556dcf14367541b22553f0c628b9747334cfdc6c96c";

pub const SERIES_LEN: usize = 144;
pub const TRAIN_LEN: usize = 96;

#[derive(Debug, Clone, PartialEq)]
pub struct AirlineSeries {
    /// `YYYY-MM` labels.
    pub months: Vec<String>,
    /// Passengers, thousands.
    pub values: Vec<f64>,
}

impl AirlineSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn train(&self) -> &[f64] {
        &self.values[..TRAIN_LEN]
    }

    pub fn test(&self) -> &[f64] {
        &self.values[TRAIN_LEN..]
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Parse `month,value` lines after a header. Requires 144 positive values.
pub fn parse_airline(text: &str) -> Result<AirlineSeries> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    lines
        .next()
        .ok_or_else(|| Error::Data("empty airline file".into()))?;
    let mut months = Vec::with_capacity(SERIES_LEN);
    let mut values = Vec::with_capacity(SERIES_LEN);
    for line in lines {
        let (m, v) = line
            .split_once(',')
            .ok_or_else(|| Error::Data(format!("malformed line `{line}`")))?;
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| Error::Data(format!("bad value in `{line}`")))?;
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::Data(format!("non-positive value in `{line}`")));
        }
        months.push(m.trim().to_string());
        values.push(v);
    }
    if values.len() != SERIES_LEN {
        return Err(Error::Data(format!(
            "expected {SERIES_LEN} observations, found {}",
            values.len()
        )));
    }
    Ok(AirlineSeries { months, values })
}

/// Load the series, from `path` if given or else the bundled copy. The
/// contents must match the pinned checksum.
pub fn load_airline(path: Option<&Path>) -> Result<AirlineSeries> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p)?,
        None => BUNDLED_CSV.to_string(),
    };
    let digest = sha256_hex(text.as_bytes());
    if digest != BUNDLED_SHA256 {
        return Err(Error::Data(format!(
            "airline data checksum mismatch: {digest}"
        )));
    }
    parse_airline(&text)
}

/// Affine map from `[min, max]` of the fitted data onto `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinMaxScaler {
    pub min: f64,
    pub max: f64,
    pub lo: f64,
    pub hi: f64,
}

impl MinMaxScaler {
    pub fn fit(values: &[f64], lo: f64, hi: f64) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Data("cannot fit a scaler to no values".into()));
        }
        if !(lo < hi && lo >= 0.0 && hi <= 1.0) {
            return Err(Error::ValueOutOfRange {
                value: lo,
                min: 0.0,
                max: hi,
            });
        }
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(Self { min, max, lo, hi })
    }

    fn degenerate(&self) -> bool {
        self.max - self.min <= f64::EPSILON * self.max.abs().max(1.0)
    }

    /// A constant fitted series maps to the middle of the target range.
    pub fn normalize(&self, v: f64) -> f64 {
        if self.degenerate() {
            return 0.5 * (self.lo + self.hi);
        }
        self.lo + (v - self.min) / (self.max - self.min) * (self.hi - self.lo)
    }

    pub fn denormalize(&self, u: f64) -> f64 {
        if self.degenerate() {
            return self.min;
        }
        self.min + (u - self.lo) / (self.hi - self.lo) * (self.max - self.min)
    }
}

/// One-step-ahead pairs: input month t, target month t + 1.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionData {
    pub scaler: MinMaxScaler,
    /// Pairs drawn from the training split (`train_len - 1` of them).
    pub train_inputs: Vec<f64>,
    pub train_targets: Vec<f64>,
    /// Pairs over the whole series (`len - 1`).
    pub all_inputs: Vec<f64>,
    pub all_targets: Vec<f64>,
    pub train_len: usize,
}

impl RegressionData {
    /// Index into `all_*` of the first pair whose target lies in the test split.
    pub fn first_test_pair(&self) -> usize {
        self.train_len - 1
    }
}

/// Normalize with training-split statistics and build the pairs.
pub fn make_regression_pairs(
    values: &[f64],
    train_len: usize,
    range: (f64, f64),
) -> Result<RegressionData> {
    if train_len < 2 || train_len > values.len() {
        return Err(Error::Data(format!(
            "training split {train_len} invalid for {} values",
            values.len()
        )));
    }
    let scaler = MinMaxScaler::fit(&values[..train_len], range.0, range.1)?;
    let norm: Vec<f64> = values.iter().map(|&v| scaler.normalize(v)).collect();
    Ok(RegressionData {
        scaler,
        train_inputs: norm[..train_len - 1].to_vec(),
        train_targets: norm[1..train_len].to_vec(),
        all_inputs: norm[..norm.len() - 1].to_vec(),
        all_targets: norm[1..].to_vec(),
        train_len,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_series_shape() {
        let s = load_airline(None).unwrap();
        assert_eq!(s.len(), 144);
        assert_eq!(s.train().len(), 96);
        assert_eq!(s.test().len(), 48);
        assert_eq!(s.values[0], 112.0);
        assert_eq!(s.months[0], "1949-01");
        assert_eq!(s.values[143], 432.0);
        assert_eq!(s.values.iter().sum::<f64>(), 40363.0);
    }

    #[test]
    fn corrupt_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        std::fs::write(&p, BUNDLED_CSV.replace("1949-01,112", "1949-01,113")).unwrap();
        assert!(load_airline(Some(&p)).is_err());
        assert!(load_airline(Some(&dir.path().join("missing.csv"))).is_err());
        std::fs::write(&p, BUNDLED_CSV).unwrap();
        assert_eq!(load_airline(Some(&p)).unwrap(), load_airline(None).unwrap());
    }

    #[test]
    fn parse_rejects_short_or_bad_series() {
        assert!(parse_airline("month,v\n1949-01,112\n").is_err());
        assert!(parse_airline(&BUNDLED_CSV.replace(",112", ",-1")).is_err());
    }

    #[test]
    fn pairs_are_shifted_by_one() {
        let s = load_airline(None).unwrap();
        let d = make_regression_pairs(&s.values, TRAIN_LEN, (0.0, 1.0)).unwrap();
        assert_eq!(d.train_inputs.len(), 95);
        assert_eq!(d.all_inputs.len(), 143);
        assert_eq!(d.train_inputs[1..], d.train_targets[..94]);
        assert_eq!(d.first_test_pair(), 95);
        assert_eq!(d.scaler.min, 104.0);
        assert_eq!(d.scaler.max, 413.0);
        let lo = d.train_inputs.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(lo >= 0.0);
        assert!(d
            .train_inputs
            .iter()
            .chain(&d.train_targets)
            .all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn round_trip_and_constant_series() {
        let s = load_airline(None).unwrap();
        let sc = MinMaxScaler::fit(s.train(), 0.1, 0.6).unwrap();
        for &v in &s.values {
            assert!((sc.denormalize(sc.normalize(v)) - v).abs() < 1e-9);
        }
        let c = make_regression_pairs(&[5.0; 10], 6, (0.0, 1.0)).unwrap();
        assert!(c.all_inputs.iter().chain(&c.all_targets).all(|&v| v == 0.5));
        assert_eq!(c.scaler.denormalize(c.scaler.normalize(5.0)), 5.0);
    }
}
