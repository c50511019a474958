//! Plain-text matrix maps used for conductance and weight exports.
//!
//! ```text
//! # memlstm map v1
//! rows 2
//! cols 3
//! units S
//! seed 42
//! 1.0000000000000000e-5 0.0000000000000000e0 ...
//! ```
//!
//! Values are row-major, one matrix row per line, written with 17
//! significant digits so that parsing returns the identical `f64`.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

const MAGIC: &str = "# memlstm map v1";

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixMap {
    pub units: String,
    pub seed: u64,
    pub values: Array2<f64>,
}

impl MatrixMap {
    pub fn conductance(values: Array2<f64>, seed: u64) -> Self {
        Self {
            units: "S".to_string(),
            seed,
            values,
        }
    }

    pub fn weights(values: Array2<f64>, seed: u64) -> Self {
        Self {
            units: "1".to_string(),
            seed,
            values,
        }
    }

    pub fn to_text(&self) -> String {
        let (rows, cols) = self.values.dim();
        let mut s = String::with_capacity(32 + rows * cols * 24);
        let _ = writeln!(s, "{MAGIC}");
        let _ = writeln!(s, "rows {rows}");
        let _ = writeln!(s, "cols {cols}");
        let _ = writeln!(s, "units {}", self.units);
        let _ = writeln!(s, "seed {}", self.seed);
        for row in self.values.rows() {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            let _ = writeln!(s, "{}", line.join(" "));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(MAGIC) {
            return Err(Error::Format("missing map header".into()));
        }
        let mut header = |key: &str| -> Result<String> {
            let line = lines
                .next()
                .ok_or_else(|| Error::Format(format!("missing `{key}` line")))?;
            let (k, v) = line
                .split_once(' ')
                .ok_or_else(|| Error::Format(format!("malformed header line `{line}`")))?;
            if k != key {
                return Err(Error::Format(format!("expected `{key}`, found `{k}`")));
            }
            Ok(v.trim().to_string())
        };
        let parse_num = |v: String, key: &str| -> Result<u64> {
            v.parse()
                .map_err(|_| Error::Format(format!("bad `{key}` value `{v}`")))
        };
        let rows = parse_num(header("rows")?, "rows")? as usize;
        let cols = parse_num(header("cols")?, "cols")? as usize;
        let units = header("units")?;
        let seed = parse_num(header("seed")?, "seed")?;

        let mut data = Vec::with_capacity(rows * cols);
        let mut seen_rows = 0;
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let before = data.len();
            for tok in line.split_whitespace() {
                let v: f64 = tok
                    .parse()
                    .map_err(|_| Error::Format(format!("bad value `{tok}`")))?;
                data.push(v);
            }
            if data.len() - before != cols {
                return Err(Error::Format(format!(
                    "row {seen_rows} has {} values, expected {cols}",
                    data.len() - before
                )));
            }
            seen_rows += 1;
        }
        if seen_rows != rows && !(cols == 0 && seen_rows == 0) {
            return Err(Error::Format(format!(
                "found {seen_rows} rows, expected {rows}"
            )));
        }
        let values =
            Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::Format(e.to_string()))?;
        Ok(Self {
            units,
            seed,
            values,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let m = MatrixMap::conductance(ndarray::array![[2e-5, 0.0]], 7);
        let text = m.to_text();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(MAGIC));
        assert_eq!(lines.next(), Some("rows 1"));
        assert_eq!(lines.next(), Some("cols 2"));
        assert_eq!(lines.next(), Some("units S"));
        assert_eq!(lines.next(), Some("seed 7"));
        assert_eq!(
            lines.next(),
            Some("2.0000000000000002e-5 0.0000000000000000e0")
        );
    }

    #[test]
    fn rejects_ragged_rows() {
        let text = format!("{MAGIC}\nrows 2\ncols 2\nunits S\nseed 0\n1 2\n3\n");
        assert!(MatrixMap::parse(&text).is_err());
        let text = format!("{MAGIC}\nrows 2\ncols 2\nunits S\nseed 0\n1 2\n");
        assert!(MatrixMap::parse(&text).is_err());
        assert!(MatrixMap::parse("rows 1").is_err());
    }

    proptest! {
        #[test]
        fn text_round_trip_is_bit_exact(
            rows in 1usize..6,
            cols in 1usize..6,
            seed in any::<u64>(),
            raw in proptest::collection::vec(-1e-3f64..1e-3, 36),
        ) {
            let values = Array2::from_shape_fn((rows, cols), |(r, c)| raw[r * 6 + c]);
            let m = MatrixMap::conductance(values, seed);
            let back = MatrixMap::parse(&m.to_text()).unwrap();
            prop_assert_eq!(back.values.shape(), m.values.shape());
            for (a, b) in back.values.iter().zip(m.values.iter()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
            prop_assert_eq!(back.seed, seed);
        }
    }
}
