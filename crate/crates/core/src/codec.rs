//! Conversions between network quantities and physical quantities.
//!
//! A signed weight is stored as the conductance difference of two cells in
//! the same column, one on a "plus" row and one on a "minus" row. Inputs are
//! applied as voltages of equal amplitude and opposite polarity on the row
//! pair, so the column current realizes `(G+ - G-) * v`.
//!
//! Within a partition, logical input `k` occupies physical rows `2k` (plus)
//! and `2k + 1` (minus).

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightCodec {
    /// Conductance difference representing one unit of weight.
    pub g_per_w: f64,
    /// Ceiling of a single cell's conductance.
    pub g_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedWeights {
    pub plus: Array2<f64>,
    pub minus: Array2<f64>,
    pub clamped: Array2<bool>,
}

impl EncodedWeights {
    pub fn clamped_count(&self) -> usize {
        self.clamped.iter().filter(|&&c| c).count()
    }

    /// Physical target matrix with plus/minus rows interleaved.
    pub fn interleaved(&self) -> Array2<f64> {
        interleave_pairs(&self.plus, &self.minus)
    }
}

impl WeightCodec {
    pub fn new(g_per_w: f64, g_max: f64) -> Result<Self> {
        if !(g_per_w > 0.0 && g_per_w.is_finite()) {
            return Err(Error::Config(format!(
                "g_per_w must be positive, got {g_per_w}"
            )));
        }
        if !(g_max > 0.0 && g_max.is_finite()) {
            return Err(Error::Config(format!(
                "g_max must be positive, got {g_max}"
            )));
        }
        Ok(Self { g_per_w, g_max })
    }

    /// Largest representable weight magnitude.
    pub fn w_max(&self) -> f64 {
        self.g_max / self.g_per_w
    }

    /// One-sided encoding: the unused side of the pair sits at 0 S.
    pub fn encode_weight(&self, w: f64) -> (f64, f64, bool) {
        let g = w.abs() * self.g_per_w;
        let clamped = g > self.g_max;
        let g = g.min(self.g_max);
        if w >= 0.0 {
            (g, 0.0, clamped)
        } else {
            (0.0, g, clamped)
        }
    }

    pub fn encode_weights(&self, w: &Array2<f64>) -> EncodedWeights {
        let mut plus = Array2::zeros(w.dim());
        let mut minus = Array2::zeros(w.dim());
        let mut clamped = Array2::from_elem(w.dim(), false);
        Zip::from(&mut plus)
            .and(&mut minus)
            .and(&mut clamped)
            .and(w)
            .for_each(|p, m, c, &w| {
                let (gp, gm, cl) = self.encode_weight(w);
                *p = gp;
                *m = gm;
                *c = cl;
            });
        EncodedWeights {
            plus,
            minus,
            clamped,
        }
    }

    pub fn decode_weight(&self, g_plus: f64, g_minus: f64) -> f64 {
        (g_plus - g_minus) / self.g_per_w
    }

    pub fn decode_weights(
        &self,
        g_plus: &Array2<f64>,
        g_minus: &Array2<f64>,
    ) -> Result<Array2<f64>> {
        check_len("decode_weights rows", g_plus.nrows(), g_minus.nrows())?;
        check_len("decode_weights cols", g_plus.ncols(), g_minus.ncols())?;
        Ok(Zip::from(g_plus)
            .and(g_minus)
            .map_collect(|&p, &m| self.decode_weight(p, m)))
    }

    /// Decode a physical (interleaved) conductance matrix into logical weights.
    pub fn decode_interleaved(&self, g: &Array2<f64>) -> Result<Array2<f64>> {
        let (plus, minus) = split_pairs(g)?;
        self.decode_weights(&plus, &minus)
    }
}

/// Input values to row voltages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoltageCodec {
    /// Voltage representing a normalized value of 1.
    pub v_full_scale: f64,
    pub value_min: f64,
    pub value_max: f64,
}

impl VoltageCodec {
    pub fn new(v_full_scale: f64, value_min: f64, value_max: f64, v_read: f64) -> Result<Self> {
        if !(v_full_scale > 0.0 && v_full_scale <= v_read) {
            return Err(Error::Config(format!(
                "v_full_scale must lie in (0, v_read = {v_read}], got {v_full_scale}"
            )));
        }
        if !(value_min < value_max) || value_min > 0.0 || value_max < 0.0 {
            return Err(Error::Config(format!(
                "value range [{value_min}, {value_max}] must be non-empty and contain 0"
            )));
        }
        Ok(Self {
            v_full_scale,
            value_min,
            value_max,
        })
    }

    /// Maps the value bounds symmetrically so that 0 stays at 0 V.
    fn scale(&self) -> f64 {
        self.value_min.abs().max(self.value_max.abs())
    }

    pub fn normalized(&self, x: f64) -> Result<f64> {
        if !x.is_finite() {
            return Err(Error::NonFinite("input value"));
        }
        if x < self.value_min || x > self.value_max {
            return Err(Error::ValueOutOfRange {
                value: x,
                min: self.value_min,
                max: self.value_max,
            });
        }
        Ok(x / self.scale())
    }

    /// Voltages for the plus and minus rows of each pair. With `signed`
    /// false, negative inputs are rejected.
    pub fn values_to_voltages(&self, x: &[f64], signed: bool) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut pos = Vec::with_capacity(x.len());
        let mut neg = Vec::with_capacity(x.len());
        for &v in x {
            if !signed && v < 0.0 {
                return Err(Error::ValueOutOfRange {
                    value: v,
                    min: 0.0,
                    max: self.value_max,
                });
            }
            let volts = self.v_full_scale * self.normalized(v)?;
            pos.push(volts);
            neg.push(-volts);
        }
        Ok((pos, neg))
    }

    /// Fixed amplitude driven on bias rows.
    pub fn bias_voltage(&self) -> f64 {
        self.v_full_scale
    }

    /// Row voltage vector for a partition, plus/minus interleaved.
    pub fn row_voltages(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (pos, neg) = self.values_to_voltages(x, true)?;
        Ok(pos.into_iter().zip(neg).flat_map(|(p, n)| [p, n]).collect())
    }

    /// Inverse of the composed encoding: current back to weight units.
    pub fn currents_to_values(&self, currents: &[f64], weights: &WeightCodec) -> Vec<f64> {
        let k = weights.g_per_w * self.v_full_scale / self.scale();
        currents.iter().map(|i| i / k).collect()
    }
}

/// Weight and voltage codecs used together on one crossbar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Codec {
    pub weights: WeightCodec,
    pub voltages: VoltageCodec,
}

pub fn interleave_pairs(plus: &Array2<f64>, minus: &Array2<f64>) -> Array2<f64> {
    let (k, j) = plus.dim();
    Array2::from_shape_fn((2 * k, j), |(r, c)| {
        if r % 2 == 0 {
            plus[(r / 2, c)]
        } else {
            minus[(r / 2, c)]
        }
    })
}

pub fn split_pairs(g: &Array2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
    if !g.nrows().is_multiple_of(2) {
        return Err(Error::DimensionMismatch {
            context: "differential pair rows",
            expected: g.nrows() + 1,
            actual: g.nrows(),
        });
    }
    let k = g.nrows() / 2;
    let plus = Array2::from_shape_fn((k, g.ncols()), |(r, c)| g[(2 * r, c)]);
    let minus = Array2::from_shape_fn((k, g.ncols()), |(r, c)| g[(2 * r + 1, c)]);
    Ok((plus, minus))
}

/// Logical row currents from physical ones: plus-row minus minus-row.
pub fn fold_pair_currents(currents: &[f64]) -> Vec<f64> {
    currents.chunks_exact(2).map(|p| p[0] - p[1]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::{Crossbar, DeviceParams, NoiseModel, Partition};
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn airline_codec() -> WeightCodec {
        WeightCodec::new(1e-4, DeviceParams::default().g_max()).unwrap()
    }

    #[test]
    fn encode_examples() {
        let c = airline_codec();
        assert_eq!(c.encode_weight(0.0), (0.0, 0.0, false));
        let (p, m, cl) = c.encode_weight(0.3);
        assert!((p - 3e-5).abs() < 1e-20);
        assert_eq!((m, cl), (0.0, false));
        let (p, m, cl) = c.encode_weight(-0.3);
        assert!((m - 3e-5).abs() < 1e-20);
        assert_eq!((p, cl), (0.0, false));
        let (p, _, cl) = c.encode_weight(2.0);
        assert!(cl);
        assert_eq!(p, c.g_max);
    }

    #[test]
    fn decode_examples() {
        let c = WeightCodec::new(1e-4, 1e-3).unwrap();
        assert_eq!(c.decode_weight(2e-4, 1e-4), 1.0);
        assert_eq!(c.decode_weight(0.0, 0.0), 0.0);
        assert!(c
            .decode_weights(&Array2::zeros((2, 2)), &Array2::zeros((2, 3)))
            .is_err());
    }

    #[test]
    fn decode_matches_arithmetic_oracle() {
        let c = WeightCodec::new(3e-4, 6e-5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let gp = Array2::from_shape_fn((5, 4), |_| rng.random_range(0.0..6e-5));
        let gm = Array2::from_shape_fn((5, 4), |_| rng.random_range(0.0..6e-5));
        let w = c.decode_weights(&gp, &gm).unwrap();
        for r in 0..5 {
            for k in 0..4 {
                assert_eq!(w[(r, k)], (gp[(r, k)] - gm[(r, k)]) / 3e-4);
            }
        }
    }

    #[test]
    fn voltage_examples() {
        let v = VoltageCodec::new(0.2, -1.0, 1.0, 0.2).unwrap();
        assert_eq!(
            v.values_to_voltages(&[1.0], true).unwrap(),
            (vec![0.2], vec![-0.2])
        );
        assert_eq!(
            v.values_to_voltages(&[0.0], true).unwrap(),
            (vec![0.0], vec![-0.0])
        );
        assert!(v.values_to_voltages(&[1.5], true).is_err());
        assert!(v.values_to_voltages(&[-0.5], false).is_err());
        assert!(VoltageCodec::new(0.25, -1.0, 1.0, 0.2).is_err());
        assert_eq!(
            v.row_voltages(&[0.5, -1.0]).unwrap(),
            vec![0.1, -0.1, -0.2, 0.2]
        );
    }

    #[test]
    fn current_decoding_unit_chain() {
        let w = WeightCodec::new(1e-4, 1e-3).unwrap();
        let v = VoltageCodec::new(0.2, -1.0, 1.0, 0.2).unwrap();
        assert_eq!(v.currents_to_values(&[0.0], &w), vec![0.0]);
        let i = 1e-4 * 0.2;
        assert!((v.currents_to_values(&[i], &w)[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn doubling_g_per_w_halves_decoded_values() {
        let g = array![[3e-5, 1e-5], [0.0, 4e-5]];
        let a = WeightCodec::new(1e-4, 1e-3).unwrap();
        let b = WeightCodec::new(2e-4, 1e-3).unwrap();
        let wa = a.decode_interleaved(&g).unwrap();
        let wb = b.decode_interleaved(&g).unwrap();
        for (x, y) in wa.iter().zip(wb.iter()) {
            assert_eq!(*x, 2.0 * y);
        }
    }

    #[test]
    fn pair_helpers() {
        let plus = array![[1.0, 2.0]];
        let minus = array![[3.0, 4.0]];
        let g = interleave_pairs(&plus, &minus);
        assert_eq!(g, array![[1.0, 2.0], [3.0, 4.0]]);
        assert_eq!(split_pairs(&g).unwrap(), (plus, minus));
        assert!(split_pairs(&Array2::zeros((3, 1))).is_err());
        assert_eq!(fold_pair_currents(&[5.0, 2.0, 1.0, 1.5]), vec![3.0, -0.5]);
    }

    // Weights, inputs and bias through the crossbar, read back as W x + b.
    fn analog_affine(w: &Array2<f64>, x: &[f64]) -> Vec<f64> {
        let params = DeviceParams::default();
        let wc = WeightCodec::new(1e-4, params.g_max()).unwrap();
        let vc = VoltageCodec::new(0.2, -1.0, 1.0, params.v_read).unwrap();
        let enc = wc.encode_weights(w);
        let mut xbar =
            Crossbar::new(2 * w.nrows(), w.ncols(), params, NoiseModel::ideal(), 0).unwrap();
        let p = Partition::new(0, 2 * w.nrows(), 0, w.ncols());
        xbar.program_two_pulse(&p, &enc.interleaved(), &Array2::from_elem(p.shape(), true))
            .unwrap();
        let mut input = x.to_vec();
        input.push(1.0);
        let i = xbar
            .read_mvm(&p, &vc.row_voltages(&input).unwrap())
            .unwrap();
        vc.currents_to_values(&i, &wc)
    }

    proptest! {
        #[test]
        fn round_trip_in_range(w in -0.58f64..0.58) {
            let c = airline_codec();
            let (p, m, clamped) = c.encode_weight(w);
            prop_assert!(!clamped);
            prop_assert_eq!(p.min(m), 0.0);
            prop_assert!((c.decode_weight(p, m) - w).abs() <= 1e-15);
        }

        #[test]
        fn end_to_end_linearity(
            raw in proptest::collection::vec(-0.5f64..0.5, 4 * 3),
            x in proptest::collection::vec(-1.0f64..1.0, 3),
        ) {
            // Last row of the stacked matrix holds the bias.
            let w = Array2::from_shape_vec((4, 3), raw).unwrap();
            let got = analog_affine(&w, &x);
            for j in 0..3 {
                let want: f64 = (0..3).map(|k| w[(k, j)] * x[k]).sum::<f64>() + w[(3, j)];
                let scale = want.abs().max(1.0);
                prop_assert!((got[j] - want).abs() <= 1e-10 * scale);
            }
        }
    }
}
