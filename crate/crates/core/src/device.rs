//! Behavioral model of a 1T1R memristor crossbar.
//!
//! Each cell stores an analog conductance. Reads apply voltages to one side
//! of a partition and sum the currents on the other (Ohm's law per cell,
//! Kirchhoff's current law per line). Programming follows the two-pulse
//! scheme: a reset pulse clears the cell, then a set pulse whose transistor
//! gate voltage fixes the compliance current and therefore the final
//! conductance. The gate-to-conductance transfer is affine:
//! `G(v_g) = (v_g - v_gate0) / dvgate_per_dg`, clamped to `[0, g_max]`.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Row/column extent of the reference 1T1R array.
pub const REFERENCE_ROWS: usize = 128;
pub const REFERENCE_COLS: usize = 64;

/// Pulse and gate voltages of the programming circuitry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceParams {
    #[serde(rename = "v_set_volts")]
    pub v_set: f64,
    #[serde(rename = "v_reset_volts")]
    pub v_reset: f64,
    #[serde(rename = "v_read_volts")]
    pub v_read: f64,
    #[serde(rename = "v_gate0_volts")]
    pub v_gate0: f64,
    #[serde(rename = "v_gate_max_volts")]
    pub v_gate_max: f64,
    #[serde(rename = "v_gate_min_volts")]
    pub v_gate_min: f64,
    #[serde(rename = "v_gate_reset_volts")]
    pub v_gate_reset: f64,
    #[serde(rename = "dvgate_per_dg_volts_per_siemens")]
    pub dvgate_per_dg: f64,
    /// Explicit conductance ceiling. When absent it is derived from the gate window.
    #[serde(
        rename = "g_max_siemens",
        default,
        skip_serializing_if = "Option::is_none"
    )]
    pub g_max_override: Option<f64>,
    /// Recorded for completeness; the ideal-wire model does not use it.
    #[serde(rename = "wire_resistance_ohms")]
    pub wire_resistance: f64,
}

impl Default for DeviceParams {
    fn default() -> Self {
        Self {
            v_set: 2.5,
            v_reset: 1.7,
            v_read: 0.2,
            v_gate0: 1.0,
            v_gate_max: 1.6,
            v_gate_min: 0.7,
            v_gate_reset: 5.0,
            dvgate_per_dg: 1.02e4,
            g_max_override: None,
            wire_resistance: 0.3,
        }
    }
}

impl DeviceParams {
    /// Largest programmable conductance.
    pub fn g_max(&self) -> f64 {
        self.g_max_override
            .unwrap_or((self.v_gate_max - self.v_gate0) / self.dvgate_per_dg)
    }

    /// Every violated invariant, as human-readable messages.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let all = [
            self.v_set,
            self.v_reset,
            self.v_read,
            self.v_gate0,
            self.v_gate_max,
            self.v_gate_min,
            self.v_gate_reset,
            self.dvgate_per_dg,
            self.wire_resistance,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            out.push("device parameters must be finite".to_string());
        }
        if !(self.v_gate_min < self.v_gate0 && self.v_gate0 <= self.v_gate_max) {
            out.push(format!(
                "gate window must satisfy v_gate_min < v_gate0 <= v_gate_max (got {} / {} / {})",
                self.v_gate_min, self.v_gate0, self.v_gate_max
            ));
        }
        if !(self.v_read < self.v_reset && self.v_reset < self.v_set) {
            out.push(format!(
                "pulse amplitudes must satisfy v_read < v_reset < v_set (got {} / {} / {})",
                self.v_read, self.v_reset, self.v_set
            ));
        }
        if self.v_read <= 0.0 {
            out.push("v_read must be positive".to_string());
        }
        if self.dvgate_per_dg <= 0.0 {
            out.push("dvgate_per_dg must be positive".to_string());
        }
        if !(self.g_max() > 0.0 && self.g_max().is_finite()) {
            out.push(format!("g_max must be positive, got {}", self.g_max()));
        }
        if self.wire_resistance < 0.0 {
            out.push("wire resistance must be non-negative".to_string());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self.violations().first() {
            Some(v) => Err(Error::InvalidDevice(v.clone())),
            None => Ok(()),
        }
    }

    /// Gate voltage requested for a target conductance, clamped to the gate
    /// window. The flag is set when clamping was needed.
    pub fn gate_voltage_for(&self, target: f64) -> (f64, bool) {
        let raw = self.v_gate0 + target * self.dvgate_per_dg;
        let v = raw.clamp(self.v_gate_min, self.v_gate_max);
        (v, v != raw)
    }

    /// Conductance left by a set pulse at gate voltage `v_gate`.
    pub fn set_conductance(&self, v_gate: f64) -> f64 {
        ((v_gate - self.v_gate0) / self.dvgate_per_dg).clamp(0.0, self.g_max())
    }
}

/// Stochastic non-idealities. All zero is the ideal device.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseModel {
    /// Std-dev of per-read conductance fluctuation, as a fraction of G.
    #[serde(default)]
    pub read_noise_rel: f64,
    /// Std-dev of the conductance error left by one programming pulse.
    #[serde(rename = "program_noise_siemens", default)]
    pub program_noise_abs: f64,
    /// Number of uniformly spaced stable levels in `[0, g_max]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quantization_levels: Option<u32>,
}

impl NoiseModel {
    pub fn ideal() -> Self {
        Self::default()
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.read_noise_rel >= 0.0 && self.read_noise_rel.is_finite()) {
            out.push(format!(
                "read_noise_rel must be >= 0, got {}",
                self.read_noise_rel
            ));
        }
        if !(self.program_noise_abs >= 0.0 && self.program_noise_abs.is_finite()) {
            out.push(format!(
                "program noise must be >= 0, got {}",
                self.program_noise_abs
            ));
        }
        if let Some(levels) = self.quantization_levels {
            if levels < 2 {
                out.push(format!("quantization_levels must be >= 2, got {levels}"));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemristorCell {
    pub conductance: f64,
    pub gate_on: bool,
}

impl Default for MemristorCell {
    fn default() -> Self {
        Self {
            conductance: 0.0,
            gate_on: true,
        }
    }
}

/// Rectangular sub-array of a crossbar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Partition {
    pub row_start: usize,
    pub row_count: usize,
    pub col_start: usize,
    pub col_count: usize,
}

impl Partition {
    pub fn new(row_start: usize, row_count: usize, col_start: usize, col_count: usize) -> Self {
        Self {
            row_start,
            row_count,
            col_start,
            col_count,
        }
    }

    pub fn rows(&self) -> std::ops::Range<usize> {
        self.row_start..self.row_start + self.row_count
    }

    pub fn cols(&self) -> std::ops::Range<usize> {
        self.col_start..self.col_start + self.col_count
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.row_count, self.col_count)
    }

    pub fn is_empty(&self) -> bool {
        self.row_count == 0 || self.col_count == 0
    }

    pub fn fits(&self, rows: usize, cols: usize) -> bool {
        self.row_start + self.row_count <= rows && self.col_start + self.col_count <= cols
    }

    pub fn overlaps(&self, other: &Partition) -> bool {
        if self.is_empty() || other.is_empty() {
            return false;
        }
        let r = self.row_start < other.row_start + other.row_count
            && other.row_start < self.row_start + self.row_count;
        let c = self.col_start < other.col_start + other.col_count
            && other.col_start < self.col_start + self.col_count;
        r && c
    }
}

/// Outcome of a programming operation over one partition.
#[derive(Debug, Clone, PartialEq)]
pub struct ProgramReport {
    pub partition: Partition,
    /// Conductance of every cell in the partition after the operation.
    pub achieved: Array2<f64>,
    /// Target was outside the representable range and had to be clamped.
    pub clamped: Array2<bool>,
    /// Programming cycles issued per cell (0 for untouched cells).
    pub iterations: Array2<u32>,
    /// Cells that never reached tolerance (write-and-verify only).
    pub unconverged: Vec<(usize, usize)>,
}

impl ProgramReport {
    fn empty(partition: Partition) -> Self {
        let shape = partition.shape();
        Self {
            partition,
            achieved: Array2::zeros(shape),
            clamped: Array2::from_elem(shape, false),
            iterations: Array2::zeros(shape),
            unconverged: Vec::new(),
        }
    }

    pub fn programmed_cells(&self) -> usize {
        self.iterations.iter().filter(|&&n| n > 0).count()
    }

    pub fn clamped_cells(&self) -> usize {
        self.clamped.iter().filter(|&&c| c).count()
    }

    pub fn converged_cells(&self) -> usize {
        self.programmed_cells() - self.unconverged.len()
    }
}

/// Serializable image of a crossbar (noise generator state excluded).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossbarSnapshot {
    pub rows: usize,
    pub cols: usize,
    pub rng_seed: u64,
    pub params: DeviceParams,
    pub noise: NoiseModel,
    pub conductances: Vec<f64>,
    pub gates: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct Crossbar {
    rows: usize,
    cols: usize,
    cells: Array2<MemristorCell>,
    params: DeviceParams,
    noise: NoiseModel,
    rng_seed: u64,
    rng: ChaCha8Rng,
}

impl Crossbar {
    pub fn new(
        rows: usize,
        cols: usize,
        params: DeviceParams,
        noise: NoiseModel,
        rng_seed: u64,
    ) -> Result<Self> {
        params.validate()?;
        if let Some(v) = noise.violations().first() {
            return Err(Error::InvalidDevice(v.clone()));
        }
        Ok(Self {
            rows,
            cols,
            cells: Array2::from_elem((rows, cols), MemristorCell::default()),
            params,
            noise,
            rng_seed,
            rng: ChaCha8Rng::seed_from_u64(rng_seed),
        })
    }

    /// The 128x64 reference array.
    pub fn reference(params: DeviceParams, noise: NoiseModel, rng_seed: u64) -> Result<Self> {
        Self::new(REFERENCE_ROWS, REFERENCE_COLS, params, noise, rng_seed)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn params(&self) -> &DeviceParams {
        &self.params
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn g_max(&self) -> f64 {
        self.params.g_max()
    }

    pub fn cell(&self, row: usize, col: usize) -> &MemristorCell {
        &self.cells[(row, col)]
    }

    pub fn whole(&self) -> Partition {
        Partition::new(0, self.rows, 0, self.cols)
    }

    fn check_partition(&self, p: &Partition) -> Result<()> {
        if p.fits(self.rows, self.cols) {
            Ok(())
        } else {
            Err(Error::PartitionOutOfBounds {
                partition: *p,
                rows: self.rows,
                cols: self.cols,
            })
        }
    }

    /// Turn the selector transistors of a partition on or off.
    pub fn set_gates(&mut self, p: &Partition, on: bool) -> Result<()> {
        self.check_partition(p)?;
        for r in p.rows() {
            for c in p.cols() {
                self.cells[(r, c)].gate_on = on;
            }
        }
        Ok(())
    }

    /// One set pulse on every cell with the gate held at `v_gate0`.
    pub fn init_array(&mut self) {
        let v = self.params.v_gate0;
        self.init_array_at(v);
    }

    /// One set pulse on every cell with a synchronized gate voltage.
    pub fn init_array_at(&mut self, v_gate: f64) {
        let v_gate = v_gate.clamp(self.params.v_gate_min, self.params.v_gate_max);
        let base = self.params.set_conductance(v_gate);
        for r in 0..self.rows {
            for c in 0..self.cols {
                let g = self.finish_pulse(base);
                self.cells[(r, c)].conductance = g;
            }
        }
    }

    // Programming noise, quantization and range clamping after a set pulse.
    fn finish_pulse(&mut self, g: f64) -> f64 {
        let g_max = self.params.g_max();
        let mut g = g;
        if self.noise.program_noise_abs > 0.0 {
            let n = Normal::new(0.0, self.noise.program_noise_abs).expect("validated std-dev");
            g += n.sample(&mut self.rng);
        }
        g = g.clamp(0.0, g_max);
        if let Some(levels) = self.noise.quantization_levels {
            let step = g_max / f64::from(levels - 1);
            g = ((g / step).round() * step).clamp(0.0, g_max);
        }
        g
    }

    fn check_voltages(&self, volts: &[f64]) -> Result<()> {
        let limit = self.params.v_read;
        for (line, &v) in volts.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite("read voltages"));
            }
            if v.abs() > limit {
                return Err(Error::VoltageExceedsReadLimit {
                    line,
                    volts: v,
                    limit,
                });
            }
        }
        Ok(())
    }

    fn read_noise(&self) -> Option<f64> {
        (self.noise.read_noise_rel > 0.0).then_some(self.noise.read_noise_rel)
    }

    // Effective conductance of a cell for one read.
    #[inline]
    fn sample_cell<R: rand::Rng + ?Sized>(
        cell: &MemristorCell,
        noise_rel: Option<f64>,
        rng: &mut R,
    ) -> f64 {
        if !cell.gate_on {
            return 0.0;
        }
        match noise_rel {
            None => cell.conductance,
            Some(rel) => {
                let z: f64 = rand_distr::StandardNormal.sample(rng);
                cell.conductance * (1.0 + rel * z)
            }
        }
    }

    /// Column currents for voltages applied on the partition's rows,
    /// `I_j = sum_i G_ij V_i`.
    pub fn read_mvm(&mut self, p: &Partition, row_voltages: &[f64]) -> Result<Vec<f64>> {
        let mut rng = self.rng.clone();
        let out = self.read_mvm_with(&mut rng, p, row_voltages);
        self.rng = rng;
        out
    }

    /// As [`Crossbar::read_mvm`] but drawing read noise from a caller-owned
    /// stream, so concurrent readers can share an immutable crossbar.
    pub fn read_mvm_with<R: rand::Rng + ?Sized>(
        &self,
        rng: &mut R,
        p: &Partition,
        row_voltages: &[f64],
    ) -> Result<Vec<f64>> {
        self.check_partition(p)?;
        check_len("read_mvm row voltages", p.row_count, row_voltages.len())?;
        self.check_voltages(row_voltages)?;
        let noise = self.read_noise();
        let mut currents = vec![0.0; p.col_count];
        for (i, &v) in row_voltages.iter().enumerate() {
            if v == 0.0 && noise.is_none() {
                continue;
            }
            let row = self.cells.row(p.row_start + i);
            for (j, out) in currents.iter_mut().enumerate() {
                *out += Self::sample_cell(&row[p.col_start + j], noise, rng) * v;
            }
        }
        Ok(currents)
    }

    /// Row currents for voltages applied on the partition's columns,
    /// `I_i = sum_j G_ij V_j`.
    pub fn read_mvm_transposed(&mut self, p: &Partition, col_voltages: &[f64]) -> Result<Vec<f64>> {
        let mut rng = self.rng.clone();
        let out = self.read_mvm_transposed_with(&mut rng, p, col_voltages);
        self.rng = rng;
        out
    }

    pub fn read_mvm_transposed_with<R: rand::Rng + ?Sized>(
        &self,
        rng: &mut R,
        p: &Partition,
        col_voltages: &[f64],
    ) -> Result<Vec<f64>> {
        self.check_partition(p)?;
        check_len(
            "read_mvm_transposed column voltages",
            p.col_count,
            col_voltages.len(),
        )?;
        self.check_voltages(col_voltages)?;
        let noise = self.read_noise();
        let mut currents = vec![0.0; p.row_count];
        for (i, out) in currents.iter_mut().enumerate() {
            let row = self.cells.row(p.row_start + i);
            let mut acc = 0.0;
            for (j, &v) in col_voltages.iter().enumerate() {
                acc += Self::sample_cell(&row[p.col_start + j], noise, rng) * v;
            }
            *out = acc;
        }
        Ok(currents)
    }

    /// Reset then set every masked cell toward its target conductance.
    pub fn program_two_pulse(
        &mut self,
        p: &Partition,
        targets: &Array2<f64>,
        mask: &Array2<bool>,
    ) -> Result<ProgramReport> {
        self.check_partition(p)?;
        check_shape("program_two_pulse targets", p.shape(), targets.dim())?;
        check_shape("program_two_pulse mask", p.shape(), mask.dim())?;
        let mut report = ProgramReport::empty(*p);
        for ((r, c), &selected) in mask.indexed_iter() {
            if selected {
                let (_, clamped) =
                    self.pulse_pair(p.row_start + r, p.col_start + c, targets[(r, c)])?;
                report.clamped[(r, c)] = clamped;
                report.iterations[(r, c)] = 1;
            }
        }
        report.achieved = self.read_conductances(p)?;
        Ok(report)
    }

    // Reset pulse followed by a gate-controlled set pulse on one cell.
    fn pulse_pair(&mut self, row: usize, col: usize, target: f64) -> Result<(f64, bool)> {
        if !target.is_finite() {
            return Err(Error::NonFinite("programming target"));
        }
        let g_max = self.params.g_max();
        // Reset: gate fully on at v_gate_reset, the cell returns to 0 S.
        self.cells[(row, col)].conductance = 0.0;
        let (v_gate, gate_clamped) = self.params.gate_voltage_for(target);
        let out_of_range = !(0.0..=g_max).contains(&target);
        // Inside the gate window the affine transfer returns the target itself;
        // skip the round trip through v_gate to avoid needless roundoff.
        let set = if gate_clamped || out_of_range {
            self.params.set_conductance(v_gate)
        } else {
            target
        };
        let g = self.finish_pulse(set);
        self.cells[(row, col)].conductance = g;
        Ok((g, gate_clamped || out_of_range))
    }

    /// Iterative program/verify until every cell is within `tolerance` of its
    /// target or `max_iters` cycles have been spent on it.
    pub fn program_write_verify(
        &mut self,
        p: &Partition,
        targets: &Array2<f64>,
        tolerance: f64,
        max_iters: u32,
    ) -> Result<ProgramReport> {
        let mask = Array2::from_elem(p.shape(), true);
        self.program_write_verify_masked(p, targets, &mask, tolerance, max_iters)
    }

    pub fn program_write_verify_masked(
        &mut self,
        p: &Partition,
        targets: &Array2<f64>,
        mask: &Array2<bool>,
        tolerance: f64,
        max_iters: u32,
    ) -> Result<ProgramReport> {
        self.check_partition(p)?;
        check_shape("program_write_verify targets", p.shape(), targets.dim())?;
        check_shape("program_write_verify mask", p.shape(), mask.dim())?;
        if !(tolerance > 0.0) {
            return Err(Error::InvalidDevice(format!(
                "write-verify tolerance must be positive, got {tolerance}"
            )));
        }
        if max_iters == 0 {
            return Err(Error::InvalidDevice(
                "write-verify needs max_iters >= 1".into(),
            ));
        }
        let mut report = ProgramReport::empty(*p);
        for ((r, c), &selected) in mask.indexed_iter() {
            if !selected {
                continue;
            }
            let target = targets[(r, c)];
            let (row, col) = (p.row_start + r, p.col_start + c);
            let mut converged = false;
            for iter in 1..=max_iters {
                let (g, clamped) = self.pulse_pair(row, col, target)?;
                report.clamped[(r, c)] |= clamped;
                report.iterations[(r, c)] = iter;
                // Verify read is noiseless and at read voltage, so it never disturbs.
                if (g - target).abs() <= tolerance {
                    converged = true;
                    break;
                }
            }
            if !converged {
                report.unconverged.push((r, c));
            }
        }
        report.achieved = self.read_conductances(p)?;
        Ok(report)
    }

    /// Noiseless diagnostic read of the stored conductances.
    pub fn read_conductances(&self, p: &Partition) -> Result<Array2<f64>> {
        self.check_partition(p)?;
        Ok(Array2::from_shape_fn(p.shape(), |(r, c)| {
            self.cells[(p.row_start + r, p.col_start + c)].conductance
        }))
    }

    pub fn snapshot(&self) -> CrossbarSnapshot {
        CrossbarSnapshot {
            rows: self.rows,
            cols: self.cols,
            rng_seed: self.rng_seed,
            params: self.params,
            noise: self.noise,
            conductances: self.cells.iter().map(|c| c.conductance).collect(),
            gates: self.cells.iter().map(|c| c.gate_on).collect(),
        }
    }

    /// Rebuild a crossbar from a snapshot; the noise stream restarts from the seed.
    pub fn from_snapshot(s: &CrossbarSnapshot) -> Result<Self> {
        let n = s.rows * s.cols;
        check_len("snapshot conductances", n, s.conductances.len())?;
        check_len("snapshot gates", n, s.gates.len())?;
        let mut xbar = Self::new(s.rows, s.cols, s.params, s.noise, s.rng_seed)?;
        let g_max = xbar.g_max();
        for (k, cell) in xbar.cells.iter_mut().enumerate() {
            let g = s.conductances[k];
            if !(0.0..=g_max).contains(&g) {
                return Err(Error::Format(format!(
                    "snapshot conductance {g} outside [0, {g_max}]"
                )));
            }
            cell.conductance = g;
            cell.gate_on = s.gates[k];
        }
        Ok(xbar)
    }
}

fn check_shape(
    context: &'static str,
    expected: (usize, usize),
    actual: (usize, usize),
) -> Result<()> {
    check_len(context, expected.0, actual.0)?;
    check_len(context, expected.1, actual.1)
}
