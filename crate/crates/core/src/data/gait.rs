//! Silhouette preprocessing: width profiles, rebinning, gait-cycle detection
//! and segmentation into fixed-length sequences.

use std::fmt::Write as _;
use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

pub const FRAME_ROWS: usize = 128;
pub const FRAME_COLS: usize = 88;
pub const FEATURE_DIM: usize = 50;
pub const SEQUENCE_LEN: usize = 25;
/// Harmonic pairs kept by the cycle-detection low-pass.
pub const CYCLE_HARMONICS: usize = 3;
pub const MIN_CYCLE_SIGNAL: usize = 8;

/// Binary 128 x 88 bitmap, row-major, `true` is foreground.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Silhouette {
    pixels: Vec<bool>,
}

impl Default for Silhouette {
    fn default() -> Self {
        Self {
            pixels: vec![false; FRAME_ROWS * FRAME_COLS],
        }
    }
}

impl Silhouette {
    pub fn from_fn(mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut s = Self::default();
        for r in 0..FRAME_ROWS {
            for c in 0..FRAME_COLS {
                s.pixels[r * FRAME_COLS + c] = f(r, c);
            }
        }
        s
    }

    pub fn from_pixels(rows: usize, cols: usize, pixels: Vec<bool>) -> Result<Self> {
        if rows != FRAME_ROWS || cols != FRAME_COLS || pixels.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                context: "silhouette pixels",
                expected: FRAME_ROWS * FRAME_COLS,
                actual: if rows * cols == pixels.len() {
                    rows * cols
                } else {
                    pixels.len()
                },
            });
        }
        Ok(Self { pixels })
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.pixels[row * FRAME_COLS + col]
    }

    pub fn set(&mut self, row: usize, col: usize, on: bool) {
        self.pixels[row * FRAME_COLS + col] = on;
    }

    pub fn foreground(&self) -> usize {
        self.pixels.iter().filter(|&&p| p).count()
    }

    /// Plain (P1) portable bitmap.
    pub fn to_pbm(&self) -> String {
        let mut s = format!("P1\n{FRAME_COLS} {FRAME_ROWS}\n");
        for row in self.pixels.chunks(FRAME_COLS) {
            let line: Vec<&str> = row.iter().map(|&p| if p { "1" } else { "0" }).collect();
            let _ = writeln!(s, "{}", line.join(" "));
        }
        s
    }

    /// Parse a plain (P1) or raw (P4) portable bitmap.
    pub fn from_pbm(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("pbm: {m}"));
        let mut pos = 0;
        let token = |pos: &mut usize| -> Option<String> {
            loop {
                while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                    *pos += 1;
                }
                if *pos < bytes.len() && bytes[*pos] == b'#' {
                    while *pos < bytes.len() && bytes[*pos] != b'\n' {
                        *pos += 1;
                    }
                    continue;
                }
                break;
            }
            let start = *pos;
            while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            (start < *pos).then(|| String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
        };
        let magic = token(&mut pos).ok_or_else(|| bad("empty input"))?;
        let dim = |pos: &mut usize| -> Result<usize> {
            token(pos)
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| bad("bad dimensions"))
        };
        let cols = dim(&mut pos)?;
        let rows = dim(&mut pos)?;
        let n = rows * cols;
        let pixels = match magic.as_str() {
            "P1" => {
                let mut px = Vec::with_capacity(n);
                while px.len() < n {
                    while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                        pos += 1;
                    }
                    match bytes.get(pos) {
                        Some(b'0') => px.push(false),
                        Some(b'1') => px.push(true),
                        _ => return Err(bad("truncated or invalid pixel data")),
                    }
                    pos += 1;
                }
                px
            }
            "P4" => {
                pos += 1; // single whitespace after the header
                let stride = cols.div_ceil(8);
                let data = bytes
                    .get(pos..pos + stride * rows)
                    .ok_or_else(|| bad("truncated raster"))?;
                let mut px = Vec::with_capacity(n);
                for r in 0..rows {
                    for c in 0..cols {
                        px.push(data[r * stride + c / 8] & (0x80 >> (c % 8)) != 0);
                    }
                }
                px
            }
            _ => return Err(bad("unsupported magic number")),
        };
        Self::from_pixels(rows, cols, pixels)
    }

    pub fn read_pbm(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_pbm(&std::fs::read(path)?)
    }
}

/// Per-row extent of the foreground, leftmost to rightmost inclusive.
pub fn width_profile(frame: &Silhouette) -> Vec<f64> {
    frame
        .pixels
        .chunks(FRAME_COLS)
        .map(
            |row| match (row.iter().position(|&p| p), row.iter().rposition(|&p| p)) {
                (Some(l), Some(r)) => (r - l + 1) as f64,
                _ => 0.0,
            },
        )
        .collect()
}

/// Area-weighted rebinning of a piecewise-constant signal onto `out_len`
/// equal bins. Each output is the mean of the input it covers.
pub fn rebin(input: &[f64], out_len: usize) -> Vec<f64> {
    let n = input.len();
    if n == 0 || out_len == 0 {
        return vec![0.0; out_len];
    }
    let width = n as f64 / out_len as f64;
    (0..out_len)
        .map(|j| {
            let lo = j as f64 * width;
            let hi = if j + 1 == out_len {
                n as f64
            } else {
                lo + width
            };
            let mut acc = 0.0;
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(n);
            for (i, v) in input.iter().enumerate().take(last).skip(first) {
                let overlap = hi.min(i as f64 + 1.0) - lo.max(i as f64);
                if overlap > 0.0 {
                    acc += overlap * v;
                }
            }
            acc / (hi - lo)
        })
        .collect()
}

/// 128 width rows down to 50 features.
pub fn downsample_profile(profile: &[f64]) -> Result<Vec<f64>> {
    crate::error::check_len("width profile", FRAME_ROWS, profile.len())?;
    Ok(rebin(profile, FEATURE_DIM))
}

/// Keep the DC bin and the lowest `harmonics` frequency pairs.
pub fn low_pass(signal: &[f64], harmonics: usize) -> Vec<f64> {
    let n = signal.len();
    let mut buf: Vec<Complex<f64>> = signal.iter().map(|&v| Complex::new(v, 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, b) in buf.iter_mut().enumerate() {
        if k.min(n - k) > harmonics {
            *b = Complex::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|c| c.re / n as f64).collect()
}

/// Frames at which a gait cycle begins: interior local minima of the
/// low-passed per-frame total width.
pub fn detect_gait_cycles(total_widths: &[f64]) -> Result<Vec<usize>> {
    let n = total_widths.len();
    if n < MIN_CYCLE_SIGNAL {
        return Err(Error::SignalTooShort {
            len: n,
            min: MIN_CYCLE_SIGNAL,
        });
    }
    let mean = total_widths.iter().sum::<f64>() / n as f64;
    let (lo, hi) = total_widths
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    if hi - lo <= 1e-9 * mean.abs().max(1.0) {
        return Ok(Vec::new());
    }
    let s = low_pass(total_widths, CYCLE_HARMONICS);
    Ok((1..n - 1)
        .filter(|&t| s[t] < s[t - 1] && s[t] <= s[t + 1])
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaitSequence {
    /// `SEQUENCE_LEN` frames of `FEATURE_DIM` features.
    pub frames: Vec<Vec<f64>>,
    pub label: usize,
}

impl GaitSequence {
    pub fn new(frames: Vec<Vec<f64>>, label: usize) -> Result<Self> {
        crate::error::check_len("sequence frames", SEQUENCE_LEN, frames.len())?;
        for f in &frames {
            crate::error::check_len("frame features", FEATURE_DIM, f.len())?;
        }
        Ok(Self { frames, label })
    }
}

/// Windows of `SEQUENCE_LEN` frames starting at frame 0 and at every cycle
/// boundary; windows running past the end are dropped.
pub fn segment_sequences(
    frames: &[Vec<f64>],
    boundaries: &[usize],
    label: usize,
) -> Vec<GaitSequence> {
    let mut starts = vec![0];
    starts.extend_from_slice(boundaries);
    starts.sort_unstable();
    starts.dedup();
    starts
        .into_iter()
        .filter(|&s| s + SEQUENCE_LEN <= frames.len())
        .map(|s| GaitSequence {
            frames: frames[s..s + SEQUENCE_LEN].to_vec(),
            label,
        })
        .collect()
}

/// Per-frame features (downsampled widths scaled by the frame width) and the
/// per-frame total width.
pub fn video_features(video: &[Silhouette]) -> (Vec<Vec<f64>>, Vec<f64>) {
    video
        .iter()
        .map(|frame| {
            let w = width_profile(frame);
            let total: f64 = w.iter().sum();
            let feats = rebin(&w, FEATURE_DIM)
                .into_iter()
                .map(|v| v / FRAME_COLS as f64)
                .collect();
            (feats, total)
        })
        .unzip()
}

/// The whole pipeline for one labelled video.
pub fn sequences_from_video(video: &[Silhouette], label: usize) -> Result<Vec<GaitSequence>> {
    let (features, totals) = video_features(video);
    let boundaries = detect_gait_cycles(&totals)?;
    Ok(segment_sequences(&features, &boundaries, label))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaitDataset {
    pub n_classes: usize,
    pub train: Vec<GaitSequence>,
    pub test: Vec<GaitSequence>,
}

const DATASET_MAGIC: &str = "# memlstm gait dataset v1";

impl GaitDataset {
    /// One line per sequence: split, label, then the frames flattened.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{DATASET_MAGIC} classes {} frames {SEQUENCE_LEN} features {FEATURE_DIM}",
            self.n_classes
        );
        for (split, seqs) in [("train", &self.train), ("test", &self.test)] {
            for q in seqs {
                let _ = write!(s, "{split} {}", q.label);
                for v in q.frames.iter().flatten() {
                    let _ = write!(s, " {v:e}");
                }
                s.push('\n');
            }
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |m: String| Error::Format(format!("gait dataset: {m}"));
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        let rest = header
            .strip_prefix(DATASET_MAGIC)
            .ok_or_else(|| bad("missing header".into()))?;
        let fields: Vec<&str> = rest.split_whitespace().collect();
        let dims = ["frames", "25", "features", "50"];
        if fields.len() != 6 || fields[0] != "classes" || fields[2..] != dims {
            return Err(bad(format!("unsupported header `{header}`")));
        }
        let n_classes: usize = fields[1]
            .parse()
            .map_err(|_| bad("bad class count".into()))?;
        let mut ds = GaitDataset {
            n_classes,
            train: Vec::new(),
            test: Vec::new(),
        };
        for (no, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let mut tok = line.split_whitespace();
            let split = tok.next().unwrap_or_default();
            let label: usize = tok
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| bad(format!("record {no}: bad label")))?;
            if label >= n_classes {
                return Err(bad(format!("record {no}: label {label} out of range")));
            }
            let values: Vec<f64> = tok
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad(format!("record {no}: bad value")))?;
            if values.len() != SEQUENCE_LEN * FEATURE_DIM {
                return Err(bad(format!("record {no}: {} values", values.len())));
            }
            let seq = GaitSequence {
                frames: values.chunks(FEATURE_DIM).map(<[f64]>::to_vec).collect(),
                label,
            };
            match split {
                "train" => ds.train.push(seq),
                "test" => ds.test.push(seq),
                other => return Err(bad(format!("record {no}: unknown split `{other}`"))),
            }
        }
        Ok(ds)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Rescales each feature dimension so its training-split range maps onto
    /// `[lo, hi]`. Test values are clamped to the same range; a dimension that
    /// is constant in training maps to the midpoint.
    pub fn scale_features(&mut self, lo: f64, hi: f64) -> Result<()> {
        if !(lo < hi && lo.is_finite() && hi.is_finite()) {
            return Err(Error::Config(format!("bad feature range [{lo}, {hi}]")));
        }
        if self.train.is_empty() {
            return Err(Error::Data(
                "no training sequences to fit feature ranges".into(),
            ));
        }
        let mut min = vec![f64::INFINITY; FEATURE_DIM];
        let mut max = vec![f64::NEG_INFINITY; FEATURE_DIM];
        for frame in self.train.iter().flat_map(|s| &s.frames) {
            for (d, &v) in frame.iter().enumerate() {
                min[d] = min[d].min(v);
                max[d] = max[d].max(v);
            }
        }
        let map = |d: usize, v: f64| {
            let span = max[d] - min[d];
            if span <= f64::EPSILON * max[d].abs().max(1.0) {
                0.5 * (lo + hi)
            } else {
                (lo + (v - min[d]) / span * (hi - lo)).clamp(lo, hi)
            }
        };
        for frame in self
            .train
            .iter_mut()
            .chain(self.test.iter_mut())
            .flat_map(|s| s.frames.iter_mut())
        {
            for (d, v) in frame.iter_mut().enumerate() {
                *v = map(d, *v);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn width_profile_edge_cases() {
        assert!(width_profile(&Silhouette::default())
            .iter()
            .all(|&w| w == 0.0));
        assert!(width_profile(&Silhouette::from_fn(|_, _| true))
            .iter()
            .all(|&w| w == 88.0));
        let s = Silhouette::from_fn(|r, c| r == 3 && (c == 10 || c == 20));
        let w = width_profile(&s);
        assert_eq!(w[3], 11.0);
        assert_eq!(w.iter().sum::<f64>(), 11.0);
    }

    #[test]
    fn width_profile_matches_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let (cr, cc, rad) = (
                rng.random_range(20.0..100.0),
                rng.random_range(20.0..68.0),
                rng.random_range(3.0..30.0f64),
            );
            let s = Silhouette::from_fn(|r, c| {
                let (dr, dc) = (r as f64 - cr, (c as f64 - cc) * 1.7);
                dr * dr + dc * dc < rad * rad || (r * 7 + c * 3) % 97 == 0
            });
            let w = width_profile(&s);
            for (r, &wr) in w.iter().enumerate() {
                let on: Vec<usize> = (0..FRAME_COLS).filter(|&c| s.get(r, c)).collect();
                let expect = match (on.first(), on.last()) {
                    (Some(a), Some(b)) => (b - a + 1) as f64,
                    _ => 0.0,
                };
                assert_eq!(wr, expect);
            }
        }
    }

    #[test]
    fn pixel_dimensions_checked() {
        assert!(Silhouette::from_pixels(128, 87, vec![false; 128 * 87]).is_err());
        assert!(Silhouette::from_pixels(128, 88, vec![false; 10]).is_err());
        assert!(downsample_profile(&[0.0; 127]).is_err());
    }

    #[test]
    fn pbm_round_trip_plain_and_raw() {
        let s = Silhouette::from_fn(|r, c| (r + 2 * c) % 5 == 0);
        assert_eq!(Silhouette::from_pbm(s.to_pbm().as_bytes()).unwrap(), s);

        let stride = FRAME_COLS.div_ceil(8);
        let mut raw = format!("P4\n# comment\n{FRAME_COLS} {FRAME_ROWS}\n").into_bytes();
        let mut data = vec![0u8; stride * FRAME_ROWS];
        for r in 0..FRAME_ROWS {
            for c in 0..FRAME_COLS {
                if s.get(r, c) {
                    data[r * stride + c / 8] |= 0x80 >> (c % 8);
                }
            }
        }
        raw.extend(data);
        assert_eq!(Silhouette::from_pbm(&raw).unwrap(), s);
        assert!(Silhouette::from_pbm(b"P1\n2 2\n0 1 1 0\n").is_err());
        assert!(Silhouette::from_pbm(b"P2\n88 128\n").is_err());
    }

    /// Integral of the piecewise-constant signal from 0 to `x`.
    fn cumulative(v: &[f64], x: f64) -> f64 {
        let k = (x.floor() as usize).min(v.len());
        let whole: f64 = v[..k].iter().sum();
        whole
            + if k < v.len() {
                (x - k as f64) * v[k]
            } else {
                0.0
            }
    }

    #[test]
    fn rebin_matches_integral_oracle() {
        let ramp: Vec<f64> = (0..128).map(|i| i as f64).collect();
        let out = downsample_profile(&ramp).unwrap();
        let w = 128.0 / 50.0;
        for (j, &o) in out.iter().enumerate() {
            let (lo, hi) = (j as f64 * w, (j as f64 + 1.0) * w);
            let want = (cumulative(&ramp, hi.min(128.0)) - cumulative(&ramp, lo)) / w;
            assert!((o - want).abs() < 1e-10, "bin {j}: {o} vs {want}");
        }
    }

    #[test]
    fn rebin_preserves_constants_and_mass() {
        assert!(downsample_profile(&[7.5; 128])
            .unwrap()
            .iter()
            .all(|&v| (v - 7.5).abs() < 1e-12));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Vec<f64> = (0..128).map(|_| rng.random_range(0.0..88.0)).collect();
        let y = downsample_profile(&x).unwrap();
        let mass: f64 = x.iter().sum();
        assert!((y.iter().sum::<f64>() * 128.0 / 50.0 - mass).abs() < 1e-10);
    }

    fn sinusoid(n: usize, period: f64, phase: f64) -> Vec<f64> {
        (0..n)
            .map(|t| 100.0 + 20.0 * (2.0 * std::f64::consts::PI * t as f64 / period + phase).sin())
            .collect()
    }

    #[test]
    fn sinusoid_cycles_are_one_period_apart() {
        for (n, p) in [(90, 30.0), (75, 25.0), (80, 27.0), (64, 21.0)] {
            let b = detect_gait_cycles(&sinusoid(n, p, 0.4)).unwrap();
            assert!(b.len() >= 2, "n={n} p={p}: {b:?}");
            for w in b.windows(2) {
                assert!(
                    ((w[1] - w[0]) as f64 - p).abs() <= 1.0,
                    "n={n} p={p}: {b:?}"
                );
            }
        }
    }

    #[test]
    fn constant_and_short_signals() {
        assert!(detect_gait_cycles(&[5.0; 40]).unwrap().is_empty());
        assert!(matches!(
            detect_gait_cycles(&[1.0; 7]),
            Err(Error::SignalTooShort { len: 7, min: 8 })
        ));
    }

    #[test]
    fn noisy_sinusoid_keeps_boundaries() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        // Noise at 10% of the oscillation amplitude.
        let noise = rand_distr::Normal::new(0.0, 2.0).unwrap();
        let clean = sinusoid(90, 30.0, 1.1);
        let reference = detect_gait_cycles(&clean).unwrap();
        for _ in 0..50 {
            let noisy: Vec<f64> = clean.iter().map(|v| v + rng.sample(noise)).collect();
            let b = detect_gait_cycles(&noisy).unwrap();
            assert_eq!(b.len(), reference.len());
            for (x, y) in b.iter().zip(&reference) {
                assert!(x.abs_diff(*y) <= 1);
            }
        }
    }

    fn frames(n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|t| vec![t as f64; FEATURE_DIM]).collect()
    }

    #[test]
    fn segmentation_examples() {
        let s = segment_sequences(&frames(50), &[0, 25], 3);
        assert_eq!(s.len(), 2);
        assert_eq!(s[1].frames[0][0], 25.0);
        assert_eq!(s[0].label, 3);
        let s = segment_sequences(&frames(30), &[10], 0);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].frames[24][0], 24.0);
        assert!(segment_sequences(&frames(24), &[], 0).is_empty());
    }

    #[test]
    fn dataset_text_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut seq = |label| GaitSequence {
            frames: (0..SEQUENCE_LEN)
                .map(|_| (0..FEATURE_DIM).map(|_| rng.random::<f64>()).collect())
                .collect(),
            label,
        };
        let ds = GaitDataset {
            n_classes: 8,
            train: vec![seq(0), seq(7)],
            test: vec![seq(4)],
        };
        assert_eq!(GaitDataset::parse(&ds.to_text()).unwrap(), ds);
        let broken = ds.to_text().replace("test 4", "test 9");
        assert!(GaitDataset::parse(&broken).is_err());
    }

    #[test]
    fn feature_scaling_uses_training_ranges() {
        let seq = |v: f64, label| GaitSequence {
            frames: vec![
                (0..FEATURE_DIM)
                    .map(|d| if d == 0 { 0.4 } else { v })
                    .collect();
                SEQUENCE_LEN
            ],
            label,
        };
        let mut ds = GaitDataset {
            n_classes: 2,
            train: vec![seq(0.1, 0), seq(0.3, 1)],
            test: vec![seq(0.2, 0), seq(0.9, 1)],
        };
        ds.scale_features(-1.0, 1.0).unwrap();
        assert_eq!(ds.train[0].frames[3][1], -1.0);
        assert_eq!(ds.train[1].frames[3][1], 1.0);
        assert!(ds.test[0].frames[0][1].abs() < 1e-12);
        assert_eq!(ds.test[1].frames[0][1], 1.0);
        assert!(ds
            .train
            .iter()
            .chain(&ds.test)
            .all(|s| s.frames[0][0] == 0.0));
        assert!(ds.scale_features(1.0, -1.0).is_err());
    }
}
