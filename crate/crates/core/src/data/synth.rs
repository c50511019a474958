//! Parametric walkers rendered to silhouettes and run through the gait
//! pipeline, as a stand-in for a real gait corpus.
//!
//! Each class is one walker (height, build, stride, arm swing, step period).
//! Each video adds nuisance: viewpoint scale, footwear, ground specks, edge
//! jitter, placement, phase and a small tempo change.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gait::{
    sequences_from_video, GaitDataset, GaitSequence, Silhouette, FRAME_COLS, FRAME_ROWS,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthGaitConfig {
    pub seed: u64,
    pub n_classes: usize,
    /// Total sequences, split evenly across classes.
    pub n_sequences: usize,
    pub test_fraction: f64,
    /// Per-row probability of a one-pixel edge jitter.
    pub edge_jitter: f64,
    /// Per-frame probability of a stray ground speck.
    pub ground_speck: f64,
}

impl Default for SynthGaitConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            n_classes: 8,
            n_sequences: 664,
            test_fraction: 0.1,
            edge_jitter: 0.15,
            ground_speck: 0.2,
        }
    }
}

impl SynthGaitConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.n_classes < 2 {
            out.push(format!("need at least 2 classes, got {}", self.n_classes));
        }
        if self.n_sequences < 2 * self.n_classes {
            out.push(format!(
                "{} sequences is too few for {} classes",
                self.n_sequences, self.n_classes
            ));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            out.push(format!(
                "test fraction must lie in (0, 1), got {}",
                self.test_fraction
            ));
        }
        for (name, p) in [
            ("edge jitter", self.edge_jitter),
            ("ground speck", self.ground_speck),
        ] {
            if !(0.0..=1.0).contains(&p) {
                out.push(format!("{name} probability must lie in [0, 1], got {p}"));
            }
        }
        out
    }
}

/// Body shape and motion of one class, in pixels and frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Walker {
    pub height: f64,
    pub head_radius: f64,
    pub torso_half_width: f64,
    pub stride: f64,
    pub arm_swing: f64,
    /// Frames per step; a full stride is two steps.
    pub step_period: f64,
    pub limb_half_width: f64,
}

/// Spread every attribute evenly over its range, with an independent seeded
/// permutation per attribute so that classes differ in all of them.
pub fn class_walkers(n_classes: usize, rng: &mut ChaCha8Rng) -> Vec<Walker> {
    let mut spread = |lo: f64, hi: f64| -> Vec<f64> {
        let mut v: Vec<f64> = (0..n_classes)
            .map(|k| lo + (hi - lo) * k as f64 / (n_classes - 1) as f64)
            .collect();
        v.shuffle(rng);
        v
    };
    let height = spread(92.0, 116.0);
    let head = spread(6.0, 10.0);
    let torso = spread(7.0, 13.0);
    let stride = spread(8.0, 18.0);
    let arm = spread(2.0, 9.0);
    let period = spread(24.0, 34.0);
    let limb = spread(2.5, 5.0);
    (0..n_classes)
        .map(|k| Walker {
            height: height[k],
            head_radius: head[k],
            torso_half_width: torso[k],
            stride: stride[k],
            arm_swing: arm[k],
            step_period: period[k],
            limb_half_width: limb[k],
        })
        .collect()
}

/// Per-video nuisance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nuisance {
    pub scale: f64,
    pub shoe_length: f64,
    pub center_col: f64,
    pub ground_row: f64,
    pub phase: f64,
    pub tempo: f64,
}

impl Nuisance {
    pub fn sample(rng: &mut ChaCha8Rng) -> Self {
        Self {
            scale: rng.random_range(0.93..1.05),
            shoe_length: if rng.random_bool(0.5) { 4.0 } else { 1.0 },
            center_col: rng.random_range(38.0..50.0),
            ground_row: rng.random_range(119.0..125.0),
            phase: rng.random_range(0.0..2.0 * PI),
            tempo: rng.random_range(0.96..1.04),
        }
    }

    pub fn neutral() -> Self {
        Self {
            scale: 1.0,
            shoe_length: 1.0,
            center_col: 44.0,
            ground_row: 122.0,
            phase: 0.0,
            tempo: 1.0,
        }
    }
}

/// Foreground intervals accumulated per row.
struct Canvas {
    rows: Vec<Vec<(f64, f64)>>,
}

impl Canvas {
    fn new() -> Self {
        Self {
            rows: vec![Vec::new(); FRAME_ROWS],
        }
    }

    fn span(&mut self, row: f64, left: f64, right: f64) {
        let r = row.round();
        if r >= 0.0 && (r as usize) < FRAME_ROWS {
            self.rows[r as usize].push((left, right));
        }
    }

    fn disk(&mut self, cr: f64, cc: f64, radius: f64) {
        let top = (cr - radius).ceil() as i64;
        let bottom = (cr + radius).floor() as i64;
        for r in top..=bottom {
            let dy = r as f64 - cr;
            let half = (radius * radius - dy * dy).max(0.0).sqrt();
            self.span(r as f64, cc - half, cc + half);
        }
    }

    /// Thick segment from (r0, c0) to (r1, c1), rows r0 < r1.
    fn limb(&mut self, r0: f64, c0: f64, r1: f64, c1: f64, half: f64) {
        let (top, bottom) = (r0.round() as i64, r1.round() as i64);
        for r in top..=bottom {
            let s = if bottom == top {
                0.0
            } else {
                (r - top) as f64 / (bottom - top) as f64
            };
            let c = c0 + s * (c1 - c0);
            self.span(r as f64, c - half, c + half);
        }
    }

    fn render(self, rng: &mut ChaCha8Rng, edge_jitter: f64) -> Silhouette {
        let mut s = Silhouette::default();
        for (r, spans) in self.rows.into_iter().enumerate() {
            for (l, rt) in spans {
                let mut lo = l.round() as i64;
                let mut hi = rt.round() as i64;
                if edge_jitter > 0.0 && rng.random_bool(edge_jitter) {
                    if rng.random_bool(0.5) {
                        lo -= 1;
                    } else {
                        hi += 1;
                    }
                }
                let lo = lo.clamp(0, FRAME_COLS as i64 - 1) as usize;
                let hi = hi.clamp(0, FRAME_COLS as i64 - 1) as usize;
                for c in lo..=hi {
                    s.set(r, c, true);
                }
            }
        }
        s
    }
}

/// Silhouette of `walker` at frame `t`.
pub fn render_frame(
    walker: &Walker,
    nuisance: &Nuisance,
    t: usize,
    edge_jitter: f64,
    ground_speck: f64,
    rng: &mut ChaCha8Rng,
) -> Silhouette {
    let k = nuisance.scale;
    let h = walker.height * k;
    let theta = PI * t as f64 / (walker.step_period * nuisance.tempo) + nuisance.phase;
    let swing = theta.sin();
    // Body rises slightly at mid-stance.
    let bob = 1.5 * theta.cos().abs();
    let ground = nuisance.ground_row;
    let top = ground - h - bob;
    let cc = nuisance.center_col;

    let head_r = walker.head_radius * k;
    let neck = top + 2.0 * head_r;
    let hip = top + 0.5 * h;
    let shoulder = neck + 0.05 * h;
    let torso = walker.torso_half_width * k;
    let limb = walker.limb_half_width * k;
    let stride = walker.stride * k;

    let mut canvas = Canvas::new();
    canvas.disk(top + head_r, cc, head_r);
    for r in neck.round() as i64..=hip.round() as i64 {
        let s = (r as f64 - neck) / (hip - neck).max(1.0);
        let half = torso * (1.0 - 0.2 * s);
        canvas.span(r as f64, cc - half, cc + half);
    }
    for side in [1.0, -1.0] {
        let foot = cc + side * stride * swing;
        canvas.limb(hip, cc + side * 0.4 * torso, ground, foot, limb);
        let toe = foot + nuisance.shoe_length * k;
        canvas.span(ground, foot - limb, toe + limb);
        let hand = cc - side * walker.arm_swing * k * swing;
        canvas.limb(
            shoulder,
            cc + side * 0.8 * torso,
            shoulder + 0.38 * h,
            hand + side * 0.6 * torso,
            0.7 * limb,
        );
    }
    if ground_speck > 0.0 && rng.random_bool(ground_speck) {
        let col = cc + rng.random_range(-(stride + 14.0)..(stride + 14.0));
        canvas.span(ground + rng.random_range(-2.0..0.5), col, col);
    }
    canvas.render(rng, edge_jitter)
}

/// A clip of two to three steps.
pub fn render_video(
    walker: &Walker,
    nuisance: &Nuisance,
    cfg: &SynthGaitConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<Silhouette> {
    let steps = rng.random_range(2.2..2.9);
    let len = (steps * walker.step_period * nuisance.tempo).round() as usize;
    (0..len)
        .map(|t| render_frame(walker, nuisance, t, cfg.edge_jitter, cfg.ground_speck, rng))
        .collect()
}

/// Labelled sequences, split per class with the test share drawn from each
/// class's last videos.
pub fn synth_gait_dataset(cfg: &SynthGaitConfig) -> Result<GaitDataset> {
    if let Some(v) = cfg.violations().into_iter().next() {
        return Err(Error::Config(v));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let walkers = class_walkers(cfg.n_classes, &mut rng);
    let quota = cfg.n_sequences / cfg.n_classes;
    let n_test = ((quota as f64 * cfg.test_fraction).round() as usize).clamp(1, quota - 1);

    let mut train = Vec::new();
    let mut test = Vec::new();
    for (label, walker) in walkers.iter().enumerate() {
        let mut seqs: Vec<GaitSequence> = Vec::with_capacity(quota + 4);
        let mut videos = 0;
        while seqs.len() < quota {
            videos += 1;
            if videos > 50 * quota {
                return Err(Error::Data(format!("class {label} yields no sequences")));
            }
            let nuisance = Nuisance::sample(&mut rng);
            let video = render_video(walker, &nuisance, cfg, &mut rng);
            seqs.extend(sequences_from_video(&video, label)?);
        }
        seqs.truncate(quota);
        test.extend(seqs.split_off(quota - n_test));
        train.extend(seqs);
    }
    Ok(GaitDataset {
        n_classes: cfg.n_classes,
        train,
        test,
    })
}
