//! Synthetic two-actor corpora with a known style relationship.
//!
//! Each coefficient `k` of frame `f` is
//!
//! ```text
//! x_k(f) = gain_k · (p_k(f) + noise · n_k(f)) + offset_k
//! ```
//!
//! where `p_k` is a sum of cosines for the ten mouth coefficients (shifted
//! in phase by `2πk/10` per coefficient so the mouth vector changes
//! direction over time) and zero elsewhere, and `n_k` is unit-variance
//! Gaussian noise smoothed by a first-order filter with the given half-life.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Expr, ExpressionSequence, MouthIndexSet, NormStats, EXPR_DIM, MOUTH_COUNT};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sinusoid {
    pub amplitude: f64,
    /// Cycles per frame, in `(0, 0.5)`.
    pub frequency: f64,
    /// Radians.
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StyleSpec {
    pub gain: Vec<f64>,
    pub offset: Vec<f64>,
    /// Noise smoothing half-life in frames; 0 gives white noise.
    pub half_life: f64,
    pub mouth_pattern: Vec<Sinusoid>,
    pub noise: f64,
}

impl Default for StyleSpec {
    fn default() -> Self {
        Self {
            gain: vec![1.0; EXPR_DIM],
            offset: vec![0.0; EXPR_DIM],
            half_life: 10.0,
            mouth_pattern: vec![
                Sinusoid {
                    amplitude: 1.0,
                    frequency: 0.04,
                    phase: 0.0,
                },
                Sinusoid {
                    amplitude: 0.5,
                    frequency: 0.11,
                    phase: 1.0,
                },
                Sinusoid {
                    amplitude: 0.25,
                    frequency: 0.23,
                    phase: 2.0,
                },
            ],
            noise: 0.3,
        }
    }
}

impl StyleSpec {
    /// Default spec with every mouth gain set to `g`.
    pub fn with_mouth_gain(g: f64) -> Self {
        let mut s = Self::default();
        s.gain[..MOUTH_COUNT].iter_mut().for_each(|x| *x = g);
        s
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("gain", &self.gain), ("offset", &self.offset)] {
            if v.len() != EXPR_DIM {
                return Err(Error::StyleSpec(format!("{name} has {} entries, expected {EXPR_DIM}", v.len())));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::StyleSpec(format!("{name} is not finite")));
            }
        }
        if let Some(k) = self.gain.iter().position(|&g| g <= 0.0) {
            return Err(Error::StyleSpec(format!("gain[{k}] must be positive")));
        }
        if !(self.half_life >= 0.0 && self.half_life.is_finite()) {
            return Err(Error::StyleSpec(format!("half_life must be >= 0, got {}", self.half_life)));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::StyleSpec(format!("noise must be >= 0, got {}", self.noise)));
        }
        for (i, s) in self.mouth_pattern.iter().enumerate() {
            if !(s.frequency > 0.0 && s.frequency < 0.5) {
                return Err(Error::StyleSpec(format!(
                    "mouth_pattern[{i}].frequency must lie in (0, 0.5), got {}",
                    s.frequency
                )));
            }
            if !(s.amplitude.is_finite() && s.phase.is_finite()) {
                return Err(Error::StyleSpec(format!("mouth_pattern[{i}] is not finite")));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Self = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Noiseless activity of coefficient `k` at frame `f`.
    fn pattern(&self, k: usize, f: usize) -> f64 {
        if k >= MOUTH_COUNT {
            return 0.0;
        }
        let shift = 2.0 * PI * k as f64 / MOUTH_COUNT as f64;
        self.mouth_pattern
            .iter()
            .map(|s| s.amplitude * (2.0 * PI * s.frequency * f as f64 + s.phase + shift).cos())
            .sum()
    }
}

/// Shared underlying content: white Gaussian draws for every frame and
/// coefficient. Styles differ only in how they render it.
struct Content {
    white: Vec<Expr>,
}

impl Content {
    fn new(frames: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let white = (0..frames)
            .map(|_| std::array::from_fn(|_| StandardNormal.sample(&mut rng)))
            .collect();
        Self { white }
    }

    /// Renders frames `[start, end)`; the noise filter runs from frame 0 so
    /// every range sees the same noise trajectory.
    fn render(&self, spec: &StyleSpec, start: usize, end: usize) -> ExpressionSequence {
        let a = if spec.half_life > 0.0 {
            0.5f64.powf(1.0 / spec.half_life)
        } else {
            0.0
        };
        let b = (1.0 - a * a).sqrt();
        let mut n = self.white[0];
        let mut frames = Vec::with_capacity(end - start);
        for f in 0..end {
            if f > 0 {
                for (nk, w) in n.iter_mut().zip(&self.white[f]) {
                    *nk = a * *nk + b * w;
                }
            }
            if f >= start {
                frames.push(std::array::from_fn(|k| {
                    spec.gain[k] * (spec.pattern(k, f) + spec.noise * n[k]) + spec.offset[k]
                }));
            }
        }
        ExpressionSequence::new(frames)
    }
}

pub fn gen_corpus(spec: &StyleSpec, frames: usize, seed: u64) -> Result<ExpressionSequence> {
    spec.validate()?;
    if frames < 2 {
        return Err(Error::TooFewFrames { frames, min: 2 });
    }
    Ok(Content::new(frames, seed).render(spec, 0, frames))
}

/// Two unpaired corpora plus the ground-truth pairing for evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleCorpora {
    /// Content frames `[0, F)` in the source style.
    pub source: ExpressionSequence,
    /// Content frames `[F, 2F)` in the target style; shares no time steps
    /// with `source`.
    pub target: ExpressionSequence,
    /// Content frames `[0, F)` in the target style: what a perfect
    /// translation of `source` would produce, frame for frame.
    pub oracle: ExpressionSequence,
}

pub fn paired_style_corpora(content_seed: u64, spec_src: &StyleSpec, spec_tgt: &StyleSpec, frames: usize) -> Result<StyleCorpora> {
    spec_src.validate()?;
    spec_tgt.validate()?;
    if frames < 2 {
        return Err(Error::TooFewFrames { frames, min: 2 });
    }
    let content = Content::new(2 * frames, content_seed);
    Ok(StyleCorpora {
        source: content.render(spec_src, 0, frames),
        target: content.render(spec_tgt, frames, 2 * frames),
        oracle: content.render(spec_tgt, 0, frames),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleMetrics {
    /// Mean over frames of the cosine between source and translated mouth vectors.
    pub mouth_cosine: f64,
    /// Per mouth coefficient RMS(translated) / RMS(source), averaged.
    pub amplitude_ratio: f64,
    /// Mean over coefficients of |mean(translated) − target mean|.
    pub mean_distance: f64,
    /// Mean over coefficients of |var(translated) − target variance|.
    pub variance_distance: f64,
    /// Frames whose mouth vectors were too small for a cosine; they count as 0.
    pub degenerate_frames: usize,
    /// Mean mouth cosine between translated and oracle frames.
    pub oracle_cosine: Option<f64>,
    /// Root-mean-square difference to the oracle over all coefficients.
    pub oracle_rmse: Option<f64>,
}

const EVAL_COS_EPS: f64 = 1e-8;

fn mouth(f: &Expr, m: &MouthIndexSet) -> [f64; MOUTH_COUNT] {
    m.indices().map(|k| f[k])
}

fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na < EVAL_COS_EPS || nb < EVAL_COS_EPS {
        return None;
    }
    Some(a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb))
}

fn mean_mouth_cosine(a: &[Expr], b: &[Expr], m: &MouthIndexSet) -> (f64, usize) {
    let mut sum = 0.0;
    let mut degenerate = 0;
    for (x, y) in a.iter().zip(b) {
        match cosine(&mouth(x, m), &mouth(y, m)) {
            Some(c) => sum += c,
            None => degenerate += 1,
        }
    }
    (sum / a.len() as f64, degenerate)
}

fn rms(frames: &[Expr], k: usize) -> f64 {
    (frames.iter().map(|f| f[k] * f[k]).sum::<f64>() / frames.len() as f64).sqrt()
}

pub fn eval_style(
    source: &ExpressionSequence,
    translated: &ExpressionSequence,
    target_stats: &NormStats,
    oracle: Option<&ExpressionSequence>,
    m: &MouthIndexSet,
) -> Result<StyleMetrics> {
    if source.len() != translated.len() {
        return Err(Error::Length {
            expected: source.len(),
            actual: translated.len(),
        });
    }
    if source.is_empty() {
        return Err(Error::TooFewFrames { frames: 0, min: 1 });
    }
    target_stats.validate()?;
    let (mouth_cosine, degenerate_frames) = mean_mouth_cosine(&source.frames, &translated.frames, m);
    let amplitude_ratio = m
        .indices()
        .iter()
        .map(|&k| rms(&translated.frames, k) / rms(&source.frames, k))
        .sum::<f64>()
        / MOUTH_COUNT as f64;

    let n = translated.len() as f64;
    let (mut mean_distance, mut variance_distance) = (0.0, 0.0);
    for k in 0..EXPR_DIM {
        let mean = translated.frames.iter().map(|f| f[k]).sum::<f64>() / n;
        let var = translated.frames.iter().map(|f| (f[k] - mean).powi(2)).sum::<f64>() / n;
        mean_distance += (mean - target_stats.mean[k]).abs();
        variance_distance += (var - target_stats.std[k].powi(2)).abs();
    }
    mean_distance /= EXPR_DIM as f64;
    variance_distance /= EXPR_DIM as f64;

    let (oracle_cosine, oracle_rmse) = match oracle {
        Some(o) => {
            if o.len() != translated.len() {
                return Err(Error::Length {
                    expected: translated.len(),
                    actual: o.len(),
                });
            }
            let (c, _) = mean_mouth_cosine(&o.frames, &translated.frames, m);
            let sq = o
                .frames
                .iter()
                .flatten()
                .zip(translated.frames.iter().flatten())
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>();
            (Some(c), Some((sq / (n * EXPR_DIM as f64)).sqrt()))
        }
        None => (None, None),
    };

    Ok(StyleMetrics {
        mouth_cosine,
        amplitude_ratio,
        mean_distance,
        variance_distance,
        degenerate_frames,
        oracle_cosine,
        oracle_rmse,
    })
}
