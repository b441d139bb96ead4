//! Pairwise reference-game losses.

use std::fmt;
use std::str::FromStr;

use crate::model::sigmoid;

/// Scores are clipped to `[SCORE_CLIP, 1 - SCORE_CLIP]` before any logarithm.
pub const SCORE_CLIP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// Independent per-candidate BCE against labels `(1-ε, ε)`.
    SmoothedBce,
    /// Cross-entropy of a softmax over the two candidate logits, with the
    /// same smoothed targets.
    PairedSoftmax,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::SmoothedBce => "smoothed_bce",
            LossKind::PairedSoftmax => "paired_softmax",
        })
    }
}

impl FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "smoothed_bce" => Ok(LossKind::SmoothedBce),
            "paired_softmax" => Ok(LossKind::PairedSoftmax),
            other => Err(format!(
                "unknown loss {other:?}; allowed: smoothed_bce, paired_softmax"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub kind: LossKind,
    pub smoothing: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            kind: LossKind::SmoothedBce,
            smoothing: 0.2,
        }
    }
}

fn clip(p: f64) -> f64 {
    p.clamp(SCORE_CLIP, 1.0 - SCORE_CLIP)
}

/// `-[y ln p + (1-y) ln(1-p)]` with `p` clipped.
pub fn bce(p: f64, y: f64) -> f64 {
    let p = clip(p);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// `BCE(s_t, 1-ε) + BCE(s_d, ε)` for one instance.
pub fn smoothed_bce(s_target: f64, s_distractor: f64, smoothing: f64) -> f64 {
    bce(s_target, 1.0 - smoothing) + bce(s_distractor, smoothing)
}

/// Mean of [`smoothed_bce`] over a batch.
pub fn smoothed_bce_mean(scores: &[(f64, f64)], smoothing: f64) -> f64 {
    let total: f64 = scores
        .iter()
        .map(|&(t, d)| smoothed_bce(t, d, smoothing))
        .sum();
    total / scores.len() as f64
}

/// Gradient of [`smoothed_bce`] w.r.t. the two scores. Zero where a score is
/// clipped.
pub fn smoothed_bce_score_grad(s_target: f64, s_distractor: f64, smoothing: f64) -> (f64, f64) {
    let g = |p: f64, y: f64| {
        if !(SCORE_CLIP..=1.0 - SCORE_CLIP).contains(&p) {
            0.0
        } else {
            (p - y) / (p * (1.0 - p))
        }
    };
    (g(s_target, 1.0 - smoothing), g(s_distractor, smoothing))
}

/// Loss for one instance from the two candidate logits, with its gradient
/// w.r.t. each logit.
pub fn pair_loss(z_target: f64, z_distractor: f64, cfg: &LossConfig) -> (f64, f64, f64) {
    let (y_t, y_d) = (1.0 - cfg.smoothing, cfg.smoothing);
    match cfg.kind {
        LossKind::SmoothedBce => {
            let (s_t, s_d) = (sigmoid(z_target), sigmoid(z_distractor));
            let loss = smoothed_bce(s_t, s_d, cfg.smoothing);
            let g = |s: f64, y: f64| {
                if !(SCORE_CLIP..=1.0 - SCORE_CLIP).contains(&s) {
                    0.0
                } else {
                    s - y
                }
            };
            (loss, g(s_t, y_t), g(s_d, y_d))
        }
        LossKind::PairedSoftmax => {
            let m = z_target.max(z_distractor);
            let log_z = m + ((z_target - m).exp() + (z_distractor - m).exp()).ln();
            let (lp_t, lp_d) = (z_target - log_z, z_distractor - log_z);
            let loss = -(y_t * lp_t + y_d * lp_d);
            (loss, lp_t.exp() - y_t, lp_d.exp() - y_d)
        }
    }
}
