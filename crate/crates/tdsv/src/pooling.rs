//! Maxpooling on attention weights.
//!
//! Sliding-window pooling keeps, within each window, only the largest weight
//! (earliest index on ties); global top-K keeps the K largest overall.
//! Surviving weights are renormalized to sum 1 by default, so the d-vector
//! stays a convex combination. During training the pooling mask is treated
//! as a constant, so gradients flow only through the survivors.

use crate::autodiff::{NodeId, Tape, Value};
use crate::error::ConfigError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolingKind {
    None,
    SlidingWindow { window: usize, step: usize },
    TopK { k: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolingConfig {
    pub kind: PoolingKind,
    pub renormalize: bool,
}

impl Default for PoolingConfig {
    fn default() -> Self {
        PoolingConfig { kind: PoolingKind::None, renormalize: true }
    }
}

impl PoolingConfig {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn sliding(window: usize, step: usize) -> Self {
        PoolingConfig { kind: PoolingKind::SlidingWindow { window, step }, renormalize: true }
    }

    pub fn top_k(k: usize) -> Self {
        PoolingConfig { kind: PoolingKind::TopK { k }, renormalize: true }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        match self.kind {
            PoolingKind::None => Ok(()),
            PoolingKind::SlidingWindow { window, step } => {
                if window == 0 || step == 0 {
                    Err(ConfigError::Invalid("pooling window and step must be >= 1".into()))
                } else if step > window {
                    // windows would skip frames entirely
                    Err(ConfigError::Invalid(format!(
                        "pooling step {step} exceeds window {window}; windows must cover every frame"
                    )))
                } else {
                    Ok(())
                }
            }
            PoolingKind::TopK { k } => {
                if k == 0 {
                    Err(ConfigError::Invalid("pooling K must be >= 1".into()))
                } else {
                    Ok(())
                }
            }
        }
    }
}

/// Survivor mask for sliding-window maxpooling. Windows start at 0, step,
/// 2*step, ... and cover every frame; the final window may be shorter.
pub fn sliding_window_mask(alpha: &[f64], window: usize, step: usize) -> Vec<bool> {
    assert!(!alpha.is_empty(), "empty weight vector");
    let mut mask = vec![false; alpha.len()];
    let mut start = 0;
    loop {
        let end = (start + window).min(alpha.len());
        let mut best = start;
        for i in start + 1..end {
            if alpha[i] > alpha[best] {
                best = i;
            }
        }
        mask[best] = true;
        if end >= alpha.len() {
            break;
        }
        start += step;
    }
    mask
}

/// Survivor mask for global top-K maxpooling (earliest index on ties).
pub fn topk_mask(alpha: &[f64], k: usize) -> Vec<bool> {
    assert!(!alpha.is_empty(), "empty weight vector");
    let mut order: Vec<usize> = (0..alpha.len()).collect();
    order.sort_by(|&a, &b| {
        alpha[b].partial_cmp(&alpha[a]).unwrap().then(a.cmp(&b))
    });
    let mut mask = vec![false; alpha.len()];
    for &i in order.iter().take(k) {
        mask[i] = true;
    }
    mask
}

/// Smallest weight gap protecting the current survivor mask from flipping:
/// max minus runner-up per sliding window, or the K-th minus (K+1)-th weight
/// for top-K. The finite-difference harness uses this to keep check points
/// away from argmax boundaries, where the pooled output is not differentiable.
pub fn decision_margin(alpha: &[f64], config: &PoolingConfig) -> f64 {
    match config.kind {
        PoolingKind::None => f64::INFINITY,
        PoolingKind::SlidingWindow { window, step } => {
            let mut margin = f64::INFINITY;
            let mut start = 0;
            loop {
                let end = (start + window).min(alpha.len());
                if end - start >= 2 {
                    let (mut best, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
                    for &a in &alpha[start..end] {
                        if a > best {
                            second = best;
                            best = a;
                        } else if a > second {
                            second = a;
                        }
                    }
                    margin = margin.min(best - second);
                }
                if end >= alpha.len() {
                    break;
                }
                start += step;
            }
            margin
        }
        PoolingKind::TopK { k } => {
            if k >= alpha.len() {
                return f64::INFINITY;
            }
            let mut sorted = alpha.to_vec();
            sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
            sorted[k - 1] - sorted[k]
        }
    }
}

pub fn survivor_mask(alpha: &[f64], config: &PoolingConfig) -> Vec<bool> {
    match config.kind {
        PoolingKind::None => vec![true; alpha.len()],
        PoolingKind::SlidingWindow { window, step } => sliding_window_mask(alpha, window, step),
        PoolingKind::TopK { k } => topk_mask(alpha, k),
    }
}

fn apply_mask(alpha: &[f64], mask: &[bool], renormalize: bool) -> Vec<f64> {
    let mut out: Vec<f64> =
        alpha.iter().zip(mask).map(|(&a, &m)| if m { a } else { 0.0 }).collect();
    if renormalize {
        let sum: f64 = out.iter().sum();
        if sum > 0.0 {
            out.iter_mut().for_each(|x| *x /= sum);
        }
    }
    out
}

/// Value-level sliding-window maxpooling.
pub fn sliding_window_maxpool(alpha: &[f64], window: usize, step: usize, renormalize: bool) -> Vec<f64> {
    apply_mask(alpha, &sliding_window_mask(alpha, window, step), renormalize)
}

/// Value-level global top-K maxpooling.
pub fn topk_maxpool(alpha: &[f64], k: usize, renormalize: bool) -> Vec<f64> {
    apply_mask(alpha, &topk_mask(alpha, k), renormalize)
}

pub fn pool(alpha: &[f64], config: &PoolingConfig) -> Vec<f64> {
    match config.kind {
        PoolingKind::None => alpha.to_vec(),
        _ => apply_mask(alpha, &survivor_mask(alpha, config), config.renormalize),
    }
}

/// Tape version: the survivor mask is computed from current weight values
/// and enters the graph as a constant, then masked weights are renormalized
/// on-graph so gradients flow through the surviving entries.
pub fn pool_on_tape(tape: &mut Tape, alpha: NodeId, config: &PoolingConfig) -> NodeId {
    if config.kind == PoolingKind::None {
        return alpha;
    }
    let mask = survivor_mask(tape.value(alpha), config);
    let mask_vals: Vec<f64> = mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
    let mask_node = tape.constant(Value::vector(mask_vals));
    let masked = tape.mul(alpha, mask_node);
    if config.renormalize {
        let total = tape.sum(masked);
        tape.div(masked, total)
    } else {
        masked
    }
}
