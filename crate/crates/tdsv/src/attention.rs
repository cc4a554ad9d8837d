//! Attention layer: per-frame scalar scores, softmax-normalized weights,
//! optional weight pooling, and weighted averaging into a d-vector.
//!
//! Five scoring functions (bias-only, linear, shared-linear, non-linear,
//! shared-non-linear) and three wirings besides the last-frame baseline:
//! basic (score and average the last layer), cross-layer (score the
//! second-to-last layer, average the last), divided-layer (split the last
//! layer in half, score part-b, average part-a).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{NodeId, Shape, Tape, Value};
use crate::error::ConfigError;
use crate::network::SequenceOutputs;
use crate::params::{ParamId, ParamStore};
use crate::pooling::{pool_on_tape, PoolingConfig};

pub const DEFAULT_HIDDEN_DIM: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScoringKind {
    BiasOnly,
    Linear,
    SharedLinear,
    NonLinear { hidden: usize },
    SharedNonLinear { hidden: usize },
}

impl ScoringKind {
    pub fn is_shared(self) -> bool {
        matches!(self, ScoringKind::SharedLinear | ScoringKind::SharedNonLinear { .. })
    }

    pub fn validate(self) -> Result<(), ConfigError> {
        match self {
            ScoringKind::NonLinear { hidden } | ScoringKind::SharedNonLinear { hidden }
                if hidden == 0 =>
            {
                Err(ConfigError::Invalid("non-linear scoring needs hidden dim > 0".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            ScoringKind::BiasOnly => "bo",
            ScoringKind::Linear => "l",
            ScoringKind::SharedLinear => "sl",
            ScoringKind::NonLinear { .. } => "nl",
            ScoringKind::SharedNonLinear { .. } => "snl",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionMode {
    LastFrameBaseline,
    Basic,
    CrossLayer,
    DividedLayer,
}

impl AttentionMode {
    pub fn tag(self) -> &'static str {
        match self {
            AttentionMode::LastFrameBaseline => "baseline",
            AttentionMode::Basic => "basic",
            AttentionMode::CrossLayer => "cross",
            AttentionMode::DividedLayer => "divided",
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct DVectorConfig {
    pub mode: AttentionMode,
    pub scoring: ScoringKind,
    pub pooling: PoolingConfig,
}

/// Trainable attention parameters, stored per scoring kind.
#[derive(Clone, Debug)]
pub enum AttentionParams {
    BiasOnly {
        /// Per-frame scalar scores, length T.
        bias: ParamId,
    },
    Linear {
        /// Per-frame weight vectors w_t, each of dim m.
        weights: Vec<ParamId>,
        /// Per-frame offsets, length T.
        bias: ParamId,
    },
    SharedLinear {
        weight: ParamId,
        bias: ParamId,
    },
    NonLinear {
        /// Per-frame (W_t, b_t, v_t).
        frames: Vec<(ParamId, ParamId, ParamId)>,
    },
    SharedNonLinear {
        weight: ParamId,
        bias: ParamId,
        v: ParamId,
    },
}

fn uniform(rng: &mut ChaCha8Rng, shape: Shape) -> Value {
    Value { shape, data: (0..shape.len()).map(|_| rng.gen_range(-0.2..0.2)).collect() }
}

/// Initialize attention parameters for `t_frames` frames of dim `m`.
pub fn init_attention(
    kind: ScoringKind,
    t_frames: usize,
    m: usize,
    store: &mut ParamStore,
    seed: u64,
) -> AttentionParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa77e_0000);
    match kind {
        ScoringKind::BiasOnly => AttentionParams::BiasOnly {
            bias: store.add("attn.bias", uniform(&mut rng, Shape::Vector(t_frames))),
        },
        ScoringKind::Linear => AttentionParams::Linear {
            weights: (0..t_frames)
                .map(|t| store.add(format!("attn.w{t}"), uniform(&mut rng, Shape::Vector(m))))
                .collect(),
            bias: store.add("attn.bias", uniform(&mut rng, Shape::Vector(t_frames))),
        },
        ScoringKind::SharedLinear => AttentionParams::SharedLinear {
            weight: store.add("attn.w", uniform(&mut rng, Shape::Vector(m))),
            bias: store.add("attn.b", uniform(&mut rng, Shape::Scalar)),
        },
        ScoringKind::NonLinear { hidden } => AttentionParams::NonLinear {
            frames: (0..t_frames)
                .map(|t| {
                    (
                        store.add(format!("attn.W{t}"), uniform(&mut rng, Shape::Matrix(hidden, m))),
                        store.add(format!("attn.b{t}"), uniform(&mut rng, Shape::Vector(hidden))),
                        store.add(format!("attn.v{t}"), uniform(&mut rng, Shape::Vector(hidden))),
                    )
                })
                .collect(),
        },
        ScoringKind::SharedNonLinear { hidden } => AttentionParams::SharedNonLinear {
            weight: store.add("attn.W", uniform(&mut rng, Shape::Matrix(hidden, m))),
            bias: store.add("attn.b", uniform(&mut rng, Shape::Vector(hidden))),
            v: store.add("attn.v", uniform(&mut rng, Shape::Vector(hidden))),
        },
    }
}

/// Per-frame scalar scores e_t for the given frame vectors.
pub fn score(
    tape: &mut Tape,
    bound: &[NodeId],
    params: &AttentionParams,
    frames: &[NodeId],
) -> NodeId {
    match params {
        AttentionParams::BiasOnly { bias } => {
            let b = bound[bias.0];
            assert_eq!(
                tape.shape(b),
                Shape::Vector(frames.len()),
                "bias-only attention requires fixed T"
            );
            b
        }
        AttentionParams::Linear { weights, bias } => {
            assert_eq!(weights.len(), frames.len(), "per-frame attention requires fixed T");
            let b = bound[bias.0];
            let scores: Vec<NodeId> = frames
                .iter()
                .enumerate()
                .map(|(t, &h)| {
                    let w = bound[weights[t].0];
                    let wh = tape.dot(w, h);
                    let bt = tape.index(b, t);
                    tape.add(wh, bt)
                })
                .collect();
            tape.concat(&scores)
        }
        AttentionParams::SharedLinear { weight, bias } => {
            let (w, b) = (bound[weight.0], bound[bias.0]);
            let scores: Vec<NodeId> = frames
                .iter()
                .map(|&h| {
                    let wh = tape.dot(w, h);
                    tape.add(wh, b)
                })
                .collect();
            tape.concat(&scores)
        }
        AttentionParams::NonLinear { frames: per_frame } => {
            assert_eq!(per_frame.len(), frames.len(), "per-frame attention requires fixed T");
            let scores: Vec<NodeId> = frames
                .iter()
                .zip(per_frame)
                .map(|(&h, (w, b, v))| {
                    let wh = tape.matvec(bound[w.0], h);
                    let pre = tape.add(wh, bound[b.0]);
                    let act = tape.tanh(pre);
                    tape.dot(bound[v.0], act)
                })
                .collect();
            tape.concat(&scores)
        }
        AttentionParams::SharedNonLinear { weight, bias, v } => {
            let scores: Vec<NodeId> = frames
                .iter()
                .map(|&h| {
                    let wh = tape.matvec(bound[weight.0], h);
                    let pre = tape.add(wh, bound[bias.0]);
                    let act = tape.tanh(pre);
                    tape.dot(bound[v.0], act)
                })
                .collect();
            tape.concat(&scores)
        }
    }
}

/// Softmax with max subtraction: alpha_t = exp(e_t) / sum_i exp(e_i).
pub fn normalize(tape: &mut Tape, scores: NodeId) -> NodeId {
    let max = tape
        .value(scores)
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let shift = tape.constant(Value::scalar(max));
    let centered = tape.sub(scores, shift);
    let ex = tape.exp(centered);
    let total = tape.sum(ex);
    tape.div(ex, total)
}

/// Weighted average: omega = sum_t alpha_t h_t.
pub fn summarize(tape: &mut Tape, alpha: NodeId, frames: &[NodeId]) -> NodeId {
    assert_eq!(
        tape.shape(alpha),
        Shape::Vector(frames.len()),
        "weight/frame length mismatch"
    );
    let mut acc: Option<NodeId> = None;
    for (t, &h) in frames.iter().enumerate() {
        let at = tape.index(alpha, t);
        let term = tape.mul(h, at);
        acc = Some(match acc {
            None => term,
            Some(a) => tape.add(a, term),
        });
    }
    acc.expect("no frames")
}

/// Build the d-vector for one utterance from encoder outputs.
/// Returns the d-vector node and, for attention modes, the (pooled)
/// attention weights node.
pub fn dvector(
    tape: &mut Tape,
    bound: &[NodeId],
    config: &DVectorConfig,
    params: Option<&AttentionParams>,
    seq: &SequenceOutputs,
) -> (NodeId, Option<NodeId>) {
    match config.mode {
        AttentionMode::LastFrameBaseline => {
            (*seq.frame_outputs.last().expect("no frames"), None)
        }
        AttentionMode::Basic => {
            let params = params.expect("attention mode needs attention params");
            let e = score(tape, bound, params, &seq.frame_outputs);
            let alpha = normalize(tape, e);
            let alpha = pool_on_tape(tape, alpha, &config.pooling);
            (summarize(tape, alpha, &seq.frame_outputs), Some(alpha))
        }
        AttentionMode::CrossLayer => {
            let params = params.expect("attention mode needs attention params");
            let e = score(tape, bound, params, seq.intermediate());
            let alpha = normalize(tape, e);
            let alpha = pool_on_tape(tape, alpha, &config.pooling);
            (summarize(tape, alpha, &seq.frame_outputs), Some(alpha))
        }
        AttentionMode::DividedLayer => {
            let params = params.expect("attention mode needs attention params");
            let dim = match tape.shape(seq.frame_outputs[0]) {
                Shape::Vector(n) => n,
                s => panic!("frame output must be a vector, got {s:?}"),
            };
            assert!(dim % 2 == 0, "divided-layer attention requires even frame dim, got {dim}");
            let half = dim / 2;
            let part_a: Vec<NodeId> =
                seq.frame_outputs.iter().map(|&h| tape.slice(h, 0, half)).collect();
            let part_b: Vec<NodeId> =
                seq.frame_outputs.iter().map(|&h| tape.slice(h, half, half)).collect();
            let e = score(tape, bound, params, &part_b);
            let alpha = normalize(tape, e);
            let alpha = pool_on_tape(tape, alpha, &config.pooling);
            (summarize(tape, alpha, &part_a), Some(alpha))
        }
    }
}

/// Scoring input dimension for a mode, given the encoder geometry.
pub fn scoring_input_dim(mode: AttentionMode, net: &crate::network::NetworkConfig) -> usize {
    match mode {
        AttentionMode::LastFrameBaseline | AttentionMode::Basic => net.output_dim(),
        AttentionMode::CrossLayer => net.projection_dim,
        AttentionMode::DividedLayer => net.output_dim() / 2,
    }
}
