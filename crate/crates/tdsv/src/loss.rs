//! Tuple construction, centroid, scaled-cosine similarity, the tuple
//! end-to-end loss, and the SGD training step.
//!
//! The loss is used in sign-corrected form: positive tuples minimize
//! 1 - sigmoid(s), negative tuples minimize sigmoid(s), so a positive tuple
//! is pushed toward large similarity and a negative one toward small. The
//! literal printed form (which swaps the two terms) stays available behind
//! `LossForm::Paper` for comparison.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{NodeId, Tape, Value};
use crate::error::{DataError, NumericError};
use crate::features::{Corpus, FeatureMatrix, Keyword, Utterance};
use crate::model::Model;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossForm {
    /// delta(1 - sigma(s)) + (1-delta) sigma(s): minimized by the stated intent.
    Corrected,
    /// delta sigma(s) + (1-delta)(1 - sigma(s)): the literal printed equation.
    Paper,
}

#[derive(Clone, Copy, Debug)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub steps: u64,
    pub tuple_size: usize,
    pub loss_form: LossForm,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 0.01,
            clip_norm: 3.0,
            steps: 5000,
            tuple_size: 4,
            loss_form: LossForm::Corrected,
            seed: 0,
        }
    }
}

/// One evaluation utterance plus N enrollment utterances.
pub struct Tuple<'a> {
    pub evaluation: &'a FeatureMatrix,
    pub enrollment: Vec<&'a FeatureMatrix>,
    pub keyword: Keyword,
    pub positive: bool,
}

/// Centroid of enrollment d-vectors: mean of L2-normalized vectors.
pub fn centroid_on_tape(tape: &mut Tape, omegas: &[NodeId]) -> Result<NodeId, NumericError> {
    assert!(!omegas.is_empty(), "centroid of empty tuple");
    let mut acc: Option<NodeId> = None;
    for &omega in omegas {
        let norm = tape.norm2(omega);
        if tape.scalar_value(norm) == 0.0 {
            return Err(NumericError::ZeroNorm("centroid"));
        }
        let unit = tape.div(omega, norm);
        acc = Some(match acc {
            None => unit,
            Some(a) => tape.add(a, unit),
        });
    }
    let n = tape.constant(Value::scalar(omegas.len() as f64));
    Ok(tape.div(acc.unwrap(), n))
}

/// s = w * cos(omega, c) + b.
pub fn similarity_on_tape(
    tape: &mut Tape,
    omega: NodeId,
    centroid: NodeId,
    w: NodeId,
    b: NodeId,
) -> Result<NodeId, NumericError> {
    let no = tape.norm2(omega);
    let nc = tape.norm2(centroid);
    if tape.scalar_value(no) == 0.0 || tape.scalar_value(nc) == 0.0 {
        return Err(NumericError::ZeroNorm("similarity"));
    }
    let num = tape.dot(omega, centroid);
    let denom = tape.mul(no, nc);
    let cos = tape.div(num, denom);
    let scaled = tape.mul(w, cos);
    Ok(tape.add(scaled, b))
}

pub fn te2e_on_tape(tape: &mut Tape, s: NodeId, positive: bool, form: LossForm) -> NodeId {
    // 1 - sigma(s) == sigma(-s)
    let take_negative = match form {
        LossForm::Corrected => positive,
        LossForm::Paper => !positive,
    };
    if take_negative {
        let neg = tape.neg(s);
        tape.sigmoid(neg)
    } else {
        tape.sigmoid(s)
    }
}

/// Value-level loss, for tests and score-space reasoning.
pub fn te2e_value(s: f64, positive: bool, form: LossForm) -> f64 {
    let sigma = 1.0 / (1.0 + (-s).exp());
    let corrected = if positive { 1.0 - sigma } else { sigma };
    match form {
        LossForm::Corrected => corrected,
        LossForm::Paper => 1.0 - corrected,
    }
}

/// Draws tuples from the training corpus: keyword strictly alternates
/// A, B, A, B per call; the caller supplies the positive/negative schedule.
pub struct TupleSampler {
    rng: ChaCha8Rng,
    calls: u64,
    tuple_size: usize,
}

impl TupleSampler {
    pub fn new(seed: u64, tuple_size: usize) -> Self {
        TupleSampler { rng: ChaCha8Rng::seed_from_u64(seed), calls: 0, tuple_size }
    }

    /// Keyword for the next call (round-robin over the two sub-corpora).
    pub fn next_keyword(&self) -> Keyword {
        if self.calls % 2 == 0 {
            Keyword::A
        } else {
            Keyword::B
        }
    }

    pub fn build_tuple<'a>(
        &mut self,
        corpus: &'a Corpus,
        want_positive: bool,
    ) -> Result<Tuple<'a>, DataError> {
        let keyword = self.next_keyword();
        self.calls += 1;
        let n = self.tuple_size;

        let speakers = corpus.speakers();
        if speakers.len() < 2 {
            return Err(DataError::Invalid("tuple sampling needs >= 2 speakers".into()));
        }
        let pick_speaker =
            |rng: &mut ChaCha8Rng, exclude: Option<u32>| -> u32 {
                loop {
                    let s = speakers[rng.gen_range(0..speakers.len())];
                    if Some(s) != exclude {
                        return s;
                    }
                }
            };

        let enroll_speaker = pick_speaker(&mut self.rng, None);
        let pool: Vec<&Utterance> = corpus.of_speaker_keyword(enroll_speaker, keyword);
        let needed = if want_positive { n + 1 } else { n };
        if pool.len() < needed {
            return Err(DataError::Invalid(format!(
                "speaker {enroll_speaker} has {} utterances of keyword {}, need {needed}",
                pool.len(),
                keyword.tag()
            )));
        }
        // Sample `needed` distinct utterances from the enrollment speaker.
        let mut indices: Vec<usize> = (0..pool.len()).collect();
        for i in 0..needed {
            let j = self.rng.gen_range(i..indices.len());
            indices.swap(i, j);
        }
        let chosen: Vec<&Utterance> = indices[..needed].iter().map(|&i| pool[i]).collect();

        if want_positive {
            Ok(Tuple {
                evaluation: &chosen[n].features,
                enrollment: chosen[..n].iter().map(|u| &u.features).collect(),
                keyword,
                positive: true,
            })
        } else {
            let other = pick_speaker(&mut self.rng, Some(enroll_speaker));
            let other_pool = corpus.of_speaker_keyword(other, keyword);
            if other_pool.is_empty() {
                return Err(DataError::Invalid(format!(
                    "speaker {other} has no utterances of keyword {}",
                    keyword.tag()
                )));
            }
            let eval = other_pool[self.rng.gen_range(0..other_pool.len())];
            Ok(Tuple {
                evaluation: &eval.features,
                enrollment: chosen.iter().map(|u| &u.features).collect(),
                keyword,
                positive: false,
            })
        }
    }
}

/// Positive/negative schedule for a step index: alternates each step with
/// the phase flipped every two steps, so each label meets each keyword.
pub fn want_positive_at(step: u64) -> bool {
    (step + step / 2) % 2 == 0
}

pub struct StepStats {
    pub loss: f64,
    pub grad_norm: f64,
    pub keyword: Keyword,
    pub positive: bool,
}

/// One SGD step on one tuple: forward all N+1 utterances through the shared
/// model, centroid + similarity + loss, backward, clip, update, re-clamp
/// the similarity scale. Returns the pre-update loss.
/// Build the full tuple loss (N+1 forwards, centroid, similarity, loss) on an
/// existing tape; shared by training and the finite-difference harness.
pub fn tuple_loss_on_tape(
    tape: &mut Tape,
    bound: &[NodeId],
    model: &Model,
    tuple: &Tuple,
    loss_form: LossForm,
) -> Result<NodeId, NumericError> {
    let (eval_omega, _) = model.build_utterance(tape, bound, tuple.evaluation);
    let enroll_omegas: Vec<NodeId> = tuple
        .enrollment
        .iter()
        .map(|feats| model.build_utterance(tape, bound, feats).0)
        .collect();

    let centroid = centroid_on_tape(tape, &enroll_omegas)?;
    let s = similarity_on_tape(
        tape,
        eval_omega,
        centroid,
        bound[model.sim_w.0],
        bound[model.sim_b.0],
    )?;
    Ok(te2e_on_tape(tape, s, tuple.positive, loss_form))
}

pub fn train_step(
    model: &mut Model,
    tuple: &Tuple,
    opt: &OptimizerConfig,
) -> Result<StepStats, NumericError> {
    let mut tape = Tape::new();
    let bound = model.store.bind(&mut tape);
    let loss = tuple_loss_on_tape(&mut tape, &bound, model, tuple, opt.loss_form)?;
    let loss_value = tape.scalar_value(loss);
    if !loss_value.is_finite() {
        return Err(NumericError::NonFiniteLoss { step: 0 });
    }

    tape.backward(loss).map_err(|e| NumericError::Other(e.to_string()))?;
    let grads: Vec<Vec<f64>> = bound.iter().map(|&id| tape.grad(id).to_vec()).collect();
    let grad_norm = model.store.sgd_step(&grads, opt.learning_rate, opt.clip_norm);

    // Keep s monotone in the cosine.
    let w = &mut model.store.value_mut(model.sim_w).data[0];
    if *w < 1e-6 {
        *w = 1e-6;
    }

    Ok(StepStats { loss: loss_value, grad_norm, keyword: tuple.keyword, positive: tuple.positive })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::{AttentionMode, DVectorConfig, ScoringKind};
    use crate::features::{generate_corpus, SynthSpec};
    use crate::model::{Model, ModelConfig};
    use crate::pooling::PoolingConfig;

    #[test]
    fn centroid_worked_examples() {
        let centroid_of = |vectors: &[Vec<f64>]| -> Vec<f64> {
            let mut tape = Tape::new();
            let ids: Vec<NodeId> =
                vectors.iter().map(|v| tape.constant(Value::vector(v.clone()))).collect();
            let c = centroid_on_tape(&mut tape, &ids).unwrap();
            tape.value(c).to_vec()
        };
        let c = centroid_of(&[vec![3.0, 4.0]]);
        assert!((c[0] - 0.6).abs() < 1e-15 && (c[1] - 0.8).abs() < 1e-15);
        let c = centroid_of(&[vec![3.0, 4.0], vec![4.0, 3.0]]);
        assert!((c[0] - 0.7).abs() < 1e-15 && (c[1] - 0.7).abs() < 1e-15);
        let c = centroid_of(&vec![vec![3.0, 4.0]; 5]);
        assert!((c[0] - 0.6).abs() < 1e-15 && (c[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn centroid_rejects_zero_norm() {
        let mut tape = Tape::new();
        let z = tape.constant(Value::vector(vec![0.0, 0.0]));
        assert!(centroid_on_tape(&mut tape, &[z]).is_err());
    }

    fn similarity_value(omega: &[f64], c: &[f64], w: f64, b: f64) -> f64 {
        let mut tape = Tape::new();
        let o = tape.constant(Value::vector(omega.to_vec()));
        let cn = tape.constant(Value::vector(c.to_vec()));
        let wn = tape.constant(Value::scalar(w));
        let bn = tape.constant(Value::scalar(b));
        let s = similarity_on_tape(&mut tape, o, cn, wn, bn).unwrap();
        tape.scalar_value(s)
    }

    #[test]
    fn similarity_worked_examples() {
        assert!((similarity_value(&[1.0, 2.0], &[1.0, 2.0], 1.0, 0.0) - 1.0).abs() < 1e-15);
        assert!((similarity_value(&[1.0, 0.0], &[0.0, 1.0], 5.0, 2.0) - 2.0).abs() < 1e-15);
        assert!((similarity_value(&[1.0, 2.0], &[-1.0, -2.0], 1.0, 0.0) + 1.0).abs() < 1e-14);
    }

    #[test]
    fn te2e_worked_examples() {
        assert_eq!(te2e_value(0.0, true, LossForm::Corrected), 0.5);
        assert_eq!(te2e_value(0.0, false, LossForm::Corrected), 0.5);
        // 1 - sigmoid(2), frozen from a high-precision evaluation.
        let l = te2e_value(2.0, true, LossForm::Corrected);
        assert!((l - 0.119_202_922_022_117_58).abs() < 1e-15);
        // Negative tuple, s -> -inf: loss -> 0.
        assert!(te2e_value(-60.0, false, LossForm::Corrected) < 1e-20);
    }

    #[test]
    fn te2e_pos_neg_sum_to_one() {
        for i in 0..100 {
            let s = -8.0 + 0.16 * i as f64;
            let sum = te2e_value(s, true, LossForm::Corrected)
                + te2e_value(s, false, LossForm::Corrected);
            assert!((sum - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn paper_form_is_complement() {
        assert!(
            (te2e_value(1.3, true, LossForm::Paper)
                - (1.0 - te2e_value(1.3, true, LossForm::Corrected)))
            .abs()
                < 1e-15
        );
    }

    #[test]
    fn te2e_monotonicity() {
        let mut prev_pos = f64::INFINITY;
        let mut prev_neg = f64::NEG_INFINITY;
        for i in 0..50 {
            let s = -5.0 + 0.2 * i as f64;
            let lp = te2e_value(s, true, LossForm::Corrected);
            let ln = te2e_value(s, false, LossForm::Corrected);
            assert!(lp < prev_pos, "positive loss not decreasing in s");
            assert!(ln > prev_neg, "negative loss not increasing in s");
            prev_pos = lp;
            prev_neg = ln;
        }
    }

    fn small_corpus() -> Corpus {
        let spec = SynthSpec {
            num_speakers: 4,
            utterances_per_speaker: 6,
            seed: 11,
            ..SynthSpec::default()
        };
        generate_corpus(&spec, 0).unwrap()
    }

    #[test]
    fn tuple_labels_and_keyword_rotation() {
        let corpus = small_corpus();
        let mut sampler = TupleSampler::new(3, 3);
        let mut keywords = Vec::new();
        for i in 0..6 {
            let want = i % 2 == 0;
            let tuple = sampler.build_tuple(&corpus, want).unwrap();
            assert_eq!(tuple.positive, want);
            assert_eq!(tuple.enrollment.len(), 3);
            keywords.push(tuple.keyword);
        }
        use Keyword::*;
        assert_eq!(keywords, vec![A, B, A, B, A, B]);
    }

    #[test]
    fn tuple_insufficient_utterances_rejected() {
        let spec = SynthSpec {
            num_speakers: 2,
            utterances_per_speaker: 2,
            seed: 1,
            ..SynthSpec::default()
        };
        let corpus = generate_corpus(&spec, 0).unwrap();
        let mut sampler = TupleSampler::new(0, 4);
        assert!(sampler.build_tuple(&corpus, true).is_err());
    }

    #[test]
    fn repeated_step_on_frozen_copy_is_deterministic() {
        let config = ModelConfig::tiny(DVectorConfig {
            mode: AttentionMode::Basic,
            scoring: ScoringKind::SharedLinear,
            pooling: PoolingConfig::none(),
        });
        let corpus = small_corpus();
        let mut sampler = TupleSampler::new(5, 2);
        let opt = OptimizerConfig { tuple_size: 2, ..OptimizerConfig::default() };
        let tuple = sampler.build_tuple(&corpus, true).unwrap();
        // tiny config has input dim 3; sliced features keep the test fast.
        let slim: Vec<FeatureMatrix> = [tuple.evaluation]
            .iter()
            .chain(tuple.enrollment.iter())
            .map(|f| slim_features(f, 8, 3))
            .collect();
        let slim_tuple = Tuple {
            evaluation: &slim[0],
            enrollment: slim[1..].iter().collect(),
            keyword: tuple.keyword,
            positive: true,
        };
        let mut m1 = Model::init(config, 7).unwrap();
        let mut m2 = Model::init(config, 7).unwrap();
        let l1 = train_step(&mut m1, &slim_tuple, &opt).unwrap().loss;
        let l2 = train_step(&mut m2, &slim_tuple, &opt).unwrap().loss;
        assert_eq!(l1, l2);
        for (a, b) in m1.store.values().iter().zip(m2.store.values()) {
            assert_eq!(a.data, b.data);
        }
    }

    fn slim_features(f: &FeatureMatrix, frames: usize, dim: usize) -> FeatureMatrix {
        let mut data = Vec::with_capacity(frames * dim);
        for t in 0..frames {
            data.extend_from_slice(&f.frame(t)[..dim]);
        }
        FeatureMatrix::new(frames, dim, data)
    }

    #[test]
    fn repeated_steps_on_fixed_tuple_decrease_loss() {
        let config = ModelConfig::tiny(DVectorConfig {
            mode: AttentionMode::Basic,
            scoring: ScoringKind::SharedNonLinear { hidden: 3 },
            pooling: PoolingConfig::none(),
        });
        let corpus = small_corpus();
        let mut sampler = TupleSampler::new(9, 2);
        let tuple = sampler.build_tuple(&corpus, true).unwrap();
        let slim: Vec<FeatureMatrix> = [tuple.evaluation]
            .iter()
            .chain(tuple.enrollment.iter())
            .map(|f| slim_features(f, 8, 3))
            .collect();
        let slim_tuple = Tuple {
            evaluation: &slim[0],
            enrollment: slim[1..].iter().collect(),
            keyword: tuple.keyword,
            positive: true,
        };
        let mut model = Model::init(config, 21).unwrap();
        let opt = OptimizerConfig { tuple_size: 2, ..OptimizerConfig::default() };
        let losses: Vec<f64> =
            (0..50).map(|_| train_step(&mut model, &slim_tuple, &opt).unwrap().loss).collect();
        let decreases = losses.windows(2).filter(|w| w[1] < w[0]).count();
        assert!(decreases >= 45, "only {decreases}/49 transitions decreased");
    }
}
