//! Enrollment, trial scoring, and equal-error-rate computation over the
//! four enroll-keyword x verify-keyword combinations.
//!
//! Evaluation scores are raw cosines: EER is invariant under the strictly
//! increasing map s = w*cos + b with w > 0, so the learned scale and offset
//! drop out.

use crate::error::NumericError;
use crate::features::{Corpus, FeatureMatrix, Keyword, Utterance};
use crate::model::Model;

/// Enrollment and verification material for one evaluation run.
/// Enrollment and verification utterances are disjoint by construction.
pub struct TrialSet<'a> {
    /// Per keyword: speaker -> enrollment utterances.
    pub enrollment: Vec<(Keyword, Vec<(u32, Vec<&'a Utterance>)>)>,
    /// Per keyword: (speaker, verification utterance).
    pub verification: Vec<(Keyword, Vec<&'a Utterance>)>,
}

impl<'a> TrialSet<'a> {
    /// Split a held-out corpus: the first `enroll_per_speaker` utterances of
    /// each (speaker, keyword) enroll the speaker, the rest verify.
    pub fn from_corpus(corpus: &'a Corpus, enroll_per_speaker: usize) -> Result<Self, NumericError> {
        let speakers = corpus.speakers();
        if speakers.len() < 2 {
            return Err(NumericError::Other("trial set needs >= 2 speakers".into()));
        }
        let mut enrollment = Vec::new();
        let mut verification = Vec::new();
        for keyword in Keyword::ALL {
            let mut enroll_map = Vec::new();
            let mut verify_list = Vec::new();
            for &speaker in &speakers {
                let utts = corpus.of_speaker_keyword(speaker, keyword);
                if utts.len() <= enroll_per_speaker {
                    return Err(NumericError::Other(format!(
                        "speaker {speaker} keyword {} has {} utterances, need more than {enroll_per_speaker}",
                        keyword.tag(),
                        utts.len()
                    )));
                }
                enroll_map.push((speaker, utts[..enroll_per_speaker].to_vec()));
                verify_list.extend(utts[enroll_per_speaker..].iter().copied());
            }
            enrollment.push((keyword, enroll_map));
            verification.push((keyword, verify_list));
        }
        Ok(TrialSet { enrollment, verification })
    }
}

fn l2_normalize(v: &[f64]) -> Result<Vec<f64>, NumericError> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(NumericError::ZeroNorm("d-vector"));
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

/// Enroll a speaker: centroid of L2-normalized d-vectors.
pub fn enroll(model: &Model, utterances: &[&FeatureMatrix]) -> Result<Vec<f64>, NumericError> {
    assert!(!utterances.is_empty(), "enroll with no utterances");
    let mut acc: Option<Vec<f64>> = None;
    for feats in utterances {
        let (omega, _) = model.embed(feats);
        let unit = l2_normalize(&omega)?;
        match &mut acc {
            None => acc = Some(unit),
            Some(a) => a.iter_mut().zip(&unit).for_each(|(x, u)| *x += u),
        }
    }
    let mut c = acc.unwrap();
    let n = utterances.len() as f64;
    c.iter_mut().for_each(|x| *x /= n);
    Ok(c)
}

/// Cosine between an utterance's d-vector and an enrolled centroid.
pub fn trial_score(
    model: &Model,
    centroid: &[f64],
    utterance: &FeatureMatrix,
) -> Result<f64, NumericError> {
    let (omega, _) = model.embed(utterance);
    cosine(&omega, centroid)
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, NumericError> {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(NumericError::ZeroNorm("cosine"));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb))
}

#[derive(Clone, Copy, Debug)]
pub struct EerResult {
    pub eer: f64,
    pub threshold: f64,
    pub num_target_trials: usize,
    pub num_impostor_trials: usize,
}

/// One point of the detection-error tradeoff sweep.
#[derive(Clone, Copy, Debug)]
pub struct DetPoint {
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
}

fn far_frr(threshold: f64, targets: &[f64], impostors: &[f64]) -> (f64, f64) {
    let frr = targets.iter().filter(|&&s| s < threshold).count() as f64 / targets.len() as f64;
    let far = impostors.iter().filter(|&&s| s >= threshold).count() as f64 / impostors.len() as f64;
    (far, frr)
}

/// Candidate thresholds: midpoints between consecutive distinct scores,
/// plus -inf and +inf.
pub fn candidate_thresholds(targets: &[f64], impostors: &[f64]) -> Vec<f64> {
    let mut scores: Vec<f64> = targets.iter().chain(impostors).copied().collect();
    scores.sort_by(|a, b| a.partial_cmp(b).unwrap());
    scores.dedup();
    let mut thresholds = vec![f64::NEG_INFINITY];
    thresholds.extend(scores.windows(2).map(|w| (w[0] + w[1]) / 2.0));
    thresholds.push(f64::INFINITY);
    thresholds
}

/// Full DET sweep over the candidate thresholds.
pub fn det_curve(targets: &[f64], impostors: &[f64]) -> Vec<DetPoint> {
    candidate_thresholds(targets, impostors)
        .into_iter()
        .map(|threshold| {
            let (far, frr) = far_frr(threshold, targets, impostors);
            DetPoint { threshold, far, frr }
        })
        .collect()
}

/// EER at the threshold minimizing |FAR - FRR| (ties -> lower threshold),
/// reported as (FAR + FRR) / 2 there.
pub fn compute_eer(targets: &[f64], impostors: &[f64]) -> Result<EerResult, NumericError> {
    if targets.is_empty() || impostors.is_empty() {
        return Err(NumericError::Other("compute_eer needs nonempty score lists".into()));
    }
    let mut best: Option<(f64, f64, f64)> = None; // (|far-frr|, threshold, eer)
    for p in det_curve(targets, impostors) {
        let gap = (p.far - p.frr).abs();
        let better = match best {
            None => true,
            Some((best_gap, _, _)) => gap < best_gap,
        };
        if better {
            best = Some((gap, p.threshold, (p.far + p.frr) / 2.0));
        }
    }
    let (_, threshold, eer) = best.unwrap();
    Ok(EerResult {
        eer,
        threshold,
        num_target_trials: targets.len(),
        num_impostor_trials: impostors.len(),
    })
}

/// EER for one (enroll keyword, verify keyword) combination: every
/// verification utterance is scored against every enrolled speaker.
pub fn eval_combination(
    model: &Model,
    enrollment: &[(u32, Vec<&Utterance>)],
    verification: &[&Utterance],
) -> Result<(EerResult, Vec<DetPoint>), NumericError> {
    let centroids: Vec<(u32, Vec<f64>)> = enrollment
        .iter()
        .map(|(speaker, utts)| {
            let feats: Vec<&FeatureMatrix> = utts.iter().map(|u| &u.features).collect();
            enroll(model, &feats).map(|c| (*speaker, c))
        })
        .collect::<Result<_, _>>()?;

    let mut targets = Vec::new();
    let mut impostors = Vec::new();
    for utt in verification {
        let (omega, _) = model.embed(&utt.features);
        for (speaker, centroid) in &centroids {
            let score = cosine(&omega, centroid)?;
            if *speaker == utt.speaker {
                targets.push(score);
            } else {
                impostors.push(score);
            }
        }
    }
    if targets.is_empty() || impostors.is_empty() {
        return Err(NumericError::Other(
            "trial set produced no target or no impostor trials".into(),
        ));
    }
    let det = det_curve(&targets, &impostors);
    Ok((compute_eer(&targets, &impostors)?, det))
}

pub struct MatrixEval {
    /// (enroll keyword, verify keyword, result, DET sweep).
    pub cells: Vec<(Keyword, Keyword, EerResult, Vec<DetPoint>)>,
}

impl MatrixEval {
    pub fn average_eer(&self) -> f64 {
        self.cells.iter().map(|c| c.2.eer).sum::<f64>() / self.cells.len() as f64
    }
}

/// The four enroll-keyword x verify-keyword EERs plus the unweighted average.
pub fn run_matrix_eval(model: &Model, trials: &TrialSet) -> Result<MatrixEval, NumericError> {
    let mut cells = Vec::new();
    for (enroll_kw, enroll_map) in &trials.enrollment {
        for (verify_kw, verify_list) in &trials.verification {
            let (result, det) = eval_combination(model, enroll_map, verify_list)?;
            cells.push((*enroll_kw, *verify_kw, result, det));
        }
    }
    Ok(MatrixEval { cells })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_scores_give_zero_eer() {
        let r = compute_eer(&[0.9, 0.8, 0.7], &[0.6, 0.5]).unwrap();
        assert_eq!(r.eer, 0.0);
    }

    #[test]
    fn identical_scores_give_half_eer() {
        let scores = [0.3, 0.5, 0.7];
        let r = compute_eer(&scores, &scores).unwrap();
        assert!((r.eer - 0.5).abs() < 1e-12);
    }

    #[test]
    fn three_three_worked_example() {
        let r = compute_eer(&[0.9, 0.8, 0.3], &[0.5, 0.2, 0.1]).unwrap();
        assert!((r.eer - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_lists_rejected() {
        assert!(compute_eer(&[], &[1.0]).is_err());
        assert!(compute_eer(&[1.0], &[]).is_err());
    }

    #[test]
    fn eer_invariant_under_monotone_transform() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let targets: Vec<f64> = (0..40).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let impostors: Vec<f64> = (0..60).map(|_| rng.gen_range(-1.0..0.5)).collect();
        let base = compute_eer(&targets, &impostors).unwrap().eer;
        let map = |s: f64| (3.0 * s + 1.0).tanh() * 2.0 + 5.0;
        let t2: Vec<f64> = targets.iter().map(|&s| map(s)).collect();
        let i2: Vec<f64> = impostors.iter().map(|&s| map(s)).collect();
        let mapped = compute_eer(&t2, &i2).unwrap().eer;
        assert!((base - mapped).abs() < 1e-12);
    }

    #[test]
    fn swap_symmetry() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let a: Vec<f64> = (0..30).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..50).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let e1 = compute_eer(&a, &b).unwrap().eer;
        // Swapping roles and negating scores mirrors the decision rule.
        let na: Vec<f64> = a.iter().map(|x| -x).collect();
        let nb: Vec<f64> = b.iter().map(|x| -x).collect();
        let e2 = compute_eer(&nb, &na).unwrap().eer;
        let n = a.len().min(b.len()) as f64;
        assert!((e1 - e2).abs() <= 1.0 / n + 1e-12, "{e1} vs {e2}");
    }
}
