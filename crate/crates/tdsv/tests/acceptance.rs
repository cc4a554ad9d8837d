//! Acceptance gate: seven checks covering gradients, normalization and
//! pooling invariants, EER computation, the loss, a desk-scale ordering
//! experiment, heatmap export, and bit-level determinism. Run with
//! `cargo test --test acceptance -- --nocapture` to see the per-criterion
//! report; the whole suite takes roughly half an hour, dominated by the two
//! 5000-step trainings of criterion 5.

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tdsv::attention::{normalize, AttentionMode, DVectorConfig, ScoringKind};
use tdsv::autodiff::{Tape, Value};
use tdsv::cli::{
    self, GRADCHECK_TOLERANCE,
};
use tdsv::config::RunConfig;
use tdsv::eval::compute_eer;
use tdsv::features::{FeatureMatrix, Split};
use tdsv::loss::{te2e_value, train_step, LossForm, OptimizerConfig, Tuple};
use tdsv::model::{Model, ModelConfig};
use tdsv::network::lstmp_forward;
use tdsv::pooling::{pool, PoolingConfig};

struct Criterion {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn report(results: &[Criterion]) {
    for r in results {
        println!(
            "ACCEPTANCE {:<14} {}  ({})",
            r.name,
            if r.pass { "PASS" } else { "FAIL" },
            r.detail
        );
    }
}

// ---- criterion 1: gradient suite ------------------------------------------

const GRADCHECK_SEEDS: u64 = 10;
const GRADCHECK_BUDGET_SECS: f64 = 120.0;

fn criterion_gradients() -> Criterion {
    let start = Instant::now();
    let rows = cli::run_gradcheck(GRADCHECK_SEEDS, false);
    let elapsed = start.elapsed().as_secs_f64();
    let worst = rows.iter().map(|r| r.max_rel_err).fold(0.0f64, f64::max);
    let all_ok = rows.len() == 45 && rows.iter().all(|r| r.max_rel_err < GRADCHECK_TOLERANCE);
    Criterion {
        name: "gradients",
        pass: all_ok && elapsed < GRADCHECK_BUDGET_SECS,
        detail: format!(
            "{} combos, max rel err {:.2e} < {:.0e}, {:.1}s < {:.0}s",
            rows.len(),
            worst,
            GRADCHECK_TOLERANCE,
            elapsed,
            GRADCHECK_BUDGET_SECS
        ),
    }
}

// ---- criterion 2: normalization / pooling invariants -----------------------

const PROPERTY_ITERATIONS: usize = 1000;
const SOFTMAX_TOLERANCE: f64 = 1e-12;

fn softmax_values(scores: &[f64]) -> Vec<f64> {
    let mut tape = Tape::new();
    let node = tape.constant(Value::vector(scores.to_vec()));
    let alpha = normalize(&mut tape, node);
    tape.value(alpha).to_vec()
}

fn random_pooling(rng: &mut ChaCha8Rng, len: usize) -> PoolingConfig {
    match rng.gen_range(0..3) {
        0 => PoolingConfig::none(),
        1 => PoolingConfig::sliding(rng.gen_range(1..=len), rng.gen_range(1..=len)),
        _ => PoolingConfig::top_k(rng.gen_range(1..=len)),
    }
}

fn criterion_invariants() -> Criterion {
    let mut rng = ChaCha8Rng::seed_from_u64(0x117a);
    let mut failures = Vec::new();

    for _ in 0..PROPERTY_ITERATIONS {
        let len = rng.gen_range(2..=80);
        let scores: Vec<f64> = (0..len).map(|_| rng.gen_range(-6.0..6.0)).collect();
        let alpha = softmax_values(&scores);
        let sum: f64 = alpha.iter().sum();
        if (sum - 1.0).abs() > SOFTMAX_TOLERANCE {
            failures.push(format!("softmax sum {sum}"));
            break;
        }
        let shift = rng.gen_range(-50.0..50.0);
        let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
        let alpha2 = softmax_values(&shifted);
        if alpha.iter().zip(&alpha2).any(|(a, b)| (a - b).abs() > SOFTMAX_TOLERANCE) {
            failures.push("softmax not shift-invariant".into());
            break;
        }

        // identities: top-K with K >= T, sliding window with window 1
        let identity_k = pool(&alpha, &PoolingConfig::top_k(len + rng.gen_range(0..4)));
        let identity_w = pool(&alpha, &PoolingConfig::sliding(1, rng.gen_range(1..=len)));
        if identity_k != alpha || identity_w != alpha {
            failures.push("pooling identity violated".into());
            break;
        }

        // pooled + renormalized weights stay probability vectors
        let pooled = pool(&alpha, &random_pooling(&mut rng, len));
        let psum: f64 = pooled.iter().sum();
        if pooled.iter().any(|&p| p < 0.0) || (psum - 1.0).abs() > SOFTMAX_TOLERANCE {
            failures.push(format!("pooled weights not a probability vector (sum {psum})"));
            break;
        }
    }

    // divided-layer output stays in the coordinate bounding box of the
    // part-a frame vectors (a necessary condition for convex-hull membership)
    let dvec = DVectorConfig {
        mode: AttentionMode::DividedLayer,
        scoring: ScoringKind::SharedLinear,
        pooling: PoolingConfig::none(),
    };
    let config = ModelConfig::tiny(dvec);
    let half = config.net.output_dim() / 2;
    for i in 0..PROPERTY_ITERATIONS {
        let model = Model::init(config, i as u64 % 7).unwrap();
        let data: Vec<f64> = (0..config.frames * config.net.input_dim)
            .map(|_| rng.gen_range(-2.0..2.0))
            .collect();
        let features = FeatureMatrix::new(config.frames, config.net.input_dim, data);
        let (omega, _) = model.embed(&features);

        let mut tape = Tape::new();
        let bound = model.store.bind(&mut tape);
        let seq = lstmp_forward(&mut tape, &bound, &config.net, &model.net, &features);
        let parts_a: Vec<Vec<f64>> = seq
            .frame_outputs
            .iter()
            .map(|&f| tape.value(f)[..half].to_vec())
            .collect();
        let in_box = (0..half).all(|d| {
            let lo = parts_a.iter().map(|p| p[d]).fold(f64::INFINITY, f64::min);
            let hi = parts_a.iter().map(|p| p[d]).fold(f64::NEG_INFINITY, f64::max);
            omega[d] >= lo - 1e-9 && omega[d] <= hi + 1e-9
        });
        if !in_box {
            failures.push("divided-layer output escapes part-a hull".into());
            break;
        }
    }

    Criterion {
        name: "invariants",
        pass: failures.is_empty(),
        detail: if failures.is_empty() {
            format!("{PROPERTY_ITERATIONS} random inputs per property, tol {SOFTMAX_TOLERANCE:.0e}")
        } else {
            failures.join("; ")
        },
    }
}

// ---- criterion 3: EER oracle equivalence ----------------------------------

const EER_RANDOM_SETS: usize = 100;

/// Brute force: try every distinct score as the threshold (plus the
/// infinities), no midpoints, no sorting tricks.
fn eer_oracle(targets: &[f64], impostors: &[f64]) -> f64 {
    let mut candidates: Vec<f64> = targets.iter().chain(impostors).cloned().collect();
    candidates.push(f64::NEG_INFINITY);
    candidates.push(f64::INFINITY);
    let mut best = f64::INFINITY;
    let mut eer = f64::NAN;
    for &theta in &candidates {
        let frr = targets.iter().filter(|&&t| t < theta).count() as f64 / targets.len() as f64;
        let far = impostors.iter().filter(|&&i| i >= theta).count() as f64 / impostors.len() as f64;
        let gap = (far - frr).abs();
        if gap < best {
            best = gap;
            eer = 0.5 * (far + frr);
        }
    }
    eer
}

fn criterion_eer() -> Criterion {
    let mut rng = ChaCha8Rng::seed_from_u64(0xee5);
    let mut worst_gap = 0.0f64;
    for _ in 0..EER_RANDOM_SETS {
        let nt = rng.gen_range(1..40);
        let ni = rng.gen_range(1..40);
        // a coarse grid forces ties between scores
        let draw = |rng: &mut ChaCha8Rng| (rng.gen_range(-8..8) as f64) / 4.0;
        let targets: Vec<f64> = (0..nt).map(|_| draw(&mut rng)).collect();
        let impostors: Vec<f64> = (0..ni).map(|_| draw(&mut rng)).collect();
        let got = compute_eer(&targets, &impostors).unwrap().eer;
        let want = eer_oracle(&targets, &impostors);
        let tolerance = 1.0 / (nt + ni) as f64;
        let gap = (got - want).abs();
        worst_gap = worst_gap.max(gap / tolerance);
        if gap > tolerance {
            return Criterion {
                name: "eer-oracle",
                pass: false,
                detail: format!("got {got}, oracle {want}, tolerance {tolerance}"),
            };
        }
    }

    let separable = compute_eer(&[0.9, 0.8], &[0.2, 0.1]).unwrap().eer;
    let identical = compute_eer(&[0.5, 0.5], &[0.5, 0.5]).unwrap().eer;
    let worked = compute_eer(&[0.9, 0.8, 0.3], &[0.5, 0.2, 0.1]).unwrap().eer;
    let worked_ok = separable == 0.0
        && (identical - 0.5).abs() < 1e-12
        && (worked - 1.0 / 3.0).abs() < 1e-12;
    Criterion {
        name: "eer-oracle",
        pass: worked_ok,
        detail: format!(
            "{EER_RANDOM_SETS} random sets within 1/#trials (worst {:.2}x tolerance); \
             separable {separable}, identical {identical}, 3+3 {worked:.4}",
            worst_gap
        ),
    }
}

// ---- criterion 4: loss sanity ---------------------------------------------

const LOSS_COMPLEMENT_TOLERANCE: f64 = 1e-12;
const DESCENT_MIN_TRANSITIONS: usize = 45;

fn criterion_loss() -> Criterion {
    let mut rng = ChaCha8Rng::seed_from_u64(0x105e);
    for _ in 0..1000 {
        let s = rng.gen_range(-20.0..20.0);
        let total = te2e_value(s, true, LossForm::Corrected) + te2e_value(s, false, LossForm::Corrected);
        if (total - 1.0).abs() > LOSS_COMPLEMENT_TOLERANCE {
            return Criterion {
                name: "loss",
                pass: false,
                detail: format!("pos+neg = {total} at s = {s}"),
            };
        }
    }

    let dvec = DVectorConfig {
        mode: AttentionMode::Basic,
        scoring: ScoringKind::SharedLinear,
        pooling: PoolingConfig::none(),
    };
    let config = ModelConfig::tiny(dvec);
    let mut model = Model::init(config, 3).unwrap();
    let feats: Vec<FeatureMatrix> = (0..3)
        .map(|i| {
            let data: Vec<f64> = (0..config.frames * config.net.input_dim)
                .map(|j| ((i * 31 + j) as f64 * 0.37).sin())
                .collect();
            FeatureMatrix::new(config.frames, config.net.input_dim, data)
        })
        .collect();
    let tuple = Tuple {
        evaluation: &feats[0],
        enrollment: vec![&feats[1], &feats[2]],
        keyword: tdsv::features::Keyword::A,
        positive: true,
    };
    let opt = OptimizerConfig { steps: 50, ..OptimizerConfig::default() };
    let losses: Vec<f64> =
        (0..50).map(|_| train_step(&mut model, &tuple, &opt).unwrap().loss).collect();
    let decreases = losses.windows(2).filter(|w| w[1] < w[0]).count();
    Criterion {
        name: "loss",
        pass: decreases >= DESCENT_MIN_TRANSITIONS,
        detail: format!(
            "complement holds for 1000 scores; descent {decreases}/49 transitions \
             (need >= {DESCENT_MIN_TRANSITIONS})"
        ),
    }
}

// ---- criterion 5: desk-scale experiment -----------------------------------

const EXPERIMENT_SEED: u64 = 1;
const EER_CEILING: f64 = 0.25;
const ATTENTION_MASS_RATIO: f64 = 1.5;

fn experiment_config(root: &Path, mode: &str) -> RunConfig {
    let mut c = RunConfig::default();
    c.set("seed", &EXPERIMENT_SEED.to_string()).unwrap();
    c.set("data-dir", root.join("data").to_str().unwrap()).unwrap();
    c.set("out-dir", root.join(format!("out-{mode}")).to_str().unwrap()).unwrap();
    match mode {
        "baseline" => c.set("mode", "baseline").unwrap(),
        "attention" => {
            c.set("mode", "divided").unwrap();
            c.set("scoring", "snl").unwrap();
            c.set("pooling", "sliding").unwrap();
        }
        other => panic!("unknown experiment arm {other}"),
    }
    c
}

/// Mean pooled attention weight per phoneme-labeled frame over mean weight
/// per silence frame, aggregated over every held-out utterance.
fn attention_mass_ratio(model: &Model, config: &RunConfig) -> f64 {
    let corpus = cli::load_split(config, Split::Heldout).unwrap();
    let (mut mass_p, mut n_p, mut mass_s, mut n_s) = (0.0, 0usize, 0.0, 0usize);
    for u in &corpus.utterances {
        let (_, alpha) = model.embed(&u.features);
        let alpha = alpha.expect("attention model");
        for (t, &a) in alpha.iter().enumerate() {
            if u.features.is_silence(t).expect("generated corpus is labeled") {
                mass_s += a;
                n_s += 1;
            } else {
                mass_p += a;
                n_p += 1;
            }
        }
    }
    (mass_p / n_p as f64) / (mass_s / n_s as f64)
}

fn criterion_experiment(root: &Path) -> (Criterion, RunConfig) {
    let start = Instant::now();
    let base = experiment_config(root, "baseline");
    let attn = experiment_config(root, "attention");
    cli::cmd_gen_data(&base).unwrap();

    let base_summary = cli::cmd_train(&base).unwrap();
    let attn_summary = cli::cmd_train(&attn).unwrap();
    let (_, base_eval) = cli::cmd_eval(&base, &base_summary.final_checkpoint).unwrap();
    let (_, attn_eval) = cli::cmd_eval(&attn, &attn_summary.final_checkpoint).unwrap();
    let (eer_a, eer_b) = (base_eval.average_eer(), attn_eval.average_eer());

    let model_b = Model::load(attn.model_config(), &attn_summary.final_checkpoint).unwrap();
    let ratio = attention_mass_ratio(&model_b, &attn);
    let minutes = start.elapsed().as_secs_f64() / 60.0;

    let pass = eer_a < EER_CEILING && eer_b < EER_CEILING && eer_b <= eer_a
        && ratio >= ATTENTION_MASS_RATIO;
    (
        Criterion {
            name: "experiment",
            pass,
            detail: format!(
                "baseline avg EER {eer_a:.4}, attention avg EER {eer_b:.4} (ceiling {EER_CEILING}), \
                 phoneme/silence attention mass {ratio:.2} (need >= {ATTENTION_MASS_RATIO}), \
                 {minutes:.1} min"
            ),
        },
        attn,
    )
}

// ---- criterion 6: heatmap export ------------------------------------------

fn read_pgm(path: &Path) -> (usize, usize, Vec<u8>) {
    let bytes = std::fs::read(path).unwrap();
    let header_end = bytes
        .windows(1)
        .enumerate()
        .filter(|(_, w)| w[0] == b'\n')
        .map(|(i, _)| i)
        .nth(2)
        .unwrap()
        + 1;
    let header = std::str::from_utf8(&bytes[..header_end]).unwrap();
    let mut lines = header.lines();
    assert_eq!(lines.next(), Some("P5"));
    let dims: Vec<usize> =
        lines.next().unwrap().split_whitespace().map(|t| t.parse().unwrap()).collect();
    assert_eq!(lines.next(), Some("255"));
    (dims[0], dims[1], bytes[header_end..].to_vec())
}

fn criterion_heatmaps(config: &RunConfig, checkpoint: &Path) -> Criterion {
    let batch = 8;
    let written = cli::cmd_viz_weights(config, checkpoint, batch).unwrap();
    assert_eq!(written.len(), 3);

    let mut failures = Vec::new();
    for path in &written {
        let (width, height, pixels) = read_pgm(path);
        assert_eq!(height, batch);
        let name = path.file_name().unwrap().to_str().unwrap();
        for row in pixels.chunks(width) {
            let nonzero = row.iter().filter(|&&p| p != 0).count();
            let ok = if name.contains("topk") {
                nonzero == config.pooling_k
            } else if name.contains("sliding") {
                nonzero <= config.frames.div_ceil(config.pooling_step)
            } else {
                nonzero == width
            };
            if !ok {
                failures.push(format!("{name}: row with {nonzero} nonzero pixels"));
            }
        }
    }
    Criterion {
        name: "heatmaps",
        pass: failures.is_empty(),
        detail: if failures.is_empty() {
            format!(
                "top-K rows have exactly {} nonzero pixels, sliding rows <= {}",
                config.pooling_k,
                config.frames.div_ceil(config.pooling_step)
            )
        } else {
            failures.join("; ")
        },
    }
}

// ---- criterion 7: determinism ---------------------------------------------

fn criterion_determinism(root: &Path) -> Criterion {
    let run = |tag: &str| {
        let mut c = RunConfig::default();
        c.set("seed", "9").unwrap();
        c.set("num-speakers", "6").unwrap();
        c.set("heldout-speakers", "2").unwrap();
        c.set("utterances-per-speaker", "6").unwrap();
        c.set("enroll-per-speaker", "3").unwrap();
        c.set("steps", "40").unwrap();
        c.set("checkpoint-interval", "20").unwrap();
        c.set("mode", "divided").unwrap();
        c.set("scoring", "snl").unwrap();
        c.set("pooling", "sliding").unwrap();
        c.set("data-dir", root.join(format!("det-{tag}/data")).to_str().unwrap()).unwrap();
        c.set("out-dir", root.join(format!("det-{tag}/out")).to_str().unwrap()).unwrap();
        cli::cmd_gen_data(&c).unwrap();
        let summary = cli::cmd_train(&c).unwrap();
        cli::cmd_eval(&c, &summary.final_checkpoint).unwrap();
        c
    };
    let a = run("a");
    let b = run("b");

    let mut mismatches = Vec::new();
    for file in ["model.atnw", "ckpt-000020.atnw", "results.csv", "train_log.csv"] {
        let bytes_a = std::fs::read(Path::new(&a.out_dir).join(file)).unwrap();
        let bytes_b = std::fs::read(Path::new(&b.out_dir).join(file)).unwrap();
        if bytes_a != bytes_b {
            mismatches.push(file);
        }
    }
    Criterion {
        name: "determinism",
        pass: mismatches.is_empty(),
        detail: if mismatches.is_empty() {
            "checkpoints, results CSV, and training log are bit-identical across runs".into()
        } else {
            format!("differs: {mismatches:?}")
        },
    }
}

// ---- gate ------------------------------------------------------------------

#[test]
fn acceptance() {
    let scratch = tempfile::tempdir().unwrap();
    let mut results = Vec::new();

    results.push(criterion_gradients());
    results.push(criterion_invariants());
    results.push(criterion_eer());
    results.push(criterion_loss());
    let (experiment, attn_config) = criterion_experiment(scratch.path());
    let checkpoint = Path::new(&attn_config.out_dir).join(cli::FINAL_CHECKPOINT);
    results.push(experiment);
    results.push(criterion_heatmaps(&attn_config, &checkpoint));
    results.push(criterion_determinism(scratch.path()));

    report(&results);
    assert!(results.iter().all(|r| r.pass), "acceptance criteria failed");
}
