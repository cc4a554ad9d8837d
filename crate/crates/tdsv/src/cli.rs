//! Command implementations behind the binary: data generation, training,
//! evaluation, gradient checking, and attention-weight export. Kept in the
//! library so integration tests drive the exact code paths the binary runs.

use std::collections::VecDeque;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::attention::{AttentionMode, DVectorConfig, ScoringKind};
use crate::autodiff::{grad_check, Evaluation, Tape, Value};
use crate::config::RunConfig;
use crate::error::{ConfigError, DataError, NumericError};
use crate::eval::{run_matrix_eval, MatrixEval, TrialSet};
use crate::features::{
    generate_corpus, read_features, read_manifest, write_features, write_manifest, Corpus,
    FeatureMatrix, Keyword, ManifestEntry, Split, Utterance,
};
use crate::loss::{tuple_loss_on_tape, train_step, want_positive_at, Tuple, TupleSampler};
use crate::model::{Model, ModelConfig};
use crate::pooling::{PoolingConfig, PoolingKind};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Data(#[from] DataError),
    #[error("{0}")]
    Numeric(#[from] NumericError),
}

impl CliError {
    /// 1 usage/config, 2 data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

fn io_data(e: std::io::Error) -> CliError {
    CliError::Data(DataError::Io(e))
}

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const FINAL_CHECKPOINT: &str = "model.atnw";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const RESULTS_FILE: &str = "results.csv";

fn feature_filename(u: &Utterance) -> String {
    format!("spk{:04}_{}_{:03}.atnf", u.speaker, u.keyword.tag(), u.index)
}

/// Generate the train + held-out corpora, one feature file per utterance,
/// plus a manifest CSV. Deterministic per seed; held-out speaker ids continue
/// past the training range so the two pools never overlap.
pub fn cmd_gen_data(config: &RunConfig) -> Result<(), CliError> {
    config.validate()?;
    let dir = Path::new(&config.data_dir);
    fs::create_dir_all(dir).map_err(io_data)?;

    let mut entries = Vec::new();
    let mut write_pool = |corpus: &Corpus, split: Split| -> Result<(), CliError> {
        for u in &corpus.utterances {
            let path = dir.join(feature_filename(u));
            write_features(&path, &u.features)?;
            entries.push(ManifestEntry { path, speaker: u.speaker, keyword: u.keyword, split });
        }
        Ok(())
    };

    let train = generate_corpus(&config.synth_spec(), 0)?;
    write_pool(&train, Split::Train)?;
    let heldout = generate_corpus(&config.heldout_spec(), config.num_speakers as u32)?;
    write_pool(&heldout, Split::Heldout)?;

    write_manifest(&dir.join(MANIFEST_FILE), &entries)?;
    Ok(())
}

/// Read one split back from a generated corpus directory. Utterance indices
/// are assigned per (speaker, keyword) in manifest order, matching generation
/// order.
pub fn load_split(config: &RunConfig, split: Split) -> Result<Corpus, CliError> {
    let manifest = Path::new(&config.data_dir).join(MANIFEST_FILE);
    if !manifest.exists() {
        return Err(CliError::Data(DataError::Invalid(format!(
            "no manifest at {}; run gen-data first",
            manifest.display()
        ))));
    }
    let mut counts: std::collections::HashMap<(u32, Keyword), u32> = Default::default();
    let mut utterances = Vec::new();
    for entry in read_manifest(&manifest)? {
        if entry.split != split {
            continue;
        }
        let index = counts.entry((entry.speaker, entry.keyword)).or_insert(0);
        utterances.push(Utterance {
            speaker: entry.speaker,
            keyword: entry.keyword,
            index: *index,
            features: read_features(&entry.path)?,
        });
        *index += 1;
    }
    Ok(Corpus { utterances })
}

#[derive(Debug)]
pub struct TrainSummary {
    pub final_checkpoint: PathBuf,
    pub steps_run: u64,
    pub resumed_from: u64,
    pub mean_loss_last_100: f64,
}

fn checkpoint_step(path: &Path) -> Option<u64> {
    let name = path.file_name()?.to_str()?;
    let step = name.strip_prefix("ckpt-")?.strip_suffix(".atnw")?;
    step.parse().ok()
}

fn latest_checkpoint(out_dir: &Path, max_step: u64) -> Option<(u64, PathBuf)> {
    let mut best: Option<(u64, PathBuf)> = None;
    for entry in fs::read_dir(out_dir).ok()?.flatten() {
        let path = entry.path();
        if let Some(step) = checkpoint_step(&path) {
            if step < max_step && best.as_ref().map_or(true, |(s, _)| step > *s) {
                best = Some((step, path));
            }
        }
    }
    best
}

/// Train from the generated corpus. Checkpoints land in `out-dir` every
/// `checkpoint-interval` steps plus a final `model.atnw`; re-running the same
/// command resumes from the newest periodic checkpoint by replaying the tuple
/// sampler up to that step. A non-finite loss aborts without overwriting the
/// last good checkpoint.
pub fn cmd_train(config: &RunConfig) -> Result<TrainSummary, CliError> {
    config.validate()?;
    let corpus = load_split(config, Split::Train)?;
    let out_dir = Path::new(&config.out_dir);
    fs::create_dir_all(out_dir).map_err(io_data)?;

    let opt = config.optimizer();
    let model_config = config.model_config();
    let (mut model, start) = match latest_checkpoint(out_dir, opt.steps) {
        Some((step, path)) => (Model::load(model_config, &path)?, step),
        None => (
            Model::init(model_config, opt.seed).map_err(CliError::Config)?,
            0,
        ),
    };

    let mut sampler = TupleSampler::new(opt.seed, opt.tuple_size);
    for step in 0..start {
        sampler.build_tuple(&corpus, want_positive_at(step))?;
    }

    let log_path = out_dir.join(TRAIN_LOG);
    let mut log = BufWriter::new(if start == 0 {
        let mut f = File::create(&log_path).map_err(io_data)?;
        writeln!(f, "step,keyword,positive,loss,grad-norm").map_err(io_data)?;
        f
    } else {
        OpenOptions::new().append(true).open(&log_path).map_err(io_data)?
    });

    let mut recent: VecDeque<f64> = VecDeque::with_capacity(100);
    for step in start..opt.steps {
        let tuple = sampler.build_tuple(&corpus, want_positive_at(step))?;
        let stats = train_step(&mut model, &tuple, &opt)
            .map_err(|e| match e {
                NumericError::NonFiniteLoss { .. } => NumericError::NonFiniteLoss { step },
                other => other,
            })?;
        writeln!(
            log,
            "{},{},{},{},{}",
            step,
            stats.keyword.tag(),
            stats.positive as u8,
            stats.loss,
            stats.grad_norm
        )
        .map_err(io_data)?;
        if recent.len() == 100 {
            recent.pop_front();
        }
        recent.push_back(stats.loss);
        let done = step + 1;
        if done % config.checkpoint_interval == 0 && done < opt.steps {
            model.save(&out_dir.join(format!("ckpt-{done:06}.atnw")))?;
        }
    }
    log.flush().map_err(io_data)?;

    let final_checkpoint = out_dir.join(FINAL_CHECKPOINT);
    model.save(&final_checkpoint)?;
    let mean = if recent.is_empty() {
        f64::NAN
    } else {
        recent.iter().sum::<f64>() / recent.len() as f64
    };
    Ok(TrainSummary {
        final_checkpoint,
        steps_run: opt.steps.saturating_sub(start),
        resumed_from: start,
        mean_loss_last_100: mean,
    })
}

/// Evaluate a checkpoint on the held-out split: the four enroll-keyword x
/// verify-keyword EERs plus their average, written as CSV.
pub fn cmd_eval(config: &RunConfig, checkpoint: &Path) -> Result<(PathBuf, MatrixEval), CliError> {
    config.validate()?;
    let model = Model::load(config.model_config(), checkpoint)?;
    let corpus = load_split(config, Split::Heldout)?;
    let trials = TrialSet::from_corpus(&corpus, config.enroll_per_speaker)?;
    let matrix = run_matrix_eval(&model, &trials)?;

    let out_dir = Path::new(&config.out_dir);
    fs::create_dir_all(out_dir).map_err(io_data)?;
    let path = out_dir.join(RESULTS_FILE);
    let mut w = BufWriter::new(File::create(&path).map_err(io_data)?);
    writeln!(w, "enroll-keyword,verify-keyword,eer,threshold,target-trials,impostor-trials")
        .map_err(io_data)?;
    for (enroll, verify, r, _det) in &matrix.cells {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            enroll.tag(),
            verify.tag(),
            r.eer,
            r.threshold,
            r.num_target_trials,
            r.num_impostor_trials
        )
        .map_err(io_data)?;
    }
    writeln!(w, "average,average,{},,,", matrix.average_eer()).map_err(io_data)?;
    w.flush().map_err(io_data)?;
    Ok((path, matrix))
}

/// Attention weights for `batch` held-out utterances under one pooling
/// setting; rows are utterances, columns frames.
pub fn attention_heatmap(
    model: &Model,
    pooling: PoolingConfig,
    utterances: &[&Utterance],
) -> Result<Vec<Vec<f64>>, CliError> {
    let mut variant = model.clone();
    variant.config.dvec.pooling = pooling;
    let mut rows = Vec::with_capacity(utterances.len());
    for u in utterances {
        let (_, alpha) = variant.embed(&u.features);
        let alpha = alpha.ok_or_else(|| {
            CliError::Config(ConfigError::Invalid("no attention weights".into()))
        })?;
        rows.push(alpha);
    }
    Ok(rows)
}

/// Pixel rule: exactly the zero weights map to 0; every surviving weight maps
/// to at least 1, so nonzero-pixel counts mirror nonzero-weight counts.
pub fn heatmap_pixels(rows: &[Vec<f64>]) -> Vec<Vec<u8>> {
    rows.iter()
        .map(|row| {
            let max = row.iter().cloned().fold(0.0f64, f64::max);
            row.iter()
                .map(|&a| {
                    if a <= 0.0 || max <= 0.0 {
                        0
                    } else {
                        ((a / max * 255.0).round() as u8).max(1)
                    }
                })
                .collect()
        })
        .collect()
}

fn write_pgm(path: &Path, pixels: &[Vec<u8>]) -> Result<(), CliError> {
    let height = pixels.len();
    let width = pixels.first().map_or(0, |r| r.len());
    let mut w = BufWriter::new(File::create(path).map_err(io_data)?);
    write!(w, "P5\n{width} {height}\n255\n").map_err(io_data)?;
    for row in pixels {
        w.write_all(row).map_err(io_data)?;
    }
    w.flush().map_err(io_data)?;
    Ok(())
}

fn write_heatmap_csv(path: &Path, rows: &[Vec<f64>]) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_data)?);
    for row in rows {
        let line: Vec<String> = row.iter().map(|a| a.to_string()).collect();
        writeln!(w, "{}", line.join(",")).map_err(io_data)?;
    }
    w.flush().map_err(io_data)?;
    Ok(())
}

/// Export attention heatmaps for the three pooling settings (none, sliding
/// window, top-K) as PGM images plus CSV mirrors. Baseline checkpoints carry
/// no attention weights and are rejected.
pub fn cmd_viz_weights(
    config: &RunConfig,
    checkpoint: &Path,
    batch: usize,
) -> Result<Vec<PathBuf>, CliError> {
    config.validate()?;
    if config.mode == AttentionMode::LastFrameBaseline {
        return Err(CliError::Config(ConfigError::Invalid("no attention weights".into())));
    }
    let model = Model::load(config.model_config(), checkpoint)?;
    let corpus = load_split(config, Split::Heldout)?;
    let utterances: Vec<&Utterance> =
        corpus.utterances.iter().filter(|u| u.keyword == Keyword::A).take(batch).collect();
    if utterances.is_empty() {
        return Err(CliError::Data(DataError::Invalid("no held-out utterances to plot".into())));
    }

    let out_dir = Path::new(&config.out_dir);
    fs::create_dir_all(out_dir).map_err(io_data)?;
    let settings = [
        ("none", PoolingConfig::none()),
        ("sliding", PoolingConfig::sliding(config.pooling_window, config.pooling_step)),
        ("topk", PoolingConfig::top_k(config.pooling_k)),
    ];
    let mut written = Vec::new();
    for (tag, pooling) in settings {
        let rows = attention_heatmap(&model, pooling, &utterances)?;
        let pgm = out_dir.join(format!("attention-{tag}.pgm"));
        write_pgm(&pgm, &heatmap_pixels(&rows))?;
        write_heatmap_csv(&out_dir.join(format!("attention-{tag}.csv")), &rows)?;
        written.push(pgm);
    }
    Ok(written)
}

#[derive(Debug)]
pub struct GradcheckRow {
    pub scoring: &'static str,
    pub mode: &'static str,
    pub pooling: &'static str,
    pub max_rel_err: f64,
}

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

fn gradcheck_scorings() -> [ScoringKind; 5] {
    [
        ScoringKind::BiasOnly,
        ScoringKind::Linear,
        ScoringKind::SharedLinear,
        ScoringKind::NonLinear { hidden: 3 },
        ScoringKind::SharedNonLinear { hidden: 3 },
    ]
}

fn gradcheck_modes() -> [AttentionMode; 3] {
    [AttentionMode::Basic, AttentionMode::CrossLayer, AttentionMode::DividedLayer]
}

fn gradcheck_poolings() -> [PoolingConfig; 3] {
    [
        PoolingConfig::none(),
        PoolingConfig::sliding(3, 2),
        PoolingConfig::top_k(3),
    ]
}

fn random_features(rng: &mut ChaCha8Rng, frames: usize, dim: usize) -> FeatureMatrix {
    let data: Vec<f64> = (0..frames * dim).map(|_| StandardNormal.sample(rng)).collect();
    FeatureMatrix::new(frames, dim, data)
}

/// Max relative error of the analytic TE2E gradient against central finite
/// differences for one scoring x mode x pooling combination at tiny dims.
/// `corrupt` deliberately breaks one gradient entry; the self-test relies on
/// the harness flagging it.
pub fn gradcheck_combo(
    scoring: ScoringKind,
    mode: AttentionMode,
    pooling: PoolingConfig,
    seed: u64,
    corrupt: bool,
) -> f64 {
    gradcheck_combo_with_step(scoring, mode, pooling, seed, corrupt, 1e-5)
}

pub fn gradcheck_combo_with_step(
    scoring: ScoringKind,
    mode: AttentionMode,
    pooling: PoolingConfig,
    seed: u64,
    corrupt: bool,
    step: f64,
) -> f64 {
    let dvec = DVectorConfig { mode, scoring, pooling };
    let config = ModelConfig::tiny(dvec);
    let mut model = Model::init(config, seed).expect("tiny config is valid");

    // Check at a generic parameter point, not the training init: the
    // near-symmetric init leaves attention weights almost tied, and pooled
    // attention is only piecewise smooth. A check point within the FD step of
    // an argmax boundary would difference across a jump and report a bogus
    // error, so redraw parameters and features until every utterance's
    // pre-pool weights keep a comfortable margin around the survivor
    // decisions.
    let mut feats = Vec::new();
    let mut safe = false;
    for salt in 0..64u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(
            seed.wrapping_mul(0x9e37_79b9).wrapping_add(7 + salt * 0x51_7cc1),
        );
        let point: Vec<Value> = model
            .store
            .values()
            .iter()
            .map(|v| Value {
                shape: v.shape,
                data: v
                    .data
                    .iter()
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        0.5 * z
                    })
                    .collect(),
            })
            .collect();
        model.store.set_all(&point);
        feats = (0..3)
            .map(|_| random_features(&mut rng, config.frames, config.net.input_dim))
            .collect();
        let mut nopool = model.clone();
        nopool.config.dvec.pooling = PoolingConfig::none();
        // The 1e-5 FD step moves individual weights by ~1e-5, so a 2e-4
        // margin keeps a ~20x safety factor around every argmax decision.
        safe = feats.iter().all(|f| {
            let (_, alpha) = nopool.embed(f);
            alpha.map_or(true, |a| crate::pooling::decision_margin(&a, &pooling) > 2e-4)
        });
        if safe {
            break;
        }
    }
    assert!(safe, "no margin-safe check point found in 64 attempts");
    let tuple = Tuple {
        evaluation: &feats[0],
        enrollment: vec![&feats[1], &feats[2]],
        keyword: Keyword::A,
        positive: seed % 2 == 0,
    };

    let f = |point: &[Value]| {
        let mut m = model.clone();
        m.store.set_all(point);
        let mut tape = Tape::new();
        let bound = m.store.bind(&mut tape);
        let loss = tuple_loss_on_tape(&mut tape, &bound, &m, &tuple, crate::loss::LossForm::Corrected)
            .expect("tiny tuple loss");
        let value = tape.scalar_value(loss);
        tape.backward(loss).expect("scalar root");
        let mut grads: Vec<Vec<f64>> = bound.iter().map(|&id| tape.grad(id).to_vec()).collect();
        if corrupt {
            grads[0][0] += 0.5;
        }
        Evaluation { value, grads }
    };
    let point = model.store.values().to_vec();
    grad_check(&f, &point, step).expect("finite loss at init")
}

/// Every scoring x attention-mode x pooling combination (5 x 3 x 3 = 45 rows),
/// reporting the max relative error across `seeds` seeds.
pub fn run_gradcheck(seeds: u64, corrupt: bool) -> Vec<GradcheckRow> {
    let mut rows = Vec::with_capacity(45);
    for scoring in gradcheck_scorings() {
        for mode in gradcheck_modes() {
            for pooling in gradcheck_poolings() {
                let mut max_rel_err = 0.0f64;
                for seed in 0..seeds {
                    max_rel_err =
                        max_rel_err.max(gradcheck_combo(scoring, mode, pooling, seed, corrupt));
                }
                rows.push(GradcheckRow {
                    scoring: scoring.tag(),
                    mode: mode.tag(),
                    pooling: match pooling.kind {
                        PoolingKind::None => "none",
                        PoolingKind::SlidingWindow { .. } => "sliding",
                        PoolingKind::TopK { .. } => "topk",
                    },
                    max_rel_err,
                });
            }
        }
    }
    rows
}
