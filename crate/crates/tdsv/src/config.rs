//! Flat `key = value` run configuration.
//!
//! One namespace, no sections. Unknown keys are rejected so a typo never
//! silently falls back to a default. `parse(to_text(c)) == c` holds for every
//! valid config, which keeps saved run configs diffable and replayable.

use std::fmt::Write as _;
use std::path::Path;

use crate::attention::{AttentionMode, DVectorConfig, ScoringKind};
use crate::error::ConfigError;
use crate::features::SynthSpec;
use crate::loss::{LossForm, OptimizerConfig};
use crate::model::ModelConfig;
use crate::network::NetworkConfig;
use crate::pooling::{PoolingConfig, PoolingKind};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    // network
    pub input_dim: usize,
    pub num_layers: usize,
    pub cell_dim: usize,
    pub projection_dim: usize,
    pub final_linear_dim: usize,
    pub frames: usize,
    // d-vector head
    pub mode: AttentionMode,
    pub scoring: &'static str,
    pub scoring_hidden_dim: usize,
    pub pooling: &'static str,
    pub pooling_window: usize,
    pub pooling_step: usize,
    pub pooling_k: usize,
    pub pooling_renormalize: bool,
    // optimizer
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub steps: u64,
    pub tuple_size: usize,
    pub loss_form: LossForm,
    pub seed: u64,
    pub checkpoint_interval: u64,
    // corpus
    pub num_speakers: usize,
    pub heldout_speakers: usize,
    pub utterances_per_speaker: usize,
    pub noise_level: f64,
    pub silence_level: f64,
    pub silence_noise_scale: f64,
    pub offset_scale: f64,
    // evaluation
    pub enroll_per_speaker: usize,
    // paths
    pub data_dir: String,
    pub out_dir: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            input_dim: 40,
            num_layers: 3,
            cell_dim: 128,
            projection_dim: 64,
            final_linear_dim: 64,
            frames: 80,
            mode: AttentionMode::Basic,
            scoring: "snl",
            scoring_hidden_dim: 64,
            pooling: "none",
            pooling_window: 10,
            pooling_step: 5,
            pooling_k: 5,
            pooling_renormalize: true,
            learning_rate: 0.01,
            clip_norm: 3.0,
            steps: 5000,
            tuple_size: 4,
            loss_form: LossForm::Corrected,
            seed: 0,
            checkpoint_interval: 500,
            num_speakers: 64,
            heldout_speakers: 16,
            utterances_per_speaker: 20,
            noise_level: 0.1,
            silence_level: 0.0,
            silence_noise_scale: 1.0,
            offset_scale: 1.0,
            enroll_per_speaker: 10,
            data_dir: "data".into(),
            out_dir: "out".into(),
        }
    }
}

fn invalid(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::InvalidValue { key: key.into(), reason: reason.into() }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.trim().parse().map_err(|_| invalid(key, format!("cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value.trim() {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(invalid(key, format!("expected true/false, got `{other}`"))),
    }
}

impl RunConfig {
    /// Apply one `key = value` assignment; also the CLI-override entry point.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "input-dim" => self.input_dim = parse_num(key, value)?,
            "num-layers" => self.num_layers = parse_num(key, value)?,
            "cell-dim" => self.cell_dim = parse_num(key, value)?,
            "projection-dim" => self.projection_dim = parse_num(key, value)?,
            "final-linear-dim" => self.final_linear_dim = parse_num(key, value)?,
            "frames" => self.frames = parse_num(key, value)?,
            "mode" => {
                self.mode = match value.trim() {
                    "baseline" => AttentionMode::LastFrameBaseline,
                    "basic" => AttentionMode::Basic,
                    "cross" => AttentionMode::CrossLayer,
                    "divided" => AttentionMode::DividedLayer,
                    other => {
                        return Err(invalid(
                            key,
                            format!("expected baseline|basic|cross|divided, got `{other}`"),
                        ))
                    }
                }
            }
            "scoring" => {
                self.scoring = match value.trim() {
                    "bo" => "bo",
                    "l" => "l",
                    "sl" => "sl",
                    "nl" => "nl",
                    "snl" => "snl",
                    other => {
                        return Err(invalid(key, format!("expected bo|l|sl|nl|snl, got `{other}`")))
                    }
                }
            }
            "scoring-hidden-dim" => self.scoring_hidden_dim = parse_num(key, value)?,
            "pooling" => {
                self.pooling = match value.trim() {
                    "none" => "none",
                    "sliding" => "sliding",
                    "topk" => "topk",
                    other => {
                        return Err(invalid(key, format!("expected none|sliding|topk, got `{other}`")))
                    }
                }
            }
            "pooling-window" => self.pooling_window = parse_num(key, value)?,
            "pooling-step" => self.pooling_step = parse_num(key, value)?,
            "pooling-k" => self.pooling_k = parse_num(key, value)?,
            "pooling-renormalize" => self.pooling_renormalize = parse_bool(key, value)?,
            "learning-rate" => self.learning_rate = parse_num(key, value)?,
            "clip-norm" => self.clip_norm = parse_num(key, value)?,
            "steps" => self.steps = parse_num(key, value)?,
            "tuple-size" => self.tuple_size = parse_num(key, value)?,
            "loss-form" => {
                self.loss_form = match value.trim() {
                    "corrected" => LossForm::Corrected,
                    "paper" => LossForm::Paper,
                    other => {
                        return Err(invalid(key, format!("expected corrected|paper, got `{other}`")))
                    }
                }
            }
            "seed" => self.seed = parse_num(key, value)?,
            "checkpoint-interval" => self.checkpoint_interval = parse_num(key, value)?,
            "num-speakers" => self.num_speakers = parse_num(key, value)?,
            "heldout-speakers" => self.heldout_speakers = parse_num(key, value)?,
            "utterances-per-speaker" => self.utterances_per_speaker = parse_num(key, value)?,
            "noise-level" => self.noise_level = parse_num(key, value)?,
            "silence-level" => self.silence_level = parse_num(key, value)?,
            "silence-noise-scale" => self.silence_noise_scale = parse_num(key, value)?,
            "offset-scale" => self.offset_scale = parse_num(key, value)?,
            "enroll-per-speaker" => self.enroll_per_speaker = parse_num(key, value)?,
            "data-dir" => self.data_dir = value.trim().to_string(),
            "out-dir" => self.out_dir = value.trim().to_string(),
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        let mut config = RunConfig::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                ConfigError::Invalid(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            config.set(key.trim(), value)?;
        }
        Ok(config)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut w = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        w("input-dim", self.input_dim.to_string());
        w("num-layers", self.num_layers.to_string());
        w("cell-dim", self.cell_dim.to_string());
        w("projection-dim", self.projection_dim.to_string());
        w("final-linear-dim", self.final_linear_dim.to_string());
        w("frames", self.frames.to_string());
        w("mode", self.mode.tag().to_string());
        w("scoring", self.scoring.to_string());
        w("scoring-hidden-dim", self.scoring_hidden_dim.to_string());
        w("pooling", self.pooling.to_string());
        w("pooling-window", self.pooling_window.to_string());
        w("pooling-step", self.pooling_step.to_string());
        w("pooling-k", self.pooling_k.to_string());
        w("pooling-renormalize", self.pooling_renormalize.to_string());
        w("learning-rate", self.learning_rate.to_string());
        w("clip-norm", self.clip_norm.to_string());
        w("steps", self.steps.to_string());
        w("tuple-size", self.tuple_size.to_string());
        w("loss-form", match self.loss_form {
            LossForm::Corrected => "corrected".to_string(),
            LossForm::Paper => "paper".to_string(),
        });
        w("seed", self.seed.to_string());
        w("checkpoint-interval", self.checkpoint_interval.to_string());
        w("num-speakers", self.num_speakers.to_string());
        w("heldout-speakers", self.heldout_speakers.to_string());
        w("utterances-per-speaker", self.utterances_per_speaker.to_string());
        w("noise-level", self.noise_level.to_string());
        w("silence-level", self.silence_level.to_string());
        w("silence-noise-scale", self.silence_noise_scale.to_string());
        w("offset-scale", self.offset_scale.to_string());
        w("enroll-per-speaker", self.enroll_per_speaker.to_string());
        w("data-dir", self.data_dir.clone());
        w("out-dir", self.out_dir.clone());
        s
    }

    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), ConfigError> {
        Ok(std::fs::write(path, self.to_text())?)
    }

    pub fn scoring_kind(&self) -> ScoringKind {
        match self.scoring {
            "bo" => ScoringKind::BiasOnly,
            "l" => ScoringKind::Linear,
            "sl" => ScoringKind::SharedLinear,
            "nl" => ScoringKind::NonLinear { hidden: self.scoring_hidden_dim },
            "snl" => ScoringKind::SharedNonLinear { hidden: self.scoring_hidden_dim },
            other => unreachable!("scoring tag {other} rejected at parse time"),
        }
    }

    pub fn pooling_config(&self) -> PoolingConfig {
        let kind = match self.pooling {
            "none" => PoolingKind::None,
            "sliding" => {
                PoolingKind::SlidingWindow { window: self.pooling_window, step: self.pooling_step }
            }
            "topk" => PoolingKind::TopK { k: self.pooling_k },
            other => unreachable!("pooling tag {other} rejected at parse time"),
        };
        PoolingConfig { kind, renormalize: self.pooling_renormalize }
    }

    pub fn dvector_config(&self) -> DVectorConfig {
        DVectorConfig {
            mode: self.mode,
            scoring: self.scoring_kind(),
            pooling: self.pooling_config(),
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        let last = if self.mode == AttentionMode::DividedLayer {
            2 * self.projection_dim
        } else {
            self.projection_dim
        };
        ModelConfig {
            net: NetworkConfig {
                input_dim: self.input_dim,
                num_layers: self.num_layers,
                cell_dim: self.cell_dim,
                projection_dim: self.projection_dim,
                last_projection_dim: last,
                final_linear_dim: self.final_linear_dim,
            },
            dvec: self.dvector_config(),
            frames: self.frames,
        }
    }

    /// Corpus spec for the training split; held-out speakers reuse the same
    /// spec with speaker ids continuing past the training range.
    pub fn synth_spec(&self) -> SynthSpec {
        SynthSpec {
            num_speakers: self.num_speakers,
            utterances_per_speaker: self.utterances_per_speaker,
            noise_level: self.noise_level,
            silence_level: self.silence_level,
            silence_noise_scale: self.silence_noise_scale,
            offset_scale: self.offset_scale,
            seed: self.seed,
            ..SynthSpec::default()
        }
    }

    pub fn heldout_spec(&self) -> SynthSpec {
        SynthSpec { num_speakers: self.heldout_speakers, ..self.synth_spec() }
    }

    pub fn optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            learning_rate: self.learning_rate,
            clip_norm: self.clip_norm,
            steps: self.steps,
            tuple_size: self.tuple_size,
            loss_form: self.loss_form,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.model_config().validate()?;
        self.synth_spec()
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("corpus: {e}")))?;
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(invalid("learning-rate", "must be positive and finite"));
        }
        if self.clip_norm <= 0.0 || !self.clip_norm.is_finite() {
            return Err(invalid("clip-norm", "must be positive and finite"));
        }
        if self.tuple_size < 1 {
            return Err(invalid("tuple-size", "need at least one enrollment utterance"));
        }
        if self.checkpoint_interval == 0 {
            return Err(invalid("checkpoint-interval", "must be nonzero"));
        }
        if self.enroll_per_speaker == 0 {
            return Err(invalid("enroll-per-speaker", "must be nonzero"));
        }
        if self.enroll_per_speaker >= self.utterances_per_speaker {
            return Err(invalid(
                "enroll-per-speaker",
                format!(
                    "{} leaves no verification utterances out of {} per speaker",
                    self.enroll_per_speaker, self.utterances_per_speaker
                ),
            ));
        }
        if self.tuple_size + 1 > self.utterances_per_speaker {
            return Err(invalid(
                "tuple-size",
                format!(
                    "positive tuples need {} distinct utterances but speakers have {}",
                    self.tuple_size + 1,
                    self.utterances_per_speaker
                ),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn round_trip_is_identity() {
        let mut c = RunConfig::default();
        c.set("mode", "divided").unwrap();
        c.set("scoring", "nl").unwrap();
        c.set("pooling", "sliding").unwrap();
        c.set("learning-rate", "0.0125").unwrap();
        c.set("noise-level", "0.07").unwrap();
        c.set("loss-form", "paper").unwrap();
        c.set("data-dir", "/tmp/corpus").unwrap();
        let reparsed = RunConfig::parse(&c.to_text()).unwrap();
        assert_eq!(reparsed, c);
        assert_eq!(reparsed.to_text(), c.to_text());
    }

    #[test]
    fn unknown_key_rejected() {
        let err = RunConfig::parse("cell-dims = 128\n").unwrap_err();
        assert!(matches!(err, ConfigError::UnknownKey(k) if k == "cell-dims"));
    }

    #[test]
    fn bad_value_names_the_key() {
        let err = RunConfig::parse("steps = soon\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("steps"), "{msg}");
    }

    #[test]
    fn comments_and_blank_lines_ignored() {
        let c = RunConfig::parse("# a comment\n\nseed = 7\n").unwrap();
        assert_eq!(c.seed, 7);
    }

    #[test]
    fn missing_equals_rejected() {
        assert!(RunConfig::parse("seed 7\n").is_err());
    }

    #[test]
    fn divided_mode_doubles_last_layer() {
        let mut c = RunConfig::default();
        c.set("mode", "divided").unwrap();
        assert_eq!(c.model_config().net.last_projection_dim, 128);
        c.set("mode", "basic").unwrap();
        assert_eq!(c.model_config().net.last_projection_dim, 64);
    }

    #[test]
    fn enroll_must_leave_verification_utterances() {
        let mut c = RunConfig::default();
        c.set("enroll-per-speaker", "20").unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn cross_layer_needs_two_layers() {
        let mut c = RunConfig::default();
        c.set("mode", "cross").unwrap();
        c.set("num-layers", "1").unwrap();
        assert!(c.validate().is_err());
    }
}
