//! The full d-vector model: LSTMP encoder + attention layer + similarity
//! scale/offset, with one parameter store behind a rebuilt-per-step graph.

use std::path::Path;

use crate::attention::{
    self, AttentionMode, AttentionParams, DVectorConfig,
};
use crate::autodiff::{NodeId, Tape, Value};
use crate::error::{ConfigError, DataError};
use crate::features::FeatureMatrix;
use crate::network::{self, NetworkConfig, NetworkParams};
use crate::params::{ParamId, ParamStore};

#[derive(Clone, Copy, Debug)]
pub struct ModelConfig {
    pub net: NetworkConfig,
    pub dvec: DVectorConfig,
    /// Fixed segment length T; per-frame attention parameters assume it.
    pub frames: usize,
}

impl ModelConfig {
    pub fn standard(dvec: DVectorConfig) -> Self {
        let divided = dvec.mode == AttentionMode::DividedLayer;
        ModelConfig { net: NetworkConfig::standard(divided), dvec, frames: 80 }
    }

    pub fn tiny(dvec: DVectorConfig) -> Self {
        ModelConfig { net: NetworkConfig::tiny(), dvec, frames: 8 }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.net.validate()?;
        self.dvec.scoring.validate()?;
        self.dvec.pooling.validate()?;
        if self.frames == 0 {
            return Err(ConfigError::Invalid("frames must be >= 1".into()));
        }
        match self.dvec.mode {
            AttentionMode::CrossLayer if self.net.num_layers < 2 => {
                Err(ConfigError::Invalid("cross-layer attention requires >= 2 LSTM layers".into()))
            }
            AttentionMode::DividedLayer if self.net.output_dim() % 2 != 0 => Err(
                ConfigError::Invalid("divided-layer attention requires an even last-layer dim".into()),
            ),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub net: NetworkParams,
    pub attn: Option<AttentionParams>,
    /// Similarity scale w (kept > 0) and offset b.
    pub sim_w: ParamId,
    pub sim_b: ParamId,
}

impl Model {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Model, ConfigError> {
        config.validate()?;
        let mut store = ParamStore::new();
        let net = network::init_params(&config.net, &mut store, seed);
        let attn = if config.dvec.mode == AttentionMode::LastFrameBaseline {
            None
        } else {
            let m = attention::scoring_input_dim(config.dvec.mode, &config.net);
            Some(attention::init_attention(config.dvec.scoring, config.frames, m, &mut store, seed))
        };
        let sim_w = store.add("sim.w", Value::scalar(1.0));
        let sim_b = store.add("sim.b", Value::scalar(0.0));
        Ok(Model { config, store, net, attn, sim_w, sim_b })
    }

    /// Build the d-vector graph for one utterance on an existing tape.
    pub fn build_utterance(
        &self,
        tape: &mut Tape,
        bound: &[NodeId],
        features: &FeatureMatrix,
    ) -> (NodeId, Option<NodeId>) {
        let seq = network::lstmp_forward(tape, bound, &self.config.net, &self.net, features);
        attention::dvector(tape, bound, &self.config.dvec, self.attn.as_ref(), &seq)
    }

    /// Forward-only embedding: d-vector values plus attention weights.
    pub fn embed(&self, features: &FeatureMatrix) -> (Vec<f64>, Option<Vec<f64>>) {
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape);
        let (omega, alpha) = self.build_utterance(&mut tape, &bound, features);
        (tape.value(omega).to_vec(), alpha.map(|a| tape.value(a).to_vec()))
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        self.store.save(path)
    }

    /// Load checkpoint weights into a freshly initialized model of the same
    /// configuration; names and shapes must match exactly.
    pub fn load(config: ModelConfig, path: &Path) -> Result<Model, DataError> {
        let mut model =
            Model::init(config, 0).map_err(|e| DataError::Invalid(e.to_string()))?;
        let loaded = ParamStore::load(path)?;
        if !model.store.compatible_with(&loaded) {
            return Err(DataError::ShapeMismatch(
                "checkpoint does not match model configuration".into(),
            ));
        }
        model.store = loaded;
        Ok(model)
    }
}
