//! Acoustic front-end and the synthetic keyword corpus.
//!
//! Real audio goes through `frame_signal` + `log_mel` to produce T x 40
//! log-mel feature matrices. The training corpus is synthetic: keyword-shaped
//! sequences of phoneme frames (template + per-speaker offset + noise)
//! embedded in silence, generated directly in feature space.

pub mod audio;
pub mod io;
pub mod synth;

pub use audio::{frame_signal, log_mel, AudioClip};
pub use io::{read_features, read_manifest, write_features, write_features_csv, write_manifest,
    ManifestEntry, Split};
pub use synth::{generate_corpus, synth_utterance, Corpus, SynthSpec, Utterance};

pub const FEATURE_DIM: usize = 40;
pub const SEGMENT_FRAMES: usize = 80;
/// Frame label marking silence; other values are phoneme indices.
pub const SILENCE_LABEL: u8 = 255;

#[derive(Clone, Copy, PartialEq, Eq, Debug, Hash)]
pub enum Keyword {
    A,
    B,
}

impl Keyword {
    pub const ALL: [Keyword; 2] = [Keyword::A, Keyword::B];

    pub fn phoneme_count(self) -> usize {
        match self {
            Keyword::A => 4,
            Keyword::B => 3,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Keyword::A => "A",
            Keyword::B => "B",
        }
    }

    pub fn from_tag(s: &str) -> Option<Keyword> {
        match s {
            "A" => Some(Keyword::A),
            "B" => Some(Keyword::B),
            _ => None,
        }
    }
}

/// One utterance segment: a T x D grid of features, row-major, with optional
/// per-frame labels (silence vs phoneme index).
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub num_frames: usize,
    pub dim: usize,
    /// Row-major T x D.
    pub data: Vec<f64>,
    pub labels: Option<Vec<u8>>,
}

impl FeatureMatrix {
    pub fn new(num_frames: usize, dim: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), num_frames * dim);
        FeatureMatrix { num_frames, dim, data, labels: None }
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn is_silence(&self, t: usize) -> Option<bool> {
        self.labels.as_ref().map(|l| l[t] == SILENCE_LABEL)
    }
}
