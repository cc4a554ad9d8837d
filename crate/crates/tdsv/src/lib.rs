//! Attention-based d-vector speaker verification at desk scale: a trainable
//! LSTMP encoder with five attention scoring functions, attention-weight
//! pooling, tuple end-to-end training, and an EER evaluation harness over a
//! synthetic two-keyword corpus.

pub mod attention;
pub mod autodiff;
pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod features;
pub mod loss;
pub mod model;
pub mod network;
pub mod params;
pub mod pooling;
