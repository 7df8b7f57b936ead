//! Unsupervised temporal action segmentation by constraint-ranked
//! self-labeling of a stochastic autoregressive labeler.

pub mod cli;
pub mod cross_video;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod ranking;
pub mod sequence;
pub mod trainer;

pub use error::{Error, Result};
pub use sequence::{ActionSequence, FeatureSequence};
