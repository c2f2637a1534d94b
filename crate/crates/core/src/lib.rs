//! Versatile ordering network: a set-to-sequence model that learns to order
//! point sets under any pluggable quality metric, plus the metrics, classical
//! solvers and tooling around it.

pub mod baselines;
pub mod cli;
pub mod dataprep;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod instance;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod points;
pub mod runner;
pub mod sampling;
pub mod service;
pub mod training;

pub use error::{Result, VonError};
pub use decoder::{DecoderState, DecoderVariant};
pub use encoder::EncoderConfig;
pub use metrics::{as_loss, Direction, Metric, MetricContext, MetricParams, QualityMetric};
pub use model::{CheckpointInfo, DecodeMode, Encoding, Model, ModelConfig, StepOutputs};
pub use points::{pairwise_distances, reverse, validate_ordering, DistanceMatrix, GraphCollection, Ordering, PointSet};
