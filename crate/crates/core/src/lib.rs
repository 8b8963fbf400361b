//! seq2gmm: group anomaly detection for quasi-periodic univariate time
//! series with timing errors.
//!
//! The pipeline segments each series with a piecewise linear regression,
//! compresses every segment through a recurrent autoencoder with additive
//! attention, models the latent vectors with a Gaussian mixture, and scores
//! segments by their negative log-likelihood (sample energy). Training
//! alternates exact EM on the mixture with single SGD epochs on a
//! frozen-mixture surrogate objective.

pub mod data;
pub mod error;
pub mod experiment;
pub mod gmm;
pub mod linalg;
pub mod metrics;
pub mod nn;
pub mod score;
pub mod segment;
pub mod train;

pub use data::{Dataset, Label, SynthConfig, TimeSeries};
pub use error::{Error, Result};
pub use score::{Aggregation, ScoreReport};
pub use train::{surrogate_train, TrainedModel, TrainingConfig};
