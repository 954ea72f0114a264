//! Remaining-useful-life prediction for turbofan engines with a temporal
//! deep degradation network: 1D convolutions over moving windows of sensor
//! data, an attention layer over the resulting abstract features, and a small
//! regressor.
//!
//! The crate covers the whole pipeline: C-MAPSS ingestion ([`cmapss`]),
//! preprocessing ([`preprocess`]), layer kernels with exact gradients
//! ([`tensor`]), the network ([`model`]), training ([`training`]) and
//! evaluation ([`metrics`]).

pub mod checkpoint;
pub mod cmapss;
pub mod error;
pub mod export;
pub mod kv;
pub mod metrics;
pub mod model;
pub mod preprocess;
pub mod synthetic;
pub mod tensor;
pub mod training;

pub use cmapss::{load_subset, DatasetBundle, EngineTrajectory, SubsetId};
pub use error::{Error, Result};
pub use metrics::{evaluate_test, nasa_score, rmse, EvalOptions, MetricsReport};
pub use model::{TddnConfig, TddnModel, TddnParams};
pub use preprocess::{select_columns, LabelPolicy, Preprocessor, SensorSelection};
pub use training::{train, TrainConfig, TrainReport, TrainedModel};
