//! Knowledge graph convolutional networks for recommendation.
//!
//! The crate covers the whole pipeline: ingesting ratings and KG triples
//! ([`data`], [`kg`]), the model and its exact gradient ([`model`]), dense
//! numerics and Adam ([`numerics`]), training ([`train`]) and evaluation
//! ([`eval`]).

pub mod data;
pub mod error;
pub mod eval;
pub mod kg;
pub mod model;
pub mod numerics;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};
pub use model::{Aggregator, Architecture, ModelConfig, ModelSpec, Predictor};
pub use train::{TrainConfig, TrainReport};
