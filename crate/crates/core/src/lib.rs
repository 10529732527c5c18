//! Virality prediction for tweets: a transformer text encoder fused with
//! numeric metadata and a sentiment distribution, plus classical baselines,
//! evaluation and ablation tooling.

pub mod baselines;
pub mod cli;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod loss;
pub mod model;
pub mod nn;
pub mod optim;
pub mod pipeline;
pub mod seed;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
