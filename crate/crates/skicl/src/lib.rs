//! Continual forecasting for multivariate time series with structured
//! knowledge: window-level graph inference, a temporal graph-conv
//! forecaster, consistency regularization against (possibly partial)
//! structural priors, and covariance-matched replay across regimes.

pub mod adam;
pub mod config;
pub mod consistency;
pub mod data;
pub mod error;
pub mod forecaster;
pub mod graph;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod params;
pub mod replay;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use linalg::Mat;
