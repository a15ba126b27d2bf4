pub mod cli;
pub mod convexify;
pub mod dirichlet;
pub mod error;
pub mod heatflow;
pub mod linalg;
pub mod mesh;
pub mod metricgeom;
pub mod models;
pub mod smooth_oracle;
pub mod sparse;
pub mod timechange;

pub use error::{Error, Result};
