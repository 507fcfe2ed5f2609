pub mod coupling;
pub mod datasets;
pub mod error;
pub mod field;
pub mod flow;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod noise_store;
pub mod ode;
pub mod ot;
pub mod reflow;
pub mod rng;

pub use error::{Error, Result};
pub use linalg::Matrix;
pub use field::VectorField;
