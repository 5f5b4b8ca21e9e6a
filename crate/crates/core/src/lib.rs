pub mod alloc;
pub mod alpha;
pub mod backtest;
pub mod data;
pub mod dependence;
pub mod error;
pub mod linalg;
pub mod optim;
pub mod regime;
pub mod rng;
pub mod scenario;
pub mod stats;
pub mod univariate;

pub use error::{Error, ErrorClass, Result};
