pub mod baselines;
pub mod bench;
pub mod cli;
pub mod diagnostics;
pub mod dictionary;
pub mod error;
pub mod lasso;
pub mod precondition;
pub mod problem;
pub mod rng;
pub mod select;
pub mod wavelet;

pub use error::{Error, Result};
