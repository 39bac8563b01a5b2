pub mod allocation;
pub mod arbitrage;
pub mod cli;
pub mod convolution;
pub mod error;
pub mod lp;
pub mod measures;
pub mod optim;
pub mod scenario;
pub mod space;
pub mod weights;

pub use error::{Error, Result};
