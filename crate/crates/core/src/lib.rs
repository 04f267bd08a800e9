pub mod bie;
pub mod calculus;
pub mod cli;
pub mod error;
pub mod forward;
pub mod geometry;
pub mod inversion;
pub mod oracles;
pub mod scenarios;
pub mod specfun;
pub mod stochastics;
pub mod verify;

pub use error::{Error, Result};
