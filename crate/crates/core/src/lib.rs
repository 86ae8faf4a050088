pub mod demos;
pub mod error;
pub mod export;
pub mod forecast;
pub mod geometry;
pub mod harness;
pub mod init;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod stalk;
pub mod targeted;

pub use error::{Error, Result};
