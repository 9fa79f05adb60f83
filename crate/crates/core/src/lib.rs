pub mod arrivals;
pub mod baselines;
pub mod bellman;
pub mod config;
pub mod dispatch;
pub mod error;
pub mod feasible;
pub mod flow;
pub mod fvi;
pub mod instance;
pub mod model;
pub mod oracle;
pub mod rng;
pub mod sim;
pub mod value;

pub use error::{Error, Result};
