pub mod agent;
pub mod cli;
pub mod bandit;
pub mod config;
pub mod diffcore;
pub mod error;
pub mod io;
pub mod masks;
pub mod plot;
pub mod reservoir;
pub mod seed;
pub mod trainer;

pub use error::{Error, Result};
