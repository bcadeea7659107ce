pub mod config;
pub mod coords;
pub mod dynamics;
pub mod error;
pub mod imm;
pub mod measurement;
pub mod scenario;
pub mod scheduler;
pub mod sim;
pub mod ukf;

pub use error::{Error, Result};
