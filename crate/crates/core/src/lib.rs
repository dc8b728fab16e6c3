pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod demos;
pub mod discriminator;
pub mod env;
pub mod error;
pub mod nn;
pub mod occupancy;
pub mod optim;
pub mod policy;
pub mod replay;
pub mod rollout;
pub mod tensor;
pub mod train;
pub mod trajectory;

pub use error::{Error, Result};
