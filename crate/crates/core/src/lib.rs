pub mod error;
pub mod linalg;
pub mod mcmc;
pub mod metrics;
pub mod nuts;
pub mod posterior;
pub mod sbartlett;
pub mod sim;

pub use error::{Error, Result};
