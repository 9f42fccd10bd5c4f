pub mod bounds;
pub mod dataset;
pub mod diagnostics;
pub mod error;
pub mod lp;
pub mod sieve;
pub mod simulate;

pub use error::{Error, Result};
