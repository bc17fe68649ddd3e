pub mod channel;
pub mod error;
pub mod harness;
pub mod numkit;
pub mod nomp;
pub mod otfs;
pub mod par;
pub mod pdma;

pub use error::{Error, Result};
