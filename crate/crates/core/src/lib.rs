pub mod data;
pub mod ecc;
pub mod emos;
pub mod error;
pub mod memos;
pub mod mesh;
pub mod optim;
pub mod sparse;
pub mod spde;
pub mod stats;
pub mod verify;

pub use error::{Error, Result};
