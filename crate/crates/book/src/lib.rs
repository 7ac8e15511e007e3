//! The guide in `book/` as doc-tests: each chapter becomes the docs of an
//! empty module, so `cargo test` runs every listing.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/data.md")]
pub mod data {}
#[doc = include_str!("../../../book/src/emos.md")]
pub mod emos {}
#[doc = include_str!("../../../book/src/spde.md")]
pub mod spde {}
#[doc = include_str!("../../../book/src/memos.md")]
pub mod memos {}
#[doc = include_str!("../../../book/src/ecc.md")]
pub mod ecc {}
#[doc = include_str!("../../../book/src/verification.md")]
pub mod verification {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
