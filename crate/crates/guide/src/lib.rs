//! The chapters of `book/`, one module each, so that `cargo test` runs every
//! listing in the guide.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/data.md")]
pub mod data {}
#[doc = include_str!("../../../book/src/architecture.md")]
pub mod architecture {}
#[doc = include_str!("../../../book/src/pyramid.md")]
pub mod pyramid {}
#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}
#[doc = include_str!("../../../book/src/metrics.md")]
pub mod metrics {}
#[doc = include_str!("../../../book/src/transfer.md")]
pub mod transfer {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
