//! Doc-tested chapters of the guide in `book/`.
//!
//! mdbook renders the chapters; including them here as module docs makes
//! `cargo test` compile and run every fenced Rust example, so the book can
//! never drift from the library's actual API.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/spending.md")]
pub mod spending {}

#[doc = include_str!("../../../book/src/decomposition.md")]
pub mod decomposition {}

#[doc = include_str!("../../../book/src/prior-estimation.md")]
pub mod prior_estimation {}

#[doc = include_str!("../../../book/src/pipeline.md")]
pub mod pipeline {}

#[doc = include_str!("../../../book/src/simulation.md")]
pub mod simulation {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
