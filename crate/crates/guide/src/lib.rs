//! The book in `book/src`, one module per chapter, so that `cargo test`
//! runs every snippet.

#[doc = include_str!("../../../book/src/overview.md")]
pub mod overview {}

#[doc = include_str!("../../../book/src/threads.md")]
pub mod threads {}

#[doc = include_str!("../../../book/src/ingest.md")]
pub mod ingest {}

#[doc = include_str!("../../../book/src/model.md")]
pub mod model {}

#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}

#[doc = include_str!("../../../book/src/baselines.md")]
pub mod baselines {}

#[doc = include_str!("../../../book/src/attribution.md")]
pub mod attribution {}

#[doc = include_str!("../../../book/src/annotation.md")]
pub mod annotation {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
