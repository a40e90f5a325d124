//! The book's chapters, embedded so `cargo test --doc` compiles and runs
//! every fenced Rust snippet in `book/src/`. A failing doc-test here means
//! the guide drifted from the library.

#[doc = include_str!("../../../book/src/getting-started.md")]
pub mod getting_started {}

#[doc = include_str!("../../../book/src/training-core.md")]
pub mod training_core {}

#[doc = include_str!("../../../book/src/datasets.md")]
pub mod datasets {}

#[doc = include_str!("../../../book/src/scomatch.md")]
pub mod scomatch_chapter {}

#[doc = include_str!("../../../book/src/baselines.md")]
pub mod baselines_chapter {}

#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation_chapter {}

#[doc = include_str!("../../../book/src/experiments.md")]
pub mod experiments_chapter {}
