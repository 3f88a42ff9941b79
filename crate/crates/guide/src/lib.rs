//! The chapters of `book/` as modules, so `cargo test` runs every Rust
//! sample in the book.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/spaces-and-objectives.md")]
pub mod spaces_and_objectives {}

#[doc = include_str!("../../../book/src/surrogate.md")]
pub mod surrogate {}

#[doc = include_str!("../../../book/src/partial-dependence.md")]
pub mod partial_dependence {}

#[doc = include_str!("../../../book/src/information-gain.md")]
pub mod information_gain {}

#[doc = include_str!("../../../book/src/strategies.md")]
pub mod strategies {}

#[doc = include_str!("../../../book/src/benchmarks.md")]
pub mod benchmarks {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
