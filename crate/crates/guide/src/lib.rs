//! Compiles the `book/` chapters so their listings run as doctests.
#![doc = include_str!("../../../book/src/index.md")]

#[doc = include_str!("../../../book/src/tape.md")]
pub mod tape {}

#[doc = include_str!("../../../book/src/layers.md")]
pub mod layers {}

#[doc = include_str!("../../../book/src/bigraph.md")]
pub mod bigraph {}

#[doc = include_str!("../../../book/src/model.md")]
pub mod model {}

#[doc = include_str!("../../../book/src/data.md")]
pub mod data {}

#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
