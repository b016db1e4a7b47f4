//! Chapters of `book/src`, included verbatim so their snippets run as
//! doc-tests.

#![doc = include_str!("../../../book/src/introduction.md")]

#[doc = include_str!("../../../book/src/rotations.md")]
pub mod rotations {}

#[doc = include_str!("../../../book/src/preintegration.md")]
pub mod preintegration {}

#[doc = include_str!("../../../book/src/cameras.md")]
pub mod cameras {}

#[doc = include_str!("../../../book/src/initialization.md")]
pub mod initialization {}

#[doc = include_str!("../../../book/src/solver.md")]
pub mod solver {}

#[doc = include_str!("../../../book/src/synthetic.md")]
pub mod synthetic {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
