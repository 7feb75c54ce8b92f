//! The guide's chapters compiled as doc-tests.
//!
//! mdbook cannot run snippets that depend on this crate, so each chapter is
//! included here as module documentation and `cargo test --doc` keeps the
//! book's code honest. One module per chapter makes a failing snippet easy
//! to locate.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/model.md")]
pub mod model {}

#[doc = include_str!("../../../book/src/exact-schedulers.md")]
pub mod exact_schedulers {}

#[doc = include_str!("../../../book/src/kinetic-tree.md")]
pub mod kinetic_tree {}

#[doc = include_str!("../../../book/src/slack-filtering.md")]
pub mod slack_filtering {}

#[doc = include_str!("../../../book/src/hotspots.md")]
pub mod hotspots {}

#[doc = include_str!("../../../book/src/mip.md")]
pub mod mip_model {}

#[doc = include_str!("../../../book/src/simulator.md")]
pub mod simulator {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
