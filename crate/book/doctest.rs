// mdbook cannot run Rust snippets that depend on a local crate, so each
// chapter is pulled in as a module doc and checked by `cargo test --doc`.

#[doc = include_str!("src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("src/partitions.md")]
pub mod partitions {}
#[doc = include_str!("src/posterior.md")]
pub mod posterior {}
#[doc = include_str!("src/design.md")]
pub mod design {}
#[doc = include_str!("src/simulation.md")]
pub mod simulation {}
#[doc = include_str!("src/service.md")]
pub mod service {}
