//! Compiles the guide's code listings as doc-tests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/parsing.md")]
pub mod parsing {}
#[doc = include_str!("../../../book/src/graphs.md")]
pub mod graphs {}
#[doc = include_str!("../../../book/src/filtering.md")]
pub mod filtering {}
#[doc = include_str!("../../../book/src/descriptions.md")]
pub mod descriptions {}
#[doc = include_str!("../../../book/src/samples.md")]
pub mod samples {}
#[doc = include_str!("../../../book/src/mixing.md")]
pub mod mixing {}
#[doc = include_str!("../../../book/src/pipeline.md")]
pub mod pipeline {}
