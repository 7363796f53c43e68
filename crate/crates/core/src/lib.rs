//! Desk-scale neural retrieval toolkit: synthesize training queries from a
//! document corpus (rule-based crops or a prompted completion endpoint),
//! train a feature-hashed dual-tower encoder with in-batch negatives, build
//! an exact dense index, and compare methods across datasets.

pub mod corpus;
pub mod crop;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod index;
pub mod llm;
pub mod pipeline;
pub mod rng;
pub mod toydata;

pub use error::{Error, Result};

// Every fenced rust block in the guide compiles and runs as a doc-test, so
// the book cannot drift from the library.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/overview.md")]
    mod overview {}
    #[doc = include_str!("../../../book/src/datasets.md")]
    mod datasets {}
    #[doc = include_str!("../../../book/src/crop-generation.md")]
    mod crop_generation {}
    #[doc = include_str!("../../../book/src/prompted-generation.md")]
    mod prompted_generation {}
    #[doc = include_str!("../../../book/src/encoder.md")]
    mod encoder {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/search.md")]
    mod search {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
    #[doc = include_str!("../../../book/src/sweeps.md")]
    mod sweeps {}
    #[doc = include_str!("../../../book/src/analysis.md")]
    mod analysis {}
    #[doc = include_str!("../../../book/src/seeds.md")]
    mod seeds {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
