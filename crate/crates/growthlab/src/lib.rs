//! Cayley-graph exploration, contraction certificates, and growth analytics
//! for finitely generated groups.
//!
//! The crate is organized bottom-up:
//! - [`word`]: letters, words, free reduction, word literals;
//! - [`presentation`]: the group/space description language;
//! - [`wordproblem`]: normal forms, identity tests, small cancellation,
//!   permutation fingerprints.

pub mod cache;
pub mod contracting;
pub mod extension;
pub mod growth;
pub mod presentation;
pub mod space;
pub mod word;
pub mod wordproblem;
