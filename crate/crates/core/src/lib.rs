//! Aggregation of sequence-label predictions from many unreliable taggers.
//!
//! The crate covers majority voting, Bayesian truth inference over per-source
//! confusion matrices (token or entity granularity, optionally two-pass with
//! low-recall sources removed, or supervised from a small gold set), and a
//! rank-and-distill scheduler that trains a target tagger from a weighted
//! mixture of sources. A generator for synthetic annotation problems with
//! known ground truth backs the tests.

pub mod aggregate;
pub mod bea;
pub mod corpus;
pub mod error;
pub mod metrics;
pub mod rare;
pub mod spans;
pub mod special;
pub mod synth;
pub mod vote;

pub use error::{Error, ErrorClass, Result};
