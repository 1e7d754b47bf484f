//! Query performance prediction with sparse linear models.
//!
//! The crate covers the whole path from a document collection to a
//! cross-validated predictor: an in-memory Dirichlet language-model search
//! engine with RM3 expansion ([`retrieval`]), eight post-retrieval predictor
//! families computed at several feedback depths ([`predictors`]), maximum
//! likelihood linear regression ([`regression`]), greedy feature selection
//! ([`stepwise`]), effectiveness metrics and repeated two-fold
//! cross-validation ([`evaluation`]), and the two-stage experiment runner
//! ([`pipeline`]).

pub mod cli;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod pipeline;
pub mod predictors;
pub mod regression;
pub mod retrieval;
pub mod stepwise;
pub mod toy;

pub use error::{Error, Result};
