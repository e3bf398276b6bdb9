//! Instance matching and hybrid recommendation for learning-object repositories.
//!
//! The crate is organised as a pipeline: [`lom`] records and candidate pairs,
//! [`features`] similarity vectors, the semi-supervised fuzzy matcher in
//! [`matcher`], a neighbourhood/content [`recommender`], and the [`eval`]
//! harness. [`bayes`] and [`fuzzy`] hold the reusable classifiers.
//!
//! Batch work runs on rayon when the default `parallel` feature is on and on a
//! plain sequential iterator otherwise. Results are identical either way.

pub mod bayes;
pub mod error;
pub mod eval;
pub mod features;
pub mod fuzzy;
pub mod lom;
pub mod matcher;
pub mod par;
pub mod recommender;
pub mod synth;

pub use error::{Error, Result};
