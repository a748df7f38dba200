//! Identity-driven face-swap detection.
//!
//! A suspect face is aligned on its eyes, the inner face (eyes, brows, nose,
//! mouth) is masked out, and the remaining outer face is embedded by a model
//! trained only on real faces with an additive-angular-margin softmax. The
//! suspect is declared fake when the cosine distance between its embedding
//! and the mean embedding of trusted reference images of the claimed identity
//! exceeds a threshold.

pub mod corpus;
pub mod degradation;
pub mod embedding;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod image;
pub mod verification;

pub use error::{Error, Result};
