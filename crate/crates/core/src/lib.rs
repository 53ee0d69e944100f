//! Unsupervised prototype-based fine-tuning of a dual image/text encoder
//! from LMM-synthesized descriptions and dual pseudo-labels.

pub mod ablate;
pub mod captions;
pub mod data;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod math;
pub mod mixer;
pub mod prototypes;
pub mod pseudo;
pub mod rundir;
pub mod toy;
pub mod trainer;

pub use error::{LatteError, Result};
pub use math::{Embedding, Matrix};
