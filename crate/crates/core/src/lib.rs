//! Channel-constrained Markovian quantum diffusion.
//!
//! Forward noise is a fixed sequence of CPTP maps; the backward model is a
//! chain of learnable Kraus channels, each parameterised as a point on a
//! complex Stiefel manifold and trained by Cayley retraction.

// `!(x > 0.0)` guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channels;
pub mod diffusion;
pub mod error;
pub mod gradient;
pub mod linalg;
pub mod loss;
pub mod rng;
pub mod state;
pub mod stiefel;
pub mod training;

pub use error::{Error, Result};
pub use linalg::{ComplexMatrix, C64};
pub use state::{DensityMatrix, PureState};
