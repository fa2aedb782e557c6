//! Numeric core for the selective-kernel-attention speaker-verification
//! workspace: a dense f64 array, a reverse-mode autodiff tape, the
//! convolution/normalization/softmax kernels the model is built from,
//! finite-difference gradient checking, and the acoustic front-end.

pub mod array;
pub mod error;
pub mod features;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod params;

pub use array::Array;
pub use error::{CoreError, Result};
pub use graph::{Graph, NodeId};
pub use params::{Binding, ParamId, ParamStore};
