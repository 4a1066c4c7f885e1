//! Low-rank tensor regression.
//!
//! The main entry point is [`solver::tpg_fit`], a projected gradient solver
//! whose projection step ([`projection::itp_project`]) builds a bounded
//! Tucker-rank approximation with power iterations, optionally after
//! compressing the sample mode with a count sketch ([`sketch`]).

pub mod applications;
pub mod bench;
pub mod error;
pub mod io;
pub mod linalg;
pub mod model;
pub mod projection;
pub mod rng;
pub mod sketch;
pub mod solver;
pub mod tensor;
pub mod tucker;

pub use error::{ErrorKind, Result, TpgError};
pub use tensor::{DenseTensor, Matrix};
