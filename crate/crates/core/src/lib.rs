//! Exponential time differencing integrators with tangent and discrete
//! adjoint solvers.

pub mod error;
pub mod linalg;
pub mod phi;
pub mod phi_diff;
pub mod problem;
pub mod tableau;
pub mod operator;
pub mod forward;
pub mod tangent;
pub mod adjoint;
pub mod observation;
pub mod sh;
pub mod study;
pub mod inverse;
pub mod toy;
pub mod verify;

pub use error::{EtdError, Result};
pub use linalg::{CVec, C64};
