//! Exact symbolic / numeric engine for the Izergin-Korepin 19-vertex model
//! and level-one vertex operators of the twisted quantum affine algebra
//! U_q(A_2^(2)).
//!
//! Everything symbolic lives on a common exponent lattice: powers of q are
//! stored as integer multiples of 1/4 (the finest power that ever occurs),
//! and powers of each spectral variable as integer multiples of 1/2.
//! Coefficients are exact big rationals, so a vanishing residual really is
//! zero, not small.

pub mod error;
pub mod fock;
pub mod freefield;
pub mod numeric;
pub mod products;
pub mod report;
pub mod rmatrix;
pub mod scalar;
pub mod series;
pub mod traces;
pub mod vertex;

pub use error::Error;
pub use report::CheckReport;
pub use scalar::{qbinom, qint, ExactScalar, Rat};
pub use series::{Monomial, Series};
