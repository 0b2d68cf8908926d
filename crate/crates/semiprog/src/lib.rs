//! Simulation and programming of Lindbladian dynamics.
//!
//! The crate covers dense matrix primitives ([`matcore`]), master-equation
//! dynamics ([`dynamics`]), channel algebra ([`channels`]), CPTP
//! programmability tests ([`programmability`]), quasi-probability programming
//! protocols ([`protocols`]) and the semidefinite programs behind the
//! programming cost ([`conic`]).

// negated comparisons reject NaN along with out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channels;
pub mod conic;
pub mod dynamics;
pub mod error;
pub mod matcore;
pub mod programmability;
pub mod protocols;

pub use error::{Error, Result};
