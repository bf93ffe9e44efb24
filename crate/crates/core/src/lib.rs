//! Higher gauge theory over the affine 2-space of wave operators.
//!
//! The crate covers crossed-module algebra, Grassmannian charts, wave-operator
//! morphisms and pseudosurfaces, the Stiefel 2-bundle and its connection,
//! simplicial discrete calculus, surface holonomies, and the geometric-phase
//! reconstruction of almost-adiabatic quantum dynamics.

pub mod bundle;
pub mod connection;
pub mod crossed_module;
pub mod error;
pub mod linalg;
pub mod grassmann;
pub mod holonomy;
pub mod par;
pub mod quantum;
pub mod simplicial;
pub mod two_space;

pub use error::{Error, Result};
pub use linalg::{CMat, C64};
pub use par::Exec;
