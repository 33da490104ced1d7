//! Numerical laboratory for nearly parallel G2-structures with T^3-symmetry.
//!
//! The crate is organised around a small exterior-algebra engine
//! ([`exterior`]), G2-specific constructions ([`g2`]), the round
//! seven-sphere worked example ([`sphere7`]), the reduced geometry on the
//! three-dimensional orbit space ([`reduction`]), and the inverse-construction
//! ODE flow that rebuilds seven-dimensional structures from
//! three-dimensional initial data ([`flow`]). The [`cli`] module backs the
//! `g2lab` binary.

pub mod cli;
pub mod exterior;
pub mod flow;
pub mod g2;
pub mod reduction;
pub mod sphere7;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum G2Error {
    #[error("not a G2 form: {0}")]
    NotG2(String),
    #[error("degenerate plane")]
    DegeneratePlane,
    #[error("collapsed orbit: singular H")]
    CollapsedOrbit,
    #[error("outside regular regime: {0}")]
    OutsideRegularRegime(String),
    #[error("inconsistent connection data: {0}")]
    InconsistentConnection(String),
    #[error("near-collapse: {0}")]
    NearCollapse(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("linear solve failed: {0}")]
    SolveFailed(String),
}

pub type Result<T> = std::result::Result<T, G2Error>;
