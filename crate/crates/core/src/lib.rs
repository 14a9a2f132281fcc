//! Numerical toolkit for the Paneitz operator and the variational structure of
//! its Green's function near the round three-sphere.
//!
//! The crate works on the stereographic chart of S^3: closed-form fields carry
//! exact derivatives through truncated Taylor arithmetic ([`jet`]), curvature
//! and the fourth-order operators are assembled from them ([`curvature`]), the
//! perturbation expansions in a metric parameter live in [`expansion`], the
//! first/second variation of the Green's function pole value in [`variation`],
//! the frequency-side analysis in [`symbol`], the intrinsic spectral toolkit in
//! [`sphere`], and suite orchestration plus reporting in [`harness`].

pub mod catalog;
pub mod curvature;
pub mod error;
pub mod expansion;
pub mod fields;
pub mod grid;
pub mod harness;
pub mod jet;
pub mod quadrature;
pub mod sphere;
pub mod symbol;
pub mod variation;

pub use error::{Error, Result};
