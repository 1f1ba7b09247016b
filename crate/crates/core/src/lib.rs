//! Recovers offered (pre-selection) outcome distributions from
//! choice-selected samples.
//!
//! The selected sample only shows a price when its alternative was chosen,
//! so the observable per-alternative distributions are reweighted versions
//! of the offered ones. A reweighting operator inverts that distortion: its
//! fixed point is the offered profile, and under a computable modulus the
//! iteration is a contraction. On top of the solver sits a semiparametric
//! MLE for the selection parameters, a classic two-step baseline for
//! comparison, and a replication harness for the simulation studies.

pub mod cli;
pub mod dist;
pub mod error;
pub mod fixpoint;
pub mod heckman;
pub mod mc;
pub mod estimate;
pub mod qre;
pub mod report;
pub mod select;
pub mod simplex;

pub use error::{Error, Result};
