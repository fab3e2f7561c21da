//! Variational data assimilation with compressed observations.
//!
//! * [`covkit`]: covariance construction, roots, sampling.
//! * [`assim`]: 3D-Var cost, BLUE analysis, influence diagnostics.
//! * [`compress`]: observation-based and information-based projections.
//! * [`diagnose`]: piecewise Desroziers estimation of `R` and `HBHᵀ`.
//! * [`swmodel`]: 2D shallow-water twin-experiment generator.
//! * [`harness`]: experiment orchestration and CLI.

pub mod assim;
pub mod compress;
pub mod covkit;
pub mod diagnose;
pub mod error;
pub mod harness;
pub mod par;
pub mod swmodel;

pub use error::{Error, Result};
pub use par::Exec;
