//! Desk-scale numerical verification of non-homogeneous local Tb machinery for
//! square functions.
//!
//! The crate works with finitely supported measures on `R^n` and implements:
//!
//! * [`measure`]: discrete measures and windowed upper power bounds,
//! * [`grid`]: randomly shifted dyadic grids, cube geometry and goodness,
//! * [`cubes`]: the occupied-cube hierarchy of a measure in a grid,
//! * [`operators`]: `theta_t`, vertical and conical square functions, kernel certification,
//! * [`tbsystem`]: accretive test-function systems `{b_Q}`,
//! * [`stopping`]: the stopping-time tree with Calderon-Zygmund stopping data,
//! * [`martingale`]: twisted martingale differences and reconstruction,
//! * [`harness`]: Whitney averaging, the four-case budget, decay lemmata,
//!   the Schur bound and the paraproduct chain, tied together in [`harness::tb_experiment`].

pub mod config;
pub mod cubes;
pub mod error;
pub mod grid;
pub mod harness;
pub mod martingale;
pub mod measure;
pub mod operators;
pub mod rng;
pub mod stopping;
pub mod tbsystem;

pub use error::{Error, Result};
