//! Replays the boundedness argument on a concrete configuration: Whitney
//! averaging, the four-case budget, the decay lemmata, the Schur bound for the
//! far-field matrix and the paraproduct chain.

mod cases;
mod decay;
mod experiment;
mod paraproduct;
mod schur;
mod whitney;

pub use cases::{case_budget, CaseBudget, CaseClass, ContainedRow, PointwiseRatios};
pub use decay::{central_good_cube, es1_check, es2_check, DecayRow, DecayTable, Es2Ingredient};
pub use experiment::{check_lemmas, tb_experiment, CaseRatios, Check, DecaySlopes, LemmaReport, SeedRecord, TbReport};
pub use paraproduct::{paraproduct_check, ParaproductReport};
pub use schur::{dense_far_matrix, far_entry, far_matrix, schur_norm_estimate, SCHUR_ITERATIONS};
pub use whitney::{band_values, whitney_average_check, whitney_tiling_check, AverageReport, GridFamily, TilingReport};

use crate::cubes::Hierarchy;

/// Relative slack on the chain and split inequalities.
pub const CHAIN_TOL: f64 = 1e-9;
/// Relative tolerance of the Whitney tiling identity.
pub const TILING_TOL: f64 = 1e-12;

/// Generations whose Whitney band lies inside the window `(2^-J, 2^s)`.
pub fn whitney_gens(h: &Hierarchy) -> std::ops::RangeInclusive<i32> {
    h.grid().top_gen()..=h.grid().bottom_gen() - 1
}

/// Least-squares slope of `ys` against `xs`; `None` with fewer than two points.
pub fn ls_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / sxx)
}
