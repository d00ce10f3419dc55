//! Initial coefficients: Padé approximants, least-squares fits and the
//! embedded reference table.

mod builtin;
mod fit;
mod pade;
mod target;
pub mod taylor;

pub use builtin::{builtin_coefficients, builtin_target, BUILTIN_NAMES};
pub use fit::{
    grid_residuals, least_squares_fit, least_squares_fit_fn, min_denominator_on_grid, FitConfig,
    FitReport, GridResidual,
};
pub use pade::{pade_exact, pade_from_taylor};
pub use target::TargetActivation;
pub use taylor::{taylor_exact, taylor_of, TaylorSeries, MAX_TAYLOR_DEGREE};
