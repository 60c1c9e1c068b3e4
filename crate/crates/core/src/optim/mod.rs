//! Levenberg–Marquardt on sparse Jacobians, and Adam.

mod adam;
mod lm;
mod sparse;

pub use adam::Adam;
pub use lm::{
    lm_solve, lm_step, sum_squares, CollocationFit, LeastSquares, LmState, LmStepReport, SolvePath,
    SolverOptions, ETA_MAX, ETA_MIN,
};
pub use sparse::{normal_matrix, CsrMatrix};
