//! Slow eigenfunctions of transfer operators estimated from trajectory data.
//!
//! Three estimators share one variational core: linear TICA
//! ([`estimation::fit_tica`]), landmark kernel TICA ([`ktica::fit_ktica`]) and
//! state-free reversible VAMPnets ([`srv::train_srv`]). All of them reduce to
//! the generalized eigenproblem `C s = λ Q s` solved by Cholesky whitening in
//! [`estimation::solve_gev`].
//!
//! The [`toy_models`] module builds discretized benchmark systems whose exact
//! spectra serve as ground truth, and [`diagnostics`] compares fitted models
//! against them.

pub mod diagnostics;
pub mod error;
pub mod estimation;
pub mod io;
pub mod ktica;
mod linalg;
pub mod srv;
pub mod toy_models;

pub use error::{Error, Result};
pub use estimation::{
    estimate_correlations, fit_tica, implied_timescales, make_lagged_pairs, solve_gev,
    CorrelationPair, GevSolution, LaggedDataset, LinearModel, Timescale,
};
pub use toy_models::{DiscreteModel, PotentialGrid, SpectrumOracle, Trajectory, TransitionMatrix};

use nalgebra::DMatrix;

/// Anything that maps coordinates (one frame per row) to estimated slow modes
/// (one mode per column).
pub trait ModeTransform {
    fn input_dim(&self) -> usize;

    fn n_modes(&self) -> usize;

    fn transform(&self, frames: &DMatrix<f64>) -> Result<DMatrix<f64>>;
}
