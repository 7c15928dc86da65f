//! Variational loss over network outputs and its exact gradient.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::mlp::{forward_cached, mlp_backward, MlpSpec, NetworkParams};
use crate::estimation::{correlations_from_features, solve_gev, EigenvalueFlag, GevSolution};
use crate::{Error, Result};

/// Eigenvalues closer than this inside the scored modes are reported as
/// degenerate.
pub const DEGENERACY_GAP: f64 = 1e-6;

/// Per-mode score `g` with `L = sum_i g(λ_i)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossTransform {
    /// `g(λ) = -λ²`, the negated VAMP-2 score.
    #[default]
    Vamp2,
    /// `g(λ) = 1 / ln λ`, minimized by long implied timescales.
    TimescaleSum,
}

impl LossTransform {
    pub fn value(self, lambda: f64) -> f64 {
        match self {
            LossTransform::Vamp2 => -lambda * lambda,
            LossTransform::TimescaleSum => 1.0 / lambda.ln(),
        }
    }

    pub fn derivative(self, lambda: f64) -> f64 {
        match self {
            LossTransform::Vamp2 => -2.0 * lambda,
            LossTransform::TimescaleSum => {
                let l = lambda.ln();
                -1.0 / (lambda * l * l)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct LossReport {
    pub loss: f64,
    /// Scored eigenvalues, non-ascending.
    pub eigenvalues: Vec<f64>,
    pub flags: Vec<EigenvalueFlag>,
    /// A scored eigenvalue lies within [`DEGENERACY_GAP`] of a neighbour.
    pub degenerate: bool,
}

impl LossReport {
    pub fn has_negative(&self) -> bool {
        self.eigenvalues.iter().any(|&v| v < 0.0)
    }
}

/// Loss of head/tail feature batches, plus the solve it came from.
pub(crate) fn feature_loss(
    heads: &DMatrix<f64>,
    tails: &DMatrix<f64>,
    n_modes: usize,
    eps: f64,
    transform: LossTransform,
) -> Result<(LossReport, GevSolution)> {
    let corr = correlations_from_features(heads, tails, true)?;
    let sol = solve_gev(&corr, n_modes, eps)?;
    Ok((report_from(&sol, transform), sol))
}

pub(crate) fn report_from(sol: &GevSolution, transform: LossTransform) -> LossReport {
    let k = sol.eigenvalues.len();
    let loss = sol.eigenvalues.iter().map(|&l| transform.value(l)).sum();
    // the neighbour just past the scored set matters too
    let degenerate = (0..k).any(|i| {
        sol.full_spectrum
            .get(i + 1)
            .is_some_and(|&next| (sol.full_spectrum[i] - next).abs() < DEGENERACY_GAP)
    });
    LossReport {
        loss,
        eigenvalues: sol.eigenvalues.clone(),
        flags: sol.flags.clone(),
        degenerate,
    }
}

/// Adjoints of the loss with respect to the head and tail features.
///
/// For the scored modes `dL = sum_i g'(λ_i) s_i^T (dC - λ_i dQ_reg) s_i`, with
/// `s_i` the mixing columns. Degenerate groups fully inside the scored set
/// enter through the projector `sum_i s_i s_i^T`, so the group sum stays
/// differentiable.
pub(crate) fn feature_adjoints(
    heads: &DMatrix<f64>,
    tails: &DMatrix<f64>,
    sol: &GevSolution,
    transform: LossTransform,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = heads.nrows() as f64;
    let d = heads.ncols();
    let s = &sol.mixing;
    let slopes: Vec<f64> = sol.eigenvalues.iter().map(|&l| transform.derivative(l)).collect();
    let mut s_g = s.clone();
    let mut s_gl = s.clone();
    for (j, (&g, &l)) in slopes.iter().zip(&sol.eigenvalues).enumerate() {
        s_g.column_mut(j).scale_mut(g);
        s_gl.column_mut(j).scale_mut(-g * l);
    }
    let c_bar = &s_g * s.transpose();
    let mut q_bar = &s_gl * s.transpose();
    let mean = (heads.row_sum() + tails.row_sum()) / (2.0 * n);
    let mut x = heads.clone();
    let mut y = tails.clone();
    for mut r in x.row_iter_mut() {
        r -= &mean;
    }
    for mut r in y.row_iter_mut() {
        r -= &mean;
    }
    if sol.shift_tracks_variance {
        let extra = sol.regularization / d as f64 * q_bar.trace();
        for i in 0..d {
            q_bar[(i, i)] += extra;
        }
    }
    let mut x_bar = (&y * &c_bar + &x * &q_bar) / n;
    let mut y_bar = (&x * &c_bar + &y * &q_bar) / n;
    // pooled-mean centering; zero up to rounding
    let m_bar = -(x_bar.row_sum() + y_bar.row_sum()) / (2.0 * n);
    for mut r in x_bar.row_iter_mut() {
        r += &m_bar;
    }
    for mut r in y_bar.row_iter_mut() {
        r += &m_bar;
    }
    (x_bar, y_bar)
}

fn check_batch(spec: &MlpSpec, heads: &DMatrix<f64>, tails: &DMatrix<f64>) -> Result<()> {
    if heads.shape() != tails.shape() || heads.ncols() != spec.input_dim() {
        return Err(Error::ShapeMismatch {
            expected: format!("matching batches with {} columns", spec.input_dim()),
            found: format!("{:?} and {:?}", heads.shape(), tails.shape()),
        });
    }
    if heads.nrows() < 2 {
        return Err(Error::InvalidArgument("a batch needs at least 2 pairs".into()));
    }
    Ok(())
}

/// Loss of a network on a batch of lagged pairs.
pub fn loss_report(
    params: &NetworkParams,
    spec: &MlpSpec,
    heads: &DMatrix<f64>,
    tails: &DMatrix<f64>,
    n_modes: usize,
    eps: f64,
    transform: LossTransform,
) -> Result<LossReport> {
    check_batch(spec, heads, tails)?;
    let fx = forward_cached(params, spec, heads)?;
    let fy = forward_cached(params, spec, tails)?;
    Ok(feature_loss(fx.output(), fy.output(), n_modes, eps, transform)?.0)
}

/// Negated VAMP-2 score of a network on a batch of lagged pairs.
pub fn vamp2_loss(
    params: &NetworkParams,
    spec: &MlpSpec,
    heads: &DMatrix<f64>,
    tails: &DMatrix<f64>,
    n_modes: usize,
    eps: f64,
) -> Result<LossReport> {
    loss_report(params, spec, heads, tails, n_modes, eps, LossTransform::Vamp2)
}

/// Exact gradient of the loss with respect to every network parameter,
/// through both evaluations of the shared network.
pub fn loss_gradient(
    params: &NetworkParams,
    spec: &MlpSpec,
    heads: &DMatrix<f64>,
    tails: &DMatrix<f64>,
    n_modes: usize,
    eps: f64,
    transform: LossTransform,
) -> Result<(LossReport, NetworkParams)> {
    check_batch(spec, heads, tails)?;
    let fx = forward_cached(params, spec, heads)?;
    let fy = forward_cached(params, spec, tails)?;
    let (report, sol) = feature_loss(fx.output(), fy.output(), n_modes, eps, transform)?;
    let (x_bar, y_bar) = feature_adjoints(fx.output(), fy.output(), &sol, transform);
    let mut grad = mlp_backward(params, spec, &fx, &x_bar);
    let gy = mlp_backward(params, spec, &fy, &y_bar);
    for (a, b) in grad.weights.iter_mut().zip(&gy.weights) {
        *a += b;
    }
    for (a, b) in grad.biases.iter_mut().zip(&gy.biases) {
        *a += b;
    }
    Ok((report, grad))
}
