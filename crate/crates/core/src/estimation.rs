//! Time-lagged correlation estimates and the variational generalized
//! eigenproblem `C s = λ Q s`, with linear TICA as its simplest use.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg::{symmetric_eigen_desc, symmetrize};
use crate::toy_models::Trajectory;
use crate::{Error, ModeTransform, Result};

/// Relative Tikhonov shift applied to `Q` unless configured otherwise.
pub const DEFAULT_REGULARIZATION: f64 = 1e-6;

/// Paired frames `(x_t, x_{t+lag})`, one pair per row.
#[derive(Debug, Clone)]
pub struct LaggedDataset {
    pub heads: DMatrix<f64>,
    pub tails: DMatrix<f64>,
    pub lag: usize,
    pub n_trajectories: usize,
}

impl LaggedDataset {
    pub fn len(&self) -> usize {
        self.heads.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.heads.ncols()
    }

    /// Select a subset of pairs by row index, in the given order.
    pub fn select(&self, rows: &[usize]) -> LaggedDataset {
        LaggedDataset {
            heads: self.heads.select_rows(rows),
            tails: self.tails.select_rows(rows),
            lag: self.lag,
            n_trajectories: self.n_trajectories,
        }
    }
}

fn check_dims(trajectories: &[Trajectory]) -> Result<usize> {
    let dim = trajectories
        .first()
        .map(Trajectory::dim)
        .ok_or_else(|| Error::InvalidArgument("no trajectories".into()))?;
    if let Some(t) = trajectories.iter().find(|t| t.dim() != dim) {
        return Err(Error::ShapeMismatch {
            expected: format!("dimension {dim}"),
            found: format!("dimension {}", t.dim()),
        });
    }
    Ok(dim)
}

/// All pairs `(x_t, x_{t+lag})` within each trajectory, in trajectory order
/// and then time order. Pairs never straddle two trajectories.
pub fn make_lagged_pairs(trajectories: &[Trajectory], lag: usize) -> Result<LaggedDataset> {
    if lag == 0 {
        return Err(Error::InvalidArgument("lag must be at least 1".into()));
    }
    let dim = check_dims(trajectories)?;
    let n_pairs: usize = trajectories.iter().map(|t| t.len().saturating_sub(lag)).sum();
    if n_pairs == 0 {
        return Err(Error::EmptyDataset { lag });
    }
    let mut heads = DMatrix::zeros(n_pairs, dim);
    let mut tails = DMatrix::zeros(n_pairs, dim);
    let mut row = 0;
    for traj in trajectories {
        for t in 0..traj.len().saturating_sub(lag) {
            for (k, (&h, &tl)) in traj.frame(t).iter().zip(traj.frame(t + lag)).enumerate() {
                heads[(row, k)] = h;
                tails[(row, k)] = tl;
            }
            row += 1;
        }
    }
    Ok(LaggedDataset {
        heads,
        tails,
        lag,
        n_trajectories: trajectories.len(),
    })
}

/// Time-lagged (`c`) and instantaneous (`q`) covariance of a feature basis.
#[derive(Debug, Clone)]
pub struct CorrelationPair {
    pub c: DMatrix<f64>,
    pub q: DMatrix<f64>,
    /// Feature mean removed before accumulation.
    pub mean: DVector<f64>,
    pub n_samples: usize,
    pub symmetrized: bool,
}

impl CorrelationPair {
    pub fn dim(&self) -> usize {
        self.q.nrows()
    }
}

/// Covariances of lagged data in its raw coordinates.
pub fn estimate_correlations(data: &LaggedDataset, symmetrize: bool) -> Result<CorrelationPair> {
    correlations_from_features(&data.heads, &data.tails, symmetrize)
}

/// Covariances of already featurized pairs (`heads[i]` pairs with
/// `tails[i]`).
///
/// Features are centered on the mean over heads and tails together and
/// normalized by the pair count. With `symmetrize`, `C = (C0 + C0^T) / 2` and
/// `Q` averages the head and tail second moments; otherwise `Q` uses heads
/// only.
pub fn correlations_from_features(
    heads: &DMatrix<f64>,
    tails: &DMatrix<f64>,
    symmetrize_c: bool,
) -> Result<CorrelationPair> {
    if heads.shape() != tails.shape() {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", heads.shape()),
            found: format!("{:?}", tails.shape()),
        });
    }
    let n = heads.nrows();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "at least 2 pairs are required, got {n}"
        )));
    }
    if heads.iter().chain(tails.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("features".into()));
    }
    let mean = (heads.row_sum() + tails.row_sum()) / (2 * n) as f64;
    let mut x = heads.clone();
    let mut y = tails.clone();
    for mut r in x.row_iter_mut() {
        r -= &mean;
    }
    for mut r in y.row_iter_mut() {
        r -= &mean;
    }
    let scale = 1.0 / n as f64;
    let c0 = x.tr_mul(&y) * scale;
    let qh = x.tr_mul(&x) * scale;
    let mean = mean.transpose();
    Ok(if symmetrize_c {
        let qt = y.tr_mul(&y) * scale;
        CorrelationPair {
            c: symmetrize(&c0),
            q: symmetrize(&((qh + qt) * 0.5)),
            mean,
            n_samples: n,
            symmetrized: true,
        }
    } else {
        CorrelationPair {
            c: c0,
            q: symmetrize(&qh),
            mean,
            n_samples: n,
            symmetrized: false,
        }
    })
}

/// Lagged pairs with duplicate frames merged: unique points plus a count for
/// every distinct `(head, tail)` combination.
///
/// Trajectories sampled from a discrete chain visit only bin centers, so this
/// turns per-frame feature evaluation into per-bin evaluation. Correlations
/// computed here equal [`correlations_from_features`] on the expanded pairs up
/// to summation order.
#[derive(Debug, Clone)]
pub struct CompressedPairs {
    /// Unique frames in order of first appearance, one per row.
    pub points: DMatrix<f64>,
    /// `(head point, tail point, count)`, sorted by point indices.
    pub pairs: Vec<(usize, usize, u64)>,
    /// Occurrences of each point over all frames, paired or not.
    pub frame_counts: Vec<u64>,
    pub n_pairs: usize,
    pub lag: usize,
}

fn frame_key(frame: &[f64]) -> Vec<u64> {
    // +0.0 and -0.0 map to the same point
    frame.iter().map(|v| (v + 0.0).to_bits()).collect()
}

impl CompressedPairs {
    pub fn from_trajectories(trajectories: &[Trajectory], lag: usize) -> Result<Self> {
        if lag == 0 {
            return Err(Error::InvalidArgument("lag must be at least 1".into()));
        }
        let dim = check_dims(trajectories)?;
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut unique: Vec<f64> = Vec::new();
        let mut counts: HashMap<(usize, usize), u64> = HashMap::new();
        let mut frame_counts: Vec<u64> = Vec::new();
        let mut n_pairs = 0;
        for traj in trajectories {
            let ids: Vec<usize> = traj
                .frames()
                .map(|f| {
                    let next = index.len();
                    *index.entry(frame_key(f)).or_insert_with(|| {
                        unique.extend_from_slice(f);
                        next
                    })
                })
                .collect();
            frame_counts.resize(index.len(), 0);
            for &id in &ids {
                frame_counts[id] += 1;
            }
            for t in 0..traj.len().saturating_sub(lag) {
                *counts.entry((ids[t], ids[t + lag])).or_insert(0) += 1;
                n_pairs += 1;
            }
        }
        if n_pairs == 0 {
            return Err(Error::EmptyDataset { lag });
        }
        let mut pairs: Vec<(usize, usize, u64)> =
            counts.into_iter().map(|((a, b), c)| (a, b, c)).collect();
        pairs.sort_unstable();
        Ok(Self {
            points: DMatrix::from_row_slice(index.len(), dim, &unique),
            pairs,
            frame_counts,
            n_pairs,
            lag,
        })
    }

    /// Pack explicit `(head, tail)` indices into `points`. Frame counts are
    /// taken over pair endpoints.
    pub fn from_index_pairs(points: DMatrix<f64>, index_pairs: &[(usize, usize)], lag: usize) -> Result<Self> {
        if index_pairs.is_empty() {
            return Err(Error::EmptyDataset { lag });
        }
        let p = points.nrows();
        if let Some(&(a, b)) = index_pairs.iter().find(|&&(a, b)| a >= p || b >= p) {
            return Err(Error::InvalidArgument(format!(
                "pair ({a}, {b}) indexes past {p} points"
            )));
        }
        let mut frame_counts = vec![0; p];
        let mut counts: HashMap<(usize, usize), u64> = HashMap::new();
        for &(a, b) in index_pairs {
            frame_counts[a] += 1;
            frame_counts[b] += 1;
            *counts.entry((a, b)).or_insert(0) += 1;
        }
        let mut pairs: Vec<(usize, usize, u64)> =
            counts.into_iter().map(|((a, b), c)| (a, b, c)).collect();
        pairs.sort_unstable();
        Ok(Self {
            points,
            pairs,
            frame_counts,
            n_pairs: index_pairs.len(),
            lag,
        })
    }

    /// One `(head, tail)` entry per original pair, in sorted order.
    pub fn expanded_pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.n_pairs);
        for &(a, b, c) in &self.pairs {
            out.extend(std::iter::repeat_n((a, b), c as usize));
        }
        out
    }

    pub fn n_points(&self) -> usize {
        self.points.nrows()
    }

    /// Correlations of per-point features (`features` has one row per unique
    /// point), with the same conventions as [`correlations_from_features`].
    pub fn correlations(&self, features: &DMatrix<f64>, symmetrize_c: bool) -> Result<CorrelationPair> {
        let d = self.n_points();
        if features.nrows() != d {
            return Err(Error::ShapeMismatch {
                expected: format!("{d} feature rows"),
                found: format!("{}", features.nrows()),
            });
        }
        if self.n_pairs < 2 {
            return Err(Error::InvalidArgument(format!(
                "at least 2 pairs are required, got {}",
                self.n_pairs
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("features".into()));
        }
        let mut head_w = vec![0.0; d];
        let mut tail_w = vec![0.0; d];
        for &(a, b, c) in &self.pairs {
            head_w[a] += c as f64;
            tail_w[b] += c as f64;
        }
        let n = self.n_pairs as f64;
        let k = features.ncols();
        let mut mean = DVector::zeros(k);
        for a in 0..d {
            let w = head_w[a] + tail_w[a];
            if w > 0.0 {
                mean.axpy(w, &features.row(a).transpose(), 1.0);
            }
        }
        mean /= 2.0 * n;
        let mut x = features.clone();
        for mut r in x.row_iter_mut() {
            r -= &mean.transpose();
        }
        // lagged[a] = sum_b count(a, b) x[b]
        let mut lagged = DMatrix::zeros(d, k);
        for &(a, b, c) in &self.pairs {
            let c = c as f64;
            for j in 0..k {
                lagged[(a, j)] += c * x[(b, j)];
            }
        }
        let c0 = x.tr_mul(&lagged) / n;
        let weighted = |w: &[f64]| {
            let mut xw = x.clone();
            for (a, mut r) in xw.row_iter_mut().enumerate() {
                r *= w[a];
            }
            x.tr_mul(&xw) / n
        };
        let qh = weighted(&head_w);
        Ok(if symmetrize_c {
            let qt = weighted(&tail_w);
            CorrelationPair {
                c: symmetrize(&c0),
                q: symmetrize(&((qh + qt) * 0.5)),
                mean,
                n_samples: self.n_pairs,
                symmetrized: true,
            }
        } else {
            CorrelationPair {
                c: c0,
                q: symmetrize(&qh),
                mean,
                n_samples: self.n_pairs,
                symmetrized: false,
            }
        })
    }
}

/// Why an eigenvalue was flagged by [`solve_gev`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EigenvalueIssue {
    Negative,
    AboveOne,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenvalueFlag {
    pub mode: usize,
    pub value: f64,
    pub issue: EigenvalueIssue,
}

/// Flag eigenvalues that a reversible autocorrelation cannot produce.
pub fn flag_eigenvalues(values: &[f64]) -> Vec<EigenvalueFlag> {
    values
        .iter()
        .enumerate()
        .filter_map(|(mode, &value)| {
            let issue = if value < 0.0 {
                EigenvalueIssue::Negative
            } else if value > 1.0 + 1e-6 {
                EigenvalueIssue::AboveOne
            } else {
                return None;
            };
            Some(EigenvalueFlag { mode, value, issue })
        })
        .collect()
}

/// Solution of the whitened eigenproblem.
#[derive(Debug, Clone)]
pub struct GevSolution {
    /// Non-ascending, not clipped.
    pub eigenvalues: Vec<f64>,
    /// Expansion coefficients, one mode `s_i` per column.
    pub mixing: DMatrix<f64>,
    /// Lower Cholesky factor of the regularized `Q`.
    pub whitening: DMatrix<f64>,
    /// Eigenvectors of the whitened lagged covariance, `L^T s_i`.
    pub whitened_modes: DMatrix<f64>,
    /// All eigenvalues of the whitened problem, used for gap checks.
    pub full_spectrum: Vec<f64>,
    /// Relative regularization requested.
    pub regularization: f64,
    /// Absolute diagonal shift actually added to `Q`.
    pub shift: f64,
    /// The shift is `eps * trace(Q) / d` rather than a constant.
    pub shift_tracks_variance: bool,
    pub flags: Vec<EigenvalueFlag>,
}

/// Centered variance below this fraction of the squared feature mean is
/// treated as centering round-off.
pub const VARIANCE_FLOOR: f64 = 1e-16;

/// Absolute diagonal shift for a relative regularization `eps`: `eps` times
/// the mean diagonal of `q`, floored at round-off level, or `eps` itself when
/// the features are identically zero.
pub fn regularization_shift(corr: &CorrelationPair, eps: f64) -> f64 {
    let d = corr.dim() as f64;
    let scale = (corr.q.trace() / d).max(VARIANCE_FLOOR * corr.mean.norm_squared() / d);
    if scale > 0.0 {
        eps * scale
    } else {
        eps
    }
}

/// Whether the shift moves with `trace(Q)` (the unfloored branch).
fn shift_tracks_variance(corr: &CorrelationPair) -> bool {
    let d = corr.dim() as f64;
    let mean_diag = corr.q.trace() / d;
    mean_diag > 0.0 && mean_diag >= VARIANCE_FLOOR * corr.mean.norm_squared() / d
}

/// Solve `C s = λ Q_reg s` for the `n_modes` largest eigenvalues, with
/// `Q_reg = Q + shift I`, `Q_reg = L L^T` and `C~ = L^-1 C L^-T`.
///
/// Each column of the mixing matrix has its largest-magnitude entry positive.
pub fn solve_gev(corr: &CorrelationPair, n_modes: usize, eps: f64) -> Result<GevSolution> {
    if !corr.symmetrized {
        return Err(Error::NotSymmetrized);
    }
    let d = corr.dim();
    if n_modes == 0 || n_modes > d {
        return Err(Error::TooManyModes {
            requested: n_modes,
            available: d,
        });
    }
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "regularization must be finite and non-negative, got {eps}"
        )));
    }
    let shift = regularization_shift(corr, eps);
    let mut q_reg = corr.q.clone();
    for i in 0..d {
        q_reg[(i, i)] += shift;
    }
    let chol = q_reg.cholesky().ok_or(Error::IllConditioned)?;
    let l = chol.l();
    let lc = l.solve_lower_triangular(&corr.c).ok_or(Error::IllConditioned)?;
    let c_white = l
        .solve_lower_triangular(&lc.transpose())
        .ok_or(Error::IllConditioned)?;
    let (values, vectors) = symmetric_eigen_desc(symmetrize(&c_white))?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("whitened eigenvalues".into()));
    }
    let mut whitened_modes = vectors.columns(0, n_modes).into_owned();
    let mut mixing = l
        .transpose()
        .solve_upper_triangular(&whitened_modes)
        .ok_or(Error::IllConditioned)?;
    // Keep the whitened vectors consistent with the sign-fixed mixing.
    for (mut s, mut w) in mixing.column_iter_mut().zip(whitened_modes.column_iter_mut()) {
        let pivot = s.iter().copied().fold(0.0_f64, |b, v| if v.abs() > b.abs() { v } else { b });
        if pivot < 0.0 {
            s.neg_mut();
            w.neg_mut();
        }
    }
    let eigenvalues = values[..n_modes].to_vec();
    Ok(GevSolution {
        flags: flag_eigenvalues(&eigenvalues),
        eigenvalues,
        mixing,
        whitening: l,
        whitened_modes,
        full_spectrum: values,
        regularization: eps,
        shift,
        shift_tracks_variance: shift_tracks_variance(corr),
    })
}

/// Implied timescale of one eigenvalue.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Timescale {
    Finite(f64),
    /// `λ >= 1`: a stationary or over-estimated mode.
    Infinite,
    /// `λ <= 0`: no physical timescale (negative eigenvalue).
    Undefined,
}

impl Timescale {
    /// `+inf` and NaN stand in for the markers.
    pub fn value(self) -> f64 {
        match self {
            Timescale::Finite(t) => t,
            Timescale::Infinite => f64::INFINITY,
            Timescale::Undefined => f64::NAN,
        }
    }

    pub fn is_negative_eigenvalue(self) -> bool {
        matches!(self, Timescale::Undefined)
    }
}

/// `t_i = -lag / ln(λ_i)`.
pub fn implied_timescale(eigenvalue: f64, lag: f64) -> Timescale {
    if eigenvalue >= 1.0 {
        Timescale::Infinite
    } else if eigenvalue > 0.0 {
        Timescale::Finite(-lag / eigenvalue.ln())
    } else {
        Timescale::Undefined
    }
}

pub fn implied_timescales(eigenvalues: &[f64], lag: f64) -> Vec<Timescale> {
    eigenvalues.iter().map(|&l| implied_timescale(l, lag)).collect()
}

/// Linear TICA: `psi_i(x) = a_i . (x - mean)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub lag: usize,
    pub mean: Vec<f64>,
    /// One row `a_i` per mode.
    pub coefficients: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
}

impl LinearModel {
    fn coefficient_matrix(&self) -> DMatrix<f64> {
        let d = self.mean.len();
        DMatrix::from_fn(self.coefficients.len(), d, |i, j| self.coefficients[i][j])
    }

    pub fn timescales(&self) -> Vec<Timescale> {
        implied_timescales(&self.eigenvalues, self.lag as f64)
    }
}

impl ModeTransform for LinearModel {
    fn input_dim(&self) -> usize {
        self.mean.len()
    }

    fn n_modes(&self) -> usize {
        self.coefficients.len()
    }

    fn transform(&self, frames: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if frames.ncols() != self.input_dim() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} columns", self.input_dim()),
                found: format!("{}", frames.ncols()),
            });
        }
        let mean = DVector::from_column_slice(&self.mean).transpose();
        let mut centered = frames.clone();
        for mut r in centered.row_iter_mut() {
            r -= &mean;
        }
        Ok(centered * self.coefficient_matrix().transpose())
    }
}

pub fn fit_tica(trajectories: &[Trajectory], lag: usize, n_modes: usize) -> Result<LinearModel> {
    fit_tica_with(trajectories, lag, n_modes, DEFAULT_REGULARIZATION)
}

pub fn fit_tica_with(
    trajectories: &[Trajectory],
    lag: usize,
    n_modes: usize,
    eps: f64,
) -> Result<LinearModel> {
    let data = make_lagged_pairs(trajectories, lag)?;
    let corr = estimate_correlations(&data, true)?;
    let sol = solve_gev(&corr, n_modes, eps)?;
    let mixing = &sol.mixing;
    Ok(LinearModel {
        lag,
        mean: corr.mean.iter().copied().collect(),
        coefficients: mixing
            .column_iter()
            .map(|c| c.iter().copied().collect())
            .collect(),
        eigenvalues: sol.eigenvalues,
    })
}
