//! Discretized benchmark systems with exactly computable spectra.
//!
//! A [`PotentialGrid`] tabulates a potential (in units of kT) at the centers
//! of a uniform grid of bins. Local moves between neighboring bins weighted by
//! `exp(-(V_j - V_i))` define a reversible Markov chain, whose dense
//! eigendecomposition gives the reference spectrum every estimator is judged
//! against.

use std::collections::VecDeque;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::linalg::symmetric_eigen_desc;
use crate::{Error, Result};

/// The one-dimensional four-well potential on `[-1, 1]`.
pub fn potential_1d(x: f64) -> f64 {
    2.0 * (x.powi(8)
        + 0.8 * (-80.0 * x * x).exp()
        + 0.2 * (-80.0 * (x - 0.5).powi(2)).exp()
        + 0.5 * (-40.0 * (x + 0.5).powi(2)).exp())
}

/// The modified ring potential: a narrow valley at `r = 0.8` interrupted by
/// four barriers. Cases are tested in order and the first match wins.
pub fn potential_ring(x: f64, y: f64) -> f64 {
    let r = x.hypot(y);
    let mut theta = y.atan2(x);
    if theta < 0.0 {
        theta += 2.0 * PI;
    }
    let off_ring = (r - 0.8).abs();
    if off_ring > 0.05 {
        2.5 + 9.0 * (r - 0.8).powi(2)
    } else if (theta - PI / 2.0).abs() < 0.25 {
        0.5
    } else if (theta - PI).abs() < 0.25 {
        1.3
    } else if (theta - 3.0 * PI / 2.0).abs() < 0.25 {
        1.0
    } else if r.abs() > 0.4 && !(0.05..=2.0 * PI - 0.05).contains(&theta) {
        8.0
    } else {
        0.0
    }
}

/// A potential tabulated at the centers of a uniform 1D or 2D grid.
///
/// 2D bins are indexed row-major with x as the outer axis:
/// `index = ix * ny + iy`.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialGrid {
    shape: Vec<usize>,
    bounds: Vec<(f64, f64)>,
    potential: Vec<f64>,
}

impl PotentialGrid {
    /// Tabulate `potential` at the bin centers `lo + (i + 0.5) * width`.
    pub fn tabulate<F>(shape: &[usize], bounds: &[(f64, f64)], potential: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> f64,
    {
        let mut grid = Self {
            shape: shape.to_vec(),
            bounds: bounds.to_vec(),
            potential: Vec::new(),
        };
        grid.check_geometry()?;
        grid.potential = (0..grid.len()).map(|b| potential(&grid.center(b))).collect();
        grid.check_potential()?;
        Ok(grid)
    }

    /// Wrap already tabulated values (one per bin, in bin index order).
    pub fn from_values(shape: &[usize], bounds: &[(f64, f64)], potential: Vec<f64>) -> Result<Self> {
        let grid = Self {
            shape: shape.to_vec(),
            bounds: bounds.to_vec(),
            potential,
        };
        grid.check_geometry()?;
        grid.check_potential()?;
        Ok(grid)
    }

    pub fn fourwell(bins: usize) -> Result<Self> {
        Self::tabulate(&[bins], &[(-1.0, 1.0)], |x| potential_1d(x[0]))
    }

    pub fn ring(bins_per_axis: usize) -> Result<Self> {
        Self::tabulate(
            &[bins_per_axis, bins_per_axis],
            &[(-1.0, 1.0), (-1.0, 1.0)],
            |x| potential_ring(x[0], x[1]),
        )
    }

    fn check_geometry(&self) -> Result<()> {
        if self.shape.is_empty() || self.shape.len() > 2 {
            return Err(Error::InvalidGrid(format!(
                "dimension must be 1 or 2, got {}",
                self.shape.len()
            )));
        }
        if self.bounds.len() != self.shape.len() {
            return Err(Error::InvalidGrid(format!(
                "{} axes but {} bounds",
                self.shape.len(),
                self.bounds.len()
            )));
        }
        for (axis, (&n, &(lo, hi))) in self.shape.iter().zip(&self.bounds).enumerate() {
            if n < 2 {
                return Err(Error::InvalidGrid(format!(
                    "axis {axis} has {n} bins, at least 2 are required"
                )));
            }
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidGrid(format!(
                    "axis {axis} has invalid bounds [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }

    fn check_potential(&self) -> Result<()> {
        if self.potential.len() != self.len() {
            return Err(Error::InvalidGrid(format!(
                "{} potential values for {} bins",
                self.potential.len(),
                self.len()
            )));
        }
        if let Some(b) = self.potential.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("potential of bin {b}")));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    /// Total number of bins.
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn potential(&self) -> &[f64] {
        &self.potential
    }

    pub fn bin_width(&self, axis: usize) -> f64 {
        let (lo, hi) = self.bounds[axis];
        (hi - lo) / self.shape[axis] as f64
    }

    fn axis_indices(&self, bin: usize) -> Vec<usize> {
        match self.shape.as_slice() {
            [_] => vec![bin],
            [_, ny] => vec![bin / ny, bin % ny],
            _ => unreachable!("grid dimension is validated on construction"),
        }
    }

    fn flat_index(&self, idx: &[usize]) -> usize {
        match self.shape.as_slice() {
            [_] => idx[0],
            [_, ny] => idx[0] * ny + idx[1],
            _ => unreachable!("grid dimension is validated on construction"),
        }
    }

    pub fn center(&self, bin: usize) -> Vec<f64> {
        self.axis_indices(bin)
            .iter()
            .enumerate()
            .map(|(axis, &i)| self.bounds[axis].0 + (i as f64 + 0.5) * self.bin_width(axis))
            .collect()
    }

    /// Bin centers as an `n_bins x dim` matrix.
    pub fn centers(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.len(), self.dim());
        for b in 0..self.len() {
            for (axis, v) in self.center(b).into_iter().enumerate() {
                m[(b, axis)] = v;
            }
        }
        m
    }

    /// Index of the bin whose center is nearest to `x`; coordinates outside
    /// the domain are clamped onto the boundary bins.
    pub fn nearest_bin(&self, x: &[f64]) -> Result<usize> {
        if x.len() != self.dim() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} coordinates", self.dim()),
                found: format!("{}", x.len()),
            });
        }
        let idx: Vec<usize> = x
            .iter()
            .enumerate()
            .map(|(axis, &v)| {
                let lo = self.bounds[axis].0;
                let cell = ((v - lo) / self.bin_width(axis)).floor();
                cell.clamp(0.0, (self.shape[axis] - 1) as f64) as usize
            })
            .collect();
        Ok(self.flat_index(&idx))
    }

    /// Von Neumann neighbors (no diagonals, no wrapping).
    pub fn neighbors(&self, bin: usize) -> Vec<usize> {
        let idx = self.axis_indices(bin);
        let mut out = Vec::with_capacity(2 * self.dim());
        for axis in 0..self.dim() {
            if idx[axis] > 0 {
                let mut n = idx.clone();
                n[axis] -= 1;
                out.push(self.flat_index(&n));
            }
            if idx[axis] + 1 < self.shape[axis] {
                let mut n = idx.clone();
                n[axis] += 1;
                out.push(self.flat_index(&n));
            }
        }
        out.sort_unstable();
        out
    }
}

/// Dense row-stochastic matrix of transition probabilities at a lag of
/// `lag` chain steps.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    probs: DMatrix<f64>,
    lag: usize,
}

const ROW_SUM_TOL: f64 = 1e-10;

impl TransitionMatrix {
    /// Validates squareness, entry range and row sums.
    pub fn new(probs: DMatrix<f64>, lag: usize) -> Result<Self> {
        if lag == 0 {
            return Err(Error::InvalidArgument("lag must be at least 1".into()));
        }
        if probs.nrows() != probs.ncols() || probs.nrows() == 0 {
            return Err(Error::ShapeMismatch {
                expected: "non-empty square matrix".into(),
                found: format!("{}x{}", probs.nrows(), probs.ncols()),
            });
        }
        if probs.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("transition matrix".into()));
        }
        if probs.iter().any(|&p| !(-ROW_SUM_TOL..=1.0 + ROW_SUM_TOL).contains(&p)) {
            return Err(Error::InvalidArgument(
                "transition probabilities must lie in [0, 1]".into(),
            ));
        }
        let tm = Self { probs, lag };
        tm.check_rows()?;
        Ok(tm)
    }

    fn check_rows(&self) -> Result<()> {
        for (row, r) in self.probs.row_iter().enumerate() {
            let sum = r.sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::NotRowStochastic { row, sum });
            }
        }
        Ok(())
    }

    pub fn probs(&self) -> &DMatrix<f64> {
        &self.probs
    }

    pub fn lag(&self) -> usize {
        self.lag
    }

    pub fn n_states(&self) -> usize {
        self.probs.nrows()
    }

    /// `P^k` by square-and-multiply; the lag is multiplied by `k`.
    pub fn matrix_power(&self, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument(
                "matrix power must be at least 1".into(),
            ));
        }
        let mut result: Option<DMatrix<f64>> = None;
        let mut base = self.probs.clone();
        let mut e = k;
        loop {
            if e & 1 == 1 {
                result = Some(match result {
                    None => base.clone(),
                    Some(r) => &r * &base,
                });
            }
            e >>= 1;
            if e == 0 {
                break;
            }
            base = &base * &base;
        }
        let out = Self {
            probs: result.expect("k >= 1 sets at least one bit"),
            lag: self.lag * k,
        };
        out.check_rows()?;
        Ok(out)
    }

    /// True when every state can reach every other through positive entries.
    pub fn is_irreducible(&self) -> bool {
        let n = self.n_states();
        let reach = |forward: bool| {
            let mut seen = vec![false; n];
            let mut queue = VecDeque::from([0usize]);
            seen[0] = true;
            while let Some(i) = queue.pop_front() {
                for j in 0..n {
                    let p = if forward {
                        self.probs[(i, j)]
                    } else {
                        self.probs[(j, i)]
                    };
                    if p > 0.0 && !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
            seen.into_iter().all(|s| s)
        };
        reach(true) && reach(false)
    }

    /// Stationary distribution: the left eigenvector at eigenvalue 1, from a
    /// direct solve of `(P^T - I) pi = 0` with one equation replaced by
    /// `sum(pi) = 1`.
    pub fn stationary_distribution(&self) -> Result<DVector<f64>> {
        let n = self.n_states();
        let mut a = self.probs.transpose();
        for i in 0..n {
            a[(i, i)] -= 1.0;
        }
        a.row_mut(n - 1).fill(1.0);
        let mut rhs = DVector::zeros(n);
        rhs[n - 1] = 1.0;
        let mut pi = a.lu().solve(&rhs).ok_or(Error::Reducible)?;
        // Round-off can leave tiny negative weights in nearly empty states.
        pi.iter_mut().for_each(|p| *p = p.max(0.0));
        let total = pi.sum();
        Ok(pi / total)
    }

    /// Exact spectrum of a reversible chain: the `n_modes` slowest nontrivial
    /// modes plus the stationary one.
    ///
    /// The chain is symmetrized as `D^{1/2} P D^{-1/2}` with `D = diag(pi)`,
    /// so eigenfunctions come out real and pi-orthonormal.
    pub fn reference_spectrum(&self, n_modes: usize) -> Result<SpectrumOracle> {
        let n = self.n_states();
        if n_modes + 1 > n {
            return Err(Error::TooManyModes {
                requested: n_modes + 1,
                available: n,
            });
        }
        if !self.is_irreducible() {
            return Err(Error::Reducible);
        }
        let pi = self.stationary_distribution()?;
        let max_violation = detailed_balance_violation(&self.probs, pi.as_slice());
        if max_violation > 1e-9 {
            return Err(Error::NotReversible { max_violation });
        }
        let sqrt_pi: Vec<f64> = pi.iter().map(|p| p.sqrt()).collect();
        let mut sym = DMatrix::from_fn(n, n, |i, j| {
            sqrt_pi[i] * self.probs[(i, j)] / sqrt_pi[j]
        });
        sym = crate::linalg::symmetrize(&sym);
        let (values, vectors) = symmetric_eigen_desc(sym)?;

        let k = n_modes + 1;
        let mut eigenfunctions = DMatrix::zeros(n, k);
        for mode in 0..k {
            let u = vectors.column(mode);
            let mut psi: Vec<f64> = (0..n).map(|b| u[b] / sqrt_pi[b]).collect();
            let norm = psi
                .iter()
                .zip(pi.iter())
                .map(|(v, p)| p * v * v)
                .sum::<f64>()
                .sqrt();
            psi.iter_mut().for_each(|v| *v /= norm);
            // pi-weighted entry of largest magnitude is made positive
            let pivot = (0..n)
                .max_by(|&a, &b| (pi[a] * psi[a]).abs().total_cmp(&(pi[b] * psi[b]).abs()))
                .unwrap_or(0);
            let sign = if psi[pivot] < 0.0 { -1.0 } else { 1.0 };
            for b in 0..n {
                eigenfunctions[(b, mode)] = sign * psi[b];
            }
        }
        Ok(SpectrumOracle {
            eigenvalues: values[..k].to_vec(),
            stationary: pi,
            eigenfunctions,
            lag: self.lag,
        })
    }

    /// Sample a path of state indices of length `n_steps`, starting in a
    /// uniformly chosen state. Each step inverts the CDF of the current row.
    pub fn sample_path(&self, n_steps: usize, seed: u64) -> Result<Vec<usize>> {
        if n_steps < 2 {
            return Err(Error::InvalidArgument(
                "a trajectory needs at least 2 steps".into(),
            ));
        }
        let n = self.n_states();
        // Sparse cumulative rows; zero entries can never be drawn.
        let rows: Vec<Vec<(usize, f64)>> = (0..n)
            .map(|i| {
                let mut acc = 0.0;
                (0..n)
                    .filter(|&j| self.probs[(i, j)] > 0.0)
                    .map(|j| {
                        acc += self.probs[(i, j)];
                        (j, acc)
                    })
                    .collect()
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut state = rng.random_range(0..n);
        let mut path = Vec::with_capacity(n_steps);
        path.push(state);
        for _ in 1..n_steps {
            let u: f64 = rng.random();
            let row = &rows[state];
            state = row
                .iter()
                .find(|&&(_, cum)| u < cum)
                .or(row.last())
                .map(|&(j, _)| j)
                .expect("every row has positive mass");
            path.push(state);
        }
        Ok(path)
    }
}

/// Largest `|pi_i p_ij - pi_j p_ji|` over all pairs.
pub fn detailed_balance_violation(probs: &DMatrix<f64>, pi: &[f64]) -> f64 {
    let n = probs.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in 0..i {
            worst = worst.max((pi[i] * probs[(i, j)] - pi[j] * probs[(j, i)]).abs());
        }
    }
    worst
}

fn local_move_matrix(grid: &PotentialGrid) -> Result<TransitionMatrix> {
    let n = grid.len();
    let v = grid.potential();
    let mut probs = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut targets = grid.neighbors(i);
        targets.push(i);
        targets.sort_unstable();
        let weights: Vec<f64> = targets.iter().map(|&j| (-(v[j] - v[i])).exp()).collect();
        let total: f64 = weights.iter().sum();
        for (&j, w) in targets.iter().zip(&weights) {
            probs[(i, j)] = w / total;
        }
    }
    TransitionMatrix::new(probs, 1)
}

/// Unit-lag chain on a 1D grid: moves to `|i - j| <= 1` with weight
/// `exp(-(V_j - V_i))`, each row normalized.
pub fn build_transition_matrix_1d(grid: &PotentialGrid) -> Result<TransitionMatrix> {
    if grid.dim() != 1 {
        return Err(Error::InvalidGrid(format!(
            "expected a 1D grid, got {} dimensions",
            grid.dim()
        )));
    }
    local_move_matrix(grid)
}

/// Unit-lag chain on a rectangular 2D grid with 4-connected moves plus self.
pub fn build_transition_matrix_2d(grid: &PotentialGrid) -> Result<TransitionMatrix> {
    if grid.dim() != 2 {
        return Err(Error::InvalidGrid(format!(
            "expected a rectangular 2D grid, got {} dimensions",
            grid.dim()
        )));
    }
    local_move_matrix(grid)
}

/// Exact eigenpairs of a transition matrix, eigenvalues non-ascending with the
/// stationary pair first.
#[derive(Debug, Clone)]
pub struct SpectrumOracle {
    pub eigenvalues: Vec<f64>,
    pub stationary: DVector<f64>,
    /// Per-bin eigenfunction values `psi_i = v_i / pi`, one mode per column.
    pub eigenfunctions: DMatrix<f64>,
    pub lag: usize,
}

impl SpectrumOracle {
    /// Nontrivial eigenvalues (mode 1 onwards).
    pub fn nontrivial_eigenvalues(&self) -> &[f64] {
        &self.eigenvalues[1..]
    }

    pub fn mode(&self, i: usize) -> Vec<f64> {
        self.eigenfunctions.column(i).iter().copied().collect()
    }

    pub fn n_modes(&self) -> usize {
        self.eigenvalues.len() - 1
    }
}

/// Ordered frames of equal dimension, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    dim: usize,
    data: Vec<f64>,
    pub seed: Option<u64>,
}

impl Trajectory {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::ShapeMismatch {
                expected: format!("a multiple of dimension {dim}"),
                found: format!("{} values", data.len()),
            });
        }
        Ok(Self {
            dim,
            data,
            seed: None,
        })
    }

    pub fn from_frames(frames: &[Vec<f64>]) -> Result<Self> {
        let dim = frames.first().map_or(0, Vec::len);
        if let Some(bad) = frames.iter().position(|f| f.len() != dim) {
            return Err(Error::ShapeMismatch {
                expected: format!("{dim} coordinates"),
                found: format!("{} in frame {bad}", frames[bad].len()),
            });
        }
        Self::new(dim, frames.concat())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    /// Frames as an `N x dim` matrix.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.len(), self.dim, &self.data)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// A potential grid together with its unit-lag transition matrix.
#[derive(Debug, Clone)]
pub struct DiscreteModel {
    pub grid: PotentialGrid,
    pub unit: TransitionMatrix,
}

impl DiscreteModel {
    pub fn new(grid: PotentialGrid) -> Result<Self> {
        let unit = match grid.dim() {
            1 => build_transition_matrix_1d(&grid)?,
            _ => build_transition_matrix_2d(&grid)?,
        };
        Ok(Self { grid, unit })
    }

    pub fn fourwell(bins: usize) -> Result<Self> {
        Self::new(PotentialGrid::fourwell(bins)?)
    }

    pub fn ring(bins_per_axis: usize) -> Result<Self> {
        Self::new(PotentialGrid::ring(bins_per_axis)?)
    }

    pub fn at_lag(&self, lag: usize) -> Result<TransitionMatrix> {
        self.unit.matrix_power(lag)
    }

    /// Reference spectrum of `P(lag) = P(1)^lag`.
    pub fn oracle(&self, lag: usize, n_modes: usize) -> Result<SpectrumOracle> {
        self.at_lag(lag)?.reference_spectrum(n_modes)
    }

    /// Simulate the chain and emit bin-center coordinates.
    pub fn sample_trajectory(&self, n_steps: usize, seed: u64) -> Result<Trajectory> {
        let path = self.unit.sample_path(n_steps, seed)?;
        let centers: Vec<Vec<f64>> = (0..self.grid.len()).map(|b| self.grid.center(b)).collect();
        let data = path.iter().flat_map(|&b| centers[b].iter().copied()).collect();
        let mut traj = Trajectory::new(self.grid.dim(), data)?;
        traj.seed = Some(seed);
        Ok(traj)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn flat_grid(shape: &[usize]) -> PotentialGrid {
        let bounds = vec![(-1.0, 1.0); shape.len()];
        PotentialGrid::tabulate(shape, &bounds, |_| 0.0).unwrap()
    }

    #[test]
    fn fourwell_potential_values() {
        let expected_half = 2.0 * (0.5_f64.powi(8) + 0.2);
        assert_abs_diff_eq!(potential_1d(0.5), expected_half, epsilon = 1e-8);
        assert!((potential_1d(0.5) - 0.40781).abs() < 1e-5);
        let expected_zero = 1.6 + (-10.0_f64).exp() + 0.4 * (-20.0_f64).exp();
        assert_abs_diff_eq!(potential_1d(0.0), expected_zero, epsilon = 1e-15);
        assert!((potential_1d(0.0) - 1.60005).abs() < 1e-5);
        assert_abs_diff_eq!(potential_1d(1.0), 2.0, epsilon = 1e-8);
    }

    #[test]
    fn ring_potential_cases() {
        let at = |r: f64, t: f64| potential_ring(r * t.cos(), r * t.sin());
        assert_eq!(at(0.8, PI / 2.0), 0.5);
        assert_eq!(at(0.8, PI), 1.3);
        assert_eq!(at(0.8, 3.0 * PI / 2.0), 1.0);
        assert_eq!(at(0.8, 0.0), 8.0);
        assert_eq!(at(0.8, -0.01), 8.0);
        assert_eq!(at(0.8, PI / 4.0), 0.0);
        assert_abs_diff_eq!(potential_ring(0.0, 0.0), 8.26, epsilon = 1e-12);
    }

    #[test]
    fn bin_centers_are_midpoints() {
        let g = PotentialGrid::fourwell(100).unwrap();
        assert_abs_diff_eq!(g.center(0)[0], -0.99, epsilon = 1e-15);
        assert_abs_diff_eq!(g.center(99)[0], 0.99, epsilon = 1e-15);
        let r = PotentialGrid::ring(50).unwrap();
        assert_eq!(r.center(1), vec![-0.98, -0.94]);
        assert_eq!(r.nearest_bin(&[-0.98, -0.94]).unwrap(), 1);
        assert_eq!(r.nearest_bin(&[5.0, -5.0]).unwrap(), 49 * 50);
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(PotentialGrid::fourwell(1).is_err());
        assert!(PotentialGrid::ring(1).is_err());
        assert!(PotentialGrid::tabulate(&[2, 2, 2], &[(0.0, 1.0); 3], |_| 0.0).is_err());
        assert!(PotentialGrid::from_values(&[3], &[(0.0, 1.0)], vec![0.0, f64::NAN, 0.0]).is_err());
        let g1 = flat_grid(&[4]);
        let g2 = flat_grid(&[3, 3]);
        assert!(build_transition_matrix_2d(&g1).is_err());
        assert!(build_transition_matrix_1d(&g2).is_err());
    }

    #[test]
    fn flat_1d_rows() {
        let p = build_transition_matrix_1d(&flat_grid(&[5])).unwrap();
        for j in 1..4 {
            assert_abs_diff_eq!(p.probs()[(2, j)], 1.0 / 3.0, epsilon = 1e-15);
        }
        assert_eq!(p.probs()[(2, 0)], 0.0);
        assert_abs_diff_eq!(p.probs()[(0, 0)], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(p.probs()[(0, 1)], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn flat_2d_rows() {
        let g = flat_grid(&[4, 4]);
        let p = build_transition_matrix_2d(&g).unwrap();
        let interior = 4 + 1;
        let mut support: Vec<usize> = (0..16).filter(|&j| p.probs()[(interior, j)] > 0.0).collect();
        support.sort();
        assert_eq!(support, vec![1, 4, 5, 6, 9]);
        for &j in &support {
            assert_abs_diff_eq!(p.probs()[(interior, j)], 0.2, epsilon = 1e-15);
        }
        let corner: Vec<usize> = (0..16).filter(|&j| p.probs()[(0, j)] > 0.0).collect();
        assert_eq!(corner, vec![0, 1, 4]);
        for &j in &corner {
            assert_abs_diff_eq!(p.probs()[(0, j)], 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn sparsity_and_row_sums_of_benchmarks() {
        let m = DiscreteModel::fourwell(100).unwrap();
        let p = m.unit.probs();
        for i in 0..100 {
            assert_abs_diff_eq!(p.row(i).sum(), 1.0, epsilon = 1e-12);
            for j in 0..100 {
                if i.abs_diff(j) > 1 {
                    assert_eq!(p[(i, j)], 0.0);
                }
                assert!((0.0..=1.0).contains(&p[(i, j)]));
            }
        }
    }

    #[test]
    fn matrix_power_small() {
        let p = TransitionMatrix::new(DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.2, 0.8]), 1).unwrap();
        assert_eq!(p.matrix_power(1).unwrap(), p);
        let p2 = p.matrix_power(2).unwrap();
        let expected = [0.83, 0.17, 0.34, 0.66];
        for (a, b) in p2.probs().transpose().iter().zip(expected) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
        assert_eq!(p2.lag(), 2);
        assert!(p.matrix_power(0).is_err());
    }

    #[test]
    fn two_state_spectrum() {
        let q = 0.15;
        let p = TransitionMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0 - q, q, q, 1.0 - q]), 1).unwrap();
        let s = p.reference_spectrum(1).unwrap();
        assert_abs_diff_eq!(s.eigenvalues[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.eigenvalues[1], 1.0 - 2.0 * q, epsilon = 1e-12);
        assert_abs_diff_eq!(s.stationary[0], 0.5, epsilon = 1e-12);
        let psi1 = s.mode(1);
        assert_abs_diff_eq!(psi1[0].abs(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(psi1[0], -psi1[1], epsilon = 1e-12);
        for v in s.mode(0) {
            assert_abs_diff_eq!(v, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn reducible_chain_is_rejected() {
        let p = TransitionMatrix::new(DMatrix::identity(3, 3), 1).unwrap();
        assert!(matches!(p.reference_spectrum(1), Err(Error::Reducible)));
    }

    #[test]
    fn absorbing_rows_give_constant_path() {
        let p = TransitionMatrix::new(DMatrix::identity(4, 4), 1).unwrap();
        let path = p.sample_path(50, 3).unwrap();
        assert!(path.iter().all(|&s| s == path[0]));
        assert!(p.sample_path(1, 3).is_err());
    }

    #[test]
    fn sampling_is_deterministic() {
        let m = DiscreteModel::fourwell(100).unwrap();
        let a = m.sample_trajectory(2000, 11).unwrap();
        let b = m.sample_trajectory(2000, 11).unwrap();
        assert_eq!(a, b);
        let c = m.sample_trajectory(2000, 12).unwrap();
        assert_ne!(a, c);
        let centers: Vec<f64> = (0..100).map(|i| m.grid.center(i)[0]).collect();
        assert!(a.frames().all(|f| centers.contains(&f[0])));
    }
}
