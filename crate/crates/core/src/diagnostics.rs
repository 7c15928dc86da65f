//! Validation of fitted models: exact correlations on discrete chains,
//! projections onto reference eigenfunctions, held-out scores,
//! Chapman-Kolmogorov checks and a count-based Markov model baseline.

use nalgebra::DMatrix;

use crate::estimation::{
    implied_timescale, solve_gev, CompressedPairs, CorrelationPair, Timescale,
};
use crate::linalg::symmetrize;
use crate::toy_models::{PotentialGrid, SpectrumOracle, Trajectory, TransitionMatrix};
use crate::{Error, ModeTransform, Result};

/// Correlations of a per-bin feature map under the chain's equilibrium,
/// without sampling noise.
///
/// `features` has one row per bin. With `pi` from `oracle` and `P = p_lag`:
/// `Q = Z^T diag(pi) Z` and `C = Z^T diag(pi) P Z`, where `Z` is the feature
/// matrix with its pi-weighted mean removed.
pub fn exact_correlations(
    p_lag: &TransitionMatrix,
    oracle: &SpectrumOracle,
    features: &DMatrix<f64>,
) -> Result<CorrelationPair> {
    let n = p_lag.n_states();
    if features.nrows() != n || oracle.stationary.len() != n {
        return Err(Error::ShapeMismatch {
            expected: format!("{n} bins"),
            found: format!("{} feature rows", features.nrows()),
        });
    }
    let pi = &oracle.stationary;
    let mean = features.tr_mul(pi);
    let mut z = features.clone();
    for mut r in z.row_iter_mut() {
        r -= mean.transpose();
    }
    let mut weighted = z.clone();
    for (b, mut r) in weighted.row_iter_mut().enumerate() {
        r *= pi[b];
    }
    let q = weighted.tr_mul(&z);
    let c = weighted.tr_mul(&(p_lag.probs() * &z));
    Ok(CorrelationPair {
        c: symmetrize(&c),
        q: symmetrize(&q),
        mean,
        n_samples: 0,
        symmetrized: true,
    })
}

/// Pi-weighted overlap of two modes after normalizing each.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub signed: f64,
    pub absolute: f64,
}

/// `sum_b pi_b psi(b) phi(b)` with both modes scaled to unit pi-norm.
pub fn weighted_projection(mode: &[f64], reference: &[f64], pi: &[f64]) -> Result<Projection> {
    if mode.len() != pi.len() || reference.len() != pi.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} bins", pi.len()),
            found: format!("{} and {}", mode.len(), reference.len()),
        });
    }
    let norm = |v: &[f64]| v.iter().zip(pi).map(|(x, p)| p * x * x).sum::<f64>().sqrt();
    let (na, nb) = (norm(mode), norm(reference));
    if !(na > 0.0 && nb > 0.0) {
        return Err(Error::ZeroNorm);
    }
    let dot: f64 = mode.iter().zip(reference).zip(pi).map(|((a, b), p)| p * a * b).sum();
    let signed = (dot / (na * nb)).clamp(-1.0, 1.0);
    Ok(Projection {
        signed,
        absolute: signed.abs(),
    })
}

/// Evaluate a model on every bin center (one row per bin).
pub fn modes_on_grid(model: &dyn ModeTransform, grid: &PotentialGrid) -> Result<DMatrix<f64>> {
    model.transform(&grid.centers())
}

/// Entry `(i, j)` is the signed projection of model mode `i` onto nontrivial
/// reference mode `j + 1`.
pub fn projection_matrix(modes: &DMatrix<f64>, oracle: &SpectrumOracle) -> Result<DMatrix<f64>> {
    let pi = oracle.stationary.as_slice();
    let k = oracle.n_modes();
    let mut out = DMatrix::zeros(modes.ncols(), k);
    for i in 0..modes.ncols() {
        let m: Vec<f64> = modes.column(i).iter().copied().collect();
        for j in 0..k {
            out[(i, j)] = weighted_projection(&m, &oracle.mode(j + 1), pi)?.signed;
        }
    }
    Ok(out)
}

/// Per-mode projections of model mode `i` onto reference mode `i + 1`.
pub fn mode_projections(modes: &DMatrix<f64>, oracle: &SpectrumOracle) -> Result<Vec<Projection>> {
    let pi = oracle.stationary.as_slice();
    let n = modes.ncols().min(oracle.n_modes());
    (0..n)
        .map(|i| {
            let m: Vec<f64> = modes.column(i).iter().copied().collect();
            weighted_projection(&m, &oracle.mode(i + 1), pi)
        })
        .collect()
}

/// Eigenvalues of the variational solve over a fixed transform's outputs on
/// fresh data.
pub fn held_out_eigenvalues(
    model: &dyn ModeTransform,
    trajectories: &[Trajectory],
    lag: usize,
    n_modes: usize,
    eps: f64,
) -> Result<Vec<f64>> {
    let packed = CompressedPairs::from_trajectories(trajectories, lag)?;
    if packed.points.ncols() != model.input_dim() {
        return Err(Error::ShapeMismatch {
            expected: format!("{}-dimensional frames", model.input_dim()),
            found: format!("{}", packed.points.ncols()),
        });
    }
    let features = model.transform(&packed.points)?;
    let corr = packed.correlations(&features, true)?;
    Ok(solve_gev(&corr, n_modes, eps)?.eigenvalues)
}

/// Negated VAMP-2 score `-sum_i λ_i²` of a fixed transform on test data.
pub fn held_out_vamp2(
    model: &dyn ModeTransform,
    trajectories: &[Trajectory],
    lag: usize,
    n_modes: usize,
    eps: f64,
) -> Result<f64> {
    let values = held_out_eigenvalues(model, trajectories, lag, n_modes, eps)?;
    Ok(-values.iter().map(|l| l * l).sum::<f64>())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CkRow {
    pub mode: usize,
    pub k: usize,
    pub predicted: Timescale,
    pub estimated: Timescale,
    /// `(estimated - predicted) / predicted` when both are finite.
    pub rel_dev: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CkReport {
    pub base_lag: usize,
    pub ks: Vec<usize>,
    pub rows: Vec<CkRow>,
    /// Modes left out because their base eigenvalue is not positive.
    pub excluded_modes: Vec<usize>,
}

impl CkReport {
    pub fn max_abs_deviation(&self, modes: &[usize]) -> f64 {
        self.rows
            .iter()
            .filter(|r| modes.contains(&r.mode))
            .filter_map(|r| r.rel_dev)
            .fold(0.0, |m, d| m.max(d.abs()))
    }
}

/// Timescale the base model predicts at lag `k * base_lag`:
/// `-k tau / ln(λ^k)`, which reduces to `-tau / ln λ` for every `k`.
pub fn predicted_timescale(base_eigenvalue: f64, base_lag: usize, _k: usize) -> Timescale {
    implied_timescale(base_eigenvalue, base_lag as f64)
}

/// Compare base-lag timescales against models re-estimated at each `k * tau`.
///
/// `refit(lag)` returns the eigenvalues of a model estimated at `lag`; mode
/// numbers in the report start at 1.
pub fn ck_test<F>(base_eigenvalues: &[f64], base_lag: usize, ks: &[usize], mut refit: F) -> Result<CkReport>
where
    F: FnMut(usize) -> Result<Vec<f64>>,
{
    if base_lag == 0 || ks.is_empty() || ks.contains(&0) {
        return Err(Error::InvalidArgument(
            "lag multipliers must be positive integers".into(),
        ));
    }
    let excluded_modes: Vec<usize> = base_eigenvalues
        .iter()
        .enumerate()
        .filter(|(_, &l)| l <= 0.0)
        .map(|(i, _)| i + 1)
        .collect();
    let mut rows = Vec::new();
    for &k in ks {
        let lag = k * base_lag;
        let refitted = refit(lag)?;
        for (i, &base) in base_eigenvalues.iter().enumerate() {
            if excluded_modes.contains(&(i + 1)) {
                continue;
            }
            let predicted = predicted_timescale(base, base_lag, k);
            let estimated = refitted
                .get(i)
                .map_or(Timescale::Undefined, |&l| implied_timescale(l, lag as f64));
            let rel_dev = match (predicted, estimated) {
                (Timescale::Finite(p), Timescale::Finite(e)) => Some((e - p) / p),
                _ => None,
            };
            rows.push(CkRow {
                mode: i + 1,
                k,
                predicted,
                estimated,
                rel_dev,
            });
        }
    }
    Ok(CkReport {
        base_lag,
        ks: ks.to_vec(),
        rows,
        excluded_modes,
    })
}

/// Count-based Markov model over a potential grid.
#[derive(Debug, Clone)]
pub struct EmpiricalMsm {
    pub lag: usize,
    /// Lagged transition counts between bins (row = from).
    pub counts: DMatrix<u64>,
    /// Row-normalized counts; unvisited rows are self-loops.
    pub transition: DMatrix<f64>,
    /// Bins of the largest connected set used for the spectrum.
    pub active_set: Vec<usize>,
    pub eigenvalues: Vec<f64>,
}

impl EmpiricalMsm {
    pub fn timescales(&self) -> Vec<Timescale> {
        crate::estimation::implied_timescales(&self.eigenvalues, self.lag as f64)
    }
}

/// Assign frames to their nearest bin and count transitions at `lag`.
///
/// The spectrum comes from the reversible estimate `(N + N^T)` row-normalized
/// on the largest connected set of visited bins.
pub fn fit_empirical_msm(
    trajectories: &[Trajectory],
    grid: &PotentialGrid,
    lag: usize,
    n_modes: usize,
) -> Result<EmpiricalMsm> {
    if lag == 0 {
        return Err(Error::InvalidArgument("lag must be at least 1".into()));
    }
    let n = grid.len();
    let mut counts = DMatrix::<u64>::zeros(n, n);
    for traj in trajectories {
        let bins = traj
            .frames()
            .map(|f| grid.nearest_bin(f))
            .collect::<Result<Vec<usize>>>()?;
        for t in 0..bins.len().saturating_sub(lag) {
            counts[(bins[t], bins[t + lag])] += 1;
        }
    }
    let mut transition = DMatrix::zeros(n, n);
    for i in 0..n {
        let total: u64 = counts.row(i).iter().sum();
        if total == 0 {
            transition[(i, i)] = 1.0;
        } else {
            for j in 0..n {
                transition[(i, j)] = counts[(i, j)] as f64 / total as f64;
            }
        }
    }
    let active_set = largest_connected_set(&counts);
    let m = active_set.len();
    let eigenvalues = if m >= 2 {
        let sym = DMatrix::from_fn(m, m, |a, b| {
            (counts[(active_set[a], active_set[b])] + counts[(active_set[b], active_set[a])]) as f64
        });
        let mut rev = sym.clone();
        for (a, mut r) in rev.row_iter_mut().enumerate() {
            r /= sym.row(a).sum();
        }
        let k = n_modes.min(m - 1);
        if k == 0 {
            Vec::new()
        } else {
            TransitionMatrix::new(rev, lag)?
                .reference_spectrum(k)?
                .nontrivial_eigenvalues()
                .to_vec()
        }
    } else {
        Vec::new()
    };
    Ok(EmpiricalMsm {
        lag,
        counts,
        transition,
        active_set,
        eigenvalues,
    })
}

/// Largest set of bins connected by transitions in either direction,
/// sorted. Bins without any count are never included.
fn largest_connected_set(counts: &DMatrix<u64>) -> Vec<usize> {
    let n = counts.nrows();
    let mut component = vec![usize::MAX; n];
    let mut best: Vec<usize> = Vec::new();
    for start in 0..n {
        let visited = counts.row(start).iter().any(|&c| c > 0) || counts.column(start).iter().any(|&c| c > 0);
        if component[start] != usize::MAX || !visited {
            continue;
        }
        component[start] = start;
        let mut members = vec![start];
        let mut stack = vec![start];
        while let Some(a) = stack.pop() {
            for b in 0..n {
                if component[b] == usize::MAX && (counts[(a, b)] > 0 || counts[(b, a)] > 0) {
                    component[b] = start;
                    members.push(b);
                    stack.push(b);
                }
            }
        }
        if members.len() > best.len() {
            best = members;
        }
    }
    best.sort_unstable();
    best
}

/// Standard centered correlation coefficient.
pub fn pearson_correlation(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "series must have equal length of at least 2, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Reference eigenfunctions as a transform: each frame takes the values of
/// its nearest bin.
#[derive(Debug, Clone)]
pub struct OracleTransform {
    grid: PotentialGrid,
    /// Nontrivial modes, one column per mode.
    modes: DMatrix<f64>,
}

impl OracleTransform {
    pub fn new(grid: PotentialGrid, oracle: &SpectrumOracle) -> Result<Self> {
        if oracle.eigenfunctions.nrows() != grid.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} bins", grid.len()),
                found: format!("{}", oracle.eigenfunctions.nrows()),
            });
        }
        let modes = oracle.eigenfunctions.columns(1, oracle.n_modes()).into_owned();
        Ok(Self { grid, modes })
    }
}

impl ModeTransform for OracleTransform {
    fn input_dim(&self) -> usize {
        self.grid.dim()
    }

    fn n_modes(&self) -> usize {
        self.modes.ncols()
    }

    fn transform(&self, frames: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(frames.nrows(), self.n_modes());
        for (t, row) in frames.row_iter().enumerate() {
            let x: Vec<f64> = row.iter().copied().collect();
            let b = self.grid.nearest_bin(&x)?;
            out.row_mut(t).copy_from(&self.modes.row(b));
        }
        Ok(out)
    }
}
