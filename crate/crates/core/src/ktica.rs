//! Landmark kernel TICA.
//!
//! Landmarks are picked by k-means over all frames. Each configuration is
//! mapped to Nyström features `phi(x) = diag(w)^-1/2 U^T k(x, landmarks)`,
//! where `K_mm = U diag(w) U^T` is the landmark Gram matrix with negligible
//! eigenvalues dropped, and the variational problem is solved in that basis.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::estimation::{implied_timescales, solve_gev, CompressedPairs, Timescale};
use crate::linalg::symmetric_eigen_desc;
use crate::toy_models::Trajectory;
use crate::{Error, ModeTransform, Result};

/// Relative cutoff below which landmark Gram eigenvalues are discarded.
pub const NYSTROM_CUTOFF: f64 = 1e-10;

const KMEANS_MAX_ITER: usize = 100;

/// Gaussian kernel `exp(-|x - y|^2 / (2 sigma^2))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    bandwidth: f64,
}

impl KernelSpec {
    pub fn gaussian(bandwidth: f64) -> Result<Self> {
        if !(bandwidth.is_finite() && bandwidth > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "kernel bandwidth must be finite and positive, got {bandwidth}"
            )));
        }
        Ok(Self { bandwidth })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        (-d2 / (2.0 * self.bandwidth * self.bandwidth)).exp()
    }
}

/// `K[i, j] = k(x_i, y_j)` for row-wise point sets.
pub fn gram_matrix(x: &DMatrix<f64>, y: &DMatrix<f64>, kernel: &KernelSpec) -> Result<DMatrix<f64>> {
    if x.ncols() != y.ncols() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} columns", x.ncols()),
            found: format!("{}", y.ncols()),
        });
    }
    let xs: Vec<Vec<f64>> = x.row_iter().map(|r| r.iter().copied().collect()).collect();
    let ys: Vec<Vec<f64>> = y.row_iter().map(|r| r.iter().copied().collect()).collect();
    Ok(DMatrix::from_fn(x.nrows(), y.nrows(), |i, j| kernel.eval(&xs[i], &ys[j])))
}

/// Centroids from k-means.
#[derive(Debug, Clone)]
pub struct LandmarkSet {
    /// One landmark per row.
    pub points: DMatrix<f64>,
    pub seed: u64,
    /// Final sum of squared distances to the assigned centroid.
    pub inertia: f64,
    pub iterations: usize,
}

impl LandmarkSet {
    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Merge identical rows, returning unique rows and multiplicities.
fn dedup_rows(data: &DMatrix<f64>) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut points = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    for row in data.row_iter() {
        let p: Vec<f64> = row.iter().copied().collect();
        let key = p.iter().map(|v| (v + 0.0).to_bits()).collect();
        let next = points.len();
        let id = *index.entry(key).or_insert(next);
        if id == next {
            points.push(p);
            weights.push(0.0);
        }
        weights[id] += 1.0;
    }
    (points, weights)
}

/// Lloyd's k-means with k-means++ seeding over the rows of `data`.
///
/// Stops when assignments no longer change or after 100 iterations. A
/// cluster that loses all its points is reseeded at the point farthest from
/// its current centroid.
pub fn kmeans_landmarks(data: &DMatrix<f64>, m: usize, seed: u64) -> Result<LandmarkSet> {
    let (points, weights) = dedup_rows(data);
    kmeans_weighted(&points, &weights, data.ncols(), m, seed)
}

/// k-means over distinct points carrying multiplicities; equivalent to
/// clustering the expanded data.
pub(crate) fn kmeans_weighted(
    points: &[Vec<f64>],
    weights: &[f64],
    dim: usize,
    m: usize,
    seed: u64,
) -> Result<LandmarkSet> {
    let n = points.len();
    if m == 0 {
        return Err(Error::InvalidArgument("at least one landmark is required".into()));
    }
    let distinct = weights.iter().filter(|&&w| w > 0.0).count();
    if m > distinct {
        return Err(Error::TooFewPoints {
            requested: m,
            available: distinct,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng, mass: &[f64]| -> usize {
        let total: f64 = mass.iter().sum();
        let u = rng.random::<f64>() * total;
        let mut acc = 0.0;
        for (i, &w) in mass.iter().enumerate() {
            acc += w;
            if u < acc && w > 0.0 {
                return i;
            }
        }
        mass.iter().rposition(|&w| w > 0.0).unwrap_or(0)
    };

    // k-means++ seeding
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(m);
    centroids.push(points[draw(&mut rng, weights)].clone());
    let mut nearest: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < m {
        let mass: Vec<f64> = nearest.iter().zip(weights).map(|(d, w)| d * w).collect();
        let pick = draw(&mut rng, &mass);
        let c = points[pick].clone();
        for (d, p) in nearest.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }

    let assign = |centroids: &[Vec<f64>]| -> (Vec<usize>, Vec<f64>) {
        let mut labels = vec![0; n];
        let mut dists = vec![0.0; n];
        for (i, p) in points.iter().enumerate() {
            let mut best = (0, f64::INFINITY);
            for (k, c) in centroids.iter().enumerate() {
                let d = sq_dist(p, c);
                if d < best.1 {
                    best = (k, d);
                }
            }
            labels[i] = best.0;
            dists[i] = best.1;
        }
        (labels, dists)
    };

    let (mut labels, mut dists) = assign(&centroids);
    let mut iterations = 0;
    while iterations < KMEANS_MAX_ITER {
        iterations += 1;
        let mut sums = vec![vec![0.0; dim]; m];
        let mut mass = vec![0.0; m];
        for (i, p) in points.iter().enumerate() {
            let k = labels[i];
            mass[k] += weights[i];
            for (s, v) in sums[k].iter_mut().zip(p) {
                *s += weights[i] * v;
            }
        }
        for k in 0..m {
            if mass[k] > 0.0 {
                centroids[k] = sums[k].iter().map(|s| s / mass[k]).collect();
            } else {
                let far = (0..n)
                    .filter(|&i| weights[i] > 0.0)
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]))
                    .expect("at least one weighted point");
                centroids[k] = points[far].clone();
                dists[far] = 0.0;
            }
        }
        let (new_labels, new_dists) = assign(&centroids);
        let stable = new_labels == labels;
        labels = new_labels;
        dists = new_dists;
        if stable {
            break;
        }
    }
    let inertia = dists.iter().zip(weights).map(|(d, w)| d * w).sum();
    let flat: Vec<f64> = centroids.concat();
    Ok(LandmarkSet {
        points: DMatrix::from_row_slice(m, dim, &flat),
        seed,
        inertia,
        iterations,
    })
}

/// A fitted landmark kernel TICA model.
#[derive(Debug, Clone)]
pub struct KticaModel {
    pub lag: usize,
    pub kernel: KernelSpec,
    /// One landmark per row.
    pub landmarks: DMatrix<f64>,
    /// Landmark count asked for; can exceed `landmarks.nrows()` when the data
    /// has fewer distinct points.
    pub landmarks_requested: usize,
    /// `diag(w)^-1/2 U^T`, mapping kernel rows to Nyström features.
    pub whitening: DMatrix<f64>,
    pub feature_mean: DVector<f64>,
    /// Feature-space coefficients, one mode per column.
    pub mixing: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
}

impl KticaModel {
    pub fn timescales(&self) -> Vec<Timescale> {
        implied_timescales(&self.eigenvalues, self.lag as f64)
    }

    /// Nyström features for the given frames.
    pub fn features(&self, frames: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let k = gram_matrix(frames, &self.landmarks, &self.kernel)?;
        Ok(k * self.whitening.transpose())
    }

    /// Mode values for a single configuration.
    pub fn transform_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        let frame = DMatrix::from_row_slice(1, x.len(), x);
        Ok(self.transform(&frame)?.row(0).iter().copied().collect())
    }
}

const TRANSFORM_CHUNK: usize = 4096;

impl ModeTransform for KticaModel {
    fn input_dim(&self) -> usize {
        self.landmarks.ncols()
    }

    fn n_modes(&self) -> usize {
        self.eigenvalues.len()
    }

    fn transform(&self, frames: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if frames.ncols() != self.input_dim() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} columns", self.input_dim()),
                found: format!("{}", frames.ncols()),
            });
        }
        let n = frames.nrows();
        let mut out = DMatrix::zeros(n, self.n_modes());
        let mut start = 0;
        // chunked so the kernel block stays small for long trajectories
        while start < n {
            let len = TRANSFORM_CHUNK.min(n - start);
            let mut phi = self.features(&frames.rows(start, len).into_owned())?;
            for mut r in phi.row_iter_mut() {
                r -= &self.feature_mean.transpose();
            }
            out.rows_mut(start, len).copy_from(&(phi * &self.mixing));
            start += len;
        }
        Ok(out)
    }
}

/// Settings for [`fit_ktica`].
#[derive(Debug, Clone, Copy)]
pub struct KticaConfig {
    pub lag: usize,
    pub kernel: KernelSpec,
    pub landmarks: usize,
    pub n_modes: usize,
    pub regularization: f64,
    pub seed: u64,
}

/// Select landmarks by k-means over every frame, then fit in the Nyström
/// basis.
///
/// Asking for more landmarks than frames is an error; asking for more than
/// the number of distinct frames uses every distinct frame instead.
pub fn fit_ktica(trajectories: &[Trajectory], config: &KticaConfig) -> Result<KticaModel> {
    let packed = CompressedPairs::from_trajectories(trajectories, config.lag)?;
    let n_frames: u64 = packed.frame_counts.iter().sum();
    if config.landmarks as u64 > n_frames {
        return Err(Error::TooFewPoints {
            requested: config.landmarks,
            available: n_frames as usize,
        });
    }
    if config.landmarks < config.n_modes {
        return Err(Error::InvalidArgument(format!(
            "{} landmarks cannot support {} modes",
            config.landmarks, config.n_modes
        )));
    }
    let points: Vec<Vec<f64>> = packed
        .points
        .row_iter()
        .map(|r| r.iter().copied().collect())
        .collect();
    let weights: Vec<f64> = packed.frame_counts.iter().map(|&c| c as f64).collect();
    let m = config.landmarks.min(points.len());
    let landmarks = kmeans_weighted(&points, &weights, packed.points.ncols(), m, config.seed)?;
    let mut model = fit_with_landmarks(&packed, &landmarks.points, config)?;
    model.landmarks_requested = config.landmarks;
    Ok(model)
}

/// Fit using a fixed landmark set.
pub fn fit_ktica_with_landmarks(
    trajectories: &[Trajectory],
    landmarks: &DMatrix<f64>,
    config: &KticaConfig,
) -> Result<KticaModel> {
    let packed = CompressedPairs::from_trajectories(trajectories, config.lag)?;
    fit_with_landmarks(&packed, landmarks, config)
}

fn fit_with_landmarks(
    packed: &CompressedPairs,
    landmarks: &DMatrix<f64>,
    config: &KticaConfig,
) -> Result<KticaModel> {
    let whitening = nystrom_whitening(landmarks, &config.kernel)?;
    if whitening.nrows() < config.n_modes {
        return Err(Error::TooManyModes {
            requested: config.n_modes,
            available: whitening.nrows(),
        });
    }
    let features = gram_matrix(&packed.points, landmarks, &config.kernel)? * whitening.transpose();
    let corr = packed.correlations(&features, true)?;
    let sol = solve_gev(&corr, config.n_modes, config.regularization)?;
    Ok(KticaModel {
        lag: config.lag,
        kernel: config.kernel,
        landmarks: landmarks.clone(),
        landmarks_requested: landmarks.nrows(),
        whitening,
        feature_mean: corr.mean,
        mixing: sol.mixing,
        eigenvalues: sol.eigenvalues,
    })
}

/// `diag(w)^-1/2 U^T` over the retained eigenpairs of the landmark Gram
/// matrix.
pub fn nystrom_whitening(landmarks: &DMatrix<f64>, kernel: &KernelSpec) -> Result<DMatrix<f64>> {
    let kmm = gram_matrix(landmarks, landmarks, kernel)?;
    let (values, vectors) = symmetric_eigen_desc(kmm)?;
    let top = values.first().copied().unwrap_or(0.0);
    if top <= 0.0 {
        return Err(Error::RankDeficient);
    }
    let kept: Vec<usize> = (0..values.len())
        .filter(|&i| values[i] > NYSTROM_CUTOFF * top)
        .collect();
    if kept.is_empty() {
        return Err(Error::RankDeficient);
    }
    let m = landmarks.nrows();
    Ok(DMatrix::from_fn(kept.len(), m, |r, c| {
        vectors[(c, kept[r])] / values[kept[r]].sqrt()
    }))
}
