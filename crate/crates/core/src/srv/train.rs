//! Minibatch Adam training with early stopping on a held-out split.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{feature_adjoints, feature_loss, report_from, LossReport, LossTransform};
use super::mlp::{forward_cached, mlp_backward, mlp_forward, mlp_jacobian, MlpSpec, NetworkParams};
use crate::estimation::{
    implied_timescales, solve_gev, CompressedPairs, Timescale, DEFAULT_REGULARIZATION,
};
use crate::toy_models::Trajectory;
use crate::{Error, ModeTransform, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lag: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a new best validation loss before stopping.
    pub patience: usize,
    pub validation_fraction: f64,
    pub seed: u64,
    pub loss: LossTransform,
    pub regularization: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lag: 100,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            batch_size: 10_000,
            max_epochs: 300,
            patience: 20,
            validation_fraction: 0.1,
            seed: 0,
            loss: LossTransform::Vamp2,
            regularization: DEFAULT_REGULARIZATION,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, n_modes: usize) -> Result<()> {
        let bad = |key: &str, msg: String| Err(Error::InvalidArgument(format!("{key}: {msg}")));
        if self.lag == 0 {
            return bad("lag", "must be at least 1".into());
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction <= 0.5) {
            return bad(
                "validation_fraction",
                format!("must lie in (0, 0.5], got {}", self.validation_fraction),
            );
        }
        if self.batch_size < 2 * n_modes {
            return bad(
                "batch_size",
                format!("must be at least {} for {n_modes} modes", 2 * n_modes),
            );
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", "must be positive".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1", "decay rates must lie in [0, 1)".into());
        }
        if self.adam_epsilon.is_nan() || self.adam_epsilon <= 0.0 {
            return bad("adam_epsilon", "must be positive".into());
        }
        if self.max_epochs == 0 {
            return bad("max_epochs", "must be at least 1".into());
        }
        if self.patience == 0 {
            return bad("patience", "must be at least 1".into());
        }
        if !(self.regularization >= 0.0 && self.regularization.is_finite()) {
            return bad("regularization", "must be finite and non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean loss over the minibatches that were not skipped.
    pub train_loss: f64,
    pub validation_loss: f64,
    pub best_validation_loss: f64,
    pub skipped_batches: usize,
}

/// A trained network together with the linear map onto its modes.
#[derive(Debug, Clone, PartialEq)]
pub struct SrvModel {
    pub spec: MlpSpec,
    pub params: NetworkParams,
    pub output_mean: Vec<f64>,
    /// Coefficients over the centered outputs, one mode per column.
    pub mixing: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    pub lag: usize,
    pub config: TrainConfig,
    pub trace: Vec<EpochRecord>,
}

impl SrvModel {
    pub fn timescales(&self) -> Vec<Timescale> {
        implied_timescales(&self.eigenvalues, self.lag as f64)
    }

    /// Network outputs before centering and mixing.
    pub fn raw_outputs(&self, frames: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        mlp_forward(&self.params, &self.spec, frames)
    }
}

impl ModeTransform for SrvModel {
    fn input_dim(&self) -> usize {
        self.spec.input_dim()
    }

    fn n_modes(&self) -> usize {
        self.eigenvalues.len()
    }

    fn transform(&self, frames: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        srv_transform(self, frames)
    }
}

/// `(f(x) - mean) S` for every row of `frames`.
pub fn srv_transform(model: &SrvModel, frames: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut f = mlp_forward(&model.params, &model.spec, frames)?;
    for mut r in f.row_iter_mut() {
        for (v, m) in r.iter_mut().zip(&model.output_mean) {
            *v -= m;
        }
    }
    Ok(f * &model.mixing)
}

/// Jacobian of the modes at `x` (`modes x input`).
pub fn srv_gradient_wrt_input(model: &SrvModel, x: &[f64]) -> Result<DMatrix<f64>> {
    Ok(model.mixing.transpose() * mlp_jacobian(&model.params, &model.spec, x)?)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    fn update(&mut self, theta: &mut [f64], grad: &[f64], cfg: &TrainConfig) {
        self.step += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.step);
        let c2 = 1.0 - cfg.beta2.powi(self.step);
        for i in 0..theta.len() {
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * grad[i];
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            theta[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_epsilon);
        }
    }
}

/// Distinct frames plus index pairs into them.
struct PairTable {
    points: DMatrix<f64>,
    pairs: Vec<(usize, usize)>,
    /// Scratch map from point to its row in the current batch.
    slot: Vec<usize>,
}

/// Inputs, gather indices and point list for one batch.
struct Batch {
    inputs: DMatrix<f64>,
    heads: Vec<usize>,
    tails: Vec<usize>,
}

impl PairTable {
    fn batch(&mut self, rows: &[usize]) -> Batch {
        let mut used = Vec::new();
        let mut local = |p: usize, used: &mut Vec<usize>| {
            if self.slot[p] == usize::MAX {
                self.slot[p] = used.len();
                used.push(p);
            }
            self.slot[p]
        };
        let mut heads = Vec::with_capacity(rows.len());
        let mut tails = Vec::with_capacity(rows.len());
        for &r in rows {
            let (a, b) = self.pairs[r];
            heads.push(local(a, &mut used));
            tails.push(local(b, &mut used));
        }
        for &p in &used {
            self.slot[p] = usize::MAX;
        }
        Batch {
            inputs: self.points.select_rows(&used),
            heads,
            tails,
        }
    }
}

enum StepError {
    Skip,
    Abort(f64),
    Other(Error),
}

/// Loss and parameter gradient on one batch; each distinct frame is pushed
/// through the network once.
fn batch_step(
    params: &NetworkParams,
    spec: &MlpSpec,
    batch: &Batch,
    cfg: &TrainConfig,
) -> std::result::Result<(LossReport, Vec<f64>), StepError> {
    let n_modes = spec.output_dim();
    let cache = forward_cached(params, spec, &batch.inputs).map_err(StepError::Other)?;
    let out = cache.output();
    let x = out.select_rows(&batch.heads);
    let y = out.select_rows(&batch.tails);
    let (report, sol) = match feature_loss(&x, &y, n_modes, cfg.regularization, cfg.loss) {
        Ok(v) => v,
        Err(Error::IllConditioned) => return Err(StepError::Skip),
        Err(Error::NonFinite(_)) => return Err(StepError::Abort(f64::NAN)),
        Err(e) => return Err(StepError::Other(e)),
    };
    if !report.loss.is_finite() {
        return Err(StepError::Abort(report.loss));
    }
    let (x_bar, y_bar) = feature_adjoints(&x, &y, &sol, cfg.loss);
    let mut out_bar = DMatrix::zeros(out.nrows(), n_modes);
    for (i, (&h, &t)) in batch.heads.iter().zip(&batch.tails).enumerate() {
        for j in 0..n_modes {
            out_bar[(h, j)] += x_bar[(i, j)];
            out_bar[(t, j)] += y_bar[(i, j)];
        }
    }
    let grad = mlp_backward(params, spec, &cache, &out_bar).to_flat();
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(StepError::Abort(report.loss));
    }
    Ok((report, grad))
}

/// Loss of a fixed network on all pairs in `packed`.
fn full_loss(
    params: &NetworkParams,
    spec: &MlpSpec,
    packed: &CompressedPairs,
    cfg: &TrainConfig,
) -> Result<(LossReport, crate::estimation::GevSolution, nalgebra::DVector<f64>)> {
    let features = mlp_forward(params, spec, &packed.points)?;
    let corr = packed.correlations(&features, true)?;
    let sol = solve_gev(&corr, spec.output_dim(), cfg.regularization)?;
    Ok((report_from(&sol, cfg.loss), sol, corr.mean))
}

/// Train a network so the variational solve over its outputs maximizes the
/// configured score.
///
/// Pairs are shuffled once with the config seed and a validation share is
/// set aside. Each epoch reshuffles the training pairs into near-equal
/// batches. The parameters with the lowest validation loss are kept, and the
/// final mixing matrix, output mean and eigenvalues come from one solve over
/// every pair.
pub fn train_srv(trajectories: &[Trajectory], spec: &MlpSpec, config: &TrainConfig) -> Result<SrvModel> {
    spec.validate()?;
    let n_modes = spec.output_dim();
    config.validate(n_modes)?;
    let all = CompressedPairs::from_trajectories(trajectories, config.lag)?;
    if all.points.ncols() != spec.input_dim() {
        return Err(Error::ShapeMismatch {
            expected: format!("{}-dimensional frames", spec.input_dim()),
            found: format!("{}", all.points.ncols()),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut pairs = all.expanded_pairs();
    pairs.shuffle(&mut rng);
    let n_val = ((pairs.len() as f64) * config.validation_fraction).round() as usize;
    let n_train = pairs.len() - n_val;
    if n_val < 2 || n_train < 2 * n_modes {
        return Err(Error::InvalidArgument(format!(
            "{} pairs are too few to split for training",
            pairs.len()
        )));
    }
    let validation = CompressedPairs::from_index_pairs(all.points.clone(), &pairs[n_train..], config.lag)?;
    let mut table = PairTable {
        slot: vec![usize::MAX; all.n_points()],
        points: all.points.clone(),
        pairs: pairs[..n_train].to_vec(),
    };

    let mut params = NetworkParams::init(spec, config.seed);
    let mut theta = params.to_flat();
    let mut adam = Adam::new(theta.len());
    let mut best = (f64::INFINITY, params.clone());
    let mut since_best = 0;
    let mut trace = Vec::new();
    let n_batches = n_train.div_ceil(config.batch_size);
    let mut order: Vec<usize> = (0..n_train).collect();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut used = 0;
        let mut skipped = 0;
        for b in 0..n_batches {
            let rows = &order[b * n_train / n_batches..(b + 1) * n_train / n_batches];
            let batch = table.batch(rows);
            match batch_step(&params, spec, &batch, config) {
                Ok((report, grad)) => {
                    adam.update(&mut theta, &grad, config);
                    params = NetworkParams::from_flat(spec, &theta)?;
                    loss_sum += report.loss;
                    used += 1;
                }
                Err(StepError::Skip) => skipped += 1,
                Err(StepError::Abort(loss)) => {
                    return Err(Error::TrainingAborted { epoch, batch: b, loss })
                }
                Err(StepError::Other(e)) => return Err(e),
            }
        }
        let validation_loss = match full_loss(&params, spec, &validation, config) {
            Ok((r, _, _)) if r.loss.is_finite() => r.loss,
            Ok(_) | Err(Error::IllConditioned) | Err(Error::NonFinite(_)) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        if validation_loss < best.0 {
            best = (validation_loss, params.clone());
            since_best = 0;
        } else {
            since_best += 1;
        }
        trace.push(EpochRecord {
            epoch,
            train_loss: if used > 0 { loss_sum / used as f64 } else { f64::NAN },
            validation_loss,
            best_validation_loss: best.0,
            skipped_batches: skipped,
        });
        if since_best >= config.patience {
            break;
        }
    }

    let params = best.1;
    let (_, sol, mean) = full_loss(&params, spec, &all, config)?;
    Ok(SrvModel {
        spec: spec.clone(),
        params,
        output_mean: mean.iter().copied().collect(),
        mixing: sol.mixing,
        eigenvalues: sol.eigenvalues,
        lag: config.lag,
        config: config.clone(),
        trace,
    })
}
