//! Run configuration read from a TOML file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use slowmodes::estimation::DEFAULT_REGULARIZATION;
use slowmodes::srv::{Activation, LossTransform, MlpSpec, TrainConfig};
use slowmodes::toy_models::{potential_1d, potential_ring};
use slowmodes::{DiscreteModel, PotentialGrid};

use crate::failure::Failure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SystemKind {
    Fourwell,
    Ring,
    /// Trajectories come only from files; no reference grid.
    File,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Tica,
    Ktica,
    Srv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub kind: SystemKind,
    /// Bins per axis.
    pub bins: usize,
    /// `[lo, hi]` per axis.
    pub domain: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KticaSection {
    pub bandwidth: f64,
    pub landmarks: usize,
    /// Seed of the k-means landmark selection.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub validation_fraction: f64,
    /// Seed of initialization, splitting and shuffling.
    pub seed: u64,
    pub loss: LossTransform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SrvSection {
    pub layers: Vec<usize>,
    pub activation: Activation,
    pub training: TrainingSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub bandwidths: Vec<f64>,
    pub landmarks: Vec<usize>,
    /// Length and seed of the held-out trajectory.
    pub test_steps: usize,
    pub test_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub lag: usize,
    pub steps: usize,
    /// Seed of trajectory sampling.
    pub seed: u64,
    pub n_modes: usize,
    pub method: Method,
    pub regularization: f64,
    pub output_dir: PathBuf,
    pub system: SystemSection,
    pub ktica: KticaSection,
    pub srv: SrvSection,
    pub sweep: SweepSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            lag: 100,
            steps: 500_000,
            seed: 0,
            n_modes: 3,
            method: Method::Srv,
            regularization: DEFAULT_REGULARIZATION,
            output_dir: PathBuf::from("."),
            system: SystemSection {
                kind: SystemKind::Fourwell,
                bins: 100,
                domain: vec![[-1.0, 1.0]],
            },
            ktica: KticaSection {
                bandwidth: 0.05,
                landmarks: 200,
                seed: 0,
            },
            srv: SrvSection {
                layers: vec![1, 100, 100, 3],
                activation: Activation::Tanh,
                training: TrainingSection {
                    learning_rate: t.learning_rate,
                    beta1: t.beta1,
                    beta2: t.beta2,
                    adam_epsilon: t.adam_epsilon,
                    batch_size: t.batch_size,
                    max_epochs: t.max_epochs,
                    patience: t.patience,
                    validation_fraction: t.validation_fraction,
                    seed: t.seed,
                    loss: t.loss,
                },
            },
            sweep: SweepSection {
                bandwidths: vec![0.02, 0.05, 0.2, 1.0],
                landmarks: vec![100, 400, 1000],
                test_steps: 500_000,
                test_seed: 1,
            },
        }
    }
}

fn invalid(key: &str, msg: impl std::fmt::Display) -> Failure {
    Failure::config(format!("{key}: {msg}"))
}

impl RunConfig {
    /// Parse and validate. Every key must be present; `config dump-defaults`
    /// prints a complete document to start from.
    pub fn from_toml(text: &str) -> Result<Self, Failure> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Failure::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|f| f.context(&path.display().to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<(), Failure> {
        if self.lag == 0 {
            return Err(invalid("lag", "must be at least 1"));
        }
        if self.n_modes == 0 {
            return Err(invalid("n_modes", "must be at least 1"));
        }
        if !(self.regularization >= 0.0 && self.regularization.is_finite()) {
            return Err(invalid("regularization", "must be finite and non-negative"));
        }
        if self.system.kind != SystemKind::File {
            let axes = if self.system.kind == SystemKind::Ring { 2 } else { 1 };
            if self.system.bins < 2 {
                return Err(invalid("bins", format!("need at least 2 bins per axis, got {}", self.system.bins)));
            }
            if self.system.domain.len() != axes {
                return Err(invalid(
                    "domain",
                    format!("need {axes} [lo, hi] pair(s), got {}", self.system.domain.len()),
                ));
            }
            if self.system.domain.iter().any(|[lo, hi]| !(lo.is_finite() && hi.is_finite() && lo < hi)) {
                return Err(invalid("domain", "each axis needs finite lo < hi"));
            }
        }
        if !(self.ktica.bandwidth > 0.0 && self.ktica.bandwidth.is_finite()) {
            return Err(invalid("ktica.bandwidth", "must be positive"));
        }
        if self.ktica.landmarks < self.n_modes {
            return Err(invalid("ktica.landmarks", format!("must be at least n_modes = {}", self.n_modes)));
        }
        let spec = self.mlp_spec()?;
        if spec.output_dim() < self.n_modes {
            return Err(invalid(
                "srv.layers",
                format!("output width {} is below n_modes = {}", spec.output_dim(), self.n_modes),
            ));
        }
        self.train_config()
            .validate(self.n_modes)
            .map_err(|e| Failure::config(format!("srv.training.{}", strip_prefix(&e.to_string()))))?;
        if self.sweep.bandwidths.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(invalid("sweep.bandwidths", "every bandwidth must be positive"));
        }
        if self.sweep.landmarks.iter().any(|&m| m < self.n_modes) {
            return Err(invalid("sweep.landmarks", format!("every entry must be at least n_modes = {}", self.n_modes)));
        }
        Ok(())
    }

    pub fn mlp_spec(&self) -> Result<MlpSpec, Failure> {
        MlpSpec::with_activation(self.srv.layers.clone(), self.srv.activation)
            .map_err(|e| invalid("srv.layers", strip_prefix(&e.to_string())))
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.srv.training;
        TrainConfig {
            lag: self.lag,
            learning_rate: t.learning_rate,
            beta1: t.beta1,
            beta2: t.beta2,
            adam_epsilon: t.adam_epsilon,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            patience: t.patience,
            validation_fraction: t.validation_fraction,
            seed: t.seed,
            loss: t.loss,
            regularization: self.regularization,
        }
    }

    /// The discretized system, or a config error for `kind = "file"`.
    pub fn discrete_model(&self) -> Result<DiscreteModel, Failure> {
        let bounds: Vec<(f64, f64)> = self.system.domain.iter().map(|&[lo, hi]| (lo, hi)).collect();
        let n = self.system.bins;
        let grid = match self.system.kind {
            SystemKind::Fourwell => PotentialGrid::tabulate(&[n], &bounds, |x| potential_1d(x[0])),
            SystemKind::Ring => PotentialGrid::tabulate(&[n, n], &bounds, |x| potential_ring(x[0], x[1])),
            SystemKind::File => {
                return Err(invalid("system.kind", "this command needs a fourwell or ring system"));
            }
        }
        .map_err(|e| invalid("bins", e))?;
        DiscreteModel::new(grid).map_err(Failure::from)
    }
}

/// Drop the library's `invalid argument: ` prefix.
fn strip_prefix(msg: &str) -> &str {
    msg.strip_prefix("invalid argument: ").unwrap_or(msg)
}
