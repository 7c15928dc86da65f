mod config;
mod failure;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use slowmodes::diagnostics::{ck_test, held_out_eigenvalues, held_out_vamp2, weighted_projection, Projection};
use slowmodes::estimation::{fit_tica_with, implied_timescale};
use slowmodes::io::{
    format_number, format_timescale, read_oracle, read_trajectory, write_ck_report, write_heldout, write_oracle,
    write_projection, write_spectrum, write_sweep, write_trajectory, write_transition_matrix, FittedModel,
};
use slowmodes::ktica::{fit_ktica, KernelSpec, KticaConfig};
use slowmodes::srv::train_srv;
use slowmodes::{ModeTransform, Trajectory};

use config::{Method, RunConfig};
use failure::Failure;

#[derive(Debug, Parser)]
#[command(name = "slowmodes", version, about = "Estimate and validate slow modes of trajectory data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Run configuration (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, overriding `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample a trajectory and write the reference spectrum and transition matrix.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Fit the configured method to trajectory files.
    Fit {
        #[command(flatten)]
        common: Common,
        /// Trajectory CSV; repeat for several trajectories.
        #[arg(long, required = true)]
        traj: Vec<PathBuf>,
    },
    /// Score a saved model on trajectory files.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Model file written by `fit`.
        #[arg(long)]
        model: PathBuf,
        /// Held-out trajectory CSV; repeat for several trajectories.
        #[arg(long, required = true)]
        traj: Vec<PathBuf>,
        /// Reference table written by `generate`; enables projection.csv.
        #[arg(long)]
        oracle: Option<PathBuf>,
        /// Lag multipliers for a Chapman-Kolmogorov check, e.g. `2,5`.
        #[arg(long, value_delimiter = ',')]
        ck: Vec<usize>,
    },
    /// Held-out loss of kernel TICA over a grid of bandwidths and landmark counts.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Training data; sampled from the system when omitted.
        #[arg(long)]
        traj: Vec<PathBuf>,
    },
    /// Configuration helpers.
    Config {
        #[command(subcommand)]
        action: ConfigAction,
    },
}

#[derive(Debug, Subcommand)]
enum ConfigAction {
    /// Print a complete configuration with every default value.
    DumpDefaults,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code as u8)
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Generate { common } => {
            let (cfg, out) = setup(&common)?;
            generate(&cfg, &out)
        }
        Command::Fit { common, traj } => {
            let (cfg, out) = setup(&common)?;
            fit(&cfg, &out, &load_trajectories(&traj)?)
        }
        Command::Evaluate {
            common,
            model,
            traj,
            oracle,
            ck,
        } => {
            let (cfg, out) = setup(&common)?;
            let fitted = FittedModel::load(&model).map_err(|e| Failure::from(e).context(&model.display().to_string()))?;
            evaluate(&cfg, &out, &fitted, &load_trajectories(&traj)?, oracle.as_deref(), &ck)
        }
        Command::Sweep { common, traj } => {
            let (cfg, out) = setup(&common)?;
            sweep(&cfg, &out, &traj)
        }
        Command::Config {
            action: ConfigAction::DumpDefaults,
        } => {
            print!("{}", RunConfig::default().to_toml());
            Ok(())
        }
    }
}

fn setup(common: &Common) -> Result<(RunConfig, PathBuf), Failure> {
    let cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let out = common.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    std::fs::create_dir_all(&out).map_err(|e| Failure::io(format!("{}: {e}", out.display())))?;
    Ok((cfg, out))
}

fn load_trajectories(paths: &[PathBuf]) -> Result<Vec<Trajectory>, Failure> {
    paths
        .iter()
        .map(|p| read_trajectory(p).map_err(|e| Failure::from(e).context(&p.display().to_string())))
        .collect()
}

/// Attach the output path to write failures.
fn written(path: &Path, r: slowmodes::Result<()>) -> Result<(), Failure> {
    r.map_err(|e| Failure::from(e).context(&path.display().to_string()))
}

fn generate(cfg: &RunConfig, out: &Path) -> Result<(), Failure> {
    let model = cfg.discrete_model()?;
    let traj = model.sample_trajectory(cfg.steps, cfg.seed)?;
    let p_lag = model.at_lag(cfg.lag)?;
    let oracle = p_lag.reference_spectrum(cfg.n_modes)?;
    let path = out.join("traj.csv");
    written(&path, write_trajectory(&path, &traj))?;
    let path = out.join("oracle.csv");
    written(&path, write_oracle(&path, &oracle))?;
    let path = out.join("transition.bin");
    written(&path, write_transition_matrix(&path, p_lag.probs()))?;
    print_spectrum(oracle.nontrivial_eigenvalues(), cfg.lag);
    Ok(())
}

fn print_spectrum(eigenvalues: &[f64], lag: usize) {
    for (i, &l) in eigenvalues.iter().enumerate() {
        println!(
            "mode {}: lambda={}, t={}",
            i + 1,
            format_number(l),
            format_timescale(implied_timescale(l, lag as f64))
        );
    }
}

fn fit_method(cfg: &RunConfig, method: Method, trajs: &[Trajectory]) -> Result<FittedModel, Failure> {
    Ok(match method {
        Method::Tica => FittedModel::Tica(fit_tica_with(trajs, cfg.lag, cfg.n_modes, cfg.regularization)?),
        Method::Ktica => FittedModel::Ktica(fit_ktica(trajs, &ktica_config(cfg, cfg.ktica.bandwidth, cfg.ktica.landmarks)?)?),
        Method::Srv => {
            let spec = cfg.mlp_spec()?;
            let mut model = train_srv(trajs, &spec, &cfg.train_config())?;
            model.eigenvalues.truncate(cfg.n_modes);
            model.mixing = model.mixing.columns(0, model.eigenvalues.len()).into_owned();
            FittedModel::Srv(model)
        }
    })
}

fn ktica_config(cfg: &RunConfig, bandwidth: f64, landmarks: usize) -> Result<KticaConfig, Failure> {
    Ok(KticaConfig {
        lag: cfg.lag,
        kernel: KernelSpec::gaussian(bandwidth)?,
        landmarks,
        n_modes: cfg.n_modes,
        regularization: cfg.regularization,
        seed: cfg.ktica.seed,
    })
}

fn fit(cfg: &RunConfig, out: &Path, trajs: &[Trajectory]) -> Result<(), Failure> {
    let model = fit_method(cfg, cfg.method, trajs)?;
    let path = out.join(format!("model.{}.txt", model.method()));
    written(&path, model.save(&path))?;
    let path = out.join("spectrum.csv");
    written(&path, write_spectrum(&path, model.eigenvalues(), model.lag()))?;
    print_spectrum(model.eigenvalues(), model.lag());
    Ok(())
}

fn check_dimension(model: &dyn ModeTransform, dim: usize, what: &str) -> Result<(), Failure> {
    if model.input_dim() != dim {
        return Err(Failure::config(format!(
            "dimension mismatch: model takes {} coordinates, {what} has {dim}",
            model.input_dim()
        )));
    }
    Ok(())
}

fn evaluate(
    cfg: &RunConfig,
    out: &Path,
    model: &FittedModel,
    trajs: &[Trajectory],
    oracle_path: Option<&Path>,
    ks: &[usize],
) -> Result<(), Failure> {
    let transform = model.as_transform();
    for t in trajs {
        check_dimension(transform, t.dim(), "a trajectory")?;
    }
    let n_modes = model.eigenvalues().len();
    let lag = model.lag();

    if let Some(path) = oracle_path {
        let table = read_oracle(path).map_err(|e| Failure::from(e).context(&path.display().to_string()))?;
        let grid = cfg.discrete_model()?.grid;
        check_dimension(transform, grid.dim(), "the configured grid")?;
        if grid.len() != table.n_bins() {
            return Err(Failure::config(format!(
                "bins: the configured grid has {} bins but the reference table has {}",
                grid.len(),
                table.n_bins()
            )));
        }
        let modes = transform.transform(&grid.centers())?;
        let pi = table.stationary.as_slice();
        let projections = (0..n_modes.min(table.n_modes()))
            .map(|i| {
                let m: Vec<f64> = modes.column(i).iter().copied().collect();
                weighted_projection(&m, &table.mode(i + 1), pi)
            })
            .collect::<slowmodes::Result<Vec<Projection>>>()?;
        let path = out.join("projection.csv");
        written(&path, write_projection(&path, &projections))?;
        for (i, p) in projections.iter().enumerate() {
            println!("mode {}: projection={}", i + 1, format_number(p.absolute));
        }
    }

    let heldout = held_out_eigenvalues(transform, trajs, lag, n_modes, cfg.regularization)?;
    let path = out.join("heldout.csv");
    written(&path, write_heldout(&path, lag, &heldout))?;
    println!("heldout loss={}", format_number(-heldout.iter().map(|l| l * l).sum::<f64>()));

    if !ks.is_empty() {
        let mut refit_failure = None;
        let report = ck_test(model.eigenvalues(), lag, ks, |refit_lag| {
            refit(cfg, model, trajs, refit_lag).map_err(|f| {
                let e = slowmodes::Error::InvalidArgument(f.message.clone());
                refit_failure = Some(f);
                e
            })
        });
        let report = match (report, refit_failure) {
            (_, Some(f)) => return Err(f.context("refit")),
            (r, None) => r?,
        };
        let path = out.join("ck_report.csv");
        written(&path, write_ck_report(&path, &report))?;
    }
    Ok(())
}

/// Re-estimate `model`'s method with its own settings at another lag.
fn refit(cfg: &RunConfig, model: &FittedModel, trajs: &[Trajectory], lag: usize) -> Result<Vec<f64>, Failure> {
    let n_modes = model.eigenvalues().len();
    let values = match model {
        FittedModel::Tica(_) => fit_tica_with(trajs, lag, n_modes, cfg.regularization)?.eigenvalues,
        FittedModel::Ktica(m) => {
            let kc = KticaConfig {
                lag,
                kernel: m.kernel,
                landmarks: m.landmarks_requested,
                n_modes,
                regularization: cfg.regularization,
                seed: cfg.ktica.seed,
            };
            fit_ktica(trajs, &kc)?.eigenvalues
        }
        FittedModel::Srv(m) => {
            let mut train = m.config.clone();
            train.lag = lag;
            train_srv(trajs, &m.spec, &train)?.eigenvalues
        }
    };
    Ok(values.into_iter().take(n_modes).collect())
}

fn sweep(cfg: &RunConfig, out: &Path, traj_paths: &[PathBuf]) -> Result<(), Failure> {
    let system = cfg.discrete_model()?;
    let train = if traj_paths.is_empty() {
        vec![system.sample_trajectory(cfg.steps, cfg.seed)?]
    } else {
        load_trajectories(traj_paths)?
    };
    let test = vec![system.sample_trajectory(cfg.sweep.test_steps, cfg.sweep.test_seed)?];
    let mut cells = Vec::new();
    for &sigma in &cfg.sweep.bandwidths {
        for &m in &cfg.sweep.landmarks {
            let model = fit_ktica(&train, &ktica_config(cfg, sigma, m)?)?;
            let loss = held_out_vamp2(&model, &test, cfg.lag, cfg.n_modes, cfg.regularization)?;
            println!("sigma={}, landmarks={m}, loss={}", format_number(sigma), format_number(loss));
            cells.push((sigma, m, loss));
        }
    }
    let path = out.join("sweep.csv");
    written(&path, write_sweep(&path, &cells))
}
