//! File formats: CSV tables, the binary transition matrix and TOML model
//! documents.
//!
//! Every CSV has a header row and writes numbers with 17 significant digits.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::diagnostics::{CkReport, Projection};
use crate::estimation::{LinearModel, Timescale};
use crate::ktica::{KernelSpec, KticaModel};
use crate::srv::{EpochRecord, MlpSpec, NetworkParams, SrvModel, TrainConfig};
use crate::toy_models::{SpectrumOracle, Trajectory, TransitionMatrix};
use crate::{Error, ModeTransform, Result};

/// Magic bytes opening a transition-matrix file.
pub const TRANSITION_MAGIC: &[u8; 4] = b"SLOW";

pub fn format_number(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn format_timescale(t: Timescale) -> String {
    match t {
        Timescale::Finite(v) => format_number(v),
        Timescale::Infinite => "inf".into(),
        Timescale::Undefined => "nan".into(),
    }
}

fn csv_error(e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            _ => unreachable!("checked io kind"),
        }
    } else {
        Error::Parse(e.to_string())
    }
}

fn write_table(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(header).map_err(csv_error)?;
    for r in rows {
        w.write_record(r).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Header plus numeric rows of a CSV file.
fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::Reader::from_reader(BufReader::new(File::open(path)?));
    let header: Vec<String> = r.headers().map_err(csv_error)?.iter().map(str::to_owned).collect();
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_error)?;
        let row = rec
            .iter()
            .map(|f| {
                f.trim().parse::<f64>().map_err(|_| {
                    Error::Parse(format!("{}: row {}: not a number: {f:?}", path.display(), line + 1))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}

fn coordinate_names(dim: usize) -> Vec<String> {
    (0..dim).map(|k| format!("x{k}")).collect()
}

/// One frame per row, columns `t, x0, x1, ...` with `t` the frame index.
pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut header = vec!["t".to_string()];
    header.extend(coordinate_names(traj.dim()));
    let rows: Vec<Vec<String>> = traj
        .frames()
        .enumerate()
        .map(|(t, f)| {
            let mut r = vec![t.to_string()];
            r.extend(f.iter().map(|&v| format_number(v)));
            r
        })
        .collect();
    write_table(path, &header, &rows)
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    let (header, rows) = read_table(path)?;
    if header.first().map(String::as_str) != Some("t") || header.len() < 2 {
        return Err(Error::Parse(format!(
            "{}: expected a header `t,x0,...`",
            path.display()
        )));
    }
    let dim = header.len() - 1;
    if rows.iter().any(|r| r.len() != header.len()) {
        return Err(Error::Parse(format!("{}: ragged rows", path.display())));
    }
    let data: Vec<f64> = rows.into_iter().flat_map(|r| r.into_iter().skip(1)).collect();
    Trajectory::new(dim, data)
}

/// Per bin: index, stationary weight and every stored eigenfunction (`psi0`
/// is the constant mode). Bins follow the grid's own ordering.
pub fn write_oracle(path: &Path, oracle: &SpectrumOracle) -> Result<()> {
    let mut header = vec!["bin".to_string(), "pi".to_string()];
    header.extend((0..=oracle.n_modes()).map(|i| format!("psi{i}")));
    let rows: Vec<Vec<String>> = (0..oracle.stationary.len())
        .map(|b| {
            let mut r = vec![b.to_string(), format_number(oracle.stationary[b])];
            r.extend(oracle.eigenfunctions.row(b).iter().map(|&v| format_number(v)));
            r
        })
        .collect();
    write_table(path, &header, &rows)
}

/// Reference eigenfunctions as read back from an oracle table.
#[derive(Debug, Clone)]
pub struct OracleTable {
    pub stationary: DVector<f64>,
    /// Columns `psi0, psi1, ...`.
    pub eigenfunctions: DMatrix<f64>,
}

impl OracleTable {
    pub fn n_bins(&self) -> usize {
        self.stationary.len()
    }

    pub fn n_modes(&self) -> usize {
        self.eigenfunctions.ncols().saturating_sub(1)
    }

    pub fn mode(&self, i: usize) -> Vec<f64> {
        self.eigenfunctions.column(i).iter().copied().collect()
    }
}

pub fn read_oracle(path: &Path) -> Result<OracleTable> {
    let (header, rows) = read_table(path)?;
    if header.len() < 3 || header[0] != "bin" || header[1] != "pi" {
        return Err(Error::Parse(format!(
            "{}: expected a header `bin,pi,psi0,...`",
            path.display()
        )));
    }
    let k = header.len() - 2;
    if rows.is_empty() || rows.iter().any(|r| r.len() != header.len()) {
        return Err(Error::Parse(format!("{}: malformed oracle table", path.display())));
    }
    let n = rows.len();
    Ok(OracleTable {
        stationary: DVector::from_fn(n, |b, _| rows[b][1]),
        eigenfunctions: DMatrix::from_fn(n, k, |b, j| rows[b][2 + j]),
    })
}

/// Columns `mode, eigenvalue, timescale`; modes numbered from 1.
pub fn write_spectrum(path: &Path, eigenvalues: &[f64], lag: usize) -> Result<()> {
    let rows: Vec<Vec<String>> = eigenvalues
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            vec![
                (i + 1).to_string(),
                format_number(l),
                format_timescale(crate::estimation::implied_timescale(l, lag as f64)),
            ]
        })
        .collect();
    write_table(path, &["mode".into(), "eigenvalue".into(), "timescale".into()], &rows)
}

pub fn write_projection(path: &Path, projections: &[Projection]) -> Result<()> {
    let rows: Vec<Vec<String>> = projections
        .iter()
        .enumerate()
        .map(|(i, p)| vec![(i + 1).to_string(), format_number(p.signed), format_number(p.absolute)])
        .collect();
    write_table(path, &["mode".into(), "signed".into(), "absolute".into()], &rows)
}

pub fn write_ck_report(path: &Path, report: &CkReport) -> Result<()> {
    let rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| {
            vec![
                r.mode.to_string(),
                r.k.to_string(),
                format_timescale(r.predicted),
                format_timescale(r.estimated),
                r.rel_dev.map_or("nan".into(), format_number),
            ]
        })
        .collect();
    let header = ["mode", "k", "predicted_t", "estimated_t", "rel_dev"].map(String::from);
    write_table(path, &header, &rows)
}

pub fn write_heldout(path: &Path, lag: usize, eigenvalues: &[f64]) -> Result<()> {
    let loss: f64 = -eigenvalues.iter().map(|l| l * l).sum::<f64>();
    let rows = vec![vec![lag.to_string(), eigenvalues.len().to_string(), format_number(loss)]];
    write_table(path, &["lag".into(), "n_modes".into(), "loss".into()], &rows)
}

/// One row per `(sigma, landmarks)` cell in the given order.
pub fn write_sweep(path: &Path, cells: &[(f64, usize, f64)]) -> Result<()> {
    let rows: Vec<Vec<String>> = cells
        .iter()
        .map(|&(s, m, loss)| vec![format_number(s), m.to_string(), format_number(loss)])
        .collect();
    write_table(path, &["sigma".into(), "landmarks".into(), "loss".into()], &rows)
}

/// Numeric body of any table written here, for reading reports back.
pub fn read_numeric_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    read_table(path)
}

/// `SLOW`, the dimension as u32, then the row-major matrix as f64, all
/// little-endian.
pub fn write_transition_matrix(path: &Path, probs: &DMatrix<f64>) -> Result<()> {
    let n = probs.nrows();
    let dim = u32::try_from(n).map_err(|_| Error::InvalidArgument("matrix too large".into()))?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(TRANSITION_MAGIC)?;
    w.write_all(&dim.to_le_bytes())?;
    for i in 0..n {
        for j in 0..n {
            w.write_all(&probs[(i, j)].to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_transition_matrix(path: &Path, lag: usize) -> Result<TransitionMatrix> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    if bytes.len() < 8 || &bytes[..4] != TRANSITION_MAGIC {
        return Err(Error::Parse(format!("{}: not a transition matrix file", path.display())));
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    if bytes.len() != 8 + 8 * n * n {
        return Err(Error::Parse(format!(
            "{}: expected {} bytes for dimension {n}, found {}",
            path.display(),
            8 + 8 * n * n,
            bytes.len()
        )));
    }
    let values: Vec<f64> = bytes[8..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    TransitionMatrix::new(DMatrix::from_row_slice(n, n, &values), lag)
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn rows_matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Parse(format!("{what}: ragged rows")));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KticaDocument {
    lag: usize,
    bandwidth: f64,
    landmarks_requested: usize,
    eigenvalues: Vec<f64>,
    feature_mean: Vec<f64>,
    landmarks: Vec<Vec<f64>>,
    whitening: Vec<Vec<f64>>,
    mixing: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerDocument {
    /// Row-major `out x in`.
    weights: Vec<Vec<f64>>,
    biases: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SrvDocument {
    lag: usize,
    eigenvalues: Vec<f64>,
    output_mean: Vec<f64>,
    mixing: Vec<Vec<f64>>,
    spec: MlpSpec,
    config: TrainConfig,
    layers: Vec<LayerDocument>,
    trace: Vec<EpochRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
enum ModelDocument {
    Tica(LinearModel),
    Ktica(KticaDocument),
    Srv(SrvDocument),
}

/// Any fitted model that can be saved and loaded.
#[derive(Debug, Clone)]
pub enum FittedModel {
    Tica(LinearModel),
    Ktica(KticaModel),
    Srv(SrvModel),
}

impl FittedModel {
    pub fn method(&self) -> &'static str {
        match self {
            FittedModel::Tica(_) => "tica",
            FittedModel::Ktica(_) => "ktica",
            FittedModel::Srv(_) => "srv",
        }
    }

    pub fn eigenvalues(&self) -> &[f64] {
        match self {
            FittedModel::Tica(m) => &m.eigenvalues,
            FittedModel::Ktica(m) => &m.eigenvalues,
            FittedModel::Srv(m) => &m.eigenvalues,
        }
    }

    pub fn lag(&self) -> usize {
        match self {
            FittedModel::Tica(m) => m.lag,
            FittedModel::Ktica(m) => m.lag,
            FittedModel::Srv(m) => m.lag,
        }
    }

    pub fn as_transform(&self) -> &dyn ModeTransform {
        match self {
            FittedModel::Tica(m) => m,
            FittedModel::Ktica(m) => m,
            FittedModel::Srv(m) => m,
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        let doc = match self {
            FittedModel::Tica(m) => ModelDocument::Tica(m.clone()),
            FittedModel::Ktica(m) => ModelDocument::Ktica(KticaDocument {
                lag: m.lag,
                bandwidth: m.kernel.bandwidth(),
                landmarks_requested: m.landmarks_requested,
                eigenvalues: m.eigenvalues.clone(),
                feature_mean: m.feature_mean.iter().copied().collect(),
                landmarks: matrix_rows(&m.landmarks),
                whitening: matrix_rows(&m.whitening),
                mixing: matrix_rows(&m.mixing),
            }),
            FittedModel::Srv(m) => ModelDocument::Srv(SrvDocument {
                lag: m.lag,
                eigenvalues: m.eigenvalues.clone(),
                output_mean: m.output_mean.clone(),
                mixing: matrix_rows(&m.mixing),
                spec: m.spec.clone(),
                config: m.config.clone(),
                layers: m
                    .params
                    .weights
                    .iter()
                    .zip(&m.params.biases)
                    .map(|(w, b)| LayerDocument {
                        weights: matrix_rows(w),
                        biases: b.iter().copied().collect(),
                    })
                    .collect(),
                trace: m.trace.clone(),
            }),
        };
        toml::to_string(&doc).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let doc: ModelDocument = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        Ok(match doc {
            ModelDocument::Tica(m) => {
                if m.coefficients.iter().any(|c| c.len() != m.mean.len()) {
                    return Err(Error::Parse("coefficient rows do not match the mean".into()));
                }
                FittedModel::Tica(m)
            }
            ModelDocument::Ktica(d) => {
                let landmarks = rows_matrix(&d.landmarks, "landmarks")?;
                let whitening = rows_matrix(&d.whitening, "whitening")?;
                let mixing = rows_matrix(&d.mixing, "mixing")?;
                if whitening.ncols() != landmarks.nrows()
                    || mixing.nrows() != whitening.nrows()
                    || d.feature_mean.len() != whitening.nrows()
                    || mixing.ncols() != d.eigenvalues.len()
                {
                    return Err(Error::Parse("inconsistent kernel model shapes".into()));
                }
                FittedModel::Ktica(KticaModel {
                    lag: d.lag,
                    kernel: KernelSpec::gaussian(d.bandwidth)?,
                    landmarks,
                    landmarks_requested: d.landmarks_requested,
                    whitening,
                    feature_mean: DVector::from_vec(d.feature_mean),
                    mixing,
                    eigenvalues: d.eigenvalues,
                })
            }
            ModelDocument::Srv(d) => {
                d.spec.validate()?;
                let params = NetworkParams {
                    weights: d
                        .layers
                        .iter()
                        .map(|l| rows_matrix(&l.weights, "weights"))
                        .collect::<Result<_>>()?,
                    biases: d.layers.iter().map(|l| DVector::from_vec(l.biases.clone())).collect(),
                };
                params.check(&d.spec).map_err(|e| Error::Parse(e.to_string()))?;
                let mixing = rows_matrix(&d.mixing, "mixing")?;
                let n = d.spec.output_dim();
                if mixing.nrows() != n || d.output_mean.len() != n || mixing.ncols() != d.eigenvalues.len() {
                    return Err(Error::Parse("inconsistent network model shapes".into()));
                }
                FittedModel::Srv(SrvModel {
                    spec: d.spec,
                    params,
                    output_mean: d.output_mean,
                    mixing,
                    eigenvalues: d.eigenvalues,
                    lag: d.lag,
                    config: d.config,
                    trace: d.trace,
                })
            }
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}
