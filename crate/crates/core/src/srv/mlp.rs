//! Fully connected networks evaluated on row-major batches.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Hidden-layer nonlinearity. The output layer is always affine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Linear,
}

impl Activation {
    fn apply(self, z: &mut DMatrix<f64>) {
        if self == Activation::Tanh {
            z.apply(|v| *v = v.tanh());
        }
    }

    /// Derivative expressed through the activation output.
    fn slope(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Linear => 1.0,
        }
    }
}

/// Layer widths from input to output, plus the hidden activation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layers: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

impl MlpSpec {
    /// A tanh network, e.g. `[1, 100, 100, 3]`.
    pub fn new(layers: Vec<usize>) -> Result<Self> {
        Self::with_activation(layers, Activation::Tanh)
    }

    pub fn with_activation(layers: Vec<usize>, activation: Activation) -> Result<Self> {
        let spec = Self { layers, activation };
        spec.validate()?;
        Ok(spec)
    }

    /// One affine layer `f = W x + b` with no hidden units.
    pub fn single_layer(input: usize, output: usize) -> Self {
        Self {
            layers: vec![input, output],
            activation: Activation::Linear,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.len() < 2 {
            return Err(Error::InvalidArgument(
                "a network needs at least input and output widths".into(),
            ));
        }
        if self.layers.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "layer widths must be positive, got {:?}",
                self.layers
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layers.last().expect("validated spec")
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn n_params(&self) -> usize {
        self.layers.windows(2).map(|w| w[1] * (w[0] + 1)).sum()
    }
}

/// Weights (`out x in`) and biases of every affine layer.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

impl NetworkParams {
    pub fn zeros(spec: &MlpSpec) -> Self {
        let weights = spec
            .layers
            .windows(2)
            .map(|w| DMatrix::zeros(w[1], w[0]))
            .collect();
        let biases = spec.layers[1..].iter().map(|&n| DVector::zeros(n)).collect();
        Self { weights, biases }
    }

    /// Uniform fan-in initialization `U(-sqrt(3/fan_in), sqrt(3/fan_in))`
    /// with zero biases.
    pub fn init(spec: &MlpSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Self::zeros(spec);
        for w in &mut params.weights {
            let bound = (3.0 / w.ncols() as f64).sqrt();
            // row-major fill keeps the draw order independent of storage
            for i in 0..w.nrows() {
                for j in 0..w.ncols() {
                    w[(i, j)] = rng.random_range(-bound..bound);
                }
            }
        }
        params
    }

    /// Flat vector: per layer, weights row-major then biases.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            for i in 0..w.nrows() {
                out.extend(w.row(i).iter());
            }
            out.extend(b.iter());
        }
        out
    }

    pub fn from_flat(spec: &MlpSpec, flat: &[f64]) -> Result<Self> {
        if flat.len() != spec.n_params() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} parameters", spec.n_params()),
                found: format!("{}", flat.len()),
            });
        }
        let mut params = Self::zeros(spec);
        params.assign_flat(flat);
        Ok(params)
    }

    fn assign_flat(&mut self, flat: &[f64]) {
        let mut k = 0;
        for (w, b) in self.weights.iter_mut().zip(&mut self.biases) {
            for i in 0..w.nrows() {
                for j in 0..w.ncols() {
                    w[(i, j)] = flat[k];
                    k += 1;
                }
            }
            for v in b.iter_mut() {
                *v = flat[k];
                k += 1;
            }
        }
    }

    pub fn check(&self, spec: &MlpSpec) -> Result<()> {
        let ok = self.weights.len() == spec.n_layers()
            && self.biases.len() == spec.n_layers()
            && spec.layers.windows(2).zip(&self.weights).zip(&self.biases).all(|((w, m), b)| {
                m.shape() == (w[1], w[0]) && b.len() == w[1]
            });
        if !ok {
            return Err(Error::ShapeMismatch {
                expected: format!("parameters for layers {:?}", spec.layers),
                found: "mismatched weight shapes".into(),
            });
        }
        if self.to_flat().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network parameters".into()));
        }
        Ok(())
    }
}

/// Layer outputs kept for the backward pass; `activations[0]` is the input.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub activations: Vec<DMatrix<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &DMatrix<f64> {
        self.activations.last().expect("non-empty cache")
    }
}

fn check_input(spec: &MlpSpec, x: &DMatrix<f64>) -> Result<()> {
    if x.ncols() != spec.input_dim() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} input columns", spec.input_dim()),
            found: format!("{}", x.ncols()),
        });
    }
    Ok(())
}

/// Network outputs for a batch (one sample per row).
pub fn mlp_forward(params: &NetworkParams, spec: &MlpSpec, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(forward_cached(params, spec, x)?.activations.pop().expect("non-empty cache"))
}

pub fn forward_cached(params: &NetworkParams, spec: &MlpSpec, x: &DMatrix<f64>) -> Result<ForwardCache> {
    check_input(spec, x)?;
    let last = spec.n_layers() - 1;
    let mut activations = Vec::with_capacity(spec.layers.len());
    activations.push(x.clone());
    for (l, (w, b)) in params.weights.iter().zip(&params.biases).enumerate() {
        let mut z = &activations[l] * w.transpose();
        for mut row in z.row_iter_mut() {
            row += b.transpose();
        }
        if l < last {
            spec.activation.apply(&mut z);
        }
        activations.push(z);
    }
    Ok(ForwardCache { activations })
}

/// Parameter gradient given the output adjoint `d_out` (same shape as the
/// output); optionally also returns the input adjoint.
pub fn mlp_backward(
    params: &NetworkParams,
    spec: &MlpSpec,
    cache: &ForwardCache,
    d_out: &DMatrix<f64>,
) -> NetworkParams {
    let mut grad = NetworkParams::zeros(spec);
    let mut delta = d_out.clone();
    for l in (0..spec.n_layers()).rev() {
        let input = &cache.activations[l];
        grad.weights[l] = delta.tr_mul(input);
        grad.biases[l] = delta.row_sum().transpose();
        if l == 0 {
            break;
        }
        let mut upstream = &delta * &params.weights[l];
        upstream.zip_apply(input, |g, a| *g *= spec.activation.slope(a));
        delta = upstream;
    }
    grad
}

/// Jacobian of the outputs with respect to a single input (`out x in`).
pub fn mlp_jacobian(params: &NetworkParams, spec: &MlpSpec, x: &[f64]) -> Result<DMatrix<f64>> {
    let frame = DMatrix::from_row_slice(1, x.len(), x);
    let cache = forward_cached(params, spec, &frame)?;
    let mut jac = params.weights[0].clone();
    for l in 1..spec.n_layers() {
        let a = &cache.activations[l];
        for (i, mut row) in jac.row_iter_mut().enumerate() {
            row *= spec.activation.slope(a[(0, i)]);
        }
        jac = &params.weights[l] * jac;
    }
    Ok(jac)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_forward(params: &NetworkParams, spec: &MlpSpec, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        for l in 0..spec.n_layers() {
            let w = &params.weights[l];
            let mut z = vec![0.0; w.nrows()];
            for (i, zi) in z.iter_mut().enumerate() {
                *zi = params.biases[l][i] + (0..w.ncols()).map(|j| w[(i, j)] * h[j]).sum::<f64>();
                if l + 1 < spec.n_layers() && spec.activation == Activation::Tanh {
                    *zi = zi.tanh();
                }
            }
            h = z;
        }
        h
    }

    #[test]
    fn zero_network_outputs_zero() {
        let spec = MlpSpec::new(vec![2, 5, 3]).unwrap();
        let x = DMatrix::from_row_slice(2, 2, &[0.3, -1.0, 7.0, 2.0]);
        let out = mlp_forward(&NetworkParams::zeros(&spec), &spec, &x).unwrap();
        assert_eq!(out, DMatrix::zeros(2, 3));
    }

    #[test]
    fn single_layer_is_affine() {
        let spec = MlpSpec::single_layer(2, 2);
        let params = NetworkParams::from_flat(&spec, &[1.0, 2.0, 3.0, -1.0, 0.5, 0.25, -4.0, 0.0, 0.0])
            .unwrap_err();
        assert!(matches!(params, Error::ShapeMismatch { .. }));
        let params = NetworkParams::from_flat(&spec, &[1.0, 2.0, 3.0, -1.0, 0.5, 0.25]).unwrap();
        let x = DMatrix::from_row_slice(1, 2, &[2.0, -3.0]);
        let out = mlp_forward(&params, &spec, &x).unwrap();
        assert_eq!(out[(0, 0)], 1.0 * 2.0 + 2.0 * -3.0 + 0.5);
        assert_eq!(out[(0, 1)], 3.0 * 2.0 + 3.0 + 0.25);
    }

    #[test]
    fn seeded_forward_matches_scalar_loop() {
        let spec = MlpSpec::new(vec![2, 7, 4, 3]).unwrap();
        let mut params = NetworkParams::init(&spec, 11);
        for (l, b) in params.biases.iter_mut().enumerate() {
            b.iter_mut().enumerate().for_each(|(i, v)| *v = 0.1 * (i + l) as f64 - 0.2);
        }
        let x = [0.35, -0.8];
        let out = mlp_forward(&params, &spec, &DMatrix::from_row_slice(1, 2, &x)).unwrap();
        let expected = reference_forward(&params, &spec, &x);
        for (a, b) in out.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-14);
        }
        let golden = [-0.0855821107301062, -0.39029728163114413, 0.3668683291210729];
        for (a, b) in out.iter().zip(&golden) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn flat_round_trip_and_init_bounds() {
        let spec = MlpSpec::new(vec![3, 4, 2]).unwrap();
        assert_eq!(spec.n_params(), 4 * 4 + 2 * 5);
        let params = NetworkParams::init(&spec, 3);
        let flat = params.to_flat();
        assert_eq!(NetworkParams::from_flat(&spec, &flat).unwrap(), params);
        let bound = (3.0_f64 / 3.0).sqrt();
        assert!(params.weights[0].iter().all(|v| v.abs() <= bound));
        assert!(params.biases.iter().all(|b| b.iter().all(|&v| v == 0.0)));
        assert_eq!(NetworkParams::init(&spec, 3), params);
        assert_ne!(NetworkParams::init(&spec, 4), params);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let spec = MlpSpec::new(vec![3, 6, 5, 2]).unwrap();
        let params = NetworkParams::init(&spec, 21);
        let x = [0.2, -0.4, 0.9];
        let jac = mlp_jacobian(&params, &spec, &x).unwrap();
        let h = 1e-6;
        for j in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[j] += h;
            xm[j] -= h;
            let fp = reference_forward(&params, &spec, &xp);
            let fm = reference_forward(&params, &spec, &xm);
            for i in 0..2 {
                assert!((jac[(i, j)] - (fp[i] - fm[i]) / (2.0 * h)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(MlpSpec::new(vec![3]).is_err());
        assert!(MlpSpec::new(vec![3, 0, 1]).is_err());
        let spec = MlpSpec::new(vec![2, 3, 1]).unwrap();
        let x = DMatrix::zeros(4, 3);
        assert!(mlp_forward(&NetworkParams::zeros(&spec), &spec, &x).is_err());
    }
}
