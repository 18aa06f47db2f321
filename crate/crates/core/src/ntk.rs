//! ReLU neural tangent kernel and gradient descent on kernel least squares.
//!
//! The kernel is
//!
//! ```text
//! κ(x, x̃) = (x·x̃) (π - arccos(x·x̃)) / (2π)
//! ```
//!
//! i.e. `(x·x̃) P(w·x > 0, w·x̃ > 0)` for `w ~ N(0, I)`, which is the
//! expected inner product of the network's tangent features at
//! initialization. It satisfies `κ(x, x) = 1/2` and `|κ| ≤ 1/2`.
//!
//! Kernel least squares is run in dual form, `α_{t+1} = α_t - (2η/n)(Kα_t - y)`,
//! so the on-sample predictions `f_t = Kα_t` follow
//! `f_{t+1} = f_t - (2η/n) K (f_t - y)` and equal
//! `(I - (I - (2η/n) K)^t) y`.

use std::f64::consts::PI;

use crate::data::check_unit;
use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};
use crate::net::{check_step_size, NetworkParams};
use crate::spectral::{eigh_symmetric, SymmetricEigen};

/// Kernel value for a given cosine; the cosine is clamped to `[-1, 1]`.
pub fn kappa_of_cosine(c: f64) -> f64 {
    let c = c.clamp(-1.0, 1.0);
    c * (PI - c.acos()) / (2.0 * PI)
}

/// Kernel on (assumed) unit vectors. The angle comes from
/// `2 atan2(‖x - x̃‖, ‖x + x̃‖)`, which stays accurate for nearly parallel
/// inputs where `arccos` of a rounded cosine loses half its digits.
pub(crate) fn kappa_unchecked(x: &[f64], z: &[f64]) -> f64 {
    let (mut diff, mut sum) = (0.0, 0.0);
    for (a, b) in x.iter().zip(z) {
        diff += (a - b) * (a - b);
        sum += (a + b) * (a + b);
    }
    let angle = 2.0 * diff.sqrt().atan2(sum.sqrt());
    dot(x, z) * (PI - angle) / (2.0 * PI)
}

pub fn kappa(x: &[f64], z: &[f64]) -> Result<f64> {
    if x.len() != z.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), got: z.len() });
    }
    check_unit(x)?;
    check_unit(z)?;
    Ok(kappa_unchecked(x, z))
}

/// NTK Gram matrix together with the inputs it was built from.
#[derive(Clone, Debug)]
pub struct KernelMatrix {
    gram: Matrix,
    inputs: Matrix,
}

pub fn kernel_matrix(inputs: &Matrix) -> Result<KernelMatrix> {
    let n = inputs.rows();
    if n == 0 {
        return Err(Error::invalid("X", "kernel matrix needs at least one input"));
    }
    for x in inputs.row_iter() {
        check_unit(x)?;
    }
    let mut gram = Matrix::zeros(n, n);
    for i in 0..n {
        gram[(i, i)] = 0.5;
        for j in 0..i {
            let v = kappa_unchecked(inputs.row(i), inputs.row(j));
            gram[(i, j)] = v;
            gram[(j, i)] = v;
        }
    }
    Ok(KernelMatrix {
        gram,
        inputs: inputs.clone(),
    })
}

impl KernelMatrix {
    pub fn gram(&self) -> &Matrix {
        &self.gram
    }

    pub fn inputs(&self) -> &Matrix {
        &self.inputs
    }

    pub fn n(&self) -> usize {
        self.gram.rows()
    }

    /// `Σ_i α_i κ(x_i, x)`.
    pub fn predict(&self, state: &KlsState, x: &[f64]) -> Result<f64> {
        kls_predict(state, &self.inputs, x)
    }
}

/// Tangent features of a network at its current parameters, evaluated on a
/// sample. Row `i` of `phi` is `φ(x_i) ∈ R^{m·d}` (a column of `Φ`).
#[derive(Clone, Debug)]
pub struct NtfFeatures {
    pub phi: Matrix,
    pub gram: Matrix,
}

/// Bit-packed activation patterns `1{w_k·x_i > 0}`, one bitset per input.
fn activation_bits(params: &NetworkParams, inputs: &Matrix) -> Vec<Vec<u64>> {
    let m = params.width();
    let words = m.div_ceil(64);
    inputs
        .row_iter()
        .map(|x| {
            let mut bits = vec![0u64; words];
            for k in 0..m {
                if dot(params.weights().row(k), x) > 0.0 {
                    bits[k / 64] |= 1 << (k % 64);
                }
            }
            bits
        })
        .collect()
}

/// `K̂ = ΦᵀΦ` without materializing `Φ`: `K̂_ij = (x_i·x_j)/m · #{k active on both}`.
pub fn ntf_gram(params: &NetworkParams, inputs: &Matrix) -> Result<Matrix> {
    if inputs.cols() != params.dim() {
        return Err(Error::DimensionMismatch { expected: params.dim(), got: inputs.cols() });
    }
    let n = inputs.rows();
    let m = params.width() as f64;
    let bits = activation_bits(params, inputs);
    let mut gram = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let common: u32 = bits[i].iter().zip(&bits[j]).map(|(a, b)| (a & b).count_ones()).sum();
            let v = dot(inputs.row(i), inputs.row(j)) * common as f64 / m;
            gram[(i, j)] = v;
            gram[(j, i)] = v;
        }
    }
    Ok(gram)
}

pub fn ntf_features(params: &NetworkParams, inputs: &Matrix) -> Result<NtfFeatures> {
    let gram = ntf_gram(params, inputs)?;
    let n = inputs.rows();
    let width = params.width() * params.dim();
    let mut phi = Matrix::zeros(n, width);
    for (i, x) in inputs.row_iter().enumerate() {
        phi.row_mut(i).copy_from_slice(&params.feature(x)?);
    }
    Ok(NtfFeatures { phi, gram })
}

/// Dual coefficients and on-sample predictions after `step` GD iterations.
#[derive(Clone, Debug, PartialEq)]
pub struct KlsState {
    pub alpha: Vec<f64>,
    /// `K α`, the predictions at the training inputs.
    pub predictions: Vec<f64>,
    pub step: usize,
    pub eta: f64,
}

fn check_system(gram: &Matrix, y: &[f64]) -> Result<()> {
    if !gram.is_square() {
        return Err(Error::DimensionMismatch { expected: gram.rows(), got: gram.cols() });
    }
    if y.len() != gram.rows() {
        return Err(Error::DimensionMismatch { expected: gram.rows(), got: y.len() });
    }
    if y.is_empty() {
        return Err(Error::invalid("y", "empty target vector"));
    }
    Ok(())
}

/// `steps` iterations of `α ← α - (2η/n)(Kα - y)` from `α = 0`.
pub fn kls_gd_run(gram: &Matrix, y: &[f64], eta: f64, steps: usize) -> Result<KlsState> {
    check_system(gram, y)?;
    check_step_size(eta)?;
    let n = y.len();
    let rate = 2.0 * eta / n as f64;
    let mut alpha = vec![0.0; n];
    let mut predictions = vec![0.0; n];
    for t in 0..steps {
        if t > 0 {
            predictions = gram.matvec(&alpha);
        }
        for ((a, f), yi) in alpha.iter_mut().zip(&predictions).zip(y) {
            *a -= rate * (f - yi);
        }
    }
    if steps > 0 {
        predictions = gram.matvec(&alpha);
    }
    Ok(KlsState {
        alpha,
        predictions,
        step: steps,
        eta,
    })
}

/// `1 - (1 - 2ηλ/n)^t`, the spectral filter of `t` GD steps.
fn gd_filter(lambda: f64, eta: f64, n: usize, t: u64) -> f64 {
    let base = 1.0 - 2.0 * eta * lambda / n as f64;
    let pow = if t <= i32::MAX as u64 {
        base.powi(t as i32)
    } else {
        base.powf(t as f64)
    };
    1.0 - pow
}

/// Eigendecomposed kernel matrix for closed-form KLS quantities.
#[derive(Clone, Debug)]
pub struct KlsSpectral {
    eigen: SymmetricEigen,
}

impl KlsSpectral {
    pub fn new(gram: &Matrix) -> Result<Self> {
        Ok(KlsSpectral {
            eigen: eigh_symmetric(gram)?,
        })
    }

    pub fn eigen(&self) -> &SymmetricEigen {
        &self.eigen
    }

    pub fn lambda_min(&self) -> f64 {
        self.eigen.values.last().copied().unwrap_or(0.0)
    }

    fn n(&self) -> usize {
        self.eigen.values.len()
    }

    /// `V (I - (I - (2η/n)Λ)^t) Vᵀ y`.
    pub fn onsample(&self, y: &[f64], eta: f64, t: u64) -> Result<Vec<f64>> {
        if y.len() != self.n() {
            return Err(Error::DimensionMismatch { expected: self.n(), got: y.len() });
        }
        check_step_size(eta)?;
        let n = self.n();
        Ok(self.eigen.apply_spectral(y, |l| gd_filter(l, eta, n, t)))
    }

    /// `‖z‖_{K^{-1}}` for the closed-form prediction vector `z` at step `t`.
    pub fn rkhs_norm(&self, y: &[f64], eta: f64, t: u64) -> Result<f64> {
        if y.len() != self.n() {
            return Err(Error::DimensionMismatch { expected: self.n(), got: y.len() });
        }
        check_step_size(eta)?;
        let n = self.n();
        let lambda_min = self.lambda_min();
        if !(lambda_min > 1e-10 * n as f64) {
            return Err(Error::NearSingular { lambda_min });
        }
        let coords = self.eigen.coordinates(y);
        let sq: f64 = coords
            .iter()
            .zip(&self.eigen.values)
            .map(|(c, &l)| {
                let g = gd_filter(l, eta, n, t);
                g * g * c * c / l
            })
            .sum();
        Ok(sq.sqrt())
    }
}

/// `(I - (I - (2η/n)K)^t) y` via an eigendecomposition of `K`.
pub fn kls_closed_form_onsample(gram: &Matrix, y: &[f64], eta: f64, t: u64) -> Result<Vec<f64>> {
    check_system(gram, y)?;
    KlsSpectral::new(gram)?.onsample(y, eta, t)
}

/// RKHS norm of the KLS predictor after `t` steps. Rejects `λ_min(K) ≤ 1e-10·n`.
pub fn rkhs_norm_of_iterate(gram: &Matrix, y: &[f64], eta: f64, t: u64) -> Result<f64> {
    check_system(gram, y)?;
    KlsSpectral::new(gram)?.rkhs_norm(y, eta, t)
}

/// Out-of-sample KLS prediction `Σ_i α_i κ(x_i, x)`.
pub fn kls_predict(state: &KlsState, inputs: &Matrix, x: &[f64]) -> Result<f64> {
    if inputs.rows() != state.alpha.len() {
        return Err(Error::DimensionMismatch { expected: state.alpha.len(), got: inputs.rows() });
    }
    if x.len() != inputs.cols() {
        return Err(Error::DimensionMismatch { expected: inputs.cols(), got: x.len() });
    }
    check_unit(x)?;
    Ok(inputs
        .row_iter()
        .zip(&state.alpha)
        .map(|(xi, a)| a * kappa_unchecked(xi, x))
        .sum())
}

/// `max_x |f(x) - g(x)|` over the rows of `points`.
pub fn sup_gap(f: impl Fn(&[f64]) -> f64, g: impl Fn(&[f64]) -> f64, points: &Matrix) -> Result<f64> {
    if points.rows() == 0 {
        return Err(Error::invalid("test_points", "empty test set"));
    }
    Ok(points.row_iter().map(|x| (f(x) - g(x)).abs()).fold(0.0, f64::max))
}

/// Largest absolute gap between the network and the KLS predictor over the test points.
pub fn coupling_gap(
    net: &NetworkParams,
    kernel: &KernelMatrix,
    state: &KlsState,
    test_points: &Matrix,
) -> Result<f64> {
    if test_points.cols() != net.dim() {
        return Err(Error::DimensionMismatch { expected: net.dim(), got: test_points.cols() });
    }
    for x in test_points.row_iter() {
        check_unit(x)?;
    }
    let inputs = kernel.inputs();
    sup_gap(
        |x| net.forward(x).expect("dimension checked"),
        |x| {
            inputs
                .row_iter()
                .zip(&state.alpha)
                .map(|(xi, a)| a * kappa_unchecked(xi, x))
                .sum()
        },
        test_points,
    )
}
