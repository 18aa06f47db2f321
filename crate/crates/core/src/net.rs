//! Shallow ReLU network `f(x) = Σ_k u_k (w_k·x)_+` with frozen output signs,
//! symmetric initialization, and full-batch gradient descent on the hidden
//! layer.
//!
//! The ReLU subgradient uses the strict indicator `1{w·x > 0}`; a unit
//! sitting exactly on its kink contributes zero.

use std::io::Write;

use crate::data::{fmt_f64, Dataset};
use crate::error::{Error, Result};
use crate::matrix::{dist, dot, Matrix};
use crate::rng::{tag, Stream};

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    weights: Matrix,
    signs: Vec<f64>,
}

fn check_width(m: usize) -> Result<()> {
    if m < 2 || m % 2 != 0 {
        return Err(Error::invalid("m", format!("width must be even and >= 2, got {m}")));
    }
    Ok(())
}

fn output_signs(m: usize) -> Vec<f64> {
    let s = 1.0 / (m as f64).sqrt();
    (0..m).map(|k| if k < m / 2 { -s } else { s }).collect()
}

/// Symmetric initialization: rows `k` and `k + m/2` share one Gaussian draw
/// and carry opposite output signs, so the initial network is identically zero.
pub fn init_params(m: usize, d: usize, seed: u64) -> Result<NetworkParams> {
    check_width(m)?;
    if d == 0 {
        return Err(Error::invalid("d", "dimension must be positive"));
    }
    let half = m / 2;
    let mut stream = Stream::new(seed, tag::INIT);
    let mut weights = Matrix::zeros(m, d);
    for k in 0..half {
        for j in 0..d {
            weights[(k, j)] = stream.gaussian();
        }
        let row = weights.row(k).to_vec();
        weights.row_mut(k + half).copy_from_slice(&row);
    }
    Ok(NetworkParams {
        weights,
        signs: output_signs(m),
    })
}

impl NetworkParams {
    /// Builds parameters with arbitrary hidden weights and the standard
    /// output signs `u_k = ∓1/√m`.
    pub fn from_weights(weights: Matrix) -> Result<Self> {
        check_width(weights.rows())?;
        let signs = output_signs(weights.rows());
        Ok(NetworkParams { weights, signs })
    }

    pub fn width(&self) -> usize {
        self.weights.rows()
    }

    pub fn dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut Matrix {
        &mut self.weights
    }

    pub fn signs(&self) -> &[f64] {
        &self.signs
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: len });
        }
        Ok(())
    }

    /// Sum over unit pairs `(k, k + m/2)` given preactivations `w_k·x`.
    fn combine(&self, pre: impl Fn(usize) -> f64) -> f64 {
        let half = self.width() / 2;
        let mut sum = 0.0;
        for k in 0..half {
            let a = self.signs[k] * pre(k).max(0.0);
            let b = self.signs[k + half] * pre(k + half).max(0.0);
            sum += a + b;
        }
        sum
    }

    pub(crate) fn eval(&self, x: &[f64]) -> f64 {
        self.combine(|k| dot(self.weights.row(k), x))
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x.len())?;
        Ok(self.eval(x))
    }

    /// Gradient of `f_θ(x)` with respect to the stacked hidden weights:
    /// block `k` is `u_k 1{w_k·x > 0} x`.
    pub fn feature(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x.len())?;
        let d = self.dim();
        let mut phi = vec![0.0; self.width() * d];
        for (k, block) in phi.chunks_exact_mut(d).enumerate() {
            if dot(self.weights.row(k), x) > 0.0 {
                for (b, xi) in block.iter_mut().zip(x) {
                    *b = self.signs[k] * xi;
                }
            }
        }
        Ok(phi)
    }

    /// `n × m` matrix of preactivations `w_k·x_i`.
    fn preactivations(&self, inputs: &Matrix) -> Matrix {
        let m = self.width();
        let mut pre = Matrix::zeros(inputs.rows(), m);
        for (i, x) in inputs.row_iter().enumerate() {
            let row = pre.row_mut(i);
            for (k, p) in row.iter_mut().enumerate() {
                *p = dot(self.weights.row(k), x);
            }
        }
        pre
    }
}

fn check_dataset(params: &NetworkParams, data: &Dataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::invalid("dataset", "empty dataset"));
    }
    params.check_dim(data.dim())
}

/// Empirical risk `(1/n) Σ (f(x_i) - y_i)²`.
pub fn risk(params: &NetworkParams, data: &Dataset) -> Result<f64> {
    check_dataset(params, data)?;
    let n = data.len() as f64;
    Ok(data
        .inputs
        .row_iter()
        .zip(&data.targets)
        .map(|(x, y)| (params.eval(x) - y).powi(2))
        .sum::<f64>()
        / n)
}

/// Residuals `f(x_i) - y_i` from precomputed preactivations.
fn residuals(params: &NetworkParams, pre: &Matrix, targets: &[f64]) -> Vec<f64> {
    (0..pre.rows())
        .map(|i| {
            let row = pre.row(i);
            params.combine(|k| row[k]) - targets[i]
        })
        .collect()
}

fn gradient_from(params: &NetworkParams, inputs: &Matrix, pre: &Matrix, resid: &[f64]) -> Matrix {
    let (m, d) = (params.width(), params.dim());
    let scale = 2.0 / resid.len() as f64;
    let mut grad = Matrix::zeros(m, d);
    for (i, x) in inputs.row_iter().enumerate() {
        let r = scale * resid[i];
        let prow = pre.row(i);
        for k in 0..m {
            if prow[k] > 0.0 {
                let c = r * params.signs[k];
                for (g, xi) in grad.row_mut(k).iter_mut().zip(x) {
                    *g += c * xi;
                }
            }
        }
    }
    grad
}

/// Subgradient of the empirical risk with respect to the hidden weights,
/// shaped `m × d`.
pub fn grad_risk(params: &NetworkParams, data: &Dataset) -> Result<Matrix> {
    check_dataset(params, data)?;
    let pre = params.preactivations(&data.inputs);
    let resid = residuals(params, &pre, &data.targets);
    Ok(gradient_from(params, &data.inputs, &pre, &resid))
}

fn check_same_shape(a: &NetworkParams, b: &NetworkParams) -> Result<()> {
    if a.width() != b.width() {
        return Err(Error::DimensionMismatch { expected: b.width(), got: a.width() });
    }
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch { expected: b.dim(), got: a.dim() });
    }
    Ok(())
}

/// `max_k ‖w_{t,k} - w_{0,k}‖`.
pub fn max_drift(params_t: &NetworkParams, params_0: &NetworkParams) -> Result<f64> {
    check_same_shape(params_t, params_0)?;
    Ok((0..params_t.width())
        .map(|k| dist(params_t.weights.row(k), params_0.weights.row(k)))
        .fold(0.0, f64::max))
}

/// Number of units whose activation at `x` differs between the two parameter sets.
pub fn pattern_change_count(params_t: &NetworkParams, params_0: &NetworkParams, x: &[f64]) -> Result<usize> {
    check_same_shape(params_t, params_0)?;
    params_t.check_dim(x.len())?;
    Ok((0..params_t.width())
        .filter(|&k| (dot(params_t.weights.row(k), x) > 0.0) != (dot(params_0.weights.row(k), x) > 0.0))
        .count())
}

pub fn check_step_size(eta: f64) -> Result<()> {
    if !(eta > 0.0 && eta <= 0.5) {
        return Err(Error::invalid("eta", format!("step size must lie in (0, 1/2], got {eta}")));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub risk: f64,
    pub max_drift: f64,
    /// Largest number of changed activation patterns over the training inputs.
    pub max_pattern_changes: usize,
    /// Squared Frobenius norm of the risk subgradient at this step.
    pub grad_norm_sq: f64,
}

#[derive(Clone, Debug)]
pub struct TrainTrajectory {
    pub records: Vec<StepRecord>,
    pub snapshots: Vec<(usize, NetworkParams)>,
    pub eta: f64,
}

impl TrainTrajectory {
    pub fn final_params(&self) -> &NetworkParams {
        &self.snapshots.last().expect("trajectory always holds the final snapshot").1
    }

    pub fn risks(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.risk).collect()
    }

    /// `step,risk,max_drift,max_pattern_changes`
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "step,risk,max_drift,max_pattern_changes")?;
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{}",
                r.step,
                fmt_f64(r.risk),
                fmt_f64(r.max_drift),
                r.max_pattern_changes
            )?;
        }
        Ok(())
    }
}

/// Full-batch gradient descent `θ_t = θ_{t-1} - η ∇L̂(θ_{t-1})` for `steps`
/// iterations. Snapshots are kept at step 0, every `snapshot_every` steps
/// (0 disables), and at the final step.
pub fn train_gd(
    params0: &NetworkParams,
    data: &Dataset,
    eta: f64,
    steps: usize,
    snapshot_every: usize,
) -> Result<TrainTrajectory> {
    check_step_size(eta)?;
    check_dataset(params0, data)?;
    let n = data.len();
    let m = params0.width();
    let pre0 = params0.preactivations(&data.inputs);
    let mut params = params0.clone();
    let mut records = Vec::with_capacity(steps + 1);
    let mut snapshots = vec![(0, params0.clone())];

    for t in 0..=steps {
        let pre = if t == 0 { pre0.clone() } else { params.preactivations(&data.inputs) };
        let resid = residuals(&params, &pre, &data.targets);
        let risk = resid.iter().map(|r| r * r).sum::<f64>() / n as f64;
        let max_changes = (0..n)
            .map(|i| {
                let (a, b) = (pre.row(i), pre0.row(i));
                (0..m).filter(|&k| (a[k] > 0.0) != (b[k] > 0.0)).count()
            })
            .max()
            .unwrap_or(0);
        let drift = max_drift(&params, params0)?;
        let grad = gradient_from(&params, &data.inputs, &pre, &resid);
        let gnorm = grad.frobenius_norm();
        records.push(StepRecord {
            step: t,
            risk,
            max_drift: drift,
            max_pattern_changes: max_changes,
            grad_norm_sq: gnorm * gnorm,
        });
        if t > 0 && t < steps && snapshot_every > 0 && t % snapshot_every == 0 {
            snapshots.push((t, params.clone()));
        }
        if t == steps {
            break;
        }
        for k in 0..m {
            for (w, g) in params.weights.row_mut(k).iter_mut().zip(grad.row(k)) {
                *w -= eta * g;
            }
        }
    }
    if steps > 0 {
        snapshots.push((steps, params));
    }
    Ok(TrainTrajectory {
        records,
        snapshots,
        eta,
    })
}
