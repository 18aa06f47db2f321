//! Kernel spectra, localized complexities, critical radii and early-stopping rules.
//!
//! The empirical complexity of a spectrum `λ_1 ≥ … ≥ λ_n` of an `n × n`
//! kernel matrix is
//!
//! ```text
//! R̂(x) = sqrt( (1/n) Σ_i min(x², λ_i / n) )
//! ```
//!
//! and the population complexity of an eigenvalue sequence `μ_i = C i^{-β}`
//! is `R(x) = sqrt( (1/n) Σ_{i ≥ 1} min(x², μ_i) )`. Both are nondecreasing
//! in `x` and satisfy `R(x) ≤ x`, which is what makes the critical radius a
//! unique crossing point.

mod eigh;
mod zeta;

use std::io::Write;

pub use eigh::{eigh_symmetric, eigvals_symmetric, SymmetricEigen, MAX_SWEEPS, OFF_DIAGONAL_TOL};

use crate::data::{fmt_f64, Dataset};
use crate::error::{Error, Result};
use crate::experiments::fit::{loglog_slope, SlopeFit};
use crate::matrix::{dot, Matrix};
use crate::net::check_step_size;

/// Default cap on the stopping-rule scan.
pub const DEFAULT_SCAN_CAP: u64 = 10_000_000;

const TWO_E: f64 = 2.0 * std::f64::consts::E;

/// Eigenvalues of an `n × n` kernel matrix, sorted descending and clamped at zero.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumView {
    eigenvalues: Vec<f64>,
    n: usize,
    /// `tail[k] = Σ_{i ≥ k} λ_i / n`, with `tail[n] = 0`.
    tail: Vec<f64>,
}

impl SpectrumView {
    /// Sorts, then clamps negatives no smaller than `-1e-8·n` to zero.
    pub fn new(mut eigenvalues: Vec<f64>, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("n", "spectrum needs n >= 1"));
        }
        if eigenvalues.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: eigenvalues.len() });
        }
        if let Some(bad) = eigenvalues.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid("eigenvalues", format!("non-finite eigenvalue {bad}")));
        }
        eigenvalues.sort_by(|a, b| b.total_cmp(a));
        let tolerance = 1e-8 * n as f64;
        for v in eigenvalues.iter_mut() {
            if *v < 0.0 {
                if *v < -tolerance {
                    return Err(Error::NegativeEigenvalue { value: *v, tolerance });
                }
                *v = 0.0;
            }
        }
        let mut tail = vec![0.0; n + 1];
        for k in (0..n).rev() {
            tail[k] = tail[k + 1] + eigenvalues[k] / n as f64;
        }
        Ok(SpectrumView { eigenvalues, n, tail })
    }

    /// Eigendecomposes a kernel matrix and wraps its spectrum.
    pub fn from_matrix(k: &Matrix) -> Result<Self> {
        SpectrumView::new(eigvals_symmetric(k)?, k.rows())
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn scaled(&self) -> Vec<f64> {
        self.eigenvalues.iter().map(|l| l / self.n as f64).collect()
    }

    /// Smallest eigenvalue after clamping.
    pub fn min(&self) -> f64 {
        *self.eigenvalues.last().expect("n >= 1")
    }

    /// `R̂(x)²` as a function of `x²`.
    fn complexity_sq(&self, x2: f64) -> f64 {
        let n = self.n as f64;
        let above = self.eigenvalues.partition_point(|l| l / n > x2);
        (x2 * above as f64 + self.tail[above]) / n
    }

    /// `k,lambda_k,lambda_k_over_n` with `k` starting at 1.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "k,lambda_k,lambda_k_over_n")?;
        for (i, l) in self.eigenvalues.iter().enumerate() {
            writeln!(out, "{},{},{}", i + 1, fmt_f64(*l), fmt_f64(l / self.n as f64))?;
        }
        Ok(())
    }
}

pub fn empirical_complexity(spectrum: &SpectrumView, x: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(Error::invalid("x", format!("must be nonnegative, got {x}")));
    }
    Ok(spectrum.complexity_sq(x * x).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StoppingRule {
    Rwy,
    Dieuleveut,
    Yao,
    Fixed,
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StoppingDecision {
    pub rule: StoppingRule,
    pub t_hat: u64,
    /// `None` when the rule leaves the step size to the caller.
    pub eta: Option<f64>,
    /// Empirical critical radius; set by the data-dependent rule only.
    pub r_hat: Option<f64>,
    pub sigma: Option<f64>,
}

impl StoppingDecision {
    pub fn fixed(t_hat: u64, eta: f64) -> Self {
        StoppingDecision {
            rule: StoppingRule::Fixed,
            t_hat,
            eta: Some(eta),
            r_hat: None,
            sigma: None,
        }
    }

    /// `(η T̂)^{-1} ≤ 2 r̂`; vacuous when `T̂ = 0` or the rule has no radius.
    pub fn flow_radius_holds(&self) -> bool {
        match (self.eta, self.r_hat) {
            (Some(eta), Some(r)) if self.t_hat >= 1 => 1.0 / (eta * self.t_hat as f64) <= 2.0 * r,
            _ => true,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("decision serializes")
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(
            "sigma",
            format!("noise level must be positive for the data-dependent rule, got {sigma}"),
        ));
    }
    Ok(())
}

/// Data-dependent stopping step: one less than the first `t ≥ 1` with
/// `R̂(1/sqrt(η t)) > (2 e σ η t)^{-1}`, together with the critical radius.
pub fn rwy_stopping_time(spectrum: &SpectrumView, eta: f64, sigma: f64) -> Result<StoppingDecision> {
    rwy_stopping_time_capped(spectrum, eta, sigma, DEFAULT_SCAN_CAP)
}

pub fn rwy_stopping_time_capped(
    spectrum: &SpectrumView,
    eta: f64,
    sigma: f64,
    cap: u64,
) -> Result<StoppingDecision> {
    check_sigma(sigma)?;
    check_step_size(eta)?;
    let mut violation = None;
    for t in 1..=cap {
        let et = eta * t as f64;
        let lhs = spectrum.complexity_sq(1.0 / et).sqrt();
        if lhs > 1.0 / (TWO_E * sigma * et) {
            violation = Some(t);
            break;
        }
    }
    let first = violation.ok_or(Error::StoppingCapReached { cap })?;
    let r_hat = empirical_critical_radius(spectrum, sigma)?;
    Ok(StoppingDecision {
        rule: StoppingRule::Rwy,
        t_hat: first - 1,
        eta: Some(eta),
        r_hat: Some(r_hat),
        sigma: Some(sigma),
    })
}

/// Smallest `r > 0` with `excess(r) ≤ 0`, where `excess` is positive below the
/// crossing and nonpositive above it.
fn smallest_crossing(excess: impl Fn(f64) -> f64) -> f64 {
    let mut lo = 1e-12;
    while excess(lo) <= 0.0 && lo > f64::MIN_POSITIVE {
        lo *= 0.5;
    }
    let mut hi = 1.0f64.max(2.0 * lo);
    while excess(hi) > 0.0 {
        hi *= 2.0;
    }
    for _ in 0..400 {
        if hi - lo <= 1e-15 * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if excess(mid) <= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Smallest positive `r` with `R̂(sqrt r) ≤ r / (2 e σ)`.
pub fn empirical_critical_radius(spectrum: &SpectrumView, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    if spectrum.tail[0] <= 0.0 {
        return Err(Error::invalid("spectrum", "all eigenvalues are zero"));
    }
    let b = TWO_E * sigma;
    Ok(smallest_crossing(|r| spectrum.complexity_sq(r).sqrt() - r / b))
}

/// Polynomial eigenvalue decay `μ_i = C i^{-β}`, `i ≥ 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolynomialDecay {
    pub scale: f64,
    pub exponent: f64,
}

impl PolynomialDecay {
    pub fn new(scale: f64, exponent: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::invalid("C", format!("must be positive, got {scale}")));
        }
        if !(exponent > 1.0 && exponent.is_finite()) {
            return Err(Error::invalid("beta", format!("decay exponent must exceed 1, got {exponent}")));
        }
        Ok(PolynomialDecay { scale, exponent })
    }

    pub fn eigenvalue(&self, i: u64) -> f64 {
        self.scale * (i as f64).powf(-self.exponent)
    }

    /// `Σ_i min(x², μ_i)`.
    fn clipped_sum(&self, x2: f64) -> f64 {
        if x2 == 0.0 {
            return 0.0;
        }
        // count of indices with μ_i > x²
        let guess = (self.scale / x2).powf(1.0 / self.exponent).floor();
        let mut count = if guess.is_finite() { guess.min(1e18) as u64 } else { u64::MAX / 2 };
        while count > 0 && self.eigenvalue(count) <= x2 {
            count -= 1;
        }
        while self.eigenvalue(count + 1) > x2 {
            count += 1;
        }
        x2 * count as f64 + self.scale * zeta::hurwitz(self.exponent, count as f64 + 1.0)
    }
}

/// `R(x) = sqrt((1/n) Σ_{i≥1} min(x², C i^{-β}))`.
pub fn population_complexity(decay: &PolynomialDecay, n: usize, x: f64) -> Result<f64> {
    let decay = PolynomialDecay::new(decay.scale, decay.exponent)?;
    if n == 0 {
        return Err(Error::invalid("n", "must be positive"));
    }
    if !(x >= 0.0) {
        return Err(Error::invalid("x", format!("must be nonnegative, got {x}")));
    }
    Ok((decay.clipped_sum(x * x) / n as f64).sqrt())
}

/// Smallest positive `r` with `R(sqrt r) ≤ r / b`.
pub fn population_critical_radius(decay: &PolynomialDecay, n: usize, b: f64) -> Result<f64> {
    let decay = PolynomialDecay::new(decay.scale, decay.exponent)?;
    if n == 0 {
        return Err(Error::invalid("n", "must be positive"));
    }
    if !(b > 0.0 && b.is_finite()) {
        return Err(Error::invalid("b", format!("must be positive, got {b}")));
    }
    let nf = n as f64;
    Ok(smallest_crossing(|r| (decay.clipped_sum(r) / nf).sqrt() - r / b))
}

/// Log-log fit of the population critical radius against `n` over `n_grid`.
pub fn population_radius_exponent(decay: &PolynomialDecay, b: f64, n_grid: &[usize]) -> Result<SlopeFit> {
    let points = n_grid
        .iter()
        .map(|&n| Ok((n as f64, population_critical_radius(decay, n, b)?)))
        .collect::<Result<Vec<_>>>()?;
    loglog_slope(&points)
}

/// Step size `½ n^{-1/(1+β)}` with `T̂ = n`.
pub fn dieuleveut_rule(n: u64, beta: f64) -> Result<StoppingDecision> {
    if n == 0 {
        return Err(Error::invalid("n", "must be positive"));
    }
    if !(beta > 0.0) {
        return Err(Error::invalid("beta", format!("must be positive, got {beta}")));
    }
    Ok(StoppingDecision {
        rule: StoppingRule::Dieuleveut,
        t_hat: n,
        eta: Some(0.5 * (n as f64).powf(-1.0 / (1.0 + beta))),
        r_hat: None,
        sigma: None,
    })
}

/// `T̂ = n^{1/3}` rounded half-up; the step size is left to the caller.
pub fn yao_rule(n: u64) -> Result<StoppingDecision> {
    if n == 0 {
        return Err(Error::invalid("n", "must be positive"));
    }
    Ok(StoppingDecision {
        rule: StoppingRule::Yao,
        t_hat: ((n as f64).cbrt() + 0.5).floor() as u64,
        eta: None,
        r_hat: None,
        sigma: None,
    })
}

/// Estimates `σ²` as half the mean squared target difference between each
/// input and its nearest neighbour (largest inner product on the sphere).
pub fn estimate_noise_variance(data: &Dataset) -> Result<f64> {
    let n = data.len();
    if n < 2 {
        return Err(Error::invalid("dataset", "need at least two points"));
    }
    let mut acc = 0.0;
    for i in 0..n {
        let xi = data.inputs.row(i);
        let nn = (0..n)
            .filter(|&j| j != i)
            .max_by(|&a, &b| {
                dot(xi, data.inputs.row(a))
                    .total_cmp(&dot(xi, data.inputs.row(b)))
                    .then(b.cmp(&a))
            })
            .expect("n >= 2");
        acc += 0.5 * (data.targets[i] - data.targets[nn]).powi(2);
    }
    Ok(acc / n as f64)
}
