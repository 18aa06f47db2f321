//! Closed-form theory bounds, used as overlays next to measured quantities.
//!
//! Every evaluator rejects out-of-domain inputs instead of clamping them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Unknown dimension-dependent constants of the Lipschitz approximation error
/// and the kernel gap. Both default to one; only exponents are tested.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryConstants {
    pub c_lip: f64,
    pub c_gap: f64,
}

impl Default for TheoryConstants {
    fn default() -> Self {
        TheoryConstants { c_lip: 1.0, c_gap: 1.0 }
    }
}

fn positive(name: &'static str, v: f64) -> Result<f64> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(Error::invalid(name, format!("must be positive and finite, got {v}")))
    }
}

fn nonnegative(name: &'static str, v: f64) -> Result<f64> {
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(Error::invalid(name, format!("must be nonnegative and finite, got {v}")))
    }
}

/// `max(ln x, 0)`.
pub fn ln_plus(x: f64) -> f64 {
    x.ln().max(0.0)
}

/// `n/λ0 ≥ 1` and `ν ≥ 1`, shared by the width and coupling statements.
fn ratio_and_nu(n: f64, lambda0: f64, nu: f64) -> Result<f64> {
    positive("n", n)?;
    positive("lambda0", lambda0)?;
    let ratio = n / lambda0;
    if ratio < 1.0 {
        return Err(Error::invalid("lambda0", format!("requires n/lambda0 >= 1, got {ratio}")));
    }
    if !(nu >= 1.0 && nu.is_finite()) {
        return Err(Error::invalid("nu", format!("requires nu >= 1, got {nu}")));
    }
    Ok(ratio)
}

/// `B_y² (1 - ηλ0/(2n))^t`, the risk envelope of network GD.
pub fn convergence_envelope(b_y: f64, eta: f64, lambda0: f64, n: f64, t: u64) -> Result<f64> {
    nonnegative("B_y", b_y)?;
    let rate = nonnegative("eta", eta)? * nonnegative("lambda0", lambda0)? / (2.0 * positive("n", n)?);
    if rate > 1.0 {
        return Err(Error::invalid("eta", format!("rate factor eta*lambda0/(2n) = {rate} exceeds 1")));
    }
    let base = 1.0 - rate;
    let pow = if t <= i32::MAX as u64 {
        base.powi(t as i32)
    } else {
        base.powf(t as f64)
    };
    Ok(b_y * b_y * pow)
}

/// `(1/√m) · 4B_y²n/λ0`, the bound on `max_k ‖w_k(t) - w_k(0)‖`.
pub fn drift_bound(b_y: f64, n: f64, lambda0: f64, m: f64) -> Result<f64> {
    nonnegative("B_y", b_y)?;
    positive("n", n)?;
    positive("lambda0", lambda0)?;
    if !(m >= 1.0 && m.is_finite()) {
        return Err(Error::invalid("m", format!("requires m >= 1, got {m}")));
    }
    Ok(4.0 * b_y * b_y * n / lambda0 / m.sqrt())
}

/// Minimal width `⌈(8(4B_y²n/λ0 + √ν) + 2 + n)⁴ (n/λ0)²⌉`.
///
/// Returned as `f64`: realistic inputs overflow every integer type.
pub fn width_requirement(b_y: f64, n: f64, lambda0: f64, nu: f64) -> Result<f64> {
    nonnegative("B_y", b_y)?;
    let ratio = ratio_and_nu(n, lambda0, nu)?;
    let inner = 8.0 * (4.0 * b_y * b_y * ratio + nu.sqrt()) + 2.0 + n;
    Ok((inner.powi(4) * ratio * ratio).ceil())
}

/// Bound on the squared sup-gap between the network and KLS predictors:
/// `(64/√m)(4B_y²n/λ0 + √ν)²(256n/λ0 + 9)² + (ν/m) B_y² (24n/λ0 + 1/2)⁴`.
pub fn coupling_bound(b_y: f64, n: f64, lambda0: f64, m: f64, nu: f64) -> Result<f64> {
    nonnegative("B_y", b_y)?;
    let ratio = ratio_and_nu(n, lambda0, nu)?;
    if !(m >= 1.0) {
        return Err(Error::invalid("m", format!("requires m >= 1, got {m}")));
    }
    let a = 4.0 * b_y * b_y * ratio + nu.sqrt();
    let b = 256.0 * ratio + 9.0;
    let first = 64.0 / m.sqrt() * a * a * b * b;
    let second = nu / m * b_y * b_y * (24.0 * ratio + 0.5).powi(4);
    Ok(first + second)
}

fn check_dim(d: f64) -> Result<f64> {
    if d.is_finite() && d > 2.0 {
        Ok(d)
    } else {
        Err(Error::invalid("d", format!("requires d > 2, got {d}")))
    }
}

/// Approximation error of a `Λ`-Lipschitz target by an RKHS ball of squared
/// radius `R`: `C_lip Λ (√R/Λ)^{-2/(d-2)} ln(√R/Λ)`.
pub fn approx_error_a(r: f64, lipschitz: f64, d: f64, c_lip: f64) -> Result<f64> {
    let d = check_dim(d)?;
    positive("Lambda", lipschitz)?;
    positive("C_lip", c_lip)?;
    positive("R", r)?;
    let q = r.sqrt() / lipschitz;
    if !(q > 1.0) {
        return Err(Error::invalid("R", format!("requires sqrt(R)/Lambda > 1, got {q}")));
    }
    if r < c_lip {
        return Err(Error::invalid("R", format!("requires R >= C_lip = {c_lip}, got {r}")));
    }
    Ok(c_lip * lipschitz * q.powf(-2.0 / (d - 2.0)) * q.ln())
}

/// Minimizer `R* = Λ² (y/x)^{2/d - 1}` of `x A(R)² + y R` (up to the log factor).
/// Callers check admissibility `R* ≥ max(C_lip, Λ²)` themselves.
pub fn tradeoff_r_star(x: f64, y: f64, lipschitz: f64, d: f64) -> Result<f64> {
    positive("x", x)?;
    positive("y", y)?;
    positive("Lambda", lipschitz)?;
    let d = check_dim(d)?;
    Ok(lipschitz * lipschitz * (y / x).powf(2.0 / d - 1.0))
}

/// `(1 + C_lip² ln_+²((y/x)^{1/d - 1/2})) Λ² x^{1 - 2/d} y^{2/d}`, the value
/// the tradeoff `x A(R)² + y R` is bounded by at `R*`.
pub fn tradeoff_bound(x: f64, y: f64, lipschitz: f64, d: f64, c_lip: f64) -> Result<f64> {
    positive("x", x)?;
    positive("y", y)?;
    positive("Lambda", lipschitz)?;
    positive("C_lip", c_lip)?;
    let d = check_dim(d)?;
    let l = ln_plus((y / x).powf(1.0 / d - 0.5));
    Ok((1.0 + c_lip * c_lip * l * l) * lipschitz * lipschitz * x.powf(1.0 - 2.0 / d) * y.powf(2.0 / d))
}

/// Minimax rate shape `n^{-2/(2+d)}`, without constants.
pub fn rate_prediction(n: f64, d: f64) -> Result<f64> {
    if !(n >= 1.0 && n.is_finite()) {
        return Err(Error::invalid("n", format!("requires n >= 1, got {n}")));
    }
    if !(d >= 2.0 && d.is_finite()) {
        return Err(Error::invalid("d", format!("requires d >= 2, got {d}")));
    }
    Ok(n.powf(rate_exponent(d)))
}

/// `-2/(2+d)`.
pub fn rate_exponent(d: f64) -> f64 {
    -2.0 / (2.0 + d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{tag, Stream};
    use std::f64::consts::E;

    #[test]
    fn envelope_examples() {
        assert_eq!(convergence_envelope(1.5, 0.5, 3.0, 10.0, 0).unwrap(), 2.25);
        assert_eq!(convergence_envelope(1.0, 0.5, 8.0, 8.0, 4).unwrap(), 0.31640625);
        for t in [0, 1, 100] {
            assert_eq!(convergence_envelope(2.0, 0.5, 0.0, 8.0, t).unwrap(), 4.0);
        }
        assert!(convergence_envelope(1.0, 0.5, 100.0, 8.0, 1).is_err());
        assert!(convergence_envelope(1.0, -0.5, 1.0, 8.0, 1).is_err());
        let mut prev = f64::INFINITY;
        for t in 0..50 {
            let v = convergence_envelope(1.0, 0.25, 3.0, 16.0, t).unwrap();
            assert!(v <= prev);
            prev = v;
        }
    }

    #[test]
    fn drift_examples() {
        assert_eq!(drift_bound(1.0, 5.0, 5.0, 16.0).unwrap(), 1.0);
        let a = drift_bound(1.3, 7.0, 2.0, 100.0).unwrap();
        let b = drift_bound(1.3, 7.0, 2.0, 400.0).unwrap();
        assert!((a - 2.0 * b).abs() < 1e-15 * a);
        assert_eq!(drift_bound(0.0, 7.0, 2.0, 100.0).unwrap(), 0.0);
        assert!(drift_bound(1.0, 7.0, 0.0, 100.0).is_err());
        assert!(drift_bound(1.0, 7.0, 1.0, 0.5).is_err());
    }

    #[test]
    fn width_examples() {
        assert_eq!(width_requirement(1.0, 1.0, 1.0, 1.0).unwrap(), 3_418_801.0);
        assert!(width_requirement(1.0, 1.0, 1.0, 4.0).unwrap() > 3_418_801.0);
        // degree six in n/λ0 at fixed n
        let w1 = width_requirement(1.0, 10.0, 5.0, 1.0).unwrap();
        let w2 = width_requirement(1.0, 10.0, 2.5, 1.0).unwrap();
        assert!(w2 > 4.0 * w1);
        assert!(width_requirement(1.0, 1.0, 2.0, 1.0).is_err());
        assert!(width_requirement(1.0, 1.0, 1.0, 0.5).is_err());
    }

    #[test]
    fn coupling_examples() {
        let v = coupling_bound(1.0, 1.0, 1.0, 1e12, 1.0).unwrap();
        let first = 64e-6 * 25.0 * 265.0 * 265.0;
        let second = 1e-12 * 24.5f64.powi(4);
        assert!((v - (first + second)).abs() < 1e-12 * v);
        assert!((v - 112.36).abs() < 0.01);
        assert!(coupling_bound(1.0, 1.0, 1.0, 1e300, 1.0).unwrap() < 1e-140);
        let mut prev = f64::INFINITY;
        for k in 0..20 {
            let v = coupling_bound(1.0, 4.0, 2.0, 2f64.powi(k), 2.0).unwrap();
            assert!(v < prev);
            prev = v;
        }
        let first_term = |m: f64| {
            coupling_bound(1.0, 2.0, 1.0, m, 1.0).unwrap() - 1.0 / m * (48.5f64).powi(4)
        };
        let ratio = first_term(1e8) / first_term(4e8);
        assert!((ratio - 2.0).abs() < 1e-9);
        assert!(coupling_bound(1.0, 1.0, 1.0, 0.5, 1.0).is_err());
        assert!(coupling_bound(1.0, 1.0, 2.0, 10.0, 1.0).is_err());
    }

    #[test]
    fn approx_error_examples() {
        let v = approx_error_a(E.powi(4), 1.0, 4.0, 1.0).unwrap();
        assert!((v - 2.0 * E.powi(-2)).abs() < 1e-15);
        assert!((v - 0.27067).abs() < 1e-5);
        let mut prev = f64::INFINITY;
        for k in 0..40 {
            let r = E * E * (1.0 + k as f64);
            let a = approx_error_a(r, 1.0, 4.0, 1.0).unwrap();
            assert!(a < prev);
            prev = a;
        }
        let c: f64 = 1.7;
        let base = approx_error_a(30.0, 1.2, 6.0, 1.0).unwrap();
        let scaled = approx_error_a(c * c * 30.0, c * 1.2, 6.0, 1.0).unwrap();
        assert!((scaled - c * base).abs() < 1e-13 * scaled);
        assert!(approx_error_a(10.0, 1.0, 2.0, 1.0).is_err());
        assert!(approx_error_a(0.5, 1.0, 4.0, 0.1).is_err());
        assert!(approx_error_a(4.0, 1.0, 4.0, 5.0).is_err());
    }

    #[test]
    fn tradeoff_examples() {
        assert!((tradeoff_r_star(1.0, 1e-4, 1.0, 4.0).unwrap() - 100.0).abs() < 1e-10);
        assert_eq!(tradeoff_r_star(3.0, 3.0, 1.5, 5.0).unwrap(), 2.25);
        assert!(tradeoff_r_star(0.0, 1.0, 1.0, 4.0).is_err());
    }

    #[test]
    fn tradeoff_bound_holds_at_r_star() {
        let mut s = Stream::new(17, tag::PERTURB);
        let mut checked = 0;
        while checked < 20 {
            let x = 10f64.powf(2.0 * s.uniform() - 1.0);
            let y = x * 10f64.powf(-1.0 - 5.0 * s.uniform());
            let lip = 0.5 + 2.0 * s.uniform();
            let d = 3.0 + (s.uniform() * 6.0).floor();
            let r = tradeoff_r_star(x, y, lip, d).unwrap();
            if r < 1.0f64.max(lip * lip) || r.sqrt() / lip <= 1.0 {
                continue;
            }
            let a = approx_error_a(r, lip, d, 1.0).unwrap();
            let value = x * a * a + y * r;
            let bound = tradeoff_bound(x, y, lip, d, 1.0).unwrap();
            assert!(value <= bound * (1.0 + 1e-12), "{value} > {bound}");
            checked += 1;
        }
    }

    #[test]
    fn rate_examples() {
        assert_eq!(rate_prediction(16.0, 2.0).unwrap(), 0.25);
        assert_eq!(rate_prediction(1.0, 7.0).unwrap(), 1.0);
        assert!((rate_exponent(3.0) + 0.4).abs() < 1e-15);
        assert!(rate_prediction(0.5, 3.0).is_err());
        assert!(rate_prediction(8.0, 1.0).is_err());
    }

    #[test]
    fn ln_plus_clips() {
        assert_eq!(ln_plus(0.5), 0.0);
        assert_eq!(ln_plus(1.0), 0.0);
        assert!((ln_plus(E) - 1.0).abs() < 1e-15);
    }
}
