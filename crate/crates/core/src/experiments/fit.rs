//! Least-squares power-law fits in log10-log10 space.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: usize,
}

/// Fits `log10 y = slope · log10 x + intercept` by ordinary least squares.
pub fn loglog_slope(points: &[(f64, f64)]) -> Result<SlopeFit> {
    if points.len() < 2 {
        return Err(Error::invalid(
            "points",
            format!("a slope fit needs at least 2 points, got {}", points.len()),
        ));
    }
    for &(x, y) in points {
        if !(x > 0.0 && y > 0.0 && x.is_finite() && y.is_finite()) {
            return Err(Error::invalid(
                "points",
                format!("coordinates must be positive and finite, got ({x}, {y})"),
            ));
        }
    }
    let k = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.log10()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.log10()).collect();
    let mx = lx.iter().sum::<f64>() / k;
    let my = ly.iter().sum::<f64>() / k;
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ly.iter().map(|y| (y - my) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("points", "all x coordinates coincide"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(SlopeFit {
        slope,
        intercept,
        r_squared,
        points: points.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_law() {
        let f = loglog_slope(&[(1.0, 1.0), (10.0, 0.1), (100.0, 0.01)]).unwrap();
        assert!((f.slope + 1.0).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
        assert_eq!(f.points, 3);
    }

    #[test]
    fn flat_line() {
        let f = loglog_slope(&[(1.0, 2.5), (10.0, 2.5)]).unwrap();
        assert_eq!(f.slope, 0.0);
    }

    #[test]
    fn quadratic_with_constant() {
        let pts: Vec<_> = [1.0, 2.0, 4.0, 8.0].iter().map(|&x| (x, 3.0 * x * x)).collect();
        let f = loglog_slope(&pts).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-9);
        assert!((f.intercept - 3f64.log10()).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(loglog_slope(&[(1.0, 1.0)]).is_err());
        assert!(loglog_slope(&[(1.0, 1.0), (0.0, 1.0)]).is_err());
        assert!(loglog_slope(&[(1.0, -1.0), (2.0, 1.0)]).is_err());
        assert!(loglog_slope(&[(2.0, 1.0), (2.0, 3.0)]).is_err());
    }
}
