//! Cyclic Jacobi eigensolver for dense symmetric matrices.

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const MAX_SWEEPS: usize = 64;
/// Stop once the off-diagonal Frobenius norm falls below this fraction of `‖M‖_F`.
pub const OFF_DIAGONAL_TOL: f64 = 1e-12;
const SYMMETRY_TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct SymmetricEigen {
    /// Sorted descending.
    pub values: Vec<f64>,
    /// Column `j` is the unit eigenvector of `values[j]`.
    pub vectors: Matrix,
}

impl SymmetricEigen {
    /// `V diag(f(λ)) Vᵀ v`.
    pub fn apply_spectral(&self, v: &[f64], f: impl Fn(f64) -> f64) -> Vec<f64> {
        let n = self.values.len();
        let coeffs: Vec<f64> = (0..n)
            .map(|j| {
                let c: f64 = (0..n).map(|i| self.vectors[(i, j)] * v[i]).sum();
                c * f(self.values[j])
            })
            .collect();
        (0..n)
            .map(|i| self.vectors.row(i).iter().zip(&coeffs).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Coordinates `Vᵀ v` in the eigenbasis.
    pub fn coordinates(&self, v: &[f64]) -> Vec<f64> {
        let n = self.values.len();
        (0..n)
            .map(|j| (0..n).map(|i| self.vectors[(i, j)] * v[i]).sum())
            .collect()
    }
}

fn symmetrized(m: &Matrix) -> Result<Matrix> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch { expected: m.rows(), got: m.cols() });
    }
    let asym = m.max_asymmetry();
    let scale = m.as_slice().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if asym > SYMMETRY_TOL * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    let n = m.rows();
    let mut a = m.clone();
    for i in 0..n {
        for j in i + 1..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    Ok(a)
}

fn off_diagonal_norm(a: &Matrix) -> f64 {
    let n = a.rows();
    let mut s = 0.0;
    for i in 0..n {
        for (j, v) in a.row(i).iter().enumerate().skip(i + 1) {
            debug_assert!(j > i);
            s += v * v;
        }
    }
    (2.0 * s).sqrt()
}

/// Runs Jacobi sweeps in place. `vt` (if any) accumulates eigenvectors as rows.
fn jacobi(a: &mut Matrix, mut vt: Option<&mut Matrix>) -> Result<()> {
    let n = a.rows();
    let target = OFF_DIAGONAL_TOL * a.frobenius_norm();
    let mut off = off_diagonal_norm(a);
    let mut sweeps = 0;
    while off > target {
        if sweeps == MAX_SWEEPS {
            return Err(Error::NotConverged { sweeps, residual: off });
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    if k == p || k == q {
                        continue;
                    }
                    let akp = a[(p, k)];
                    let akq = a[(q, k)];
                    let np = c * akp - s * akq;
                    let nq = s * akp + c * akq;
                    a[(p, k)] = np;
                    a[(q, k)] = nq;
                    a[(k, p)] = np;
                    a[(k, q)] = nq;
                }
                a[(p, p)] = app - t * apq;
                a[(q, q)] = aqq + t * apq;
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                if let Some(v) = vt.as_deref_mut() {
                    for k in 0..n {
                        let vp = v[(p, k)];
                        let vq = v[(q, k)];
                        v[(p, k)] = c * vp - s * vq;
                        v[(q, k)] = s * vp + c * vq;
                    }
                }
            }
        }
        sweeps += 1;
        off = off_diagonal_norm(a);
    }
    Ok(())
}

fn descending_order(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&i, &j| values[j].total_cmp(&values[i]).then(i.cmp(&j)));
    idx
}

/// Full eigendecomposition `M = V Λ Vᵀ` with eigenvalues sorted descending.
pub fn eigh_symmetric(m: &Matrix) -> Result<SymmetricEigen> {
    let mut a = symmetrized(m)?;
    let n = a.rows();
    let mut vt = Matrix::identity(n);
    jacobi(&mut a, Some(&mut vt))?;
    let diag = a.diagonal();
    let order = descending_order(&diag);
    let mut vectors = Matrix::zeros(n, n);
    for (j, &src) in order.iter().enumerate() {
        for i in 0..n {
            vectors[(i, j)] = vt[(src, i)];
        }
    }
    Ok(SymmetricEigen {
        values: order.iter().map(|&i| diag[i]).collect(),
        vectors,
    })
}

/// Eigenvalues only, sorted descending.
pub fn eigvals_symmetric(m: &Matrix) -> Result<Vec<f64>> {
    let mut a = symmetrized(m)?;
    jacobi(&mut a, None)?;
    let mut vals = a.diagonal();
    vals.sort_by(|x, y| y.total_cmp(x));
    Ok(vals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{tag, Stream};

    fn random_symmetric(n: usize, seed: u64) -> Matrix {
        let mut s = Stream::new(seed, tag::PERTURB);
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = s.gaussian();
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }

    fn residuals(m: &Matrix, e: &SymmetricEigen) -> (f64, f64) {
        let n = m.rows();
        let mut recon = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                recon[(i, j)] = (0..n).map(|k| e.vectors[(i, k)] * e.values[k] * e.vectors[(j, k)]).sum();
            }
        }
        let mut r = 0.0;
        for (a, b) in recon.as_slice().iter().zip(m.as_slice()) {
            r += (a - b) * (a - b);
        }
        let vtv = e.vectors.transpose().matmul(&e.vectors);
        let mut o = 0.0;
        for i in 0..n {
            for j in 0..n {
                let want = if i == j { 1.0 } else { 0.0 };
                o += (vtv[(i, j)] - want).powi(2);
            }
        }
        (r.sqrt(), o.sqrt())
    }

    #[test]
    fn two_by_two() {
        let m = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let e = eigh_symmetric(&m).unwrap();
        assert!((e.values[0] - 3.0).abs() < 1e-14);
        assert!((e.values[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn identity() {
        let e = eigh_symmetric(&Matrix::identity(3)).unwrap();
        assert_eq!(e.values, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn random_reconstruction_and_orthogonality() {
        for seed in 0..3 {
            let m = random_symmetric(20, seed);
            let e = eigh_symmetric(&m).unwrap();
            let (r, o) = residuals(&m, &e);
            assert!(r <= 1e-8 * m.frobenius_norm(), "reconstruction {r}");
            assert!(o <= 1e-9, "orthogonality {o}");
            assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
            let vals = eigvals_symmetric(&m).unwrap();
            for (a, b) in vals.iter().zip(&e.values) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn trace_preserved() {
        let m = random_symmetric(30, 9);
        let vals = eigvals_symmetric(&m).unwrap();
        let tr: f64 = m.diagonal().iter().sum();
        assert!((vals.iter().sum::<f64>() - tr).abs() < 1e-10);
    }

    #[test]
    fn asymmetric_rejected() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(eigh_symmetric(&m), Err(Error::NotSymmetric { .. })));
        assert!(eigh_symmetric(&Matrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn degenerate_inputs() {
        let e = eigh_symmetric(&Matrix::zeros(0, 0)).unwrap();
        assert!(e.values.is_empty());
        let z = eigh_symmetric(&Matrix::zeros(3, 3)).unwrap();
        assert_eq!(z.values, vec![0.0; 3]);
    }

    #[test]
    fn apply_spectral_identity() {
        let m = random_symmetric(6, 4);
        let e = eigh_symmetric(&m).unwrap();
        let v = vec![1.0, -2.0, 0.5, 0.0, 3.0, 1.0];
        let direct = m.matvec(&v);
        let via = e.apply_spectral(&v, |l| l);
        for (a, b) in direct.iter().zip(&via) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}
