//! Synthetic regression data on the unit sphere.
//!
//! Inputs are uniform on `S^{d-1}` (normalized Gaussian draws), targets are
//! Lipschitz, non-differentiable functions of the input, and the noise is
//! bounded with a prescribed standard deviation.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::{dot, norm, Matrix};
use crate::rng::{tag, Stream};

/// Tolerance on `‖v‖ = 1` for target directions.
pub const DIRECTION_TOL: f64 = 1e-12;
/// Tolerance on `‖x‖ = 1` for evaluation points.
pub const UNIT_TOL: f64 = 1e-9;

pub(crate) fn check_unit(x: &[f64]) -> Result<()> {
    let n = norm(x);
    if (n - 1.0).abs() > UNIT_TOL {
        return Err(Error::NotUnit { norm: n });
    }
    Ok(())
}

/// Draws one uniform point on the sphere from `stream`.
pub fn sphere_point(stream: &mut Stream, d: usize) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..d).map(|_| stream.gaussian()).collect();
        let r = norm(&v);
        // a zero Gaussian vector has probability zero but would divide by zero
        if r > 0.0 {
            v.iter_mut().for_each(|c| *c /= r);
            return v;
        }
    }
}

/// `n` points uniform on `S^{d-1}`, one per row.
pub fn sample_sphere(n: usize, d: usize, seed: u64) -> Result<Matrix> {
    sample_sphere_tagged(n, d, seed, tag::SPHERE)
}

pub(crate) fn sample_sphere_tagged(n: usize, d: usize, seed: u64, stream_tag: u64) -> Result<Matrix> {
    if d < 2 {
        return Err(Error::invalid("d", format!("sphere needs d >= 2, got {d}")));
    }
    let mut stream = Stream::new(seed, stream_tag);
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        data.extend(sphere_point(&mut stream, d));
    }
    Matrix::from_vec(n, d, data)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetKind {
    /// `Λ |v·x|`
    AbsLinear,
    /// `Λ max_j (v_j·x)_+`
    MaxOfLinears,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TargetSpec {
    kind: TargetKind,
    directions: Vec<Vec<f64>>,
    lipschitz: f64,
}

impl TargetSpec {
    pub fn new(kind: TargetKind, directions: Vec<Vec<f64>>, lipschitz: f64) -> Result<Self> {
        if !(lipschitz > 0.0 && lipschitz.is_finite()) {
            return Err(Error::invalid("lipschitz", format!("must be positive, got {lipschitz}")));
        }
        if directions.is_empty() {
            return Err(Error::invalid("directions", "at least one direction required"));
        }
        let d = directions[0].len();
        for v in &directions {
            if v.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: v.len() });
            }
            let n = norm(v);
            if (n - 1.0).abs() > DIRECTION_TOL {
                return Err(Error::NotUnit { norm: n });
            }
        }
        if kind == TargetKind::AbsLinear && directions.len() != 1 {
            return Err(Error::invalid("directions", "abs-linear takes exactly one direction"));
        }
        Ok(TargetSpec {
            kind,
            directions,
            lipschitz,
        })
    }

    /// Target with `count` directions drawn uniformly on the sphere from `seed`.
    pub fn random(kind: TargetKind, d: usize, count: usize, lipschitz: f64, seed: u64) -> Result<Self> {
        let count = if kind == TargetKind::AbsLinear { 1 } else { count.max(1) };
        let dirs = sample_sphere_tagged(count, d, seed, tag::DIRECTION)?;
        TargetSpec::new(kind, dirs.row_iter().map(<[f64]>::to_vec).collect(), lipschitz)
    }

    pub fn kind(&self) -> TargetKind {
        self.kind
    }

    pub fn directions(&self) -> &[Vec<f64>] {
        &self.directions
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn dim(&self) -> usize {
        self.directions[0].len()
    }

    /// Evaluates without the unit-norm check. Callers guarantee `‖x‖ = 1`.
    pub(crate) fn eval_unchecked(&self, x: &[f64]) -> f64 {
        match self.kind {
            TargetKind::AbsLinear => self.lipschitz * dot(&self.directions[0], x).abs(),
            TargetKind::MaxOfLinears => {
                let best = self
                    .directions
                    .iter()
                    .map(|v| dot(v, x))
                    .fold(0.0f64, f64::max);
                self.lipschitz * best
            }
        }
    }
}

pub fn eval_target(spec: &TargetSpec, x: &[f64]) -> Result<f64> {
    if x.len() != spec.dim() {
        return Err(Error::DimensionMismatch { expected: spec.dim(), got: x.len() });
    }
    check_unit(x)?;
    Ok(spec.eval_unchecked(x))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    /// `±σ` with equal probability.
    Rademacher,
    /// Uniform on `[-√3 σ, √3 σ]`.
    Uniform,
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub sigma: f64,
}

impl NoiseSpec {
    pub fn new(kind: NoiseKind, sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::invalid("sigma", format!("must be nonnegative, got {sigma}")));
        }
        Ok(NoiseSpec { kind, sigma })
    }

    /// Almost-sure bound on `|ε|`.
    pub fn bound(&self) -> f64 {
        match self.kind {
            NoiseKind::Rademacher => self.sigma,
            NoiseKind::Uniform => 3f64.sqrt() * self.sigma,
        }
    }
}

pub fn sample_noise(spec: &NoiseSpec, n: usize, seed: u64) -> Result<Vec<f64>> {
    let spec = NoiseSpec::new(spec.kind, spec.sigma)?;
    let mut stream = Stream::new(seed, tag::NOISE);
    let half_width = spec.bound();
    Ok((0..n)
        .map(|_| match spec.kind {
            NoiseKind::Rademacher => spec.sigma * stream.sign(),
            NoiseKind::Uniform => half_width * (2.0 * stream.uniform() - 1.0),
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub inputs: Matrix,
    pub targets: Vec<f64>,
    pub clean: Vec<f64>,
    /// Bound on `|y_i|`.
    pub target_bound: f64,
    pub seed: u64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.cols()
    }

    /// Writes `x_0,...,x_{d-1},y,clean` with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let d = self.dim();
        let header: Vec<String> = (0..d)
            .map(|j| format!("x_{j}"))
            .chain(["y".to_string(), "clean".to_string()])
            .collect();
        writeln!(out, "{}", header.join(","))?;
        for (i, row) in self.inputs.row_iter().enumerate() {
            let mut fields: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
            fields.push(fmt_f64(self.targets[i]));
            fields.push(fmt_f64(self.clean[i]));
            writeln!(out, "{}", fields.join(","))?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.write_csv(std::io::BufWriter::new(file)).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Reads the CSV layout written by [`Dataset::write_csv`]. The target
    /// bound is recomputed as `max |y_i|` and the seed is unknown (0).
    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Dataset> {
        let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
        let headers = reader.headers()?.clone();
        let width = headers.len();
        if width < 3 || &headers[width - 2] != "y" || &headers[width - 1] != "clean" {
            return Err(Error::Config("dataset header must end with `y,clean`".into()));
        }
        let d = width - 2;
        let mut xs = Vec::new();
        let mut targets = Vec::new();
        let mut clean = Vec::new();
        for record in reader.records() {
            let record = record?;
            let vals = record
                .iter()
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Config(format!("bad number {s:?}: {e}")))
                })
                .collect::<Result<Vec<f64>>>()?;
            xs.extend_from_slice(&vals[..d]);
            targets.push(vals[d]);
            clean.push(vals[d + 1]);
        }
        let n = targets.len();
        let target_bound = targets.iter().fold(0.0f64, |a, y| a.max(y.abs()));
        Ok(Dataset {
            inputs: Matrix::from_vec(n, d, xs)?,
            targets,
            clean,
            target_bound,
            seed: 0,
        })
    }
}

/// 17 significant digits; round-trips every finite `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn generate_dataset(
    n: usize,
    d: usize,
    target: &TargetSpec,
    noise: &NoiseSpec,
    seed: u64,
) -> Result<Dataset> {
    if target.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: target.dim() });
    }
    let inputs = sample_sphere(n, d, seed)?;
    let eps = sample_noise(noise, n, seed)?;
    let clean: Vec<f64> = inputs.row_iter().map(|x| target.eval_unchecked(x)).collect();
    let targets = clean.iter().zip(&eps).map(|(f, e)| f + e).collect();
    Ok(Dataset {
        inputs,
        targets,
        clean,
        target_bound: target.lipschitz() + noise.bound(),
        seed,
    })
}
