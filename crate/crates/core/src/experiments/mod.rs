//! Seeded desk-scale experiments emitting CSV tables and log-log slope fits.
//!
//! Every run is a pure function of its [`ExperimentConfig`]. Per-trial seeds
//! are `derive_seed(master, path)` with distinct paths for each cell, so no
//! two cells share a random stream.

pub mod fit;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bounds::{convergence_envelope, coupling_bound, drift_bound, rate_prediction, TheoryConstants};
use crate::data::{
    fmt_f64, generate_dataset, sample_sphere_tagged, Dataset, NoiseKind, NoiseSpec, TargetKind, TargetSpec,
};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::net::{check_step_size, init_params, train_gd};
use crate::ntk::{coupling_gap, kernel_matrix, kls_gd_run, kls_predict, ntf_gram};
use crate::rng::{derive_seed, tag};
use crate::spectral::{eigvals_symmetric, rwy_stopping_time, SpectrumView};

pub use fit::{loglog_slope, SlopeFit};

pub const MAX_N: usize = 2048;
pub const MAX_M: usize = 1 << 15;
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Coupling,
    Convergence,
    Rate,
    Spectrum,
    Stopping,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Coupling => "coupling",
            ExperimentKind::Convergence => "convergence",
            ExperimentKind::Rate => "rate",
            ExperimentKind::Spectrum => "spectrum",
            ExperimentKind::Stopping => "stopping",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub n_grid: Vec<usize>,
    pub m_grid: Vec<usize>,
    pub d: usize,
    pub eta: f64,
    pub sigma_grid: Vec<f64>,
    pub target: TargetKind,
    pub lipschitz: f64,
    /// Number of linear pieces for the max-of-linears target.
    pub directions: usize,
    pub noise: NoiseKind,
    pub trials: usize,
    /// Training steps for the convergence experiment.
    pub steps: usize,
    pub mc_samples: usize,
    pub test_points: usize,
    /// Inclusive eigenvalue index range of the spectrum fit; `k_hi` defaults to `min(64, n/4)`.
    pub k_lo: usize,
    pub k_hi: Option<usize>,
    /// Optional reduced-width network trained alongside KLS in the rate experiment.
    pub net_width: Option<usize>,
    pub nu: f64,
    pub constants: TheoryConstants,
}

impl ExperimentConfig {
    /// Default instance of each experiment.
    pub fn defaults(kind: ExperimentKind, seed: u64) -> Self {
        let base = ExperimentConfig {
            kind,
            seed,
            n_grid: vec![32],
            m_grid: vec![4096],
            d: 3,
            eta: 0.25,
            sigma_grid: vec![0.5],
            target: TargetKind::AbsLinear,
            lipschitz: 1.0,
            directions: 3,
            noise: NoiseKind::Rademacher,
            trials: 10,
            steps: 500,
            mc_samples: 10_000,
            test_points: 512,
            k_lo: 4,
            k_hi: None,
            net_width: None,
            nu: 1.0,
            constants: TheoryConstants::default(),
        };
        match kind {
            ExperimentKind::Coupling => ExperimentConfig {
                m_grid: (8..=14).map(|k| 1 << k).collect(),
                ..base
            },
            ExperimentKind::Convergence => ExperimentConfig {
                n_grid: vec![16],
                ..base
            },
            ExperimentKind::Rate => ExperimentConfig {
                n_grid: vec![32, 64, 128, 256, 512],
                ..base
            },
            ExperimentKind::Spectrum => ExperimentConfig {
                n_grid: vec![512],
                trials: 1,
                ..base
            },
            ExperimentKind::Stopping => ExperimentConfig {
                n_grid: vec![32, 64, 128],
                sigma_grid: vec![0.25, 0.5, 1.0],
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |msg: String| Err(Error::Config(msg));
        if self.n_grid.is_empty() {
            return cfg_err("n-grid is empty".into());
        }
        if self.trials == 0 {
            return cfg_err("trials must be at least 1".into());
        }
        if self.d < 2 {
            return cfg_err(format!("d must be at least 2, got {}", self.d));
        }
        if let Some(&n) = self.n_grid.iter().find(|&&n| n == 0 || n > MAX_N) {
            if n == 0 {
                return cfg_err("n-grid entries must be positive".into());
            }
            return Err(Error::ResourceCap(format!("n = {n} exceeds {MAX_N}")));
        }
        check_step_size(self.eta)?;
        let uses_network = matches!(self.kind, ExperimentKind::Coupling | ExperimentKind::Convergence);
        if uses_network {
            if self.m_grid.is_empty() {
                return cfg_err("m-grid is empty".into());
            }
            for &m in &self.m_grid {
                if m > MAX_M {
                    return Err(Error::ResourceCap(format!("m = {m} exceeds {MAX_M}")));
                }
                if m < 2 || m % 2 == 1 {
                    return cfg_err(format!("m must be even and at least 2, got {m}"));
                }
            }
        }
        if let Some(m) = self.net_width {
            if m > MAX_M {
                return Err(Error::ResourceCap(format!("net-width = {m} exceeds {MAX_M}")));
            }
            if m < 2 || m % 2 == 1 {
                return cfg_err(format!("net-width must be even and at least 2, got {m}"));
            }
        }
        if self.sigma_grid.is_empty() {
            return cfg_err("sigma-grid is empty".into());
        }
        let needs_rule = matches!(
            self.kind,
            ExperimentKind::Coupling | ExperimentKind::Rate | ExperimentKind::Stopping
        );
        for &s in &self.sigma_grid {
            if !(s.is_finite() && s >= 0.0) {
                return cfg_err(format!("sigma must be finite and nonnegative, got {s}"));
            }
            if needs_rule && s == 0.0 {
                return Err(Error::invalid(
                    "sigma",
                    "the data-dependent stopping rule needs sigma > 0",
                ));
            }
        }
        if !(self.lipschitz.is_finite() && self.lipschitz > 0.0) {
            return cfg_err(format!("lipschitz must be positive, got {}", self.lipschitz));
        }
        if self.directions == 0 {
            return cfg_err("directions must be at least 1".into());
        }
        if self.mc_samples == 0 || self.test_points == 0 {
            return cfg_err("mc-samples and test-points must be positive".into());
        }
        if self.k_lo == 0 {
            return cfg_err("k-lo is 1-based and must be positive".into());
        }
        if !(self.nu >= 1.0) {
            return cfg_err(format!("nu must be at least 1, got {}", self.nu));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes())
            .iter()
            .fold(String::with_capacity(64), |mut s, b| {
                let _ = write!(s, "{b:02x}");
                s
            })
    }

    fn target_spec(&self) -> Result<TargetSpec> {
        TargetSpec::random(self.target, self.d, self.directions, self.lipschitz, self.seed)
    }

    fn test_set(&self) -> Result<Matrix> {
        sample_sphere_tagged(self.test_points, self.d, self.seed, tag::TEST_SET)
    }
}

/// Seed used by one trial of one cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub path: Vec<u64>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedFit {
    pub name: String,
    pub fit: SlopeFit,
}

/// Rows of a table with a fixed CSV schema.
pub trait CsvRow {
    const HEADER: &'static str;
    fn fields(&self) -> Vec<String>;
}

#[derive(Clone, Debug)]
pub struct Report<R> {
    pub rows: Vec<R>,
    pub fits: Vec<NamedFit>,
    pub seeds: Vec<SeedRecord>,
    pub csv: String,
}

fn render_csv<R: CsvRow>(cfg: &ExperimentConfig, rows: &[R]) -> String {
    let mut out = format!(
        "# cfg_digest={} version={} kind={}\n{}\n",
        cfg.digest(),
        VERSION,
        cfg.kind.name(),
        R::HEADER
    );
    for r in rows {
        out.push_str(&r.fields().join(","));
        out.push('\n');
    }
    out
}

fn report<R: CsvRow>(cfg: &ExperimentConfig, rows: Vec<R>, fits: Vec<NamedFit>, seeds: Vec<SeedRecord>) -> Report<R> {
    let csv = render_csv(cfg, &rows);
    Report { rows, fits, seeds, csv }
}

/// Kind-erased result, as consumed by the CLI.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub csv: String,
    pub fits: Vec<NamedFit>,
    pub seeds: Vec<SeedRecord>,
}

impl<R> From<Report<R>> for RunOutput {
    fn from(r: Report<R>) -> Self {
        RunOutput {
            csv: r.csv,
            fits: r.fits,
            seeds: r.seeds,
        }
    }
}

struct Seeds {
    master: u64,
    used: Vec<SeedRecord>,
}

impl Seeds {
    fn new(master: u64) -> Self {
        Seeds { master, used: Vec::new() }
    }

    fn get(&mut self, path: &[u64]) -> u64 {
        let seed = derive_seed(self.master, path);
        self.used.push(SeedRecord { path: path.to_vec(), seed });
        seed
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), fmt_f64)
}

/// Median, averaging the two middle values for even counts.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k == 0 {
        return f64::NAN;
    }
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

/// Monte Carlo estimate of `‖f - f*‖²` under the uniform distribution on the sphere.
pub fn mc_excess_risk(
    predictor: impl Fn(&[f64]) -> f64,
    target: &TargetSpec,
    d: usize,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    if samples == 0 {
        return Err(Error::invalid("M", "Monte Carlo sample size must be positive"));
    }
    if target.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: target.dim() });
    }
    let xs = sample_sphere_tagged(samples, d, seed, tag::MONTE_CARLO)?;
    empirical_norm_sq(predictor, |x| target.eval_unchecked(x), &xs)
}

/// `(1/n) Σ (f(x_i) - g(x_i))²` over the rows of `xs`.
pub fn empirical_norm_sq(f: impl Fn(&[f64]) -> f64, g: impl Fn(&[f64]) -> f64, xs: &Matrix) -> Result<f64> {
    if xs.rows() == 0 {
        return Err(Error::invalid("X", "empty sample"));
    }
    let s: f64 = xs.row_iter().map(|x| (f(x) - g(x)).powi(2)).sum();
    Ok(s / xs.rows() as f64)
}

fn noise(cfg: &ExperimentConfig, sigma: f64) -> Result<NoiseSpec> {
    NoiseSpec::new(cfg.noise, sigma)
}

fn lambda_min(eigenvalues: &[f64]) -> f64 {
    eigenvalues.last().copied().unwrap_or(0.0)
}

fn fit_medians(name: String, groups: &[(f64, Vec<f64>)]) -> Option<NamedFit> {
    let pts: Vec<(f64, f64)> = groups.iter().map(|(x, v)| (*x, median(v))).collect();
    loglog_slope(&pts).ok().map(|fit| NamedFit { name, fit })
}

// ---------------------------------------------------------------- coupling

#[derive(Clone, Debug, PartialEq)]
pub struct CouplingRow {
    pub m: usize,
    pub n: usize,
    pub d: usize,
    pub sigma: f64,
    pub eta: f64,
    pub t: u64,
    pub sup_gap: f64,
    pub lambda_min_k: f64,
    pub lambda_min_khat: f64,
    pub trial: usize,
    /// Bound on the squared sup-gap; `None` when `λ_min(K)` is not positive.
    pub theory_coupling_bound: Option<f64>,
}

impl CsvRow for CouplingRow {
    const HEADER: &'static str =
        "m,n,d,sigma,eta,t,sup_gap,lambda_min_K,lambda_min_Khat,trial,theory_coupling_bound";

    fn fields(&self) -> Vec<String> {
        vec![
            self.m.to_string(),
            self.n.to_string(),
            self.d.to_string(),
            fmt_f64(self.sigma),
            fmt_f64(self.eta),
            self.t.to_string(),
            fmt_f64(self.sup_gap),
            fmt_f64(self.lambda_min_k),
            fmt_f64(self.lambda_min_khat),
            self.trial.to_string(),
            opt(self.theory_coupling_bound),
        ]
    }
}

/// For each `(n, σ, trial)`, one dataset and one KLS run stopped at the
/// data-dependent step; for each width `m`, a network trained for the same
/// number of steps and compared with KLS on the shared test set.
pub fn run_coupling_experiment(cfg: &ExperimentConfig) -> Result<Report<CouplingRow>> {
    expect_kind(cfg, ExperimentKind::Coupling)?;
    cfg.validate()?;
    let target = cfg.target_spec()?;
    let test = cfg.test_set()?;
    let mut seeds = Seeds::new(cfg.seed);
    let mut rows = Vec::new();
    let mut fits = Vec::new();
    for (ni, &n) in cfg.n_grid.iter().enumerate() {
        for (si, &sigma) in cfg.sigma_grid.iter().enumerate() {
            let mut gaps: Vec<(f64, Vec<f64>)> = cfg.m_grid.iter().map(|&m| (m as f64, Vec::new())).collect();
            for trial in 0..cfg.trials {
                let data_seed = seeds.get(&[ni as u64, si as u64, trial as u64]);
                let data = generate_dataset(n, cfg.d, &target, &noise(cfg, sigma)?, data_seed)?;
                let kernel = kernel_matrix(&data.inputs)?;
                let spectrum = SpectrumView::new(eigvals_symmetric(kernel.gram())?, n)?;
                let decision = rwy_stopping_time(&spectrum, cfg.eta, sigma)?;
                let t = decision.t_hat;
                let steps = usize::try_from(t).map_err(|_| Error::ResourceCap(format!("T = {t}")))?;
                let kls = kls_gd_run(kernel.gram(), &data.targets, cfg.eta, steps)?;
                let lmin = spectrum.min();
                let b_y = data.target_bound;
                for (mi, &m) in cfg.m_grid.iter().enumerate() {
                    let init_seed = seeds.get(&[ni as u64, si as u64, mi as u64, trial as u64]);
                    let params0 = init_params(m, cfg.d, init_seed)?;
                    let khat = ntf_gram(&params0, &data.inputs)?;
                    let lmin_hat = lambda_min(&eigvals_symmetric(&khat)?);
                    let traj = train_gd(&params0, &data, cfg.eta, steps, 0)?;
                    let gap = coupling_gap(traj.final_params(), &kernel, &kls, &test)?;
                    gaps[mi].1.push(gap);
                    rows.push(CouplingRow {
                        m,
                        n,
                        d: cfg.d,
                        sigma,
                        eta: cfg.eta,
                        t,
                        sup_gap: gap,
                        lambda_min_k: lmin,
                        lambda_min_khat: lmin_hat,
                        trial,
                        theory_coupling_bound: coupling_bound(b_y, n as f64, lmin, m as f64, cfg.nu).ok(),
                    });
                }
            }
            if let Some(f) = fit_medians(format!("sup_gap_vs_m[n={n},sigma={sigma}]"), &gaps) {
                fits.push(f);
            }
        }
    }
    Ok(report(cfg, rows, fits, seeds.used))
}

// ------------------------------------------------------------- convergence

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceRow {
    pub n: usize,
    pub m: usize,
    pub trial: usize,
    pub step: usize,
    pub risk: f64,
    pub envelope: f64,
    pub max_drift: f64,
    pub drift_bound: f64,
    pub max_pattern_changes: usize,
    pub lambda0: f64,
}

impl CsvRow for ConvergenceRow {
    const HEADER: &'static str = "n,m,trial,step,risk,envelope,max_drift,drift_bound,max_pattern_changes,lambda0";

    fn fields(&self) -> Vec<String> {
        vec![
            self.n.to_string(),
            self.m.to_string(),
            self.trial.to_string(),
            self.step.to_string(),
            fmt_f64(self.risk),
            fmt_f64(self.envelope),
            fmt_f64(self.max_drift),
            fmt_f64(self.drift_bound),
            self.max_pattern_changes.to_string(),
            fmt_f64(self.lambda0),
        ]
    }
}

/// Full training trajectories with the risk envelope and drift bound evaluated
/// at `λ0 = λ_min(K)` of each dataset. Uses the first entry of the σ-grid.
pub fn run_convergence_experiment(cfg: &ExperimentConfig) -> Result<Report<ConvergenceRow>> {
    expect_kind(cfg, ExperimentKind::Convergence)?;
    cfg.validate()?;
    let target = cfg.target_spec()?;
    let sigma = cfg.sigma_grid[0];
    let mut seeds = Seeds::new(cfg.seed);
    let mut rows = Vec::new();
    for (ni, &n) in cfg.n_grid.iter().enumerate() {
        for (mi, &m) in cfg.m_grid.iter().enumerate() {
            for trial in 0..cfg.trials {
                let seed = seeds.get(&[ni as u64, mi as u64, trial as u64]);
                let data = generate_dataset(n, cfg.d, &target, &noise(cfg, sigma)?, seed)?;
                let kernel = kernel_matrix(&data.inputs)?;
                let lambda0 = lambda_min(&eigvals_symmetric(kernel.gram())?).max(0.0);
                let params0 = init_params(m, cfg.d, seed)?;
                let traj = train_gd(&params0, &data, cfg.eta, cfg.steps, 0)?;
                let b_y = data.target_bound;
                let bound = if lambda0 > 0.0 {
                    drift_bound(b_y, n as f64, lambda0, m as f64)?
                } else {
                    f64::INFINITY
                };
                for rec in &traj.records {
                    rows.push(ConvergenceRow {
                        n,
                        m,
                        trial,
                        step: rec.step,
                        risk: rec.risk,
                        envelope: convergence_envelope(b_y, cfg.eta, lambda0, n as f64, rec.step as u64)?,
                        max_drift: rec.max_drift,
                        drift_bound: bound,
                        max_pattern_changes: rec.max_pattern_changes,
                        lambda0,
                    });
                }
            }
        }
    }
    Ok(report(cfg, rows, Vec::new(), seeds.used))
}

// -------------------------------------------------------------------- rate

#[derive(Clone, Debug, PartialEq)]
pub struct RateRow {
    pub n: usize,
    pub sigma: f64,
    pub trial: usize,
    pub t_hat: u64,
    pub eta: f64,
    pub r_hat: f64,
    pub excess_risk: f64,
    pub theory_rate: f64,
    pub net_excess_risk: Option<f64>,
}

impl CsvRow for RateRow {
    const HEADER: &'static str = "n,sigma,trial,t_hat,eta,r_hat,excess_risk,theory_rate,net_excess_risk";

    fn fields(&self) -> Vec<String> {
        vec![
            self.n.to_string(),
            fmt_f64(self.sigma),
            self.trial.to_string(),
            self.t_hat.to_string(),
            fmt_f64(self.eta),
            fmt_f64(self.r_hat),
            fmt_f64(self.excess_risk),
            fmt_f64(self.theory_rate),
            opt(self.net_excess_risk),
        ]
    }
}

struct StoppedKls {
    data: Dataset,
    t_hat: u64,
    r_hat: f64,
    alpha: crate::ntk::KlsState,
}

fn stopped_kls(cfg: &ExperimentConfig, target: &TargetSpec, n: usize, sigma: f64, seed: u64) -> Result<StoppedKls> {
    let data = generate_dataset(n, cfg.d, target, &noise(cfg, sigma)?, seed)?;
    let kernel = kernel_matrix(&data.inputs)?;
    let spectrum = SpectrumView::new(eigvals_symmetric(kernel.gram())?, n)?;
    let decision = rwy_stopping_time(&spectrum, cfg.eta, sigma)?;
    let steps = usize::try_from(decision.t_hat).map_err(|_| Error::ResourceCap("stopping step".into()))?;
    let alpha = kls_gd_run(kernel.gram(), &data.targets, cfg.eta, steps)?;
    Ok(StoppedKls {
        data,
        t_hat: decision.t_hat,
        r_hat: decision.r_hat.expect("rule sets the radius"),
        alpha,
    })
}

/// KLS-GD stopped by the data-dependent rule; Monte Carlo excess risk and
/// critical radius per trial, with slopes of their medians against `n`.
pub fn run_rate_experiment(cfg: &ExperimentConfig) -> Result<Report<RateRow>> {
    expect_kind(cfg, ExperimentKind::Rate)?;
    cfg.validate()?;
    if cfg.n_grid.len() < 2 {
        return Err(Error::invalid("n-grid", "the rate fit needs at least 2 sample sizes"));
    }
    let target = cfg.target_spec()?;
    let mut seeds = Seeds::new(cfg.seed);
    let mut rows = Vec::new();
    let mut fits = Vec::new();
    for (si, &sigma) in cfg.sigma_grid.iter().enumerate() {
        let mut risks = Vec::new();
        let mut radii = Vec::new();
        for (ni, &n) in cfg.n_grid.iter().enumerate() {
            let (mut cell_risk, mut cell_r) = (Vec::new(), Vec::new());
            for trial in 0..cfg.trials {
                let seed = seeds.get(&[si as u64, ni as u64, trial as u64]);
                let run = stopped_kls(cfg, &target, n, sigma, seed)?;
                let inputs = &run.data.inputs;
                let excess = mc_excess_risk(
                    |x| kls_predict(&run.alpha, inputs, x).expect("unit test points"),
                    &target,
                    cfg.d,
                    cfg.mc_samples,
                    seed,
                )?;
                let net_excess = match cfg.net_width {
                    Some(m) => {
                        let params0 = init_params(m, cfg.d, seed)?;
                        let steps = run.alpha.step;
                        let traj = train_gd(&params0, &run.data, cfg.eta, steps, 0)?;
                        let p = traj.final_params();
                        Some(mc_excess_risk(|x| p.eval(x), &target, cfg.d, cfg.mc_samples, seed)?)
                    }
                    None => None,
                };
                cell_risk.push(excess);
                cell_r.push(run.r_hat);
                rows.push(RateRow {
                    n,
                    sigma,
                    trial,
                    t_hat: run.t_hat,
                    eta: cfg.eta,
                    r_hat: run.r_hat,
                    excess_risk: excess,
                    theory_rate: cfg.lipschitz * cfg.lipschitz * rate_prediction(n as f64, cfg.d as f64)?,
                    net_excess_risk: net_excess,
                });
            }
            risks.push((n as f64, cell_risk));
            radii.push((n as f64, cell_r));
        }
        fits.extend(fit_medians(format!("excess_risk_vs_n[sigma={sigma}]"), &risks));
        fits.extend(fit_medians(format!("r_hat_vs_n[sigma={sigma}]"), &radii));
    }
    Ok(report(cfg, rows, fits, seeds.used))
}

// ---------------------------------------------------------------- spectrum

#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumRow {
    pub n: usize,
    pub trial: usize,
    pub k: usize,
    pub lambda_k: f64,
    pub lambda_k_over_n: f64,
}

impl CsvRow for SpectrumRow {
    const HEADER: &'static str = "n,trial,k,lambda_k,lambda_k_over_n";

    fn fields(&self) -> Vec<String> {
        vec![
            self.n.to_string(),
            self.trial.to_string(),
            self.k.to_string(),
            fmt_f64(self.lambda_k),
            fmt_f64(self.lambda_k_over_n),
        ]
    }
}

/// Eigenvalues of the kernel matrix on uniform inputs, with a slope fit of the
/// per-index median of `λ_k/n` over `k ∈ [k_lo, k_hi]`.
pub fn run_spectrum_experiment(cfg: &ExperimentConfig) -> Result<Report<SpectrumRow>> {
    expect_kind(cfg, ExperimentKind::Spectrum)?;
    cfg.validate()?;
    let mut seeds = Seeds::new(cfg.seed);
    let mut rows = Vec::new();
    let mut fits = Vec::new();
    for (ni, &n) in cfg.n_grid.iter().enumerate() {
        let k_hi = cfg.k_hi.unwrap_or(64.min(n / 4)).min(n);
        let mut per_k: Vec<(f64, Vec<f64>)> = (cfg.k_lo..=k_hi).map(|k| (k as f64, Vec::new())).collect();
        for trial in 0..cfg.trials {
            let seed = seeds.get(&[ni as u64, trial as u64]);
            let x = sample_sphere_tagged(n, cfg.d, seed, tag::SPHERE)?;
            let kernel = kernel_matrix(&x)?;
            let view = SpectrumView::new(eigvals_symmetric(kernel.gram())?, n)?;
            for (i, (&l, s)) in view.eigenvalues().iter().zip(view.scaled()).enumerate() {
                let k = i + 1;
                if k >= cfg.k_lo && k <= k_hi {
                    per_k[k - cfg.k_lo].1.push(s);
                }
                rows.push(SpectrumRow {
                    n,
                    trial,
                    k,
                    lambda_k: l,
                    lambda_k_over_n: s,
                });
            }
        }
        if per_k.len() >= 2 {
            let pts: Vec<(f64, f64)> = per_k.iter().map(|(k, v)| (*k, median(v))).collect();
            fits.push(NamedFit {
                name: format!("lambda_over_n_vs_k[n={n}]"),
                fit: loglog_slope(&pts)?,
            });
        }
    }
    Ok(report(cfg, rows, fits, seeds.used))
}

// ---------------------------------------------------------------- stopping

#[derive(Clone, Debug, PartialEq)]
pub struct StoppingRow {
    pub n: usize,
    pub sigma: f64,
    pub trial: usize,
    pub eta: f64,
    pub t_hat: u64,
    pub r_hat: f64,
    pub inv_eta_t: f64,
    pub flow_radius_ok: bool,
}

impl CsvRow for StoppingRow {
    const HEADER: &'static str = "n,sigma,trial,eta,t_hat,r_hat,inv_eta_t,flow_radius_ok";

    fn fields(&self) -> Vec<String> {
        vec![
            self.n.to_string(),
            fmt_f64(self.sigma),
            self.trial.to_string(),
            fmt_f64(self.eta),
            self.t_hat.to_string(),
            fmt_f64(self.r_hat),
            fmt_f64(self.inv_eta_t),
            self.flow_radius_ok.to_string(),
        ]
    }
}

/// Stopping step and critical radius over an `(n, σ)` grid.
pub fn run_stopping_experiment(cfg: &ExperimentConfig) -> Result<Report<StoppingRow>> {
    expect_kind(cfg, ExperimentKind::Stopping)?;
    cfg.validate()?;
    let target = cfg.target_spec()?;
    let mut seeds = Seeds::new(cfg.seed);
    let mut rows = Vec::new();
    let mut radii: Vec<Vec<(f64, Vec<f64>)>> = vec![Vec::new(); cfg.sigma_grid.len()];
    for (ni, &n) in cfg.n_grid.iter().enumerate() {
        for (si, &sigma) in cfg.sigma_grid.iter().enumerate() {
            let mut cell = Vec::new();
            for trial in 0..cfg.trials {
                let seed = seeds.get(&[ni as u64, si as u64, trial as u64]);
                let data = generate_dataset(n, cfg.d, &target, &noise(cfg, sigma)?, seed)?;
                let kernel = kernel_matrix(&data.inputs)?;
                let spectrum = SpectrumView::new(eigvals_symmetric(kernel.gram())?, n)?;
                let decision = rwy_stopping_time(&spectrum, cfg.eta, sigma)?;
                let r_hat = decision.r_hat.expect("rule sets the radius");
                cell.push(r_hat);
                rows.push(StoppingRow {
                    n,
                    sigma,
                    trial,
                    eta: cfg.eta,
                    t_hat: decision.t_hat,
                    r_hat,
                    inv_eta_t: 1.0 / (cfg.eta * decision.t_hat as f64),
                    flow_radius_ok: decision.flow_radius_holds(),
                });
            }
            radii[si].push((n as f64, cell));
        }
    }
    let fits = cfg
        .sigma_grid
        .iter()
        .zip(&radii)
        .filter_map(|(s, g)| fit_medians(format!("r_hat_vs_n[sigma={s}]"), g))
        .collect();
    Ok(report(cfg, rows, fits, seeds.used))
}

fn expect_kind(cfg: &ExperimentConfig, kind: ExperimentKind) -> Result<()> {
    if cfg.kind != kind {
        return Err(Error::Config(format!(
            "expected a {} config, got {}",
            kind.name(),
            cfg.kind.name()
        )));
    }
    Ok(())
}

/// Dispatches on `cfg.kind`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    Ok(match cfg.kind {
        ExperimentKind::Coupling => run_coupling_experiment(cfg)?.into(),
        ExperimentKind::Convergence => run_convergence_experiment(cfg)?.into(),
        ExperimentKind::Rate => run_rate_experiment(cfg)?.into(),
        ExperimentKind::Spectrum => run_spectrum_experiment(cfg)?.into(),
        ExperimentKind::Stopping => run_stopping_experiment(cfg)?.into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::sample_sphere;

    fn small(kind: ExperimentKind) -> ExperimentConfig {
        ExperimentConfig {
            n_grid: vec![12, 24],
            m_grid: vec![64],
            trials: 2,
            steps: 20,
            mc_samples: 200,
            test_points: 32,
            ..ExperimentConfig::defaults(kind, 11)
        }
    }

    #[test]
    fn median_values() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn mc_risk_examples() {
        let t = TargetSpec::random(TargetKind::AbsLinear, 4, 1, 1.0, 3).unwrap();
        assert_eq!(mc_excess_risk(|x| t.eval_unchecked(x), &t, 4, 100, 1).unwrap(), 0.0);
        let off = mc_excess_risk(|x| t.eval_unchecked(x) + 0.3, &t, 4, 100, 1).unwrap();
        assert!((off - 0.09).abs() < 1e-12);
        let v = t.directions()[0].clone();
        let lin = mc_excess_risk(
            |x| t.eval_unchecked(x) + crate::matrix::dot(&v, x),
            &t,
            4,
            100_000,
            2,
        )
        .unwrap();
        assert!((lin - 0.25).abs() < 0.01, "{lin}");
        assert!(mc_excess_risk(|_| 0.0, &t, 4, 0, 1).is_err());
    }

    #[test]
    fn empirical_norm_examples() {
        let xs = sample_sphere(50, 3, 4).unwrap();
        assert_eq!(empirical_norm_sq(|x| x[0], |x| x[0], &xs).unwrap(), 0.0);
        assert_eq!(empirical_norm_sq(|x| x[0] + 1.0, |x| x[0], &xs).unwrap(), 1.0);
        assert!(empirical_norm_sq(|_| 0.0, |_| 0.0, &Matrix::zeros(0, 3)).is_err());
        let t = TargetSpec::random(TargetKind::AbsLinear, 3, 1, 1.0, 3).unwrap();
        let mc = mc_excess_risk(|x| x[1], &t, 3, 300, 9).unwrap();
        let xs = sample_sphere_tagged(300, 3, 9, tag::MONTE_CARLO).unwrap();
        let direct = empirical_norm_sq(|x| x[1], |x| t.eval_unchecked(x), &xs).unwrap();
        assert_eq!(mc, direct);
    }

    #[test]
    fn config_validation() {
        for kind in [
            ExperimentKind::Coupling,
            ExperimentKind::Convergence,
            ExperimentKind::Rate,
            ExperimentKind::Spectrum,
            ExperimentKind::Stopping,
        ] {
            ExperimentConfig::defaults(kind, 1).validate().unwrap();
        }
        let base = ExperimentConfig::defaults(ExperimentKind::Coupling, 1);
        let bad = [
            ExperimentConfig { n_grid: vec![], ..base.clone() },
            ExperimentConfig { trials: 0, ..base.clone() },
            ExperimentConfig { n_grid: vec![4096], ..base.clone() },
            ExperimentConfig { m_grid: vec![1 << 16], ..base.clone() },
            ExperimentConfig { m_grid: vec![3], ..base.clone() },
            ExperimentConfig { eta: 0.9, ..base.clone() },
            ExperimentConfig { sigma_grid: vec![0.0], ..base.clone() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
        assert!(matches!(
            ExperimentConfig { n_grid: vec![4096], ..base.clone() }.validate(),
            Err(Error::ResourceCap(_))
        ));
    }

    #[test]
    fn digest_tracks_config() {
        let a = ExperimentConfig::defaults(ExperimentKind::Rate, 1);
        let b = ExperimentConfig { seed: 2, ..a.clone() };
        assert_eq!(a.digest(), a.clone().digest());
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 64);
    }

    #[test]
    fn coupling_single_cell() {
        let cfg = ExperimentConfig {
            n_grid: vec![10],
            m_grid: vec![32],
            trials: 1,
            test_points: 16,
            ..ExperimentConfig::defaults(ExperimentKind::Coupling, 5)
        };
        let r = run_coupling_experiment(&cfg).unwrap();
        assert_eq!(r.rows.len(), 1);
        assert!(r.fits.is_empty());
        let lines: Vec<&str> = r.csv.lines().collect();
        assert!(lines[0].starts_with("# cfg_digest="));
        assert_eq!(lines[1], CouplingRow::HEADER);
        assert_eq!(lines.len(), 3);
    }

    #[test]
    fn convergence_rows_and_start() {
        let cfg = small(ExperimentKind::Convergence);
        let r = run_convergence_experiment(&cfg).unwrap();
        assert_eq!(r.rows.len(), 2 * 2 * (cfg.steps + 1));
        let target = cfg.target_spec().unwrap();
        let seed = r.seeds[0].seed;
        let data = generate_dataset(12, 3, &target, &noise(&cfg, 0.5).unwrap(), seed).unwrap();
        let mean_sq = data.targets.iter().map(|y| y * y).sum::<f64>() / 12.0;
        assert!((r.rows[0].risk - mean_sq).abs() < 1e-15);
        assert_eq!(r.rows[0].envelope, data.target_bound.powi(2));
    }

    #[test]
    fn rate_preconditions() {
        let one = ExperimentConfig {
            n_grid: vec![32],
            ..small(ExperimentKind::Rate)
        };
        assert!(run_rate_experiment(&one).is_err());
        let noiseless = ExperimentConfig {
            sigma_grid: vec![0.0],
            ..small(ExperimentKind::Rate)
        };
        assert!(run_rate_experiment(&noiseless).is_err());
    }

    #[test]
    fn rate_small_run() {
        let cfg = ExperimentConfig {
            net_width: Some(64),
            ..small(ExperimentKind::Rate)
        };
        let r = run_rate_experiment(&cfg).unwrap();
        assert_eq!(r.rows.len(), 4);
        assert_eq!(r.fits.len(), 2);
        assert!(r.rows.iter().all(|row| row.excess_risk >= 0.0 && row.net_excess_risk.is_some()));
    }

    #[test]
    fn spectrum_sorted_and_trace() {
        let cfg = ExperimentConfig {
            n_grid: vec![64],
            ..small(ExperimentKind::Spectrum)
        };
        let r = run_spectrum_experiment(&cfg).unwrap();
        for trial in 0..2 {
            let v: Vec<f64> = r.rows.iter().filter(|x| x.trial == trial).map(|x| x.lambda_k_over_n).collect();
            assert!(v.windows(2).all(|w| w[0] >= w[1]));
            assert!((v.iter().sum::<f64>() - 0.5).abs() < 1e-9);
        }
        assert_eq!(r.fits.len(), 1);
        assert_eq!(r.fits[0].fit.points, 13);
    }

    #[test]
    fn stopping_rows_hold_flow_radius() {
        let cfg = ExperimentConfig {
            sigma_grid: vec![0.5, 1.0],
            ..small(ExperimentKind::Stopping)
        };
        let r = run_stopping_experiment(&cfg).unwrap();
        assert_eq!(r.rows.len(), 2 * 2 * 2);
        assert!(r.rows.iter().all(|row| row.flow_radius_ok));
        assert_eq!(r.fits.len(), 2);
    }

    #[test]
    fn wrong_kind_rejected() {
        let cfg = small(ExperimentKind::Rate);
        assert!(run_spectrum_experiment(&cfg).is_err());
    }

    #[test]
    fn reruns_are_identical() {
        let cfg = small(ExperimentKind::Stopping);
        assert_eq!(run_experiment(&cfg).unwrap().csv, run_experiment(&cfg).unwrap().csv);
    }
}
