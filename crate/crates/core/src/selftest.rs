//! Fast invariant checks run by the `selftest` subcommand.

use crate::bounds::width_requirement;
use crate::data::{generate_dataset, sample_sphere, NoiseKind, NoiseSpec, TargetKind, TargetSpec};
use crate::error::Result;
use crate::experiments::{run_experiment, ExperimentConfig, ExperimentKind};
use crate::net::{grad_risk, init_params, risk, train_gd};
use crate::ntk::{kappa_of_cosine, kernel_matrix, kls_closed_form_onsample, kls_gd_run};
use crate::spectral::{eigvals_symmetric, rwy_stopping_time, SpectrumView};

#[derive(Clone, Debug)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
}

fn zero_init() -> Result<bool> {
    let x = sample_sphere(20, 3, 1)?;
    let p = init_params(32, 3, 2)?;
    let ok = x.row_iter().all(|r| p.forward(r).map(|v| v.abs() <= 1e-10).unwrap_or(false));
    Ok(ok)
}

fn kernel_values() -> Result<bool> {
    Ok((kappa_of_cosine(1.0) - 0.5).abs() <= 1e-12 && (kappa_of_cosine(0.5) - 1.0 / 6.0).abs() <= 1e-12)
}

fn gradient_bound() -> Result<bool> {
    let target = TargetSpec::random(TargetKind::AbsLinear, 3, 1, 1.0, 4)?;
    let data = generate_dataset(8, 3, &target, &NoiseSpec::new(NoiseKind::Rademacher, 0.5)?, 4)?;
    let p = init_params(64, 3, 5)?;
    let traj = train_gd(&p, &data, 0.5, 30, 0)?;
    let g = grad_risk(&p, &data)?.frobenius_norm();
    Ok(g * g <= 4.0 * risk(&p, &data)? + 1e-12
        && traj.records.iter().all(|r| r.grad_norm_sq <= 4.0 * r.risk + 1e-12))
}

fn kls_closed_form() -> Result<bool> {
    let x = sample_sphere(16, 3, 6)?;
    let k = kernel_matrix(&x)?;
    let y: Vec<f64> = (0..16).map(|i| (i as f64 * 0.37).sin()).collect();
    let it = kls_gd_run(k.gram(), &y, 0.25, 40)?;
    let cf = kls_closed_form_onsample(k.gram(), &y, 0.25, 40)?;
    let err: f64 = it.predictions.iter().zip(&cf).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(err <= 1e-10)
}

fn spectrum_trace() -> Result<bool> {
    let x = sample_sphere(40, 3, 7)?;
    let vals = eigvals_symmetric(kernel_matrix(&x)?.gram())?;
    Ok((vals.iter().sum::<f64>() / 40.0 - 0.5).abs() <= 1e-9)
}

fn flow_radius() -> Result<bool> {
    let x = sample_sphere(32, 3, 8)?;
    let view = SpectrumView::from_matrix(kernel_matrix(&x)?.gram())?;
    let d = rwy_stopping_time(&view, 0.25, 0.5)?;
    Ok(d.flow_radius_holds())
}

fn width_example() -> Result<bool> {
    Ok(width_requirement(1.0, 1.0, 1.0, 1.0)? == 3_418_801.0)
}

fn determinism() -> Result<bool> {
    let cfg = ExperimentConfig {
        n_grid: vec![16, 24],
        sigma_grid: vec![0.5],
        trials: 2,
        ..ExperimentConfig::defaults(ExperimentKind::Stopping, 9)
    };
    Ok(run_experiment(&cfg)?.csv == run_experiment(&cfg)?.csv)
}

pub fn run_all() -> Vec<Check> {
    let checks: [(&'static str, fn() -> Result<bool>); 8] = [
        ("zero_init", zero_init),
        ("kernel_values", kernel_values),
        ("gradient_bound", gradient_bound),
        ("kls_closed_form", kls_closed_form),
        ("spectrum_trace", spectrum_trace),
        ("flow_radius", flow_radius),
        ("width_example", width_example),
        ("determinism", determinism),
    ];
    checks
        .iter()
        .map(|&(name, f)| Check {
            name,
            passed: f().unwrap_or(false),
        })
        .collect()
}
