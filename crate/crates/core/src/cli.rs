//! Command-line front end: flag and config-file merging, dispatch, and
//! CSV plus JSON manifest output.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::data::{NoiseKind, TargetKind};
use crate::error::{Error, Result};
use crate::experiments::{run_experiment, ExperimentConfig, ExperimentKind, RunOutput, VERSION};
use crate::ntk::kappa_of_cosine;

#[derive(Parser, Debug)]
#[command(name = "ntkstop", version, about = "NTK early-stopping experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sup-gap between network and kernel predictors across widths.
    Coupling(ExpArgs),
    /// Training risk against the linear-convergence envelope.
    Convergence(ExpArgs),
    /// Excess risk of stopped kernel GD against sample size.
    Rate(ExpArgs),
    /// Eigenvalue decay of the kernel matrix.
    Spectrum(ExpArgs),
    /// Stopping step and critical radius over a grid of n and sigma.
    Stopping(ExpArgs),
    /// Print the kernel value at a given cosine.
    KernelEval {
        #[arg(long, allow_hyphen_values = true)]
        dot: String,
    },
    /// Run the built-in invariant checks.
    Selftest,
}

#[derive(Args, Debug, Default)]
struct ExpArgs {
    /// Master seed (required, here or in the config file).
    #[arg(long)]
    seed: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Flat `key = value` config file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n_grid: Option<String>,
    #[arg(long)]
    m_grid: Option<String>,
    #[arg(long)]
    d: Option<String>,
    #[arg(long)]
    eta: Option<String>,
    #[arg(long)]
    sigma: Option<String>,
    #[arg(long)]
    sigma_grid: Option<String>,
    /// abs-linear or max-of-linears.
    #[arg(long)]
    target: Option<String>,
    #[arg(long)]
    lipschitz: Option<String>,
    #[arg(long)]
    directions: Option<String>,
    /// rademacher or uniform.
    #[arg(long)]
    noise: Option<String>,
    #[arg(long)]
    trials: Option<String>,
    #[arg(long)]
    steps: Option<String>,
    #[arg(long)]
    mc_samples: Option<String>,
    #[arg(long)]
    test_points: Option<String>,
    #[arg(long)]
    k_lo: Option<String>,
    #[arg(long)]
    k_hi: Option<String>,
    #[arg(long)]
    net_width: Option<String>,
    #[arg(long)]
    nu: Option<String>,
    #[arg(long)]
    c_lip: Option<String>,
    #[arg(long)]
    c_gap: Option<String>,
}

impl ExpArgs {
    fn entries(&self) -> Vec<(&'static str, &str)> {
        let all = [
            ("seed", &self.seed),
            ("n-grid", &self.n_grid),
            ("m-grid", &self.m_grid),
            ("d", &self.d),
            ("eta", &self.eta),
            ("sigma", &self.sigma),
            ("sigma-grid", &self.sigma_grid),
            ("target", &self.target),
            ("lipschitz", &self.lipschitz),
            ("directions", &self.directions),
            ("noise", &self.noise),
            ("trials", &self.trials),
            ("steps", &self.steps),
            ("mc-samples", &self.mc_samples),
            ("test-points", &self.test_points),
            ("k-lo", &self.k_lo),
            ("k-hi", &self.k_hi),
            ("net-width", &self.net_width),
            ("nu", &self.nu),
            ("c-lip", &self.c_lip),
            ("c-gap", &self.c_gap),
        ];
        all.into_iter()
            .filter_map(|(k, v)| v.as_deref().map(|v| (k, v)))
            .collect()
    }
}

const KEYS: &[&str] = &[
    "seed", "n-grid", "m-grid", "d", "eta", "sigma", "sigma-grid", "target", "lipschitz", "directions", "noise",
    "trials", "steps", "mc-samples", "test-points", "k-lo", "k-hi", "net-width", "nu", "c-lip", "c-gap",
];

/// Where each configuration value came from, recorded in the manifest.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Sources {
    pub config_file: Option<PathBuf>,
    pub file: BTreeMap<String, String>,
    pub flags: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Invocation {
    Experiment {
        cfg: ExperimentConfig,
        out: PathBuf,
        sources: Sources,
    },
    KernelEval {
        dot: f64,
    },
    Selftest,
}

#[derive(Debug)]
pub enum CliError {
    /// Help or version output requested; not a failure.
    Display(String),
    Usage(String),
    Run(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Run(e)
    }
}

impl CliError {
    /// One JSON object on one line.
    pub fn machine_line(&self) -> String {
        let (kind, message) = match self {
            CliError::Display(s) => ("display", s.clone()),
            CliError::Usage(s) => ("usage", s.clone()),
            CliError::Run(e) => (e.kind(), e.to_string()),
        };
        json!({ "error": kind, "message": message }).to_string()
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Display(_) => 0,
            CliError::Usage(_) => 2,
            CliError::Run(_) => 1,
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn parse_f64(key: &str, v: &str) -> std::result::Result<f64, CliError> {
    let x: f64 = v
        .trim()
        .parse()
        .map_err(|_| usage(format!("--{key}: expected a number, got `{v}`")))?;
    if !x.is_finite() {
        return Err(usage(format!("--{key}: expected a finite number, got `{v}`")));
    }
    Ok(x)
}

/// Nonnegative integer; scientific notation is accepted when the value is integral.
fn parse_count(key: &str, v: &str) -> std::result::Result<u64, CliError> {
    let v = v.trim();
    if let Ok(n) = v.parse::<u64>() {
        return Ok(n);
    }
    let x = parse_f64(key, v)?;
    if x >= 0.0 && x.fract() == 0.0 && x < 2f64.powi(64) {
        Ok(x as u64)
    } else {
        Err(usage(format!("--{key}: expected a nonnegative integer, got `{v}`")))
    }
}

fn parse_usize(key: &str, v: &str) -> std::result::Result<usize, CliError> {
    usize::try_from(parse_count(key, v)?).map_err(|_| usage(format!("--{key}: value too large")))
}

fn parse_list<T>(
    key: &str,
    v: &str,
    f: impl Fn(&str, &str) -> std::result::Result<T, CliError>,
) -> std::result::Result<Vec<T>, CliError> {
    v.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| f(key, s))
        .collect()
}

fn apply(cfg: &mut ExperimentConfig, seed: &mut Option<u64>, key: &str, v: &str) -> std::result::Result<(), CliError> {
    match key {
        "seed" => *seed = Some(parse_count(key, v)?),
        "n-grid" => cfg.n_grid = parse_list(key, v, parse_usize)?,
        "m-grid" => cfg.m_grid = parse_list(key, v, parse_usize)?,
        "d" => cfg.d = parse_usize(key, v)?,
        "eta" => {
            let eta = parse_f64(key, v)?;
            if !(eta > 0.0 && eta <= 0.5) {
                return Err(usage(format!("--eta: step size must lie in (0, 1/2], got {eta}")));
            }
            cfg.eta = eta;
        }
        "sigma" => cfg.sigma_grid = vec![parse_f64(key, v)?],
        "sigma-grid" => cfg.sigma_grid = parse_list(key, v, parse_f64)?,
        "target" => {
            cfg.target = match v.trim() {
                "abs-linear" => TargetKind::AbsLinear,
                "max-of-linears" => TargetKind::MaxOfLinears,
                other => return Err(usage(format!("--target: unknown target `{other}`"))),
            }
        }
        "lipschitz" => cfg.lipschitz = parse_f64(key, v)?,
        "directions" => cfg.directions = parse_usize(key, v)?,
        "noise" => {
            cfg.noise = match v.trim() {
                "rademacher" => NoiseKind::Rademacher,
                "uniform" => NoiseKind::Uniform,
                other => return Err(usage(format!("--noise: unknown noise `{other}`"))),
            }
        }
        "trials" => cfg.trials = parse_usize(key, v)?,
        "steps" => cfg.steps = parse_usize(key, v)?,
        "mc-samples" => cfg.mc_samples = parse_usize(key, v)?,
        "test-points" => cfg.test_points = parse_usize(key, v)?,
        "k-lo" => cfg.k_lo = parse_usize(key, v)?,
        "k-hi" => cfg.k_hi = Some(parse_usize(key, v)?),
        "net-width" => cfg.net_width = Some(parse_usize(key, v)?),
        "nu" => cfg.nu = parse_f64(key, v)?,
        "c-lip" => cfg.constants.c_lip = parse_f64(key, v)?,
        "c-gap" => cfg.constants.c_gap = parse_f64(key, v)?,
        other => return Err(usage(format!("unknown key `{other}`"))),
    }
    Ok(())
}

/// Parses `key = value` lines; `#` starts a comment. Keys may use `-` or `_`.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
        let key = k.trim().replace('_', "-");
        if !KEYS.contains(&key.as_str()) {
            return Err(Error::Config(format!("line {}: unknown key `{}`", i + 1, k.trim())));
        }
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key `{key}`", i + 1)));
        }
    }
    if out.contains_key("sigma") && out.contains_key("sigma-grid") {
        return Err(Error::Config("both `sigma` and `sigma-grid` given".into()));
    }
    Ok(out)
}

fn experiment(kind: ExperimentKind, args: &ExpArgs) -> std::result::Result<Invocation, CliError> {
    let flags = args.entries();
    if args.sigma.is_some() && args.sigma_grid.is_some() {
        return Err(usage("conflicting flags --sigma and --sigma-grid"));
    }
    let mut sources = Sources::default();
    let mut cfg = ExperimentConfig::defaults(kind, 0);
    let mut seed = None;
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.clone(),
            source,
        })?;
        let file = parse_config_text(&text)?;
        for (k, v) in &file {
            apply(&mut cfg, &mut seed, k, v)?;
        }
        sources.config_file = Some(path.clone());
        sources.file = file;
    }
    for (k, v) in flags {
        apply(&mut cfg, &mut seed, k, v)?;
        sources.flags.insert(k.to_string(), v.to_string());
    }
    cfg.seed = seed.ok_or_else(|| usage("missing required --seed"))?;
    cfg.validate()?;
    Ok(Invocation::Experiment {
        cfg,
        out: args.out.clone().unwrap_or_else(|| PathBuf::from("results")),
        sources,
    })
}

pub fn parse_invocation<I, T>(argv: I) -> std::result::Result<Invocation, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv).map_err(|e| {
        use clap::error::ErrorKind;
        match e.kind() {
            ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                CliError::Display(e.to_string())
            }
            _ => {
                let text = e.to_string();
                let first = text.lines().next().unwrap_or("").trim_start_matches("error: ").to_string();
                CliError::Usage(first)
            }
        }
    })?;
    match cli.command {
        Command::Coupling(a) => experiment(ExperimentKind::Coupling, &a),
        Command::Convergence(a) => experiment(ExperimentKind::Convergence, &a),
        Command::Rate(a) => experiment(ExperimentKind::Rate, &a),
        Command::Spectrum(a) => experiment(ExperimentKind::Spectrum, &a),
        Command::Stopping(a) => experiment(ExperimentKind::Stopping, &a),
        Command::KernelEval { dot } => {
            let c = parse_f64("dot", &dot)?;
            if !(-1.0..=1.0).contains(&c) {
                return Err(usage(format!("--dot: cosine must lie in [-1, 1], got {c}")));
            }
            Ok(Invocation::KernelEval { dot: c })
        }
        Command::Selftest => Ok(Invocation::Selftest),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes `<kind>.csv` and `<kind>.manifest.json` into `out`; returns their paths.
pub fn write_outputs(
    cfg: &ExperimentConfig,
    sources: &Sources,
    out: &Path,
    output: &RunOutput,
    elapsed_seconds: f64,
) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let csv_path = out.join(format!("{}.csv", cfg.kind.name()));
    std::fs::write(&csv_path, &output.csv).map_err(io_err(&csv_path))?;
    let manifest = json!({
        "version": VERSION,
        "kind": cfg.kind.name(),
        "cfg": cfg,
        "cfg_digest": cfg.digest(),
        "sources": sources,
        "seeds": output.seeds,
        "fits": output.fits,
        "csv": csv_path.file_name().map(|s| s.to_string_lossy().into_owned()),
        "csv_sha256": sha256_hex(output.csv.as_bytes()),
        "timing": { "elapsed_seconds": elapsed_seconds },
    });
    let manifest_path = out.join(format!("{}.manifest.json", cfg.kind.name()));
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&manifest_path, text + "\n").map_err(io_err(&manifest_path))?;
    Ok((csv_path, manifest_path))
}

/// Executes an invocation, printing results to stdout.
pub fn run(inv: Invocation) -> Result<()> {
    match inv {
        Invocation::KernelEval { dot } => {
            println!("{}", kappa_of_cosine(dot));
            Ok(())
        }
        Invocation::Selftest => {
            let results = crate::selftest::run_all();
            let failed: Vec<_> = results.iter().filter(|r| !r.passed).collect();
            for r in &results {
                println!("{} {}", if r.passed { "PASS" } else { "FAIL" }, r.name);
            }
            println!("selftest: {} passed, {} failed", results.len() - failed.len(), failed.len());
            if failed.is_empty() {
                Ok(())
            } else {
                Err(Error::Config(format!("{} selftest checks failed", failed.len())))
            }
        }
        Invocation::Experiment { cfg, out, sources } => {
            let start = Instant::now();
            let output = run_experiment(&cfg)?;
            let elapsed = start.elapsed().as_secs_f64();
            let (csv, manifest) = write_outputs(&cfg, &sources, &out, &output, elapsed)?;
            for f in &output.fits {
                println!(
                    "fit {} slope={:.4} intercept={:.4} r2={:.4} points={}",
                    f.name, f.fit.slope, f.fit.intercept, f.fit.r_squared, f.fit.points
                );
            }
            println!("wrote {} and {}", csv.display(), manifest.display());
            Ok(())
        }
    }
}

/// Full entry point; returns the process exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let result = parse_invocation(argv).and_then(|inv| run(inv).map_err(CliError::Run));
    match result {
        Ok(()) => 0,
        Err(CliError::Display(text)) => {
            print!("{text}");
            0
        }
        Err(e) => {
            eprintln!("{}", e.machine_line());
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> std::result::Result<Invocation, CliError> {
        parse_invocation(std::iter::once("ntkstop").chain(args.iter().copied()))
    }

    #[test]
    fn rate_invocation() {
        let inv = parse(&["rate", "--n-grid", "32,64,128", "--d", "3", "--sigma", "0.5", "--seed", "7", "--out", "results/"])
            .unwrap();
        match inv {
            Invocation::Experiment { cfg, out, sources } => {
                assert_eq!(cfg.kind, ExperimentKind::Rate);
                assert_eq!(cfg.n_grid, vec![32, 64, 128]);
                assert_eq!(cfg.sigma_grid, vec![0.5]);
                assert_eq!(cfg.seed, 7);
                assert_eq!(out, PathBuf::from("results/"));
                assert_eq!(sources.flags.len(), 4);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_seed_names_the_flag() {
        let e = parse(&["rate", "--n-grid", "32,64"]).unwrap_err();
        assert!(matches!(&e, CliError::Usage(m) if m.contains("seed")));
        assert!(e.machine_line().contains("seed"));
        assert_ne!(e.exit_code(), 0);
    }

    #[test]
    fn eta_out_of_range() {
        let e = parse(&["rate", "--seed", "1", "--eta", "0.9"]).unwrap_err();
        assert!(matches!(&e, CliError::Usage(m) if m.contains("eta")));
        assert!(parse(&["rate", "--seed", "1", "--eta", "5e-1"]).is_ok());
    }

    #[test]
    fn conflicts_and_unknowns() {
        assert!(parse(&["stopping", "--seed", "1", "--sigma", "0.5", "--sigma-grid", "0.5,1"]).is_err());
        assert!(matches!(parse(&["frobnicate"]), Err(CliError::Usage(_))));
        assert!(matches!(parse(&["rate", "--seed", "1", "--target", "cubic"]), Err(CliError::Usage(_))));
        assert!(matches!(parse(&["--help"]), Err(CliError::Display(_))));
    }

    #[test]
    fn scientific_counts() {
        match parse(&["rate", "--seed", "1", "--mc-samples", "1e4"]).unwrap() {
            Invocation::Experiment { cfg, .. } => assert_eq!(cfg.mc_samples, 10_000),
            other => panic!("{other:?}"),
        }
        assert!(parse(&["rate", "--seed", "1", "--trials", "2.5"]).is_err());
    }

    #[test]
    fn kernel_eval() {
        assert_eq!(parse(&["kernel-eval", "--dot", "0.5"]).unwrap(), Invocation::KernelEval { dot: 0.5 });
        assert_eq!(parse(&["kernel-eval", "--dot", "-0.5"]).unwrap(), Invocation::KernelEval { dot: -0.5 });
        assert!(parse(&["kernel-eval", "--dot", "1.5"]).is_err());
    }

    #[test]
    fn config_text() {
        let text = "# comment\nn_grid = 32, 64\nsigma = 0.25 # inline\n\nseed=9\n";
        let map = parse_config_text(text).unwrap();
        assert_eq!(map["n-grid"], "32, 64");
        assert_eq!(map["sigma"], "0.25");
        assert!(parse_config_text("seed = 1\nseed = 2\n").is_err());
        assert!(parse_config_text("bogus = 1\n").is_err());
        assert!(parse_config_text("seed 1\n").is_err());
        assert!(parse_config_text("sigma = 1\nsigma-grid = 1,2\n").is_err());
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "seed = 3\ntrials = 4\nsigma-grid = 0.25,0.5\n").unwrap();
        let inv = parse(&["stopping", "--config", path.to_str().unwrap(), "--trials", "2"]).unwrap();
        match inv {
            Invocation::Experiment { cfg, sources, .. } => {
                assert_eq!(cfg.seed, 3);
                assert_eq!(cfg.trials, 2);
                assert_eq!(cfg.sigma_grid, vec![0.25, 0.5]);
                assert_eq!(sources.file["trials"], "4");
                assert_eq!(sources.flags["trials"], "2");
            }
            other => panic!("{other:?}"),
        }
    }
}
