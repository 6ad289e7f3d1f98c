//! Experiment runner for the Kac system-plus-reservoir laboratory.
//!
//! Every subcommand accepts `--config <json>` whose values are overridden by
//! the equivalent command-line flags. CSV bodies are byte-reproducible for a
//! fixed config and seed; wall-clock data lives only in the JSON sidecar.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use kac_core::dsmc::{fit_rate_blocked, ParticleEnsemble};
use kac_core::estimators::{
    gauss_reference_logdensity, relative_entropy_knn, SphereMarginal, DEFAULT_K,
};
use kac_core::gaussian::{check_ou_identities, GaussianMixture};
use kac_core::model::{derive_params, local_perturbation_rates, CollisionMeasure, KacParams};
use kac_core::series::{
    second_moment_flow, verify_entropy_bound, verify_information_bound, SeriesConfig,
};
use kac_core::spherical::{
    check_pointwise_inequality, random_sphere_point, sigma0_direction_average, BlockRotation,
    ExpQuadratic,
};
use kac_core::sum_rule::{
    brute_force_k, closed_form_ck, decay_bound_gauss, decay_bound_sphere,
    DEFAULT_BRUTE_FORCE_BUDGET,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Exit code for a failed numerical check (distinct from config errors).
const EXIT_CHECK_FAILED: u8 = 3;

#[derive(Parser)]
#[command(name = "kac", version, about = "Kac system-plus-reservoir laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compare the closed-form decay coefficients with brute-force
    /// enumeration of collision histories.
    Sumrule(SumruleArgs),
    /// Evolve Gaussian initial data through the collision-history expansion
    /// and check the entropy/information decay bounds.
    Series(SeriesArgs),
    /// Stochastic jump-chain simulation with observable and checkpoint
    /// output.
    Dsmc(DsmcArgs),
    /// Nearest-neighbor relative-entropy estimation from a binary
    /// checkpoint.
    Entropy(EntropyArgs),
    /// Smoothing-flow identity suite: contractivity, derivative and
    /// integral identities, log-Sobolev.
    OuCheck(OuCheckArgs),
    /// Randomized verification of the spherical inequality chain.
    SigmaCheck(SigmaCheckArgs),
    /// Tabulate the decay bound factors over a time grid.
    Bounds(BoundsArgs),
}

fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_grid(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|s| s.trim().parse::<f64>().context("bad time grid entry"))
        .collect()
}

fn parse_measure(text: &str) -> Result<CollisionMeasure> {
    match text {
        "uniform" => Ok(CollisionMeasure::uniform()),
        "pi-half" => Ok(CollisionMeasure::atom_pi_half()),
        other => {
            if let Some(theta) = other.strip_prefix("symmetric:") {
                let theta: f64 = theta.parse().context("bad angle")?;
                Ok(CollisionMeasure::symmetric_atoms(theta)?)
            } else if let Some(json) = other.strip_prefix("json:") {
                Ok(CollisionMeasure::from_json(json)?)
            } else {
                bail!("unknown measure {other:?}; use uniform | pi-half | symmetric:<theta> | json:<spec>")
            }
        }
    }
}

/// Model flags shared by most subcommands. Either `--lambda` (single-system
/// local-perturbation rates) or the explicit rate triple is used.
#[derive(Args, Clone, Serialize, Deserialize, Default)]
struct ModelArgs {
    #[arg(long)]
    #[serde(default)]
    m: Option<usize>,
    #[arg(long)]
    #[serde(default)]
    n: Option<usize>,
    /// Derive all rates from a single coupling (Remark-1.2 style).
    #[arg(long)]
    #[serde(default)]
    lambda: Option<f64>,
    #[arg(long = "lambda-s")]
    #[serde(default)]
    lambda_s: Option<f64>,
    #[arg(long = "lambda-r")]
    #[serde(default)]
    lambda_r: Option<f64>,
    #[arg(long)]
    #[serde(default)]
    mu: Option<f64>,
    /// Collision measure: uniform | pi-half | symmetric:<theta> | json:<spec>
    #[arg(long)]
    #[serde(default)]
    nu: Option<String>,
}

impl ModelArgs {
    fn merge(&self, base: &ModelArgs) -> ModelArgs {
        ModelArgs {
            m: self.m.or(base.m),
            n: self.n.or(base.n),
            lambda: self.lambda.or(base.lambda),
            lambda_s: self.lambda_s.or(base.lambda_s),
            lambda_r: self.lambda_r.or(base.lambda_r),
            mu: self.mu.or(base.mu),
            nu: self.nu.clone().or_else(|| base.nu.clone()),
        }
    }

    fn build(&self) -> Result<(KacParams, CollisionMeasure)> {
        let m = self.m.context("--m is required")?;
        let n = self.n.context("--n is required")?;
        let nu = parse_measure(self.nu.as_deref().unwrap_or("uniform"))?;
        let (ls, lr, mu) = if let Some(lambda) = self.lambda {
            local_perturbation_rates(lambda, m, n)?
        } else {
            (
                self.lambda_s.unwrap_or(0.0),
                self.lambda_r.unwrap_or(0.0),
                self.mu.context("--mu (or --lambda) is required")?,
            )
        };
        let params = derive_params(m, n, ls, lr, mu, &nu)?;
        Ok((params, nu))
    }
}

/// Reads a config file (if any) and returns the file-backed struct to merge
/// flag values into.
fn load_config<T: for<'de> Deserialize<'de> + Default>(path: &Option<PathBuf>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

struct Report {
    header: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

impl Report {
    fn csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Writes the CSV (to the file or stdout) and, for file output, a JSON
/// sidecar with the fully merged config, seed, version, and wall time.
fn emit(
    out: &Option<PathBuf>,
    report: &Report,
    config: serde_json::Value,
    seed: Option<u64>,
    started: Instant,
) -> Result<()> {
    let body = report.csv();
    match out {
        None => print!("{body}"),
        Some(path) => {
            if let Some(dir) = path.parent() {
                if !dir.as_os_str().is_empty() {
                    fs::create_dir_all(dir)?;
                }
            }
            fs::write(path, &body)?;
            let sidecar = serde_json::json!({
                "config": config,
                "seed": seed,
                "version": env!("CARGO_PKG_VERSION"),
                "wall_time_s": started.elapsed().as_secs_f64(),
            });
            let mut sc_path = path.clone();
            let ext = format!(
                "{}.json",
                sc_path.extension().map(|e| e.to_string_lossy().into_owned()).unwrap_or_default()
            );
            sc_path.set_extension(ext.trim_start_matches('.'));
            if sc_path == *path {
                sc_path.set_extension("sidecar.json");
            }
            fs::write(sc_path, serde_json::to_string_pretty(&sidecar)?)?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// sumrule

#[derive(Args, Clone, Serialize, Deserialize, Default)]
struct SumruleArgs {
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArgs,
    #[arg(long)]
    #[serde(default)]
    kmax: Option<u32>,
    /// Cross-check against exhaustive history enumeration.
    #[arg(long = "brute-force", default_value_t = false)]
    #[serde(default)]
    brute_force: bool,
    #[arg(long)]
    #[serde(default)]
    out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

fn run_sumrule(args: &SumruleArgs) -> Result<bool> {
    let started = Instant::now();
    let base: SumruleArgs = load_config(&args.config)?;
    let model = args.model.merge(&base.model);
    let kmax = args.kmax.or(base.kmax).unwrap_or(4);
    let brute = args.brute_force || base.brute_force;
    let out = args.out.clone().or(base.out);
    let (params, nu) = model.build()?;

    let mut rows = Vec::new();
    let mut all_ok = true;
    for k in 0..=kmax {
        let ck = closed_form_ck(&params, k);
        let mut row = vec![k.to_string(), fmt(ck)];
        if brute {
            let kmat = brute_force_k(&params, &nu, k, DEFAULT_BRUTE_FORCE_BUDGET)?;
            let mut err: f64 = 0.0;
            for i in 0..params.m {
                for j in 0..params.m {
                    let expect = if i == j { ck } else { 0.0 };
                    err = err.max((kmat[(i, j)] - expect).abs());
                }
            }
            all_ok &= err < 1e-10;
            row.push(fmt(err));
        }
        rows.push(row);
    }
    let header = if brute {
        vec!["k", "c_k", "abs_error"]
    } else {
        vec!["k", "c_k"]
    };
    emit(&out, &Report { header, rows }, serde_json::to_value(args)?, None, started)?;
    Ok(all_ok)
}

// ---------------------------------------------------------------------------
// series

#[derive(Args, Clone, Serialize, Deserialize, Default)]
struct SeriesArgs {
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArgs,
    /// Initial 1-D Gaussian system variance a / (2 pi).
    #[arg(long)]
    #[serde(default)]
    a: Option<f64>,
    #[arg(long = "t-grid")]
    #[serde(default)]
    t_grid: Option<String>,
    #[arg(long = "tail-epsilon")]
    #[serde(default)]
    tail_epsilon: Option<f64>,
    /// enumerate | sample
    #[arg(long)]
    #[serde(default)]
    mode: Option<String>,
    #[arg(long)]
    #[serde(default)]
    histories: Option<usize>,
    #[arg(long)]
    #[serde(default)]
    seed: Option<u64>,
    #[arg(long)]
    #[serde(default)]
    out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

fn run_series(args: &SeriesArgs) -> Result<bool> {
    let started = Instant::now();
    let base: SeriesArgs = load_config(&args.config)?;
    let model = args.model.merge(&base.model);
    let (params, nu) = model.build()?;
    if params.m != 1 {
        bail!("series functionals are wired for M = 1 initial data");
    }
    let a = args.a.or(base.a).unwrap_or(2.0);
    let grid = parse_grid(args.t_grid.as_deref().or(base.t_grid.as_deref()).unwrap_or("0.25,0.5,1,2"))?;
    let tail = args.tail_epsilon.or(base.tail_epsilon).unwrap_or(1e-10);
    let seed = args.seed.or(base.seed).unwrap_or(0);
    let mode = args.mode.clone().or_else(|| base.mode.clone()).unwrap_or_else(|| "enumerate".into());
    let t_max = grid.iter().cloned().fold(0.0f64, f64::max);
    let cfg = match mode.as_str() {
        "enumerate" => SeriesConfig::enumerate(&params, t_max, tail)?,
        "sample" => SeriesConfig::sample(
            &params,
            t_max,
            tail,
            args.histories.or(base.histories).unwrap_or(10_000),
            seed,
        )?,
        other => bail!("unknown mode {other:?}"),
    };
    let f0 = GaussianMixture::gauss_1d(a);
    let s_report = verify_entropy_bound(&params, &f0, &nu, &cfg, &grid)?;
    let i_report = verify_information_bound(&params, &f0, &nu, &cfg, &grid)?;

    let mut rows = Vec::new();
    for (s, i) in s_report.checks.iter().zip(&i_report.checks) {
        rows.push(vec![
            fmt(s.t),
            fmt(s.value),
            fmt(i.value),
            fmt(s.bound_factor),
            fmt(s.bound),
            fmt(i.bound),
            fmt(s.covered_mass),
            s.components.to_string(),
        ]);
    }
    let report = Report {
        header: vec![
            "t", "S", "I", "bound_factor", "S_bound", "I_bound", "covered_mass", "components",
        ],
        rows,
    };
    emit(&args.out.clone().or(base.out), &report, serde_json::to_value(args)?, Some(seed), started)?;
    Ok(s_report.all_pass && i_report.all_pass)
}

// ---------------------------------------------------------------------------
// dsmc

#[derive(Args, Clone, Serialize, Deserialize, Default)]
struct DsmcArgs {
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArgs,
    /// gauss | sphere
    #[arg(long)]
    #[serde(default)]
    geometry: Option<String>,
    /// Initial 1-D Gaussian system variance a / (2 pi) (gauss geometry).
    #[arg(long)]
    #[serde(default)]
    a: Option<f64>,
    /// Tilt strength for the sphere initial factor exp(-tilt v_1^2 / 2).
    #[arg(long)]
    #[serde(default)]
    tilt: Option<f64>,
    #[arg(long)]
    #[serde(default)]
    replicas: Option<usize>,
    #[arg(long = "t-grid")]
    #[serde(default)]
    t_grid: Option<String>,
    #[arg(long)]
    #[serde(default)]
    seed: Option<u64>,
    /// Directory for binary marginal checkpoints (one per grid time).
    #[arg(long = "checkpoint-dir")]
    #[serde(default)]
    checkpoint_dir: Option<PathBuf>,
    /// Fit the relaxation rate and compare with the model rate.
    #[arg(long = "fit-rate", default_value_t = false)]
    #[serde(default)]
    fit_rate: bool,
    #[arg(long)]
    #[serde(default)]
    out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

fn write_checkpoint(
    dir: &Path,
    tag: &str,
    t: f64,
    seed: u64,
    params: &KacParams,
    samples: &[Vec<f64>],
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let bin = dir.join(format!("marginal_{tag}.bin"));
    let mut file = fs::File::create(&bin)?;
    for row in samples {
        for &x in row {
            file.write_all(&x.to_le_bytes())?;
        }
    }
    let sidecar = serde_json::json!({
        "rows": samples.len(),
        "cols": samples.first().map(|r| r.len()).unwrap_or(0),
        "dtype": "f64-le-row-major",
        "time": t,
        "seed": seed,
        "m": params.m,
        "n": params.n,
    });
    fs::write(
        dir.join(format!("marginal_{tag}.json")),
        serde_json::to_string_pretty(&sidecar)?,
    )?;
    Ok(())
}

fn run_dsmc(args: &DsmcArgs) -> Result<bool> {
    let started = Instant::now();
    let base: DsmcArgs = load_config(&args.config)?;
    let model = args.model.merge(&base.model);
    let (params, nu) = model.build()?;
    let geometry = args
        .geometry
        .clone()
        .or_else(|| base.geometry.clone())
        .unwrap_or_else(|| "gauss".into());
    let replicas = args.replicas.or(base.replicas).unwrap_or(10_000);
    let seed = args.seed.or(base.seed).unwrap_or(0);
    let grid = parse_grid(
        args.t_grid.as_deref().or(base.t_grid.as_deref()).unwrap_or("0.5,1,2"),
    )?;
    let checkpoint_dir = args.checkpoint_dir.clone().or(base.checkpoint_dir);
    let a = args.a.or(base.a).unwrap_or(2.0);

    let mut ens = match geometry.as_str() {
        "gauss" => {
            if params.m != 1 {
                bail!("gauss initial data is wired for M = 1");
            }
            let sampler = GaussianMixture::gauss_1d(a).sampler()?;
            ParticleEnsemble::init_gauss(&params, &sampler, replicas, seed)?
        }
        "sphere" => {
            let tilt = args.tilt.or(base.tilt).unwrap_or(0.5);
            let g = move |v: &[f64]| {
                (-0.5 * tilt * v.iter().map(|x| x * x).sum::<f64>()).exp()
            };
            ParticleEnsemble::init_sphere(&params, g, 1.0, replicas, seed)?
        }
        other => bail!("unknown geometry {other:?}"),
    };
    if let Some(dir) = &checkpoint_dir {
        write_checkpoint(dir, "t0", 0.0, seed, &params, &ens.checkpoint_marginal())?;
    }

    // advance grid point by grid point so checkpoints match observables
    let mut rows = Vec::new();
    let mut obs_all = None;
    for (gi, &t) in grid.iter().enumerate() {
        let obs = ens.run(&params, &nu, &grid[gi..=gi])?;
        rows.push(vec![
            fmt(t),
            fmt(obs.system_energy_mean[0]),
            fmt(obs.system_energy_stderr[0]),
            replicas.to_string(),
        ]);
        if let Some(dir) = &checkpoint_dir {
            write_checkpoint(dir, &format!("t{}", gi + 1), t, seed, &params, &ens.checkpoint_marginal())?;
        }
        obs_all = Some(obs);
    }
    let _ = obs_all;
    let report = Report { header: vec!["t", "mean", "stderr", "n"], rows };
    emit(&args.out.clone().or(base.out.clone()), &report, serde_json::to_value(args)?, Some(seed), started)?;

    let fit = args.fit_rate || base.fit_rate;
    if fit {
        // re-run from a fresh ensemble on a dense grid for the fit
        let sampler = GaussianMixture::gauss_1d(a).sampler()?;
        let mut fresh = ParticleEnsemble::init_gauss(&params, &sampler, replicas, seed)?;
        let rate = params.decay_rate();
        let dense: Vec<f64> = (0..=10).map(|i| 0.4 * i as f64 / rate).collect();
        let obs = fresh.run(&params, &nu, &dense[1..])?;
        let (fitted, stderr) = fit_rate_blocked(&obs, 20, 0.1 * rate, 10.0 * rate)?;
        eprintln!("fitted rate {fitted:.6} +- {stderr:.6}, model rate {rate:.6}");
        return Ok((fitted - rate).abs() < 3.0 * stderr);
    }
    Ok(true)
}

// ---------------------------------------------------------------------------
// entropy

#[derive(Args, Clone, Serialize, Deserialize, Default)]
struct EntropyArgs {
    /// Binary checkpoint (with its .json sidecar next to it).
    #[arg(long)]
    #[serde(default)]
    input: Option<PathBuf>,
    /// gauss | sphere
    #[arg(long)]
    #[serde(default)]
    reference: Option<String>,
    #[arg(long)]
    #[serde(default)]
    k: Option<usize>,
    #[arg(long)]
    #[serde(default)]
    out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

#[derive(Deserialize)]
struct CheckpointSidecar {
    rows: usize,
    cols: usize,
    time: f64,
    m: usize,
    n: usize,
}

fn read_checkpoint(path: &Path) -> Result<(Vec<Vec<f64>>, CheckpointSidecar)> {
    let sidecar_path = path.with_extension("json");
    let sidecar: CheckpointSidecar =
        serde_json::from_str(&fs::read_to_string(&sidecar_path).with_context(|| {
            format!("reading sidecar {}", sidecar_path.display())
        })?)?;
    let bytes = fs::read(path)?;
    let expected = sidecar.rows * sidecar.cols * 8;
    if bytes.len() != expected {
        bail!("checkpoint has {} bytes, sidecar implies {expected}", bytes.len());
    }
    let mut samples = Vec::with_capacity(sidecar.rows);
    for r in 0..sidecar.rows {
        let mut row = Vec::with_capacity(sidecar.cols);
        for c in 0..sidecar.cols {
            let off = (r * sidecar.cols + c) * 8;
            row.push(f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()));
        }
        samples.push(row);
    }
    Ok((samples, sidecar))
}

fn run_entropy(args: &EntropyArgs) -> Result<bool> {
    let started = Instant::now();
    let base: EntropyArgs = load_config(&args.config)?;
    let input = args.input.clone().or(base.input).context("--input is required")?;
    let reference = args
        .reference
        .clone()
        .or_else(|| base.reference.clone())
        .unwrap_or_else(|| "gauss".into());
    let k = args.k.or(base.k).unwrap_or(DEFAULT_K);
    let (samples, sidecar) = read_checkpoint(&input)?;
    let est = match reference.as_str() {
        "gauss" => relative_entropy_knn(&samples, gauss_reference_logdensity, k)?,
        "sphere" => {
            let marg = SphereMarginal::new(sidecar.m, sidecar.n)?;
            relative_entropy_knn(&samples, |v| marg.log_density(v).unwrap_or(f64::NAN), k)?
        }
        other => bail!("unknown reference {other:?}"),
    };
    let report = Report {
        header: vec!["t", "S_hat", "stderr", "method", "n"],
        rows: vec![vec![
            fmt(sidecar.time),
            fmt(est.value),
            fmt(est.stderr),
            "knn".into(),
            est.n.to_string(),
        ]],
    };
    emit(&args.out.clone().or(base.out), &report, serde_json::to_value(args)?, None, started)?;
    Ok(true)
}

// ---------------------------------------------------------------------------
// ou-check

#[derive(Args, Clone, Serialize, Deserialize, Default)]
struct OuCheckArgs {
    /// Initial Gaussian variance a / (2 pi).
    #[arg(long)]
    #[serde(default)]
    a: Option<f64>,
    #[arg(long)]
    #[serde(default)]
    smax: Option<f64>,
    #[arg(long)]
    #[serde(default)]
    tol: Option<f64>,
    #[arg(long)]
    #[serde(default)]
    out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

fn run_ou_check(args: &OuCheckArgs) -> Result<bool> {
    let started = Instant::now();
    let base: OuCheckArgs = load_config(&args.config)?;
    let a = args.a.or(base.a).unwrap_or(2.0);
    let smax = args.smax.or(base.smax).unwrap_or(6.0);
    let tol = args.tol.or(base.tol).unwrap_or(1e-6);
    let grid: Vec<f64> = (0..=12).map(|i| smax * i as f64 / 12.0).collect();
    let report = check_ou_identities(&GaussianMixture::gauss_1d(a), &grid, tol)?;
    let table = Report {
        header: vec![
            "S0",
            "I0",
            "max_contractivity_violation",
            "max_derivative_residual",
            "integral_residual",
            "log_sobolev_slack",
            "pass",
        ],
        rows: vec![vec![
            fmt(report.s0),
            fmt(report.i0),
            fmt(report.max_contractivity_violation),
            fmt(report.max_derivative_residual),
            fmt(report.integral_residual),
            fmt(report.log_sobolev_slack),
            report.pass.to_string(),
        ]],
    };
    emit(&args.out.clone().or(base.out), &table, serde_json::to_value(args)?, None, started)?;
    Ok(report.pass)
}

// ---------------------------------------------------------------------------
// sigma-check

#[derive(Args, Clone, Serialize, Deserialize, Default)]
struct SigmaCheckArgs {
    #[arg(long)]
    #[serde(default)]
    trials: Option<usize>,
    #[arg(long)]
    #[serde(default)]
    seed: Option<u64>,
    /// Also Monte Carlo check the direction-averaged outer term.
    #[arg(long = "check-average", default_value_t = false)]
    #[serde(default)]
    check_average: bool,
    #[arg(long)]
    #[serde(default)]
    out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

fn run_sigma_check(args: &SigmaCheckArgs) -> Result<bool> {
    let started = Instant::now();
    let base: SigmaCheckArgs = load_config(&args.config)?;
    let trials = args.trials.or(base.trials).unwrap_or(1000);
    let seed = args.seed.or(base.seed).unwrap_or(0);
    let check_avg = args.check_average || base.check_average;
    let nu = CollisionMeasure::uniform();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut all_ok = true;
    for &m in &[1usize, 2, 3] {
        for &n in &[2usize, 3, 8] {
            let (ls, lr, mu) = local_perturbation_rates(1.0, m, n)?;
            let params = derive_params(m, n, ls, lr, mu, &nu)?;
            let mut min_slack = f64::INFINITY;
            let mut violations = 0usize;
            for _ in 0..trials {
                let f = ExpQuadratic::random(m, 0.5, &mut rng);
                let r = BlockRotation::random(&params, &nu, 6, &mut rng);
                let (v, w) = random_sphere_point(m, n, &mut rng);
                let check = check_pointwise_inequality(&f, &r, &v, &w)?;
                min_slack = min_slack.min(check.slack / check.scale);
                if !check.pass {
                    violations += 1;
                }
            }
            let mut avg_dev_sigmas = 0.0;
            if check_avg {
                let f = ExpQuadratic::random(m, 0.5, &mut rng);
                let r = BlockRotation::random(&params, &nu, 6, &mut rng);
                let (v, w) = random_sphere_point(m, n, &mut rng);
                let s1 = kac_core::spherical::sigma1(&f, &r, &v, &w)?;
                let (avg, stderr) =
                    sigma0_direction_average(&f, &r, &v, w.norm(), 100_000, seed ^ 0xa5a5);
                avg_dev_sigmas = (avg - s1).abs() / stderr.max(1e-300);
                all_ok &= avg_dev_sigmas < 3.0;
            }
            all_ok &= violations == 0;
            rows.push(vec![
                m.to_string(),
                n.to_string(),
                trials.to_string(),
                violations.to_string(),
                fmt(min_slack),
                fmt(avg_dev_sigmas),
            ]);
        }
    }
    let report = Report {
        header: vec!["m", "n", "trials", "violations", "min_relative_slack", "avg_dev_sigmas"],
        rows,
    };
    emit(&args.out.clone().or(base.out), &report, serde_json::to_value(args)?, Some(seed), started)?;
    Ok(all_ok)
}

// ---------------------------------------------------------------------------
// bounds

#[derive(Args, Clone, Serialize, Deserialize, Default)]
struct BoundsArgs {
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArgs,
    #[arg(long = "t-grid")]
    #[serde(default)]
    t_grid: Option<String>,
    /// Also tabulate the second-moment relaxation from this initial energy.
    #[arg(long = "e0")]
    #[serde(default)]
    e0: Option<f64>,
    #[arg(long)]
    #[serde(default)]
    out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

fn run_bounds(args: &BoundsArgs) -> Result<bool> {
    let started = Instant::now();
    let base: BoundsArgs = load_config(&args.config)?;
    let model = args.model.merge(&base.model);
    let (params, _) = model.build()?;
    let grid = parse_grid(
        args.t_grid.as_deref().or(base.t_grid.as_deref()).unwrap_or("0,0.5,1,2,4"),
    )?;
    let e0 = args.e0.or(base.e0);
    let mut rows = Vec::new();
    for &t in &grid {
        let mut row = vec![
            fmt(t),
            fmt(decay_bound_gauss(&params, t)?),
            fmt(decay_bound_sphere(&params, t)?),
        ];
        if let Some(e0) = e0 {
            row.push(fmt(second_moment_flow(&params, e0, t)?));
        }
        rows.push(row);
    }
    let header = if e0.is_some() {
        vec!["t", "gauss_bound_factor", "sphere_bound_factor", "second_moment"]
    } else {
        vec!["t", "gauss_bound_factor", "sphere_bound_factor"]
    };
    emit(&args.out.clone().or(base.out), &Report { header, rows }, serde_json::to_value(args)?, None, started)?;
    Ok(true)
}

// ---------------------------------------------------------------------------

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Sumrule(args) => run_sumrule(args),
        Command::Series(args) => run_series(args),
        Command::Dsmc(args) => run_dsmc(args),
        Command::Entropy(args) => run_entropy(args),
        Command::OuCheck(args) => run_ou_check(args),
        Command::SigmaCheck(args) => run_sigma_check(args),
        Command::Bounds(args) => run_bounds(args),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("one or more checks failed");
            ExitCode::from(EXIT_CHECK_FAILED)
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
