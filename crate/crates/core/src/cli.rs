//! The `fbcap` command line.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::capacity::{self, CapacityOptions, SamplerConfig};
use crate::detect;
use crate::error::{Error, Result};
use crate::kalman;
use crate::matops::Mat;
use crate::model::{self, Ar1Params, ChannelModel, ModelFile};
use crate::simulate::{self, Policy, SimConfig};

/// Grid points used by the water-filling baseline.
pub const WATERFILL_GRID: usize = 4096;

#[derive(Debug, Parser)]
#[command(name = "fbcap", version, about = "Feedback capacity of Gaussian state-space channels")]
struct Cli {
    /// Average input power constraint P.
    #[arg(long, global = true, default_value_t = 1.0)]
    power: f64,
    /// Duality-gap tolerance of the log-det solver.
    #[arg(long, global = true, default_value_t = capacity::DEFAULT_TOL)]
    tol: f64,
    /// Write results (JSON, or CSV for `sweep`) to this file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Report rates in bits per channel use (default).
    #[arg(long, global = true, conflicts_with = "nats")]
    bits: bool,
    /// Report rates in nats per channel use.
    #[arg(long, global = true)]
    nats: bool,
    /// Seed for random sampling and simulation.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a model file and report the detectability assumptions.
    Validate(ModelArgs),
    /// Solve the stationary encoder Riccati equation.
    Riccati(ModelArgs),
    /// Detectability of (F, H) by the PBH test and the LMI test.
    Detect(ModelArgs),
    /// Stationary feedback capacity.
    Capacity(ModelArgs),
    /// Normalized n-step capacity bound C_n / n.
    FiniteHorizon {
        #[command(flatten)]
        model: ModelArgs,
        /// Number of channel uses.
        #[arg(long)]
        n: usize,
    },
    /// AR(1) curves for several feedback delays, as CSV `beta,scheme,rate_bits`.
    Sweep(SweepArgs),
    /// No-feedback capacity of the AR(1) channel by water-filling.
    Waterfill {
        /// Regression parameter of the AR(1) noise.
        #[arg(long, default_value_t = 0.5)]
        beta: f64,
        /// Frequency grid size on [0, pi].
        #[arg(long, default_value_t = WATERFILL_GRID)]
        grid: usize,
    },
    /// Monte Carlo run of the optimal policy.
    Simulate {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 10_000)]
        horizon: usize,
        #[arg(long, default_value_t = 10)]
        trials: usize,
    },
    /// Count closed-loop detectability failures on random models.
    ProbeConjecture {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        /// State, input and output dimension of the sampled models.
        #[arg(long, default_value_t = 1)]
        dims: usize,
    },
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// JSON model file.
    #[arg(long, conflicts_with_all = ["ar1", "awgn"], required_unless_present_any = ["ar1", "awgn"])]
    model: Option<PathBuf>,
    /// Use the AR(1)-noise channel instead of a model file.
    #[arg(long, conflicts_with = "awgn")]
    ar1: bool,
    /// Regression parameter for `--ar1`.
    #[arg(long, default_value_t = 0.5, requires = "ar1")]
    beta: f64,
    /// Use the scalar memoryless channel instead of a model file.
    #[arg(long)]
    awgn: bool,
    /// Input gain squared for `--awgn` (unit noise).
    #[arg(long, default_value_t = 1.0, requires = "awgn")]
    snr: f64,
    /// Feedback delay; 1 is ordinary feedback.
    #[arg(long, default_value_t = 1)]
    delay: usize,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// Sweep the AR(1)-noise channel (the only family supported).
    #[arg(long)]
    ar1: bool,
    /// Grid `start:stop:step`.
    #[arg(long, default_value = "0.1:3.0:0.1")]
    beta: String,
    /// Comma-separated feedback delays; 1 is ordinary feedback.
    #[arg(long, default_value = "1,2,3,4", value_delimiter = ',')]
    delays: Vec<usize>,
    /// Add the no-feedback water-filling curve.
    #[arg(long)]
    nofeedback: bool,
}

/// Parsed sweep request.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub beta_grid: (f64, f64, f64),
    pub delays: Vec<usize>,
    pub include_nofeedback: bool,
    pub power: f64,
    pub output_path: Option<PathBuf>,
}

impl SweepSpec {
    pub fn betas(&self) -> Vec<f64> {
        let (start, stop, step) = self.beta_grid;
        let count = ((stop - start) / step + 1e-9).floor() as usize;
        (0..=count).map(|k| ((start + k as f64 * step) * 1e9).round() / 1e9).collect()
    }

    pub fn schemes(&self) -> Vec<String> {
        let mut out: Vec<String> = self.delays.iter().map(|&d| scheme_label(d)).collect();
        if self.include_nofeedback {
            out.push("nofb".into());
        }
        out
    }
}

pub fn scheme_label(delay: usize) -> String {
    if delay == 1 {
        "fb".into()
    } else {
        format!("delay{delay}")
    }
}

/// Parses `start:stop:step`.
pub fn parse_grid(text: &str) -> Result<(f64, f64, f64)> {
    let parts: Vec<&str> = text.split(':').collect();
    let bad = || Error::InvalidParameter(format!("--beta grid must be start:stop:step, got '{text}'"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let vals: Vec<f64> = parts.iter().map(|p| p.trim().parse::<f64>()).collect::<std::result::Result<_, _>>().map_err(|_| bad())?;
    let (start, stop, step) = (vals[0], vals[1], vals[2]);
    if !(step > 0.0) || !(start <= stop) || !vals.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidParameter(format!("--beta grid needs step > 0 and start <= stop, got '{text}'")));
    }
    Ok((start, stop, step))
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub beta: f64,
    pub scheme: String,
    pub rate_bits: f64,
}

/// Computes every curve of the sweep. Points are solved in parallel and
/// returned ordered by beta, then scheme. The no-feedback curve has no value
/// at `|beta| = 1` and that row is skipped.
pub fn run_sweep(spec: &SweepSpec, opts: &CapacityOptions) -> Result<Vec<SweepRow>> {
    let mut seen = std::collections::HashSet::new();
    if spec.delays.iter().any(|d| !seen.insert(*d)) {
        return Err(Error::InvalidParameter("--delays must be distinct".into()));
    }
    if let Some(&d) = spec.delays.iter().find(|&&d| d == 0) {
        return Err(Error::InvalidDelay(d));
    }
    let mut jobs: Vec<(f64, Option<usize>)> = Vec::new();
    for beta in spec.betas() {
        for &d in &spec.delays {
            jobs.push((beta, Some(d)));
        }
        if spec.include_nofeedback {
            jobs.push((beta, None));
        }
    }
    let results: Vec<Result<Option<SweepRow>>> = jobs
        .par_iter()
        .map(|&(beta, delay)| {
            let ar1 = Ar1Params::new(beta);
            match delay {
                Some(d) => {
                    let model = model::make_delayed(&model::make_ar1_channel(ar1)?, d)?;
                    let sol = capacity::stationary_capacity(&model, spec.power, opts)?;
                    Ok(Some(SweepRow { beta, scheme: scheme_label(d), rate_bits: sol.rate_bits }))
                }
                None => match capacity::waterfill_nofb(ar1, spec.power, WATERFILL_GRID) {
                    Ok(r) => Ok(Some(SweepRow { beta, scheme: "nofb".into(), rate_bits: r / std::f64::consts::LN_2 })),
                    Err(Error::UnitCircleNoise) => {
                        log::warn!("no-feedback curve skipped at beta = {beta}");
                        Ok(None)
                    }
                    Err(e) => Err(e),
                },
            }
        })
        .collect();
    let mut rows = Vec::with_capacity(results.len());
    for r in results {
        if let Some(row) = r? {
            rows.push(row);
        }
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("beta,scheme,rate_bits\n");
    for r in rows {
        let _ = writeln!(out, "{:.6},{},{:.6}", r.beta, r.scheme, r.rate_bits);
    }
    out
}

struct Units {
    nats: bool,
}

impl Units {
    fn label(&self) -> &'static str {
        if self.nats {
            "rate_nats"
        } else {
            "rate_bits"
        }
    }

    fn value(&self, nats: f64) -> f64 {
        if self.nats {
            nats
        } else {
            nats / std::f64::consts::LN_2
        }
    }
}

fn load_model(args: &ModelArgs) -> Result<ChannelModel> {
    let base = if args.ar1 {
        model::make_ar1_channel(Ar1Params::new(args.beta))?
    } else if args.awgn {
        ChannelModel::awgn(args.snr)?
    } else {
        let path = args.model.as_ref().ok_or_else(|| Error::InvalidParameter("--model is required".into()))?;
        ChannelModel::from_json_file(path)?
    };
    model::make_delayed(&base, args.delay)
}

fn fmt_mat(m: &Mat) -> String {
    let rows: Vec<String> = m
        .row_iter()
        .map(|r| r.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(", "))
        .collect();
    format!("[{}]", rows.join("; "))
}

fn write_out(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)?;
    Ok(())
}

fn write_json<T: serde::Serialize>(out: &Option<PathBuf>, value: &T) -> Result<()> {
    if let Some(path) = out {
        write_out(path, &serde_json::to_string_pretty(value)?)?;
    }
    Ok(())
}

fn execute(cli: Cli, stdout: &mut String) -> Result<()> {
    let units = Units { nats: cli.nats };
    let opts = CapacityOptions::with_tol(cli.tol);
    match cli.command {
        Command::Validate(args) => {
            let model = load_model(&args)?;
            let rep = model::validate_assumption1(&model)?;
            let d = model.dims;
            let _ = writeln!(stdout, "dims: n={} m={} p={}", d.n, d.m, d.p);
            let _ = writeln!(stdout, "joint_noise_psd: true");
            let _ = writeln!(stdout, "detectable: {}", rep.detectable);
            let _ = writeln!(stdout, "sigma1_dominates: {}", rep.sigma1_dominates);
            write_json(&cli.out, &rep)?;
        }
        Command::Riccati(args) => {
            let model = load_model(&args)?;
            let ric = kalman::solve_dare(&model, None, kalman::DEFAULT_TOL, kalman::DEFAULT_MAX_ITER)?;
            let _ = writeln!(stdout, "sigma: {}", fmt_mat(&ric.sigma));
            let _ = writeln!(stdout, "kp: {}", fmt_mat(&ric.kp));
            let _ = writeln!(stdout, "psi: {}", fmt_mat(&ric.psi));
            let _ = writeln!(stdout, "iterations: {}", ric.iterations);
            let _ = writeln!(stdout, "residual: {:.3e}", kalman::stationarity_residual(&model, &ric.sigma)?);
            let _ = writeln!(stdout, "closed_loop_radius: {:.6}", ric.closed_loop_radius);
        }
        Command::Detect(args) => {
            let (f, h) = match (&args.model, args.delay) {
                // only F and H matter, so undetectable files still load
                (Some(path), 1) => {
                    let text = std::fs::read_to_string(path)?;
                    serde_json::from_str::<ModelFile>(&text)?.state_pair()?
                }
                _ => {
                    let m = load_model(&args)?;
                    (m.f, m.h)
                }
            };
            if f.nrows() != f.ncols() || h.ncols() != f.nrows() {
                return Err(Error::DimensionMismatch("F must be square and H must have as many columns as F".into()));
            }
            let pbh = detect::detectable_pbh(&f, &h, detect::PBH_TOL);
            let lmi = detect::detectable_lmi(&f, &h)?;
            let _ = writeln!(stdout, "pbh: {}", verdict(pbh.detectable));
            if let Some(lam) = pbh.offending_eigenvalue {
                let _ = writeln!(stdout, "pbh_offending_eigenvalue: {:.6} + {:.6}i", lam.re, lam.im);
            }
            let _ = writeln!(stdout, "lmi: {} (margin {:.3e})", verdict(lmi.detectable), lmi.margin.unwrap_or(f64::NAN));
            let _ = writeln!(stdout, "agree: {}", pbh.detectable == lmi.detectable);
        }
        Command::Capacity(args) => {
            let model = load_model(&args)?;
            let sol = capacity::stationary_capacity(&model, cli.power, &opts)?;
            let _ = writeln!(stdout, "{}: {:.6}", units.label(), units.value(sol.rate_nats));
            let _ = writeln!(stdout, "closed_loop_detectable: {}", sol.closed_loop_detectable);
            if !sol.closed_loop_detectable {
                let _ = writeln!(stdout, "note: rate is an upper bound only");
            }
            let _ = writeln!(stdout, "solver_status: {:?}", sol.solver_status);
            let _ = writeln!(stdout, "kkt_residual: {:.3e}", sol.kkt_residual);
            let _ = writeln!(stdout, "trace_pi: {:.6}", sol.pi.trace());
            write_json(&cli.out, &sol)?;
        }
        Command::FiniteHorizon { model: args, n } => {
            let model = load_model(&args)?;
            let sol = capacity::finite_horizon_capacity(&model, cli.power, n, &opts)?;
            let _ = writeln!(stdout, "n: {n}");
            let _ = writeln!(stdout, "{}: {:.6}", units.label(), units.value(sol.normalized_rate_nats));
            let _ = writeln!(stdout, "solver_status: {:?}", sol.solver_status);
            write_json(&cli.out, &sol)?;
        }
        Command::Sweep(args) => {
            if !args.ar1 {
                log::info!("sweep always uses the AR(1)-noise channel");
            }
            let spec = SweepSpec {
                beta_grid: parse_grid(&args.beta)?,
                delays: args.delays,
                include_nofeedback: args.nofeedback,
                power: cli.power,
                output_path: cli.out,
            };
            let csv = sweep_csv(&run_sweep(&spec, &opts)?);
            match &spec.output_path {
                Some(path) => {
                    write_out(path, &csv)?;
                    let _ = writeln!(stdout, "wrote {}", path.display());
                }
                None => stdout.push_str(&csv),
            }
        }
        Command::Waterfill { beta, grid } => {
            let r = capacity::waterfill_nofb(Ar1Params::new(beta), cli.power, grid)?;
            let _ = writeln!(stdout, "{}: {:.6}", units.label(), units.value(r));
        }
        Command::Simulate { model: args, horizon, trials } => {
            let model = load_model(&args)?;
            let sol = capacity::stationary_capacity(&model, cli.power, &opts)?;
            let cfg = SimConfig { horizon, trials, seed: cli.seed, policy: Policy::from_solution(&sol) };
            let res = simulate::simulate_policy(&model, &cfg)?;
            let _ = writeln!(stdout, "capacity_{}: {:.6}", units.label(), units.value(sol.rate_nats));
            let _ = writeln!(stdout, "analytic_{}: {:.6}", units.label(), units.value(res.analytic_rate_nats));
            let _ = writeln!(stdout, "trace_pi: {:.6}", sol.pi.trace());
            let _ = writeln!(stdout, "empirical_power: {:.6} (se {:.2e})", res.empirical_power, res.power_std_error);
            let _ = writeln!(stdout, "psi: {}", fmt_mat(&sol.psi));
            let _ = writeln!(stdout, "encoder_innovation_cov: {}", fmt_mat(&res.encoder_innovation_cov));
            let _ = writeln!(stdout, "decoder_innovation_cov: {}", fmt_mat(&res.empirical_innovation_cov));
            let _ = writeln!(stdout, "whiteness_maxlag_corr: {:.3e}", res.whiteness_maxlag_corr);
            write_json(&cli.out, &res)?;
        }
        Command::ProbeConjecture { trials, dims } => {
            let cfg = SamplerConfig::square(dims);
            let rep = capacity::conjecture_probe(&cfg, trials, cli.seed, &opts)?;
            let _ = writeln!(stdout, "trials: {}", rep.trials);
            let _ = writeln!(stdout, "violations: {}", rep.violations);
            let _ = writeln!(stdout, "solver_failures: {}", rep.solver_failures);
            write_json(&cli.out, &rep)?;
        }
    }
    Ok(())
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "detectable"
    } else {
        "not detectable"
    }
}

/// Runs the command line and returns the process exit code: 0 on success,
/// 1 on user error, 2 on numerical failure. Standard output is returned in
/// `stdout`; diagnostics go to standard error.
pub fn run_captured<I, T>(argv: I, stdout: &mut String) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            if code == 0 {
                stdout.push_str(&e.to_string());
            } else {
                eprint!("{e}");
            }
            return code;
        }
    };
    match execute(cli, stdout) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                2
            } else {
                1
            }
        }
    }
}

/// [`run_captured`] printing to standard output.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let mut out = String::new();
    let code = run_captured(argv, &mut out);
    print!("{out}");
    code
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing() {
        assert_eq!(parse_grid("0.1:3.0:0.1").unwrap(), (0.1, 3.0, 0.1));
        assert!(parse_grid("1:0:0.1").is_err());
        assert!(parse_grid("0:1:0").is_err());
        assert!(parse_grid("0:1").is_err());
        let spec = SweepSpec {
            beta_grid: (0.1, 3.0, 0.1),
            delays: vec![1, 2],
            include_nofeedback: true,
            power: 1.0,
            output_path: None,
        };
        let b = spec.betas();
        assert_eq!(b.len(), 30);
        assert_eq!(b[9], 1.0);
        assert_eq!(b[29], 3.0);
        assert_eq!(spec.schemes(), vec!["fb", "delay2", "nofb"]);
    }

    #[test]
    fn awgn_capacity_line() {
        let mut out = String::new();
        let code = run_captured(["fbcap", "capacity", "--awgn", "--power", "1"], &mut out);
        assert_eq!(code, 0);
        assert!(out.lines().any(|l| l == "rate_bits: 0.500000"), "{out}");
    }

    #[test]
    fn exit_codes() {
        let mut out = String::new();
        assert_eq!(run_captured(["fbcap", "capacity"], &mut out), 1);
        assert_eq!(run_captured(["fbcap", "capacity", "--model", "/nonexistent/m.json"], &mut out), 1);
        assert_eq!(run_captured(["fbcap", "capacity", "--awgn", "--power", "-1"], &mut out), 1);
        assert_eq!(run_captured(["fbcap", "--help"], &mut out), 0);
    }
}
