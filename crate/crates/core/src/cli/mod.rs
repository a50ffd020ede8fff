//! Command-line front end: loads a run configuration, dispatches one
//! experiment and writes a versioned JSON report plus optional CSV files.
//!
//! Exit status: 0 on success or `holds`, 2 on `violated`, 3 on
//! `inconclusive`, 1 on any error.

pub mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use crate::constants::{
    bdg_constant, derivative_moment_orders, gronwall_bound, kunita_constant, uniform_gronwall_bound,
    CoefficientNorms, GronwallBound, LogReal, UniformBound,
};
use crate::error::{Error, Result};
use crate::model::{build_coefficients, MarkFn};
use crate::montecarlo::{
    default_x_grid, estimate_bdg_lhs, estimate_semigroup_derivative, finite_difference_oracle,
    verify_derivative_moments, verify_moment_bound, BdgIntegrand, DerivativeMomentReport, Payoff, Verdict,
};
use crate::rng::PathSeed;
use crate::simulate::{write_paths_csv, FlowSystem};

pub use config::{LoadedConfig, RunConfig};

pub const SCHEMA: &str = "jumpflow/1";

#[derive(Debug, Parser)]
#[command(name = "jumpflow", version, about = "Jump-diffusion flows: simulation and moment-bound checks")]
pub struct Cli {
    /// JSON run configuration
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Override a configuration entry, e.g. `--set model.params.sigma=0.3`
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Directory for the JSON report and CSV files
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Master seed (same as `--set mc.master_seed=N`)
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; never changes the results
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// BDG constants C_p and C̃_p
    Constants {
        #[arg(long)]
        p: Option<f64>,
    },
    /// Grönwall moment bound C(p, T), optionally uniform over a parameter sweep
    Bound {
        #[arg(long)]
        p: Option<f64>,
    },
    /// Simulate paths of (X, X^(1), ..., X^(n)) and dump them as CSV
    Simulate,
    /// Compensated Poisson integral sup-moment against the BDG bounds
    VerifyBdg {
        #[arg(long)]
        p: Option<f64>,
    },
    /// Sup-moment of X against the Grönwall bound
    VerifyMoments {
        #[arg(long)]
        p: Option<f64>,
    },
    /// Derivative sup-moments over an x grid, with refinement stability
    VerifyDerivatives,
    /// Semigroup derivatives by the pathwise formula and by finite differences
    Greeks,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Constants { .. } => "constants",
            Command::Bound { .. } => "bound",
            Command::Simulate => "simulate",
            Command::VerifyBdg { .. } => "verify-bdg",
            Command::VerifyMoments { .. } => "verify-moments",
            Command::VerifyDerivatives => "verify-derivatives",
            Command::Greeks => "greeks",
        }
    }

    fn p_flag(&self) -> Option<f64> {
        match self {
            Command::Constants { p } | Command::Bound { p } | Command::VerifyBdg { p } | Command::VerifyMoments { p } => *p,
            _ => None,
        }
    }
}

/// Deterministic result of one experiment.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub result: Value,
    pub verdict: Option<Verdict>,
    /// `(file name, contents)`
    pub csv: Vec<(String, String)>,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        self.verdict.map_or(0, Verdict::exit_code)
    }
}

/// The override list implied by the command line, in application order.
pub fn collect_overrides(cli: &Cli) -> Vec<String> {
    let mut all = cli.set.clone();
    if let Some(p) = cli.command.p_flag() {
        all.push(format!("experiment.p={p}"));
    }
    if let Some(seed) = cli.seed {
        all.push(format!("mc.master_seed={seed}"));
    }
    all
}

pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<LoadedConfig> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
            LoadedConfig::from_text(&text, &p.display().to_string(), overrides)
        }
        None => LoadedConfig::from_document(json!({}), overrides),
    }
}

fn log_json(v: LogReal) -> Value {
    json!({ "value": v.value(), "ln": v.ln() })
}

fn gronwall_json(b: &GronwallBound) -> Value {
    json!({
        "p": b.p,
        "horizon": b.horizon,
        "x": b.x,
        "f_t": log_json(b.f_t),
        "g_integral": log_json(b.g_integral),
        "c_pt": log_json(b.c_pt),
    })
}

fn uniform_json(u: &UniformBound, param: &str, values: &[f64]) -> Value {
    json!({
        "param": param,
        "values": values,
        "members": u.members.iter().map(gronwall_json).collect::<Vec<_>>(),
        "f_sup": log_json(u.f_sup),
        "g_sup_integral": log_json(u.g_sup_integral),
        "c_uniform": log_json(u.c_uniform),
        "note": u.note,
    })
}

fn to_value<T: Serialize>(v: &T) -> Result<Value> {
    Ok(serde_json::to_value(v)?)
}

/// Runs one experiment. Pure: the same configuration gives the same outcome.
pub fn run_experiment(command: &Command, loaded: &LoadedConfig) -> Result<Outcome> {
    let cfg = &loaded.config;
    let exp = &cfg.experiment;
    if let Some(kind) = &exp.kind {
        if kind != command.name() {
            return Err(Error::Config(format!(
                "experiment.kind is `{kind}` but the `{}` subcommand was run",
                command.name()
            )));
        }
    }
    match command {
        Command::Constants { .. } => constants(cfg),
        Command::Bound { .. } => bound(loaded),
        Command::Simulate => simulate(cfg),
        Command::VerifyBdg { .. } => verify_bdg(cfg),
        Command::VerifyMoments { .. } => verify_moments(cfg),
        Command::VerifyDerivatives => verify_derivatives(cfg),
        Command::Greeks => greeks(cfg),
    }
}

fn constants(cfg: &RunConfig) -> Result<Outcome> {
    let p = cfg.experiment.p.unwrap_or(2.0);
    let result = if p >= 2.0 {
        to_value(&kunita_constant(p)?)?
    } else {
        let c = bdg_constant(p)?;
        json!({
            "p": p,
            "c_p": c,
            "tilde_c_p": null,
            "tilde_upper": null,
            "log_values": { "c_p": c.ln() },
            "note": "C̃_p is defined for p >= 2 only",
        })
    };
    Ok(Outcome {
        result,
        verdict: None,
        csv: Vec::new(),
    })
}

fn bound(loaded: &LoadedConfig) -> Result<Outcome> {
    let cfg = &loaded.config;
    let p = cfg.experiment.p.unwrap_or(2.0);
    let x = cfg.experiment.x.unwrap_or(1.0);
    let grid = cfg.grid()?;
    let coeffs = cfg.coefficients()?;
    let jm = cfg.jump_model()?;
    let norms = CoefficientNorms::from_model(&coeffs, &jm, p, grid.horizon())?;
    let single = gronwall_bound(&norms, p, grid.horizon(), x)?;
    let mut result = json!({ "gronwall": gronwall_json(&single) });
    if let Some(n) = cfg.experiment.n {
        result["derivative_moment_orders"] = to_value(&derivative_moment_orders(n, cfg.experiment.q.unwrap_or(2.0)))?;
    }
    if let Some(sweep) = &cfg.experiment.sweep {
        if sweep.values.is_empty() {
            return Err(Error::param("experiment.sweep.values", "must be nonempty"));
        }
        let base = cfg.model.clone().expect("coefficients() checked the model block");
        let family: Vec<CoefficientNorms> = sweep
            .values
            .iter()
            .map(|&v| {
                let spec = base.clone().param(&sweep.param, v);
                let c = build_coefficients(&spec)?;
                CoefficientNorms::from_model(&c, &jm, p, grid.horizon())
            })
            .collect::<Result<_>>()?;
        let uniform = uniform_gronwall_bound(&family, p, grid.horizon(), x)?;
        result["uniform"] = uniform_json(&uniform, &sweep.param, &sweep.values);
    }
    Ok(Outcome {
        result,
        verdict: None,
        csv: Vec::new(),
    })
}

fn simulate(cfg: &RunConfig) -> Result<Outcome> {
    let coeffs = cfg.coefficients()?;
    let jm = cfg.jump_model()?;
    let grid = cfg.grid()?;
    let n = cfg.experiment.n.unwrap_or(1.min(coeffs.n_max()));
    let x = cfg.experiment.x.unwrap_or(1.0);
    let count = cfg.experiment.paths.unwrap_or(cfg.mc.paths.min(10));
    let system = FlowSystem::new(&coeffs, &jm, n)?;
    let records = (0..count as u64)
        .map(|i| system.simulate(x, &grid, PathSeed::new(cfg.mc.master_seed, i)))
        .collect::<Result<Vec<_>>>()?;
    let mut buf = Vec::new();
    write_paths_csv(&records, &mut buf)?;
    let summary: Vec<Value> = records
        .iter()
        .map(|r| {
            json!({
                "path_index": r.seed.path_index,
                "terminal": r.terminal().values(),
                "running_sup": r.running_sup,
                "jumps": r.jump_times.len(),
            })
        })
        .collect();
    Ok(Outcome {
        result: json!({ "paths": count, "n": n, "x": x, "summary": summary }),
        verdict: None,
        csv: vec![("paths.csv".into(), String::from_utf8(buf).expect("CSV is ASCII"))],
    })
}

fn verify_bdg(cfg: &RunConfig) -> Result<Outcome> {
    let p = cfg.experiment.p.unwrap_or(2.0);
    let spec = cfg.experiment.integrand.clone().unwrap_or_default();
    let integrand = BdgIntegrand::new(spec.scale, MarkFn::from_name(&spec.mark)?);
    let jm = cfg.jump_model()?;
    let report = estimate_bdg_lhs(&integrand, &jm, p, &cfg.grid()?, &cfg.mc())?;
    Ok(Outcome {
        verdict: Some(report.verdict),
        result: to_value(&report)?,
        csv: Vec::new(),
    })
}

fn verify_moments(cfg: &RunConfig) -> Result<Outcome> {
    let p = cfg.experiment.p.unwrap_or(2.0);
    let x = cfg.experiment.x.unwrap_or(1.0);
    let coeffs = cfg.coefficients()?;
    let jm = cfg.jump_model()?;
    let grid = cfg.grid()?;
    let report = verify_moment_bound(&coeffs, &jm, x, p, &grid, &cfg.mc(), None)?;
    Ok(Outcome {
        verdict: Some(report.report.verdict),
        result: json!({
            "report": to_value(&report.report)?,
            "gronwall": gronwall_json(&report.gronwall),
            "p": p,
            "x": x,
        }),
        csv: Vec::new(),
    })
}

fn derivative_csv(r: &DerivativeMomentReport) -> String {
    let mut s = String::from("x,k,p_k,base_mean,base_stderr,refined_mean,refined_stderr,change_sigmas,stable\n");
    for row in &r.rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            row.x,
            row.k,
            row.p_k,
            row.base.mean,
            row.base.stderr,
            row.refined.mean,
            row.refined.stderr,
            row.change,
            u8::from(row.stable)
        ));
    }
    s
}

fn verify_derivatives(cfg: &RunConfig) -> Result<Outcome> {
    let coeffs = cfg.coefficients()?;
    let jm = cfg.jump_model()?;
    let n = cfg.experiment.n.unwrap_or(2.min(coeffs.n_max()));
    let q = cfg.experiment.q.unwrap_or(2.0);
    let x_grid = cfg.experiment.x_grid.clone().unwrap_or_else(default_x_grid);
    let report = verify_derivative_moments(&coeffs, &jm, n, q, &cfg.grid()?, &cfg.mc(), &x_grid)?;
    Ok(Outcome {
        verdict: Some(report.verdict),
        csv: vec![("derivative_moments.csv".into(), derivative_csv(&report))],
        result: to_value(&report)?,
    })
}

fn greeks(cfg: &RunConfig) -> Result<Outcome> {
    let coeffs = cfg.coefficients()?;
    let jm = cfg.jump_model()?;
    let grid = cfg.grid()?;
    let exp = &cfg.experiment;
    let name = exp.payoff.as_deref().unwrap_or("call");
    let strike = exp.strike.or(if name == "call" { Some(1.0) } else { None });
    let payoff = Payoff::parse(name, strike, exp.exponent)?;
    let n = exp.n.unwrap_or(1);
    let x = exp.x.unwrap_or(1.0);
    let mc = cfg.mc();
    let pathwise = estimate_semigroup_derivative(&coeffs, &jm, &payoff, n, &grid, x, &mc)?;
    let mut result = json!({
        "payoff": to_value(&payoff)?,
        "n": n,
        "x": x,
        "horizon": grid.horizon(),
        "pathwise": to_value(&pathwise)?,
    });
    if n == 1 {
        let h = exp.h.unwrap_or(1e-3 * x.abs().max(1.0));
        let fd = finite_difference_oracle(&coeffs, &jm, &payoff, &grid, x, h, &mc)?;
        result["finite_difference"] = json!({ "h": h, "estimate": to_value(&fd)? });
        result["distance_sigmas"] = json!(pathwise.distance(&fd));
    }
    Ok(Outcome {
        result,
        verdict: None,
        csv: Vec::new(),
    })
}

/// The full JSON report. Everything outside `runtime` depends only on the
/// effective configuration.
pub fn assemble_report(command: &Command, loaded: &LoadedConfig, outcome: &Outcome, runtime: Value) -> Value {
    json!({
        "schema": SCHEMA,
        "experiment": command.name(),
        "config_digest": loaded.digest,
        "master_seed": loaded.config.mc.master_seed,
        "effective_config": loaded.effective,
        "result": outcome.result,
        "verdict": outcome.verdict,
        "runtime": runtime,
    })
}

fn write_outputs(dir: &Path, command: &Command, report: &str, outcome: &Outcome) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(format!("{}.json", command.name())), report)?;
    for (name, contents) in &outcome.csv {
        fs::write(dir.join(name), contents)?;
    }
    Ok(())
}

/// Entry point used by the binary; returns the process exit status.
pub fn run(cli: Cli) -> i32 {
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            1
        }
    }
}

fn execute(cli: &Cli) -> Result<i32> {
    let started = Instant::now();
    let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let overrides = collect_overrides(cli);
    let mut loaded = load_config(cli.config.as_deref(), &overrides)?;
    if let Some(w) = cli.workers {
        loaded.config.mc.workers = w;
    }
    let outcome = run_experiment(&cli.command, &loaded)?;
    let runtime = json!({
        "started_unix": timestamp,
        "elapsed_seconds": started.elapsed().as_secs_f64(),
        "workers": loaded.config.mc.workers,
    });
    let report = assemble_report(&cli.command, &loaded, &outcome, runtime);
    let text = serde_json::to_string_pretty(&report)? + "\n";
    match &cli.out {
        Some(dir) => {
            write_outputs(dir, &cli.command, &text, &outcome)?;
            print!("{text}");
        }
        None => {
            if let (Command::Simulate, Some((_, csv))) = (&cli.command, outcome.csv.first()) {
                print!("{csv}");
            } else {
                print!("{text}");
            }
        }
    }
    Ok(outcome.exit_code())
}
