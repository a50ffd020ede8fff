//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails. Runs without the libtest harness so the
//! lines are visible under `cargo test`.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use jumpflow::cli::LoadedConfig;
use jumpflow::constants::{kunita_constant, LogReal};
use jumpflow::model::{CoefficientSet, JumpModel, MarkFn, PolyTanhParams, SizeLaw};
use jumpflow::montecarlo::{
    default_x_grid, estimate_bdg_lhs, estimate_semigroup_derivative, finite_difference_oracle,
    verify_derivative_moments, verify_moment_bound, BdgIntegrand, McEstimate, McSettings, Payoff, Verdict,
};
use jumpflow::partitions::enumerate_partitions;
use jumpflow::rng::PathSeed;
use jumpflow::simulate::{FlowSystem, PathNoise, TimeGrid};
use statrs::distribution::{ContinuousCDF, Normal};

type Outcome = Result<(bool, String), String>;

struct Criterion {
    id: usize,
    name: &'static str,
    limit_s: f64,
    run: fn() -> Outcome,
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn load(name: &str, overrides: &[&str]) -> Result<LoadedConfig, String> {
    let path = configs().join(name);
    let text = std::fs::read_to_string(&path).map_err(|e| e.to_string())?;
    let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    LoadedConfig::from_text(&text, &path.display().to_string(), &o).map_err(|e| e.to_string())
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// 1. Bell counts for k = 1..6, brute-force agreement for k <= 5.
fn partitions() -> Outcome {
    const BELL: [usize; 6] = [1, 2, 5, 15, 52, 203];
    let counts: Vec<usize> = (1..=6)
        .map(|k| enumerate_partitions(k).map(|p| p.len()))
        .collect::<Result<_, _>>()
        .map_err(err)?;
    let mut sets_ok = true;
    for k in 1..=5 {
        let got: BTreeSet<Vec<Vec<usize>>> = enumerate_partitions(k)
            .map_err(err)?
            .into_iter()
            .map(|p| p.blocks().to_vec())
            .collect();
        let mut brute = BTreeSet::new();
        for code in 0..k.pow(k as u32) {
            let mut c = code;
            let mut blocks = vec![Vec::new(); k];
            for e in 1..=k {
                blocks[c % k].push(e);
                c /= k;
            }
            let mut blocks: Vec<Vec<usize>> = blocks.into_iter().filter(|b| !b.is_empty()).collect();
            blocks.sort();
            brute.insert(blocks);
        }
        sets_ok &= got == brute;
    }
    Ok((counts == BELL && sets_ok, format!("counts {counts:?}, brute force k<=5 {}", if sets_ok { "equal" } else { "differs" })))
}

// 2. ln C_p, ln C̃_p against a 50-digit mpmath evaluation, and C̃_p <= majorant.
fn constants() -> Outcome {
    const ORACLE: [(f64, f64, f64, f64); 5] = [
        (2.0, 1.38629436111989061883446424292, 6.07517381523382692168691994052, 6.146168843418738149873293174),
        (3.0, 3.75611609516441111005988752858, 12.7295827062301301393158638509, 13.7602408858413634483196899062),
        (4.0, 6.15888308335967185650339272875, 21.7749679382598042475588798198, 22.4684800428886267256714208207),
        (8.0, 17.8629436111989061883446424292, 75.2758204556519172970602853296, 76.6621148180006499593611505789),
        (16.0, 46.8162421113569373273649988017, 236.87727231457765370537937231, 238.956713856257489633631321957),
    ];
    let mut worst = 0.0f64;
    let mut majorant_ok = true;
    for (p, ln_c, ln_tilde, ln_upper) in ORACLE {
        let k = kunita_constant(p).map_err(err)?;
        for (got, want) in [(k.c_p.ln(), ln_c), (k.tilde_c_p.ln(), ln_tilde), (k.tilde_upper.ln(), ln_upper)] {
            worst = worst.max(((got - want) / want).abs());
        }
        majorant_ok &= k.tilde_c_p.ln() <= k.tilde_upper.ln();
    }
    Ok((
        worst <= 1e-12 && majorant_ok,
        format!("max rel err of ln values {worst:.2e} (tol 1e-12), majorant {}", if majorant_ok { "ok" } else { "broken" }),
    ))
}

// 3. Affine models have X^(2) = X^(3) = 0 identically.
fn affine_degeneracy() -> Outcome {
    let grid = TimeGrid::new(1.0, 100).map_err(err)?;
    let cases = [
        (CoefficientSet::gbm(0.1, 0.2, 3).map_err(err)?, JumpModel::none()),
        (
            CoefficientSet::merton(0.1, 0.2, 3).map_err(err)?,
            JumpModel::homogeneous(2.0, SizeLaw::Gaussian { mean: 0.0, std: 0.2 }, 16).map_err(err)?,
        ),
    ];
    let mut worst = 0.0f64;
    let mut nodes = 0usize;
    for (c, jm) in &cases {
        let system = FlowSystem::new(c, jm, 3).map_err(err)?;
        for i in 0..1000 {
            let rec = system.simulate(1.0, &grid, PathSeed::new(31, i)).map_err(err)?;
            for s in &rec.states {
                worst = worst.max(s.state.derivative(2).abs()).max(s.state.derivative(3).abs());
                nodes += 1;
            }
        }
    }
    Ok((worst == 0.0, format!("max |X^(2)|,|X^(3)| = {worst:e} over {nodes} recorded states")))
}

// 4. GBM: X^(1) x = X along every path.
fn gbm_identity() -> Outcome {
    let grid = TimeGrid::new(1.0, 100).map_err(err)?;
    let c = CoefficientSet::gbm(0.1, 0.3, 1).map_err(err)?;
    let jm = JumpModel::none();
    let system = FlowSystem::new(&c, &jm, 1).map_err(err)?;
    let x = 1.7;
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let rec = system.simulate(x, &grid, PathSeed::new(97, i)).map_err(err)?;
        for s in &rec.states {
            let v = s.state.values();
            worst = worst.max((v[1] * x - v[0]).abs() / v[0].abs());
        }
    }
    Ok((worst <= 1e-12, format!("max |X^(1) x - X| / |X| = {worst:.2e} (tol 1e-12)")))
}

// 5. Variational X^(1)_T against the CRN central difference.
fn variational_vs_fd() -> Outcome {
    let params = PolyTanhParams {
        jump_tanh: 0.2,
        jump_mark: MarkFn::Identity,
        ..PolyTanhParams::default()
    };
    let c = CoefficientSet::polynomial_tanh(&params, 1).map_err(err)?;
    let jm = JumpModel::homogeneous(1.0, SizeLaw::Gaussian { mean: 0.0, std: 0.3 }, 16).map_err(err)?;
    let grid = TimeGrid::new(1.0, 512).map_err(err)?;
    let flow = FlowSystem::new(&c, &jm, 1).map_err(err)?;
    let base = FlowSystem::new(&c, &jm, 0).map_err(err)?;
    let (x, h) = (0.5, 1e-4);
    let mc = McSettings::new(10_000, 2024);
    let devs = mc
        .map_paths(|seed| {
            let noise = PathNoise::sample(&jm, &grid, &mut seed.rng())?;
            let d1 = flow.summarize(x, &grid, &noise)?.terminal.derivative(1);
            let up = base.summarize(x + h, &grid, &noise)?.terminal.x();
            let down = base.summarize(x - h, &grid, &noise)?.terminal.x();
            let fd = (up - down) / (2.0 * h);
            Ok((d1 - fd).abs() / fd.abs())
        })
        .map_err(err)?;
    let mean = devs.iter().sum::<f64>() / devs.len() as f64;
    Ok((mean <= 1e-3, format!("mean abs rel deviation {mean:.2e} over {} paths (tol 1e-3)", devs.len())))
}

// 6. Grönwall bound for gbm (hand value 15.58) and merton.
fn gronwall_holds() -> Outcome {
    let mut ok = true;
    let mut detail = Vec::new();
    for name in ["gbm.json", "merton.json"] {
        let cfg = load(name, &[])?.config;
        let (c, jm, grid) = (cfg.coefficients().map_err(err)?, cfg.jump_model().map_err(err)?, cfg.grid().map_err(err)?);
        let r = verify_moment_bound(&c, &jm, 1.0, 2.0, &grid, &cfg.mc(), None).map_err(err)?;
        let bound = r.report.log_bound;
        let hi = r.report.estimate.ci95.1;
        ok &= LogReal::from_value(hi).ln() < bound.ln() && r.report.verdict == Verdict::Holds;
        if name == "gbm.json" {
            let c_pt = bound.value().unwrap_or(f64::INFINITY);
            ok &= (c_pt - 15.58).abs() < 0.01 && hi < 15.58;
        }
        detail.push(format!(
            "{}: ci95.hi {hi:.4} vs C {:.4e} ({:?})",
            name.trim_end_matches(".json"),
            bound.value().unwrap_or(f64::INFINITY),
            r.report.verdict
        ));
    }
    Ok((ok, detail.join("; ")))
}

// 7. BDG sup-moment bounds for ±1 marks, λ = 3, and the isometry E[K_T²] = λT.
fn bdg_holds() -> Outcome {
    let cfg = load("bdg.json", &[])?.config;
    let jm = cfg.jump_model().map_err(err)?;
    let grid = cfg.grid().map_err(err)?;
    let integrand = BdgIntegrand::new(1.0, MarkFn::Identity);
    let mut ok = true;
    let mut detail = Vec::new();
    for p in [2.0, 4.0] {
        let r = estimate_bdg_lhs(&integrand, &jm, p, &grid, &cfg.mc()).map_err(err)?;
        ok &= r.verdict == Verdict::Holds;
        detail.push(format!("p={p}: E[(K*)^p] {:.4} ({:?})", r.sup_moment.mean, r.verdict));
        if p == 2.0 {
            let iso = &r.isometry;
            ok &= (iso.exact - 3.0).abs() < 1e-12 && iso.z.abs() <= 3.0;
            detail.push(format!("E[K_T^2] {:.4} vs 3, z = {:.2}", iso.estimate.mean, iso.z));
        }
    }
    Ok((ok, detail.join("; ")))
}

// 8. Black–Scholes Delta at the money: Φ(0.1) and the finite-difference oracle.
fn bs_delta() -> Outcome {
    let cfg = load("delta.json", &[])?.config;
    let (c, jm, grid) = (cfg.coefficients().map_err(err)?, cfg.jump_model().map_err(err)?, cfg.grid().map_err(err)?);
    let payoff = Payoff::Call { strike: 1.0 };
    let mc = cfg.mc();
    let delta = estimate_semigroup_derivative(&c, &jm, &payoff, 1, &grid, 1.0, &mc).map_err(err)?;
    let fd = finite_difference_oracle(&c, &jm, &payoff, &grid, 1.0, cfg.experiment.h.unwrap_or(0.01), &mc)
        .map_err(err)?;
    let exact = Normal::standard().cdf(0.1);
    let z_exact = delta.distance(&McEstimate::new(exact, 0.0, 1));
    let z_fd = delta.distance(&fd);
    Ok((
        z_exact <= 3.0 && z_fd <= 3.0,
        format!(
            "pathwise {:.5} ± {:.5}, Φ(0.1) = {exact:.5} ({z_exact:.2}σ), FD {:.5} ({z_fd:.2}σ)",
            delta.mean, delta.stderr, fd.mean
        ),
    ))
}

// 9. Derivative sup-moments stable under doubling of paths and steps.
fn derivative_stability() -> Outcome {
    let cfg = load("tanh.json", &[])?.config;
    let (c, jm, grid) = (cfg.coefficients().map_err(err)?, cfg.jump_model().map_err(err)?, cfg.grid().map_err(err)?);
    let r = verify_derivative_moments(&c, &jm, 2, 2.0, &grid, &cfg.mc(), &default_x_grid()).map_err(err)?;
    let orders_ok = r.orders == [4.0, 2.0];
    let unstable = r.rows.iter().filter(|row| !row.stable).count();
    let worst = r.rows.iter().map(|row| row.change.abs()).fold(0.0, f64::max);
    let finite = r.rows.iter().all(|row| row.base.mean.is_finite() && row.refined.mean.is_finite());
    Ok((
        orders_ok && finite && unstable == 0 && r.rows.len() == 22,
        format!(
            "p_k = {:?}, {} rows, {unstable} unstable, max change {worst:.2}σ (tol 3σ)",
            r.orders,
            r.rows.len()
        ),
    ))
}

fn strip_runtime(report: &str) -> String {
    let mut out = String::new();
    let mut skipping = false;
    for line in report.lines() {
        if line.starts_with("  \"runtime\": {") {
            skipping = true;
        } else if skipping {
            if line.starts_with("  }") {
                skipping = false;
            }
        } else {
            out.push_str(line);
            out.push('\n');
        }
    }
    out
}

fn cli_run(args: &[&str], workers: usize, out: &Path) -> Result<(String, i32), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_jumpflow"))
        .args(args)
        .args(["--workers", &workers.to_string(), "--out"])
        .arg(out)
        .output()
        .map_err(err)?;
    let code = status.status.code().unwrap_or(-1);
    Ok((String::from_utf8_lossy(&status.stdout).into_owned(), code))
}

// 10. Reports are byte-identical across reruns and worker counts.
fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let cfg = |n: &str| configs().join(n).display().to_string();
    let (merton, tanh) = (cfg("merton.json"), cfg("tanh.json"));
    let experiments: [(Vec<&str>, &str, Option<&str>); 3] = [
        (vec!["--config", &merton, "--set", "mc.paths=20000", "verify-moments"], "verify-moments", None),
        (
            vec!["--config", &tanh, "--set", "mc.paths=400", "--set", "grid.n_steps=32", "verify-derivatives"],
            "verify-derivatives",
            Some("derivative_moments.csv"),
        ),
        (vec!["--config", &merton, "--seed", "5", "--set", "experiment.paths=4", "simulate"], "simulate", Some("paths.csv")),
    ];
    let mut ok = true;
    let mut compared = 0;
    for (i, (args, name, csv)) in experiments.iter().enumerate() {
        let mut reports = Vec::new();
        let mut codes = BTreeSet::new();
        for (j, workers) in [1usize, 4, 1].into_iter().enumerate() {
            let out = dir.path().join(format!("{i}-{j}"));
            let (_, code) = cli_run(args, workers, &out)?;
            if ![0, 2, 3].contains(&code) {
                return Err(format!("`{name}` exited with {code}"));
            }
            codes.insert(code);
            let report = std::fs::read_to_string(out.join(format!("{name}.json"))).map_err(err)?;
            let extra = match csv {
                Some(f) => std::fs::read(out.join(f)).map_err(err)?,
                None => Vec::new(),
            };
            reports.push((strip_runtime(&report), extra));
        }
        ok &= codes.len() == 1 && reports.windows(2).all(|w| w[0] == w[1]);
        ok &= reports[0].0.contains("\"schema\": \"jumpflow/1\"") && !reports[0].0.contains("\"runtime\"");
        compared += reports.len();
    }
    Ok((ok, format!("{compared} runs over 3 experiments, workers 1/4/1, reports and CSVs byte-identical: {ok}")))
}

fn main() {
    let criteria = [
        Criterion { id: 1, name: "partition correctness", limit_s: 1.0, run: partitions },
        Criterion { id: 2, name: "BDG constants", limit_s: 1.0, run: constants },
        Criterion { id: 3, name: "affine degeneracy", limit_s: 10.0, run: affine_degeneracy },
        Criterion { id: 4, name: "pathwise GBM identity", limit_s: 10.0, run: gbm_identity },
        Criterion { id: 5, name: "variational vs finite difference", limit_s: 60.0, run: variational_vs_fd },
        Criterion { id: 6, name: "Grönwall bound holds", limit_s: 120.0, run: gronwall_holds },
        Criterion { id: 7, name: "BDG bounds hold", limit_s: 120.0, run: bdg_holds },
        Criterion { id: 8, name: "Black-Scholes Delta", limit_s: 120.0, run: bs_delta },
        Criterion { id: 9, name: "derivative-moment stability", limit_s: 300.0, run: derivative_stability },
        Criterion { id: 10, name: "determinism", limit_s: f64::INFINITY, run: determinism },
    ];
    let mut failures = 0;
    for c in &criteria {
        let start = Instant::now();
        let outcome = (c.run)();
        let secs = start.elapsed().as_secs_f64();
        let (pass, detail) = match outcome {
            Ok((pass, detail)) => (pass && secs < c.limit_s, detail),
            Err(e) => (false, format!("error: {e}")),
        };
        let limit = if c.limit_s.is_finite() { format!(", limit {} s", c.limit_s) } else { String::new() };
        println!(
            "[{}] criterion {:>2} {}: {detail} ({secs:.2} s{limit})",
            if pass { "PASS" } else { "FAIL" },
            c.id,
            c.name
        );
        failures += usize::from(!pass);
    }
    println!("acceptance: {} passed, {failures} failed", criteria.len() - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
