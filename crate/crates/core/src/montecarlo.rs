//! Monte Carlo estimators for the left-hand sides of the moment bounds, and
//! pathwise estimators of semigroup derivatives.
//!
//! Paths run in parallel on a dedicated rayon pool, but every estimator
//! first collects its per-path scalars into a vector ordered by path index
//! and only then reduces sequentially. Results are therefore bit-identical
//! for any worker count.

use rayon::prelude::*;
use serde::Serialize;

use crate::constants::{
    bdg_poisson_bound, corollary3_bound, derivative_moment_orders, gronwall_bound, CoefficientNorms,
    Corollary3Inputs, GronwallBound, LogReal,
};
use crate::error::{Error, Result};
use crate::model::{check_assumption_an, CoefficientSet, JumpModel, MarkFn, SampleGrid, TimeFn};
use crate::quadrature::gauss_legendre_on;
use crate::rng::PathSeed;
use crate::simulate::{sample_jump_times, FlowSystem, PathNoise, TimeGrid};

/// Smallest path count accepted by the moment estimators.
pub const MIN_PATHS: usize = 100;

/// Path count, seed and parallelism of one estimate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct McSettings {
    pub paths: usize,
    pub master_seed: u64,
    /// 0 lets rayon choose.
    pub workers: usize,
}

impl McSettings {
    pub fn new(paths: usize, master_seed: u64) -> Self {
        McSettings {
            paths,
            master_seed,
            workers: 0,
        }
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }

    pub fn doubled(self) -> Self {
        McSettings {
            paths: 2 * self.paths,
            ..self
        }
    }

    /// Runs `f` for every path and returns the results in path order.
    /// The first failing path (by index) is reported with its seed.
    pub fn map_paths<T, F>(&self, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(PathSeed) -> Result<T> + Sync + Send,
    {
        let run = || -> Vec<Result<T>> {
            (0..self.paths as u64)
                .into_par_iter()
                .map(|i| f(PathSeed::new(self.master_seed, i)))
                .collect()
        };
        let results = if self.workers == 0 {
            run()
        } else {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(self.workers)
                .build()
                .map_err(|e| Error::Config(format!("cannot start {} workers: {e}", self.workers)))?;
            pool.install(run)
        };
        results
            .into_iter()
            .enumerate()
            .map(|(i, r)| {
                r.map_err(|e| Error::PathFailure {
                    path_index: i as u64,
                    master_seed: self.master_seed,
                    source: Box::new(e),
                })
            })
            .collect()
    }
}

fn require_paths(mc: &McSettings) -> Result<()> {
    if mc.paths < MIN_PATHS {
        return Err(Error::param("mc.paths", format!("need at least {MIN_PATHS} paths, got {}", mc.paths)));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_samples: usize,
    pub ci95: (f64, f64),
}

impl McEstimate {
    /// Mean and standard error (sample standard deviation over `√n`),
    /// summed in slice order.
    pub fn from_samples(samples: &[f64]) -> Result<Self> {
        let n = samples.len();
        if n == 0 {
            return Err(Error::InvalidStats("no samples".into()));
        }
        if let Some(bad) = samples.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidStats(format!("non-finite sample {bad}")));
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Ok(McEstimate::new(mean, (var / n as f64).sqrt(), n))
    }

    pub fn new(mean: f64, stderr: f64, n_samples: usize) -> Self {
        McEstimate {
            mean,
            stderr,
            n_samples,
            ci95: (mean - 1.96 * stderr, mean + 1.96 * stderr),
        }
    }

    /// `|a - b|` in units of `sqrt(se_a² + se_b²)`; zero when both are exact
    /// and equal, infinite when exact and different.
    pub fn distance(&self, other: &McEstimate) -> f64 {
        let diff = (self.mean - other.mean).abs();
        let se = self.stderr.hypot(other.stderr);
        if diff == 0.0 {
            0.0
        } else {
            diff / se
        }
    }

    /// `|mean - value|` in standard errors.
    pub fn z_against(&self, value: f64) -> f64 {
        McEstimate::new(value, 0.0, 1).distance(self)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Holds,
    Violated,
    Inconclusive,
}

impl Verdict {
    /// `violated` dominates `inconclusive`, which dominates `holds`.
    pub fn combine<I: IntoIterator<Item = Verdict>>(items: I) -> Verdict {
        items.into_iter().fold(Verdict::Holds, |acc, v| match (acc, v) {
            (Verdict::Violated, _) | (_, Verdict::Violated) => Verdict::Violated,
            (Verdict::Inconclusive, _) | (_, Verdict::Inconclusive) => Verdict::Inconclusive,
            _ => Verdict::Holds,
        })
    }

    pub fn exit_code(self) -> i32 {
        match self {
            Verdict::Holds => 0,
            Verdict::Violated => 2,
            Verdict::Inconclusive => 3,
        }
    }
}

/// An estimate compared against a bound, in log domain.
#[derive(Clone, Debug, Serialize)]
pub struct BoundReport {
    pub quantity: String,
    pub estimate: McEstimate,
    /// `ln bound`
    pub log_bound: LogReal,
    /// The bound itself, `None` when it overflows.
    pub bound: Option<f64>,
    /// `ln bound - ln estimate.mean`
    pub log_slack: f64,
    /// `bound / estimate.mean`, when representable.
    pub slack_ratio: Option<f64>,
    pub verdict: Verdict,
}

fn ln_nonneg(v: f64) -> f64 {
    if v <= 0.0 {
        f64::NEG_INFINITY
    } else {
        v.ln()
    }
}

impl BoundReport {
    /// `holds` when the upper 95% limit is at most the bound, `violated` only
    /// when the lower limit exceeds it.
    pub fn compare(quantity: impl Into<String>, estimate: McEstimate, bound: LogReal) -> Self {
        let (lo, hi) = estimate.ci95;
        let lb = bound.ln();
        let verdict = if hi <= 0.0 || ln_nonneg(hi) <= lb {
            Verdict::Holds
        } else if lo > 0.0 && lo.ln() > lb {
            Verdict::Violated
        } else {
            Verdict::Inconclusive
        };
        let log_slack = lb - ln_nonneg(estimate.mean);
        let log_slack = if log_slack.is_nan() { 0.0 } else { log_slack };
        let slack_ratio = LogReal::from_ln(log_slack).value().filter(|_| log_slack.is_finite());
        BoundReport {
            quantity: quantity.into(),
            estimate,
            log_bound: bound,
            bound: bound.value(),
            log_slack,
            slack_ratio,
            verdict,
        }
    }
}

/// `E[sup_t |X^(k)_t|^p]` over the recorded times of each path.
pub fn estimate_sup_moment(
    coeffs: &CoefficientSet,
    jm: &JumpModel,
    x: f64,
    k: usize,
    p: f64,
    grid: &TimeGrid,
    mc: &McSettings,
) -> Result<McEstimate> {
    if !(p >= 1.0) {
        return Err(Error::InvalidExponent { p, min: 1.0 });
    }
    require_paths(mc)?;
    let system = FlowSystem::new(coeffs, jm, k)?;
    let samples = mc.map_paths(|seed| {
        let s = system.simulate_summary(x, grid, seed)?;
        Ok(s.running_sup[k].powf(p))
    })?;
    McEstimate::from_samples(&samples)
}

#[derive(Clone, Debug, Serialize)]
pub struct MomentBoundReport {
    pub report: BoundReport,
    pub gronwall: GronwallBound,
    pub p: f64,
    pub x: f64,
}

/// Sup-moment of `X` against the Grönwall bound `C(p, T)`. Norms are read
/// off the coefficients unless supplied.
#[allow(clippy::too_many_arguments)]
pub fn verify_moment_bound(
    coeffs: &CoefficientSet,
    jm: &JumpModel,
    x: f64,
    p: f64,
    grid: &TimeGrid,
    mc: &McSettings,
    norms: Option<&CoefficientNorms>,
) -> Result<MomentBoundReport> {
    let derived;
    let norms = match norms {
        Some(n) => n,
        None => {
            derived = CoefficientNorms::from_model(coeffs, jm, p, grid.horizon())?;
            &derived
        }
    };
    let gronwall = gronwall_bound(norms, p, grid.horizon(), x)?;
    let estimate = estimate_sup_moment(coeffs, jm, x, 0, p, grid, mc)?;
    Ok(MomentBoundReport {
        report: BoundReport::compare(format!("E[sup |X_t|^{p}]"), estimate, gronwall.c_pt),
        gronwall,
        p,
        x,
    })
}

/// One `(x, k)` cell of the derivative-moment table.
#[derive(Clone, Debug, Serialize)]
pub struct DerivativeMomentRow {
    pub x: f64,
    pub k: usize,
    pub p_k: f64,
    pub base: McEstimate,
    /// Doubled path count and doubled step count.
    pub refined: McEstimate,
    /// `|base - refined|` in combined standard errors.
    pub change: f64,
    pub stable: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct DerivativeOrderSummary {
    pub k: usize,
    pub p_k: f64,
    /// Largest base estimate over the x grid and where it occurs.
    pub sup_over_x: McEstimate,
    pub argmax_x: f64,
    pub stable: bool,
    pub verdict: Verdict,
}

#[derive(Clone, Debug, Serialize)]
pub struct DerivativeMomentReport {
    pub n: usize,
    pub q: f64,
    pub orders: Vec<f64>,
    pub x_grid: Vec<f64>,
    pub base_paths: usize,
    pub base_steps: usize,
    pub rows: Vec<DerivativeMomentRow>,
    pub summary: Vec<DerivativeOrderSummary>,
    pub in_hypothesis: bool,
    pub hypothesis_note: String,
    pub verdict: Verdict,
}

/// Stability threshold, in combined standard errors, for the refinement check.
pub const STABILITY_SIGMAS: f64 = 3.0;

/// `11` equispaced points on `[-2, 2]`.
pub fn default_x_grid() -> Vec<f64> {
    (-10..=10).step_by(2).map(|i| f64::from(i) / 5.0).collect()
}

/// `E[sup |X^(k)|^{p_k}]` for `k = 1..=n` over a grid of initial points,
/// each checked for stability when both the path count and the step count
/// are doubled.
pub fn verify_derivative_moments(
    coeffs: &CoefficientSet,
    jm: &JumpModel,
    n: usize,
    q: f64,
    grid: &TimeGrid,
    mc: &McSettings,
    x_grid: &[f64],
) -> Result<DerivativeMomentReport> {
    if n == 0 {
        return Err(Error::InvalidOrder { k: 0, max_order: coeffs.n_max() });
    }
    if !(q >= 2.0) {
        return Err(Error::InvalidExponent { p: q, min: 2.0 });
    }
    if x_grid.is_empty() {
        return Err(Error::param("experiment.x_grid", "must be nonempty"));
    }
    require_paths(mc)?;
    let orders = derivative_moment_orders(n, q);
    let system = FlowSystem::new(coeffs, jm, n)?;
    let fine = grid.refined();
    let refined_mc = mc.doubled();

    let sample_all = |g: &TimeGrid, m: &McSettings, x: f64| -> Result<Vec<McEstimate>> {
        let sups = m.map_paths(|seed| Ok(system.simulate_summary(x, g, seed)?.running_sup))?;
        (1..=n)
            .map(|k| {
                let p_k = orders.order(k);
                let s: Vec<f64> = sups.iter().map(|r| r[k].powf(p_k)).collect();
                McEstimate::from_samples(&s)
            })
            .collect()
    };

    let mut rows = Vec::new();
    for &x in x_grid {
        let base = sample_all(grid, mc, x)?;
        let refined = sample_all(&fine, &refined_mc, x)?;
        for k in 1..=n {
            let (b, r) = (base[k - 1], refined[k - 1]);
            let change = b.distance(&r);
            rows.push(DerivativeMomentRow {
                x,
                k,
                p_k: orders.order(k),
                base: b,
                refined: r,
                change,
                stable: change < STABILITY_SIGMAS,
            });
        }
    }

    let summary: Vec<DerivativeOrderSummary> = (1..=n)
        .map(|k| {
            let of_k: Vec<&DerivativeMomentRow> = rows.iter().filter(|r| r.k == k).collect();
            let top = of_k
                .iter()
                .max_by(|a, b| a.base.mean.total_cmp(&b.base.mean))
                .expect("x grid is nonempty");
            let stable = of_k.iter().all(|r| r.stable);
            DerivativeOrderSummary {
                k,
                p_k: orders.order(k),
                sup_over_x: top.base,
                argmax_x: top.x,
                stable,
                verdict: if stable { Verdict::Holds } else { Verdict::Inconclusive },
            }
        })
        .collect();

    let x_max = x_grid.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1.0);
    let assumption = check_assumption_an(
        coeffs,
        jm,
        n,
        &SampleGrid::uniform(grid.horizon(), 2.0 * x_max, 3.0, 21),
        orders.order(1),
    )?;
    let hypothesis_note = if assumption.holds {
        format!(
            "sup over x taken over {} grid points in [{}, {}]; (A_n) holds on the sample grid",
            x_grid.len(),
            x_grid.iter().cloned().fold(f64::INFINITY, f64::min),
            x_grid.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        )
    } else {
        format!("out-of-hypothesis: {}", assumption.violations.join("; "))
    };
    Ok(DerivativeMomentReport {
        n,
        q,
        orders: orders.orders.clone(),
        x_grid: x_grid.to_vec(),
        base_paths: mc.paths,
        base_steps: grid.n_steps(),
        verdict: Verdict::combine(summary.iter().map(|s| s.verdict)),
        rows,
        summary,
        in_hypothesis: assumption.holds,
        hypothesis_note,
    })
}

/// Deterministic integrand `g_s(y) = scale(s) h(y)` of `K_t = ∫∫ g dÑ`.
#[derive(Clone, Debug)]
pub struct BdgIntegrand {
    pub scale: TimeFn,
    pub mark: MarkFn,
}

impl BdgIntegrand {
    pub fn new(scale: impl Into<TimeFn>, mark: MarkFn) -> Self {
        BdgIntegrand {
            scale: scale.into(),
            mark,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct IsometryCheck {
    /// `∫∫ g² ν ds`, the exact value of `E[K_T²]`.
    pub exact: f64,
    pub estimate: McEstimate,
    /// Distance of the estimate from `exact`, in standard errors.
    pub z: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BdgReport {
    pub p: f64,
    pub horizon: f64,
    pub sup_moment: McEstimate,
    pub terminal_moment: McEstimate,
    pub inputs: Corollary3Inputs,
    /// `E[(∫∫ g^{2^k} ν ds)^{p/2^k}]`, `k = 1, 2, ...`
    pub iterated_moments: Vec<f64>,
    pub corollary3: BoundReport,
    pub lemma: BoundReport,
    pub isometry: IsometryCheck,
    pub verdict: Verdict,
}

/// Number of Gauss–Legendre nodes per sub-interval for time-varying
/// compensators.
const COMPENSATOR_NODES: usize = 16;

/// Simulates `K_t = ∫₀ᵗ∫ g dÑ` on the grid (plus jump instants), estimates
/// `E[(K*_T)^p]` and compares it with both explicit BDG bounds.
pub fn estimate_bdg_lhs(
    integrand: &BdgIntegrand,
    jm: &JumpModel,
    p: f64,
    grid: &TimeGrid,
    mc: &McSettings,
) -> Result<BdgReport> {
    if !(p >= 2.0) {
        return Err(Error::InvalidExponent { p, min: 2.0 });
    }
    require_paths(mc)?;
    let horizon = grid.horizon();
    let h = &integrand.mark;
    let scale = &integrand.scale;
    let mean_h = if jm.is_trivial() { 0.0 } else { jm.expectation(h)? };
    let constant_rate = jm.intensity().is_constant() && scale.as_constant().is_some();
    // ∫_a^b λ(s) scale(s) ds
    let rate_integral = |a: f64, b: f64| -> f64 {
        if b <= a {
            return 0.0;
        }
        if constant_rate {
            jm.intensity_at(0.0) * scale.at(0.0) * (b - a)
        } else {
            gauss_legendre_on(COMPENSATOR_NODES, a, b).integrate(|s| jm.intensity_at(s) * scale.at(s))
        }
    };
    let node_rates: Vec<f64> = {
        let mut acc = 0.0;
        let mut v = vec![0.0];
        for i in 0..grid.n_steps() {
            acc += rate_integral(grid.time(i), grid.time(i + 1));
            v.push(acc);
        }
        v
    };

    let samples = mc.map_paths(|seed| {
        let mut rng = seed.rng();
        let jumps = sample_jump_times(jm, grid, &mut rng)?;
        let mut sum_jumps = 0.0;
        let mut sup: f64 = 0.0;
        let mut next = 0;
        for i in 1..=grid.n_steps() {
            let a = grid.time(i - 1);
            while next < jumps.len() && jumps[next].t <= grid.time(i) {
                let ev = jumps[next];
                let comp = mean_h * (node_rates[i - 1] + rate_integral(a, ev.t));
                sup = sup.max((sum_jumps - comp).abs());
                sum_jumps += scale.at(ev.t) * h.eval(ev.mark);
                sup = sup.max((sum_jumps - comp).abs());
                next += 1;
            }
            sup = sup.max((sum_jumps - mean_h * node_rates[i]).abs());
        }
        let terminal = sum_jumps - mean_h * node_rates[grid.n_steps()];
        if !sup.is_finite() {
            return Err(Error::BlowUp {
                t: horizon,
                state: vec![terminal],
            });
        }
        Ok((sup, terminal))
    })?;

    let sups: Vec<f64> = samples.iter().map(|(s, _)| s.powf(p)).collect();
    let terminals: Vec<f64> = samples.iter().map(|(_, k)| k.abs().powf(p)).collect();
    let squares: Vec<f64> = samples.iter().map(|(_, k)| k * k).collect();
    let sup_moment = McEstimate::from_samples(&sups)?;
    let terminal_moment = McEstimate::from_samples(&terminals)?;

    let rule = gauss_legendre_on(64, 0.0, horizon);
    let mark_moment = |f: &dyn Fn(f64) -> f64| -> Result<f64> {
        if jm.is_trivial() || h.is_zero() {
            Ok(0.0)
        } else {
            jm.quadrature_expectation(&|y| f(h.eval(y)))
        }
    };
    let abs_p = mark_moment(&|v| v.abs().powf(p))?;
    let sq = mark_moment(&|v| v * v)?;
    let jump_p = abs_p * rule.integrate(|s| jm.intensity_at(s) * scale.at(s).abs().powf(p));
    let jump_2 = rule.integrate(|s| (jm.intensity_at(s) * scale.at(s).powi(2) * sq).powf(0.5 * p));
    let l2 = sq * rule.integrate(|s| jm.intensity_at(s) * scale.at(s).powi(2));

    let depth = crate::constants::ceil_log2(p).saturating_sub(1);
    let mut iterated_moments = Vec::new();
    for k in 1..=depth {
        let e = 2f64.powi(k as i32);
        let m = mark_moment(&|v| v.abs().powf(e))?;
        let total = m * rule.integrate(|s| jm.intensity_at(s) * scale.at(s).abs().powf(e));
        iterated_moments.push(total.powf(p / e));
    }

    let inputs = Corollary3Inputs {
        x: 0.0,
        drift_p: 0.0,
        diffusion_p: 0.0,
        jump_p,
        jump_2,
    };
    let corollary3 = BoundReport::compare(
        format!("E[(K*)^{p}] vs time-factored Kunita bound"),
        sup_moment,
        corollary3_bound(p, horizon, &inputs)?,
    );
    let lemma = BoundReport::compare(
        format!("E[(K*)^{p}] vs compensated Poisson BDG bound"),
        sup_moment,
        bdg_poisson_bound(p, jump_p, &iterated_moments)?,
    );
    let sq_est = McEstimate::from_samples(&squares)?;
    let isometry = IsometryCheck {
        exact: l2,
        z: sq_est.z_against(l2),
        estimate: sq_est,
    };
    Ok(BdgReport {
        p,
        horizon,
        sup_moment,
        terminal_moment,
        inputs,
        iterated_moments,
        verdict: Verdict::combine([corollary3.verdict, lemma.verdict]),
        corollary3,
        lemma,
        isometry,
    })
}

/// Test functions `f` with derivatives, for `∂ⁿ P_t f`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payoff {
    /// `slope · z + intercept`
    Linear { slope: f64, intercept: f64 },
    /// `z^exponent`
    Power { exponent: u32 },
    /// `sin z`
    Sin,
    Constant { value: f64 },
    /// `(z - strike)^+`, admitted only for `n <= 1`; the derivative is
    /// `1{z >= strike}` (closed at the strike).
    Call { strike: f64 },
}

impl Payoff {
    pub fn parse(name: &str, strike: Option<f64>, exponent: Option<u32>) -> Result<Self> {
        match name {
            "linear" | "identity" => Ok(Payoff::Linear { slope: 1.0, intercept: 0.0 }),
            "square" => Ok(Payoff::Power { exponent: 2 }),
            "power" => Ok(Payoff::Power {
                exponent: exponent.ok_or_else(|| Error::InvalidPayoff("power payoff needs an exponent".into()))?,
            }),
            "sin" => Ok(Payoff::Sin),
            "constant" => Ok(Payoff::Constant { value: 1.0 }),
            "call" => Ok(Payoff::Call {
                strike: strike.ok_or_else(|| Error::InvalidPayoff("call payoff needs a strike".into()))?,
            }),
            other => Err(Error::InvalidPayoff(format!("unknown payoff `{other}`"))),
        }
    }

    pub fn value(&self, z: f64) -> f64 {
        let mut out = [0.0];
        self.derivatives(z, &mut out);
        out[0]
    }

    /// Highest order for which [`Payoff::derivatives`] is meaningful.
    pub fn max_order(&self) -> Option<usize> {
        match self {
            Payoff::Call { .. } => Some(1),
            _ => None,
        }
    }

    /// `out[j] = f^(j)(z)`.
    pub fn derivatives(&self, z: f64, out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = match *self {
                Payoff::Linear { slope, intercept } => match j {
                    0 => slope * z + intercept,
                    1 => slope,
                    _ => 0.0,
                },
                Payoff::Power { exponent } => {
                    let e = exponent as usize;
                    if j > e {
                        0.0
                    } else {
                        let falling: f64 = ((e - j + 1)..=e).map(|i| i as f64).product();
                        falling * z.powi((e - j) as i32)
                    }
                }
                Payoff::Sin => match j % 4 {
                    0 => z.sin(),
                    1 => z.cos(),
                    2 => -z.sin(),
                    _ => -z.cos(),
                },
                Payoff::Constant { value } => {
                    if j == 0 {
                        value
                    } else {
                        0.0
                    }
                }
                Payoff::Call { strike } => match j {
                    0 => (z - strike).max(0.0),
                    1 => {
                        if z >= strike {
                            1.0
                        } else {
                            0.0
                        }
                    }
                    _ => f64::NAN,
                },
            };
        }
    }
}

/// `∂ⁿ P_T f(x)` as the average of `Σ_π f^(|π|)(X_T) Π X_T^(|B|)`.
pub fn estimate_semigroup_derivative(
    coeffs: &CoefficientSet,
    jm: &JumpModel,
    payoff: &Payoff,
    n: usize,
    grid: &TimeGrid,
    x: f64,
    mc: &McSettings,
) -> Result<McEstimate> {
    if let Some(max) = payoff.max_order() {
        if n > max {
            return Err(Error::InvalidPayoff(format!(
                "{payoff:?} has no derivative of order {n}; only n <= {max} is admitted"
            )));
        }
    }
    let system = FlowSystem::new(coeffs, jm, n)?;
    let samples = mc.map_paths(|seed| {
        let s = system.simulate_summary(x, grid, seed)?;
        let v = s.terminal.values();
        let mut fd = vec![0.0; n + 1];
        payoff.derivatives(v[0], &mut fd);
        if n == 0 {
            return Ok(fd[0]);
        }
        coeffs.partition_table().faa_di_bruno_sum(n, &fd, v)
    })?;
    McEstimate::from_samples(&samples)
}

/// `(P_T f(x+h) - P_T f(x-h)) / 2h` with identical noise for both legs.
pub fn finite_difference_oracle(
    coeffs: &CoefficientSet,
    jm: &JumpModel,
    payoff: &Payoff,
    grid: &TimeGrid,
    x: f64,
    h: f64,
    mc: &McSettings,
) -> Result<McEstimate> {
    if !(h > 0.0) {
        return Err(Error::param("h", "bump must be > 0"));
    }
    let system = FlowSystem::new(coeffs, jm, 0)?;
    let samples = mc.map_paths(|seed| {
        let noise = PathNoise::sample(jm, grid, &mut seed.rng())?;
        let up = system.run(x + h, grid, &noise, |_, _, _| {})?.x();
        let down = system.run(x - h, grid, &noise, |_, _, _| {})?.x();
        Ok((payoff.value(up) - payoff.value(down)) / (2.0 * h))
    })?;
    McEstimate::from_samples(&samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{PolyTanhParams, SizeLaw};

    fn grid(n: usize) -> TimeGrid {
        TimeGrid::new(1.0, n).unwrap()
    }

    fn mc(paths: usize) -> McSettings {
        McSettings::new(paths, 17)
    }

    #[test]
    fn estimate_statistics() {
        let e = McEstimate::from_samples(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(e.mean, 2.5);
        let sd = (5.0f64 / 3.0).sqrt();
        assert!((e.stderr - sd / 2.0).abs() < 1e-15);
        assert!((e.ci95.1 - e.mean - 1.96 * e.stderr).abs() < 1e-15);
        assert!(McEstimate::from_samples(&[]).is_err());
        assert!(McEstimate::from_samples(&[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn verdict_rules() {
        let est = McEstimate::new(1.0, 0.1, 100);
        assert_eq!(BoundReport::compare("q", est, LogReal::from_value(2.0)).verdict, Verdict::Holds);
        assert_eq!(BoundReport::compare("q", est, LogReal::from_value(1.1)).verdict, Verdict::Inconclusive);
        assert_eq!(BoundReport::compare("q", est, LogReal::from_value(0.5)).verdict, Verdict::Violated);
        let zero = McEstimate::new(0.0, 0.0, 100);
        let r = BoundReport::compare("q", zero, LogReal::ZERO);
        assert_eq!(r.verdict, Verdict::Holds);
        // an overflowing bound still orders correctly
        let huge = BoundReport::compare("q", est, LogReal::from_ln(5000.0));
        assert_eq!(huge.verdict, Verdict::Holds);
        assert!(huge.bound.is_none());
        assert_eq!(huge.log_slack, 5000.0);
        assert_eq!(
            Verdict::combine([Verdict::Holds, Verdict::Inconclusive, Verdict::Holds]),
            Verdict::Inconclusive
        );
        assert_eq!(Verdict::combine([Verdict::Inconclusive, Verdict::Violated]), Verdict::Violated);
    }

    #[test]
    fn zero_dynamics_moment_is_exact() {
        let c = CoefficientSet::gbm(0.0, 0.0, 1).unwrap();
        let e = estimate_sup_moment(&c, &JumpModel::none(), 1.0, 0, 2.0, &grid(10), &mc(100)).unwrap();
        assert_eq!(e.mean, 1.0);
        assert_eq!(e.stderr, 0.0);
        let r = verify_moment_bound(&c, &JumpModel::none(), 1.0, 2.0, &grid(10), &mc(100), None).unwrap();
        assert_eq!(r.report.verdict, Verdict::Holds);
        assert!((r.report.slack_ratio.unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn preconditions() {
        let c = CoefficientSet::gbm(0.0, 0.2, 1).unwrap();
        let jm = JumpModel::none();
        assert!(estimate_sup_moment(&c, &jm, 1.0, 0, 2.0, &grid(10), &mc(99)).is_err());
        assert!(estimate_sup_moment(&c, &jm, 1.0, 0, 0.5, &grid(10), &mc(100)).is_err());
        assert!(estimate_sup_moment(&c, &jm, 1.0, 2, 2.0, &grid(10), &mc(100)).is_err());
    }

    #[test]
    fn gbm_sup_moment_dominates_terminal_and_scales() {
        let c = CoefficientSet::gbm(0.1, 0.2, 1).unwrap();
        let jm = JumpModel::none();
        let x = 1.5;
        let e0 = estimate_sup_moment(&c, &jm, x, 0, 2.0, &grid(50), &mc(4000)).unwrap();
        let e1 = estimate_sup_moment(&c, &jm, x, 1, 2.0, &grid(50), &mc(4000)).unwrap();
        let terminal = x * x * 0.24f64.exp();
        assert!(e0.mean >= terminal - 3.0 * e0.stderr);
        assert!((e1.mean - e0.mean / (x * x)).abs() <= 1e-10 * e1.mean);
    }

    #[test]
    fn results_do_not_depend_on_worker_count() {
        let c = CoefficientSet::merton(0.05, 0.2, 1).unwrap();
        let jm = JumpModel::homogeneous(2.0, SizeLaw::Gaussian { mean: 0.0, std: 0.2 }, 16).unwrap();
        let one = estimate_sup_moment(&c, &jm, 1.0, 1, 2.0, &grid(20), &mc(300).with_workers(1)).unwrap();
        let four = estimate_sup_moment(&c, &jm, 1.0, 1, 2.0, &grid(20), &mc(300).with_workers(4)).unwrap();
        assert_eq!(one, four);
    }

    #[test]
    fn doubling_paths_shrinks_stderr() {
        let c = CoefficientSet::gbm(0.1, 0.3, 1).unwrap();
        let jm = JumpModel::none();
        let a = estimate_sup_moment(&c, &jm, 1.0, 0, 2.0, &grid(20), &mc(4000)).unwrap();
        let b = estimate_sup_moment(&c, &jm, 1.0, 0, 2.0, &grid(20), &mc(8000)).unwrap();
        let ratio = a.stderr / b.stderr;
        assert!((ratio / 2f64.sqrt() - 1.0).abs() < 0.2, "{ratio}");
    }

    #[test]
    fn affine_second_derivative_moment_is_zero() {
        let c = CoefficientSet::merton(0.05, 0.2, 2).unwrap();
        let jm = JumpModel::homogeneous(1.0, SizeLaw::Gaussian { mean: 0.0, std: 0.1 }, 16).unwrap();
        let r = verify_derivative_moments(&c, &jm, 2, 2.0, &grid(8), &mc(100), &[0.5, 1.0]).unwrap();
        for row in r.rows.iter().filter(|r| r.k == 2) {
            assert_eq!(row.base.mean, 0.0);
            assert!(row.stable);
        }
        assert_eq!(r.orders, vec![4.0, 2.0]);
    }

    #[test]
    fn gbm_first_derivative_moment_matches_state_moment() {
        let c = CoefficientSet::gbm(0.1, 0.2, 1).unwrap();
        let jm = JumpModel::none();
        let x = 2.0;
        let r = verify_derivative_moments(&c, &jm, 1, 2.0, &grid(16), &mc(200), &[x]).unwrap();
        let e0 = estimate_sup_moment(&c, &jm, x, 0, 2.0, &grid(16), &mc(200)).unwrap();
        assert!((r.rows[0].base.mean - e0.mean / (x * x)).abs() < 1e-10);
    }

    #[test]
    fn square_drift_is_out_of_hypothesis() {
        let params = PolyTanhParams {
            drift_poly: vec![0.0, 0.0, -0.1],
            drift_tanh: 0.0,
            ..PolyTanhParams::default()
        };
        let c = CoefficientSet::polynomial_tanh(&params, 2).unwrap().with_lip_bound(1.0).unwrap();
        let r = verify_derivative_moments(&c, &JumpModel::none(), 1, 2.0, &grid(8), &mc(100), &[0.0]).unwrap();
        assert!(!r.in_hypothesis);
        assert!(r.hypothesis_note.starts_with("out-of-hypothesis"));
    }

    fn pm_one(lambda: f64) -> JumpModel {
        JumpModel::homogeneous(lambda, SizeLaw::Discrete { atoms: vec![(-1.0, 0.5), (1.0, 0.5)] }, 0).unwrap()
    }

    #[test]
    fn bdg_zero_integrand() {
        let r = estimate_bdg_lhs(&BdgIntegrand::new(1.0, MarkFn::Zero), &pm_one(3.0), 2.0, &grid(10), &mc(100)).unwrap();
        assert_eq!(r.sup_moment.mean, 0.0);
        assert!(r.corollary3.log_bound.is_zero());
        assert_eq!(r.verdict, Verdict::Holds);
    }

    #[test]
    fn bdg_compound_poisson_isometry() {
        let r = estimate_bdg_lhs(&BdgIntegrand::new(1.0, MarkFn::Identity), &pm_one(3.0), 2.0, &grid(50), &mc(20_000))
            .unwrap();
        assert!((r.isometry.exact - 3.0).abs() < 1e-12);
        assert!(r.isometry.z < 3.0, "{:?}", r.isometry);
        assert!(r.sup_moment.mean >= r.isometry.estimate.mean);
        assert_eq!(r.verdict, Verdict::Holds);
        // 4 C̃_2 (3 + 3)
        let want = 4.0 * 160.0 * std::f64::consts::E * 6.0;
        assert!((r.corollary3.bound.unwrap() / want - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bdg_time_varying_scale_compensator() {
        // g_s(y) = s, marks ≡ 1: K_T = Σ τ_i - λT²/2 has mean zero
        let jm = JumpModel::homogeneous(4.0, SizeLaw::Discrete { atoms: vec![(1.0, 1.0)] }, 0).unwrap();
        let integrand = BdgIntegrand::new(TimeFn::custom(|s| s), MarkFn::Constant(1.0));
        let r = estimate_bdg_lhs(&integrand, &jm, 2.0, &grid(20), &mc(20_000)).unwrap();
        // E[K_T²] = λ ∫ s² ds = 4/3
        assert!((r.isometry.exact - 4.0 / 3.0).abs() < 1e-12);
        assert!(r.isometry.z < 3.0);
    }

    #[test]
    fn payoff_derivatives() {
        let mut out = [0.0; 4];
        Payoff::Power { exponent: 3 }.derivatives(2.0, &mut out);
        assert_eq!(out, [8.0, 12.0, 12.0, 6.0]);
        Payoff::Sin.derivatives(0.0, &mut out);
        assert_eq!(out, [0.0, 1.0, 0.0, -1.0]);
        let mut two = [0.0; 2];
        Payoff::Call { strike: 1.0 }.derivatives(1.0, &mut two);
        assert_eq!(two, [0.0, 1.0]);
        assert!(Payoff::parse("call", None, None).is_err());
        assert!(Payoff::parse("digital", None, None).is_err());
    }

    #[test]
    fn semigroup_derivative_examples() {
        let c = CoefficientSet::gbm(0.1, 0.2, 2).unwrap();
        let jm = JumpModel::none();
        let lin = Payoff::Linear { slope: 1.0, intercept: 0.0 };
        let e = estimate_semigroup_derivative(&c, &jm, &lin, 1, &grid(50), 1.0, &mc(20_000)).unwrap();
        assert!(e.z_against(0.1f64.exp()) < 3.0, "{e:?}");
        let k = Payoff::Constant { value: 3.0 };
        for n in 1..=2 {
            let e = estimate_semigroup_derivative(&c, &jm, &k, n, &grid(10), 1.0, &mc(100)).unwrap();
            assert_eq!(e.mean, 0.0);
        }
        let call = Payoff::Call { strike: 1.0 };
        assert!(matches!(
            estimate_semigroup_derivative(&c, &jm, &call, 2, &grid(10), 1.0, &mc(100)),
            Err(Error::InvalidPayoff(_))
        ));
    }

    #[test]
    fn finite_difference_examples() {
        let zero = CoefficientSet::gbm(0.0, 0.0, 1).unwrap();
        let jm = JumpModel::none();
        let sq = Payoff::Power { exponent: 2 };
        let e = finite_difference_oracle(&zero, &jm, &sq, &grid(4), 1.0, 1e-3, &mc(1)).unwrap();
        assert!((e.mean - 2.0).abs() < 1e-10);
        let gbm = CoefficientSet::gbm(0.1, 0.2, 1).unwrap();
        let lin = Payoff::Linear { slope: 1.0, intercept: 0.0 };
        let fd = finite_difference_oracle(&gbm, &jm, &lin, &grid(50), 1.0, 0.1, &mc(500)).unwrap();
        let pw = estimate_semigroup_derivative(&gbm, &jm, &lin, 1, &grid(50), 1.0, &mc(500)).unwrap();
        assert!((fd.mean - pw.mean).abs() < 1e-12);
    }

    #[test]
    fn pathwise_and_finite_difference_agree_on_smooth_payoffs() {
        let tanh = CoefficientSet::polynomial_tanh(
            &PolyTanhParams {
                jump_poly: vec![0.0, 0.1],
                ..PolyTanhParams::default()
            },
            2,
        )
        .unwrap();
        let merton = CoefficientSet::merton(0.05, 0.2, 1).unwrap();
        let jm = JumpModel::homogeneous(2.0, SizeLaw::Gaussian { mean: 0.0, std: 0.2 }, 16).unwrap();
        for c in [&tanh, &merton] {
            let pw = estimate_semigroup_derivative(c, &jm, &Payoff::Sin, 1, &grid(32), 0.7, &mc(2000)).unwrap();
            let fd = finite_difference_oracle(c, &jm, &Payoff::Sin, &grid(32), 0.7, 1e-3, &mc(2000)).unwrap();
            assert!(pw.distance(&fd) < 3.0, "{pw:?} {fd:?}");
        }
    }
}
