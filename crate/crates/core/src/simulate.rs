//! Euler scheme for `(X, X^(1), ..., X^(n))` with exact, thinned jump times.
//!
//! All orders share one Brownian path. Jump instants are inserted into the
//! time grid; the Brownian increment of a grid step that contains jumps is
//! split with Brownian bridges, so the underlying path does not depend on
//! the jumps. The compensator enters as the drift `-λ(t) E_μ[jump_k]`,
//! evaluated at the left end of each sub-step.
//!
//! Noise is drawn before any state is touched (jump times and marks, then
//! one normal per grid step, then one bridge normal per jump), so two runs
//! from different initial points with the same seed see identical noise.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{CoefficientSet, JumpModel, ORDER_SLOTS};
use crate::partitions::sum_unchecked;
use crate::rng::PathSeed;

/// Uniform grid on `[0, T]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TimeGrid {
    horizon: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::param("grid.horizon", format!("must be finite and > 0, got {horizon}")));
        }
        if n_steps == 0 {
            return Err(Error::param("grid.n_steps", "must be positive"));
        }
        Ok(TimeGrid { horizon, n_steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn step(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    /// `t_i`; the last node is exactly `T`.
    pub fn time(&self, i: usize) -> f64 {
        if i == self.n_steps {
            self.horizon
        } else {
            self.horizon * i as f64 / self.n_steps as f64
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|i| self.time(i)).collect()
    }

    pub fn refined(&self) -> TimeGrid {
        TimeGrid {
            horizon: self.horizon,
            n_steps: 2 * self.n_steps,
        }
    }
}

/// `(X, X^(1), ..., X^(n))`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FlowState {
    values: Vec<f64>,
}

impl FlowState {
    /// `(x, 1, 0, ..., 0)` with `n` derivative orders.
    pub fn initial(x: f64, n: usize) -> Self {
        let mut values = vec![0.0; n + 1];
        values[0] = x;
        if n >= 1 {
            values[1] = 1.0;
        }
        FlowState { values }
    }

    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::IncompleteState { order: 0 });
        }
        if values.len() > ORDER_SLOTS {
            return Err(Error::InvalidOrder {
                k: values.len() - 1,
                max_order: ORDER_SLOTS - 1,
            });
        }
        Ok(FlowState { values })
    }

    pub fn order(&self) -> usize {
        self.values.len() - 1
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn x(&self) -> f64 {
        self.values[0]
    }

    pub fn derivative(&self, k: usize) -> f64 {
        self.values[k]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct JumpEvent {
    pub t: f64,
    pub mark: f64,
}

/// Jump times on `(0, T]` by thinning a rate-`λ̄` Poisson process, each with
/// an independent mark. Sorted ascending.
pub fn sample_jump_times<R: Rng + ?Sized>(jm: &JumpModel, grid: &TimeGrid, rng: &mut R) -> Result<Vec<JumpEvent>> {
    let bar = jm.dominating_intensity();
    if bar == 0.0 {
        if !jm.is_trivial() {
            jm.check_domination(grid.horizon(), grid.n_steps().max(64))?;
        }
        return Ok(Vec::new());
    }
    let exp = Exp::new(bar).map_err(|e| Error::InvalidDomination(e.to_string()))?;
    let mut events = Vec::new();
    let mut t = 0.0;
    loop {
        t += exp.sample(rng);
        if t > grid.horizon() {
            break;
        }
        let lambda = jm.intensity_at(t);
        if !(lambda >= 0.0) || lambda > bar * (1.0 + 1e-12) {
            return Err(Error::InvalidDomination(format!(
                "λ({t}) = {lambda} is outside [0, λ̄ = {bar}]"
            )));
        }
        let u: f64 = rng.random();
        if u * bar < lambda {
            events.push(JumpEvent {
                t,
                mark: jm.sample_mark(rng),
            });
        }
    }
    Ok(events)
}

/// All randomness of one path.
#[derive(Clone, Debug, Default)]
pub struct PathNoise {
    pub jumps: Vec<JumpEvent>,
    /// Brownian increment over each grid step.
    pub dw: Vec<f64>,
    /// One standard normal per jump, used to place `W` at the jump time.
    pub bridge: Vec<f64>,
}

impl PathNoise {
    pub fn sample<R: Rng + ?Sized>(jm: &JumpModel, grid: &TimeGrid, rng: &mut R) -> Result<Self> {
        let jumps = sample_jump_times(jm, grid, rng)?;
        let sd = grid.step().sqrt();
        let dw = (0..grid.n_steps())
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                sd * z
            })
            .collect();
        let bridge = jumps.iter().map(|_| StandardNormal.sample(rng)).collect();
        Ok(PathNoise { jumps, dw, bridge })
    }

    /// Pure Brownian noise from given increments, no jumps.
    pub fn brownian(dw: Vec<f64>) -> Self {
        PathNoise {
            jumps: Vec::new(),
            dw,
            bridge: Vec::new(),
        }
    }
}

/// The coupled system for a fixed coefficient set, jump model and order.
///
/// Mark expectations of the jump terms are computed once here.
#[derive(Clone, Debug)]
pub struct FlowSystem<'a> {
    coeffs: &'a CoefficientSet,
    jm: &'a JumpModel,
    order: usize,
    mark_means: Vec<f64>,
    compensated: bool,
}

impl<'a> FlowSystem<'a> {
    pub fn new(coeffs: &'a CoefficientSet, jm: &'a JumpModel, order: usize) -> Result<Self> {
        if order > coeffs.n_max() {
            return Err(Error::InsufficientSmoothness {
                k: order,
                n_max: coeffs.n_max(),
            });
        }
        let compensated = coeffs.has_jumps() && !jm.is_trivial();
        let mark_means = if compensated {
            coeffs
                .jump_terms()
                .iter()
                .map(|j| jm.expectation(&j.mark))
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        Ok(FlowSystem {
            coeffs,
            jm,
            order,
            mark_means,
            compensated,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn coeffs(&self) -> &CoefficientSet {
        self.coeffs
    }

    pub fn jump_model(&self) -> &JumpModel {
        self.jm
    }

    /// `Σ_π outer[|π|] Π X^(|B|)` for `k >= 1`, `outer[0]` for `k = 0`.
    #[inline]
    fn faa(&self, k: usize, outer: &[f64], values: &[f64]) -> f64 {
        if k == 0 {
            return outer[0];
        }
        let parts = self
            .coeffs
            .partition_table()
            .partitions(k)
            .expect("order checked against n_max");
        sum_unchecked(parts, outer, values)
    }

    /// In-place Euler step of length `dt` with Brownian increment `dw`.
    pub fn euler_step_in_place(&self, values: &mut [f64], t: f64, dt: f64, dw: f64) -> Result<()> {
        let n = values.len() - 1;
        let x = values[0];
        let mut dr = [0.0; ORDER_SLOTS];
        let mut ds = [0.0; ORDER_SLOTS];
        self.coeffs.drift().derivatives(t, x, &mut dr[..=n]);
        self.coeffs.diffusion().derivatives(t, x, &mut ds[..=n]);
        let mut comp = [0.0; ORDER_SLOTS];
        let lambda = if self.compensated { self.jm.intensity_at(t) } else { 0.0 };
        if lambda != 0.0 {
            // E_μ[∂^j g] = Σ_i φ_i^(j) E_μ[h_i]
            let mut scratch = [0.0; ORDER_SLOTS];
            for (term, &m) in self.coeffs.jump_terms().iter().zip(&self.mark_means) {
                term.state.derivatives(t, x, &mut scratch[..=n]);
                for j in 0..=n {
                    comp[j] += scratch[j] * m;
                }
            }
        }
        let mut inc = [0.0; ORDER_SLOTS];
        for k in 0..=n {
            let drift = self.faa(k, &dr, values);
            let diffusion = self.faa(k, &ds, values);
            let compensator = if lambda != 0.0 { lambda * self.faa(k, &comp, values) } else { 0.0 };
            inc[k] = (drift - compensator) * dt + diffusion * dw;
        }
        for k in 0..=n {
            values[k] += inc[k];
        }
        check_finite(values, t + dt)
    }

    /// In-place jump with mark `y`; coefficients use the pre-jump state.
    pub fn apply_jump_in_place(&self, values: &mut [f64], t: f64, y: f64) -> Result<()> {
        if !self.coeffs.has_jumps() {
            return Ok(());
        }
        let n = values.len() - 1;
        let mut dg = [0.0; ORDER_SLOTS];
        self.coeffs.jump_partials(t, values[0], y, &mut dg[..=n]);
        let mut inc = [0.0; ORDER_SLOTS];
        for k in 0..=n {
            inc[k] = self.faa(k, &dg, values);
        }
        for k in 0..=n {
            values[k] += inc[k];
        }
        check_finite(values, t)
    }

    /// Runs the scheme from `initial`, reporting every recorded state to
    /// `observe(t, values, is_jump)`: the start, each grid node, and at each
    /// jump time the left limit followed by the post-jump state.
    pub fn run_from<F>(&self, initial: &FlowState, grid: &TimeGrid, noise: &PathNoise, mut observe: F) -> Result<FlowState>
    where
        F: FnMut(f64, &[f64], bool),
    {
        if initial.order() != self.order {
            return Err(Error::IncompleteState { order: initial.order() });
        }
        if noise.dw.len() != grid.n_steps() || noise.bridge.len() < noise.jumps.len() {
            return Err(Error::param("noise", "increments do not match the grid"));
        }
        let mut values = initial.values.clone();
        check_finite(&values, 0.0)?;
        observe(0.0, &values, false);
        let mut next_jump = 0;
        for i in 0..grid.n_steps() {
            let (a, b) = (grid.time(i), grid.time(i + 1));
            let mut s = a;
            let mut remaining = noise.dw[i];
            while next_jump < noise.jumps.len() && noise.jumps[next_jump].t <= b {
                let JumpEvent { t: tau, mark } = noise.jumps[next_jump];
                let tau = tau.max(s);
                // W(τ) - W(s) given W(b) - W(s) = remaining
                let piece = if b > s {
                    let frac = (tau - s) / (b - s);
                    frac * remaining + ((tau - s) * (b - tau) / (b - s)).sqrt() * noise.bridge[next_jump]
                } else {
                    remaining
                };
                if tau > s {
                    self.euler_step_in_place(&mut values, s, tau - s, piece)?;
                    remaining -= piece;
                }
                observe(tau, &values, false);
                self.apply_jump_in_place(&mut values, tau, mark)?;
                observe(tau, &values, true);
                s = tau;
                next_jump += 1;
            }
            if b > s {
                self.euler_step_in_place(&mut values, s, b - s, remaining)?;
                observe(b, &values, false);
            }
        }
        Ok(FlowState { values })
    }

    pub fn run<F>(&self, x: f64, grid: &TimeGrid, noise: &PathNoise, observe: F) -> Result<FlowState>
    where
        F: FnMut(f64, &[f64], bool),
    {
        self.run_from(&FlowState::initial(x, self.order), grid, noise, observe)
    }

    pub fn simulate(&self, x: f64, grid: &TimeGrid, seed: PathSeed) -> Result<PathRecord> {
        let noise = PathNoise::sample(self.jm, grid, &mut seed.rng())?;
        let mut states = Vec::with_capacity(grid.n_steps() + 1 + 2 * noise.jumps.len());
        let mut running_sup = vec![0.0f64; self.order + 1];
        self.run(x, grid, &noise, |t, v, is_jump| {
            for (s, x) in running_sup.iter_mut().zip(v) {
                *s = s.max(x.abs());
            }
            states.push(RecordedState {
                t,
                is_jump,
                state: FlowState { values: v.to_vec() },
            });
        })?;
        Ok(PathRecord {
            grid: *grid,
            states,
            running_sup,
            jump_times: noise.jumps,
            seed,
        })
    }

    /// Terminal state and running suprema only.
    pub fn summarize(&self, x: f64, grid: &TimeGrid, noise: &PathNoise) -> Result<PathSummary> {
        let mut running_sup = vec![0.0f64; self.order + 1];
        let terminal = self.run(x, grid, noise, |_, v, _| {
            for (s, x) in running_sup.iter_mut().zip(v) {
                *s = s.max(x.abs());
            }
        })?;
        Ok(PathSummary {
            terminal,
            running_sup,
            n_jumps: noise.jumps.len(),
        })
    }

    pub fn simulate_summary(&self, x: f64, grid: &TimeGrid, seed: PathSeed) -> Result<PathSummary> {
        let noise = PathNoise::sample(self.jm, grid, &mut seed.rng())?;
        self.summarize(x, grid, &noise)
    }
}

fn check_finite(values: &[f64], t: f64) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::BlowUp {
            t,
            state: values.to_vec(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RecordedState {
    pub t: f64,
    /// True for the post-jump state at a jump time.
    pub is_jump: bool,
    pub state: FlowState,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PathRecord {
    pub grid: TimeGrid,
    pub states: Vec<RecordedState>,
    /// `sup |X^(k)|` over the recorded states, per order.
    pub running_sup: Vec<f64>,
    pub jump_times: Vec<JumpEvent>,
    pub seed: PathSeed,
}

impl PathRecord {
    pub fn terminal(&self) -> &FlowState {
        &self.states.last().expect("a path records at least its start").state
    }

    /// States at the grid nodes only (left limits are skipped).
    pub fn grid_states(&self) -> impl Iterator<Item = &RecordedState> + '_ {
        let times = self.grid.times();
        let mut next = 0;
        self.states.iter().filter(move |s| {
            if !s.is_jump && next < times.len() && s.t == times[next] {
                next += 1;
                true
            } else {
                false
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathSummary {
    pub terminal: FlowState,
    pub running_sup: Vec<f64>,
    pub n_jumps: usize,
}

/// One Euler step from `state`; see [`FlowSystem::euler_step_in_place`].
pub fn euler_step(
    state: &FlowState,
    t: f64,
    dt: f64,
    dw: f64,
    coeffs: &CoefficientSet,
    jm: &JumpModel,
) -> Result<FlowState> {
    if !(dt > 0.0) {
        return Err(Error::param("dt", "step must be > 0"));
    }
    let system = FlowSystem::new(coeffs, jm, state.order())?;
    let mut values = state.values.clone();
    system.euler_step_in_place(&mut values, t, dt, dw)?;
    Ok(FlowState { values })
}

/// The jump `X^(k) += jump_k(y)` at the left limit `state`.
pub fn apply_jump(state: &FlowState, t: f64, y: f64, coeffs: &CoefficientSet) -> Result<FlowState> {
    let jm = JumpModel::none();
    let system = FlowSystem::new(coeffs, &jm, state.order())?;
    let mut values = state.values.clone();
    system.apply_jump_in_place(&mut values, t, y)?;
    Ok(FlowState { values })
}

pub fn simulate_path(
    coeffs: &CoefficientSet,
    jm: &JumpModel,
    x: f64,
    n: usize,
    grid: &TimeGrid,
    seed: PathSeed,
) -> Result<PathRecord> {
    FlowSystem::new(coeffs, jm, n)?.simulate(x, grid, seed)
}

pub const CSV_HEADER: &str = "path_index,t,k,value,is_jump";

/// Long-format dump, one row per recorded state and order.
pub fn write_paths_csv<W: Write>(records: &[PathRecord], mut out: W) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for rec in records {
        for s in &rec.states {
            for (k, v) in s.state.values().iter().enumerate() {
                writeln!(out, "{},{},{},{},{}", rec.seed.path_index, s.t, k, v, u8::from(s.is_jump))?;
            }
        }
    }
    Ok(())
}
