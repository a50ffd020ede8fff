//! Sampled check of the smoothness assumption (A_n): bounded x-partials of
//! `r` and `σ`, and `|∂^k g/∂x^k| <= C θ(y)`.

use serde::Serialize;

use super::{CoefficientSet, Family, JumpModel, ORDER_SLOTS};
use crate::error::{Error, Result};

/// Points `(t, x, y)` at which the assumption is sampled (full tensor grid).
#[derive(Clone, Debug, Serialize)]
pub struct SampleGrid {
    pub times: Vec<f64>,
    pub states: Vec<f64>,
    pub marks: Vec<f64>,
}

impl SampleGrid {
    pub fn new(times: Vec<f64>, states: Vec<f64>, marks: Vec<f64>) -> Result<Self> {
        if times.is_empty() || states.is_empty() || marks.is_empty() {
            return Err(Error::param("grid", "every axis of the sample grid must be nonempty"));
        }
        Ok(SampleGrid { times, states, marks })
    }

    /// `n` equispaced points per axis over `[0, horizon] × [-x_max, x_max] × [-y_max, y_max]`.
    pub fn uniform(horizon: f64, x_max: f64, y_max: f64, n: usize) -> Self {
        let n = n.max(2);
        let axis = |lo: f64, hi: f64| -> Vec<f64> {
            (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
        };
        SampleGrid {
            times: axis(0.0, horizon),
            states: axis(-x_max, x_max),
            marks: axis(-y_max, y_max),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct OrderReport {
    pub k: usize,
    pub max_abs_drift_partial: f64,
    pub max_abs_diffusion_partial: f64,
    /// `max |∂^k g/∂x^k| / θ(y)`; infinite when `θ(y) = 0` but the partial is not.
    pub max_jump_ratio: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct AssumptionReport {
    pub n: usize,
    pub lip_bound: f64,
    pub orders: Vec<OrderReport>,
    /// `(q, ‖θ‖_{L^q(η)})` with `η = λ̄ μ`.
    pub theta_norms: Vec<(f64, f64)>,
    pub violations: Vec<String>,
    pub finite_difference_partials: bool,
    pub holds: bool,
    pub note: String,
}

/// Samples (A_n) for orders `1..=n` on `grid` and evaluates the envelope
/// norms `‖θ‖_{L^q(η)}` for `q ∈ {2, p, 2p}`.
pub fn check_assumption_an(
    coeffs: &CoefficientSet,
    jm: &JumpModel,
    n: usize,
    grid: &SampleGrid,
    p: f64,
) -> Result<AssumptionReport> {
    if n > coeffs.n_max() {
        return Err(Error::InsufficientSmoothness { k: n, n_max: coeffs.n_max() });
    }
    let c = coeffs.lip_bound();
    let mut orders: Vec<OrderReport> = (1..=n)
        .map(|k| OrderReport {
            k,
            max_abs_drift_partial: 0.0,
            max_abs_diffusion_partial: 0.0,
            max_jump_ratio: 0.0,
        })
        .collect();
    let mut dr = [0.0; ORDER_SLOTS];
    let mut ds = [0.0; ORDER_SLOTS];
    let mut dg = [0.0; ORDER_SLOTS];
    for &t in &grid.times {
        for &x in &grid.states {
            coeffs.drift().derivatives(t, x, &mut dr[..=n]);
            coeffs.diffusion().derivatives(t, x, &mut ds[..=n]);
            for (o, rep) in orders.iter_mut().enumerate() {
                let k = o + 1;
                rep.max_abs_drift_partial = rep.max_abs_drift_partial.max(dr[k].abs());
                rep.max_abs_diffusion_partial = rep.max_abs_diffusion_partial.max(ds[k].abs());
            }
            if !coeffs.has_jumps() {
                continue;
            }
            for &y in &grid.marks {
                coeffs.jump_partials(t, x, y, &mut dg[..=n]);
                let theta = coeffs.theta().eval(y).abs();
                for (o, rep) in orders.iter_mut().enumerate() {
                    let g = dg[o + 1].abs();
                    let ratio = if g == 0.0 {
                        0.0
                    } else if theta == 0.0 {
                        f64::INFINITY
                    } else {
                        g / theta
                    };
                    rep.max_jump_ratio = rep.max_jump_ratio.max(ratio);
                }
            }
        }
    }

    let mut violations = Vec::new();
    // Relative slack for rounding in the sampled maxima.
    let limit = c * (1.0 + 1e-12);
    for rep in &orders {
        let k = rep.k;
        if rep.max_abs_drift_partial > limit {
            violations.push(format!("|∂^{k}r/∂x^{k}| reaches {} > C = {c}", rep.max_abs_drift_partial));
        }
        if rep.max_abs_diffusion_partial > limit {
            violations.push(format!("|∂^{k}σ/∂x^{k}| reaches {} > C = {c}", rep.max_abs_diffusion_partial));
        }
        if rep.max_jump_ratio > limit {
            violations.push(format!("|∂^{k}g/∂x^{k}|/θ reaches {} > C = {c}", rep.max_jump_ratio));
        }
    }

    // Built-in families know their global partial bounds; `None` there
    // means the partial is unbounded in x, which no finite grid can show.
    if coeffs.family() != Family::Custom {
        for k in 1..=n {
            let funcs = [("r", coeffs.drift()), ("σ", coeffs.diffusion())]
                .into_iter()
                .chain(coeffs.jump_terms().iter().map(|j| ("g", j.state.as_ref())));
            for (name, f) in funcs {
                if grid.times.iter().any(|&t| f.partial_bound(k, t).is_none()) {
                    violations.push(format!("∂^{k}{name}/∂x^{k} is unbounded in x"));
                }
            }
        }
    }

    let mut theta_norms = Vec::new();
    let mut qs = vec![2.0, p, 2.0 * p];
    qs.dedup();
    for q in qs {
        let norm = jm.envelope_norm(coeffs.theta(), q)?;
        if !norm.is_finite() {
            violations.push(format!("θ is not in L^{q}(η)"));
        }
        theta_norms.push((q, norm));
    }

    Ok(AssumptionReport {
        n,
        lip_bound: c,
        orders,
        theta_norms,
        holds: violations.is_empty(),
        violations,
        finite_difference_partials: coeffs.uses_finite_differences(),
        note: format!(
            "sampled on {}×{}×{} grid points; θ norms reported for q ∈ {{2, p, 2p}} with p = {p}",
            grid.times.len(),
            grid.states.len(),
            grid.marks.len()
        ),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{PolyTanhParams, SizeLaw};

    fn grid() -> SampleGrid {
        SampleGrid::uniform(1.0, 10.0, 1.0, 21)
    }

    #[test]
    fn gbm_second_order_vanishes() {
        let c = CoefficientSet::gbm(0.1, 0.2, 2).unwrap();
        let report = check_assumption_an(&c, &JumpModel::none(), 2, &grid(), 2.0).unwrap();
        assert_eq!(report.orders[1].max_abs_drift_partial, 0.0);
        assert_eq!(report.orders[1].max_abs_diffusion_partial, 0.0);
        assert!(report.holds, "{:?}", report.violations);
    }

    #[test]
    fn merton_ratio_is_one() {
        let c = CoefficientSet::merton(0.1, 0.2, 2).unwrap();
        let jm = JumpModel::homogeneous(1.0, SizeLaw::Gaussian { mean: 0.0, std: 0.1 }, 32).unwrap();
        let report = check_assumption_an(&c, &jm, 2, &grid(), 4.0).unwrap();
        assert!((report.orders[0].max_jump_ratio - 1.0).abs() < 1e-15);
        assert_eq!(report.orders[1].max_jump_ratio, 0.0);
        assert!(report.holds);
        assert_eq!(report.theta_norms.len(), 3);
        // ‖e^y - 1‖_{L²(η)}² = λ̄ (e^{2δ²} - 2e^{δ²/2} + 1)
        let d2: f64 = 0.01;
        let want = ((2.0 * d2).exp() - 2.0 * (0.5 * d2).exp() + 1.0).sqrt();
        assert!((report.theta_norms[0].1 - want).abs() < 1e-10);
    }

    #[test]
    fn square_drift_is_flagged() {
        let params = PolyTanhParams {
            drift_poly: vec![0.0, 0.0, 1.0],
            drift_tanh: 0.0,
            diffusion_poly: vec![],
            diffusion_tanh: 0.0,
            ..PolyTanhParams::default()
        };
        let c = CoefficientSet::polynomial_tanh(&params, 2).unwrap().with_lip_bound(1.0).unwrap();
        let report = check_assumption_an(&c, &JumpModel::none(), 2, &grid(), 2.0).unwrap();
        assert_eq!(report.orders[0].max_abs_drift_partial, 20.0);
        assert!(!report.holds);
        assert!(report.violations[0].contains("20"));
        assert!(report.violations.iter().any(|v| v.contains("unbounded")));
    }

    #[test]
    fn order_above_n_max_rejected() {
        let c = CoefficientSet::gbm(0.1, 0.2, 1).unwrap();
        assert!(check_assumption_an(&c, &JumpModel::none(), 2, &grid(), 2.0).is_err());
    }
}
