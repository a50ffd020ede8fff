//! Explicit constants of the BDG inequalities with jumps and of the
//! Grönwall moment bound.
//!
//! Everything is evaluated as a natural logarithm and exponentiated at most
//! once: `p^{p log₂ p}` leaves double range near `p ≈ 20` while the
//! estimates these bounds are compared to stay small. An overflowing value
//! is surfaced as `None`/[`Error::Overflow`], never as a silent `inf`.

use std::fmt;

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::model::{CoefficientSet, JumpModel, MarkFn, TimeFn, AffineSpec};
use crate::quadrature::{gauss_legendre_on, QuadratureRule};

/// Nodes used for time integrals of norm profiles.
pub const TIME_QUADRATURE_NODES: usize = 64;

/// A nonnegative real stored as its natural logarithm (`-inf` is zero).
#[derive(Clone, Copy, PartialEq, PartialOrd)]
pub struct LogReal(f64);

impl LogReal {
    pub const ZERO: LogReal = LogReal(f64::NEG_INFINITY);
    pub const ONE: LogReal = LogReal(0.0);

    pub fn from_ln(ln: f64) -> Self {
        LogReal(ln)
    }

    /// Panics on negative input; callers validate signs first.
    pub fn from_value(v: f64) -> Self {
        assert!(v >= 0.0, "LogReal needs a nonnegative value, got {v}");
        LogReal(v.ln())
    }

    pub fn ln(self) -> f64 {
        self.0
    }

    pub fn is_zero(self) -> bool {
        self.0 == f64::NEG_INFINITY
    }

    /// The plain value, or `None` when it does not fit in an `f64`.
    pub fn value(self) -> Option<f64> {
        let v = self.0.exp();
        if v.is_finite() {
            Some(v)
        } else {
            None
        }
    }

    pub fn value_or_err(self, what: &str) -> Result<f64> {
        self.value().ok_or_else(|| Error::Overflow {
            what: what.to_string(),
            ln_value: self.0,
        })
    }

    pub fn mul(self, other: LogReal) -> LogReal {
        if self.is_zero() || other.is_zero() {
            return LogReal::ZERO;
        }
        LogReal(self.0 + other.0)
    }

    pub fn add(self, other: LogReal) -> LogReal {
        let (hi, lo) = if self.0 >= other.0 { (self.0, other.0) } else { (other.0, self.0) };
        if lo == f64::NEG_INFINITY {
            return LogReal(hi);
        }
        LogReal(hi + (lo - hi).exp().ln_1p())
    }

    pub fn sum<I: IntoIterator<Item = LogReal>>(items: I) -> LogReal {
        items.into_iter().fold(LogReal::ZERO, LogReal::add)
    }

    pub fn max(self, other: LogReal) -> LogReal {
        if self.0 >= other.0 {
            self
        } else {
            other
        }
    }
}

impl fmt::Debug for LogReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.value() {
            Some(v) => write!(f, "{v:e}"),
            None => write!(f, "exp({})", self.0),
        }
    }
}

impl Serialize for LogReal {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_finite() {
            s.serialize_f64(self.0)
        } else if self.is_zero() {
            s.serialize_str("-inf")
        } else {
            s.serialize_str("+inf")
        }
    }
}

/// `ln 2^p`, the recurring power-of-two weights.
fn ln_pow2(e: f64) -> f64 {
    e * std::f64::consts::LN_2
}

/// Smallest integer `m >= 0` with `2^m >= p`.
pub fn ceil_log2(p: f64) -> u32 {
    let mut m = p.log2().ceil().max(0.0) as u32;
    while m > 0 && 2f64.powi(m as i32 - 1) >= p {
        m -= 1;
    }
    while 2f64.powi(m as i32) < p {
        m += 1;
    }
    m
}

/// `ln C_p` with `C_p = (10p)^{p/2}` on `[1, 2)`, `C_2 = 2^2`, and
/// `C_p = p^p (e/2)^{p/2}` for `p > 2`.
pub fn ln_bdg_constant(p: f64) -> Result<f64> {
    if !(p >= 1.0) || !p.is_finite() {
        return Err(Error::InvalidExponent { p, min: 1.0 });
    }
    Ok(if p < 2.0 {
        0.5 * p * (10.0 * p).ln()
    } else if p == 2.0 {
        ln_pow2(2.0)
    } else {
        p * p.ln() + 0.5 * p * (1.0 - std::f64::consts::LN_2)
    })
}

/// The BDG constant `C_p` for `p >= 1`.
pub fn bdg_constant(p: f64) -> Result<f64> {
    LogReal::from_ln(ln_bdg_constant(p)?).value_or_err("C_p")
}

/// `C_p`, `C̃_p` and the closed-form majorant of `C̃_p`, all kept as logs.
#[derive(Clone, Copy, Debug)]
pub struct BdgConstants {
    pub p: f64,
    pub c_p: LogReal,
    pub tilde_c_p: LogReal,
    pub tilde_upper: LogReal,
}

impl BdgConstants {
    /// `(2/p)(40p)^{p/2} (p²e/2)^{p log₂p / 2}`, the leading coefficient of
    /// the compensated-Poisson BDG bound.
    pub fn lemma_leading(&self) -> LogReal {
        LogReal::from_ln(ln_lemma_leading(self.p))
    }

    /// `2^p p^{pk} 2^{-k} (e/2)^{kp/2}` for `k = 1..=⌈log₂p⌉-1`.
    pub fn lemma_iterated(&self) -> Vec<LogReal> {
        lemma_iterated_lns(self.p).into_iter().map(LogReal::from_ln).collect()
    }
}

impl Serialize for BdgConstants {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("BdgConstants", 6)?;
        st.serialize_field("p", &self.p)?;
        st.serialize_field("c_p", &self.c_p.value())?;
        st.serialize_field("tilde_c_p", &self.tilde_c_p.value())?;
        st.serialize_field("tilde_upper", &self.tilde_upper.value())?;
        st.serialize_field(
            "log_values",
            &serde_json::json!({
                "c_p": self.c_p.ln(),
                "tilde_c_p": self.tilde_c_p.ln(),
                "tilde_upper": self.tilde_upper.ln(),
            }),
        )?;
        let overflow: Vec<&str> = [
            ("c_p", self.c_p),
            ("tilde_c_p", self.tilde_c_p),
            ("tilde_upper", self.tilde_upper),
        ]
        .iter()
        .filter(|(_, v)| v.value().is_none())
        .map(|(n, _)| *n)
        .collect();
        st.serialize_field("overflow", &overflow)?;
        st.end()
    }
}

fn ln_lemma_leading(p: f64) -> f64 {
    let log2p = p.log2();
    (2.0 / p).ln() + 0.5 * p * (40.0 * p).ln() + 0.5 * p * log2p * (0.5 * p * p * std::f64::consts::E).ln()
}

fn lemma_iterated_lns(p: f64) -> Vec<f64> {
    let depth = ceil_log2(p).saturating_sub(1);
    let ln_e_half = 1.0 - std::f64::consts::LN_2;
    (1..=depth)
        .map(|k| {
            let k = k as f64;
            ln_pow2(p) + p * k * p.ln() - ln_pow2(k) + 0.5 * k * p * ln_e_half
        })
        .collect()
}

/// Kunita-type constants for `p >= 2`.
///
/// The sum in `C̃_p` runs over `k = 1..=⌈log₂p⌉-1` and is empty at `p = 2`.
pub fn kunita_constant(p: f64) -> Result<BdgConstants> {
    if !(p >= 2.0) || !p.is_finite() {
        return Err(Error::InvalidExponent { p, min: 2.0 });
    }
    let c_p = LogReal::from_ln(ln_bdg_constant(p)?);
    let tilde = LogReal::sum(
        std::iter::once(ln_lemma_leading(p))
            .chain(lemma_iterated_lns(p))
            .map(LogReal::from_ln),
    );
    let m = ceil_log2(p) as f64;
    let ln_bracket = LogReal::from_value(2.0).add(LogReal::from_ln(0.5 * p * (10f64.ln() + m)));
    let upper = LogReal::from_ln(ln_pow2(p) + p * p.log2() * p.ln() + ln_bracket.ln());
    Ok(BdgConstants {
        p,
        c_p,
        tilde_c_p: tilde,
        tilde_upper: upper,
    })
}

/// Right-hand side of the compensated-Poisson BDG bound for a given integrand:
/// `leading · E∫∫|g|^p ν + Σ_k iterated_k · E[(∫∫ g^{2^k} ν)^{p/2^k}]`.
///
/// `iterated_moments[k - 1]` holds `E[(∫∫ g^{2^k} ν ds)^{p/2^k}]`.
pub fn bdg_poisson_bound(p: f64, p_moment: f64, iterated_moments: &[f64]) -> Result<LogReal> {
    let consts = kunita_constant(p)?;
    let weights = consts.lemma_iterated();
    if iterated_moments.len() < weights.len() {
        return Err(Error::InvalidStats(format!(
            "need {} iterated moments for p = {p}, got {}",
            weights.len(),
            iterated_moments.len()
        )));
    }
    check_stats(&[("p-moment", p_moment)])?;
    let mut terms = vec![consts.lemma_leading().mul(LogReal::from_value(p_moment))];
    for (w, &m) in weights.iter().zip(iterated_moments) {
        check_stats(&[("iterated moment", m)])?;
        terms.push(w.mul(LogReal::from_value(m)));
    }
    Ok(LogReal::sum(terms))
}

fn check_stats(stats: &[(&str, f64)]) -> Result<()> {
    for (name, v) in stats {
        if !v.is_finite() || *v < 0.0 {
            return Err(Error::InvalidStats(format!("{name} = {v} must be finite and >= 0")));
        }
    }
    Ok(())
}

/// Inputs to the time-factored Kunita bound.
#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct Corollary3Inputs {
    pub x: f64,
    /// `E∫|u_t|^p dt`
    pub drift_p: f64,
    /// `E∫|v_t|^p dt`
    pub diffusion_p: f64,
    /// `E∫∫|g_t(y)|^p ν_t(dy) dt`
    pub jump_p: f64,
    /// `E∫(∫|g_t(y)|² ν_t(dy))^{p/2} dt`
    pub jump_2: f64,
}

/// `2^{2p-2}(|x|^p + T^{p-1} E∫|u|^p + C_p T^{p/2-1} E∫|v|^p
///  + C̃_p E∫∫|g|^p ν + T^{p/2-1} C̃_p E∫(∫|g|²ν)^{p/2})`
pub fn corollary3_bound(p: f64, horizon: f64, stats: &Corollary3Inputs) -> Result<LogReal> {
    let consts = kunita_constant(p)?;
    if !x_is_finite(stats.x) {
        return Err(Error::InvalidStats(format!("x = {} must be finite", stats.x)));
    }
    check_stats(&[
        ("E∫|u|^p", stats.drift_p),
        ("E∫|v|^p", stats.diffusion_p),
        ("E∫∫|g|^p ν", stats.jump_p),
        ("E∫(∫|g|²ν)^{p/2}", stats.jump_2),
        ("T", horizon),
    ])?;
    let t_p1 = LogReal::from_value(horizon.powf(p - 1.0));
    let t_half = LogReal::from_value(horizon.powf(0.5 * p - 1.0));
    let v = LogReal::from_value;
    let inner = LogReal::sum([
        v(stats.x.abs().powf(p)),
        t_p1.mul(v(stats.drift_p)),
        consts.c_p.mul(t_half).mul(v(stats.diffusion_p)),
        consts.tilde_c_p.mul(v(stats.jump_p)),
        t_half.mul(consts.tilde_c_p).mul(v(stats.jump_2)),
    ]);
    Ok(LogReal::from_ln(ln_pow2(2.0 * p - 2.0)).mul(inner))
}

fn x_is_finite(x: f64) -> bool {
    x.is_finite()
}

/// Norms of the coefficients of `dX = a_t(X)dt + b_t(X)dW + ∫c_t(z, X)(N - ν)`
/// entering the Grönwall bound. Time profiles are sup-norms in ω.
#[derive(Clone, Debug)]
pub struct CoefficientNorms {
    /// `‖a_t‖∞`, Lipschitz constant of the drift
    pub drift_lipschitz: TimeFn,
    /// `‖b_t‖∞`
    pub diffusion_lipschitz: TimeFn,
    /// `‖∫|c_t(z)|² ν_t(dz)‖∞`
    pub jump_lipschitz_l2: TimeFn,
    /// `‖∫|c_t(z)|^p ν_t(dz)‖∞`
    pub jump_lipschitz_lp: TimeFn,
    /// `E∫|a_t(0)|^p dt`
    pub drift_at_zero: f64,
    /// `E∫|b_t(0)|^p dt`
    pub diffusion_at_zero: f64,
    /// `E∫(∫|c_t(z, 0)|² ν_t(dz))^{p/2} dt`
    pub jump_at_zero_l2: f64,
    /// `E∫∫|c_t(z, 0)|^p ν_t(dz) dt`
    pub jump_at_zero_lp: f64,
}

impl CoefficientNorms {
    pub fn zero() -> Self {
        CoefficientNorms {
            drift_lipschitz: 0.0.into(),
            diffusion_lipschitz: 0.0.into(),
            jump_lipschitz_l2: 0.0.into(),
            jump_lipschitz_lp: 0.0.into(),
            drift_at_zero: 0.0,
            diffusion_at_zero: 0.0,
            jump_at_zero_l2: 0.0,
            jump_at_zero_lp: 0.0,
        }
    }

    /// Norms of the affine equation `dX = (u + aX)dt + (v + bX)dW + ∫(w + cX)(N - ν)`.
    pub fn from_affine(spec: &AffineSpec, jm: &JumpModel, p: f64, horizon: f64) -> Result<Self> {
        let rule = gauss_legendre_on(TIME_QUADRATURE_NODES, 0.0, horizon);
        let c_l2 = jm.expectation(&MarkFn::custom({
            let m = spec.c_mark.clone();
            move |y| m.eval(y).powi(2)
        }))?;
        let c_lp = jm.expectation(&MarkFn::custom({
            let m = spec.c_mark.clone();
            move |y| m.eval(y).abs().powf(p)
        }))?;
        let w_l2 = jm.expectation(&MarkFn::custom({
            let m = spec.w_mark.clone();
            move |y| m.eval(y).powi(2)
        }))?;
        let w_lp = jm.expectation(&MarkFn::custom({
            let m = spec.w_mark.clone();
            move |y| m.eval(y).abs().powf(p)
        }))?;
        let intensity = jm.intensity().clone();
        let (a, b, c) = (spec.a.clone(), spec.b.clone(), spec.c_scale.clone());
        let c2 = c.clone();
        let i2 = intensity.clone();
        let (u, v, w) = (spec.u.clone(), spec.v.clone(), spec.w_scale.clone());
        let w2 = w.clone();
        let i3 = intensity.clone();
        let i4 = intensity.clone();
        Ok(CoefficientNorms {
            drift_lipschitz: TimeFn::custom(move |t| a.at(t).abs()),
            diffusion_lipschitz: TimeFn::custom(move |t| b.at(t).abs()),
            jump_lipschitz_l2: TimeFn::custom(move |t| intensity.at(t) * c.at(t).powi(2) * c_l2),
            jump_lipschitz_lp: TimeFn::custom(move |t| i2.at(t) * c2.at(t).abs().powf(p) * c_lp),
            drift_at_zero: rule.integrate(|t| u.at(t).abs().powf(p)),
            diffusion_at_zero: rule.integrate(|t| v.at(t).abs().powf(p)),
            jump_at_zero_l2: rule.integrate(|t| (i3.at(t) * w.at(t).powi(2) * w_l2).powf(0.5 * p)),
            jump_at_zero_lp: rule.integrate(|t| i4.at(t) * w2.at(t).abs().powf(p) * w_lp),
        })
    }

    /// Norms read off a coefficient set in the Lipschitz form: `a = r`,
    /// `b = σ`, `c = g`, with `c_t(z) = Σ_i Lip(φ_i)|h_i(z)|`.
    pub fn from_model(coeffs: &CoefficientSet, jm: &JumpModel, p: f64, horizon: f64) -> Result<Self> {
        let rule = gauss_legendre_on(TIME_QUADRATURE_NODES, 0.0, horizon);
        // Lipschitz constants are checked at the quadrature nodes.
        let lip = |f: &dyn crate::model::StateFunction, what: &str| -> Result<()> {
            for &t in &rule.nodes {
                if f.partial_bound(1, t).is_none() {
                    return Err(Error::NormsUnavailable(format!(
                        "{what} is not globally Lipschitz in x; supply norms explicitly"
                    )));
                }
            }
            Ok(())
        };
        lip(coeffs.drift(), "drift")?;
        lip(coeffs.diffusion(), "diffusion")?;
        for term in coeffs.jump_terms() {
            lip(term.state.as_ref(), "jump coefficient")?;
        }

        let set = coeffs.clone();
        let drift_lipschitz = TimeFn::custom(move |t| set.drift().partial_bound(1, t).unwrap_or(f64::INFINITY));
        let set = coeffs.clone();
        let diffusion_lipschitz =
            TimeFn::custom(move |t| set.diffusion().partial_bound(1, t).unwrap_or(f64::INFINITY));

        let drift_at_zero = rule.integrate(|t| coeffs.drift().value(t, 0.0).abs().powf(p));
        let diffusion_at_zero = rule.integrate(|t| coeffs.diffusion().value(t, 0.0).abs().powf(p));

        if !coeffs.has_jumps() || jm.is_trivial() {
            return Ok(CoefficientNorms {
                drift_lipschitz,
                diffusion_lipschitz,
                drift_at_zero,
                diffusion_at_zero,
                ..CoefficientNorms::zero()
            });
        }

        // Mark moments are time-independent; the time dependence enters
        // through λ(t) and the state functions.
        let envelope = |t: f64, q: f64| -> Result<f64> {
            let lips: Vec<(f64, MarkFn)> = coeffs
                .jump_terms()
                .iter()
                .map(|j| (j.state.partial_bound(1, t).unwrap_or(f64::INFINITY), j.mark.clone()))
                .collect();
            let m = jm.quadrature_expectation(&|y| {
                lips.iter().map(|(l, h)| l * h.eval(y).abs()).sum::<f64>().powf(q)
            })?;
            Ok(jm.intensity_at(t) * m)
        };
        let at_zero = |t: f64, q: f64| -> Result<f64> {
            let vals: Vec<(f64, MarkFn)> = coeffs
                .jump_terms()
                .iter()
                .map(|j| (j.state.value(t, 0.0), j.mark.clone()))
                .collect();
            let m = jm.quadrature_expectation(&|y| vals.iter().map(|(v, h)| v * h.eval(y)).sum::<f64>().abs().powf(q))?;
            Ok(jm.intensity_at(t) * m)
        };

        let (jump_lipschitz_l2, jump_lipschitz_lp) = {
            let l2: Vec<f64> = rule.nodes.iter().map(|&t| envelope(t, 2.0)).collect::<Result<_>>()?;
            let lp: Vec<f64> = rule.nodes.iter().map(|&t| envelope(t, p)).collect::<Result<_>>()?;
            (profile(&rule, l2), profile(&rule, lp))
        };
        let mut jump_at_zero_l2 = 0.0;
        let mut jump_at_zero_lp = 0.0;
        for (&t, &w) in rule.nodes.iter().zip(&rule.weights) {
            jump_at_zero_l2 += w * at_zero(t, 2.0)?.powf(0.5 * p);
            jump_at_zero_lp += w * at_zero(t, p)?;
        }
        Ok(CoefficientNorms {
            drift_lipschitz,
            diffusion_lipschitz,
            jump_lipschitz_l2,
            jump_lipschitz_lp,
            drift_at_zero,
            diffusion_at_zero,
            jump_at_zero_l2,
            jump_at_zero_lp,
        })
    }
}

/// A time profile sampled at the quadrature nodes: constant when all samples
/// agree, otherwise piecewise-constant on the nodes' Voronoi cells.
fn profile(rule: &QuadratureRule, samples: Vec<f64>) -> TimeFn {
    if samples.iter().all(|&s| s == samples[0]) {
        return TimeFn::Constant(samples[0]);
    }
    let nodes = rule.nodes.clone();
    TimeFn::custom(move |t| {
        let i = nodes
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
            .map_or(0, |(i, _)| i);
        samples[i]
    })
}

/// `F(T)`, `∫₀ᵀ G(t) dt` and `C(p, T) = F(T) exp(∫G)`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct GronwallBound {
    pub p: f64,
    pub horizon: f64,
    pub x: f64,
    pub f_t: LogReal,
    pub g_integral: LogReal,
    pub c_pt: LogReal,
}

impl GronwallBound {
    pub fn f_value(&self) -> Option<f64> {
        self.f_t.value()
    }

    pub fn g_integral_value(&self) -> Option<f64> {
        self.g_integral.value()
    }

    pub fn c_value(&self) -> Option<f64> {
        self.c_pt.value()
    }
}

struct GronwallWeights {
    outer: LogReal,
    drift: LogReal,
    diffusion: LogReal,
    jump_l2_zero: LogReal,
    jump_l2_lip: LogReal,
    jump_lp: LogReal,
}

impl GronwallWeights {
    fn new(p: f64, horizon: f64) -> Result<Self> {
        let k = kunita_constant(p)?;
        let t_half = LogReal::from_value(horizon.powf(0.5 * p - 1.0));
        let pow2 = |e: f64| LogReal::from_ln(ln_pow2(e));
        Ok(GronwallWeights {
            // 4^{p-1}
            outer: pow2(2.0 * (p - 1.0)),
            // (2T)^{p-1}
            drift: LogReal::from_value((2.0 * horizon).powf(p - 1.0)),
            // 2^{p-1} C_p T^{p/2-1}
            diffusion: pow2(p - 1.0).mul(k.c_p).mul(t_half),
            // 2^{p-1} C̃_p 2^{p/2} T^{p/2-1}
            jump_l2_zero: pow2(p - 1.0).mul(k.tilde_c_p).mul(pow2(0.5 * p)).mul(t_half),
            // 2^{3p/2-1} C̃_p T^{p/2-1}
            jump_l2_lip: pow2(1.5 * p - 1.0).mul(k.tilde_c_p).mul(t_half),
            // 2^{p-1} C̃_p
            jump_lp: pow2(p - 1.0).mul(k.tilde_c_p),
        })
    }

    fn ln_f(&self, norms: &CoefficientNorms, p: f64, x: f64) -> LogReal {
        let v = LogReal::from_value;
        self.outer.mul(LogReal::sum([
            v(x.abs().powf(p)),
            self.drift.mul(v(norms.drift_at_zero)),
            self.diffusion.mul(v(norms.diffusion_at_zero)),
            self.jump_l2_zero.mul(v(norms.jump_at_zero_l2)),
            self.jump_lp.mul(v(norms.jump_at_zero_lp)),
        ]))
    }

    fn ln_g(&self, norms: &CoefficientNorms, p: f64, t: f64) -> LogReal {
        let v = LogReal::from_value;
        self.outer.mul(LogReal::sum([
            self.drift.mul(v(norms.drift_lipschitz.at(t).powf(p))),
            self.diffusion.mul(v(norms.diffusion_lipschitz.at(t).powf(p))),
            self.jump_l2_lip.mul(v(norms.jump_lipschitz_l2.at(t).powf(0.5 * p))),
            self.jump_lp.mul(v(norms.jump_lipschitz_lp.at(t))),
        ]))
    }
}

fn validate_norms(norms: &CoefficientNorms, nodes: &[f64]) -> Result<()> {
    let scalars = [
        ("E∫|a(0)|^p", norms.drift_at_zero),
        ("E∫|b(0)|^p", norms.diffusion_at_zero),
        ("E∫(∫|c(·,0)|²ν)^{p/2}", norms.jump_at_zero_l2),
        ("E∫∫|c(·,0)|^p ν", norms.jump_at_zero_lp),
    ];
    for (name, v) in scalars {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::InvalidNorms(format!("{name} = {v}")));
        }
    }
    let profiles = [
        ("‖a_t‖", &norms.drift_lipschitz),
        ("‖b_t‖", &norms.diffusion_lipschitz),
        ("‖∫|c_t|²ν‖", &norms.jump_lipschitz_l2),
        ("‖∫|c_t|^p ν‖", &norms.jump_lipschitz_lp),
    ];
    for (name, f) in profiles {
        for &t in nodes {
            let v = f.at(t);
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidNorms(format!("{name} at t = {t} is {v}")));
            }
        }
    }
    Ok(())
}

fn integrate_ln(rule: &QuadratureRule, f: impl Fn(f64) -> LogReal) -> LogReal {
    LogReal::sum(
        rule.nodes
            .iter()
            .zip(&rule.weights)
            .map(|(&t, &w)| LogReal::from_value(w).mul(f(t))),
    )
}

fn all_constant(norms: &CoefficientNorms) -> bool {
    [
        &norms.drift_lipschitz,
        &norms.diffusion_lipschitz,
        &norms.jump_lipschitz_l2,
        &norms.jump_lipschitz_lp,
    ]
    .iter()
    .all(|f| f.as_constant().is_some())
}

/// Explicit Grönwall moment bound `E[sup_{t<=T} |X_t|^p] <= F(T) exp(∫₀ᵀ G)`.
pub fn gronwall_bound(norms: &CoefficientNorms, p: f64, horizon: f64, x: f64) -> Result<GronwallBound> {
    if !(p >= 2.0) {
        return Err(Error::InvalidExponent { p, min: 2.0 });
    }
    if !(horizon > 0.0) || !horizon.is_finite() || !x.is_finite() {
        return Err(Error::param("horizon/x", "need finite x and T > 0"));
    }
    let rule = gauss_legendre_on(TIME_QUADRATURE_NODES, 0.0, horizon);
    validate_norms(norms, &rule.nodes)?;
    let w = GronwallWeights::new(p, horizon)?;
    let f_t = w.ln_f(norms, p, x);
    let g_integral = if all_constant(norms) {
        LogReal::from_value(horizon).mul(w.ln_g(norms, p, 0.0))
    } else {
        integrate_ln(&rule, |t| w.ln_g(norms, p, t))
    };
    Ok(GronwallBound {
        p,
        horizon,
        x,
        f_t,
        g_integral,
        c_pt: combine(f_t, g_integral),
    })
}

fn combine(f_t: LogReal, g_integral: LogReal) -> LogReal {
    if f_t.is_zero() {
        return LogReal::ZERO;
    }
    // exp(ln∫G) may itself overflow; that is a genuine +inf in log space.
    LogReal::from_ln(f_t.ln() + g_integral.ln().exp())
}

/// Uniform bound over a finite family of coefficient norms:
/// `sup_α F_α(T) · exp(∫₀ᵀ sup_α G_α(t) dt)`.
#[derive(Clone, Debug, Serialize)]
pub struct UniformBound {
    pub members: Vec<GronwallBound>,
    pub f_sup: LogReal,
    pub g_sup_integral: LogReal,
    pub c_uniform: LogReal,
    pub note: &'static str,
}

pub fn uniform_gronwall_bound(family: &[CoefficientNorms], p: f64, horizon: f64, x: f64) -> Result<UniformBound> {
    if family.is_empty() {
        return Err(Error::InvalidNorms("empty parameter grid".into()));
    }
    let members = family
        .iter()
        .map(|n| gronwall_bound(n, p, horizon, x))
        .collect::<Result<Vec<_>>>()?;
    let rule = gauss_legendre_on(TIME_QUADRATURE_NODES, 0.0, horizon);
    let w = GronwallWeights::new(p, horizon)?;
    let f_sup = members.iter().map(|m| m.f_t).fold(LogReal::ZERO, LogReal::max);
    let sup_g = |t: f64| family.iter().map(|n| w.ln_g(n, p, t)).fold(LogReal::ZERO, LogReal::max);
    let g_sup_integral = if family.iter().all(all_constant) {
        LogReal::from_value(horizon).mul(sup_g(0.0))
    } else {
        integrate_ln(&rule, sup_g)
    };
    Ok(UniformBound {
        c_uniform: combine(f_sup, g_sup_integral),
        members,
        f_sup,
        g_sup_integral,
        note: "supremum taken over the finite parameter grid only; the true supremum over a continuum is not certified",
    })
}

/// Moment orders `p_k = q n!/k!` for the derivative `X^(k)`, `k = 1..=n`.
#[derive(Clone, Debug, Serialize)]
pub struct DerivativeMomentOrders {
    pub n: usize,
    pub q: f64,
    pub orders: Vec<f64>,
    /// `k p_k = p_{k-1}` for every `k >= 2`, so `p_k |π| <= p_{k-1}` whenever `|π| <= k`.
    pub recursion_holds: bool,
}

impl DerivativeMomentOrders {
    pub fn order(&self, k: usize) -> f64 {
        self.orders[k - 1]
    }
}

pub fn derivative_moment_orders(n: usize, q: f64) -> DerivativeMomentOrders {
    let mut orders = vec![0.0; n];
    // p_n = q, p_{k-1} = k p_k
    if n > 0 {
        orders[n - 1] = q;
        for k in (1..n).rev() {
            orders[k - 1] = (k + 1) as f64 * orders[k];
        }
    }
    let recursion_holds = (2..=n).all(|k| {
        let lhs = k as f64 * orders[k - 1];
        (lhs - orders[k - 2]).abs() <= 1e-12 * orders[k - 2]
    });
    DerivativeMomentOrders {
        n,
        q,
        orders,
        recursion_holds,
    }
}
