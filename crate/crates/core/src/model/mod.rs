//! SDE coefficients `r`, `σ`, `g` with their x-partials, and the jump measure.
//!
//! The jump coefficient is kept in separable form
//! `g(t, x, y) = Σ_i φ_i(t, x) h_i(y)`, which covers every built-in family
//! (multiplicative Merton jumps, additive jumps, the affine `c_t(y) x + w_t(y)`)
//! and lets the compensator `∫ ∂^k g ν_t(dy)` reduce to the mark
//! expectations `E_μ[h_i]`, computed once per model.

mod assumption;
mod jumps;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::partitions::PartitionTable;

pub use assumption::{check_assumption_an, AssumptionReport, OrderReport, SampleGrid};
pub use jumps::{Intensity, JumpModel, MarkFn, SizeLaw, MIN_QUADRATURE_NODES};

/// Largest derivative order any coefficient set may carry.
pub const MAX_SUPPORTED_ORDER: usize = 8;

/// Scratch length for per-order buffers.
pub(crate) const ORDER_SLOTS: usize = MAX_SUPPORTED_ORDER + 1;

/// A real function of time.
#[derive(Clone)]
pub enum TimeFn {
    Constant(f64),
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl TimeFn {
    pub fn custom<F: Fn(f64) -> f64 + Send + Sync + 'static>(f: F) -> Self {
        TimeFn::Custom(Arc::new(f))
    }

    #[inline]
    pub fn at(&self, t: f64) -> f64 {
        match self {
            TimeFn::Constant(c) => *c,
            TimeFn::Custom(f) => f(t),
        }
    }

    pub fn as_constant(&self) -> Option<f64> {
        match self {
            TimeFn::Constant(c) => Some(*c),
            TimeFn::Custom(_) => None,
        }
    }
}

impl fmt::Debug for TimeFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TimeFn::Constant(c) => write!(f, "{c}"),
            TimeFn::Custom(_) => f.write_str("<fn(t)>"),
        }
    }
}

impl From<f64> for TimeFn {
    fn from(c: f64) -> Self {
        TimeFn::Constant(c)
    }
}

/// A function of `(t, x)` that can report its x-partials.
pub trait StateFunction: Send + Sync + fmt::Debug {
    /// Writes `∂^k f/∂x^k (t, x)` into `out[k]` for every `k < out.len()`.
    fn derivatives(&self, t: f64, x: f64, out: &mut [f64]);

    fn value(&self, t: f64, x: f64) -> f64 {
        let mut out = [0.0];
        self.derivatives(t, x, &mut out);
        out[0]
    }

    /// `sup_x |∂^k f/∂x^k (t, x)|` for `k >= 1`, when known to be finite.
    fn partial_bound(&self, _k: usize, _t: f64) -> Option<f64> {
        None
    }

    /// True when all partials of order >= 2 vanish identically.
    fn is_affine(&self) -> bool {
        false
    }
}

/// `slope(t) x + intercept(t)`
#[derive(Clone, Debug)]
pub struct AffineFn {
    pub slope: TimeFn,
    pub intercept: TimeFn,
}

impl AffineFn {
    pub fn new(slope: impl Into<TimeFn>, intercept: impl Into<TimeFn>) -> Self {
        AffineFn {
            slope: slope.into(),
            intercept: intercept.into(),
        }
    }
}

impl StateFunction for AffineFn {
    fn derivatives(&self, t: f64, x: f64, out: &mut [f64]) {
        let slope = self.slope.at(t);
        for (k, o) in out.iter_mut().enumerate() {
            *o = match k {
                0 => slope * x + self.intercept.at(t),
                1 => slope,
                _ => 0.0,
            };
        }
    }

    fn partial_bound(&self, k: usize, t: f64) -> Option<f64> {
        Some(if k == 1 { self.slope.at(t).abs() } else { 0.0 })
    }

    fn is_affine(&self) -> bool {
        true
    }
}

/// `Σ_i poly[i] x^i + tanh_coeff · tanh(x)`
#[derive(Clone, Debug)]
pub struct PolyTanh {
    poly: Vec<f64>,
    tanh_coeff: f64,
    /// `tanh^(k)` as a polynomial in `T = tanh(x)`, ascending coefficients.
    tanh_derivs: Vec<Vec<f64>>,
}

impl PolyTanh {
    pub fn new(poly: Vec<f64>, tanh_coeff: f64) -> Self {
        let mut poly = poly;
        while poly.last() == Some(&0.0) {
            poly.pop();
        }
        let mut tanh_derivs = vec![vec![0.0, 1.0]];
        for k in 0..MAX_SUPPORTED_ORDER {
            let p = &tanh_derivs[k];
            // d/dx P(T) = P'(T) (1 - T²)
            let dp: Vec<f64> = p.iter().enumerate().skip(1).map(|(i, c)| i as f64 * c).collect();
            let mut next = vec![0.0; dp.len() + 2];
            for (i, c) in dp.iter().enumerate() {
                next[i] += c;
                next[i + 2] -= c;
            }
            tanh_derivs.push(next);
        }
        PolyTanh {
            poly,
            tanh_coeff,
            tanh_derivs,
        }
    }

    fn degree(&self) -> usize {
        self.poly.len().saturating_sub(1)
    }
}

fn horner(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

impl StateFunction for PolyTanh {
    fn derivatives(&self, _t: f64, x: f64, out: &mut [f64]) {
        let th = if self.tanh_coeff != 0.0 { x.tanh() } else { 0.0 };
        for (k, o) in out.iter_mut().enumerate() {
            let mut v = 0.0;
            if k < self.poly.len() {
                // k-th derivative of the polynomial part
                let mut falling = 1.0;
                let mut acc = 0.0;
                let mut xp = 1.0;
                for i in k..self.poly.len() {
                    if i == k {
                        falling = (1..=k).map(|j| j as f64).product();
                    } else {
                        falling *= i as f64 / (i - k) as f64;
                    }
                    acc += self.poly[i] * falling * xp;
                    xp *= x;
                }
                v += acc;
            }
            if self.tanh_coeff != 0.0 {
                v += self.tanh_coeff * horner(&self.tanh_derivs[k.min(MAX_SUPPORTED_ORDER)], th);
            }
            *o = v;
        }
    }

    fn partial_bound(&self, k: usize, _t: f64) -> Option<f64> {
        if k == 0 || self.degree() > k {
            return None;
        }
        let poly_part = if k < self.poly.len() {
            // constant k-th derivative of a degree-k polynomial
            self.poly[k] * (1..=k).map(|j| j as f64).product::<f64>()
        } else {
            0.0
        };
        if self.tanh_coeff == 0.0 {
            return Some(poly_part.abs());
        }
        // sup over T ∈ (-1, 1) of the tanh derivative polynomial, by dense sampling
        let p = &self.tanh_derivs[k.min(MAX_SUPPORTED_ORDER)];
        let n = 20_000;
        let sup = (0..=n)
            .map(|i| {
                let th = -1.0 + 2.0 * i as f64 / n as f64;
                (poly_part + self.tanh_coeff * horner(p, th)).abs()
            })
            .fold(0.0, f64::max);
        Some(sup)
    }

    fn is_affine(&self) -> bool {
        self.degree() <= 1 && self.tanh_coeff == 0.0
    }
}

pub type PartialFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// User-supplied function with analytic partials up to some order; higher
/// orders fall back to central differences of the last supplied partial.
#[derive(Clone)]
pub struct CustomFn {
    partials: Vec<PartialFn>,
    fd_step: f64,
}

impl CustomFn {
    /// `partials[k]` evaluates `∂^k f/∂x^k (t, x)`; at least the value itself
    /// must be given.
    pub fn new(partials: Vec<PartialFn>) -> Result<Self> {
        if partials.is_empty() {
            return Err(Error::param("custom", "need at least the function value"));
        }
        Ok(CustomFn {
            partials,
            fd_step: 1e-3,
        })
    }

    pub fn with_fd_step(mut self, h: f64) -> Self {
        self.fd_step = h;
        self
    }

    fn supplied(&self) -> usize {
        self.partials.len()
    }

    fn partial(&self, k: usize, t: f64, x: f64) -> f64 {
        if k < self.partials.len() {
            return self.partials[k](t, x);
        }
        let h = self.fd_step;
        (self.partial(k - 1, t, x + h) - self.partial(k - 1, t, x - h)) / (2.0 * h)
    }
}

impl fmt::Debug for CustomFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CustomFn({} analytic partials)", self.partials.len())
    }
}

impl StateFunction for CustomFn {
    fn derivatives(&self, t: f64, x: f64, out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.partial(k, t, x);
        }
    }
}

/// One separable piece `φ(t, x) h(y)` of the jump coefficient.
#[derive(Clone, Debug)]
pub struct JumpTerm {
    pub state: Arc<dyn StateFunction>,
    pub mark: MarkFn,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Affine,
    Gbm,
    Merton,
    PolynomialTanh,
    Custom,
}

impl Family {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "affine" => Ok(Family::Affine),
            "gbm" => Ok(Family::Gbm),
            "merton" => Ok(Family::Merton),
            "polynomial-tanh" => Ok(Family::PolynomialTanh),
            "custom" => Ok(Family::Custom),
            other => Err(Error::UnknownFamily(other.to_string())),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Affine => "affine",
            Family::Gbm => "gbm",
            Family::Merton => "merton",
            Family::PolynomialTanh => "polynomial-tanh",
            Family::Custom => "custom",
        }
    }
}

/// Coefficients of `dX = r dt + σ dW + ∫ g (N - ν) dt` with (A_n) metadata.
#[derive(Clone, Debug)]
pub struct CoefficientSet {
    family: Family,
    drift: Arc<dyn StateFunction>,
    diffusion: Arc<dyn StateFunction>,
    jump_terms: Vec<JumpTerm>,
    n_max: usize,
    lip_bound: f64,
    theta: MarkFn,
    finite_difference_orders: bool,
    table: Arc<PartitionTable>,
}

impl CoefficientSet {
    pub fn new(
        family: Family,
        drift: Arc<dyn StateFunction>,
        diffusion: Arc<dyn StateFunction>,
        jump_terms: Vec<JumpTerm>,
        n_max: usize,
    ) -> Result<Self> {
        if n_max > MAX_SUPPORTED_ORDER {
            return Err(Error::param(
                "n_max",
                format!("at most {MAX_SUPPORTED_ORDER} supported, got {n_max}"),
            ));
        }
        let table = Arc::new(PartitionTable::new(n_max.max(1))?);
        let mut set = CoefficientSet {
            family,
            drift,
            diffusion,
            jump_terms: jump_terms.into_iter().filter(|j| !j.mark.is_zero()).collect(),
            n_max,
            lip_bound: 0.0,
            theta: MarkFn::Constant(1.0),
            finite_difference_orders: false,
            table,
        };
        set.theta = set.default_theta();
        set.lip_bound = set.default_lip_bound();
        Ok(set)
    }

    pub fn with_lip_bound(mut self, c: f64) -> Result<Self> {
        if !(c >= 0.0) || !c.is_finite() {
            return Err(Error::param("lip_bound", "must be finite and >= 0"));
        }
        self.lip_bound = c;
        Ok(self)
    }

    pub fn with_theta(mut self, theta: MarkFn) -> Self {
        self.theta = theta;
        self
    }

    /// `|∂^k g/∂x^k| <= C θ(y)` needs a θ; take `|h|` of the x-dependent
    /// jump terms (sum when there are several), constant 1 otherwise.
    fn default_theta(&self) -> MarkFn {
        let dependent: Vec<&JumpTerm> = self
            .jump_terms
            .iter()
            .filter(|j| j.state.partial_bound(1, 0.0) != Some(0.0))
            .collect();
        match dependent.as_slice() {
            [] => MarkFn::Constant(1.0),
            [one] => one.mark.abs(),
            many => {
                let marks: Vec<MarkFn> = many.iter().map(|j| j.mark.clone()).collect();
                MarkFn::custom(move |y| marks.iter().map(|m| m.eval(y).abs()).sum())
            }
        }
    }

    fn default_lip_bound(&self) -> f64 {
        let mut c: f64 = 0.0;
        for k in 1..=self.n_max.max(1) {
            let funcs = [&self.drift, &self.diffusion]
                .into_iter()
                .chain(self.jump_terms.iter().map(|j| &j.state));
            for f in funcs {
                match f.partial_bound(k, 0.0) {
                    Some(b) => c = c.max(b),
                    None => return 1.0,
                }
            }
        }
        c
    }

    pub fn gbm(mu: f64, sigma: f64, n_max: usize) -> Result<Self> {
        check_volatility(sigma)?;
        CoefficientSet::new(
            Family::Gbm,
            Arc::new(AffineFn::new(mu, 0.0)),
            Arc::new(AffineFn::new(sigma, 0.0)),
            Vec::new(),
            n_max,
        )
    }

    /// GBM plus multiplicative jumps `g(t, x, y) = x (e^y - 1)`.
    pub fn merton(mu: f64, sigma: f64, n_max: usize) -> Result<Self> {
        check_volatility(sigma)?;
        CoefficientSet::new(
            Family::Merton,
            Arc::new(AffineFn::new(mu, 0.0)),
            Arc::new(AffineFn::new(sigma, 0.0)),
            vec![JumpTerm {
                state: Arc::new(AffineFn::new(1.0, 0.0)),
                mark: MarkFn::ExpMinusOne,
            }],
            n_max,
        )
    }

    pub fn from_affine(spec: &AffineSpec, n_max: usize) -> Result<Self> {
        CoefficientSet::new(
            Family::Affine,
            Arc::new(AffineFn {
                slope: spec.a.clone(),
                intercept: spec.u.clone(),
            }),
            Arc::new(AffineFn {
                slope: spec.b.clone(),
                intercept: spec.v.clone(),
            }),
            vec![
                JumpTerm {
                    state: Arc::new(AffineFn {
                        slope: spec.c_scale.clone(),
                        intercept: TimeFn::Constant(0.0),
                    }),
                    mark: spec.c_mark.clone(),
                },
                JumpTerm {
                    state: Arc::new(AffineFn {
                        slope: TimeFn::Constant(0.0),
                        intercept: spec.w_scale.clone(),
                    }),
                    mark: spec.w_mark.clone(),
                },
            ],
            n_max,
        )
    }

    pub fn polynomial_tanh(params: &PolyTanhParams, n_max: usize) -> Result<Self> {
        let drift = PolyTanh::new(params.drift_poly.clone(), params.drift_tanh);
        let diffusion = PolyTanh::new(params.diffusion_poly.clone(), params.diffusion_tanh);
        let jump = PolyTanh::new(params.jump_poly.clone(), params.jump_tanh);
        let jump_terms = if jump.poly.is_empty() && jump.tanh_coeff == 0.0 {
            Vec::new()
        } else {
            vec![JumpTerm {
                state: Arc::new(jump),
                mark: params.jump_mark.clone(),
            }]
        };
        CoefficientSet::new(
            Family::PolynomialTanh,
            Arc::new(drift),
            Arc::new(diffusion),
            jump_terms,
            n_max,
        )
    }

    /// Coefficients from user functions. Each `Vec` lists `∂^k f/∂x^k` for
    /// `k = 0, 1, ...`; orders beyond those supplied are finite differences
    /// and flagged in assumption reports.
    pub fn custom(
        drift: Vec<PartialFn>,
        diffusion: Vec<PartialFn>,
        jump: Vec<(Vec<PartialFn>, MarkFn)>,
        n_max: usize,
    ) -> Result<Self> {
        let drift = CustomFn::new(drift)?;
        let diffusion = CustomFn::new(diffusion)?;
        let mut fd = drift.supplied() <= n_max || diffusion.supplied() <= n_max;
        let mut terms = Vec::new();
        for (partials, mark) in jump {
            let f = CustomFn::new(partials)?;
            fd |= f.supplied() <= n_max;
            terms.push(JumpTerm {
                state: Arc::new(f),
                mark,
            });
        }
        let mut set = CoefficientSet::new(Family::Custom, Arc::new(drift), Arc::new(diffusion), terms, n_max)?;
        set.finite_difference_orders = fd;
        Ok(set)
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn drift(&self) -> &dyn StateFunction {
        self.drift.as_ref()
    }

    pub fn diffusion(&self) -> &dyn StateFunction {
        self.diffusion.as_ref()
    }

    pub fn jump_terms(&self) -> &[JumpTerm] {
        &self.jump_terms
    }

    pub fn has_jumps(&self) -> bool {
        !self.jump_terms.is_empty()
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    /// The constant `C` of (A_n).
    pub fn lip_bound(&self) -> f64 {
        self.lip_bound
    }

    pub fn theta(&self) -> &MarkFn {
        &self.theta
    }

    pub fn partition_table(&self) -> &PartitionTable {
        &self.table
    }

    pub fn uses_finite_differences(&self) -> bool {
        self.finite_difference_orders
    }

    /// True when every coefficient is affine in `x`.
    pub fn is_affine(&self) -> bool {
        self.drift.is_affine() && self.diffusion.is_affine() && self.jump_terms.iter().all(|j| j.state.is_affine())
    }

    pub fn jump_value(&self, t: f64, x: f64, y: f64) -> f64 {
        self.jump_terms.iter().map(|j| j.state.value(t, x) * j.mark.eval(y)).sum()
    }

    /// `out[k] = ∂^k g/∂x^k (t, x, y)` for `k < out.len()`.
    pub fn jump_partials(&self, t: f64, x: f64, y: f64, out: &mut [f64]) {
        out.fill(0.0);
        let mut scratch = [0.0; ORDER_SLOTS];
        let n = out.len().min(ORDER_SLOTS);
        for term in &self.jump_terms {
            let h = term.mark.eval(y);
            if h == 0.0 {
                continue;
            }
            term.state.derivatives(t, x, &mut scratch[..n]);
            for (o, s) in out.iter_mut().zip(&scratch[..n]) {
                *o += s * h;
            }
        }
    }
}

fn check_volatility(sigma: f64) -> Result<()> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::param("sigma", format!("volatility must be finite and >= 0, got {sigma}")));
    }
    Ok(())
}

/// Time-dependent affine coefficients:
/// `a_t(x) = a_t x + u_t`, `b_t(x) = b_t x + v_t`, `c_t(y, x) = c_t(y) x + w_t(y)`,
/// with `c_t(y) = c_scale(t) c_mark(y)` and `w_t(y) = w_scale(t) w_mark(y)`.
#[derive(Clone, Debug)]
pub struct AffineSpec {
    pub u: TimeFn,
    pub a: TimeFn,
    pub v: TimeFn,
    pub b: TimeFn,
    pub c_scale: TimeFn,
    pub c_mark: MarkFn,
    pub w_scale: TimeFn,
    pub w_mark: MarkFn,
}

impl Default for AffineSpec {
    fn default() -> Self {
        AffineSpec {
            u: 0.0.into(),
            a: 0.0.into(),
            v: 0.0.into(),
            b: 0.0.into(),
            c_scale: 0.0.into(),
            c_mark: MarkFn::ExpMinusOne,
            w_scale: 0.0.into(),
            w_mark: MarkFn::Identity,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PolyTanhParams {
    pub drift_poly: Vec<f64>,
    pub drift_tanh: f64,
    pub diffusion_poly: Vec<f64>,
    pub diffusion_tanh: f64,
    pub jump_poly: Vec<f64>,
    pub jump_tanh: f64,
    pub jump_mark: MarkFn,
}

impl Default for PolyTanhParams {
    /// `r = tanh(x)`, `σ = 0.3 + 0.1 tanh(x)`, no jumps.
    fn default() -> Self {
        PolyTanhParams {
            drift_poly: Vec::new(),
            drift_tanh: 1.0,
            diffusion_poly: vec![0.3],
            diffusion_tanh: 0.1,
            jump_poly: Vec::new(),
            jump_tanh: 0.0,
            jump_mark: MarkFn::Identity,
        }
    }
}

fn default_n_max() -> usize {
    4
}

fn default_quadrature() -> usize {
    32
}

/// Model block of a run configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub family: String,
    #[serde(default)]
    pub params: BTreeMap<String, Value>,
    #[serde(default = "default_n_max")]
    pub n_max: usize,
    #[serde(default = "default_quadrature")]
    pub quadrature: usize,
}

impl ModelSpec {
    pub fn new(family: &str) -> Self {
        ModelSpec {
            family: family.to_string(),
            params: BTreeMap::new(),
            n_max: default_n_max(),
            quadrature: default_quadrature(),
        }
    }

    pub fn param(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.params.insert(key.to_string(), value.into());
        self
    }
}

struct Params<'a> {
    family: &'a str,
    map: &'a BTreeMap<String, Value>,
}

impl<'a> Params<'a> {
    fn new(family: &'a str, map: &'a BTreeMap<String, Value>, allowed: &'static [&'static str]) -> Result<Self> {
        let mut allowed_all: Vec<&str> = allowed.to_vec();
        allowed_all.extend(["lip_bound", "theta"]);
        if let Some(bad) = map.keys().find(|k| !allowed_all.contains(&k.as_str())) {
            return Err(Error::param(
                format!("model.params.{bad}"),
                format!("not a parameter of family `{family}` (expected one of {allowed_all:?})"),
            ));
        }
        Ok(Params { family, map })
    }

    fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        match self.map.get(key) {
            None => Ok(default),
            Some(v) => v.as_f64().filter(|x| x.is_finite()).ok_or_else(|| {
                Error::param(format!("model.params.{key}"), format!("expected a finite number, got {v}"))
            }),
        }
    }

    fn vec_or(&self, key: &str, default: Vec<f64>) -> Result<Vec<f64>> {
        match self.map.get(key) {
            None => Ok(default),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| {
                    v.as_f64().ok_or_else(|| {
                        Error::param(format!("model.params.{key}"), format!("expected numbers, got {v}"))
                    })
                })
                .collect(),
            Some(Value::Number(n)) => Ok(vec![n.as_f64().unwrap_or(f64::NAN)]),
            Some(v) => Err(Error::param(format!("model.params.{key}"), format!("expected an array, got {v}"))),
        }
    }

    fn mark_or(&self, key: &str, default: MarkFn) -> Result<MarkFn> {
        match self.map.get(key) {
            None => Ok(default),
            Some(Value::String(s)) => MarkFn::from_name(s),
            Some(v) => Err(Error::param(
                format!("model.params.{key}"),
                format!("expected a mark function name, got {v} (family {})", self.family),
            )),
        }
    }
}

/// Builds a coefficient set from a configuration block.
pub fn build_coefficients(spec: &ModelSpec) -> Result<CoefficientSet> {
    let family = Family::parse(&spec.family)?;
    let set = match family {
        Family::Gbm => {
            let p = Params::new(&spec.family, &spec.params, &["mu", "sigma"])?;
            CoefficientSet::gbm(p.f64_or("mu", 0.0)?, p.f64_or("sigma", 0.0)?, spec.n_max)?
        }
        Family::Merton => {
            let p = Params::new(&spec.family, &spec.params, &["mu", "sigma"])?;
            CoefficientSet::merton(p.f64_or("mu", 0.0)?, p.f64_or("sigma", 0.0)?, spec.n_max)?
        }
        Family::Affine => {
            let p = Params::new(
                &spec.family,
                &spec.params,
                &["u", "a", "v", "b", "c", "c_mark", "w", "w_mark"],
            )?;
            let affine = AffineSpec {
                u: p.f64_or("u", 0.0)?.into(),
                a: p.f64_or("a", 0.0)?.into(),
                v: p.f64_or("v", 0.0)?.into(),
                b: p.f64_or("b", 0.0)?.into(),
                c_scale: p.f64_or("c", 0.0)?.into(),
                c_mark: p.mark_or("c_mark", MarkFn::ExpMinusOne)?,
                w_scale: p.f64_or("w", 0.0)?.into(),
                w_mark: p.mark_or("w_mark", MarkFn::Identity)?,
            };
            CoefficientSet::from_affine(&affine, spec.n_max)?
        }
        Family::PolynomialTanh => {
            let p = Params::new(
                &spec.family,
                &spec.params,
                &[
                    "drift_poly",
                    "drift_tanh",
                    "diffusion_poly",
                    "diffusion_tanh",
                    "jump_poly",
                    "jump_tanh",
                    "jump_mark",
                ],
            )?;
            let d = PolyTanhParams::default();
            let params = PolyTanhParams {
                drift_poly: p.vec_or("drift_poly", d.drift_poly)?,
                drift_tanh: p.f64_or("drift_tanh", d.drift_tanh)?,
                diffusion_poly: p.vec_or("diffusion_poly", d.diffusion_poly)?,
                diffusion_tanh: p.f64_or("diffusion_tanh", d.diffusion_tanh)?,
                jump_poly: p.vec_or("jump_poly", d.jump_poly)?,
                jump_tanh: p.f64_or("jump_tanh", d.jump_tanh)?,
                jump_mark: p.mark_or("jump_mark", d.jump_mark)?,
            };
            CoefficientSet::polynomial_tanh(&params, spec.n_max)?
        }
        Family::Custom => {
            return Err(Error::param(
                "model.family",
                "custom coefficients must be built through the library API",
            ))
        }
    };
    let mut set = set;
    if let Some(v) = spec.params.get("lip_bound") {
        let c = v
            .as_f64()
            .ok_or_else(|| Error::param("model.params.lip_bound", format!("expected a number, got {v}")))?;
        set = set.with_lip_bound(c)?;
    }
    if let Some(Value::String(name)) = spec.params.get("theta") {
        set = set.with_theta(MarkFn::from_name(name)?);
    }
    Ok(set)
}
