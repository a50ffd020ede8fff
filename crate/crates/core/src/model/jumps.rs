//! Finite-activity jump measures `ν_t(dy) = λ(t) μ(dy)` with a constant
//! dominating intensity `λ̄ >= λ(t)`.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{gauss_hermite, gauss_laguerre, QuadratureRule};

/// Smallest node count accepted when a law is integrated by quadrature.
pub const MIN_QUADRATURE_NODES: usize = 8;

/// A real function of the mark `y`.
#[derive(Clone)]
pub enum MarkFn {
    Zero,
    Constant(f64),
    /// `y`
    Identity,
    /// `e^y - 1`
    ExpMinusOne,
    /// `|e^y - 1|`
    AbsExpMinusOne,
    /// `|y|`
    Abs,
    /// `y^k`
    Power(i32),
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl MarkFn {
    pub fn custom<F: Fn(f64) -> f64 + Send + Sync + 'static>(f: F) -> Self {
        MarkFn::Custom(Arc::new(f))
    }

    #[inline]
    pub fn eval(&self, y: f64) -> f64 {
        match self {
            MarkFn::Zero => 0.0,
            MarkFn::Constant(c) => *c,
            MarkFn::Identity => y,
            MarkFn::ExpMinusOne => y.exp_m1(),
            MarkFn::AbsExpMinusOne => y.exp_m1().abs(),
            MarkFn::Abs => y.abs(),
            MarkFn::Power(k) => y.powi(*k),
            MarkFn::Custom(f) => f(y),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, MarkFn::Zero) || matches!(self, MarkFn::Constant(c) if *c == 0.0)
    }

    /// `|h|`, used to build envelopes.
    pub fn abs(&self) -> MarkFn {
        match self {
            MarkFn::Zero => MarkFn::Zero,
            MarkFn::Constant(c) => MarkFn::Constant(c.abs()),
            MarkFn::Identity | MarkFn::Abs => MarkFn::Abs,
            MarkFn::ExpMinusOne | MarkFn::AbsExpMinusOne => MarkFn::AbsExpMinusOne,
            MarkFn::Power(k) if k % 2 == 0 => MarkFn::Power(*k),
            other => {
                let inner = other.clone();
                MarkFn::custom(move |y| inner.eval(y).abs())
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MarkFn::Zero => "zero",
            MarkFn::Constant(_) => "constant",
            MarkFn::Identity => "identity",
            MarkFn::ExpMinusOne => "exp_minus_one",
            MarkFn::AbsExpMinusOne => "abs_exp_minus_one",
            MarkFn::Abs => "abs",
            MarkFn::Power(_) => "power",
            MarkFn::Custom(_) => "custom",
        }
    }

    /// Parses the names accepted in configuration files.
    pub fn from_name(name: &str) -> Result<Self> {
        Ok(match name {
            "zero" => MarkFn::Zero,
            "one" => MarkFn::Constant(1.0),
            "identity" => MarkFn::Identity,
            "exp_minus_one" => MarkFn::ExpMinusOne,
            "abs_exp_minus_one" => MarkFn::AbsExpMinusOne,
            "abs" => MarkFn::Abs,
            "square" => MarkFn::Power(2),
            other => {
                return Err(Error::param(
                    "mark",
                    format!(
                        "unknown mark function `{other}` (expected zero, one, identity, \
                         exp_minus_one, abs_exp_minus_one, abs or square)"
                    ),
                ))
            }
        })
    }
}

impl fmt::Debug for MarkFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MarkFn::Constant(c) => write!(f, "Constant({c})"),
            MarkFn::Power(k) => write!(f, "Power({k})"),
            other => f.write_str(other.name()),
        }
    }
}

/// Time-dependent intensity `λ(t)`.
#[derive(Clone)]
pub enum Intensity {
    Constant(f64),
    /// `intercept + slope · t`
    Linear { intercept: f64, slope: f64 },
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl Intensity {
    #[inline]
    pub fn at(&self, t: f64) -> f64 {
        match self {
            Intensity::Constant(l) => *l,
            Intensity::Linear { intercept, slope } => intercept + slope * t,
            Intensity::Custom(f) => f(t),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Intensity::Constant(_))
    }
}

impl fmt::Debug for Intensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Intensity::Constant(l) => write!(f, "Constant({l})"),
            Intensity::Linear { intercept, slope } => write!(f, "Linear({intercept} + {slope} t)"),
            Intensity::Custom(_) => f.write_str("Custom"),
        }
    }
}

/// Law `μ` of the jump marks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SizeLaw {
    Gaussian {
        mean: f64,
        std: f64,
    },
    /// Upward jumps `~ Exp(rate_up)` with probability `p_up`, downward jumps
    /// `~ -Exp(rate_down)` otherwise.
    TwoSidedExponential {
        rate_up: f64,
        rate_down: f64,
        p_up: f64,
    },
    /// Atoms `(location, probability)`.
    Discrete { atoms: Vec<(f64, f64)> },
}

impl SizeLaw {
    fn validate(&self) -> Result<()> {
        match self {
            SizeLaw::Gaussian { mean, std } => {
                if !mean.is_finite() || !std.is_finite() || *std < 0.0 {
                    return Err(Error::param("size_law.gaussian", "need finite mean and std >= 0"));
                }
            }
            SizeLaw::TwoSidedExponential {
                rate_up,
                rate_down,
                p_up,
            } => {
                if !(*rate_up > 0.0 && *rate_down > 0.0) || !(0.0..=1.0).contains(p_up) {
                    return Err(Error::param(
                        "size_law.two_sided_exponential",
                        "need positive rates and p_up in [0, 1]",
                    ));
                }
            }
            SizeLaw::Discrete { atoms } => {
                if atoms.is_empty() {
                    return Err(Error::param("size_law.discrete", "no atoms"));
                }
                if atoms.iter().any(|&(y, w)| !y.is_finite() || !(w >= 0.0)) {
                    return Err(Error::param("size_law.discrete", "atoms need finite locations and weights >= 0"));
                }
                let total: f64 = atoms.iter().map(|a| a.1).sum();
                if (total - 1.0).abs() > 1e-10 {
                    return Err(Error::param(
                        "size_law.discrete",
                        format!("probabilities sum to {total}, not 1"),
                    ));
                }
            }
        }
        Ok(())
    }

    fn needs_quadrature(&self) -> bool {
        !matches!(self, SizeLaw::Discrete { .. })
    }
}

/// Quadrature nodes and weights against `μ` itself (weights sum to one).
#[derive(Clone, Debug)]
struct MarkRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl MarkRule {
    fn build(law: &SizeLaw, q: usize) -> Self {
        match law {
            SizeLaw::Gaussian { mean, std } => {
                let QuadratureRule { nodes, weights } = gauss_hermite(q);
                let norm = std::f64::consts::PI.sqrt();
                MarkRule {
                    nodes: nodes.iter().map(|&z| mean + std::f64::consts::SQRT_2 * std * z).collect(),
                    weights: weights.iter().map(|&w| w / norm).collect(),
                }
            }
            SizeLaw::TwoSidedExponential {
                rate_up,
                rate_down,
                p_up,
            } => {
                let lag = gauss_laguerre(q);
                let mut nodes = Vec::with_capacity(2 * q);
                let mut weights = Vec::with_capacity(2 * q);
                for (&s, &w) in lag.nodes.iter().zip(&lag.weights) {
                    nodes.push(-s / rate_down);
                    weights.push((1.0 - p_up) * w);
                }
                for (&s, &w) in lag.nodes.iter().zip(&lag.weights) {
                    nodes.push(s / rate_up);
                    weights.push(p_up * w);
                }
                MarkRule { nodes, weights }
            }
            SizeLaw::Discrete { atoms } => MarkRule {
                nodes: atoms.iter().map(|a| a.0).collect(),
                weights: atoms.iter().map(|a| a.1).collect(),
            },
        }
    }
}

/// Poisson random measure with compensator `λ(t) μ(dy) dt`.
#[derive(Clone, Debug)]
pub struct JumpModel {
    intensity: Intensity,
    dominating: f64,
    size_law: SizeLaw,
    quadrature_nodes: usize,
    rule: MarkRule,
}

impl JumpModel {
    pub fn new(intensity: Intensity, dominating: f64, size_law: SizeLaw, quadrature_nodes: usize) -> Result<Self> {
        if !(dominating >= 0.0) || !dominating.is_finite() {
            return Err(Error::InvalidDomination(format!(
                "dominating intensity must be finite and >= 0, got {dominating}"
            )));
        }
        size_law.validate()?;
        if size_law.needs_quadrature() && quadrature_nodes < MIN_QUADRATURE_NODES {
            return Err(Error::param(
                "quadrature",
                format!("need at least {MIN_QUADRATURE_NODES} nodes, got {quadrature_nodes}"),
            ));
        }
        let rule = MarkRule::build(&size_law, quadrature_nodes.max(1));
        Ok(JumpModel {
            intensity,
            dominating,
            size_law,
            quadrature_nodes,
            rule,
        })
    }

    /// Homogeneous intensity `λ` with `λ̄ = λ`.
    pub fn homogeneous(lambda: f64, size_law: SizeLaw, quadrature_nodes: usize) -> Result<Self> {
        JumpModel::new(Intensity::Constant(lambda), lambda, size_law, quadrature_nodes)
    }

    /// No jumps at all.
    pub fn none() -> Self {
        JumpModel::new(
            Intensity::Constant(0.0),
            0.0,
            SizeLaw::Discrete { atoms: vec![(0.0, 1.0)] },
            0,
        )
        .expect("static configuration is valid")
    }

    #[inline]
    pub fn intensity_at(&self, t: f64) -> f64 {
        self.intensity.at(t)
    }

    pub fn intensity(&self) -> &Intensity {
        &self.intensity
    }

    pub fn dominating_intensity(&self) -> f64 {
        self.dominating
    }

    pub fn size_law(&self) -> &SizeLaw {
        &self.size_law
    }

    pub fn quadrature_nodes(&self) -> usize {
        self.quadrature_nodes
    }

    pub fn is_trivial(&self) -> bool {
        self.dominating == 0.0 && matches!(self.intensity, Intensity::Constant(l) if l == 0.0)
    }

    /// Checks `0 <= λ(t) <= λ̄` on `samples + 1` equispaced points of `[0, horizon]`.
    pub fn check_domination(&self, horizon: f64, samples: usize) -> Result<()> {
        let n = samples.max(1);
        for i in 0..=n {
            let t = horizon * i as f64 / n as f64;
            let l = self.intensity.at(t);
            if !l.is_finite() || l < 0.0 {
                return Err(Error::InvalidDomination(format!("λ({t}) = {l} is not a valid intensity")));
            }
            if l > self.dominating * (1.0 + 1e-12) {
                return Err(Error::InvalidDomination(format!(
                    "λ({t}) = {l} exceeds the dominating intensity {}",
                    self.dominating
                )));
            }
        }
        Ok(())
    }

    pub fn sample_mark<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.size_law {
            SizeLaw::Gaussian { mean, std } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + std * z
            }
            SizeLaw::TwoSidedExponential {
                rate_up,
                rate_down,
                p_up,
            } => {
                let u: f64 = rng.random();
                if u < *p_up {
                    Exp::new(*rate_up).expect("validated rate").sample(rng)
                } else {
                    -Exp::new(*rate_down).expect("validated rate").sample(rng)
                }
            }
            SizeLaw::Discrete { atoms } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for &(y, w) in atoms {
                    acc += w;
                    if u < acc {
                        return y;
                    }
                }
                atoms.last().expect("validated nonempty").0
            }
        }
    }

    /// Closed-form `E_μ[h]` where one is available.
    fn closed_form_expectation(&self, h: &MarkFn) -> Option<f64> {
        match h {
            MarkFn::Zero => return Some(0.0),
            MarkFn::Constant(c) => return Some(*c),
            _ => {}
        }
        match (&self.size_law, h) {
            (SizeLaw::Gaussian { mean, .. }, MarkFn::Identity) => Some(*mean),
            (SizeLaw::Gaussian { mean, std }, MarkFn::ExpMinusOne) => {
                Some((mean + 0.5 * std * std).exp_m1())
            }
            (SizeLaw::Gaussian { mean, std }, MarkFn::Power(2)) => Some(mean * mean + std * std),
            (
                SizeLaw::TwoSidedExponential {
                    rate_up,
                    rate_down,
                    p_up,
                },
                MarkFn::Identity,
            ) => Some(p_up / rate_up - (1.0 - p_up) / rate_down),
            (
                SizeLaw::TwoSidedExponential {
                    rate_up,
                    rate_down,
                    p_up,
                },
                MarkFn::ExpMinusOne,
            ) if *rate_up > 1.0 || *p_up == 0.0 => {
                let up = if *p_up == 0.0 { 0.0 } else { p_up * rate_up / (rate_up - 1.0) };
                Some(up + (1.0 - p_up) * rate_down / (rate_down + 1.0) - 1.0)
            }
            _ => None,
        }
    }

    /// `E_μ[f]` by the quadrature rule (exact sum for discrete laws).
    pub fn quadrature_expectation(&self, f: &dyn Fn(f64) -> f64) -> Result<f64> {
        let value: f64 = self
            .rule
            .nodes
            .iter()
            .zip(&self.rule.weights)
            .map(|(&y, &w)| w * f(y))
            .sum();
        if value.is_finite() {
            Ok(value)
        } else {
            let diagnostics = self
                .rule
                .nodes
                .iter()
                .zip(&self.rule.weights)
                .map(|(&y, &w)| format!("(y={y:.6e}, w={w:.3e}, f={:.3e})", f(y)))
                .collect::<Vec<_>>()
                .join(", ");
            Err(Error::NumericalFailure {
                what: format!("{:?} mark expectation", self.size_law),
                diagnostics,
            })
        }
    }

    /// `E_μ[h]`, closed form when known.
    pub fn expectation(&self, h: &MarkFn) -> Result<f64> {
        if let Some(v) = self.closed_form_expectation(h) {
            return Ok(v);
        }
        self.quadrature_expectation(&|y| h.eval(y))
    }

    /// `∫ h(y) ν_t(dy) = λ(t) E_μ[h]`.
    pub fn compensator_integral(&self, h: &MarkFn, t: f64) -> Result<f64> {
        let lambda = self.intensity.at(t);
        if lambda == 0.0 || h.is_zero() {
            return Ok(0.0);
        }
        Ok(lambda * self.expectation(h)?)
    }

    /// `‖θ‖_{L^q(η)}` with `η = λ̄ μ`.
    pub fn envelope_norm(&self, theta: &MarkFn, q: f64) -> Result<f64> {
        let m = self.quadrature_expectation(&|y| theta.eval(y).abs().powf(q))?;
        Ok((self.dominating * m).powf(1.0 / q))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gaussian(mean: f64, std: f64, lambda: f64) -> JumpModel {
        JumpModel::homogeneous(lambda, SizeLaw::Gaussian { mean, std }, 32).unwrap()
    }

    #[test]
    fn zero_integrand_gives_zero() {
        let jm = gaussian(0.0, 0.1, 3.0);
        assert_eq!(jm.compensator_integral(&MarkFn::Zero, 0.3).unwrap(), 0.0);
    }

    #[test]
    fn gaussian_exp_minus_one_closed_form() {
        let jm = gaussian(0.0, 0.1, 3.0);
        let got = jm.compensator_integral(&MarkFn::ExpMinusOne, 0.0).unwrap();
        let want = 3.0 * (0.005f64.exp() - 1.0);
        assert!((got - want).abs() < 1e-15);
        assert!((got - 0.015038).abs() < 1e-6);
    }

    #[test]
    fn symmetric_two_point_law() {
        let jm = JumpModel::homogeneous(
            2.0,
            SizeLaw::Discrete {
                atoms: vec![(1.0, 0.5), (-1.0, 0.5)],
            },
            0,
        )
        .unwrap();
        assert_eq!(jm.compensator_integral(&MarkFn::Power(2), 0.0).unwrap(), 2.0);
        assert_eq!(jm.compensator_integral(&MarkFn::Identity, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn quadrature_matches_closed_form_for_gaussian() {
        for (m, s) in [(0.0, 0.1), (-0.05, 0.3), (0.2, 0.5)] {
            let jm = gaussian(m, s, 1.0);
            let closed = jm.expectation(&MarkFn::ExpMinusOne).unwrap();
            let quad = jm.quadrature_expectation(&|y: f64| y.exp_m1()).unwrap();
            assert!((closed - quad).abs() <= 1e-10 * closed.abs(), "{m} {s}: {closed} vs {quad}");
        }
    }

    #[test]
    fn laws_are_normalized() {
        let laws = [
            SizeLaw::Gaussian { mean: 0.1, std: 0.4 },
            SizeLaw::TwoSidedExponential {
                rate_up: 3.0,
                rate_down: 2.0,
                p_up: 0.4,
            },
            SizeLaw::Discrete {
                atoms: vec![(0.5, 0.25), (-1.0, 0.75)],
            },
        ];
        for law in laws {
            let jm = JumpModel::homogeneous(1.0, law, 16).unwrap();
            let one = jm.quadrature_expectation(&|_| 1.0).unwrap();
            assert!((one - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn two_sided_closed_forms_match_quadrature() {
        let jm = JumpModel::homogeneous(
            1.0,
            SizeLaw::TwoSidedExponential {
                rate_up: 5.0,
                rate_down: 4.0,
                p_up: 0.3,
            },
            32,
        )
        .unwrap();
        for h in [MarkFn::Identity, MarkFn::ExpMinusOne] {
            let closed = jm.expectation(&h).unwrap();
            let quad = jm.quadrature_expectation(&|y| h.eval(y)).unwrap();
            assert!((closed - quad).abs() < 1e-9, "{h:?}: {closed} vs {quad}");
        }
    }

    #[test]
    fn compensator_is_linear_and_scales_with_intensity() {
        let a = gaussian(0.1, 0.2, 1.5);
        let b = gaussian(0.1, 0.2, 3.0);
        let f = MarkFn::custom(|y| y.sin() + y * y);
        let g = MarkFn::custom(|y| (0.5 * y).cos());
        let fg = MarkFn::custom(|y| 2.0 * (y.sin() + y * y) - 3.0 * (0.5 * y).cos());
        let lhs = a.compensator_integral(&fg, 0.0).unwrap();
        let rhs = 2.0 * a.compensator_integral(&f, 0.0).unwrap() - 3.0 * a.compensator_integral(&g, 0.0).unwrap();
        assert!((lhs - rhs).abs() < 1e-13);
        let ratio = b.compensator_integral(&f, 0.0).unwrap() / a.compensator_integral(&f, 0.0).unwrap();
        assert!((ratio - 2.0).abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_configurations() {
        assert!(JumpModel::homogeneous(1.0, SizeLaw::Gaussian { mean: 0.0, std: -1.0 }, 32).is_err());
        assert!(JumpModel::homogeneous(1.0, SizeLaw::Gaussian { mean: 0.0, std: 1.0 }, 4).is_err());
        assert!(JumpModel::homogeneous(1.0, SizeLaw::Discrete { atoms: vec![(1.0, 0.4)] }, 0).is_err());
        let ramp = JumpModel::new(
            Intensity::Linear {
                intercept: 0.0,
                slope: 3.0,
            },
            2.0,
            SizeLaw::Gaussian { mean: 0.0, std: 1.0 },
            16,
        )
        .unwrap();
        assert!(matches!(ramp.check_domination(1.0, 100), Err(Error::InvalidDomination(_))));
        assert!(ramp.check_domination(0.5, 100).is_ok());
    }

    #[test]
    fn discrete_marks_follow_their_weights() {
        let jm = JumpModel::homogeneous(
            1.0,
            SizeLaw::Discrete {
                atoms: vec![(1.0, 0.25), (-1.0, 0.75)],
            },
            0,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 40_000;
        let ups = (0..n).filter(|_| jm.sample_mark(&mut rng) > 0.0).count();
        let freq = ups as f64 / n as f64;
        assert!((freq - 0.25).abs() < 0.01, "{freq}");
    }
}
