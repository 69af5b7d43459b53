//! Scaling-law forms, their log-space residuals and analytic gradients.
//!
//! Four forms are supported:
//!
//! | kind             | loss                                         |
//! |------------------|----------------------------------------------|
//! | `Chinchilla`     | `A·N^−α + B·D^−β + E`                         |
//! | `SharedRho`      | `A·(ρ_N·N)^−α + B·(ρ_D·D)^−β + E`             |
//! | `ComputeRho`     | `A·(ρ_N·N)^−α + B·(ρ_C·C)^−β + E`             |
//! | `DataEfficiency` | `B·(D/s_opt)^−β + E` (no model-size term)     |
//!
//! The data-efficiency form has no `N` dependence, so it cannot express a
//! speedup that shrinks as models grow. It is kept for comparison only.
//!
//! Every power is evaluated as `exp(−α·ln x)` so that `N ~ 10⁹` and beyond
//! never overflows.

use serde::{Deserialize, Serialize};

use crate::run_store::{FitPoints, LogPoint};
use crate::{Error, Result};

/// Shared Chinchilla parameters `(A, α, B, β, E)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LawParams {
    #[serde(rename = "A")]
    pub a: f64,
    pub alpha: f64,
    #[serde(rename = "B")]
    pub b: f64,
    pub beta: f64,
    #[serde(rename = "E")]
    pub e: f64,
}

impl LawParams {
    pub fn new(a: f64, alpha: f64, b: f64, beta: f64, e: f64) -> Result<Self> {
        let p = LawParams { a, alpha, b, beta, e };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("A", self.a),
            ("alpha", self.alpha),
            ("B", self.b),
            ("beta", self.beta),
            ("E", self.e),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Argument(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.a, self.alpha, self.b, self.beta, self.e]
    }
}

/// Which covariate the second term of a rho-law scales.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Data,
    Compute,
}

impl Axis {
    /// Serialized name of the second rescaling factor.
    pub fn rho_key(self) -> &'static str {
        match self {
            Axis::Data => "rho_D",
            Axis::Compute => "rho_C",
        }
    }
}

/// Per-optimizer rescalings `(ρ_N, ρ_D)` or `(ρ_N, ρ_C)`.
///
/// Serialized as `{"rho_N": .., "rho_D": ..}` or `{"rho_N": .., "rho_C": ..}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerFactors {
    pub rho_n: f64,
    pub rho_second: f64,
    pub axis: Axis,
}

impl OptimizerFactors {
    /// Factors of the reference optimizer.
    pub fn identity(axis: Axis) -> Self {
        OptimizerFactors {
            rho_n: 1.0,
            rho_second: 1.0,
            axis,
        }
    }

    pub fn new(rho_n: f64, rho_second: f64, axis: Axis) -> Result<Self> {
        if !(rho_n.is_finite() && rho_n > 0.0 && rho_second.is_finite() && rho_second > 0.0) {
            return Err(Error::Argument(format!(
                "rescaling factors must be positive, got ({rho_n}, {rho_second})"
            )));
        }
        Ok(OptimizerFactors {
            rho_n,
            rho_second,
            axis,
        })
    }
}

impl Serialize for OptimizerFactors {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut m = s.serialize_map(Some(2))?;
        m.serialize_entry("rho_N", &self.rho_n)?;
        m.serialize_entry(self.axis.rho_key(), &self.rho_second)?;
        m.end()
    }
}

impl<'de> Deserialize<'de> for OptimizerFactors {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Raw {
            #[serde(rename = "rho_N")]
            rho_n: f64,
            #[serde(rename = "rho_D")]
            rho_d: Option<f64>,
            #[serde(rename = "rho_C")]
            rho_c: Option<f64>,
        }
        let raw = Raw::deserialize(d)?;
        let (rho_second, axis) = match (raw.rho_d, raw.rho_c) {
            (Some(v), None) => (v, Axis::Data),
            (None, Some(v)) => (v, Axis::Compute),
            _ => {
                return Err(serde::de::Error::custom(
                    "exactly one of rho_D and rho_C must be present",
                ))
            }
        };
        Ok(OptimizerFactors {
            rho_n: raw.rho_n,
            rho_second,
            axis,
        })
    }
}

/// Parameters of the data-efficiency law `B·(D/s_opt)^−β + E`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataEfficiencyParams {
    #[serde(rename = "B")]
    pub b: f64,
    pub beta: f64,
    #[serde(rename = "E")]
    pub e: f64,
    pub s_opt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Chinchilla,
    SharedRho,
    ComputeRho,
    DataEfficiency,
}

impl ModelKind {
    pub fn needs_factors(self) -> bool {
        !matches!(self, ModelKind::Chinchilla)
    }
}

/// Optimizer-specific inputs accepted by [`eval_law`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Factors {
    Rho(OptimizerFactors),
    DataEfficiency(DataEfficiencyParams),
}

/// A fully specified law, ready to evaluate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Law {
    Chinchilla(LawParams),
    Rho {
        theta: LawParams,
        factors: OptimizerFactors,
    },
    DataEfficiency(DataEfficiencyParams),
}

impl Law {
    /// Assembles a law, checking that `factors` match `kind`. The
    /// data-efficiency form takes all of its parameters from `factors`.
    pub fn new(kind: ModelKind, theta: &LawParams, factors: Option<&Factors>) -> Result<Self> {
        let law = match (kind, factors) {
            (ModelKind::Chinchilla, None) => Law::Chinchilla(*theta),
            (ModelKind::SharedRho, Some(Factors::Rho(f))) if f.axis == Axis::Data => Law::Rho {
                theta: *theta,
                factors: *f,
            },
            (ModelKind::ComputeRho, Some(Factors::Rho(f))) if f.axis == Axis::Compute => {
                Law::Rho {
                    theta: *theta,
                    factors: *f,
                }
            }
            (ModelKind::DataEfficiency, Some(Factors::DataEfficiency(p))) => Law::DataEfficiency(*p),
            (kind, None) => {
                return Err(Error::Argument(format!("{kind:?} requires optimizer factors")))
            }
            (kind, Some(f)) => {
                return Err(Error::Argument(format!(
                    "factors {f:?} do not match law kind {kind:?}"
                )))
            }
        };
        Ok(law)
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Law::Chinchilla(_) => ModelKind::Chinchilla,
            Law::Rho { factors, .. } => match factors.axis {
                Axis::Data => ModelKind::SharedRho,
                Axis::Compute => ModelKind::ComputeRho,
            },
            Law::DataEfficiency(_) => ModelKind::DataEfficiency,
        }
    }

    /// Predicted loss at covariates `(n, second)`.
    pub fn eval(&self, n: f64, second: f64) -> f64 {
        match self {
            Law::Chinchilla(t) => chinchilla(t, 1.0 * n, 1.0 * second),
            Law::Rho { theta, factors } => {
                chinchilla(theta, factors.rho_n * n, factors.rho_second * second)
            }
            Law::DataEfficiency(p) => p.b * (-p.beta * (second / p.s_opt).ln()).exp() + p.e,
        }
    }

    /// Additive terms at log covariates: (model-size term, second term, floor).
    fn terms_at_log(&self, log_n: f64, log_x: f64) -> (f64, f64, f64) {
        match self {
            Law::Chinchilla(t) => (
                t.a * (-t.alpha * log_n).exp(),
                t.b * (-t.beta * log_x).exp(),
                t.e,
            ),
            Law::Rho { theta: t, factors: f } => (
                t.a * (-t.alpha * (f.rho_n.ln() + log_n)).exp(),
                t.b * (-t.beta * (f.rho_second.ln() + log_x)).exp(),
                t.e,
            ),
            Law::DataEfficiency(p) => (0.0, p.b * (-p.beta * (log_x - p.s_opt.ln())).exp(), p.e),
        }
    }

    /// `ln L̂` at log covariates.
    pub fn ln_eval_log(&self, log_n: f64, log_x: f64) -> f64 {
        let (ta, tb, e) = self.terms_at_log(log_n, log_x);
        (ta + tb + e).ln()
    }

    /// Names of the free parameters in gradient order.
    ///
    /// Term scales and rescaling factors are free in log coordinates;
    /// exponents and the floor are free as-is. Rho laws free only the two
    /// rescaling factors: `θ` is held at the reference fit.
    pub fn free_names(&self) -> &'static [&'static str] {
        match self {
            Law::Chinchilla(_) => &["ln_A", "alpha", "ln_B", "beta", "E"],
            Law::Rho { factors, .. } => match factors.axis {
                Axis::Data => &["ln_rho_N", "ln_rho_D"],
                Axis::Compute => &["ln_rho_N", "ln_rho_C"],
            },
            Law::DataEfficiency(_) => &["ln_B", "beta", "E", "ln_s_opt"],
        }
    }

    /// Current values of the free parameters, see [`Law::free_names`].
    pub fn free_params(&self) -> Vec<f64> {
        match self {
            Law::Chinchilla(t) => vec![t.a.ln(), t.alpha, t.b.ln(), t.beta, t.e],
            Law::Rho { factors: f, .. } => vec![f.rho_n.ln(), f.rho_second.ln()],
            Law::DataEfficiency(p) => vec![p.b.ln(), p.beta, p.e, p.s_opt.ln()],
        }
    }

    /// Same law with free parameters replaced by `x`.
    pub fn with_free_params(&self, x: &[f64]) -> Law {
        match self {
            Law::Chinchilla(_) => Law::Chinchilla(LawParams {
                a: x[0].exp(),
                alpha: x[1],
                b: x[2].exp(),
                beta: x[3],
                e: x[4],
            }),
            Law::Rho { theta, factors } => Law::Rho {
                theta: *theta,
                factors: OptimizerFactors {
                    rho_n: x[0].exp(),
                    rho_second: x[1].exp(),
                    axis: factors.axis,
                },
            },
            Law::DataEfficiency(_) => Law::DataEfficiency(DataEfficiencyParams {
                b: x[0].exp(),
                beta: x[1],
                e: x[2],
                s_opt: x[3].exp(),
            }),
        }
    }
}

fn chinchilla(t: &LawParams, n: f64, x: f64) -> f64 {
    t.a * (-t.alpha * n.ln()).exp() + t.b * (-t.beta * x.ln()).exp() + t.e
}

/// Predicted loss for `kind` at `(n, second)`.
///
/// `second` is tokens for the data-axis forms and compute for `ComputeRho`.
/// `factors` must be present exactly when `kind` needs them; the
/// data-efficiency form ignores `theta`.
pub fn eval_law(
    kind: ModelKind,
    theta: &LawParams,
    factors: Option<&Factors>,
    n: f64,
    second: f64,
) -> Result<f64> {
    if !(n > 0.0 && second > 0.0 && n.is_finite() && second.is_finite()) {
        return Err(Error::Argument(format!(
            "covariates must be positive and finite, got ({n}, {second})"
        )));
    }
    Ok(Law::new(kind, theta, factors)?.eval(n, second))
}

/// `ln L_i − ln L̂_i` for every row.
pub fn log_residuals(law: &Law, points: &FitPoints) -> Vec<f64> {
    points
        .rows()
        .iter()
        .map(|p| p.log_loss - law.ln_eval_log(p.log_n, p.log_d))
        .collect()
}

/// `∂ ln L̂ / ∂p` for every free parameter `p` (see [`Law::free_names`]).
pub fn analytic_gradient(law: &Law, point: &LogPoint) -> Vec<f64> {
    let (log_n, log_x) = (point.log_n, point.log_d);
    let (ta, tb, e) = law.terms_at_log(log_n, log_x);
    let l = ta + tb + e;
    match law {
        Law::Chinchilla(_) => vec![
            ta / l,
            -log_n * ta / l,
            tb / l,
            -log_x * tb / l,
            1.0 / l,
        ],
        Law::Rho { theta: t, .. } => vec![-t.alpha * ta / l, -t.beta * tb / l],
        Law::DataEfficiency(p) => vec![
            tb / l,
            -(log_x - p.s_opt.ln()) * tb / l,
            1.0 / l,
            p.beta * tb / l,
        ],
    }
}

/// Box constraints used when fitting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.lo, self.hi)
    }
}

/// Parameter bounds in natural units. `E` is bounded relative to the
/// smallest observed loss: `[e_lo_fraction·min L, min L]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LawBounds {
    pub a: Interval,
    pub alpha: Interval,
    pub b: Interval,
    pub beta: Interval,
    pub e_lo_fraction: f64,
    pub rho: Interval,
}

impl Default for LawBounds {
    fn default() -> Self {
        LawBounds {
            a: Interval::new(1e-3, 1e9),
            alpha: Interval::new(0.01, 1.5),
            b: Interval::new(1e-3, 1e9),
            beta: Interval::new(0.01, 1.5),
            e_lo_fraction: 0.1,
            rho: Interval::new(0.1, 10.0),
        }
    }
}

impl LawBounds {
    /// Bounds on the Chinchilla free coordinates `(ln A, α, ln B, β, E)`.
    pub fn chinchilla_free(&self, min_loss: f64) -> Vec<Interval> {
        vec![
            Interval::new(self.a.lo.ln(), self.a.hi.ln()),
            self.alpha,
            Interval::new(self.b.lo.ln(), self.b.hi.ln()),
            self.beta,
            Interval::new(self.e_lo_fraction * min_loss, min_loss),
        ]
    }

    /// Bounds on `(ln ρ_N, ln ρ_second)`.
    pub fn rho_free(&self) -> Vec<Interval> {
        let r = Interval::new(self.rho.lo.ln(), self.rho.hi.ln());
        vec![r, r]
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |i: &Interval| i.lo.is_finite() && i.hi.is_finite() && i.lo > 0.0 && i.lo <= i.hi;
        if !(ok(&self.a) && ok(&self.alpha) && ok(&self.b) && ok(&self.beta) && ok(&self.rho))
            || !(self.e_lo_fraction > 0.0 && self.e_lo_fraction < 1.0)
        {
            return Err(Error::Argument(format!("invalid bounds {self:?}")));
        }
        Ok(())
    }
}
