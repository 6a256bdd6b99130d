//! Constant debt-to-income strategies: their optimal cost `W`, the price
//! and devaluation they induce, and the two thresholds that organize the
//! deterministic construction.
//!
//! Holding the DTI ratio frozen at `x` forever is the simplest admissible
//! policy. Freezing `x` ties the repayment fraction to the devaluation
//! rate through
//!
//! ```text
//! (r+λ)(r−μ)·x = (r+λ+v)·u,
//! ```
//!
//! and lenders price the bond of such a borrower at `p = (r+λ)/(r+λ+v)`.
//! Optimizing the devaluation rate trades devaluation cost against cheaper
//! repayment: `v_c(x)` is the minimizer of the induced running cost,
//! `p_c(x)` the associated price. `v_c` is zero up to a threshold `x_c`
//! (so `p_c = 1` there) and positive beyond it.
//!
//! The benchmark graph the backward arc construction glues to is
//!
//! ```text
//! W(x) = h_max(x, p_c(x)) / r,
//! ```
//!
//! the discounted maximum of the Hamiltonian at the constant-strategy
//! price. Below the smaller threshold `x♭` — where `x·L'((r−μ)x)` is still
//! under the marginal devaluation cost `c'(0)` — the maximizing controls
//! are `u = (r−μ)x`, `v = 0`, and `W` reduces to the closed form
//! `L((r−μ)x)/r`. Between `x♭` and `x_c` the running devaluation control at
//! the branch point is already active even though the hold-`x` optimum
//! `v_c` is still zero, so `W` runs strictly below the closed form there.
//!
//! `w_prime` reports the slope `(r−μ)/r · p_c(x) · L'(p_c(x)(r−μ)x)`
//! evaluated at the hold-`x` controls. Its defining property, checked as a
//! module invariant, is that it stays strictly below the branch point
//! `ξ♯(x, p_c(x))`: a backward arc restarted just under the graph of `W`
//! therefore detaches downward instead of sliding along it. On `[0, x♭]`
//! this slope is exactly `W'`; past `x♭` it is the reported, contractual
//! slope of the graph (the pointwise derivative of `W` would be evaluated
//! at the branch-point controls instead).

use crate::hamiltonian::{BranchError, Model};
use crate::params::ParamError;
use crate::roots::{bisect_newton, golden_min, TOL_ROOT};
use serde::{Deserialize, Serialize};

/// Geometric-growth cap for the devaluation bracket in the `v_c` search.
const V_CAP: f64 = 1e12;

/// The optimal constant strategy at one DTI level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantStrategyProfile {
    /// DTI level being held.
    pub x: f64,
    /// Discounted cost `W(x)` of the optimal constant strategy; `+∞` when
    /// holding `x` is infeasible.
    pub w: f64,
    /// Bond price `p_c(x) = (r+λ)/(r+λ+v_c)` induced by the strategy.
    pub p_c: f64,
    /// Optimal constant devaluation rate `v_c(x)`.
    pub v_c: f64,
    /// Repayment fraction `u_c = (r+λ)(r−μ)x/(r+λ+v_c)` that freezes `x`.
    pub u_c: f64,
    /// `false` when no devaluation rate under the cap keeps `u_c < 1`; the
    /// deterministic solver treats the graph of `W` as absent there.
    pub feasible: bool,
}

/// Failures of the constant-strategy layer.
#[derive(Debug, Clone, thiserror::Error)]
pub enum ConstantError {
    #[error(
        "no devaluation rate below the cap {v_max} keeps the repayment \
         fraction below 1 at x = {x}: holding this DTI level is infeasible"
    )]
    Infeasible { x: f64, v_max: f64 },
    #[error(
        "first-order condition for v_c at x = {x} has no root below the \
         bracket cap {cap:.1e}"
    )]
    NoOptimalDevaluation { x: f64, cap: f64 },
    #[error(transparent)]
    Branch(#[from] BranchError),
}

/// Constant-strategy evaluations over a fixed deterministic model (`σ = 0`;
/// the benchmark `W` is only defined in that regime). Pure and thread-safe.
#[derive(Debug, Clone, Copy)]
pub struct ConstantStrategies {
    model: Model,
}

impl ConstantStrategies {
    /// Wrap a model, insisting on the deterministic regime.
    pub fn new(model: Model) -> Result<Self, ParamError> {
        model.params.validate_deterministic()?;
        Ok(ConstantStrategies { model })
    }

    /// The underlying model.
    pub fn model(&self) -> &Model {
        &self.model
    }

    /// `(r+λ)(r−μ)x`: freezing `x` requires `u = hold_budget/(r+λ+v)`.
    #[inline]
    fn hold_budget(&self, x: f64) -> f64 {
        let q = &self.model.params;
        (q.r + q.lambda) * (q.r - q.mu) * x
    }

    /// First-order residual of the hold-`x` cost in `v`:
    /// `g(v) = c'(v)·(r+λ+v) − u·L'(u)` with `u = hold_budget/(r+λ+v)`.
    /// Strictly increasing wherever `u < 1`.
    fn foc(&self, x: f64, v: f64) -> f64 {
        let rl = self.model.params.r + self.model.params.lambda;
        let u = self.hold_budget(x) / (rl + v);
        self.model.costs.deriv_c(v) * (rl + v) - u * self.model.costs.deriv_l(u)
    }

    /// Derivative of [`Self::foc`] in `v` (positive on the search domain).
    fn foc_deriv(&self, x: f64, v: f64) -> f64 {
        let costs = &self.model.costs;
        let rl = self.model.params.r + self.model.params.lambda;
        let u = self.hold_budget(x) / (rl + v);
        costs.deriv2_c(v) * (rl + v)
            + costs.deriv_c(v)
            + u * (costs.deriv_l(u) + u * costs.deriv2_l(u)) / (rl + v)
    }

    /// Optimal constant devaluation rate `v_c(x)`: zero up to `x_c`, and
    /// beyond it the unique positive root of the first-order condition
    /// `c'(v)(r+λ+v) = u·L'(u)`, found by bracketing bisection with
    /// safeguarded Newton refinement.
    pub fn v_c(&self, x: f64) -> Result<f64, ConstantError> {
        debug_assert!(x >= 0.0, "DTI level must be nonnegative");
        let q = &self.model.params;
        let rl = q.r + q.lambda;
        // u(v) < 1 requires v > hold_budget − (r+λ).
        let v_lo = (self.hold_budget(x) - rl).max(0.0);
        if v_lo >= q.v_max {
            return Err(ConstantError::Infeasible { x, v_max: q.v_max });
        }
        if v_lo == 0.0 && self.foc(x, 0.0) >= 0.0 {
            return Ok(0.0);
        }
        // The residual is −∞ at v_lo (u → 1) and +∞ at the cap (finite
        // family) or for v large (quadratic family): bracket and bisect.
        let hi = if q.v_max.is_finite() {
            q.v_max
        } else {
            let mut hi = (2.0 * v_lo).max(1.0);
            while self.foc(x, hi) <= 0.0 {
                hi *= 2.0;
                if hi > V_CAP {
                    return Err(ConstantError::NoOptimalDevaluation { x, cap: V_CAP });
                }
            }
            hi
        };
        bisect_newton(
            |v| self.foc(x, v),
            |v| self.foc_deriv(x, v),
            v_lo,
            hi,
            TOL_ROOT,
        )
        .ok_or(ConstantError::NoOptimalDevaluation { x, cap: V_CAP })
    }

    /// Constant-strategy bond price `p_c(x) = (r+λ)/(r+λ+v_c(x))`; exactly
    /// `1` wherever `v_c = 0`.
    pub fn p_c(&self, x: f64) -> Result<f64, ConstantError> {
        let rl = self.model.params.r + self.model.params.lambda;
        Ok(rl / (rl + self.v_c(x)?))
    }

    /// Optimal constant-strategy cost `W(x) = h_max(x, p_c(x)) / r`.
    pub fn w(&self, x: f64) -> Result<f64, ConstantError> {
        if x == 0.0 {
            return Ok(0.0);
        }
        let p = self.p_c(x)?;
        Ok(self.model.h_max(x, p)? / self.model.params.r)
    }

    /// Reported slope of the `W` graph,
    /// `(r−μ)/r · p_c(x) · L'(p_c(x)(r−μ)x)`, evaluated at the hold-`x`
    /// controls (see the module docs for its exact/reported split at `x♭`).
    pub fn w_prime(&self, x: f64) -> Result<f64, ConstantError> {
        let q = &self.model.params;
        let p = self.p_c(x)?;
        let rm = q.r - q.mu;
        Ok(rm / q.r * p * self.model.costs.deriv_l(p * rm * x))
    }

    /// Threshold `x_c`: the devaluation-activation level for the hold-`x`
    /// optimum, i.e. the unique root of
    /// `(r+λ)·c'(0) = (r−μ)x·L'((r−μ)x)`; zero when `c'(0) = 0`.
    pub fn x_c(&self) -> f64 {
        let q = &self.model.params;
        let rl = q.r + q.lambda;
        let b0 = self.model.costs.deriv_c(0.0);
        self.activation_root(|y, dl| rl * b0 - y * dl, q.r - q.mu, b0)
    }

    /// Threshold `x♭ < x_c`: where the branch-point devaluation control at
    /// price 1 activates, i.e. the unique root of
    /// `c'(0) = x·L'((r−μ)x)`; zero when `c'(0) = 0`.
    pub fn x_flat(&self) -> f64 {
        let q = &self.model.params;
        let b0 = self.model.costs.deriv_c(0.0);
        let rm = q.r - q.mu;
        self.activation_root(|y, dl| b0 - (y / rm) * dl, rm, b0)
    }

    /// Root of a residual of the form `const − φ((r−μ)x)·L'((r−μ)x)` on
    /// `(0, 1/(r−μ))`, where the product is strictly increasing in `x` and
    /// blows up at the right end. `residual` receives `y = (r−μ)x` and
    /// `L'(y)`.
    fn activation_root(&self, residual: impl Fn(f64, f64) -> f64, rm: f64, b0: f64) -> f64 {
        if b0 == 0.0 {
            return 0.0;
        }
        let costs = self.model.costs;
        let f = |x: f64| residual(rm * x, costs.deriv_l(rm * x));
        bisect_newton(f, |_| f64::NAN, 0.0, 1.0 / rm, TOL_ROOT)
            .expect("activation residual goes from c'(0) > 0 to -inf on (0, 1/(r-mu))")
    }

    /// Independent route to `W(x)`: one-dimensional minimization, over the
    /// devaluation rate, of the running cost `L(u(v)) + c(v)` along the
    /// stationarity line `u(v) = x((λ+r) − (λ+μ+v)·p_c(x))` at the frozen
    /// price `p_c(x)`. Agrees with [`Self::w`] because the line's interior
    /// minimizer satisfies exactly the branch-point conditions; used as the
    /// cross-check route in tests and acceptance runs.
    pub fn w_by_direct_minimization(&self, x: f64) -> Result<f64, ConstantError> {
        if x == 0.0 {
            return Ok(0.0);
        }
        let q = &self.model.params;
        let p = self.p_c(x)?;
        let rl = q.r + q.lambda;
        let lm = q.lambda + q.mu;
        let costs = self.model.costs;
        let running = |v: f64| {
            let u = (x * (rl - (lm + v) * p)).max(0.0);
            costs.cost_l(u) + costs.cost_c(v)
        };
        // u(v) hits 0 at v = (λ+r)/p − (λ+μ) and only c grows past it.
        let hi = (rl / p - lm).max(0.0).min(q.v_max);
        let (_, interior) = golden_min(running, 0.0, hi, 1e-10);
        Ok(interior.min(running(0.0)) / q.r)
    }

    /// Total profile at `x`: never errors; infeasible levels come back
    /// flagged with `w = +∞` and the boundary controls at the cap.
    pub fn profile(&self, x: f64) -> ConstantStrategyProfile {
        let q = &self.model.params;
        let rl = q.r + q.lambda;
        let evaluated = self.v_c(x).and_then(|v| {
            let p = rl / (rl + v);
            let w = if x == 0.0 {
                0.0
            } else {
                self.model.h_max(x, p)? / q.r
            };
            Ok((v, p, w))
        });
        match evaluated {
            Ok((v_c, p_c, w)) => ConstantStrategyProfile {
                x,
                w,
                p_c,
                v_c,
                u_c: self.hold_budget(x) / (rl + v_c),
                feasible: true,
            },
            Err(_) => ConstantStrategyProfile {
                x,
                w: f64::INFINITY,
                p_c: if q.v_max.is_finite() {
                    rl / (rl + q.v_max)
                } else {
                    0.0
                },
                v_c: q.v_max,
                u_c: self.hold_budget(x) / (rl + q.v_max),
                feasible: false,
            },
        }
    }
}
