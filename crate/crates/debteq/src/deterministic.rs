//! Deterministic-regime equilibrium: piecewise construction of the value
//! function, bond price, and feedback controls by backward integration of
//! the lower-branch characteristic system, with restart rules at contacts
//! with the constant-strategy cost curve.
//!
//! # Construction overview
//!
//! With `σ = 0` the equilibrium conditions reduce, between contact points,
//! to a two-dimensional system for the value `Z` and the price `q` along
//! decreasing debt ratio `x`:
//!
//! ```text
//! Z'(x) = F⁻(x, Z, q)    (lower solution branch of H(x, ·, q) = r·Z)
//! q'(x) = G⁻(x, Z, q)    (price transport along the same branch)
//! ```
//!
//! Arcs start at the bankruptcy boundary `(x*, B, θ(x*))` and run backward
//! until one of:
//!
//! * contact with the constant-strategy cost curve `W` ([`StopCause::TouchedHoldCurve`]);
//! * slope degeneracy `H_ξ → 0`, i.e. the branch merges with the
//!   feasibility ridge ([`StopCause::SlopeDegenerate`]);
//! * crossing of the ridge `h_max(x, q) = r·Z`, after which the branch
//!   equation has no solution ([`StopCause::CrossedRidge`]);
//! * arrival at the origin ([`StopCause::ReachedOrigin`]).
//!
//! A contact at `x₀` above the flat threshold `x♭` restarts strictly below
//! the curve with a vanishing-offset ladder `ε_k = 2⁻ᵏ·10⁻²`, accepting the
//! first offset whose last three runs pairwise agree in sup norm; a contact
//! at `x₀ ≤ x♭` restarts exactly on the curve at unit price, where the arc
//! provably detaches downward and runs to the origin. The assembled profile
//! is certified: boundary data, monotonicity, residuals of both equations at
//! interior dense-output samples, contact geometry, price bounds, a Hölder
//! modulus on the branch slope, and a separation bound that caps the number
//! of arcs. An independent dynamic-programming check rolls out closed-loop
//! and perturbed open-loop controls against the frozen price field.

use std::fmt;

use serde::Serialize;

use crate::constant::{ConstantError, ConstantStrategies};
use crate::hamiltonian::{Branch, BranchError, Model};
use crate::ode::{
    integrate, EventDirection, EventSpec, OdeError, OdeOptions, OdeSolution, RhsRejection,
    StopReason, TOL_ODE,
};
use crate::params::ParamError;
use crate::roots::bisect;

/// Slope-degeneracy threshold: an arc terminates once `H_ξ` at the branch
/// solution falls below this value, after which the price slope `G⁻` is no
/// longer reliably computable.
pub const TOL_SLOPE: f64 = 1e-8;

/// Base offset of the restart ladder; run `k` starts `2⁻ᵏ` times this far
/// below the hold curve.
pub const LADDER_BASE_OFFSET: f64 = 1e-2;

/// Maximum number of offset halvings before the ladder gives up.
pub const LADDER_MAX_HALVINGS: u32 = 20;

/// Pairwise sup-norm agreement (value and price, on the overlap grid)
/// required of three consecutive ladder runs before the finest is accepted.
pub const LADDER_AGREEMENT_TOL: f64 = 1e-6;

/// Largest admissible `|Z|` where an arc is classified as having reached the
/// origin; the exact boundary condition is `Z(0) = 0`.
pub const TOL_ORIGIN_VALUE: f64 = 1e-9;

/// Hard cap on the number of arcs, independent of the theoretical
/// separation bound.
const MAX_ARCS: usize = 64;

/// Nodes of the cubic-spline table for the hold curve, used only for cheap
/// event detection; every accepted contact is re-polished against the exact
/// curve.
const W_TABLE_NODES: usize = 10_001;

/// Points of the uniform overlap grid on which ladder runs are compared.
const LADDER_GRID: usize = 512;

/// A polished contact candidate is accepted outright when the exact curve
/// gap at the candidate cannot be bracketed but is already below this.
const TOUCH_ACCEPT_TOL: f64 = 1e-8;

/// Interior dense-output points sampled per accepted integrator step when
/// rendering an arc.
const SAMPLES_PER_STEP: usize = 3;

// ---------------------------------------------------------------------------
// Errors and stop classification
// ---------------------------------------------------------------------------

/// Why a backward arc stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StopCause {
    /// The arc value met the constant-strategy cost curve from below.
    TouchedHoldCurve,
    /// `H_ξ` at the branch solution fell below [`TOL_SLOPE`].
    SlopeDegenerate,
    /// The level `r·Z` crossed the feasibility maximum `h_max(x, q)`.
    CrossedRidge,
    /// Integration reached `x = 0` (or the origin-classification region).
    ReachedOrigin,
}

/// Failures of the deterministic construction.
#[derive(Debug, thiserror::Error)]
pub enum DetError {
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error("hold-curve evaluation failed: {0}")]
    HoldCurve(#[from] ConstantError),
    #[error(transparent)]
    Branch(#[from] BranchError),
    #[error("model fails a construction precondition: {0}")]
    Precondition(Box<PreconditionReport>),
    #[error("backward integration from x = {x_hi} failed: {source}")]
    Integration {
        x_hi: f64,
        #[source]
        source: OdeError,
    },
    #[error("invalid backward-arc start: {0}")]
    Domain(String),
    #[error(
        "restart ladder below x0 = {x0} failed to reach pairwise agreement \
         {tol:.1e} within {runs} runs (last sup gaps: value {gap_value:.3e}, \
         price {gap_price:.3e})"
    )]
    LadderNotConverged {
        x0: f64,
        tol: f64,
        runs: usize,
        gap_value: f64,
        gap_price: f64,
    },
    #[error("equilibrium assembly produced {got} arcs, exceeding the cap of {cap}")]
    TooManyArcs { got: usize, cap: usize },
    #[error("equilibrium construction failed: {0}")]
    Construction(String),
}

// ---------------------------------------------------------------------------
// Hold-curve table (cubic spline for event detection)
// ---------------------------------------------------------------------------

/// Natural cubic spline on uniform nodes. Approximation-only: the solver
/// uses it for cheap event tests and re-polishes every accepted contact
/// against the exact curve.
#[derive(Debug, Clone)]
struct UniformSpline {
    x0: f64,
    dx: f64,
    y: Vec<f64>,
    /// Second derivatives at the nodes (natural boundary: zero at the ends).
    m: Vec<f64>,
}

impl UniformSpline {
    /// Build from values on `n` uniform nodes over `[x0, x1]`, solving the
    /// tridiagonal second-derivative system by a Thomas sweep.
    fn build(x0: f64, x1: f64, y: Vec<f64>) -> Self {
        let n = y.len();
        assert!(n >= 3 && x1 > x0, "spline needs three or more nodes");
        let dx = (x1 - x0) / (n - 1) as f64;
        let mut m = vec![0.0; n];
        // Interior unknowns m[1..n-1]: sub/super-diagonal 1, diagonal 4,
        // right-hand side 6·(second difference)/dx².
        let k = n - 2;
        if k > 0 {
            let mut diag = vec![4.0; k];
            let mut rhs = vec![0.0; k];
            for i in 0..k {
                rhs[i] = 6.0 * (y[i + 2] - 2.0 * y[i + 1] + y[i]) / (dx * dx);
            }
            for i in 1..k {
                let w = 1.0 / diag[i - 1];
                diag[i] -= w;
                rhs[i] -= w * rhs[i - 1];
            }
            m[k] = rhs[k - 1] / diag[k - 1];
            for i in (0..k - 1).rev() {
                m[i + 1] = (rhs[i] - m[i + 2]) / diag[i];
            }
        }
        UniformSpline { x0, dx, y, m }
    }

    fn eval(&self, x: f64) -> f64 {
        let n = self.y.len();
        let s = ((x - self.x0) / self.dx).floor();
        let i = (s.max(0.0) as usize).min(n - 2);
        let t = ((x - self.x0) / self.dx - i as f64).clamp(0.0, 1.0);
        let (y0, y1) = (self.y[i], self.y[i + 1]);
        let (m0, m1) = (self.m[i], self.m[i + 1]);
        let u = 1.0 - t;
        y0 * u + y1 * t + self.dx * self.dx / 6.0 * ((u * u * u - u) * m0 + (t * t * t - t) * m1)
    }
}

// ---------------------------------------------------------------------------
// Arcs
// ---------------------------------------------------------------------------

/// One dense-output sample along a backward arc, with the slopes used for
/// independent residual certification and the feedback controls implied by
/// the sampled state.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ArcSample {
    /// Debt ratio.
    pub x: f64,
    /// Value `Z(x)`.
    pub value: f64,
    /// Price `q(x)`.
    pub price: f64,
    /// `Z'(x)` from the continuous extension of the integrator.
    pub value_slope: f64,
    /// `q'(x)` from the continuous extension (exactly zero on frozen-price
    /// arcs).
    pub price_slope: f64,
    /// Repayment fraction `u*(Z'(x), q(x))`.
    pub repayment: f64,
    /// Devaluation rate `v*(x, Z'(x))`.
    pub devaluation: f64,
}

/// One backward arc of the characteristic system, with its dense solution
/// for later evaluation.
#[derive(Debug)]
pub struct BackwardArc {
    /// Upper end of the arc's span (start of the backward integration).
    pub x_hi: f64,
    /// Lower end of the span (where the stop fired, after contact polish).
    pub x_lo: f64,
    /// Value and price at the upper end.
    pub value_hi: f64,
    pub price_hi: f64,
    /// Value and price at the lower end.
    pub value_lo: f64,
    pub price_lo: f64,
    /// Why the arc stopped.
    pub stop: StopCause,
    /// `true` on terminal arcs integrated at frozen unit price.
    pub frozen_price: bool,
    /// Dense samples in decreasing `x`, endpoint included.
    pub samples: Vec<ArcSample>,
    /// Work counters of the underlying integration.
    pub n_rhs_evals: usize,
    pub n_rejected_steps: usize,
    sol: OdeSolution,
}

impl BackwardArc {
    /// Evaluate `(Z, q)` at `x`, clamped into the arc's span.
    pub fn eval(&self, x: f64) -> (f64, f64) {
        let x = x.clamp(self.x_lo, self.x_hi);
        let mut buf = [0.0; 2];
        self.sol.eval_into(x, &mut buf);
        (buf[0], if self.frozen_price { 1.0 } else { buf[1] })
    }

    /// Evaluate `(Z', q')` at `x`, clamped into the arc's span.
    pub fn eval_slope(&self, x: f64) -> (f64, f64) {
        let x = x.clamp(self.x_lo, self.x_hi);
        let mut buf = [0.0; 2];
        self.sol.eval_deriv_into(x, &mut buf);
        (buf[0], if self.frozen_price { 0.0 } else { buf[1] })
    }
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

/// Data for the three standing preconditions of the backward construction:
/// the hold curve must clear the bankruptcy cost at `x*`, the salvage rate
/// must not exceed the hold price, and the devaluation response to the
/// starting slope must leave the salvage rate strictly below the implied
/// price.
#[derive(Debug, Clone, Serialize)]
pub struct PreconditionReport {
    /// `W(x*)`.
    pub hold_cost_at_cap: f64,
    /// Bankruptcy cost `B`.
    pub bankruptcy_cost: f64,
    /// `W(x*) − B`; must be strictly positive.
    pub value_margin: f64,
    /// `p_c(x*)`.
    pub hold_price_at_cap: f64,
    /// `θ(x*)`.
    pub salvage_at_cap: f64,
    /// `p_c(x*) − θ(x*)`; must be nonnegative.
    pub price_margin: f64,
    /// Starting slope `F⁻(x*, B, θ(x*))` when the branch equation is
    /// solvable at the boundary data.
    pub start_slope: Option<f64>,
    /// Devaluation response `v*(x*, F⁻)` to the starting slope.
    pub start_devaluation: Option<f64>,
    /// Implied response price `(r+λ)/(r+λ+v*)`.
    pub response_price: Option<f64>,
    /// Response price minus `θ(x*)`; must be strictly positive.
    pub response_margin: Option<f64>,
    /// All conditions hold.
    pub ok: bool,
    /// Human-readable failure descriptions, empty when `ok`.
    pub failures: Vec<String>,
}

impl fmt::Display for PreconditionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "hold cost W(x*) = {:.6} vs bankruptcy cost B = {:.6} (margin {:.3e}); \
             hold price p_c(x*) = {:.6} vs salvage {:.6} (margin {:.3e})",
            self.hold_cost_at_cap,
            self.bankruptcy_cost,
            self.value_margin,
            self.hold_price_at_cap,
            self.salvage_at_cap,
            self.price_margin,
        )?;
        if let (Some(v), Some(m)) = (self.start_devaluation, self.response_margin) {
            write!(f, "; response devaluation {:.6} (margin {:.3e})", v, m)?;
        }
        if !self.failures.is_empty() {
            write!(f, "; failures: {}", self.failures.join("; "))?;
        }
        Ok(())
    }
}

/// Separation bound for restarts above the flat threshold: a lower bound on
/// the distance between a contact point and the stop of the restarted arc,
/// hence an upper bound on the number of arcs.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SeparationBound {
    /// Infimum over `[x♭, x₀]` of the gap between the branch-point slope at
    /// the hold price and the reported hold-curve slope.
    pub slope_gap_min: f64,
    /// Hölder constant of the branch slope at the flat threshold and the
    /// boundary salvage rate (the price floor along equilibrium arcs).
    pub holder: f64,
    /// Reported hold-curve slope at the restart point.
    pub slope_at_restart: f64,
    /// The bound itself.
    pub value: f64,
}

/// Outcome of the vanishing-offset restart ladder at one contact point.
#[derive(Debug, Clone, Serialize)]
pub struct LadderReport {
    /// Contact point the ladder restarts below.
    pub x0: f64,
    /// Accepted halving index `k` (offset `2⁻ᵏ·`[`LADDER_BASE_OFFSET`]).
    pub accepted_halvings: u32,
    /// Accepted offset below the hold curve.
    pub offset: f64,
    /// Sup gap in value over the final three runs on the overlap grid.
    pub sup_gap_value: f64,
    /// Sup gap in price over the final three runs.
    pub sup_gap_price: f64,
    /// Number of ladder runs performed.
    pub n_runs: usize,
    /// Stop location of each run, in ladder order.
    pub stops: Vec<f64>,
    /// Separation bound at this restart.
    pub separation: SeparationBound,
}

/// A restarted arc below a contact point, with the ladder data when the
/// restart used one.
#[derive(Debug)]
pub struct Restart {
    pub arc: BackwardArc,
    /// `None` for frozen-price restarts at or below the flat threshold.
    pub ladder: Option<LadderReport>,
}

/// Invariants measured on the assembled equilibrium.
#[derive(Debug, Clone, Serialize)]
pub struct CertificationReport {
    /// `|V(0)|`.
    pub origin_value: f64,
    /// `|V(x*) − B|`.
    pub boundary_value_gap: f64,
    /// `|p(x*) − θ(x*)|`.
    pub boundary_price_gap: f64,
    /// Largest value jump across interior breakpoints.
    pub max_value_jump: f64,
    /// Largest accepted ladder offset (allowance for the jump above).
    pub value_jump_allowance: f64,
    /// Value is nondecreasing on the certification grid.
    pub value_monotone: bool,
    /// Minimum over the grid of `W(x) − V(x)`; must be ≥ −1e−9.
    pub hold_curve_clearance: f64,
    /// Prices stay within `(0, 1]` (up to 1e−9) on the grid and samples.
    pub price_in_unit_interval: bool,
    /// Sup of `|r·Z − H(x, Z', q)|` over interior samples.
    pub max_value_residual: f64,
    /// Sup of `|H_ξ·q' − ((r+λ+v*)·q − (r+λ))| / (1 + |q'|)` over interior
    /// samples of free-price arcs (the defect is normalized by the local
    /// slope scale so boundary-layer samples are judged fairly).
    pub max_price_residual: f64,
    /// Minimum over samples of `h_max(x, q) − r·Z` (feasibility margin).
    pub min_ridge_margin: f64,
    /// Per interior breakpoint: branch-point slope at the hold price minus
    /// the reported hold-curve slope (must be strictly positive).
    pub contact_slope_gaps: Vec<f64>,
    /// Per interior breakpoint: incoming arc price minus the hold price
    /// (must be ≤ 0 up to tolerance).
    pub contact_price_excess: Vec<f64>,
    /// Max over sampled same-state pairs of `|ΔF⁻| / (C·√|ΔZ|)`; ≤ 1 when
    /// the Hölder modulus of the branch slope holds along the arcs.
    pub holder_ratio: f64,
    /// Number of interior breakpoints.
    pub interior_breakpoints: usize,
    /// Theoretical cap on interior breakpoints when a ladder ran
    /// (`1 + (x* − x♭)/separation`); `None` otherwise.
    pub breakpoint_bound: Option<f64>,
    /// All hard invariants hold.
    pub ok: bool,
    /// Human-readable failure descriptions, empty when `ok`.
    pub failures: Vec<String>,
}

/// Outcome of the independent dynamic-programming check: rollouts of the
/// state and discounted cost under the frozen equilibrium price field.
#[derive(Debug, Clone, Serialize)]
pub struct DynamicProgrammingReport {
    /// Rollout start.
    pub x0: f64,
    /// Equilibrium value at the start.
    pub value_at_x0: f64,
    /// `|rollout cost − V(x0)|` under the equilibrium feedback controls.
    pub feedback_gap: f64,
    /// Rollout cost minus `V(x0)` under zero controls (free fall); must be
    /// nonnegative.
    pub free_fall_slack: f64,
    /// Exit time of the free-fall trajectory through `x*`, when it exits.
    pub free_fall_exit_time: Option<f64>,
    /// `|x(T) − x0|` under the constant hold strategy at its own price.
    pub hold_state_drift: f64,
    /// `|rollout cost − W(x0)|` under the constant hold strategy.
    pub hold_cost_gap: f64,
    /// Number of random piecewise-constant control rollouts.
    pub n_random_controls: usize,
    /// Minimum over random rollouts of `cost − V(x0)`; must be ≥ −1e−6.
    pub min_random_slack: f64,
    /// All checks hold.
    pub ok: bool,
}

// ---------------------------------------------------------------------------
// Piecewise equilibrium
// ---------------------------------------------------------------------------

/// The assembled deterministic equilibrium: a descending chain of
/// breakpoints `x* = x_0 > x_1 > … > 0` and the backward arcs between them.
///
/// Conventions at a breakpoint `x_k`: the profile takes its values from the
/// incoming (upper) arc, so the price is the incoming arc's contact price
/// and the value equals the hold curve there; the restarted arc owns the
/// open interval below. Below the lowest arc sample the value is extended
/// linearly to `V(0) = 0` at unit price and zero controls.
#[derive(Debug)]
pub struct PiecewiseEquilibrium {
    model: Model,
    cs: ConstantStrategies,
    /// Descending: first is `x*`, last is `0`.
    pub breakpoints: Vec<f64>,
    /// `arcs[i]` spans `[breakpoints[i+1], breakpoints[i]]` (the last arc
    /// stops at its own `x_lo`, classified as the origin).
    pub arcs: Vec<BackwardArc>,
    /// Ladder data per arc (`None` for the first arc and frozen restarts).
    pub ladders: Vec<Option<LadderReport>>,
    /// Invariants measured at assembly.
    pub certification: CertificationReport,
    /// Total integrator work across all arcs (ladder runs included).
    pub n_rhs_evals: usize,
    pub n_rejected_steps: usize,
}

impl PiecewiseEquilibrium {
    /// Index of the arc owning `x` (the incoming arc at breakpoints).
    fn locate(&self, x: f64) -> usize {
        // arcs[i] owns [breakpoints[i+1], breakpoints[i]); ties at a
        // breakpoint go to the upper (incoming) arc.
        for i in 0..self.arcs.len() {
            if x >= self.breakpoints[i + 1] {
                return i;
            }
        }
        self.arcs.len() - 1
    }

    /// Equilibrium value `V(x)`, extended linearly below the lowest sample
    /// and clamped to the construction domain `[0, x*]`.
    pub fn value(&self, x: f64) -> f64 {
        let x = x.clamp(0.0, self.breakpoints[0]);
        let last = self.arcs.len() - 1;
        let terminal = &self.arcs[last];
        if x < terminal.x_lo {
            // Linear ramp through the origin.
            return terminal.value_lo * (x / terminal.x_lo);
        }
        let i = self.locate(x);
        self.arcs[i].eval(x).0
    }

    /// Equilibrium price `p(x)`; unit price below the lowest arc sample.
    pub fn price(&self, x: f64) -> f64 {
        let x = x.clamp(0.0, self.breakpoints[0]);
        let last = self.arcs.len() - 1;
        if x < self.arcs[last].x_lo {
            return 1.0;
        }
        let i = self.locate(x);
        self.arcs[i].eval(x).1
    }

    /// Feedback controls `(u(x), v(x))` implied by the local state and
    /// branch slope; zero below the lowest arc sample.
    pub fn controls(&self, x: f64) -> (f64, f64) {
        let x = x.clamp(0.0, self.breakpoints[0]);
        let last = self.arcs.len() - 1;
        if x < self.arcs[last].x_lo {
            return (0.0, 0.0);
        }
        let i = self.locate(x);
        let (z, q) = self.arcs[i].eval(x);
        match self.model.f_branch(x, z, q, Branch::Minus) {
            Ok(xi) => (self.model.u_star(xi, q), self.model.v_star(x, xi)),
            // At a degenerate or infeasible sample point fall back to the
            // stored slope, which tracks the branch solution to dense-output
            // accuracy.
            Err(_) => {
                let (dz, _) = self.arcs[i].eval_slope(x);
                (self.model.u_star(dz, q), self.model.v_star(x, dz))
            }
        }
    }

    /// The model this equilibrium was built for.
    pub fn model(&self) -> &Model {
        &self.model
    }

    /// The constant-strategy layer of the same model (exact hold-curve
    /// evaluations).
    pub fn hold_curve(&self) -> &ConstantStrategies {
        &self.cs
    }
}

// ---------------------------------------------------------------------------
// Solver
// ---------------------------------------------------------------------------

/// Deterministic-regime solver: validates the model, tabulates the hold
/// curve, and exposes arc integration, restarts, assembly, and the
/// dynamic-programming verifier.
#[derive(Debug)]
pub struct DetSolver {
    model: Model,
    cs: ConstantStrategies,
    w_table: UniformSpline,
}

impl DetSolver {
    /// Validate the deterministic regime and tabulate the hold curve on
    /// [`W_TABLE_NODES`] uniform nodes over `[0, x*]`.
    pub fn new(model: Model) -> Result<Self, DetError> {
        let cs = ConstantStrategies::new(model)?;
        let x_star = model.params.x_star;
        let mut y = Vec::with_capacity(W_TABLE_NODES);
        for i in 0..W_TABLE_NODES {
            let x = x_star * i as f64 / (W_TABLE_NODES - 1) as f64;
            y.push(cs.w(x)?);
        }
        let w_table = UniformSpline::build(0.0, x_star, y);
        Ok(DetSolver { model, cs, w_table })
    }

    /// The underlying model.
    pub fn model(&self) -> &Model {
        &self.model
    }

    /// The constant-strategy layer (exact hold-curve evaluations).
    pub fn hold_curve(&self) -> &ConstantStrategies {
        &self.cs
    }

    /// `x` below which an arc stop is classified as arrival at the origin.
    fn origin_x_tol(&self) -> f64 {
        1e-6 * self.model.params.x_star.max(1.0)
    }

    /// Check the standing preconditions of the backward construction.
    pub fn check_preconditions(&self) -> PreconditionReport {
        let q = &self.model.params;
        let b = q.bankruptcy_cost;
        let theta = q.theta_at_xstar();
        let mut failures = Vec::new();

        let (w_cap, p_cap) = match (self.cs.w(q.x_star), self.cs.p_c(q.x_star)) {
            (Ok(w), Ok(p)) => (w, p),
            (w, p) => {
                let err = w.err().or(p.err()).expect("one side failed");
                failures.push(format!("hold curve undefined at x*: {err}"));
                (f64::NAN, f64::NAN)
            }
        };
        let value_margin = w_cap - b;
        if !(value_margin > 0.0) {
            failures.push(format!(
                "hold cost W(x*) = {w_cap:.6} must strictly exceed the bankruptcy cost {b:.6}"
            ));
        }
        let price_margin = p_cap - theta;
        if !(price_margin >= 0.0) {
            failures.push(format!(
                "salvage rate {theta:.6} exceeds the hold price p_c(x*) = {p_cap:.6}"
            ));
        }

        let mut start_slope = None;
        let mut start_devaluation = None;
        let mut response_price = None;
        let mut response_margin = None;
        match self.model.f_branch(q.x_star, b, theta, Branch::Minus) {
            Ok(xi) => {
                let v = self.model.v_star(q.x_star, xi);
                let rl = q.r + q.lambda;
                let resp = rl / (rl + v);
                let margin = resp - theta;
                start_slope = Some(xi);
                start_devaluation = Some(v);
                response_price = Some(resp);
                response_margin = Some(margin);
                if !(margin > 0.0) {
                    failures.push(format!(
                        "devaluation response price {resp:.6} must strictly exceed \
                         the salvage rate {theta:.6}"
                    ));
                }
            }
            Err(err) => {
                failures.push(format!(
                    "branch equation unsolvable at the boundary data: {err}"
                ));
            }
        }

        PreconditionReport {
            hold_cost_at_cap: w_cap,
            bankruptcy_cost: b,
            value_margin,
            hold_price_at_cap: p_cap,
            salvage_at_cap: theta,
            price_margin,
            start_slope,
            start_devaluation,
            response_price,
            response_margin,
            ok: failures.is_empty(),
            failures,
        }
    }

    /// Exact hold-curve value, for contact polish and certification.
    fn exact_w(&self, x: f64) -> Result<f64, DetError> {
        Ok(self.cs.w(x)?)
    }

    /// Integrate one backward arc from `(x_hi, value_hi, price_hi)` toward
    /// the origin, stopping at hold-curve contact, slope degeneracy, ridge
    /// crossing, or the origin. The returned arc's lower endpoint is the
    /// polished stop.
    pub fn integrate_backward(
        &self,
        x_hi: f64,
        value_hi: f64,
        price_hi: f64,
    ) -> Result<BackwardArc, DetError> {
        let q = &self.model.params;
        if !(x_hi > 0.0 && x_hi <= q.x_star * (1.0 + 1e-12)) {
            return Err(DetError::Domain(format!(
                "arc start x = {x_hi} must lie in (0, x*]"
            )));
        }
        if !(price_hi > 0.0 && price_hi <= 1.0) {
            return Err(DetError::Domain(format!(
                "arc start price {price_hi} must lie in (0, 1]"
            )));
        }
        let h_max = self.model.h_max(x_hi, price_hi)?;
        let level = q.r * value_hi;
        if !(level > 0.0) {
            return Err(DetError::Domain(format!(
                "arc start value {value_hi} must be strictly positive"
            )));
        }
        if level > h_max * (1.0 + 1e-9) + 1e-300 {
            return Err(DetError::Domain(format!(
                "arc start level r·Z = {level:.6e} exceeds the feasibility \
                 maximum h_max = {h_max:.6e} at (x = {x_hi}, p = {price_hi})"
            )));
        }
        self.run_arc(x_hi, value_hi, price_hi, false)
    }

    /// Shared arc driver. With `frozen_price` the price component is pinned
    /// (slope zero) and the branch is evaluated without the price-transport
    /// division, which is what makes starts exactly on the hold curve /
    /// feasibility ridge integrable.
    fn run_arc(
        &self,
        x_hi: f64,
        value_hi: f64,
        price_hi: f64,
        frozen_price: bool,
    ) -> Result<BackwardArc, DetError> {
        let model = &self.model;

        let rhs = move |x: f64, y: &[f64], dy: &mut [f64]| -> Result<(), RhsRejection> {
            // The backward system degenerates smoothly at the origin: the
            // value, its slope, and the price slope all vanish there. Stage
            // evaluations of the final step may probe x = 0 exactly, and the
            // value component may wiggle below zero once it falls under the
            // absolute tolerance; both get the exact limiting dynamics.
            if x <= 0.0 {
                dy[0] = 0.0;
                dy[1] = 0.0;
                return Ok(());
            }
            let z = y[0].max(0.0);
            let p = y[1].min(1.0);
            if !(p > 0.0) {
                return Err(RhsRejection(format!("price {p} left (0, 1] at x = {x}")));
            }
            if y[0] <= 0.0 {
                // Branch solution at the zero level is ξ = 0; the price
                // still relaxes toward par.
                let hxi = model.h_xi(x, 0.0, p);
                if !(hxi > 0.0) {
                    return Err(RhsRejection(format!(
                        "degenerate slope at the zero level (x = {x})"
                    )));
                }
                let rl = model.params.r + model.params.lambda;
                dy[0] = 0.0;
                dy[1] = if frozen_price {
                    0.0
                } else {
                    rl * (p - 1.0) / hxi
                };
                return Ok(());
            }
            if frozen_price {
                let bp = model
                    .xi_sharp(x, p)
                    .map_err(|e| RhsRejection(e.to_string()))?;
                let f = model
                    .f_branch_at(x, z, p, Branch::Minus, &bp)
                    .map_err(|e| RhsRejection(e.to_string()))?;
                dy[0] = f;
                dy[1] = 0.0;
            } else {
                let b = model
                    .branch_minus_rhs(x, z, p)
                    .map_err(|e| RhsRejection(e.to_string()))?;
                dy[0] = b.f;
                dy[1] = b.g;
            }
            Ok(())
        };

        // Event 0: value meets the tabulated hold curve from below.
        let touch = EventSpec {
            g: Box::new(|x: f64, y: &[f64]| y[0] - self.w_table.eval(x)),
            terminal: true,
            direction: EventDirection::Rising,
        };
        // Event 1: slope degeneracy H_ξ ≤ TOL_SLOPE at the branch solution.
        let slope = EventSpec {
            g: Box::new(move |x: f64, y: &[f64]| {
                if x <= 0.0 {
                    return -TOL_SLOPE;
                }
                let (z, p) = (y[0].max(0.0), y[1].min(1.0));
                if !(p > 0.0) {
                    return -TOL_SLOPE;
                }
                let res = model
                    .xi_sharp(x, p)
                    .and_then(|bp| model.f_branch_at(x, z, p, Branch::Minus, &bp));
                match res {
                    Ok(xi) => model.h_xi(x, xi, p) - TOL_SLOPE,
                    Err(_) => -TOL_SLOPE,
                }
            }),
            terminal: true,
            direction: EventDirection::Falling,
        };
        // Event 2: the level crosses the feasibility ridge.
        let ridge = EventSpec {
            g: Box::new(move |x: f64, y: &[f64]| {
                if x <= 0.0 {
                    // h_max vanishes at the origin.
                    return -model.params.r * y[0].max(0.0);
                }
                let p = y[1].min(1.0);
                if !(p > 0.0) {
                    return -1.0;
                }
                match model.xi_sharp(x, p) {
                    Ok(bp) => bp.h_max - model.params.r * y[0].max(0.0),
                    Err(_) => -1.0,
                }
            }),
            terminal: true,
            direction: EventDirection::Falling,
        };
        let events = vec![touch, slope, ridge];

        let opts = OdeOptions {
            rel_tol: TOL_ODE,
            abs_tol: 1e-12,
            max_steps: 200_000,
            max_step: 0.01 * self.model.params.x_star,
            h_init: None,
        };

        let y0 = [value_hi, price_hi];
        let sol = integrate(rhs, x_hi, &y0, 0.0, &events, &opts)
            .map_err(|e| DetError::Integration { x_hi, source: e })?;

        let (stop, x_cut) = match &sol.status {
            StopReason::ReachedEnd => (StopCause::ReachedOrigin, sol.x_final),
            StopReason::Event(hit) => match hit.event_index {
                0 => {
                    let x_t = self.refine_touch(&sol, hit.x)?;
                    (StopCause::TouchedHoldCurve, x_t)
                }
                1 => (StopCause::SlopeDegenerate, sol.x_final),
                _ => (StopCause::CrossedRidge, sol.x_final),
            },
        };

        let samples = self.render_samples(&sol, x_cut, frozen_price);
        let mut lo = [0.0; 2];
        sol.eval_into(x_cut, &mut lo);
        Ok(BackwardArc {
            x_hi,
            x_lo: x_cut,
            value_hi,
            price_hi,
            value_lo: lo[0],
            price_lo: if frozen_price { 1.0 } else { lo[1] },
            stop,
            frozen_price,
            samples,
            n_rhs_evals: sol.n_rhs_evals,
            n_rejected_steps: sol.n_rejected,
            sol,
        })
    }

    /// Re-localize a hold-curve contact against the exact curve inside the
    /// dense span around the tabulated-event candidate `x_hat`. The gap
    /// `Z(x) − W(x)` is negative above the contact and positive below it
    /// (the arc crosses transversally from below going backward).
    fn refine_touch(&self, sol: &OdeSolution, x_hat: f64) -> Result<f64, DetError> {
        let gap = |x: f64| -> f64 {
            let y = sol.eval(x);
            match self.cs.w(x) {
                Ok(w) => y[0] - w,
                Err(_) => f64::NAN,
            }
        };
        // Reach of the dense output: the far end of the last accepted step
        // (the solution is truncated at the event, the step is kept whole).
        let far = sol.steps.last().map(|s| s.x1()).unwrap_or(sol.x_final);
        let hi_cap = sol.steps.first().map(|s| s.x0).unwrap_or(sol.x_final);

        let g_hat = gap(x_hat);
        if !g_hat.is_finite() {
            return Err(DetError::Construction(format!(
                "exact hold curve unavailable near the contact candidate x = {x_hat}"
            )));
        }
        if g_hat.abs() <= 1e-13 {
            return Ok(x_hat);
        }
        // Root lies above x_hat when the gap is still positive there.
        let up = g_hat > 0.0;
        let limit = if up { hi_cap } else { far };
        let mut step = 1e-10 * x_hat.abs().max(1.0);
        let mut a = x_hat;
        let mut b = x_hat;
        let mut found = false;
        for _ in 0..60 {
            let probe = if up {
                (x_hat + step).min(limit)
            } else {
                (x_hat - step).max(limit)
            };
            let g_probe = gap(probe);
            if g_probe.is_finite() && (g_probe == 0.0 || g_probe.signum() != g_hat.signum()) {
                if up {
                    a = x_hat;
                    b = probe;
                } else {
                    a = probe;
                    b = x_hat;
                }
                found = true;
                break;
            }
            if probe == limit {
                break;
            }
            step *= 4.0;
        }
        if !found {
            let g_limit = gap(limit);
            if g_hat.abs() <= TOUCH_ACCEPT_TOL {
                return Ok(x_hat);
            }
            if g_limit.is_finite() && g_limit.abs() <= TOUCH_ACCEPT_TOL {
                return Ok(limit);
            }
            return Err(DetError::Construction(format!(
                "hold-curve contact near x = {x_hat} cannot be bracketed against \
                 the exact curve (gap {g_hat:.3e} at the candidate)"
            )));
        }
        // gap is decreasing in x: positive at a (below), negative at b.
        let root = bisect(|x| -gap(x), a, b, 1e-15 * x_hat.abs().max(1.0));
        root.ok_or_else(|| {
            DetError::Construction(format!(
                "exact-curve contact refinement failed to converge near x = {x_hat}"
            ))
        })
    }

    /// Render dense samples of an arc down to the polished cut `x_cut`.
    fn render_samples(&self, sol: &OdeSolution, x_cut: f64, frozen_price: bool) -> Vec<ArcSample> {
        let mut pts = sol.sample_points(SAMPLES_PER_STEP);
        pts.retain(|(x, _)| *x > x_cut);
        pts.push((x_cut, sol.eval(x_cut)));
        let mut deriv = [0.0; 2];
        let mut out = Vec::with_capacity(pts.len());
        for (x, y) in pts {
            sol.eval_deriv_into(x, &mut deriv);
            let price = if frozen_price { 1.0 } else { y[1] };
            let price_slope = if frozen_price { 0.0 } else { deriv[1] };
            out.push(ArcSample {
                x,
                value: y[0],
                price,
                value_slope: deriv[0],
                price_slope,
                repayment: self.model.u_star(deriv[0], price),
                devaluation: self.model.v_star(x, deriv[0]),
            });
        }
        out
    }

    /// Separation bound for a restart at `x0` above the flat threshold.
    pub fn separation_bound(&self, x0: f64) -> Result<SeparationBound, DetError> {
        let x_flat = self.cs.x_flat();
        let n = 201;
        let mut slope_gap_min = f64::INFINITY;
        for i in 0..n {
            let x = x_flat + (x0 - x_flat) * i as f64 / (n - 1) as f64;
            if x <= 0.0 {
                continue;
            }
            let p = self.cs.p_c(x)?;
            let bp = self.model.xi_sharp(x, p)?;
            let gap = bp.xi_sharp - self.cs.w_prime(x)?;
            slope_gap_min = slope_gap_min.min(gap);
        }
        if !(slope_gap_min > 0.0) {
            return Err(DetError::Construction(format!(
                "branch-point slope fails to clear the hold-curve slope on \
                 [{x_flat}, {x0}] (min gap {slope_gap_min:.3e}); restarts below \
                 the curve are not separated"
            )));
        }
        // The price along any equilibrium arc is bounded below by the
        // boundary salvage rate (prices rise as arcs run backward), so the
        // Hölder constant at that floor covers the whole restart region.
        let price_floor = self.model.params.theta_at_xstar();
        let holder = self.model.holder_constant(x_flat.max(1e-12), price_floor);
        let slope_at_restart = self.cs.w_prime(x0)?;
        let quad = slope_gap_min * slope_gap_min
            / (8.0 * holder * holder * (2.0 * slope_at_restart + slope_gap_min));
        Ok(SeparationBound {
            slope_gap_min,
            holder,
            slope_at_restart,
            value: slope_gap_min.min(quad),
        })
    }

    /// Restart the construction below a hold-curve contact at `x0`.
    ///
    /// At or below the flat threshold the restart begins exactly on the
    /// curve at unit price (the branch detaches downward there); above it,
    /// a vanishing-offset ladder integrates from `W(x0) − ε_k` at the hold
    /// price and accepts the first offset whose final three runs pairwise
    /// agree to [`LADDER_AGREEMENT_TOL`] on the overlap grid.
    pub fn restart_at_touch(&self, x0: f64) -> Result<Restart, DetError> {
        let q = &self.model.params;
        if !(x0 > 0.0 && x0 < q.x_star) {
            return Err(DetError::Domain(format!(
                "restart point x0 = {x0} must lie strictly inside (0, x*)"
            )));
        }
        let w0 = self.cs.w(x0)?;
        let x_flat = self.cs.x_flat();

        if x0 <= x_flat {
            let arc = self.run_arc(x0, w0, 1.0, true)?;
            let max_v = arc
                .samples
                .iter()
                .map(|s| s.devaluation)
                .fold(0.0_f64, f64::max);
            if max_v > 0.0 {
                return Err(DetError::Construction(format!(
                    "frozen-price arc from x0 = {x0} produced a positive \
                     devaluation control ({max_v:.3e}); the restart lies above \
                     the flat threshold after all"
                )));
            }
            if matches!(arc.stop, StopCause::TouchedHoldCurve) {
                return Err(DetError::Construction(format!(
                    "frozen-price arc from x0 = {x0} re-touched the hold curve \
                     at x = {}; expected detachment to the origin",
                    arc.x_lo
                )));
            }
            return Ok(Restart { arc, ladder: None });
        }

        let separation = self.separation_bound(x0)?;
        let p0 = self.cs.p_c(x0)?;
        let mut runs: Vec<(u32, f64, BackwardArc)> = Vec::new();
        let mut last_gaps = (f64::INFINITY, f64::INFINITY);
        for k in 0..=LADDER_MAX_HALVINGS {
            let eps = LADDER_BASE_OFFSET * 0.5_f64.powi(k as i32);
            if eps >= 0.5 * w0 {
                // The offset must leave a strictly positive start value well
                // inside the feasible band.
                continue;
            }
            let arc = self.run_arc(x0, w0 - eps, p0, false)?;
            if x0 - arc.x_lo < separation.value {
                return Err(DetError::Construction(format!(
                    "ladder run k = {k} from x0 = {x0} stopped at {} — closer \
                     than the separation bound {:.3e}",
                    arc.x_lo, separation.value
                )));
            }
            runs.push((k, eps, arc));
            if runs.len() >= 3 {
                let tail = &runs[runs.len() - 3..];
                let (gz, gq) = ladder_gaps(tail, x0);
                last_gaps = (gz, gq);
                if gz <= LADDER_AGREEMENT_TOL && gq <= LADDER_AGREEMENT_TOL {
                    let stops = runs.iter().map(|(_, _, a)| a.x_lo).collect();
                    let n_runs = runs.len();
                    let (kk, eps_acc, arc_acc) = runs.pop().expect("nonempty");
                    let ladder = LadderReport {
                        x0,
                        accepted_halvings: kk,
                        offset: eps_acc,
                        sup_gap_value: gz,
                        sup_gap_price: gq,
                        n_runs,
                        stops,
                        separation,
                    };
                    return Ok(Restart {
                        arc: arc_acc,
                        ladder: Some(ladder),
                    });
                }
            }
        }
        Err(DetError::LadderNotConverged {
            x0,
            tol: LADDER_AGREEMENT_TOL,
            runs: runs.len(),
            gap_value: last_gaps.0,
            gap_price: last_gaps.1,
        })
    }

    /// Build the full piecewise equilibrium: cascade backward from
    /// `(x*, B, θ(x*))`, restarting at each hold-curve contact, until an arc
    /// arrives at the origin; then certify the assembled profile.
    pub fn build_equilibrium(&self) -> Result<PiecewiseEquilibrium, DetError> {
        let pre = self.check_preconditions();
        if !pre.ok {
            return Err(DetError::Precondition(Box::new(pre)));
        }
        let q = &self.model.params;
        let x_star = q.x_star;
        let theta = q.theta_at_xstar();
        let origin_tol = self.origin_x_tol();

        let mut arcs: Vec<BackwardArc> = Vec::new();
        let mut ladders: Vec<Option<LadderReport>> = Vec::new();
        let mut breakpoints = vec![x_star];
        let mut min_separation: Option<f64> = None;

        let mut arc = self.integrate_backward(x_star, q.bankruptcy_cost, theta)?;
        let mut ladder: Option<LadderReport> = None;

        loop {
            if arcs.len() >= MAX_ARCS {
                return Err(DetError::TooManyArcs {
                    got: arcs.len() + 1,
                    cap: MAX_ARCS,
                });
            }
            let x_lo = arc.x_lo;
            let value_lo = arc.value_lo;
            let stop = arc.stop;
            if let Some(rep) = &ladder {
                min_separation = Some(match min_separation {
                    Some(m) => m.min(rep.separation.value),
                    None => rep.separation.value,
                });
            }
            arcs.push(arc);
            ladders.push(ladder.take());

            // Terminal classification: the arc ran out of room at the
            // origin, where the exact boundary condition is Z(0) = 0.
            if x_lo <= origin_tol {
                if value_lo.abs() > TOL_ORIGIN_VALUE {
                    return Err(DetError::Construction(format!(
                        "arc reached x = {x_lo:.3e} with value {value_lo:.3e}, \
                         which does not vanish at the origin (tolerance {TOL_ORIGIN_VALUE:.1e})"
                    )));
                }
                breakpoints.push(0.0);
                break;
            }

            match stop {
                StopCause::TouchedHoldCurve => {}
                StopCause::SlopeDegenerate => {
                    // A mid-domain branch merge happens exactly on the hold
                    // curve; treat it as a contact after verifying that.
                    let w = self.exact_w(x_lo)?;
                    if (value_lo - w).abs() > 1e-6 {
                        return Err(DetError::Construction(format!(
                            "slope degeneracy at x = {x_lo} with value {value_lo:.8} \
                             away from the hold curve ({w:.8})"
                        )));
                    }
                }
                StopCause::CrossedRidge => {
                    return Err(DetError::Construction(format!(
                        "arc crossed the feasibility ridge at x = {x_lo}: the \
                         level r·Z exceeded h_max while integrating backward"
                    )));
                }
                StopCause::ReachedOrigin => {
                    return Err(DetError::Construction(format!(
                        "arc classified as reaching the origin stopped at \
                         x = {x_lo}, above the origin tolerance {origin_tol:.1e}"
                    )));
                }
            }

            breakpoints.push(x_lo);
            let restart = self.restart_at_touch(x_lo)?;
            arc = restart.arc;
            ladder = restart.ladder;
        }

        // Theoretical cap on interior breakpoints from the separation bound.
        let interior = breakpoints.len().saturating_sub(2);
        let bound = min_separation.map(|s| 1.0 + (x_star - self.cs.x_flat()) / s);
        if let Some(b) = bound {
            if interior as f64 >= b {
                return Err(DetError::TooManyArcs {
                    got: interior,
                    cap: b as usize,
                });
            }
        }

        let n_rhs_evals = arcs.iter().map(|a| a.n_rhs_evals).sum();
        let n_rejected_steps = arcs.iter().map(|a| a.n_rejected_steps).sum();
        let certification = self.certify(&breakpoints, &arcs, &ladders, bound);
        if !certification.ok {
            return Err(DetError::Construction(format!(
                "assembled profile failed certification: {}",
                certification.failures.join("; ")
            )));
        }
        Ok(PiecewiseEquilibrium {
            model: self.model,
            cs: self.cs,
            breakpoints,
            arcs,
            ladders,
            certification,
            n_rhs_evals,
            n_rejected_steps,
        })
    }

    /// Measure the assembly invariants.
    fn certify(
        &self,
        breakpoints: &[f64],
        arcs: &[BackwardArc],
        ladders: &[Option<LadderReport>],
        breakpoint_bound: Option<f64>,
    ) -> CertificationReport {
        let q = &self.model.params;
        let mut failures = Vec::new();

        // Boundary data.
        let first = &arcs[0];
        let boundary_value_gap = (first.value_hi - q.bankruptcy_cost).abs();
        let boundary_price_gap = (first.price_hi - q.theta_at_xstar()).abs();
        let last = &arcs[arcs.len() - 1];
        let origin_value = if last.x_lo <= self.origin_x_tol() {
            last.value_lo.abs()
        } else {
            f64::INFINITY
        };
        if origin_value > TOL_ORIGIN_VALUE {
            failures.push(format!("value at the origin is {origin_value:.3e}"));
        }

        // Value jumps across interior breakpoints, against the ladder
        // offsets that created them.
        let mut max_value_jump = 0.0_f64;
        let mut value_jump_allowance = 0.0_f64;
        for i in 1..arcs.len() {
            let upper_lo = arcs[i - 1].value_lo;
            let lower_hi = arcs[i].value_hi;
            max_value_jump = max_value_jump.max((upper_lo - lower_hi).abs());
            if let Some(rep) = &ladders[i] {
                value_jump_allowance = value_jump_allowance.max(rep.offset);
            }
        }
        if max_value_jump > value_jump_allowance + 1e-12 {
            failures.push(format!(
                "value jump {max_value_jump:.3e} exceeds the ladder allowance \
                 {value_jump_allowance:.3e}"
            ));
        }

        // Grid checks: monotone value, value below the hold curve, price in
        // the unit interval. Uses the assembly conventions directly.
        let eval_at = |x: f64| -> (f64, f64) {
            if x < last.x_lo {
                return (last.value_lo * (x / last.x_lo), 1.0);
            }
            let mut i = arcs.len() - 1;
            for j in 0..arcs.len() {
                if x >= breakpoints[j + 1] {
                    i = j;
                    break;
                }
            }
            arcs[i].eval(x)
        };
        let n_grid = 1001;
        let mut value_monotone = true;
        let mut hold_curve_clearance = f64::INFINITY;
        let mut price_in_unit_interval = true;
        let mut prev_value = -f64::INFINITY;
        for i in 0..n_grid {
            let x = q.x_star * i as f64 / (n_grid - 1) as f64;
            let (v, p) = eval_at(x);
            if v < prev_value - 1e-12 {
                value_monotone = false;
            }
            prev_value = v;
            if !(p > 0.0 && p <= 1.0 + 1e-9) {
                price_in_unit_interval = false;
            }
            if let Ok(w) = self.cs.w(x) {
                hold_curve_clearance = hold_curve_clearance.min(w - v);
            }
        }
        if !value_monotone {
            failures.push("value fails to be nondecreasing on the grid".into());
        }
        if hold_curve_clearance < -1e-9 {
            failures.push(format!(
                "value exceeds the hold curve by {:.3e}",
                -hold_curve_clearance
            ));
        }

        // Residuals of both equations at interior dense samples, plus the
        // ridge margin and in-arc monotonicity.
        let rl = q.r + q.lambda;
        let mut max_value_residual = 0.0_f64;
        let mut max_price_residual = 0.0_f64;
        let mut min_ridge_margin = f64::INFINITY;
        for arc in arcs {
            let m = arc.samples.len();
            for (j, s) in arc.samples.iter().enumerate() {
                if !(s.price > 0.0 && s.price <= 1.0 + 1e-9) {
                    price_in_unit_interval = false;
                }
                if let Ok(bp) = self.model.xi_sharp(s.x, s.price) {
                    min_ridge_margin = min_ridge_margin.min(bp.h_max - q.r * s.value);
                }
                if j == 0 || j + 1 == m {
                    continue;
                }
                let rv = q.r * s.value - self.model.h_value(s.x, s.value_slope, s.price);
                max_value_residual = max_value_residual.max(rv.abs());
                if !arc.frozen_price {
                    // Normalized by the local slope scale: inside the
                    // contact boundary layer the price slope spikes (steps
                    // ~1e-8 wide with |q'| ~ 1e2), and the dense output
                    // controls the solution error there, not the interior
                    // derivative error, so the raw defect overstates the
                    // accuracy loss by the slope magnitude.
                    let v = self.model.v_star(s.x, s.value_slope);
                    let rp = self.model.h_xi(s.x, s.value_slope, s.price) * s.price_slope
                        - ((rl + v) * s.price - rl);
                    max_price_residual =
                        max_price_residual.max(rp.abs() / (1.0 + s.price_slope.abs()));
                }
            }
            // Value monotonicity along the arc (samples are in decreasing
            // x; the slope F⁻ is nonnegative). The price is deliberately
            // not required to be monotone: below a contact it first falls
            // away from the hold price and only then relaxes toward par.
            // Pairs with both values inside the origin noise floor are
            // exempt: there the state sits below the integrator's absolute
            // tolerance and its ordering is not meaningful.
            for w in arc.samples.windows(2) {
                let in_noise_floor = w[0].value.abs().max(w[1].value.abs()) <= TOL_ORIGIN_VALUE;
                if !in_noise_floor && w[1].value > w[0].value + 1e-12 {
                    failures.push(format!(
                        "arc value fails to increase in x near x = {}",
                        w[1].x
                    ));
                    break;
                }
            }
        }
        if min_ridge_margin < -1e-9 {
            failures.push(format!(
                "feasibility margin h_max − r·Z dips to {min_ridge_margin:.3e}"
            ));
        }

        // Contact geometry at interior breakpoints.
        let mut contact_slope_gaps = Vec::new();
        let mut contact_price_excess = Vec::new();
        for i in 1..arcs.len() {
            let xk = breakpoints[i];
            let incoming_price = arcs[i - 1].price_lo;
            match (self.cs.p_c(xk), self.cs.w_prime(xk)) {
                (Ok(pc), Ok(wp)) => {
                    let gap = self
                        .model
                        .xi_sharp(xk, pc)
                        .map(|bp| bp.xi_sharp - wp)
                        .unwrap_or(f64::NAN);
                    contact_slope_gaps.push(gap);
                    if !(gap > 0.0) {
                        failures.push(format!(
                            "contact at x = {xk} lacks a positive slope gap ({gap:.3e})"
                        ));
                    }
                    let excess = incoming_price - pc;
                    contact_price_excess.push(excess);
                    if excess > 1e-9 {
                        failures.push(format!(
                            "incoming price at the contact x = {xk} exceeds the \
                             hold price by {excess:.3e}"
                        ));
                    }
                }
                _ => failures.push(format!("hold curve undefined at the contact x = {xk}")),
            }
        }

        // Hölder modulus of the branch slope along the arcs: compare the
        // slope at a sample with the branch slope at the same (x, q) but the
        // neighbor's value level.
        let mut holder_ratio = 0.0_f64;
        for arc in arcs {
            let x1 = arc.x_lo.max(1e-12);
            let p1 = arc
                .samples
                .iter()
                .map(|s| s.price)
                .fold(f64::INFINITY, f64::min)
                .clamp(1e-12, 1.0);
            let c = self.model.holder_constant(x1, p1);
            let mut j = 0;
            while j + 4 < arc.samples.len() {
                let a = &arc.samples[j];
                let b = &arc.samples[j + 4];
                let dz = a.value - b.value;
                if dz > 1e-14 && b.value > 0.0 {
                    if let Ok(xi_b) = self.model.f_branch(a.x, b.value, a.price, Branch::Minus) {
                        let df = (a.value_slope - xi_b).abs();
                        holder_ratio = holder_ratio.max(df / (c * dz.sqrt()));
                    }
                }
                j += 4;
            }
        }
        if holder_ratio > 1.0 {
            failures.push(format!(
                "branch-slope Hölder ratio {holder_ratio:.3} exceeds 1"
            ));
        }

        let interior = breakpoints.len().saturating_sub(2);
        CertificationReport {
            origin_value,
            boundary_value_gap,
            boundary_price_gap,
            max_value_jump,
            value_jump_allowance,
            value_monotone,
            hold_curve_clearance,
            price_in_unit_interval,
            max_value_residual,
            max_price_residual,
            min_ridge_margin,
            contact_slope_gaps,
            contact_price_excess,
            holder_ratio,
            interior_breakpoints: interior,
            breakpoint_bound,
            ok: failures.is_empty(),
            failures,
        }
    }

    /// Roll out the state and discounted cost from `x0` under a control law
    /// and a price field, closing the cost with a terminal value function.
    /// Returns `(closed cost, final x, final t)`.
    fn rollout(
        &self,
        x0: f64,
        t_max: f64,
        control: &dyn Fn(f64, f64) -> (f64, f64),
        price: &dyn Fn(f64) -> f64,
        terminal_value: &dyn Fn(f64) -> f64,
    ) -> Result<(f64, f64, f64), DetError> {
        let q = self.model.params;
        let costs = self.model.costs;
        let x_star = q.x_star;
        let rhs = move |t: f64, y: &[f64], dy: &mut [f64]| -> Result<(), RhsRejection> {
            let x = y[0];
            let (u, v) = control(t, x);
            let p = price(x);
            let accrual = (q.lambda + q.r) / p - q.lambda - q.mu;
            dy[0] = (accrual - v) * x - u / p;
            dy[1] = (-q.r * t).exp() * (costs.cost_l(u) + costs.cost_c(v));
            Ok(())
        };
        let bankruptcy = EventSpec {
            g: Box::new(move |_t: f64, y: &[f64]| y[0] - x_star),
            terminal: true,
            direction: EventDirection::Rising,
        };
        let origin = EventSpec {
            g: Box::new(|_t: f64, y: &[f64]| y[0] - 1e-12),
            terminal: true,
            direction: EventDirection::Falling,
        };
        let events = vec![bankruptcy, origin];
        let opts = OdeOptions {
            rel_tol: 1e-10,
            abs_tol: 1e-13,
            ..OdeOptions::default()
        };
        let sol = integrate(rhs, 0.0, &[x0, 0.0], t_max, &events, &opts).map_err(|e| {
            DetError::Integration {
                x_hi: x0,
                source: e,
            }
        })?;
        let t_end = sol.x_final;
        let x_end = sol.y_final[0];
        let cost = sol.y_final[1] + (-q.r * t_end).exp() * terminal_value(x_end);
        Ok((cost, x_end, t_end))
    }

    /// Independent dynamic-programming check of an assembled equilibrium.
    ///
    /// With the price field frozen at the equilibrium price, every rollout
    /// cost closed with the equilibrium value must dominate `V(x0)`, with
    /// equality along the equilibrium feedback controls. Also checks the
    /// zero-control (free-fall) run and the constant hold strategy at its
    /// own price against the hold curve.
    pub fn verify_dynamic_programming(
        &self,
        eq: &PiecewiseEquilibrium,
        x0: f64,
        n_random_controls: usize,
        seed: u64,
    ) -> Result<DynamicProgrammingReport, DetError> {
        use rand::{Rng, SeedableRng};

        let q = self.model.params;
        if !(x0 > 0.0 && x0 < q.x_star) {
            return Err(DetError::Domain(format!(
                "rollout start x0 = {x0} must lie strictly inside (0, x*)"
            )));
        }
        let t_max = 5.0 / q.r;
        let value_at_x0 = eq.value(x0);

        let eq_price = |x: f64| eq.price(x);
        let eq_value = |x: f64| eq.value(x);

        // Equilibrium feedback controls reproduce the value.
        let feedback = |_t: f64, x: f64| eq.controls(x);
        let (cost_fb, _, _) = self.rollout(x0, t_max, &feedback, &eq_price, &eq_value)?;
        let feedback_gap = (cost_fb - value_at_x0).abs();

        // Free fall: no repayment, no devaluation.
        let zero = |_t: f64, _x: f64| (0.0, 0.0);
        let (cost_ff, x_ff, t_ff) = self.rollout(x0, t_max, &zero, &eq_price, &eq_value)?;
        let free_fall_slack = cost_ff - value_at_x0;
        let free_fall_exit_time = if (x_ff - q.x_star).abs() < 1e-9 {
            Some(t_ff)
        } else {
            None
        };

        // Constant hold strategy: the cheapest state-freezing control pair
        // at the hold price (the Hamiltonian-ridge maximizer, whose budget
        // identity pins the drift to zero there) reproduces the hold value
        // W(x0) = h_max(x0, p_c)/r and keeps the state put.  The
        // debt-to-income pair (u_c, v_c) also freezes the state at p_c but
        // runs strictly costlier whenever the two differ.
        let hold_price = self.cs.p_c(x0)?;
        let w0 = self.cs.w(x0)?;
        let ridge = self.model.xi_sharp(x0, hold_price)?;
        let hold_ctrl = |_t: f64, _x: f64| (ridge.u_sharp, ridge.v_sharp);
        let hold_price_fn = |_x: f64| hold_price;
        let hold_value = |x: f64| self.cs.w(x.clamp(0.0, q.x_star)).unwrap_or(f64::NAN);
        let (cost_hold, x_hold, _) =
            self.rollout(x0, t_max, &hold_ctrl, &hold_price_fn, &hold_value)?;
        let hold_state_drift = (x_hold - x0).abs();
        let hold_cost_gap = (cost_hold - w0).abs();

        // Random piecewise-constant open-loop controls must not beat the
        // equilibrium value.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let v_cap = if q.v_max.is_finite() {
            0.8 * q.v_max
        } else {
            0.5
        };
        let mut min_random_slack = f64::INFINITY;
        for _ in 0..n_random_controls {
            let n_seg = 8;
            let mut switches: Vec<f64> =
                (0..n_seg - 1).map(|_| rng.gen_range(0.0..t_max)).collect();
            switches.sort_by(f64::total_cmp);
            let controls: Vec<(f64, f64)> = (0..n_seg)
                .map(|_| (rng.gen_range(0.0..0.85), rng.gen_range(0.0..v_cap)))
                .collect();
            let ctrl = |t: f64, _x: f64| {
                let i = switches.partition_point(|s| *s <= t);
                controls[i]
            };
            let (cost, _, _) = self.rollout(x0, t_max, &ctrl, &eq_price, &eq_value)?;
            min_random_slack = min_random_slack.min(cost - value_at_x0);
        }
        if n_random_controls == 0 {
            min_random_slack = 0.0;
        }

        let ok = feedback_gap <= 1e-5
            && free_fall_slack >= -1e-7
            && hold_state_drift <= 1e-6
            && hold_cost_gap <= 1e-6
            && min_random_slack >= -1e-6;
        Ok(DynamicProgrammingReport {
            x0,
            value_at_x0,
            feedback_gap,
            free_fall_slack,
            free_fall_exit_time,
            hold_state_drift,
            hold_cost_gap,
            n_random_controls,
            min_random_slack,
            ok,
        })
    }
}

/// Pairwise sup gaps (value, price) of three ladder runs on a uniform
/// overlap grid between the latest common stop and `x0`.
fn ladder_gaps(tail: &[(u32, f64, BackwardArc)], x0: f64) -> (f64, f64) {
    let lo = tail
        .iter()
        .map(|(_, _, a)| a.x_lo)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut gap_value = 0.0_f64;
    let mut gap_price = 0.0_f64;
    for i in 0..LADDER_GRID {
        let x = lo + (x0 - lo) * i as f64 / (LADDER_GRID - 1) as f64;
        let states: Vec<(f64, f64)> = tail.iter().map(|(_, _, a)| a.eval(x)).collect();
        for a in 0..states.len() {
            for b in a + 1..states.len() {
                gap_value = gap_value.max((states[a].0 - states[b].0).abs());
                gap_price = gap_price.max((states[a].1 - states[b].1).abs());
            }
        }
    }
    (gap_value, gap_price)
}
