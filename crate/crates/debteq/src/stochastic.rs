//! Stochastic-regime equilibrium solver (σ > 0).
//!
//! The equilibrium pair `(V, p)` on `[0, x*]` satisfies the coupled
//! second-order steady system
//!
//! ```text
//!     r·V = H(x, V', p) + (σ²x²/2)·V''
//!     (r+λ+v*(x,V'))·p = (r+λ) + H_ξ(x, V', p)·p' + (σ²x²/2)·p''
//! ```
//!
//! with boundary data `V(0)=0, V(x*)=B, p(0)=1, p(x*)=θ(x*)`. The diffusion
//! coefficient degenerates at `x = 0`, so the solver works with a uniformly
//! elliptic regularization: for `ε > 0` it marches the parabolic system
//!
//! ```text
//!     V_t = −r·V + H(x, V_x, p+ε) + (ε + σ²x²/2)·V_xx
//!     p_t = (r+λ) − (r+λ+v*(x,V_x))·p + H_ξ(x, V_x, p+ε)·p_x + (ε + σ²x²/2)·p_xx
//! ```
//!
//! (the price is shifted by `ε` *inside* the Hamiltonian) to steady state on
//! a uniform grid, then continues `ε → 0` down a decreasing ladder with warm
//! starts. The reported equilibrium estimate is the ladder floor plus a
//! Richardson extrapolation of the last three rungs to `ε = 0`; both objects
//! carry independently reconstructed residuals.
//!
//! Numerical scheme: IMEX Euler. Diffusion is implicit (one tridiagonal
//! solve per field per step); the Hamiltonian terms are explicit. The
//! advection `H_ξ·p_x` uses a cell-Péclet-gated difference: centered where
//! `|H_ξ|·h/(2D) ≤ 0.8` (second-order, matching the certification
//! reconstruction) and one-sided in the direction of `H_ξ` where the local
//! Péclet number exceeds 1, with a linear blend between. On the canonical
//! grids the solution region is fully centered, so the steady state solves
//! the same discrete system the certification measures.

use crate::hamiltonian::Model;
use crate::params::ParamError;
use serde::Serialize;
use thiserror::Error;

/// Default regularization ladder for [`StochSolver::continuation_to_zero`].
pub const DEFAULT_EPS_LADDER: [f64; 7] = [1e-2, 3e-3, 1e-3, 3e-4, 1e-4, 1e-5, 1e-6];

/// Steady-state detection threshold on `‖update‖_∞ / dt`.
pub const TOL_STEADY: f64 = 1e-9;

/// Residual certification target for the reported equilibrium estimate.
pub const TOL_PDE: f64 = 1e-6;

/// Iteration cap per ladder rung.
pub const MAX_ITERS_PER_RUNG: usize = 1_000_000;

/// Largest tolerated overshoot of the invariant box before a step is
/// rejected as unstable (an in-box scheme only leaves the box through
/// rounding, so anything larger signals a too-large `dt`).
const BOX_TOL: f64 = 1e-10;

/// Cell Péclet number below which the advection difference is fully
/// centered, and above which (at [`PECLET_UPWIND`]) fully one-sided.
const PECLET_CENTERED: f64 = 0.8;
const PECLET_UPWIND: f64 = 1.0;

/// Pseudo-time step control: growth per accepted step, shrink on a rejected
/// step, hard floor, and safety fractions of the advective/reaction limits.
const DT_GROWTH: f64 = 1.02;
const DT_SHRINK: f64 = 0.5;
const DT_MIN: f64 = 1e-12;
const CFL_ADVECTION: f64 = 0.8;
const CFL_REACTION: f64 = 0.4;

/// Slack for the discrete monotonicity flag on `V`.
const MONO_SLACK: f64 = 1e-12;

/// Slack for the near-origin price-barrier margin.
const BARRIER_SLACK: f64 = 1e-9;

/// Continuation progress: each rung's equilibrium-system residual must drop
/// below `STALL_FACTOR`× the previous one (plus an absolute slack tied to
/// the steady tolerance).
const STALL_FACTOR: f64 = 0.9;
const STALL_SLACK: f64 = 10.0 * TOL_STEADY;

/// Sampling stride for the rate history attached to a non-convergence error.
const RATE_SAMPLE_STRIDE: usize = 1024;

/// Failures of the stochastic-regime solver.
#[derive(Debug, Error)]
pub enum StochError {
    /// Parameter set rejected by the regime validator.
    #[error(transparent)]
    Param(#[from] ParamError),
    /// Malformed grid request.
    #[error("grid: {0}")]
    Grid(String),
    /// A parabolic step left the invariant box by more than rounding slack:
    /// the step size is too large for the current state.
    #[error("parabolic step unstable at dt = {dt:.3e}: invariant-box overshoot {overshoot:.3e}")]
    Instability { dt: f64, overshoot: f64 },
    /// A ladder rung exhausted its iteration budget before the update rate
    /// fell below the steady threshold. Carries a sampled history of the
    /// update rate for diagnosis.
    #[error(
        "rung eps = {eps:.3e} not steady after {iterations} iterations \
         (last update rate {rate:.3e}; tolerance {tol:.1e})"
    )]
    NotConverged {
        eps: f64,
        iterations: usize,
        rate: f64,
        tol: f64,
        rate_history: Vec<f64>,
    },
    /// The equilibrium-system residual stopped improving along the ladder.
    #[error(
        "continuation stalled at eps = {eps:.3e}: residual {current:.3e} \
         did not improve on {previous:.3e}"
    )]
    ContinuationStalled {
        eps: f64,
        previous: f64,
        current: f64,
    },
    /// Invalid caller-supplied data (state shape, ladder, step size, …).
    #[error("domain: {0}")]
    Domain(String),
}

/// Uniform spatial grid on `[0, x*]`.
#[derive(Debug, Clone, Serialize)]
pub struct Grid {
    /// Node coordinates, strictly increasing, `xs[0] = 0`, `xs[n−1] = x*`.
    pub xs: Vec<f64>,
    /// Node spacing `x*/(n−1)`.
    pub h: f64,
}

impl Grid {
    /// Uniform grid with `n ≥ 3` nodes whose endpoints are exactly `0`
    /// and `x_star`.
    pub fn uniform(x_star: f64, n: usize) -> Result<Grid, StochError> {
        if !(x_star > 0.0 && x_star.is_finite()) {
            return Err(StochError::Grid(format!(
                "x_star must be positive and finite, got {x_star}"
            )));
        }
        if n < 3 {
            return Err(StochError::Grid(format!("need at least 3 nodes, got {n}")));
        }
        let m = (n - 1) as f64;
        let mut xs: Vec<f64> = (0..n).map(|i| x_star * (i as f64 / m)).collect();
        // i/m = 1 exactly at the last node, so xs[n−1] = x_star exactly;
        // make the first node exact as well.
        xs[0] = 0.0;
        Ok(Grid { h: x_star / m, xs })
    }

    /// Number of nodes.
    pub fn n(&self) -> usize {
        self.xs.len()
    }
}

/// One iterate of the parabolic marching: value and price arrays on the
/// grid, the active regularization, and the pseudo-time elapsed.
///
/// Invariants maintained by the solver: `0 ≤ V ≤ B` and
/// `θ_min ≤ p ≤ 1` at every node (the invariant box), and the boundary
/// rows are pinned exactly to `V(0)=0, V(x*)=B, p(0)=1, p(x*)=θ(x*)`.
#[derive(Debug, Clone, Serialize)]
pub struct ParabolicState {
    /// Value array (utility units).
    pub v: Vec<f64>,
    /// Discounted bond price array.
    pub p: Vec<f64>,
    /// Regularization strength `ε > 0` of the system being marched.
    pub eps: f64,
    /// Pseudo-time elapsed since the march started.
    pub t: f64,
}

/// Convergence record for one ladder rung.
#[derive(Debug, Clone, Serialize)]
pub struct RungRecord {
    /// Regularization strength of this rung.
    pub eps: f64,
    /// Accepted parabolic steps.
    pub iterations: usize,
    /// Steps rejected for leaving the invariant box (each halves `dt`).
    pub rejected: usize,
    /// Final pseudo-time step.
    pub dt_final: f64,
    /// Final `‖update‖_∞/dt` (below the steady tolerance on success).
    pub update_rate: f64,
    /// Sup-norm interior residual of the ε-regularized steady system at
    /// this rung's fixed point, value equation (independent centered
    /// reconstruction).
    pub residual_eps_v: f64,
    /// Same, price equation.
    pub residual_eps_p: f64,
    /// Sup-norm interior residual of the unregularized (σ-only diffusion)
    /// equilibrium system evaluated on this rung's fields. Decreases
    /// proportionally to `ε` along the ladder.
    pub residual_zero_v: f64,
    /// Same, price equation.
    pub residual_zero_p: f64,
    /// Largest discrete slope of `V` at this rung.
    pub m_star: f64,
    /// Interior nodes where the advection difference was not fully centered
    /// at the fixed point (cell Péclet above the centered threshold).
    pub upwind_influenced: usize,
}

/// Near-origin price-barrier certificate: the solved price must stay above
/// the envelope `1 − c·x^γ` on `[0, x_range]`, where
/// `c = 1 + 2M*²/((r+λ)δ₀) + 1/x*`,
/// `γ = min{1/2, (r+λ)/((r+λ)/θ_min − λ − μ + σ²)}`, and
/// `x_range = ((1−θ_min)/c)^{1/γ}` is where the envelope reaches `θ_min`.
#[derive(Debug, Clone, Serialize)]
pub struct BarrierCheck {
    /// Envelope coefficient `c`.
    pub coefficient: f64,
    /// Envelope exponent `γ`.
    pub exponent: f64,
    /// Right end of the checked interval.
    pub x_range: f64,
    /// Minimum of `p(x) − (1 − c·x^γ)` over grid nodes in `[0, x_range]`.
    pub min_margin: f64,
    /// `min_margin ≥ −1e-9`.
    pub ok: bool,
}

/// Converged output of the ε-continuation.
///
/// `v`/`p` are the ladder-floor fields (the smallest-ε steady state
/// actually solved); `v_limit`/`p_limit` are the Richardson extrapolation
/// of the last three rungs to `ε = 0` — the reported equilibrium estimate.
/// `residual_v`/`residual_p` certify the limit estimate against the
/// unregularized equilibrium system; `floor_residual_v`/`floor_residual_p`
/// are the same measure on the floor fields, which retains an `O(ε_floor)`
/// regularization bias by construction.
#[derive(Debug, Clone, Serialize)]
pub struct GridSolution {
    /// The spatial grid.
    pub grid: Grid,
    /// Value field at the ladder floor.
    pub v: Vec<f64>,
    /// Price field at the ladder floor.
    pub p: Vec<f64>,
    /// Feedback repayment fraction at each node, extracted from the floor
    /// fields: `u*(V'(x_i), p_i)`.
    pub u_star: Vec<f64>,
    /// Feedback devaluation rate at each node: `v*(x_i, V'(x_i))`.
    pub v_star: Vec<f64>,
    /// Value field extrapolated to `ε = 0` through the last three rungs.
    pub v_limit: Vec<f64>,
    /// Price field extrapolated to `ε = 0`.
    pub p_limit: Vec<f64>,
    /// Sup-norm interior residual of the equilibrium system on the limit
    /// estimate, value equation.
    pub residual_v: f64,
    /// Same, price equation.
    pub residual_p: f64,
    /// Equilibrium-system residual of the floor fields, value equation
    /// (carries the `O(ε_floor)` bias).
    pub floor_residual_v: f64,
    /// Same, price equation.
    pub floor_residual_p: f64,
    /// The ladder actually run, in order.
    pub eps_history: Vec<f64>,
    /// Per-rung convergence records, parallel to `eps_history`.
    pub rungs: Vec<RungRecord>,
    /// Whether the floor value field is nondecreasing along the grid
    /// (to rounding slack).
    pub monotone_v: bool,
    /// Certified no-devaluation band edge `min{c'(0)/M*, x*}`: `v_star`
    /// vanishes at every node strictly inside `[0, no_dev_band]`.
    pub no_dev_band: f64,
    /// Largest discrete slope of the floor value field.
    pub m_star: f64,
    /// Near-origin price-barrier certificate.
    pub barrier: BarrierCheck,
    /// No interior local maximum of `V'` below
    /// `x̄₁ = min{1/(4(λ+r+σ²)), x*/2}` exceeds `8·L(1/2)`.
    pub gradient_bound_ok: bool,
}

/// Options for the stochastic solver.
#[derive(Debug, Clone)]
pub struct StochOptions {
    /// Strictly decreasing regularization ladder for the continuation.
    pub eps_ladder: Vec<f64>,
    /// Steady-state detection threshold on `‖update‖_∞/dt`.
    pub tol_steady: f64,
    /// Residual certification target.
    pub tol_pde: f64,
    /// Iteration cap per rung.
    pub max_iters_per_rung: usize,
}

impl Default for StochOptions {
    fn default() -> Self {
        StochOptions {
            eps_ladder: DEFAULT_EPS_LADDER.to_vec(),
            tol_steady: TOL_STEADY,
            tol_pde: TOL_PDE,
            max_iters_per_rung: MAX_ITERS_PER_RUNG,
        }
    }
}

/// Stochastic-regime solver: owns the model, the grid, and the options.
/// Single-threaded; independent instances share nothing.
#[derive(Debug, Clone)]
pub struct StochSolver {
    model: Model,
    grid: Grid,
    opts: StochOptions,
}

impl StochSolver {
    /// Solver on a uniform `n`-node grid with default options. Rejects
    /// parameter sets outside the stochastic regime (`σ > 0`, finite
    /// devaluation cap, positive salvage value at `x*`).
    pub fn new(model: Model, n: usize) -> Result<StochSolver, StochError> {
        StochSolver::with_options(model, n, StochOptions::default())
    }

    /// Solver with explicit options.
    pub fn with_options(
        model: Model,
        n: usize,
        opts: StochOptions,
    ) -> Result<StochSolver, StochError> {
        model.params.validate_stochastic()?;
        let grid = Grid::uniform(model.params.x_star, n)?;
        if !(opts.tol_steady > 0.0 && opts.tol_pde > 0.0) {
            return Err(StochError::Domain(
                "tolerances must be positive".to_string(),
            ));
        }
        Ok(StochSolver { model, grid, opts })
    }

    /// The solver's grid.
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// The model being solved.
    pub fn model(&self) -> &Model {
        &self.model
    }

    /// Linear-interpolant initial state: `V` from `0` to `B`, `p` from `1`
    /// to `θ(x*)`, boundary rows exact.
    pub fn initial_state(&self, eps: f64) -> ParabolicState {
        let q = &self.model.params;
        let n = self.grid.n();
        let th = q.theta_at_xstar();
        let mut v: Vec<f64> = self
            .grid
            .xs
            .iter()
            .map(|&x| q.bankruptcy_cost * (x / q.x_star))
            .collect();
        let mut p: Vec<f64> = self
            .grid
            .xs
            .iter()
            .map(|&x| 1.0 + (th - 1.0) * (x / q.x_star))
            .collect();
        v[0] = 0.0;
        v[n - 1] = q.bankruptcy_cost;
        p[0] = 1.0;
        p[n - 1] = th;
        ParabolicState { v, p, eps, t: 0.0 }
    }

    /// One IMEX step: Hamiltonian terms explicit from `state`, diffusion
    /// `(ε + σ²x²/2)∂_xx` implicit via a tridiagonal solve, boundary rows
    /// pinned. The output is clamped to the invariant box
    /// `[0,B] × [θ_min,1]` only when the overshoot is within rounding
    /// slack; a larger overshoot reports instability (the box is invariant
    /// for the exact flow, so leaving it means `dt` is too large).
    pub fn parabolic_step(
        &self,
        state: &ParabolicState,
        dt: f64,
    ) -> Result<ParabolicState, StochError> {
        let (next, _max_a) = self.step_inner(state, dt)?;
        Ok(next)
    }

    /// March the ε-system to steady state with adaptive pseudo-time
    /// stepping, warm-started from `init` when given (its fields are
    /// re-pinned and its `ε` replaced). Returns the fixed point and a
    /// convergence record.
    pub fn steady_state(
        &self,
        eps: f64,
        init: Option<ParabolicState>,
    ) -> Result<(ParabolicState, RungRecord), StochError> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(StochError::Domain(format!(
                "eps must be positive and finite, got {eps}"
            )));
        }
        let q = self.model.params;
        let n = self.grid.n();
        let mut st = match init {
            Some(s) => s,
            None => self.initial_state(eps),
        };
        if st.v.len() != n || st.p.len() != n {
            return Err(StochError::Domain(format!(
                "initial state has {}/{} nodes, grid has {n}",
                st.v.len(),
                st.p.len()
            )));
        }
        st.eps = eps;
        st.t = 0.0;
        self.pin_and_box(&mut st)?;

        // A-priori advective bound over the invariant box, for the first dt:
        // |H_ξ| ≤ (x*·max(|A(θ_min)|, |A(1)|)·θ... ) — conservatively,
        // carry/price ≤ ((r+λ)/θ_min + λ + μ + σ²)·x* plus u/p ≤ 1/θ_min
        // plus v_max·x*.
        let th_min = q.theta_min();
        let rl = q.r + q.lambda;
        let sig2 = q.sigma * q.sigma;
        let a_prior = (rl / th_min + q.lambda + q.mu + sig2) * q.x_star
            + 1.0 / th_min
            + q.v_max * q.x_star;
        let dt_reaction = CFL_REACTION / (rl + q.v_max).max(q.r);
        let mut dt = (CFL_ADVECTION * self.grid.h / a_prior).min(dt_reaction);

        let mut iterations = 0usize;
        let mut rejected = 0usize;
        let mut rate = f64::INFINITY;
        let mut rate_history: Vec<f64> = Vec::new();
        loop {
            if iterations >= self.opts.max_iters_per_rung {
                return Err(StochError::NotConverged {
                    eps,
                    iterations,
                    rate,
                    tol: self.opts.tol_steady,
                    rate_history,
                });
            }
            match self.step_inner(&st, dt) {
                Err(StochError::Instability { .. }) if dt > DT_MIN => {
                    dt *= DT_SHRINK;
                    rejected += 1;
                    iterations += 1;
                    continue;
                }
                Err(e) => return Err(e),
                Ok((next, max_a)) => {
                    let mut diff = 0.0f64;
                    for i in 0..n {
                        diff = diff
                            .max((next.v[i] - st.v[i]).abs())
                            .max((next.p[i] - st.p[i]).abs());
                    }
                    rate = diff / dt;
                    st = next;
                    iterations += 1;
                    if iterations.is_multiple_of(RATE_SAMPLE_STRIDE) {
                        rate_history.push(rate);
                    }
                    if rate < self.opts.tol_steady {
                        break;
                    }
                    let cap = (CFL_ADVECTION * self.grid.h / max_a.max(1e-300))
                        .min(dt_reaction);
                    dt = (dt * DT_GROWTH).min(cap);
                }
            }
        }

        let (residual_eps_v, residual_eps_p) =
            steady_residuals(&self.model, &self.grid, &st.v, &st.p, eps);
        let (residual_zero_v, residual_zero_p) =
            equilibrium_residuals(&self.model, &self.grid, &st.v, &st.p);
        let xi = self.gradient(&st.v);
        let m_star = xi.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        let record = RungRecord {
            eps,
            iterations,
            rejected,
            dt_final: dt,
            update_rate: rate,
            residual_eps_v,
            residual_eps_p,
            residual_zero_v,
            residual_zero_p,
            m_star,
            upwind_influenced: self.count_upwind_influenced(&st),
        };
        Ok((st, record))
    }

    /// Run the regularization ladder with warm starts and extrapolate the
    /// last three rungs to `ε = 0`. Fails if a rung does not converge or if
    /// the equilibrium-system residual stops improving down the ladder.
    pub fn continuation_to_zero(&self) -> Result<GridSolution, StochError> {
        let ladder = &self.opts.eps_ladder;
        if ladder.is_empty() {
            return Err(StochError::Domain("empty eps ladder".to_string()));
        }
        for w in ladder.windows(2) {
            if !(w[1] < w[0]) {
                return Err(StochError::Domain(format!(
                    "eps ladder must be strictly decreasing, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        if !(ladder[ladder.len() - 1] > 0.0 && ladder[0].is_finite()) {
            return Err(StochError::Domain(
                "eps ladder entries must be positive and finite".to_string(),
            ));
        }

        let mut rungs: Vec<RungRecord> = Vec::with_capacity(ladder.len());
        let mut tail: Vec<(f64, Vec<f64>, Vec<f64>)> = Vec::new();
        let mut carry: Option<ParabolicState> = None;
        for &eps in ladder {
            let (st, rec) = self.steady_state(eps, carry.take())?;
            if let Some(prev) = rungs.last() {
                let previous = prev.residual_zero_v.max(prev.residual_zero_p);
                let current = rec.residual_zero_v.max(rec.residual_zero_p);
                if current > STALL_FACTOR * previous + STALL_SLACK {
                    return Err(StochError::ContinuationStalled {
                        eps,
                        previous,
                        current,
                    });
                }
            }
            rungs.push(rec);
            tail.push((eps, st.v.clone(), st.p.clone()));
            if tail.len() > 3 {
                tail.remove(0);
            }
            carry = Some(st);
        }
        let floor = carry.expect("ladder nonempty");
        let n = self.grid.n();
        let q = self.model.params;

        // Richardson limit: value at 0 of the quadratic through the last
        // three (ε, field) pairs, computed nodewise; boundary rows re-pinned
        // (they are exact at every rung).
        let (v_limit, p_limit) = if tail.len() == 3 {
            let e: Vec<f64> = tail.iter().map(|t| t.0).collect();
            let mut w = [0.0f64; 3];
            for i in 0..3 {
                let mut acc = 1.0;
                for j in 0..3 {
                    if i != j {
                        acc *= e[j] / (e[j] - e[i]);
                    }
                }
                w[i] = acc;
            }
            let mut vl = vec![0.0f64; n];
            let mut pl = vec![0.0f64; n];
            for i in 0..n {
                vl[i] = w[0] * tail[0].1[i] + w[1] * tail[1].1[i] + w[2] * tail[2].1[i];
                pl[i] = w[0] * tail[0].2[i] + w[1] * tail[1].2[i] + w[2] * tail[2].2[i];
            }
            vl[0] = 0.0;
            vl[n - 1] = q.bankruptcy_cost;
            pl[0] = 1.0;
            pl[n - 1] = q.theta_at_xstar();
            (vl, pl)
        } else {
            (floor.v.clone(), floor.p.clone())
        };

        let (residual_v, residual_p) =
            equilibrium_residuals(&self.model, &self.grid, &v_limit, &p_limit);
        let (floor_residual_v, floor_residual_p) =
            equilibrium_residuals(&self.model, &self.grid, &floor.v, &floor.p);

        let (u_star, v_star) = self.extract_policy(&floor.v, &floor.p);
        let xi = self.gradient(&floor.v);
        let m_star = xi.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        let monotone_v = floor
            .v
            .windows(2)
            .all(|w| w[1] >= w[0] - MONO_SLACK);
        let c_prime_zero = self.model.costs.deriv_c(0.0);
        let no_dev_band = if m_star > 0.0 {
            (c_prime_zero / m_star).min(q.x_star)
        } else {
            q.x_star
        };
        let barrier = self.barrier_check(m_star, &floor.p);
        let gradient_bound_ok = self.gradient_bound_ok(&xi);

        Ok(GridSolution {
            grid: self.grid.clone(),
            v: floor.v,
            p: floor.p,
            u_star,
            v_star,
            v_limit,
            p_limit,
            residual_v,
            residual_p,
            floor_residual_v,
            floor_residual_p,
            eps_history: ladder.clone(),
            rungs,
            monotone_v,
            no_dev_band,
            m_star,
            barrier,
            gradient_bound_ok,
        })
    }

    /// Nodewise feedback policies from value/price fields: `u*(V'(x_i), p_i)`
    /// and `v*(x_i, V'(x_i))` with `V'` by centered differences (one-sided
    /// second-order at the boundaries).
    pub fn extract_policy(&self, v: &[f64], p: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let xi = self.gradient(v);
        let n = self.grid.n();
        let mut u = vec![0.0f64; n];
        let mut w = vec![0.0f64; n];
        for i in 0..n {
            u[i] = self.model.u_star(xi[i], p[i]);
            w[i] = self.model.v_star(self.grid.xs[i], xi[i]);
        }
        (u, w)
    }

    /// Discrete slope: centered in the interior, second-order one-sided at
    /// the boundaries.
    fn gradient(&self, f: &[f64]) -> Vec<f64> {
        let n = self.grid.n();
        let h = self.grid.h;
        let mut g = vec![0.0f64; n];
        g[0] = (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * h);
        for i in 1..n - 1 {
            g[i] = (f[i + 1] - f[i - 1]) / (2.0 * h);
        }
        g[n - 1] = (3.0 * f[n - 1] - 4.0 * f[n - 2] + f[n - 3]) / (2.0 * h);
        g
    }

    /// Pin boundary rows exactly and clamp rounding-level box violations;
    /// reject states materially outside the box.
    fn pin_and_box(&self, st: &mut ParabolicState) -> Result<(), StochError> {
        let q = self.model.params;
        let n = self.grid.n();
        let b = q.bankruptcy_cost;
        let th_min = q.theta_min();
        st.v[0] = 0.0;
        st.v[n - 1] = b;
        st.p[0] = 1.0;
        st.p[n - 1] = q.theta_at_xstar();
        let mut overshoot = 0.0f64;
        for i in 0..n {
            overshoot = overshoot
                .max(-st.v[i])
                .max(st.v[i] - b)
                .max(th_min - st.p[i])
                .max(st.p[i] - 1.0);
        }
        if overshoot > BOX_TOL {
            return Err(StochError::Domain(format!(
                "initial state outside the invariant box by {overshoot:.3e}"
            )));
        }
        for i in 0..n {
            st.v[i] = st.v[i].clamp(0.0, b);
            st.p[i] = st.p[i].clamp(th_min, 1.0);
        }
        Ok(())
    }

    /// The IMEX step plus the advective bound used for step-size control.
    fn step_inner(
        &self,
        state: &ParabolicState,
        dt: f64,
    ) -> Result<(ParabolicState, f64), StochError> {
        let n = self.grid.n();
        if state.v.len() != n || state.p.len() != n {
            return Err(StochError::Domain(format!(
                "state has {}/{} nodes, grid has {n}",
                state.v.len(),
                state.p.len()
            )));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(StochError::Domain(format!(
                "dt must be positive and finite, got {dt}"
            )));
        }
        if !(state.eps >= 0.0 && state.eps.is_finite()) {
            return Err(StochError::Domain(format!(
                "state.eps must be nonnegative and finite, got {}",
                state.eps
            )));
        }
        let q = self.model.params;
        let h = self.grid.h;
        let rl = q.r + q.lambda;
        let sig2 = q.sigma * q.sigma;
        let eps = state.eps;
        let b = q.bankruptcy_cost;
        let th_min = q.theta_min();
        let th = q.theta_at_xstar();

        // Explicit terms and diffusion coefficients.
        let mut ev = vec![0.0f64; n];
        let mut ep = vec![0.0f64; n];
        let mut diff = vec![0.0f64; n];
        let mut max_a = 0.0f64;
        for i in 1..n - 1 {
            let x = self.grid.xs[i];
            let xi = (state.v[i + 1] - state.v[i - 1]) / (2.0 * h);
            let he = self.model.hamiltonian(x, xi, state.p[i] + eps);
            let a = he.grad_xi;
            max_a = max_a.max(a.abs());
            let d = eps + 0.5 * sig2 * x * x;
            diff[i] = d;
            let pe = a.abs() * h / (2.0 * d);
            let w = ((pe - PECLET_CENTERED) / (PECLET_UPWIND - PECLET_CENTERED))
                .clamp(0.0, 1.0);
            let px_c = (state.p[i + 1] - state.p[i - 1]) / (2.0 * h);
            let px_u = if a > 0.0 {
                (state.p[i + 1] - state.p[i]) / h
            } else {
                (state.p[i] - state.p[i - 1]) / h
            };
            let px = (1.0 - w) * px_c + w * px_u;
            ev[i] = -q.r * state.v[i] + he.value;
            ep[i] = rl - (rl + he.v_opt) * state.p[i] + a * px;
        }

        // Implicit diffusion: identity boundary rows, interior rows
        // (1 + 2α)·y_i − α·(y_{i−1} + y_{i+1}) = y_i + dt·rate_i with
        // α = dt·D_i/h².
        let mut sub = vec![0.0f64; n];
        let mut dia = vec![1.0f64; n];
        let mut sup = vec![0.0f64; n];
        for i in 1..n - 1 {
            let alpha = dt * diff[i] / (h * h);
            sub[i] = -alpha;
            dia[i] = 1.0 + 2.0 * alpha;
            sup[i] = -alpha;
        }
        let mut rhs_v = vec![0.0f64; n];
        let mut rhs_p = vec![0.0f64; n];
        rhs_v[0] = 0.0;
        rhs_v[n - 1] = b;
        rhs_p[0] = 1.0;
        rhs_p[n - 1] = th;
        for i in 1..n - 1 {
            rhs_v[i] = state.v[i] + dt * ev[i];
            rhs_p[i] = state.p[i] + dt * ep[i];
        }
        let mut nv = thomas(&sub, &dia, &sup, &rhs_v);
        let mut np = thomas(&sub, &dia, &sup, &rhs_p);

        // Invariant-box audit.
        let mut overshoot = 0.0f64;
        for i in 0..n {
            overshoot = overshoot
                .max(-nv[i])
                .max(nv[i] - b)
                .max(th_min - np[i])
                .max(np[i] - 1.0);
        }
        if overshoot > BOX_TOL {
            return Err(StochError::Instability { dt, overshoot });
        }
        for i in 0..n {
            nv[i] = nv[i].clamp(0.0, b);
            np[i] = np[i].clamp(th_min, 1.0);
        }
        Ok((
            ParabolicState {
                v: nv,
                p: np,
                eps,
                t: state.t + dt,
            },
            max_a,
        ))
    }

    /// Count interior nodes whose advection difference is not fully
    /// centered at `state` (diagnostic for the certification: centered
    /// reconstruction matches the marched system only on centered nodes).
    fn count_upwind_influenced(&self, state: &ParabolicState) -> usize {
        let n = self.grid.n();
        let h = self.grid.h;
        let sig2 = self.model.params.sigma * self.model.params.sigma;
        let mut count = 0usize;
        for i in 1..n - 1 {
            let x = self.grid.xs[i];
            let xi = (state.v[i + 1] - state.v[i - 1]) / (2.0 * h);
            let a = self.model.h_xi(x, xi, state.p[i] + state.eps);
            let d = state.eps + 0.5 * sig2 * x * x;
            if a.abs() * h / (2.0 * d) > PECLET_CENTERED {
                count += 1;
            }
        }
        count
    }

    /// Near-origin price-barrier certificate (see [`BarrierCheck`]).
    fn barrier_check(&self, m_star: f64, p: &[f64]) -> BarrierCheck {
        let q = self.model.params;
        let rl = q.r + q.lambda;
        let delta0 = self.model.costs.delta0();
        let th_min = q.theta_min();
        let sig2 = q.sigma * q.sigma;
        let coefficient = 1.0 + 2.0 * m_star * m_star / (rl * delta0) + 1.0 / q.x_star;
        let denom = rl / th_min - q.lambda - q.mu + sig2;
        let exponent = (0.5f64).min(rl / denom);
        let x_range = ((1.0 - th_min) / coefficient).powf(1.0 / exponent);
        let mut min_margin = f64::INFINITY;
        for (i, &x) in self.grid.xs.iter().enumerate() {
            if x > x_range {
                break;
            }
            let envelope = 1.0 - coefficient * x.powf(exponent);
            min_margin = min_margin.min(p[i] - envelope);
        }
        BarrierCheck {
            coefficient,
            exponent,
            x_range,
            min_margin,
            ok: min_margin >= -BARRIER_SLACK,
        }
    }

    /// No interior local maximum of the discrete slope below
    /// `x̄₁ = min{1/(4(λ+r+σ²)), x*/2}` may exceed `8·L(1/2)`.
    fn gradient_bound_ok(&self, xi: &[f64]) -> bool {
        let q = self.model.params;
        let sig2 = q.sigma * q.sigma;
        let x1 = (1.0 / (4.0 * (q.lambda + q.r + sig2))).min(q.x_star / 2.0);
        let m1 = 8.0 * self.model.costs.cost_l(0.5);
        let n = self.grid.n();
        for i in 1..n - 1 {
            if self.grid.xs[i] >= x1 {
                break;
            }
            if xi[i] >= xi[i - 1] && xi[i] >= xi[i + 1] && xi[i] > m1 * (1.0 + 1e-9) {
                return false;
            }
        }
        true
    }
}

/// Sup-norm interior residuals of the ε-regularized steady system on the
/// given fields, by independent centered-difference reconstruction:
///
/// ```text
///   value: |r·V_i − H(x_i, ξ_i, p_i+ε) − (ε + σ²x_i²/2)·δ²V_i|
///   price: |(r+λ+v*(x_i,ξ_i))·p_i − (r+λ) − H_ξ(x_i,ξ_i,p_i+ε)·δp_i
///           − (ε + σ²x_i²/2)·δ²p_i|
/// ```
///
/// with `ξ_i`, `δp_i` centered first differences and `δ²` the centered
/// second difference. `eps = 0` gives the unregularized equilibrium system
/// (see [`equilibrium_residuals`]).
pub fn steady_residuals(
    model: &Model,
    grid: &Grid,
    v: &[f64],
    p: &[f64],
    eps: f64,
) -> (f64, f64) {
    let n = grid.n();
    assert_eq!(v.len(), n, "value field does not match the grid");
    assert_eq!(p.len(), n, "price field does not match the grid");
    let q = model.params;
    let h = grid.h;
    let rl = q.r + q.lambda;
    let sig2 = q.sigma * q.sigma;
    let mut res_v = 0.0f64;
    let mut res_p = 0.0f64;
    for i in 1..n - 1 {
        let x = grid.xs[i];
        let xi = (v[i + 1] - v[i - 1]) / (2.0 * h);
        let px = (p[i + 1] - p[i - 1]) / (2.0 * h);
        let vxx = (v[i + 1] - 2.0 * v[i] + v[i - 1]) / (h * h);
        let pxx = (p[i + 1] - 2.0 * p[i] + p[i - 1]) / (h * h);
        let d = eps + 0.5 * sig2 * x * x;
        let he = model.hamiltonian(x, xi, p[i] + eps);
        let rv = q.r * v[i] - he.value - d * vxx;
        let rp = (rl + he.v_opt) * p[i] - rl - he.grad_xi * px - d * pxx;
        res_v = res_v.max(rv.abs());
        res_p = res_p.max(rp.abs());
    }
    (res_v, res_p)
}

/// Sup-norm interior residuals of the unregularized equilibrium system
/// (σ-only diffusion) — [`steady_residuals`] at `ε = 0`.
pub fn equilibrium_residuals(model: &Model, grid: &Grid, v: &[f64], p: &[f64]) -> (f64, f64) {
    steady_residuals(model, grid, v, p, 0.0)
}

/// Tridiagonal solve (Thomas algorithm). `sub[0]` and `sup[n−1]` are
/// ignored. The marching matrices are strictly diagonally dominant, so no
/// pivoting is needed.
fn thomas(sub: &[f64], dia: &[f64], sup: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = dia.len();
    debug_assert!(sub.len() == n && sup.len() == n && rhs.len() == n);
    let mut c = vec![0.0f64; n];
    let mut d = vec![0.0f64; n];
    c[0] = sup[0] / dia[0];
    d[0] = rhs[0] / dia[0];
    for i in 1..n {
        let m = dia[i] - sub[i] * c[i - 1];
        c[i] = sup[i] / m;
        d[i] = (rhs[i] - sub[i] * d[i - 1]) / m;
    }
    let mut y = vec![0.0f64; n];
    y[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        y[i] = d[i] - c[i] * y[i + 1];
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costs::CostModel;
    use crate::params::{ModelParams, SalvageRate};

    /// Canonical stochastic configuration used across the test suite (and
    /// mirrored in configs/stoch_canonical.toml): moderate noise, finite
    /// devaluation cap, constant salvage rate.
    fn canonical_model() -> Model {
        let params = ModelParams {
            r: 0.2,
            mu: 0.05,
            lambda: 0.2,
            sigma: 0.3,
            x_star: 1.5,
            bankruptcy_cost: 1.0,
            v_max: 0.25,
            theta: SalvageRate::Constant { theta0: 0.6 },
        };
        let costs = CostModel::new(0.0, 1.0, 0.05, 0.5, 0.25).expect("valid costs");
        Model::new(params, costs).expect("valid model")
    }

    /// Reference anchors frozen from an independent adaptive-collocation
    /// BVP solve of the regularized steady system (SciPy solve_bvp,
    /// mesh-refined, tol 1e-8 for ε ≥ 1e-4, tol ≤ 3e-7 below), at
    /// x = 0.375, 0.75, 1.125 — grid nodes for every n used here.
    const ANCHOR_XS: [f64; 3] = [0.375, 0.75, 1.125];
    const V_EPS_1E2: [f64; 3] = [0.076680059344, 0.235647373560, 0.516862408164];
    const P_EPS_1E2: [f64; 3] = [0.933480848427, 0.830539545190, 0.750752128325];
    const V_EPS_1E4: [f64; 3] = [0.055526691678, 0.208023763284, 0.487511911201];
    const P_EPS_1E4: [f64; 3] = [0.945896633671, 0.831630267218, 0.754195184370];
    const V_EPS_1E6: [f64; 3] = [0.055181421444, 0.207666927442, 0.487149969599];
    const P_EPS_1E6: [f64; 3] = [0.946086654909, 0.831641155169, 0.754230639583];
    /// Extrapolation of the collocation anchors to ε = 0 through
    /// ε ∈ {1e-4, 1e-5, 1e-6} (agrees with the two-point extrapolation
    /// through {1e-5, 1e-6} to 1.5e-8).
    const V_LIMIT: [f64; 3] = [0.055177786408, 0.207663242978, 0.487146259742];
    const P_LIMIT: [f64; 3] = [0.946088576193, 0.831641263615, 0.754230999065];

    fn anchor_nodes(n: usize) -> [usize; 3] {
        [(n - 1) / 4, (n - 1) / 2, 3 * (n - 1) / 4]
    }

    #[test]
    fn grid_uniform_endpoints_exact() {
        let g = Grid::uniform(1.5, 401).unwrap();
        assert_eq!(g.n(), 401);
        assert_eq!(g.xs[0], 0.0);
        assert_eq!(g.xs[400], 1.5);
        assert!((g.h - 1.5 / 400.0).abs() < 1e-18);
        for w in g.xs.windows(2) {
            assert!(w[1] > w[0]);
        }
        // anchor coordinates are exact grid nodes
        let idx = anchor_nodes(401);
        for (k, &i) in idx.iter().enumerate() {
            assert!((g.xs[i] - ANCHOR_XS[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn grid_rejects_bad_requests() {
        assert!(matches!(Grid::uniform(1.5, 2), Err(StochError::Grid(_))));
        assert!(matches!(
            Grid::uniform(0.0, 10),
            Err(StochError::Grid(_))
        ));
        assert!(matches!(
            Grid::uniform(f64::NAN, 10),
            Err(StochError::Grid(_))
        ));
    }

    #[test]
    fn solver_rejects_deterministic_params() {
        let mut m = canonical_model();
        m.params.sigma = 0.0;
        assert!(matches!(
            StochSolver::new(m, 101),
            Err(StochError::Param(_))
        ));
    }

    #[test]
    fn initial_state_is_pinned_and_boxed() {
        let solver = StochSolver::new(canonical_model(), 101).unwrap();
        let st = solver.initial_state(1e-2);
        let q = solver.model().params;
        assert_eq!(st.v[0], 0.0);
        assert_eq!(st.v[100], q.bankruptcy_cost);
        assert_eq!(st.p[0], 1.0);
        assert_eq!(st.p[100], q.theta_at_xstar());
        let th_min = q.theta_min();
        for i in 0..101 {
            assert!(st.v[i] >= 0.0 && st.v[i] <= q.bankruptcy_cost);
            assert!(st.p[i] >= th_min && st.p[i] <= 1.0);
        }
    }

    #[test]
    fn step_preserves_box_and_boundaries_from_corners() {
        // Box-corner initial data (interior saturated at each corner of
        // [0,B] × [θ_min,1]) must remain inside the box after a step.
        let solver = StochSolver::new(canonical_model(), 101).unwrap();
        let q = solver.model().params;
        let th_min = q.theta_min();
        let corners = [
            (0.0, th_min),
            (0.0, 1.0),
            (q.bankruptcy_cost, th_min),
            (q.bankruptcy_cost, 1.0),
        ];
        for (vc, pc) in corners {
            let mut st = solver.initial_state(1e-2);
            for i in 1..100 {
                st.v[i] = vc;
                st.p[i] = pc;
            }
            let next = solver.parabolic_step(&st, 1e-3).unwrap();
            assert_eq!(next.v[0], 0.0);
            assert_eq!(next.v[100], q.bankruptcy_cost);
            assert_eq!(next.p[0], 1.0);
            assert_eq!(next.p[100], q.theta_at_xstar());
            for i in 0..101 {
                assert!(
                    next.v[i] >= 0.0 && next.v[i] <= q.bankruptcy_cost,
                    "v[{i}] = {} outside box from corner ({vc}, {pc})",
                    next.v[i]
                );
                assert!(
                    next.p[i] >= th_min && next.p[i] <= 1.0,
                    "p[{i}] = {} outside box from corner ({vc}, {pc})",
                    next.p[i]
                );
            }
        }
    }

    #[test]
    fn step_rejects_mismatched_state_and_bad_dt() {
        let solver = StochSolver::new(canonical_model(), 101).unwrap();
        let st = solver.initial_state(1e-2);
        let mut short = st.clone();
        short.v.pop();
        assert!(matches!(
            solver.parabolic_step(&short, 1e-3),
            Err(StochError::Domain(_))
        ));
        assert!(matches!(
            solver.parabolic_step(&st, 0.0),
            Err(StochError::Domain(_))
        ));
        assert!(matches!(
            solver.parabolic_step(&st, f64::NAN),
            Err(StochError::Domain(_))
        ));
    }

    #[test]
    fn fixed_dt_march_update_norm_shrinks() {
        // 10^4 explicit-size steps at dt = 1e-3 from the linear initial
        // state: the update norm after the transient must fall below the
        // initial update norm.
        let solver = StochSolver::new(canonical_model(), 101).unwrap();
        let mut st = solver.initial_state(1e-2);
        let dt = 1e-3;
        let mut first = None;
        let mut last = 0.0;
        for _ in 0..10_000 {
            let next = solver.parabolic_step(&st, dt).unwrap();
            let mut diff = 0.0f64;
            for i in 0..101 {
                diff = diff
                    .max((next.v[i] - st.v[i]).abs())
                    .max((next.p[i] - st.p[i]).abs());
            }
            if first.is_none() {
                first = Some(diff);
            }
            last = diff;
            st = next;
        }
        let first = first.unwrap();
        println!("fixed-dt march: first update {first:.3e}, last {last:.3e}");
        assert!(
            last < 0.05 * first,
            "update norm did not shrink: first {first:.3e}, last {last:.3e}"
        );
    }

    #[test]
    fn steady_state_is_fixed_point_of_any_dt() {
        // The steady state solves the dt-independent discrete system, so a
        // further step at an unrelated dt must not move it.
        let solver = StochSolver::new(canonical_model(), 101).unwrap();
        let (st, rec) = solver.steady_state(1e-2, None).unwrap();
        assert!(rec.update_rate < TOL_STEADY);
        for &dt in &[1e-3, 1e-2] {
            let next = solver.parabolic_step(&st, dt).unwrap();
            let mut diff = 0.0f64;
            for i in 0..101 {
                diff = diff
                    .max((next.v[i] - st.v[i]).abs())
                    .max((next.p[i] - st.p[i]).abs());
            }
            assert!(
                diff <= dt * TOL_PDE,
                "fixed point moved by {diff:.3e} at dt = {dt}"
            );
        }
    }

    #[test]
    fn steady_state_monotone_value_and_exact_boundaries() {
        let solver = StochSolver::new(canonical_model(), 101).unwrap();
        let (st, _) = solver.steady_state(1e-2, None).unwrap();
        let q = solver.model().params;
        assert_eq!(st.v[0], 0.0);
        assert_eq!(st.v[100], q.bankruptcy_cost);
        assert_eq!(st.p[0], 1.0);
        assert_eq!(st.p[100], q.theta_at_xstar());
        for w in st.v.windows(2) {
            assert!(w[1] >= w[0] - MONO_SLACK, "steady V not monotone");
        }
    }

    #[test]
    fn steady_state_residual_small_canonical_n201() {
        // Canonical parameters, ε = 1e-2, n = 201: the fixed point must
        // solve the regularized steady system to well under 1e-6 under
        // independent centered reconstruction, and must sit on the
        // collocation anchors to discretization accuracy.
        let solver = StochSolver::new(canonical_model(), 201).unwrap();
        let (st, rec) = solver.steady_state(1e-2, None).unwrap();
        assert!(
            rec.residual_eps_v < 1e-6 && rec.residual_eps_p < 1e-6,
            "steady residuals too large: V {:.3e}, p {:.3e}",
            rec.residual_eps_v,
            rec.residual_eps_p
        );
        assert_eq!(rec.upwind_influenced, 0, "expected fully centered march");
        let idx = anchor_nodes(201);
        for (k, &i) in idx.iter().enumerate() {
            let dv = (st.v[i] - V_EPS_1E2[k]).abs();
            let dp = (st.p[i] - P_EPS_1E2[k]).abs();
            assert!(
                dv < 2e-5 && dp < 1e-5,
                "anchor {k}: dv {dv:.3e}, dp {dp:.3e}"
            );
            println!("n=201 eps=1e-2 anchor {k}: dv {dv:.3e} dp {dp:.3e}");
        }
    }

    #[test]
    fn steady_state_anchors_n401_eps_1e2() {
        let solver = StochSolver::new(canonical_model(), 401).unwrap();
        let (st, rec) = solver.steady_state(1e-2, None).unwrap();
        assert!(rec.residual_eps_v < 1e-6 && rec.residual_eps_p < 1e-6);
        let idx = anchor_nodes(401);
        for (k, &i) in idx.iter().enumerate() {
            let dv = (st.v[i] - V_EPS_1E2[k]).abs();
            let dp = (st.p[i] - P_EPS_1E2[k]).abs();
            assert!(
                dv < 5e-6 && dp < 2e-6,
                "anchor {k}: dv {dv:.3e}, dp {dp:.3e}"
            );
            println!("n=401 eps=1e-2 anchor {k}: dv {dv:.3e} dp {dp:.3e}");
        }
    }

    #[test]
    fn steady_state_anchors_n201_eps_1e4_cold_start() {
        // A small-ε rung solved without any warm start must land on the
        // same fixed point the ladder reaches (the march is globally
        // attracting from the linear initial state).
        let solver = StochSolver::new(canonical_model(), 201).unwrap();
        let (st, rec) = solver.steady_state(1e-4, None).unwrap();
        assert!(rec.residual_eps_v < 1e-6 && rec.residual_eps_p < 1e-6);
        let idx = anchor_nodes(201);
        for (k, &i) in idx.iter().enumerate() {
            let dv = (st.v[i] - V_EPS_1E4[k]).abs();
            let dp = (st.p[i] - P_EPS_1E4[k]).abs();
            println!("n=201 eps=1e-4 cold anchor {k}: dv {dv:.3e} dp {dp:.3e}");
            assert!(
                dv < 5e-5 && dp < 5e-5,
                "anchor {k}: dv {dv:.3e}, dp {dp:.3e}"
            );
        }
    }

    #[test]
    fn steady_state_rejects_bad_eps_and_init() {
        let solver = StochSolver::new(canonical_model(), 101).unwrap();
        assert!(matches!(
            solver.steady_state(0.0, None),
            Err(StochError::Domain(_))
        ));
        assert!(matches!(
            solver.steady_state(-1e-3, None),
            Err(StochError::Domain(_))
        ));
        let mut bad = solver.initial_state(1e-2);
        bad.v[50] = 2.0; // far outside [0, B]
        assert!(matches!(
            solver.steady_state(1e-2, Some(bad)),
            Err(StochError::Domain(_))
        ));
    }

    #[test]
    fn continuation_full_ladder_n101_properties() {
        let solver = StochSolver::new(canonical_model(), 101).unwrap();
        let sol = solver.continuation_to_zero().unwrap();
        let q = solver.model().params;
        let n = 101;

        // Invariant box and exact boundaries on the floor fields.
        assert_eq!(sol.v[0], 0.0);
        assert_eq!(sol.v[n - 1], q.bankruptcy_cost);
        assert_eq!(sol.p[0], 1.0);
        assert_eq!(sol.p[n - 1], q.theta_at_xstar());
        assert_eq!(sol.v_limit[0], 0.0);
        assert_eq!(sol.p_limit[0], 1.0);
        let th_min = q.theta_min();
        for i in 0..n {
            assert!(sol.v[i] >= 0.0 && sol.v[i] <= q.bankruptcy_cost);
            assert!(sol.p[i] >= th_min && sol.p[i] <= 1.0);
        }
        assert!(sol.monotone_v, "floor value field must be nondecreasing");

        // Ladder bookkeeping.
        assert_eq!(sol.eps_history, DEFAULT_EPS_LADDER.to_vec());
        assert_eq!(sol.rungs.len(), 7);
        for (rec, &eps) in sol.rungs.iter().zip(sol.eps_history.iter()) {
            assert_eq!(rec.eps, eps);
            assert!(rec.update_rate < TOL_STEADY);
        }

        // Equilibrium-system residual decreases down the ladder and the
        // limit estimate certifies below tol_pde.
        for w in sol.rungs.windows(2) {
            let prev = w[0].residual_zero_v.max(w[0].residual_zero_p);
            let curr = w[1].residual_zero_v.max(w[1].residual_zero_p);
            assert!(curr < prev, "residual should drop along the ladder");
        }
        println!(
            "n=101 residuals: limit V {:.3e} p {:.3e}; floor V {:.3e} p {:.3e}",
            sol.residual_v, sol.residual_p, sol.floor_residual_v, sol.floor_residual_p
        );
        assert!(
            sol.residual_v < TOL_PDE && sol.residual_p < TOL_PDE,
            "limit residuals: V {:.3e}, p {:.3e}",
            sol.residual_v,
            sol.residual_p
        );
        assert!(
            sol.residual_v < sol.floor_residual_v
                && sol.residual_p < sol.floor_residual_p,
            "extrapolation must improve on the floor"
        );
        // The floor fields keep an O(ε_floor) regularization bias: for this
        // configuration the bias constants are ≈ 2.2 (value) and ≈ 3.5
        // (price) per unit ε.
        assert!(
            sol.floor_residual_v < 1e-5 && sol.floor_residual_p < 1e-5,
            "floor residual scale changed: V {:.3e}, p {:.3e}",
            sol.floor_residual_v,
            sol.floor_residual_p
        );

        // M* stability across the last two rungs (within 5%).
        let m_prev = sol.rungs[5].m_star;
        let m_last = sol.rungs[6].m_star;
        assert!(
            (m_last - m_prev).abs() <= 0.05 * m_last,
            "M* unstable: {m_prev} vs {m_last}"
        );
        println!("n=101 m_star {:.6} band {:.5}", sol.m_star, sol.no_dev_band);

        // No-devaluation band: positive edge, v* = 0 strictly inside,
        // active devaluation somewhere on the grid.
        assert!(sol.no_dev_band > 0.0);
        let c_prime = solver.model().costs.deriv_c(0.0);
        assert!((sol.no_dev_band - (c_prime / sol.m_star)).abs() < 1e-12);
        for i in 0..n {
            if solver.grid().xs[i] < sol.no_dev_band {
                assert_eq!(sol.v_star[i], 0.0, "v* must vanish inside the band");
            }
        }
        assert!(
            sol.v_star.iter().any(|&w| w > 0.0),
            "devaluation should activate beyond the band for this config"
        );

        // Policies at the left boundary: v*[0] exactly 0; u*[0] merely
        // O(√ε_floor) because V'(0) ~ 2√(ε·V''(0)) at the floor.
        assert_eq!(sol.v_star[0], 0.0);
        assert!(
            sol.u_star[0] >= 0.0 && sol.u_star[0] < 2e-3,
            "u*[0] = {} should be O(√eps_floor)",
            sol.u_star[0]
        );
        for &u in &sol.u_star {
            assert!((0.0..1.0).contains(&u));
        }
        for &w in &sol.v_star {
            assert!((0.0..q.v_max).contains(&w) || w == 0.0);
        }

        // Barrier and gradient-bound certificates.
        assert!(sol.barrier.ok, "barrier margin {:.3e}", sol.barrier.min_margin);
        assert!(sol.barrier.coefficient > 1.0);
        assert!(sol.barrier.exponent > 0.0 && sol.barrier.exponent <= 0.5);
        assert!(sol.gradient_bound_ok);

        // Floor anchors against the collocation reference.
        let idx = anchor_nodes(n);
        for (k, &i) in idx.iter().enumerate() {
            let dv = (sol.v[i] - V_EPS_1E6[k]).abs();
            let dp = (sol.p[i] - P_EPS_1E6[k]).abs();
            let dvl = (sol.v_limit[i] - V_LIMIT[k]).abs();
            let dpl = (sol.p_limit[i] - P_LIMIT[k]).abs();
            println!(
                "n=101 anchor {k}: floor dv {dv:.3e} dp {dp:.3e}; limit dv {dvl:.3e} dp {dpl:.3e}"
            );
            assert!(dv < 1e-4 && dp < 1e-4, "floor anchor {k}: {dv:.3e}/{dp:.3e}");
            assert!(
                dvl < 1e-4 && dpl < 1e-4,
                "limit anchor {k}: {dvl:.3e}/{dpl:.3e}"
            );
        }
    }

    #[test]
    fn continuation_grid_refinement_converges() {
        // Spatial refinement on a reduced ladder (floor 1e-3): the change
        // from n=201 to n=401 must be smaller than the change from n=101
        // to n=201 at shared nodes, and the n=401 fields must be closest
        // to the collocation anchors.
        let ladder = vec![1e-2, 3e-3, 1e-3];
        let mut fields: Vec<(usize, Vec<f64>, Vec<f64>)> = Vec::new();
        for &n in &[101usize, 201, 401] {
            let opts = StochOptions {
                eps_ladder: ladder.clone(),
                ..StochOptions::default()
            };
            let solver = StochSolver::with_options(canonical_model(), n, opts).unwrap();
            let sol = solver.continuation_to_zero().unwrap();
            fields.push((n, sol.v, sol.p));
        }
        let at = |k: usize, f: &(usize, Vec<f64>, Vec<f64>)| {
            let idx = anchor_nodes(f.0);
            (f.1[idx[k]], f.2[idx[k]])
        };
        for k in 0..3 {
            let (v1, p1) = at(k, &fields[0]);
            let (v2, p2) = at(k, &fields[1]);
            let (v4, p4) = at(k, &fields[2]);
            let dv_12 = (v2 - v1).abs();
            let dv_24 = (v4 - v2).abs();
            let dp_12 = (p2 - p1).abs();
            let dp_24 = (p4 - p2).abs();
            println!(
                "refinement anchor {k}: dv 101->201 {dv_12:.3e}, 201->401 {dv_24:.3e}; \
                 dp {dp_12:.3e}, {dp_24:.3e}"
            );
            assert!(dv_24 < dv_12, "value refinement not monotone at anchor {k}");
            assert!(dp_24 < dp_12, "price refinement not monotone at anchor {k}");
            // refinement-ratio guard: halving h must not grow the change
            assert!(dv_24 < 4.0 * dv_12);
            assert!(dp_24 < 4.0 * dp_12);
        }
    }

    #[test]
    fn continuation_rejects_bad_ladders() {
        let model = canonical_model();
        for ladder in [
            vec![],
            vec![1e-2, 1e-2],
            vec![1e-3, 1e-2],
            vec![1e-2, -1e-3],
        ] {
            let opts = StochOptions {
                eps_ladder: ladder,
                ..StochOptions::default()
            };
            let solver = StochSolver::with_options(model, 11, opts).unwrap();
            assert!(matches!(
                solver.continuation_to_zero(),
                Err(StochError::Domain(_))
            ));
        }
    }

    #[test]
    fn continuation_detects_stall() {
        // A ladder that barely moves ε cannot improve the equilibrium
        // residual by the required factor.
        let opts = StochOptions {
            eps_ladder: vec![1e-2, 0.999e-2],
            ..StochOptions::default()
        };
        let solver = StochSolver::with_options(canonical_model(), 51, opts).unwrap();
        match solver.continuation_to_zero() {
            Err(StochError::ContinuationStalled { .. }) => {}
            other => panic!("expected stall, got {other:?}"),
        }
    }

    #[test]
    fn huge_dt_step_reports_instability() {
        let solver = StochSolver::new(canonical_model(), 51).unwrap();
        let st = solver.initial_state(1e-2);
        match solver.parabolic_step(&st, 1e6) {
            Err(StochError::Instability { overshoot, .. }) => {
                assert!(overshoot > BOX_TOL);
            }
            other => panic!("expected instability, got {other:?}"),
        }
    }

    #[test]
    fn extract_policy_thresholds() {
        let solver = StochSolver::new(canonical_model(), 101).unwrap();
        let (st, _) = solver.steady_state(1e-2, None).unwrap();
        let (u, w) = solver.extract_policy(&st.v, &st.p);
        let c_prime = solver.model().costs.deriv_c(0.0);
        let h = solver.grid().h;
        for i in 0..101 {
            let xi = if i == 0 {
                (-3.0 * st.v[0] + 4.0 * st.v[1] - st.v[2]) / (2.0 * h)
            } else if i == 100 {
                (3.0 * st.v[100] - 4.0 * st.v[99] + st.v[98]) / (2.0 * h)
            } else {
                (st.v[i + 1] - st.v[i - 1]) / (2.0 * h)
            };
            let active = solver.grid().xs[i] * xi > c_prime;
            assert_eq!(
                w[i] > 0.0,
                active,
                "devaluation threshold violated at node {i}"
            );
            assert!((0.0..1.0).contains(&u[i]));
        }
        assert_eq!(w[0], 0.0);
    }

    #[test]
    fn residual_functions_reject_mismatched_fields() {
        let model = canonical_model();
        let grid = Grid::uniform(model.params.x_star, 11).unwrap();
        let v = vec![0.0; 10];
        let p = vec![1.0; 11];
        let result = std::panic::catch_unwind(|| {
            steady_residuals(&model, &grid, &v, &p, 1e-2)
        });
        assert!(result.is_err());
    }

    #[test]
    fn thomas_solves_reference_system() {
        // Diagonally dominant 5×5 system with known solution.
        let sub = [0.0, -1.0, -1.0, -1.0, -1.0];
        let dia = [4.0, 4.0, 4.0, 4.0, 4.0];
        let sup = [-1.0, -1.0, -1.0, -1.0, 0.0];
        let x_true = [1.0, -2.0, 3.0, -4.0, 5.0];
        let mut rhs = [0.0f64; 5];
        for i in 0..5 {
            rhs[i] = dia[i] * x_true[i];
            if i > 0 {
                rhs[i] += sub[i] * x_true[i - 1];
            }
            if i < 4 {
                rhs[i] += sup[i] * x_true[i + 1];
            }
        }
        let y = thomas(&sub, &dia, &sup, &rhs);
        for i in 0..5 {
            assert!((y[i] - x_true[i]).abs() < 1e-12);
        }
    }
}
