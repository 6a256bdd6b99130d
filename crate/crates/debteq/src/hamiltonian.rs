//! The Hamiltonian of the debt-management problem and its branch machinery.
//!
//! For a debt-to-income level `x`, adjoint variable `ξ` (the slope of the
//! value function), and bond price `p`, the Hamiltonian is
//!
//! ```text
//! H(x, ξ, p) = −L°(ξ/p) − c°(x·ξ) + ((λ+r)/p − λ − μ + σ²)·x·ξ
//! ```
//!
//! where `L°`, `c°` are the convex conjugates of the running-cost families.
//! `H` is concave in `ξ`, vanishes at `ξ = 0`, and attains a unique maximum
//! `h_max(x, p)` at the branch point `ξ♯(x, p)` where `H_ξ = 0`. For value
//! levels `r·η` below the maximum, the equation `H(x, ξ, p) = r·η` has
//! exactly two solutions `F⁻ < ξ♯ < F⁺`; the lower branch corresponds to
//! rising debt, the upper branch to falling debt, and the two merge at the
//! stationary locus `r·η = h_max`. The normal-form slope `G⁻` propagates
//! the bond price along the lower branch.
//!
//! Everything here is a pure function of `(x, ξ, p)` and the immutable
//! model; all solvers — the parabolic relaxation, the backward arc
//! construction, and the simulators — consume these evaluations.

use crate::costs::CostModel;
use crate::params::{ModelParams, ParamError};
use crate::roots::{bisect_newton, TOL_ROOT};
use serde::{Deserialize, Serialize};

/// Geometric-growth cap for adjoint brackets; exceeding it aborts with a
/// diagnostic error rather than looping forever.
pub const XI_CAP: f64 = 1e12;

/// Relative slack under which `r·η` is treated as exactly the Hamiltonian
/// maximum, returning the branch point instead of a no-solution error.
const MERGE_SLACK: f64 = 1e-9;

/// A full Hamiltonian evaluation: value, gradient, and minimizing controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HamiltonEval {
    /// `H(x, ξ, p)`.
    pub value: f64,
    /// `∂H/∂x = ((λ+r) − p(λ+μ+v* − σ²))·ξ/p`.
    pub grad_x: f64,
    /// `∂H/∂ξ = (x((λ+r) − p(λ+μ+v* − σ²)) − u*)/p`.
    pub grad_xi: f64,
    /// `∂H/∂p = (u* − x(λ+r))·ξ/p²`.
    pub grad_p: f64,
    /// Minimizing repayment fraction `u*(ξ, p) ∈ [0, 1)`.
    pub u_opt: f64,
    /// Minimizing devaluation rate `v*(x, ξ) ∈ [0, v_max)`.
    pub v_opt: f64,
}

/// The maximizer of `ξ ↦ H(x, ξ, p)` and the data attached to it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchPoint {
    /// Argmax `ξ♯(x, p)` of the concave map `ξ ↦ H(x, ξ, p)`.
    pub xi_sharp: f64,
    /// Maximum value `h_max(x, p) = H(x, ξ♯, p)`.
    pub h_max: f64,
    /// Repayment control at the maximizer.
    pub u_sharp: f64,
    /// Devaluation control at the maximizer.
    pub v_sharp: f64,
}

/// Which solution of `H(x, ξ, p) = r·η` to select.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// Lower branch `F⁻ ≤ ξ♯` (debt ratio rising along the closed loop).
    Minus,
    /// Upper branch `F⁺ ≥ ξ♯` (debt ratio falling along the closed loop).
    Plus,
}

/// Joint lower-branch evaluation used as the backward-arc right-hand side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchRhs {
    /// `F⁻(x, η, p)`: the value-function slope.
    pub f: f64,
    /// `G⁻(x, η, p)`: the price slope.
    pub g: f64,
    /// `H_ξ` at the branch solution (degeneracy indicator; → 0 at merge).
    pub h_xi: f64,
    /// Repayment control at the branch solution.
    pub u_opt: f64,
    /// Devaluation control at the branch solution.
    pub v_opt: f64,
}

/// Failures of the branch machinery: missing maximizer brackets, value
/// levels above the Hamiltonian maximum, or degenerate slopes. Each carries
/// the evaluation point for diagnostics.
#[derive(Debug, Clone, thiserror::Error)]
pub enum BranchError {
    #[error(
        "H_xi(x={x}, ., p={p}) keeps a positive sign up to the adjoint cap {cap:.1e}: \
         the Hamiltonian has no interior maximum in xi (capped devaluation too weak \
         to offset accrual at this price)"
    )]
    NoBranchPoint { x: f64, p: f64, cap: f64 },
    #[error(
        "value level r*eta = {level} exceeds the Hamiltonian maximum h_max = {h_max} \
         at (x={x}, p={p}): H(x, ., p) = r*eta has no solution"
    )]
    LevelAboveMax {
        x: f64,
        p: f64,
        level: f64,
        h_max: f64,
    },
    #[error(
        "H(x={x}, ., p={p}) stays above r*eta = {level} up to the adjoint cap {cap:.1e}: \
         no upper-branch solution"
    )]
    NoUpperBranch {
        x: f64,
        p: f64,
        level: f64,
        cap: f64,
    },
    #[error(
        "H_xi vanishes at the branch solution for (x={x}, eta={eta}, p={p}): \
         price slope undefined, the arc has reached the stationary locus"
    )]
    DegenerateSlope { x: f64, eta: f64, p: f64 },
}

/// Immutable bundle of model parameters and cost families; the evaluation
/// context every solver shares. All methods are pure and thread-safe.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Model {
    pub params: ModelParams,
    pub costs: CostModel,
}

impl Model {
    /// Bundle validated parameters with a cost family. The devaluation caps
    /// carried by `params` and `costs` must agree.
    pub fn new(params: ModelParams, costs: CostModel) -> Result<Self, ParamError> {
        params.validate()?;
        if !(params.v_max == costs.v_max
            || (params.v_max.is_infinite() && costs.v_max.is_infinite()))
        {
            return Err(ParamError::OutOfRange {
                name: "v_max",
                value: costs.v_max,
                requirement: "cost-family devaluation cap must equal the model's v_max",
            });
        }
        Ok(Model { params, costs })
    }

    /// Accrual coefficient `(λ+r)/p − λ − μ + σ²` multiplying `x·ξ`.
    #[inline]
    pub fn accrual(&self, p: f64) -> f64 {
        let q = &self.params;
        (q.lambda + q.r) / p - q.lambda - q.mu + q.sigma * q.sigma
    }

    /// Optimal repayment fraction `u*(ξ, p)`: zero below the marginal-cost
    /// threshold `ξ/p ≤ L'(0)`, else `(L')⁻¹(ξ/p)`.
    pub fn u_star(&self, xi: f64, p: f64) -> f64 {
        assert!(p > 0.0, "u_star requires a positive price, got p = {p}");
        self.costs.inv_deriv_l(xi / p)
    }

    /// Optimal devaluation rate `v*(x, ξ)`: zero below the threshold
    /// `x·ξ ≤ c'(0)`, else `(c')⁻¹(x·ξ)`.
    pub fn v_star(&self, x: f64, xi: f64) -> f64 {
        assert!(x >= 0.0, "v_star requires x >= 0, got x = {x}");
        self.costs.inv_deriv_c(x * xi)
    }

    /// Hamiltonian value alone (hot-path helper).
    pub fn h_value(&self, x: f64, xi: f64, p: f64) -> f64 {
        assert!(
            p > 0.0,
            "Hamiltonian requires a positive price, got p = {p}"
        );
        let conj_l = self.costs.conjugate_l(xi / p);
        let conj_c = self.costs.conjugate_c(x * xi);
        -conj_l - conj_c + self.accrual(p) * x * xi
    }

    /// `H_ξ(x, ξ, p)` alone (hot-path helper): the closed-loop drift of the
    /// debt ratio under the optimal feedback.
    pub fn h_xi(&self, x: f64, xi: f64, p: f64) -> f64 {
        assert!(p > 0.0, "H_xi requires a positive price, got p = {p}");
        let q = &self.params;
        let u = self.costs.inv_deriv_l(xi / p);
        let v = self.costs.inv_deriv_c(x * xi);
        (x * ((q.lambda + q.r) - p * (q.lambda + q.mu + v - q.sigma * q.sigma)) - u) / p
    }

    /// Full Hamiltonian evaluation: value, gradient, and controls.
    pub fn hamiltonian(&self, x: f64, xi: f64, p: f64) -> HamiltonEval {
        assert!(
            p > 0.0,
            "Hamiltonian requires a positive price, got p = {p}"
        );
        assert!(x >= 0.0, "Hamiltonian requires x >= 0, got x = {x}");
        let q = &self.params;
        let u = self.costs.inv_deriv_l(xi / p);
        let v = self.costs.inv_deriv_c(x * xi);
        // Conjugates recomputed from the already-known maximizers: the
        // supremum of rho·w − cost(w) sits at w = u (resp. v) by the
        // first-order condition, and at w = 0 below the threshold.
        let conj_l = if u > 0.0 {
            (xi / p) * u - self.costs.cost_l(u)
        } else {
            0.0
        };
        let conj_c = if v > 0.0 {
            x * xi * v - self.costs.cost_c(v)
        } else {
            0.0
        };
        let sig2 = q.sigma * q.sigma;
        let carry = (q.lambda + q.r) - p * (q.lambda + q.mu + v - sig2);
        HamiltonEval {
            value: -conj_l - conj_c + self.accrual(p) * x * xi,
            grad_x: carry * xi / p,
            grad_xi: (x * carry - u) / p,
            grad_p: (u - x * (q.lambda + q.r)) * xi / (p * p),
            u_opt: u,
            v_opt: v,
        }
    }

    /// Second derivative `H_ξξ(x, ξ, p) ≤ 0` (zero on the band where both
    /// controls are inactive). Supplied to the safeguarded Newton steps.
    fn h_xi_xi(&self, x: f64, xi: f64, p: f64) -> f64 {
        let mut d = 0.0;
        let u = self.costs.inv_deriv_l(xi / p);
        if u > 0.0 {
            d -= 1.0 / (p * p * self.costs.deriv2_l(u));
        }
        let v = self.costs.inv_deriv_c(x * xi);
        if v > 0.0 {
            d -= x * x / self.costs.deriv2_c(v);
        }
        d
    }

    /// Branch point `ξ♯(x, p)`: the unique zero of the strictly-decreasing
    /// map `ξ ↦ H_ξ(x, ξ, p)`, located by geometric bracket growth from 1
    /// (capped at [`XI_CAP`]) followed by bisection with safeguarded Newton
    /// to bracket width [`TOL_ROOT`]. Returns the degenerate boundary
    /// maximizer `ξ♯ = 0` when `H_ξ(x, 0, p) ≤ 0`.
    pub fn xi_sharp(&self, x: f64, p: f64) -> Result<BranchPoint, BranchError> {
        assert!(x > 0.0, "xi_sharp requires x > 0, got x = {x}");
        assert!(p > 0.0, "xi_sharp requires p > 0, got p = {p}");
        if self.h_xi(x, 0.0, p) <= 0.0 {
            // Accrual already dominated at ξ = 0: the restricted maximum
            // over ξ ≥ 0 sits at the boundary.
            return Ok(BranchPoint {
                xi_sharp: 0.0,
                h_max: 0.0,
                u_sharp: 0.0,
                v_sharp: 0.0,
            });
        }
        let mut hi = 1.0;
        while self.h_xi(x, hi, p) > 0.0 {
            hi *= 2.0;
            if hi > XI_CAP {
                return Err(BranchError::NoBranchPoint { x, p, cap: XI_CAP });
            }
        }
        let xi = bisect_newton(
            |xi| self.h_xi(x, xi, p),
            |xi| self.h_xi_xi(x, xi, p),
            0.0,
            hi,
            TOL_ROOT,
        )
        .expect("H_xi changes sign on the constructed bracket");
        Ok(BranchPoint {
            xi_sharp: xi,
            h_max: self.h_value(x, xi, p),
            u_sharp: self.u_star(xi, p),
            v_sharp: self.v_star(x, xi),
        })
    }

    /// `h_max(x, p) = max_{ξ ≥ 0} H(x, ξ, p)` (convenience wrapper).
    pub fn h_max(&self, x: f64, p: f64) -> Result<f64, BranchError> {
        Ok(self.xi_sharp(x, p)?.h_max)
    }

    /// Solve `H(x, ξ, p) = r·η` on the requested branch. Levels within a
    /// relative slack of `h_max` return the branch point (the two solutions
    /// merge there); levels above it are a no-solution error.
    pub fn f_branch(&self, x: f64, eta: f64, p: f64, branch: Branch) -> Result<f64, BranchError> {
        let bp = self.xi_sharp(x, p)?;
        self.f_branch_at(x, eta, p, branch, &bp)
    }

    /// [`f_branch`](Self::f_branch) with a precomputed branch point, so arc
    /// integrators can reuse one `ξ♯` evaluation for both `F⁻` and `G⁻`.
    pub fn f_branch_at(
        &self,
        x: f64,
        eta: f64,
        p: f64,
        branch: Branch,
        bp: &BranchPoint,
    ) -> Result<f64, BranchError> {
        let level = self.params.r * eta;
        let slack = MERGE_SLACK * bp.h_max.abs().max(1.0);
        if level > bp.h_max {
            if level - bp.h_max <= slack {
                return Ok(bp.xi_sharp);
            }
            return Err(BranchError::LevelAboveMax {
                x,
                p,
                level,
                h_max: bp.h_max,
            });
        }
        if level <= 0.0 {
            // H(x, 0, p) = 0 with H strictly increasing below ξ♯: the lower
            // branch degenerates to 0 at level 0; the upper branch solve
            // below still applies.
            if branch == Branch::Minus {
                return Ok(0.0);
            }
        }
        match branch {
            Branch::Minus => {
                let f = bisect_newton(
                    |xi| self.h_value(x, xi, p) - level,
                    |xi| self.h_xi(x, xi, p),
                    0.0,
                    bp.xi_sharp,
                    TOL_ROOT,
                )
                .expect("H - level changes sign on [0, xi_sharp]");
                Ok(f)
            }
            Branch::Plus => {
                let mut hi = bp.xi_sharp.max(1.0);
                while self.h_value(x, hi, p) > level {
                    hi *= 2.0;
                    if hi > XI_CAP {
                        return Err(BranchError::NoUpperBranch {
                            x,
                            p,
                            level,
                            cap: XI_CAP,
                        });
                    }
                }
                let f = bisect_newton(
                    |xi| self.h_value(x, xi, p) - level,
                    |xi| self.h_xi(x, xi, p),
                    bp.xi_sharp,
                    hi,
                    TOL_ROOT,
                )
                .expect("H - level changes sign on [xi_sharp, hi]");
                Ok(f)
            }
        }
    }

    /// Price slope of the normal-form system along the lower branch:
    /// `G⁻ = ((r+λ+v*(x,F⁻))·p − (r+λ)) / H_ξ(x, F⁻, p)`.
    pub fn g_minus(&self, x: f64, eta: f64, p: f64) -> Result<f64, BranchError> {
        Ok(self.branch_minus_rhs(x, eta, p)?.g)
    }

    /// Joint `(F⁻, G⁻)` evaluation with the degeneracy indicator `H_ξ`,
    /// sharing a single branch-point computation.
    pub fn branch_minus_rhs(&self, x: f64, eta: f64, p: f64) -> Result<BranchRhs, BranchError> {
        let bp = self.xi_sharp(x, p)?;
        let f = self.f_branch_at(x, eta, p, Branch::Minus, &bp)?;
        let h_xi = self.h_xi(x, f, p);
        let q = &self.params;
        let v = self.v_star(x, f);
        let numer = (q.r + q.lambda + v) * p - (q.r + q.lambda);
        if h_xi == 0.0 {
            return Err(BranchError::DegenerateSlope { x, eta, p });
        }
        Ok(BranchRhs {
            f,
            g: numer / h_xi,
            h_xi,
            u_opt: self.u_star(f, p),
            v_opt: v,
        })
    }

    /// Hölder modulus `C(x₁, p₁)` of `η ↦ F⁻(x, η, p)` on
    /// `[x₁, x*] × [p₁, 1]`:
    ///
    /// ```text
    /// C = √(2·r·δ₀ / min{1, x₁²·p₁}) + √(2B)·r / ((r−μ)·x₁)
    /// ```
    ///
    /// Feeds the arc-count bound of the deterministic construction.
    pub fn holder_constant(&self, x1: f64, p1: f64) -> f64 {
        assert!(x1 > 0.0 && p1 > 0.0);
        let q = &self.params;
        let d0 = self.costs.delta0();
        (2.0 * q.r * d0 / (x1 * x1 * p1).min(1.0)).sqrt()
            + (2.0 * q.bankruptcy_cost).sqrt() * q.r / ((q.r - q.mu) * x1)
    }
}
