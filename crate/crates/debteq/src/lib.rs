//! Equilibrium solver for a sovereign debt-management model.
//!
//! The state is the debt-to-income ratio (DTI) `x` of a borrower that rolls
//! over its debt with risk-neutral lenders. Bankruptcy is forced when `x`
//! reaches a threshold `x*`, at which point lenders recover a salvage
//! fraction `θ(x*)` per unit of nominal capital. The borrower controls the
//! fraction `u ∈ [0,1)` of income devoted to debt service (welfare cost
//! `L(u)`) and a devaluation rate `v ∈ [0, v_max)` that inflates nominal
//! income (social cost `c(v)`). An equilibrium couples
//!
//! * the borrower's value function `V` (minimal discounted cost), and
//! * the discounted bond price `p` quoted by competitive lenders,
//!
//! through a Hamiltonian `H(x, ξ, p)` built from the convex conjugates of
//! the running costs. Two regimes are covered:
//!
//! * **stochastic** (`σ > 0`): `(V, p)` solve a coupled degenerate elliptic
//!   system on `[0, x*]`, computed here by pseudo-time marching of an
//!   ε-regularized parabolic system and continuation ε → 0
//!   ([`stochastic`]);
//! * **deterministic** (`σ = 0`): `(V*, p*)` are assembled from backward
//!   ODE arcs on the lower Hamiltonian branch, restarted on the graph of
//!   the constant-strategy cost `W` ([`deterministic`], [`constant`]).
//!
//! [`simulate`] verifies both solvers against the defining control problem
//! by Monte-Carlo / quadrature simulation, and [`asymptotics`] sweeps the
//! bankruptcy threshold to exhibit the Ponzi / non-Ponzi dichotomy.

// Validation guards are written `!(x > 0.0)` on purpose: unlike `x <= 0.0`
// they also reject NaN, which must never pass a domain check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod constant;
pub mod costs;
pub mod deterministic;
pub mod hamiltonian;
pub mod ode;
pub mod params;
pub mod roots;
pub mod stochastic;
