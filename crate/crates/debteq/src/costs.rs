//! Running-cost families and their convex conjugates.
//!
//! Two strictly convex, superlinear cost functions drive the model:
//!
//! ```text
//! L(u) = a0·u + a·u²/(1−u)            on [0, 1),    +∞ elsewhere
//! c(v) = b0·v + b1·v²/(1−v/v_max)     on [0, v_max), +∞ elsewhere   (finite cap)
//! c(v) = b0·v + b1·v²                 on [0, ∞)                     (v_max = ∞)
//! ```
//!
//! `L` is the welfare cost of devoting the income fraction `u` to debt
//! service; `c` is the social cost of devaluing at rate `v`. Both vanish at
//! zero, have strictly positive derivative and second derivative bounded
//! below by `delta0 = min inf L'', inf c''` on the open domains, and blow up
//! at the right edge. The linear coefficients `a0, b0 ≥ 0` set the marginal
//! costs at zero and hence the widths of the no-repayment band
//! `{ξ ≤ p·L'(0)}` and the no-devaluation band `{x·ξ ≤ c'(0)}`.
//!
//! Inverse marginals are computed generically by bracketing bisection plus
//! safeguarded Newton on the strictly increasing derivatives (tolerance
//! [`TOL_ROOT`] on the bracket width). The families above also admit closed
//! forms, kept as an independent evaluation route: the solver uses the
//! root-finder, cross-checks use the closed forms, and the Monte-Carlo
//! simulator uses the closed forms in its hot loop.

use crate::params::ParamError;
use crate::roots::{bisect_newton, TOL_ROOT};
use serde::{Deserialize, Serialize};

/// Number of interior samples used for the grid infimum of `L''` and `c''`.
const DELTA0_GRID: usize = 100_000;

/// Pseudo-cap for sampling `c''` when `v_max = ∞` (the quadratic family has
/// constant second derivative, so any finite window is representative).
const UNBOUNDED_SAMPLE_CAP: f64 = 1_000.0;

/// Cost-family coefficients plus the derived strict-convexity lower bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    /// Linear coefficient of `L` (marginal repayment cost at zero).
    pub a0: f64,
    /// Curvature coefficient of `L`; must be positive.
    pub a: f64,
    /// Linear coefficient of `c` (marginal devaluation cost at zero).
    pub b0: f64,
    /// Curvature coefficient of `c`; must be positive.
    pub b1: f64,
    /// Devaluation cap; `f64::INFINITY` selects the quadratic family.
    pub v_max: f64,
    /// Grid infimum of `min(L'', c'')` over the open domains, computed at
    /// construction. Feeds the Hölder modulus of the branch functions.
    delta0: f64,
}

impl CostModel {
    /// Build a cost model, validating coefficient signs and computing the
    /// strict-convexity bound `delta0` by grid infimum.
    pub fn new(a0: f64, a: f64, b0: f64, b1: f64, v_max: f64) -> Result<Self, ParamError> {
        let checks: [(&'static str, f64, bool); 5] = [
            ("costs.a0", a0, a0 >= 0.0 && a0.is_finite()),
            ("costs.a", a, a > 0.0 && a.is_finite()),
            ("costs.b0", b0, b0 >= 0.0 && b0.is_finite()),
            ("costs.b1", b1, b1 > 0.0 && b1.is_finite()),
            ("costs.v_max", v_max, v_max > 0.0),
        ];
        for (name, value, ok) in checks {
            if !ok {
                return Err(ParamError::OutOfRange {
                    name,
                    value,
                    requirement: "a, b1 positive; a0, b0 nonnegative; v_max positive",
                });
            }
        }
        let mut model = CostModel {
            a0,
            a,
            b0,
            b1,
            v_max,
            delta0: 0.0,
        };
        model.delta0 = model.grid_infimum_of_second_derivatives();
        Ok(model)
    }

    /// Strict-convexity lower bound `delta0`.
    pub fn delta0(&self) -> f64 {
        self.delta0
    }

    fn grid_infimum_of_second_derivatives(&self) -> f64 {
        // Both families have finite, nondecreasing second derivatives, so
        // the left endpoint must be sampled: it attains the infimum.
        let mut inf = f64::INFINITY;
        let n = DELTA0_GRID as f64;
        for i in 0..DELTA0_GRID {
            let u = i as f64 / n;
            inf = inf.min(self.deriv2_l(u));
        }
        let v_hi = if self.v_max.is_finite() {
            self.v_max
        } else {
            UNBOUNDED_SAMPLE_CAP
        };
        for i in 0..DELTA0_GRID {
            let v = v_hi * i as f64 / n;
            inf = inf.min(self.deriv2_c(v));
        }
        inf
    }

    // ------------------------------------------------------------------
    // L and its derivatives
    // ------------------------------------------------------------------

    /// `L(u)`; `+∞` outside `[0, 1)`.
    pub fn cost_l(&self, u: f64) -> f64 {
        if !(0.0..1.0).contains(&u) {
            return f64::INFINITY;
        }
        self.a0 * u + self.a * u * u / (1.0 - u)
    }

    /// `L'(u)` on `[0, 1)`; `+∞` for `u ≥ 1` (monotone extension below 0).
    pub fn deriv_l(&self, u: f64) -> f64 {
        if u >= 1.0 {
            return f64::INFINITY;
        }
        if u <= 0.0 {
            return self.a0;
        }
        let w = 1.0 - u;
        self.a0 + self.a * (2.0 * u - u * u) / (w * w)
    }

    /// `L''(u)` on `[0, 1)`.
    pub fn deriv2_l(&self, u: f64) -> f64 {
        if u >= 1.0 {
            return f64::INFINITY;
        }
        let w = 1.0 - u.max(0.0);
        2.0 * self.a / (w * w * w)
    }

    // ------------------------------------------------------------------
    // c and its derivatives
    // ------------------------------------------------------------------

    /// `c(v)`; `+∞` outside `[0, v_max)`.
    pub fn cost_c(&self, v: f64) -> f64 {
        if !(v >= 0.0 && v < self.v_max) {
            return f64::INFINITY;
        }
        if self.v_max.is_finite() {
            self.b0 * v + self.b1 * v * v / (1.0 - v / self.v_max)
        } else {
            self.b0 * v + self.b1 * v * v
        }
    }

    /// `c'(v)` on `[0, v_max)`; `+∞` for `v ≥ v_max`.
    pub fn deriv_c(&self, v: f64) -> f64 {
        if v >= self.v_max {
            return f64::INFINITY;
        }
        if v <= 0.0 {
            return self.b0;
        }
        if self.v_max.is_finite() {
            // c'(v) = b0 + b1·v_max·(1/w² − 1) with w = 1 − v/v_max.
            let w = 1.0 - v / self.v_max;
            self.b0 + self.b1 * self.v_max * (1.0 / (w * w) - 1.0)
        } else {
            self.b0 + 2.0 * self.b1 * v
        }
    }

    /// `c''(v)` on `[0, v_max)`.
    pub fn deriv2_c(&self, v: f64) -> f64 {
        if v >= self.v_max {
            return f64::INFINITY;
        }
        if self.v_max.is_finite() {
            let w = 1.0 - v.max(0.0) / self.v_max;
            2.0 * self.b1 / (w * w * w)
        } else {
            2.0 * self.b1
        }
    }

    // ------------------------------------------------------------------
    // Inverse marginals: root-finding route (solver) and closed forms
    // (independent cross-check route, also used by the simulator hot loop)
    // ------------------------------------------------------------------

    /// `(L')⁻¹(rho)`: 0 for `rho ≤ L'(0)`, else the unique `u ∈ (0,1)` with
    /// `L'(u) = rho`, by bracketing bisection + safeguarded Newton.
    pub fn inv_deriv_l(&self, rho: f64) -> f64 {
        if !(rho > self.a0) {
            return 0.0;
        }
        // L' is strictly increasing with L'(u) → ∞ as u → 1⁻: grow the
        // bracket's right end geometrically toward 1 until it straddles rho.
        let mut hi = 0.5;
        while self.deriv_l(hi) < rho {
            hi = 1.0 - 0.5 * (1.0 - hi);
        }
        bisect_newton(
            |u| self.deriv_l(u) - rho,
            |u| self.deriv2_l(u),
            0.0,
            hi,
            TOL_ROOT,
        )
        .expect("L' - rho changes sign on the constructed bracket")
    }

    /// `(c')⁻¹(rho)`: 0 for `rho ≤ c'(0)`, else the unique `v ∈ (0, v_max)`
    /// with `c'(v) = rho`, by bracketing bisection + safeguarded Newton.
    pub fn inv_deriv_c(&self, rho: f64) -> f64 {
        if !(rho > self.b0) {
            return 0.0;
        }
        let mut hi = if self.v_max.is_finite() {
            0.5 * self.v_max
        } else {
            1.0
        };
        while self.deriv_c(hi) < rho {
            hi = if self.v_max.is_finite() {
                self.v_max - 0.5 * (self.v_max - hi)
            } else {
                2.0 * hi
            };
        }
        bisect_newton(
            |v| self.deriv_c(v) - rho,
            |v| self.deriv2_c(v),
            0.0,
            hi,
            TOL_ROOT,
        )
        .expect("c' - rho changes sign on the constructed bracket")
    }

    /// Closed-form `(L')⁻¹(rho) = 1 − √(a / (rho − a0 + a))` for `rho ≥ a0`.
    pub fn inv_deriv_l_closed(&self, rho: f64) -> f64 {
        if !(rho > self.a0) {
            return 0.0;
        }
        1.0 - (self.a / (rho - self.a0 + self.a)).sqrt()
    }

    /// Closed-form `(c')⁻¹(rho)`:
    /// `v_max·(1 − √(b1·v_max / (rho − b0 + b1·v_max)))` for the capped
    /// family, `(rho − b0)/(2·b1)` for the quadratic one.
    pub fn inv_deriv_c_closed(&self, rho: f64) -> f64 {
        if !(rho > self.b0) {
            return 0.0;
        }
        if self.v_max.is_finite() {
            let s = self.b1 * self.v_max;
            self.v_max * (1.0 - (s / (rho - self.b0 + s)).sqrt())
        } else {
            (rho - self.b0) / (2.0 * self.b1)
        }
    }

    // ------------------------------------------------------------------
    // Convex conjugates
    // ------------------------------------------------------------------

    /// `L°(rho) = sup_u {rho·u − L(u)}`, via the first-order condition
    /// `u = (L')⁻¹(rho)` (the supremum sits at 0 for `rho ≤ L'(0)`).
    pub fn conjugate_l(&self, rho: f64) -> f64 {
        if !(rho > self.a0) {
            return 0.0;
        }
        let u = self.inv_deriv_l(rho);
        rho * u - self.cost_l(u)
    }

    /// `c°(rho) = sup_v {rho·v − c(v)}`, via `v = (c')⁻¹(rho)`.
    pub fn conjugate_c(&self, rho: f64) -> f64 {
        if !(rho > self.b0) {
            return 0.0;
        }
        let v = self.inv_deriv_c(rho);
        rho * v - self.cost_c(v)
    }

    /// Brute-force conjugate of `L`: maximizes `rho·u − L(u)` over an
    /// `n`-point grid on `[0, 1 − 1e−6]`. Independent oracle for
    /// [`conjugate_l`](Self::conjugate_l); used by tests and the `verify`
    /// cross-check suite, never by the solver.
    pub fn conjugate_l_brute_force(&self, rho: f64, n: usize) -> f64 {
        let hi = 1.0 - 1e-6;
        let mut best = 0.0f64; // u = 0 is always admissible and gives 0
        for i in 0..=n {
            let u = hi * i as f64 / n as f64;
            best = best.max(rho * u - self.cost_l(u));
        }
        best
    }

    /// Brute-force conjugate of `c` over `n` grid points on
    /// `[0, v_hi]`, with `v_hi = v_max·(1 − 1e−6)` for the capped family and
    /// a value safely past the quadratic maximizer otherwise.
    pub fn conjugate_c_brute_force(&self, rho: f64, n: usize) -> f64 {
        let v_hi = if self.v_max.is_finite() {
            self.v_max * (1.0 - 1e-6)
        } else {
            // Quadratic family: maximizer at (rho − b0)/(2 b1); pad ×2 + 1.
            (rho.max(0.0) - self.b0).max(0.0) / self.b1 + 1.0
        };
        let mut best = 0.0f64;
        for i in 0..=n {
            let v = v_hi * i as f64 / n as f64;
            best = best.max(rho * v - self.cost_c(v));
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Canonical stochastic-regime family: finite devaluation cap.
    fn capped() -> CostModel {
        CostModel::new(0.0, 1.0, 0.05, 0.5, 0.25).unwrap()
    }

    /// Deterministic-regime family: quadratic c, linear term in L.
    fn quadratic() -> CostModel {
        CostModel::new(2.0, 1.0, 0.02, 0.5, f64::INFINITY).unwrap()
    }

    #[test]
    fn costs_vanish_at_zero_and_blow_up_at_the_right_edge() {
        for m in [capped(), quadratic()] {
            assert_eq!(m.cost_l(0.0), 0.0);
            assert_eq!(m.cost_c(0.0), 0.0);
            assert_eq!(m.cost_l(1.0), f64::INFINITY);
            assert_eq!(m.cost_l(-0.1), f64::INFINITY);
        }
        assert_eq!(capped().cost_c(0.25), f64::INFINITY);
        assert!(quadratic().cost_c(1e6).is_finite());
    }

    #[test]
    fn canonical_l_values() {
        // L(u) = u²/(1−u): L(1/2) = 1/2, L'(1/2) = 3.
        let m = CostModel::new(0.0, 1.0, 0.05, 0.5, 0.25).unwrap();
        assert!((m.cost_l(0.5) - 0.5).abs() < 1e-15);
        assert!((m.deriv_l(0.5) - 3.0).abs() < 1e-15);
    }

    #[test]
    fn derivatives_match_central_finite_differences() {
        let h = 1e-6;
        for m in [capped(), quadratic()] {
            for u in [0.1, 0.3, 0.5, 0.8, 0.93] {
                let fd = (m.cost_l(u + h) - m.cost_l(u - h)) / (2.0 * h);
                assert!(
                    (m.deriv_l(u) - fd).abs() <= 1e-5 * m.deriv_l(u).abs().max(1.0),
                    "L' mismatch at u={u}"
                );
                let fd2 = (m.deriv_l(u + h) - m.deriv_l(u - h)) / (2.0 * h);
                assert!((m.deriv2_l(u) - fd2).abs() <= 1e-4 * m.deriv2_l(u).max(1.0));
            }
            let v_probe: &[f64] = if m.v_max.is_finite() {
                &[0.02, 0.1, 0.18, 0.23]
            } else {
                &[0.1, 0.8, 3.0, 40.0]
            };
            for &v in v_probe {
                let fd = (m.cost_c(v + h) - m.cost_c(v - h)) / (2.0 * h);
                assert!(
                    (m.deriv_c(v) - fd).abs() <= 1e-5 * m.deriv_c(v).abs().max(1.0),
                    "c' mismatch at v={v}"
                );
                let fd2 = (m.deriv_c(v + h) - m.deriv_c(v - h)) / (2.0 * h);
                assert!((m.deriv2_c(v) - fd2).abs() <= 1e-4 * m.deriv2_c(v).max(1.0));
            }
        }
    }

    #[test]
    fn generic_inverse_marginals_match_closed_forms() {
        for m in [capped(), quadratic()] {
            for rho in [-1.0, 0.0, 0.01, 0.2, 1.0, 3.0, 17.5, 400.0] {
                let (g, c) = (m.inv_deriv_l(rho), m.inv_deriv_l_closed(rho));
                assert!((g - c).abs() < 1e-11, "L inverse at rho={rho}: {g} vs {c}");
                let (g, c) = (m.inv_deriv_c(rho), m.inv_deriv_c_closed(rho));
                assert!((g - c).abs() < 1e-11, "c inverse at rho={rho}: {g} vs {c}");
            }
        }
    }

    #[test]
    fn inverse_marginal_frozen_values() {
        // L'(u) = 3 at u = 1/2 for the a=1, a0=0 family…
        let m = capped();
        assert!((m.inv_deriv_l(3.0) - 0.5).abs() < 1e-11);
        // …and L'(u) = 6 at the root of 7u² − 14u + 6 in (0,1),
        // u = 1 − √(1/7) ≈ 0.62204.
        assert!((m.inv_deriv_l(6.0) - 0.622_035_526_990_772_8).abs() < 1e-11);
        // Inverting the threshold value itself gives 0.
        assert_eq!(m.inv_deriv_c(0.05), 0.0);
        assert_eq!(m.inv_deriv_c(0.049), 0.0);
        assert!(m.inv_deriv_c(0.051) > 0.0);
    }

    #[test]
    fn conjugates_match_brute_force_grids() {
        // Tolerance 1e−6 absolute versus a 10⁵-point grid here (the full
        // 10⁶-point certification lives in the acceptance suite).
        for m in [capped(), quadratic()] {
            for rho in [-0.5, 0.0, 0.03, 0.3, 1.0, 3.0, 11.0, 60.0] {
                let or_l = m.conjugate_l_brute_force(rho, 100_000);
                assert!(
                    (m.conjugate_l(rho) - or_l).abs() < 1e-6,
                    "L° at rho={rho}: {} vs {or_l}",
                    m.conjugate_l(rho)
                );
                let or_c = m.conjugate_c_brute_force(rho, 100_000);
                assert!(
                    (m.conjugate_c(rho) - or_c).abs() < 1e-6,
                    "c° at rho={rho}: {} vs {or_c}",
                    m.conjugate_c(rho)
                );
            }
        }
    }

    #[test]
    fn conjugate_l_frozen_value() {
        // a=1, a0=0, rho=3: maximizer u=1/2, L°(3) = 3·(1/2) − 1/2 = 1.
        assert!((capped().conjugate_l(3.0) - 1.0).abs() < 1e-11);
    }

    #[test]
    fn conjugate_bounds_hold() {
        // L°(rho) = 0 below L'(0); L°(rho) ≤ max{0, rho};
        // c°(rho) ≤ max{0, v_max·rho}.
        let m = quadratic(); // a0 = 2 makes the L threshold nontrivial
        assert_eq!(m.conjugate_l(1.99), 0.0);
        assert_eq!(m.conjugate_c(0.0), 0.0);
        for rho in [0.5, 2.5, 7.0, 123.0] {
            assert!(m.conjugate_l(rho) <= rho.max(0.0) + 1e-12);
        }
        let m = capped();
        for rho in [0.5, 2.5, 7.0, 123.0] {
            assert!(m.conjugate_c(rho) <= (m.v_max * rho).max(0.0) + 1e-12);
        }
    }

    #[test]
    fn delta0_is_the_infimum_of_the_second_derivatives() {
        // L'' ≥ 2a with infimum 2a at u→0; capped c'' ≥ 2b1 likewise.
        let m = capped();
        assert!((m.delta0() - 2.0 * m.b1).abs() < 1e-3 * m.b1);
        // Quadratic family: c'' ≡ 2b1 = 1 < 2a = 2.
        let m = quadratic();
        assert!((m.delta0() - 2.0 * m.b1).abs() < 1e-9);
    }

    #[test]
    fn coefficient_validation_rejects_bad_signs() {
        assert!(CostModel::new(-0.1, 1.0, 0.0, 1.0, 1.0).is_err());
        assert!(CostModel::new(0.0, 0.0, 0.0, 1.0, 1.0).is_err());
        assert!(CostModel::new(0.0, 1.0, -1e-9, 1.0, 1.0).is_err());
        assert!(CostModel::new(0.0, 1.0, 0.0, 0.0, 1.0).is_err());
        assert!(CostModel::new(0.0, 1.0, 0.0, 1.0, 0.0).is_err());
    }
}
