//! Model parameters: rates, bankruptcy data, and the salvage-rate family.
//!
//! All rates are per unit time; the DTI `x` and the salvage rate `θ` are
//! dimensionless; the bankruptcy cost `B` and the value function are in
//! utility units.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Violations of the model's structural assumptions, reported by
/// [`ModelParams::validate`] and the regime-specific validators.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum ParamError {
    #[error("r = {r} must exceed mu = {mu} (discount rate above mean GDP growth)")]
    DiscountBelowGrowth { r: f64, mu: f64 },
    #[error("{name} = {value} must be {requirement}")]
    OutOfRange {
        name: &'static str,
        value: f64,
        requirement: &'static str,
    },
    #[error("stochastic regime requires sigma > 0, got sigma = {sigma}")]
    StochasticNeedsNoise { sigma: f64 },
    #[error("stochastic regime requires a finite devaluation cap, got v_max = {v_max}")]
    StochasticNeedsFiniteCap { v_max: f64 },
    #[error("stochastic regime requires theta(x_star) > 0, got {theta_at_xstar}")]
    StochasticNeedsSalvage { theta_at_xstar: f64 },
    #[error("deterministic regime requires sigma = 0, got sigma = {sigma}")]
    DeterministicNeedsNoNoise { sigma: f64 },
}

/// Salvage-rate family `θ(x)`: the fraction of a unit nominal bond that
/// lenders recover when bankruptcy is declared at threshold `x`.
///
/// The two families realize the two asymptotic behaviors of the recovered
/// capital `θ(s)·s` as the threshold grows: unbounded for [`Constant`],
/// saturating at `cap` for [`Capped`].
///
/// [`Constant`]: SalvageRate::Constant
/// [`Capped`]: SalvageRate::Capped
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SalvageRate {
    /// `θ(x) = θ0`.
    Constant { theta0: f64 },
    /// `θ(x) = min(θ0, cap / x)`: recovered capital `θ(x)·x` never exceeds `cap`.
    Capped { theta0: f64, cap: f64 },
}

impl SalvageRate {
    /// Evaluate `θ(x)`. Total on `x ≥ 0`; the capped family returns `θ0` at
    /// `x = 0` (the cap binds only for `x > cap/θ0`).
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            SalvageRate::Constant { theta0 } => theta0,
            SalvageRate::Capped { theta0, cap } => {
                if x <= 0.0 {
                    theta0
                } else {
                    theta0.min(cap / x)
                }
            }
        }
    }

    /// `sup_{s>0} θ(s)·s`: `+∞` for the constant family, `max(cap, …)` —
    /// in fact exactly `cap` once the cap binds — for the capped family.
    pub fn sup_recovered_capital(&self) -> f64 {
        match *self {
            SalvageRate::Constant { .. } => f64::INFINITY,
            SalvageRate::Capped { cap, .. } => cap,
        }
    }

    fn validate(&self) -> Result<(), ParamError> {
        let check = |name: &'static str, value: f64, lo_open: f64, hi: f64| {
            if !(value > lo_open && value <= hi) {
                Err(ParamError::OutOfRange {
                    name,
                    value,
                    requirement: "in (0, 1] for a salvage fraction (cap in (0, inf))",
                })
            } else {
                Ok(())
            }
        };
        match *self {
            SalvageRate::Constant { theta0 } => check("theta0", theta0, 0.0, 1.0),
            SalvageRate::Capped { theta0, cap } => {
                check("theta0", theta0, 0.0, 1.0)?;
                if !(cap > 0.0 && cap.is_finite()) {
                    return Err(ParamError::OutOfRange {
                        name: "theta.cap",
                        value: cap,
                        requirement: "positive and finite",
                    });
                }
                Ok(())
            }
        }
    }
}

/// Market and bankruptcy parameters of the debt-management model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Discount rate of the borrower and the lenders (1/time). Must exceed `mu`.
    pub r: f64,
    /// Mean GDP growth rate (1/time).
    pub mu: f64,
    /// Principal repayment rate of the perpetual-style bond (1/time).
    pub lambda: f64,
    /// GDP volatility (1/√time); `0` selects the deterministic regime.
    pub sigma: f64,
    /// Bankruptcy DTI threshold `x*` (dimensionless).
    pub x_star: f64,
    /// Bankruptcy cost `B` (utility units), paid at the time `x` reaches `x*`.
    pub bankruptcy_cost: f64,
    /// Devaluation-rate upper bound (1/time); may be `f64::INFINITY` in the
    /// deterministic regime.
    pub v_max: f64,
    /// Salvage-rate family `θ`.
    pub theta: SalvageRate,
}

impl ModelParams {
    /// Structural checks shared by both regimes.
    pub fn validate(&self) -> Result<(), ParamError> {
        if !(self.r > self.mu) {
            return Err(ParamError::DiscountBelowGrowth {
                r: self.r,
                mu: self.mu,
            });
        }
        let positive: [(&'static str, f64); 3] = [
            ("r", self.r),
            ("x_star", self.x_star),
            ("bankruptcy_cost", self.bankruptcy_cost),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(ParamError::OutOfRange {
                    name,
                    value,
                    requirement: "positive and finite",
                });
            }
        }
        let nonnegative: [(&'static str, f64); 2] =
            [("lambda", self.lambda), ("sigma", self.sigma)];
        for (name, value) in nonnegative {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(ParamError::OutOfRange {
                    name,
                    value,
                    requirement: "nonnegative and finite",
                });
            }
        }
        if !(self.v_max > 0.0) {
            return Err(ParamError::OutOfRange {
                name: "v_max",
                value: self.v_max,
                requirement: "positive (possibly infinite in the deterministic regime)",
            });
        }
        self.theta.validate()
    }

    /// Additional requirements of the stochastic regime: genuine noise, a
    /// finite devaluation cap, and positive salvage at the threshold.
    pub fn validate_stochastic(&self) -> Result<(), ParamError> {
        self.validate()?;
        if !(self.sigma > 0.0) {
            return Err(ParamError::StochasticNeedsNoise { sigma: self.sigma });
        }
        if !self.v_max.is_finite() {
            return Err(ParamError::StochasticNeedsFiniteCap { v_max: self.v_max });
        }
        let theta_star = self.theta_at_xstar();
        if !(theta_star > 0.0) {
            return Err(ParamError::StochasticNeedsSalvage {
                theta_at_xstar: theta_star,
            });
        }
        Ok(())
    }

    /// Additional requirement of the deterministic regime: `σ = 0`.
    pub fn validate_deterministic(&self) -> Result<(), ParamError> {
        self.validate()?;
        if self.sigma != 0.0 {
            return Err(ParamError::DeterministicNeedsNoNoise { sigma: self.sigma });
        }
        Ok(())
    }

    /// `θ(x*)`, the terminal bond price at bankruptcy.
    pub fn theta_at_xstar(&self) -> f64 {
        self.theta.eval(self.x_star)
    }

    /// Lower bound of the discounted bond price,
    /// `θ_min = min{θ(x*), (r+λ)/(r+λ+v_max)}`.
    ///
    /// With an infinite devaluation cap the second term vanishes and the
    /// bound degenerates; it is only used by the stochastic solver, whose
    /// validation requires a finite cap.
    pub fn theta_min(&self) -> f64 {
        let rl = self.r + self.lambda;
        let price_floor = if self.v_max.is_finite() {
            rl / (rl + self.v_max)
        } else {
            0.0
        };
        self.theta_at_xstar().min(price_floor)
    }
}
