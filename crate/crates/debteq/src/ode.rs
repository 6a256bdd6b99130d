//! Adaptive explicit Runge–Kutta integration with dense output and event
//! detection.
//!
//! The integrator is the classic Dormand–Prince embedded 4(5) pair with
//! first-same-as-last reuse, a fourth-order continuous extension on every
//! accepted step, and proportional step-size control. It integrates in
//! either direction (the backward arc construction runs with decreasing
//! abscissa), localizes event-function sign changes by bisection on the
//! dense output, and treats a right-hand side that reports failure on a
//! trial step — typically because the trial state stepped past the edge of
//! its domain — as a too-large step, shrinking and retrying instead of
//! aborting. Only when the step size collapses without an event does it
//! give up, carrying the right-hand side's own diagnostic.
//!
//! Everything is allocation-light but not allocation-free; right-hand
//! sides and event functions are plain closures over a small state
//! dimension (the solvers here use 1 or 2).

/// Relative tolerance used by the equilibrium solvers.
pub const TOL_ODE: f64 = 1e-9;

/// Default absolute-tolerance floor.
pub const ATOL_DEFAULT: f64 = 1e-12;

/// Bisection width (relative to `max(1,|x|)`) for event localization.
const EVENT_XTOL: f64 = 1e-13;

/// A right-hand-side evaluation may refuse a point (state outside the
/// domain on a trial step); the integrator shrinks the step in response
/// and surfaces the message only if the step size collapses.
#[derive(Debug, Clone)]
pub struct RhsRejection(pub String);

/// Integration failures.
#[derive(Debug, Clone, thiserror::Error)]
pub enum OdeError {
    #[error(
        "step size collapsed to {h:.3e} at x = {x} without reaching an event \
         or the endpoint{}",
        cause.as_ref().map(|c| format!(": {c}")).unwrap_or_default()
    )]
    StepSizeCollapse {
        x: f64,
        h: f64,
        cause: Option<String>,
    },
    #[error("exceeded {max_steps} accepted steps at x = {x} (endpoint {x_end})")]
    TooManySteps {
        x: f64,
        x_end: f64,
        max_steps: usize,
    },
    #[error("right-hand side failed at the initial point x = {x}: {message}")]
    InitialPointRejected { x: f64, message: String },
    #[error("invalid integration setup: {0}")]
    BadSetup(&'static str),
}

/// Direction filter for event zero-crossings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventDirection {
    /// Fire on any sign change.
    Any,
    /// Fire only when the event function crosses from negative to positive.
    Rising,
    /// Fire only when the event function crosses from positive to negative.
    Falling,
}

/// Scalar event function of `(x, y)`.
pub type EventFn<'a> = Box<dyn Fn(f64, &[f64]) -> f64 + 'a>;

/// An event: a scalar function of `(x, y)` whose tracked zero-crossings
/// are localized on the dense output. Event functions must be total and
/// finite along the trajectory; a NaN value disables detection on that
/// step.
pub struct EventSpec<'a> {
    /// The event function.
    pub g: EventFn<'a>,
    /// Stop the integration at the localized root.
    pub terminal: bool,
    /// Which crossings count.
    pub direction: EventDirection,
}

/// A localized event occurrence.
#[derive(Debug, Clone)]
pub struct EventHit {
    /// Index into the `events` slice passed to [`integrate`].
    pub event_index: usize,
    /// Abscissa of the localized root.
    pub x: f64,
    /// Dense-output state at the root.
    pub y: Vec<f64>,
}

/// Why the integration stopped.
#[derive(Debug, Clone)]
pub enum StopReason {
    /// Reached `x_end`.
    ReachedEnd,
    /// A terminal event fired.
    Event(EventHit),
}

/// Tuning knobs. `rel_tol`/`abs_tol` enter the per-component error norm;
/// `max_step` guards against steps so long that an event's double sign
/// change could hide inside one step.
#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_steps: usize,
    pub max_step: f64,
    /// Initial step size; `None` selects it automatically.
    pub h_init: Option<f64>,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions {
            rel_tol: TOL_ODE,
            abs_tol: ATOL_DEFAULT,
            max_steps: 200_000,
            max_step: f64::INFINITY,
            h_init: None,
        }
    }
}

/// One accepted step with its continuous extension: a quartic polynomial
/// per component in the normalized offset `θ = (x − x0)/h ∈ [0, 1]`,
/// matching both endpoints and endpoint slopes to fourth order.
#[derive(Debug, Clone)]
pub struct DenseStep {
    /// Left endpoint in integration order (so `x0 > x1` going backward).
    pub x0: f64,
    /// Signed step, `x1 = x0 + h`.
    pub h: f64,
    /// Interpolation coefficients, 5 per component.
    rcont: Vec<[f64; 5]>,
}

impl DenseStep {
    /// Evaluate the continuous extension at `x` (intended for `x` within
    /// the step; evaluates the polynomial regardless).
    pub fn eval_into(&self, x: f64, out: &mut [f64]) {
        let theta = (x - self.x0) / self.h;
        let theta1 = 1.0 - theta;
        for (o, rc) in out.iter_mut().zip(&self.rcont) {
            *o = rc[0] + theta * (rc[1] + theta1 * (rc[2] + theta * (rc[3] + theta1 * rc[4])));
        }
    }

    /// Derivative `dy/dx` of the continuous extension at `x`.
    pub fn eval_deriv_into(&self, x: f64, out: &mut [f64]) {
        let theta = (x - self.x0) / self.h;
        for (o, rc) in out.iter_mut().zip(&self.rcont) {
            // d/dθ of rc1·θ + rc2·θ(1−θ) + rc3·θ²(1−θ) + rc4·θ²(1−θ)².
            let du = rc[1]
                + (1.0 - 2.0 * theta) * rc[2]
                + theta * (2.0 - 3.0 * theta) * rc[3]
                + 2.0 * theta * (1.0 - theta) * (1.0 - 2.0 * theta) * rc[4];
            *o = du / self.h;
        }
    }

    /// Right endpoint of the step.
    pub fn x1(&self) -> f64 {
        self.x0 + self.h
    }
}

/// The integration result: accepted steps with dense output, the final
/// state, recorded events, and work counters.
#[derive(Debug, Clone)]
pub struct OdeSolution {
    /// Accepted steps in integration order.
    pub steps: Vec<DenseStep>,
    /// All recorded events (non-terminal ones included), in order.
    pub events: Vec<EventHit>,
    /// Stop cause; for a terminal event the final state sits at the event.
    pub status: StopReason,
    /// Final abscissa (endpoint or terminal-event location).
    pub x_final: f64,
    /// Final state.
    pub y_final: Vec<f64>,
    /// Right-hand-side evaluation count.
    pub n_rhs_evals: usize,
    /// Rejected-step count (error-control and domain rejections).
    pub n_rejected: usize,
}

impl OdeSolution {
    /// Dense-output evaluation at `x`, which must lie within the integrated
    /// range; endpoints clamp.
    pub fn eval_into(&self, x: f64, out: &mut [f64]) {
        let step = self.locate(x);
        step.eval_into(x, out);
    }

    /// Convenience allocation form of [`Self::eval_into`].
    pub fn eval(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.y_final.len()];
        self.eval_into(x, &mut out);
        out
    }

    /// Dense-output derivative `dy/dx` at `x` (same step lookup as
    /// [`Self::eval_into`]).
    pub fn eval_deriv_into(&self, x: f64, out: &mut [f64]) {
        let step = self.locate(x);
        step.eval_deriv_into(x, out);
    }

    fn locate(&self, x: f64) -> &DenseStep {
        debug_assert!(!self.steps.is_empty());
        // Steps are ordered in integration direction; normalize by sign so
        // the keys increase.
        let dir = self.steps[0].h.signum();
        let key = dir * x;
        let pos = self
            .steps
            .partition_point(|s| dir * s.x1() < key)
            .min(self.steps.len() - 1);
        &self.steps[pos]
    }

    /// Sample `(x, y)` along the solution: both endpoints of every accepted
    /// step plus `per_step` interior dense-output points. Monotone in the
    /// integration direction; respects a terminal event (samples past it
    /// are dropped).
    pub fn sample_points(&self, per_step: usize) -> Vec<(f64, Vec<f64>)> {
        let mut out = Vec::new();
        let dir = if self.steps.is_empty() {
            1.0
        } else {
            self.steps[0].h.signum()
        };
        let within = |x: f64| dir * x <= dir * self.x_final + 1e-300;
        let mut buf = vec![0.0; self.y_final.len()];
        for step in &self.steps {
            for j in 0..=per_step {
                let x = step.x0 + step.h * j as f64 / (per_step + 1) as f64;
                if within(x) {
                    step.eval_into(x, &mut buf);
                    out.push((x, buf.clone()));
                }
            }
        }
        out.push((self.x_final, self.y_final.clone()));
        out
    }
}

// Dormand–Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
/// Error coefficients: `err = h · Σ E[i]·k[i]` (difference of the 5th- and
/// 4th-order weights).
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];
/// Dense-output weights for the quartic continuous extension.
const D: [f64; 7] = [
    -12715105075.0 / 11282082432.0,
    0.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
];

/// Integrate `y' = f(x, y)` from `(x0, y0)` toward `x_end` (either
/// direction), recording dense output and localizing `events`.
pub fn integrate(
    mut rhs: impl FnMut(f64, &[f64], &mut [f64]) -> Result<(), RhsRejection>,
    x0: f64,
    y0: &[f64],
    x_end: f64,
    events: &[EventSpec<'_>],
    opts: &OdeOptions,
) -> Result<OdeSolution, OdeError> {
    let n = y0.len();
    if n == 0 {
        return Err(OdeError::BadSetup("empty state vector"));
    }
    if x0 == x_end {
        return Err(OdeError::BadSetup("zero-length integration interval"));
    }
    let tols_valid = opts.rel_tol > 0.0 && opts.abs_tol >= 0.0 && opts.max_step > 0.0;
    if !tols_valid {
        return Err(OdeError::BadSetup("tolerances must be positive"));
    }
    let dir = (x_end - x0).signum();

    let mut n_evals = 0usize;
    let mut n_rejected = 0usize;
    let mut k: [Vec<f64>; 7] = Default::default();
    for ki in &mut k {
        *ki = vec![0.0; n];
    }
    let mut x = x0;
    let mut y = y0.to_vec();
    rhs(x, &y, &mut k[0])
        .map_err(|RhsRejection(message)| OdeError::InitialPointRejected { x, message })?;
    n_evals += 1;

    // Event bookkeeping: value at the last accepted point.
    let mut g_prev: Vec<f64> = events.iter().map(|e| (e.g)(x, &y)).collect();

    let mut h = initial_step(
        &mut rhs,
        x,
        &y,
        &k[0].clone(),
        dir,
        x_end,
        opts,
        &mut n_evals,
    );

    let mut steps: Vec<DenseStep> = Vec::new();
    let mut recorded: Vec<EventHit> = Vec::new();
    let mut y_new = vec![0.0; n];
    let mut y_trial = vec![0.0; n];
    let mut last_rejection: Option<String> = None;

    loop {
        if steps.len() >= opts.max_steps {
            return Err(OdeError::TooManySteps {
                x,
                x_end,
                max_steps: opts.max_steps,
            });
        }
        // Clip to the endpoint and the step cap.
        if h.abs() > opts.max_step {
            h = dir * opts.max_step;
        }
        let mut hit_end = false;
        if dir * (x + h - x_end) >= 0.0 {
            h = x_end - x;
            hit_end = true;
        }
        let h_floor = 1e-14 * x.abs().max(1.0);
        if h.abs() < h_floor {
            return Err(OdeError::StepSizeCollapse {
                x,
                h,
                cause: last_rejection,
            });
        }

        // Stage evaluations; a domain rejection anywhere shrinks the step.
        let mut rejected_by_domain = false;
        'stages: for s in 1..7 {
            for i in 0..n {
                let mut acc = 0.0;
                for (j, kj) in k.iter().enumerate().take(s) {
                    acc += A[s][j] * kj[i];
                }
                y_trial[i] = y[i] + h * acc;
            }
            let (head, tail) = k.split_at_mut(s);
            let _ = head;
            match rhs(x + C[s] * h, &y_trial, &mut tail[0]) {
                Ok(()) => {}
                Err(RhsRejection(msg)) => {
                    last_rejection = Some(msg);
                    rejected_by_domain = true;
                    break 'stages;
                }
            }
            n_evals += 1;
        }
        if !rejected_by_domain {
            // 5th-order solution is stage 7's argument (FSAL): y_trial at
            // s = 6 used A[6] = b, so y_new = y_trial of the last stage.
            y_new.copy_from_slice(&y_trial);
            let finite = y_new.iter().all(|v| v.is_finite());
            if !finite {
                last_rejection = Some("non-finite trial state".to_string());
            } else {
                // Error estimate.
                let mut err_norm_sq = 0.0;
                for i in 0..n {
                    let mut e_acc = 0.0;
                    for (j, kj) in k.iter().enumerate() {
                        e_acc += E[j] * kj[i];
                    }
                    let sc = opts.abs_tol + opts.rel_tol * y[i].abs().max(y_new[i].abs());
                    let r = h * e_acc / sc;
                    err_norm_sq += r * r;
                }
                let err = (err_norm_sq / n as f64).sqrt();
                if err <= 1.0 {
                    // Accept: build the continuous extension.
                    let mut rcont = Vec::with_capacity(n);
                    for i in 0..n {
                        let ydiff = y_new[i] - y[i];
                        let bspl = h * k[0][i] - ydiff;
                        let mut d_acc = 0.0;
                        for (j, kj) in k.iter().enumerate() {
                            d_acc += D[j] * kj[i];
                        }
                        rcont.push([y[i], ydiff, bspl, ydiff - h * k[6][i] - bspl, h * d_acc]);
                    }
                    let step = DenseStep { x0: x, h, rcont };
                    let x_new = x + h;

                    // Event scan on [x, x_new].
                    let mut first_terminal: Option<(f64, EventHit)> = None;
                    let mut nonterminal: Vec<(f64, EventHit)> = Vec::new();
                    for (ei, ev) in events.iter().enumerate() {
                        let g1 = (ev.g)(x_new, &y_new);
                        let g0 = g_prev[ei];
                        let crossed = match ev.direction {
                            EventDirection::Any => g0 * g1 < 0.0 || (g0 != 0.0 && g1 == 0.0),
                            EventDirection::Rising => g0 < 0.0 && g1 >= 0.0,
                            EventDirection::Falling => g0 > 0.0 && g1 <= 0.0,
                        };
                        if crossed && g0.is_finite() && g1.is_finite() {
                            let xr = bisect_event(&ev.g, &step, x, x_new, g0);
                            let mut yr = vec![0.0; n];
                            step.eval_into(xr, &mut yr);
                            let hit = EventHit {
                                event_index: ei,
                                x: xr,
                                y: yr,
                            };
                            if ev.terminal {
                                let better = match &first_terminal {
                                    None => true,
                                    Some((xf, _)) => dir * xr < dir * *xf,
                                };
                                if better {
                                    first_terminal = Some((xr, hit));
                                }
                            } else {
                                nonterminal.push((xr, hit));
                            }
                        }
                        g_prev[ei] = g1;
                    }
                    nonterminal.sort_by(|a, b| (dir * a.0).total_cmp(&(dir * b.0)));
                    if let Some((xt, hit)) = first_terminal {
                        // Record non-terminal hits that precede the stop.
                        for (xr, h_non) in nonterminal {
                            if dir * xr <= dir * xt {
                                recorded.push(h_non);
                            }
                        }
                        let y_stop = hit.y.clone();
                        recorded.push(hit.clone());
                        steps.push(step);
                        return Ok(OdeSolution {
                            steps,
                            events: recorded,
                            status: StopReason::Event(hit),
                            x_final: xt,
                            y_final: y_stop,
                            n_rhs_evals: n_evals,
                            n_rejected,
                        });
                    }
                    recorded.extend(nonterminal.into_iter().map(|(_, h_non)| h_non));

                    steps.push(step);
                    x = x_new;
                    std::mem::swap(&mut y, &mut y_new);
                    k.swap(0, 6); // FSAL: k7 is f at the new point.
                    if hit_end {
                        return Ok(OdeSolution {
                            steps,
                            events: recorded,
                            status: StopReason::ReachedEnd,
                            x_final: x,
                            y_final: y,
                            n_rhs_evals: n_evals,
                            n_rejected,
                        });
                    }
                    // Proportional controller.
                    let fac = if err == 0.0 {
                        5.0
                    } else {
                        (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
                    };
                    h *= fac;
                    continue;
                }
                // Error-controlled rejection.
                n_rejected += 1;
                let fac = (0.9 * err.powf(-0.2)).clamp(0.1, 1.0);
                h *= fac.min(0.9);
                continue;
            }
        }
        // Domain rejection path.
        n_rejected += 1;
        h *= 0.5;
    }
}

/// Localize an event root inside an accepted step by bisection on the
/// dense output, to an absolute width `EVENT_XTOL · max(1, |x|)`. `g0` is
/// the event value at `xa` (used for the sign convention).
fn bisect_event(
    g: &(dyn Fn(f64, &[f64]) -> f64 + '_),
    step: &DenseStep,
    xa: f64,
    xb: f64,
    g0: f64,
) -> f64 {
    let mut buf = vec![0.0; step.rcont.len()];
    let (mut a, mut b) = (xa, xb);
    let sign_a = g0.signum();
    for _ in 0..200 {
        if (b - a).abs() <= EVENT_XTOL * a.abs().max(1.0) {
            break;
        }
        let m = 0.5 * (a + b);
        step.eval_into(m, &mut buf);
        let gm = g(m, &buf);
        if gm == 0.0 {
            return m;
        }
        if !gm.is_finite() {
            // Treat unresolved probes as on the far side, keeping the
            // bracket anchored at the known-sign end.
            b = m;
            continue;
        }
        if gm.signum() == sign_a {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// Automatic initial step: the standard two-stage heuristic comparing the
/// state scale with the slope scale, refined by one Euler probe.
#[allow(clippy::too_many_arguments)]
fn initial_step(
    rhs: &mut impl FnMut(f64, &[f64], &mut [f64]) -> Result<(), RhsRejection>,
    x0: f64,
    y0: &[f64],
    f0: &[f64],
    dir: f64,
    x_end: f64,
    opts: &OdeOptions,
    n_evals: &mut usize,
) -> f64 {
    if let Some(h) = opts.h_init {
        return dir * h.abs();
    }
    let span = (x_end - x0).abs();
    let sc = |yi: f64| opts.abs_tol + opts.rel_tol * yi.abs();
    let d0 = (y0.iter().map(|&v| (v / sc(v)).powi(2)).sum::<f64>() / y0.len() as f64).sqrt();
    let d1 = (y0
        .iter()
        .zip(f0)
        .map(|(&yi, &fi)| (fi / sc(yi)).powi(2))
        .sum::<f64>()
        / y0.len() as f64)
        .sqrt();
    let mut h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    h0 = h0.min(span).min(opts.max_step);
    // Euler probe to estimate the second derivative's scale.
    let y1: Vec<f64> = y0
        .iter()
        .zip(f0)
        .map(|(&yi, &fi)| yi + dir * h0 * fi)
        .collect();
    let mut f1 = vec![0.0; y0.len()];
    let d2 = match rhs(x0 + dir * h0, &y1, &mut f1) {
        Ok(()) => {
            *n_evals += 1;
            (f1.iter()
                .zip(f0)
                .zip(y0)
                .map(|((&a, &b), &yi)| ((a - b) / sc(yi)).powi(2))
                .sum::<f64>()
                / y0.len() as f64)
                .sqrt()
                / h0
        }
        Err(_) => {
            // Domain edge right next to the start: begin very small.
            return dir * (h0 * 1e-3).max(1e-12);
        }
    };
    let d_max = d1.max(d2);
    let h1 = if d_max <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d_max).powf(0.2)
    };
    dir * h1.min(100.0 * h0).min(span).min(opts.max_step)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts() -> OdeOptions {
        OdeOptions::default()
    }

    #[test]
    fn exponential_decay_forward_and_backward() {
        let rhs = |_x: f64, y: &[f64], dy: &mut [f64]| {
            dy[0] = -y[0];
            Ok(())
        };
        let sol = integrate(rhs, 0.0, &[1.0], 5.0, &[], &opts()).unwrap();
        assert!((sol.y_final[0] - (-5.0f64).exp()).abs() < 1e-9);
        assert!(matches!(sol.status, StopReason::ReachedEnd));
        // Backward: y' = -y from x=5 with y = e^{-5} recovers y(0) = 1.
        let sol = integrate(rhs, 5.0, &[(-5.0f64).exp()], 0.0, &[], &opts()).unwrap();
        assert!((sol.y_final[0] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn harmonic_oscillator_stays_on_the_energy_shell() {
        let rhs = |_x: f64, y: &[f64], dy: &mut [f64]| {
            dy[0] = y[1];
            dy[1] = -y[0];
            Ok(())
        };
        let t_end = 20.0 * std::f64::consts::PI;
        let sol = integrate(rhs, 0.0, &[1.0, 0.0], t_end, &[], &opts()).unwrap();
        assert!((sol.y_final[0] - 1.0).abs() < 1e-6);
        assert!(sol.y_final[1].abs() < 1e-6);
        let energy = sol.y_final[0].powi(2) + sol.y_final[1].powi(2);
        assert!((energy - 1.0).abs() < 1e-6);
    }

    #[test]
    fn dense_output_tracks_the_solution_between_steps() {
        let rhs = |x: f64, _y: &[f64], dy: &mut [f64]| {
            dy[0] = x.cos();
            Ok(())
        };
        // The continuous extension is one order below the step endpoints,
        // so its guarantee depends on the step length; cap it as the arc
        // solvers do.
        let mut o = opts();
        o.max_step = 0.075;
        let sol = integrate(rhs, 0.0, &[0.0], 10.0, &[], &o).unwrap();
        let mut max_err: f64 = 0.0;
        for i in 0..=1000 {
            let x = 10.0 * i as f64 / 1000.0;
            let y = sol.eval(x);
            max_err = max_err.max((y[0] - x.sin()).abs());
        }
        assert!(max_err < 3e-10, "dense-output error {max_err}");
    }

    #[test]
    fn dense_derivative_tracks_the_right_hand_side() {
        let rhs = |x: f64, _y: &[f64], dy: &mut [f64]| {
            dy[0] = x.cos();
            Ok(())
        };
        let mut o = opts();
        o.max_step = 0.075;
        let sol = integrate(rhs, 0.0, &[0.0], 10.0, &[], &o).unwrap();
        let mut d = [0.0];
        let mut max_err: f64 = 0.0;
        for i in 0..=1000 {
            let x = 10.0 * i as f64 / 1000.0;
            sol.eval_deriv_into(x, &mut d);
            max_err = max_err.max((d[0] - x.cos()).abs());
        }
        assert!(max_err < 5e-8, "dense-derivative error {max_err}");
    }

    #[test]
    fn dense_output_is_continuous_across_step_boundaries() {
        let rhs = |x: f64, y: &[f64], dy: &mut [f64]| {
            dy[0] = -y[0] + x.sin();
            Ok(())
        };
        let sol = integrate(rhs, 0.0, &[0.3], 8.0, &[], &opts()).unwrap();
        for w in sol.steps.windows(2) {
            let xb = w[0].x1();
            let mut left = [0.0];
            let mut right = [0.0];
            w[0].eval_into(xb, &mut left);
            w[1].eval_into(xb, &mut right);
            assert!((left[0] - right[0]).abs() < 1e-13);
        }
    }

    #[test]
    fn terminal_event_is_localized_to_high_accuracy() {
        let rhs = |_x: f64, y: &[f64], dy: &mut [f64]| {
            dy[0] = -y[0];
            Ok(())
        };
        let events = [EventSpec {
            g: Box::new(|_x: f64, y: &[f64]| y[0] - 0.5),
            terminal: true,
            direction: EventDirection::Falling,
        }];
        let sol = integrate(rhs, 0.0, &[1.0], 10.0, &events, &opts()).unwrap();
        match &sol.status {
            StopReason::Event(hit) => {
                assert_eq!(hit.event_index, 0);
                assert!((hit.x - std::f64::consts::LN_2).abs() < 1e-10);
                assert!((hit.y[0] - 0.5).abs() < 1e-10);
            }
            other => panic!("expected event stop, got {other:?}"),
        }
        assert!((sol.x_final - std::f64::consts::LN_2).abs() < 1e-10);
    }

    #[test]
    fn direction_filter_ignores_the_wrong_crossing() {
        // y = sin x crosses 0.5 rising near π/6 and falling near 5π/6; a
        // Falling filter must skip the first crossing.
        let rhs = |x: f64, _y: &[f64], dy: &mut [f64]| {
            dy[0] = x.cos();
            Ok(())
        };
        let events = [EventSpec {
            g: Box::new(|_x: f64, y: &[f64]| y[0] - 0.5),
            terminal: true,
            direction: EventDirection::Falling,
        }];
        let mut o = opts();
        o.max_step = 0.075;
        let sol = integrate(rhs, 0.0, &[0.0], 10.0, &events, &o).unwrap();
        let expected = std::f64::consts::PI * 5.0 / 6.0;
        assert!(
            (sol.x_final - expected).abs() < 1e-9,
            "stopped at {} want {expected}",
            sol.x_final
        );
    }

    #[test]
    fn backward_event_localization_works() {
        let rhs = |_x: f64, _y: &[f64], dy: &mut [f64]| {
            dy[0] = 1.0;
            Ok(())
        };
        // Integrating x: 2 → 0 with y(2) = 2 gives y = x; stop at y = 0.5.
        let events = [EventSpec {
            g: Box::new(|_x: f64, y: &[f64]| y[0] - 0.5),
            terminal: true,
            direction: EventDirection::Any,
        }];
        let sol = integrate(rhs, 2.0, &[2.0], 0.0, &events, &opts()).unwrap();
        assert!((sol.x_final - 0.5).abs() < 1e-10);
    }

    #[test]
    fn event_exactly_at_the_start_does_not_fire() {
        // g = y with y(0) = 0 and y strictly increasing: a Rising filter
        // requires a strictly negative previous value, so no stop.
        let rhs = |_x: f64, _y: &[f64], dy: &mut [f64]| {
            dy[0] = 1.0;
            Ok(())
        };
        let events = [EventSpec {
            g: Box::new(|_x: f64, y: &[f64]| y[0]),
            terminal: true,
            direction: EventDirection::Rising,
        }];
        let sol = integrate(rhs, 0.0, &[0.0], 1.0, &events, &opts()).unwrap();
        assert!(matches!(sol.status, StopReason::ReachedEnd));
    }

    #[test]
    fn nonterminal_events_are_recorded_and_integration_continues() {
        let rhs = |x: f64, _y: &[f64], dy: &mut [f64]| {
            dy[0] = x.cos();
            Ok(())
        };
        let events = [EventSpec {
            g: Box::new(|_x: f64, y: &[f64]| y[0] - 0.5),
            terminal: false,
            direction: EventDirection::Any,
        }];
        let sol = integrate(rhs, 0.0, &[0.0], 10.0, &events, &opts()).unwrap();
        assert!(matches!(sol.status, StopReason::ReachedEnd));
        // sin x = 0.5 has 4 crossings in [0, 10].
        assert_eq!(sol.events.len(), 4);
        let expected = [
            std::f64::consts::PI / 6.0,
            std::f64::consts::PI * 5.0 / 6.0,
            std::f64::consts::PI * 13.0 / 6.0,
            std::f64::consts::PI * 17.0 / 6.0,
        ];
        for (hit, want) in sol.events.iter().zip(expected) {
            assert!((hit.x - want).abs() < 1e-8, "{} vs {want}", hit.x);
        }
    }

    #[test]
    fn domain_rejection_shrinks_steps_then_collapses_with_cause() {
        // The right-hand side refuses x < 1: integrating 2 → 0 must fail
        // near x = 1 and carry the rejection message.
        let rhs = |x: f64, _y: &[f64], dy: &mut [f64]| {
            if x < 1.0 {
                return Err(RhsRejection("left the test domain".to_string()));
            }
            dy[0] = -1.0;
            Ok(())
        };
        let err = integrate(rhs, 2.0, &[5.0], 0.0, &[], &opts()).unwrap_err();
        match err {
            OdeError::StepSizeCollapse { x, cause, .. } => {
                assert!((x - 1.0).abs() < 1e-9, "collapse at {x}");
                assert!(cause.unwrap().contains("left the test domain"));
            }
            other => panic!("expected step-size collapse, got {other}"),
        }
    }

    #[test]
    fn initial_point_rejection_is_reported_directly() {
        let rhs = |_x: f64, _y: &[f64], _dy: &mut [f64]| Err(RhsRejection("bad start".to_string()));
        let err = integrate(rhs, 0.0, &[1.0], 1.0, &[], &opts()).unwrap_err();
        assert!(matches!(err, OdeError::InitialPointRejected { .. }));
    }

    #[test]
    fn stiff_transient_is_resolved_accurately() {
        // y' = -50(y - sin x) + cos x has exact solution
        // y = sin x + (y0) e^{-50x}.
        let rhs = |x: f64, y: &[f64], dy: &mut [f64]| {
            dy[0] = -50.0 * (y[0] - x.sin()) + x.cos();
            Ok(())
        };
        let sol = integrate(rhs, 0.0, &[1.0], 2.0, &[], &opts()).unwrap();
        let exact = 2.0f64.sin() + (-100.0f64).exp();
        assert!((sol.y_final[0] - exact).abs() < 1e-7);
    }

    #[test]
    fn step_budget_is_enforced() {
        let rhs = |_x: f64, y: &[f64], dy: &mut [f64]| {
            dy[0] = -y[0];
            Ok(())
        };
        let mut o = opts();
        o.max_steps = 3;
        o.max_step = 1e-3;
        let err = integrate(rhs, 0.0, &[1.0], 10.0, &[], &o).unwrap_err();
        assert!(matches!(err, OdeError::TooManySteps { .. }));
    }

    #[test]
    fn work_counters_reflect_fsal_reuse() {
        let rhs = |_x: f64, y: &[f64], dy: &mut [f64]| {
            dy[0] = -y[0];
            Ok(())
        };
        let sol = integrate(rhs, 0.0, &[1.0], 5.0, &[], &opts()).unwrap();
        let accepted = sol.steps.len();
        // 6 fresh evaluations per step (FSAL) + init overhead.
        assert!(sol.n_rhs_evals <= 6 * (accepted + sol.n_rejected) + 3);
        assert!(sol.n_rhs_evals >= 6 * accepted);
    }

    #[test]
    fn max_step_cap_is_respected() {
        let rhs = |_x: f64, _y: &[f64], dy: &mut [f64]| {
            dy[0] = 1.0;
            Ok(())
        };
        let mut o = opts();
        o.max_step = 0.125;
        let sol = integrate(rhs, 0.0, &[0.0], 1.0, &[], &o).unwrap();
        for s in &sol.steps {
            assert!(s.h.abs() <= 0.125 + 1e-15);
        }
    }

    #[test]
    fn sample_points_cover_the_arc_in_order() {
        let rhs = |_x: f64, y: &[f64], dy: &mut [f64]| {
            dy[0] = -y[0];
            Ok(())
        };
        let sol = integrate(rhs, 2.0, &[1.0], 0.0, &[], &opts()).unwrap();
        let pts = sol.sample_points(3);
        assert!(pts.len() >= sol.steps.len() * 4);
        for w in pts.windows(2) {
            assert!(w[1].0 <= w[0].0 + 1e-12, "samples out of order");
        }
        let (x_last, y_last) = pts.last().unwrap();
        assert_eq!(*x_last, sol.x_final);
        assert!((y_last[0] - sol.y_final[0]).abs() < 1e-12);
    }
}
