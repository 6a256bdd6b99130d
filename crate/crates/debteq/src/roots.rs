//! Scalar root-finding and one-dimensional minimization.
//!
//! Every inverse in the solver (inverse marginal costs, the Hamiltonian
//! maximizer, the branch functions) is computed by bracketing bisection
//! refined with safeguarded Newton steps: a Newton candidate is accepted
//! only while it stays inside the current sign-change bracket, so the
//! iteration inherits bisection's global convergence and Newton's local
//! speed. Monotonicity of the residuals is established analytically by the
//! callers; this module only assumes a sign change on the initial interval.

/// Default absolute tolerance on the bracket width for all root-finding.
pub const TOL_ROOT: f64 = 1e-12;

/// Hard cap on refinement iterations (bisection halves the bracket each
/// step, so 200 iterations shrink any finite bracket below `TOL_ROOT`).
const MAX_ITER: usize = 200;

/// Root of `f` on `[lo, hi]` by bisection with safeguarded Newton
/// acceleration, to absolute bracket width `xtol`.
///
/// Requires `f(lo)` and `f(hi)` to have opposite signs (a zero at either
/// endpoint is returned immediately); returns `None` otherwise. `df` is the
/// derivative of `f`; a non-finite or zero derivative simply falls back to
/// a bisection step, as does a Newton candidate outside the bracket.
pub fn bisect_newton(
    f: impl Fn(f64) -> f64,
    df: impl Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    xtol: f64,
) -> Option<f64> {
    let (mut a, mut b) = (lo, hi);
    let fa = f(a);
    if fa == 0.0 {
        return Some(a);
    }
    let fb = f(b);
    if fb == 0.0 {
        return Some(b);
    }
    if !(fa.is_nan() || fb.is_nan()) && fa.signum() == fb.signum() {
        return None;
    }
    if fa.is_nan() || fb.is_nan() {
        return None;
    }
    let sign_a = fa.signum();
    let mut x = 0.5 * (a + b);
    for _ in 0..MAX_ITER {
        let fx = f(x);
        if fx == 0.0 {
            return Some(x);
        }
        if fx.is_nan() {
            // Retreat to plain bisection on the half bracket next to `a`.
            x = 0.5 * (a + x);
            continue;
        }
        if fx.signum() == sign_a {
            a = x;
        } else {
            b = x;
        }
        if (b - a).abs() <= xtol {
            return Some(0.5 * (a + b));
        }
        let d = df(x);
        let newton = x - fx / d;
        x = if d.is_finite() && d != 0.0 && newton > a.min(b) && newton < a.max(b) {
            newton
        } else {
            0.5 * (a + b)
        };
    }
    Some(0.5 * (a + b))
}

/// Root of `f` on `[lo, hi]` by plain bisection to bracket width `xtol`.
pub fn bisect(f: impl Fn(f64) -> f64, lo: f64, hi: f64, xtol: f64) -> Option<f64> {
    bisect_newton(f, |_| f64::NAN, lo, hi, xtol)
}

/// Minimum of a unimodal `f` on `[lo, hi]` by golden-section search to
/// interval width `xtol`; returns `(argmin, min)`.
pub fn golden_min(f: impl Fn(f64) -> f64, lo: f64, hi: f64, xtol: f64) -> (f64, f64) {
    const INVPHI: f64 = 0.618_033_988_749_894_9; // (√5 − 1)/2
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INVPHI * (b - a);
    let mut d = a + INVPHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > xtol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INVPHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INVPHI * (b - a);
            fd = f(d);
        }
    }
    let xm = 0.5 * (a + b);
    let fm = f(xm);
    if fc <= fd && fc <= fm {
        (c, fc)
    } else if fd <= fm {
        (d, fd)
    } else {
        (xm, fm)
    }
}
