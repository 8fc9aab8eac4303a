//! Scalar numerical primitives shared by every solver.
//!
//! Everything here is a pure function of its arguments. The two
//! exponential-equation inverters ([`exprel_inverse`] and [`kkt_exponent`])
//! start from a Lambert-W closed form and finish with a few guarded Newton
//! steps so the result is accurate to a few ulps even where the closed form
//! loses digits near the branch point.

use std::f64::consts::{E, LN_2};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The Lambert-W branch point `-1/e`.
pub const BRANCH_POINT: f64 = -1.0 / E;

/// Arguments this far below the branch point are treated as rounding noise.
const BRANCH_CLAMP: f64 = 1e-12;

/// Stopping controls for the scalar iterations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Tolerance {
    pub fn new(abs_tol: f64, rel_tol: f64, max_iter: usize) -> Result<Self> {
        let tol = Tolerance {
            abs_tol,
            rel_tol,
            max_iter,
        };
        tol.validate()?;
        Ok(tol)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tol > 0.0) || !(self.rel_tol > 0.0) || self.max_iter == 0 {
            return Err(Error::domain(format!(
                "tolerance needs abs_tol > 0, rel_tol > 0, max_iter >= 1 (got {self:?})"
            )));
        }
        Ok(())
    }
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance {
            abs_tol: 1e-14,
            rel_tol: 1e-9,
            max_iter: 200,
        }
    }
}

/// Halley refinement of `w·e^w = x`.
fn halley(mut w: f64, x: f64) -> f64 {
    for _ in 0..100 {
        let ew = w.exp();
        let resid = w * ew - x;
        if resid == 0.0 {
            break;
        }
        let wp1 = w + 1.0;
        if wp1 == 0.0 {
            break;
        }
        let denom = ew * wp1 - (w + 2.0) * resid / (2.0 * wp1);
        let step = resid / denom;
        if !step.is_finite() {
            break;
        }
        w -= step;
        if step.abs() <= 4.0 * f64::EPSILON * (1.0 + w.abs()) {
            break;
        }
    }
    w
}

/// Series of `W` around the branch point in `p = ±sqrt(2(e·x + 1))`.
fn branch_series(p: f64) -> f64 {
    -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p * p * p
}

fn check_branch_domain(x: f64) -> Result<Option<f64>> {
    if x.is_nan() {
        return Err(Error::domain("Lambert W of NaN"));
    }
    if x <= BRANCH_POINT {
        if x >= BRANCH_POINT - BRANCH_CLAMP {
            return Ok(Some(-1.0));
        }
        return Err(Error::domain(format!(
            "Lambert W argument {x} is below the branch point -1/e"
        )));
    }
    Ok(None)
}

/// Principal branch of the Lambert W function (`w ≥ -1`, `w·e^w = x`).
pub fn lambert_w0(x: f64) -> Result<f64> {
    if let Some(w) = check_branch_domain(x)? {
        return Ok(w);
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x == f64::INFINITY {
        return Ok(f64::INFINITY);
    }
    if x > 1e100 {
        // w + ln w = ln x, iterated in log space to avoid overflowing e^w.
        let lx = x.ln();
        let mut w = lx - lx.ln();
        for _ in 0..100 {
            let next = lx - w.ln();
            if (next - w).abs() <= 4.0 * f64::EPSILON * next {
                return Ok(next);
            }
            w = next;
        }
        return Ok(w);
    }
    let guess = if x < -0.25 {
        branch_series((2.0 * (E * x + 1.0)).max(0.0).sqrt())
    } else if x < 3.0 {
        x.ln_1p()
    } else {
        let l1 = x.ln();
        let l2 = l1.ln();
        l1 - l2 + l2 / l1
    };
    Ok(halley(guess, x))
}

/// Lower real branch `W_{-1}` (`w ≤ -1`) for `x ∈ [-1/e, 0)`.
pub fn lambert_wm1(x: f64) -> Result<f64> {
    if let Some(w) = check_branch_domain(x)? {
        return Ok(w);
    }
    if x >= 0.0 {
        return Err(Error::domain(format!(
            "W_-1 is only real on [-1/e, 0), got {x}"
        )));
    }
    let guess = if x < -0.25 {
        branch_series(-(2.0 * (E * x + 1.0)).max(0.0).sqrt())
    } else {
        let l1 = (-x).ln();
        let l2 = (-l1).ln();
        l1 - l2 + l2 / l1
    };
    Ok(halley(guess, x).min(-1.0))
}

/// `expm1(y)/y`, continuous through `y = 0`.
pub fn exprel(y: f64) -> f64 {
    if y == 0.0 {
        1.0
    } else {
        y.exp_m1() / y
    }
}

/// `(x - 1)·e^x + 1`, accurate for small `x` where the direct form cancels.
///
/// This is minus the bandwidth derivative of the minimum-power curve in the
/// exponent variable; it is positive and increasing for `x > 0`.
pub fn kkt_curve(x: f64) -> f64 {
    if x.abs() < 0.5 {
        // sum_{n>=2} (n-1) x^n / n!
        let mut term = x; // x^n / n! at n = 1
        let mut sum = 0.0;
        for n in 2..30 {
            term *= x / n as f64;
            let add = (n - 1) as f64 * term;
            sum += add;
            if add.abs() <= f64::EPSILON * sum.abs() * 0.25 {
                break;
            }
        }
        sum
    } else {
        x * x.exp() - x.exp_m1()
    }
}

/// Solves `(x - 1)·e^x + 1 = c` for `x > 0` given `c > 0`.
///
/// Closed form `x = 1 + W0((c - 1)/e)`, polished by Newton steps on the
/// cancellation-free [`kkt_curve`].
pub fn kkt_exponent(c: f64) -> Result<f64> {
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::domain(format!(
            "kkt_exponent needs a finite positive level, got {c}"
        )));
    }
    let mut x = if c < 1e-4 {
        (2.0 * c).sqrt()
    } else {
        1.0 + lambert_w0((c - 1.0) / E)?
    };
    if !(x > 0.0) {
        x = (2.0 * c).sqrt();
    }
    for _ in 0..60 {
        let slope = x * x.exp();
        let step = (kkt_curve(x) - c) / slope;
        let next = if x - step > 0.0 { x - step } else { 0.5 * x };
        let done = (next - x).abs() <= 2.0 * f64::EPSILON * next;
        x = next;
        if done {
            break;
        }
    }
    Ok(x)
}

/// Solves `expm1(y)/y = q` for `y > 0` given `q > 1`.
///
/// With `λ = 1/q` the closed form is `y = -W_{-1}(-λ·e^{-λ}) - λ`; the
/// principal branch only recovers the trivial root `y = 0`.
pub fn exprel_inverse(q: f64) -> Result<f64> {
    if !(q > 1.0) || !q.is_finite() {
        return Err(Error::domain(format!(
            "expm1(y)/y = q has a positive root only for finite q > 1, got {q}"
        )));
    }
    let lam = 1.0 / q;
    let mut y = -lambert_wm1(-lam * (-lam).exp())? - lam;
    if !(y > 0.0) || !y.is_finite() {
        y = 2.0 * (q - 1.0);
    }
    for _ in 0..60 {
        // d/dy [expm1(y)/y] = kkt_curve(y) / y^2
        let slope = kkt_curve(y) / (y * y);
        let step = (exprel(y) - q) / slope;
        let next = if y - step > 0.0 { y - step } else { 0.5 * y };
        let done = (next - y).abs() <= 2.0 * f64::EPSILON * next;
        y = next;
        if done {
            break;
        }
    }
    Ok(y)
}

/// Final bracket of a bisection run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bracket {
    pub lo: f64,
    pub hi: f64,
    /// Number of midpoint evaluations performed.
    pub iterations: usize,
    /// Width of the bracket the iteration started from.
    pub initial_width: f64,
}

impl Bracket {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Bisection on a monotone function with a sign change on `[lo, hi]`.
///
/// Stops when the bracket is narrower than `abs_tol + rel_tol·max(|lo|, |hi|)`,
/// when an exact zero is hit, or when no floating-point midpoint remains.
pub fn bisect<F: FnMut(f64) -> f64>(
    mut f: F,
    lo: f64,
    hi: f64,
    tol: &Tolerance,
) -> Result<Bracket> {
    tol.validate()?;
    if !(lo <= hi) {
        return Err(Error::domain(format!("bisection interval [{lo}, {hi}]")));
    }
    let f_lo = f(lo);
    let f_hi = f(hi);
    let initial_width = hi - lo;
    if f_lo == 0.0 {
        return Ok(Bracket {
            lo,
            hi: lo,
            iterations: 0,
            initial_width,
        });
    }
    if f_hi == 0.0 {
        return Ok(Bracket {
            lo: hi,
            hi,
            iterations: 0,
            initial_width,
        });
    }
    if f_lo.is_nan() || f_hi.is_nan() || (f_lo > 0.0) == (f_hi > 0.0) {
        return Err(Error::Bracket { lo, hi, f_lo, f_hi });
    }
    let rising = f_lo < 0.0;
    let (mut lo, mut hi) = (lo, hi);
    for iterations in 0..tol.max_iter {
        if hi - lo <= tol.abs_tol + tol.rel_tol * lo.abs().max(hi.abs()) {
            return Ok(Bracket {
                lo,
                hi,
                iterations,
                initial_width,
            });
        }
        let mid = lo + 0.5 * (hi - lo);
        if mid <= lo || mid >= hi {
            return Ok(Bracket {
                lo,
                hi,
                iterations,
                initial_width,
            });
        }
        let f_mid = f(mid);
        if f_mid == 0.0 {
            return Ok(Bracket {
                lo: mid,
                hi: mid,
                iterations: iterations + 1,
                initial_width,
            });
        }
        if (f_mid < 0.0) == rising {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::NoConvergence {
        what: "bisection".into(),
        iterations: tol.max_iter,
    })
}

/// Root of a monotone function on `[lo, hi]` (midpoint of the final bracket).
pub fn bisect_root<F: FnMut(f64) -> f64>(f: F, lo: f64, hi: f64, tol: &Tolerance) -> Result<f64> {
    bisect(f, lo, hi, tol).map(|b| b.midpoint())
}

/// Objective of the single-variable accuracy problem,
/// `(α₁·log₂(1/η) + α₂) / (1 − η)`.
pub fn accuracy_ratio(alpha1: f64, alpha2: f64, eta: f64) -> f64 {
    (alpha1 * (-eta.log2()) + alpha2) / (1.0 - eta)
}

/// Result of [`dinkelbach`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FractionalMin {
    pub eta: f64,
    pub objective: f64,
    pub iterations: usize,
    /// Ratio parameter after every update, starting from the initial value.
    pub trace: Vec<f64>,
}

/// Dinkelbach iteration for `min (α₁·log₂(1/η) + α₂)/(1 − η)` on
/// `[eta_lo, eta_hi]`.
///
/// The parametric subproblem `min N(η) − ζ·D(η)` is convex in `η`; its box
/// minimizer is the clamp of the stationary point `α₁/(ζ·ln 2)`.
pub fn dinkelbach(
    alpha1: f64,
    alpha2: f64,
    eta_lo: f64,
    eta_hi: f64,
    tol: &Tolerance,
) -> Result<FractionalMin> {
    tol.validate()?;
    if !(eta_lo > 0.0 && eta_lo <= eta_hi && eta_hi < 1.0) {
        return Err(Error::domain(format!(
            "dinkelbach needs 0 < eta_lo <= eta_hi < 1, got [{eta_lo}, {eta_hi}]"
        )));
    }
    if !(alpha1 >= 0.0 && alpha2 >= 0.0 && alpha1 + alpha2 > 0.0) || !(alpha1 + alpha2).is_finite()
    {
        return Err(Error::domain(format!(
            "dinkelbach needs finite alpha1, alpha2 >= 0 with a positive sum, got ({alpha1}, {alpha2})"
        )));
    }
    let numer = |eta: f64| alpha1 * (-eta.log2()) + alpha2;
    let denom = |eta: f64| 1.0 - eta;

    let mut eta = eta_hi;
    let mut zeta = numer(eta) / denom(eta);
    let mut trace = vec![zeta];
    let mut prev_gap = f64::NAN;
    for iterations in 1..=tol.max_iter {
        let next = (alpha1 / (LN_2 * zeta)).clamp(eta_lo, eta_hi);
        let gap = numer(next) - zeta * denom(next);
        let ratio = numer(next) / denom(next);
        let stationary = next == eta;
        eta = next;
        // H(ζ) ≤ 0 always holds, so ζ never increases; guard against rounding.
        if ratio <= zeta {
            zeta = ratio;
        }
        trace.push(zeta);
        let settled = gap.abs() <= 4.0 * f64::EPSILON * numer(eta).abs().max(f64::MIN_POSITIVE);
        let contracted = prev_gap.is_finite() && gap.abs() < tol.rel_tol * prev_gap.abs();
        if stationary || settled || contracted {
            return Ok(FractionalMin {
                eta,
                objective: zeta,
                iterations,
                trace,
            });
        }
        prev_gap = gap;
    }
    Err(Error::NoConvergence {
        what: "dinkelbach".into(),
        iterations: tol.max_iter,
    })
}

/// Brute-force minimizer over `n` evenly spaced points of `[lo, hi]`.
pub fn grid_min<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, n: usize) -> Result<(f64, f64)> {
    if !(lo < hi) || n < 2 {
        return Err(Error::domain(format!(
            "grid_min needs lo < hi and n >= 2, got [{lo}, {hi}], n = {n}"
        )));
    }
    let step = (hi - lo) / (n - 1) as f64;
    let mut best = (lo, f(lo));
    for i in 1..n {
        let x = if i == n - 1 { hi } else { lo + i as f64 * step };
        let v = f(x);
        if v < best.1 {
            best = (x, v);
        }
    }
    Ok(best)
}
