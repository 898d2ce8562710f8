//! Bracketed scalar root finding.

use thiserror::Error;

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum RootError {
    #[error("no sign change on [{lo}, {hi}]")]
    NoBracket { lo: f64, hi: f64 },
    #[error("bisection did not reach the requested width after {iterations} halvings")]
    IterationLimit { iterations: usize },
}

/// Bisection for a root of `f` on `[lo, hi]`, stopping once the bracket is
/// narrower than `xtol`. Returns the bracket midpoint.
pub fn bisect<F>(f: F, mut lo: f64, mut hi: f64, xtol: f64) -> Result<f64, RootError>
where
    F: Fn(f64) -> f64,
{
    let mut f_lo = f(lo);
    let f_hi = f(hi);
    if f_lo == 0.0 {
        return Ok(lo);
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }
    if f_lo.signum() == f_hi.signum() || f_lo.is_nan() || f_hi.is_nan() {
        return Err(RootError::NoBracket { lo, hi });
    }
    const MAX_HALVINGS: usize = 200;
    for _ in 0..MAX_HALVINGS {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= xtol || mid == lo || mid == hi {
            return Ok(mid);
        }
        let f_mid = f(mid);
        if f_mid == 0.0 {
            return Ok(mid);
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    Err(RootError::IterationLimit {
        iterations: MAX_HALVINGS,
    })
}
