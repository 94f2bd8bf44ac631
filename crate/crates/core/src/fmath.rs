//! Scalar math routed through `libm` so results are bit-identical with and
//! without `std`, and across platforms.

pub use libm::{erf, exp, fabs, floor, log, log10, pow, round, sin, sqrt, tanh};

/// Natural logarithm, named to avoid clashing with `f64::ln` at call sites.
#[inline]
pub fn ln(x: f64) -> f64 {
    log(x)
}
