//! Digamma and log-gamma.

use crate::error::{Error, Result};

/// `B_{2k} / (2k)` for k = 1..7, the asymptotic-series coefficients of ψ.
const ASYMPTOTIC: [f64; 7] = [
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
];

/// Below this the recurrence shifts the argument upward before the series applies.
const SERIES_THRESHOLD: f64 = 10.0;

/// ψ(x) for x > 0, via ψ(x) = ψ(x + 1) − 1/x and the asymptotic expansion.
pub fn digamma(x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::Domain {
            function: "digamma",
            value: x,
        });
    }
    Ok(psi(x))
}

/// Unchecked ψ for callers that guarantee a positive argument.
pub(crate) fn psi(mut x: f64) -> f64 {
    debug_assert!(x > 0.0, "psi({x})");
    if x.is_infinite() {
        return f64::INFINITY;
    }
    let mut shift = 0.0;
    while x < SERIES_THRESHOLD {
        shift += 1.0 / x;
        x += 1.0;
    }
    let inv2 = 1.0 / (x * x);
    let mut pow = inv2;
    let mut series = 0.0;
    for c in ASYMPTOTIC {
        series += c * pow;
        pow *= inv2;
    }
    x.ln() - 0.5 / x - series - shift
}

pub(crate) fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}
