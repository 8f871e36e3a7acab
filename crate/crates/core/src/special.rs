//! Small special-function helpers on top of `statrs`.

use statrs::function::gamma::gamma;

/// `1 / Gamma(x)`, zero at the poles `x = 0, -1, -2, ...`.
pub fn rgamma(x: f64) -> f64 {
    if x <= 0.0 && x.fract() == 0.0 {
        0.0
    } else {
        1.0 / gamma(x)
    }
}

/// `Gamma(a) / Gamma(b)` with `1/Gamma` vanishing at poles of the
/// denominator. `a` must not be a pole.
pub fn gamma_ratio(a: f64, b: f64) -> f64 {
    gamma(a) * rgamma(b)
}
