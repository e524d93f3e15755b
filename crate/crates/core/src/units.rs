//! Conversions between angular frequencies (rad/μs) and the MHz-of-value/2π
//! convention used for reporting.

use std::f64::consts::PI;

pub const TWO_PI: f64 = 2.0 * PI;

/// Angular frequency in rad/μs for a value quoted as `value/2π` in MHz.
pub fn from_mhz(mhz: f64) -> f64 {
    TWO_PI * mhz
}

/// Value/2π in MHz for an angular frequency in rad/μs.
pub fn to_mhz(rad_per_us: f64) -> f64 {
    rad_per_us / TWO_PI
}

/// Wraps an angle into `[0, 2π)`.
pub fn wrap_2pi(phi: f64) -> f64 {
    let w = phi.rem_euclid(TWO_PI);
    if w >= TWO_PI {
        0.0
    } else {
        w
    }
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_pi(phi: f64) -> f64 {
    let w = wrap_2pi(phi);
    if w > PI {
        w - TWO_PI
    } else {
        w
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mhz_round_trip() {
        assert!((to_mhz(from_mhz(24.92)) - 24.92).abs() < 1e-12);
        assert!((from_mhz(1.0) - TWO_PI).abs() < 1e-15);
    }

    #[test]
    fn wrapping() {
        assert!((wrap_2pi(-0.1 * PI) - 1.9 * PI).abs() < 1e-12);
        assert!((wrap_pi(1.5 * PI) + 0.5 * PI).abs() < 1e-12);
        assert_eq!(wrap_pi(PI), PI);
    }
}
