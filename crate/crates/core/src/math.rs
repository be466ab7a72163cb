//! Thin wrappers over `libm` so call sites read like `std` float methods.

#[inline]
pub(crate) fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub(crate) fn sin(x: f64) -> f64 {
    libm::sin(x)
}

#[inline]
pub(crate) fn cos(x: f64) -> f64 {
    libm::cos(x)
}

#[inline]
pub(crate) fn atan2(y: f64, x: f64) -> f64 {
    libm::atan2(y, x)
}

#[inline]
pub(crate) fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub(crate) fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub(crate) fn powf(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}

#[inline]
pub(crate) fn floor(x: f64) -> f64 {
    libm::floor(x)
}

#[inline]
pub(crate) fn round(x: f64) -> f64 {
    libm::round(x)
}

#[inline]
pub(crate) fn hypot(x: f64, y: f64) -> f64 {
    libm::hypot(x, y)
}

#[inline]
pub(crate) fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

/// Mathematical modulus: result in `[0, m)` for `m > 0`.
pub(crate) fn rem_euclid(x: f64, m: f64) -> f64 {
    let mut r = libm::fmod(x, m);
    if r < 0.0 {
        r += m;
    }
    // -tiny + m can round up to exactly m
    if r >= m {
        r -= m;
    }
    r
}

pub(crate) fn deg_to_rad(d: f64) -> f64 {
    d * (core::f64::consts::PI / 180.0)
}

pub(crate) fn rad_to_deg(r: f64) -> f64 {
    r * (180.0 / core::f64::consts::PI)
}
