//! Float math that works without `std`.
//!
//! `abs`, `min`, `max`, and `clamp` are available in `core`; the
//! transcendental methods are not. When built without the `std` feature this
//! extension trait fills them in via `libm`, so call sites look identical in
//! both configurations. Modules that need it import it as
//! `#[cfg(not(feature = "std"))] use crate::float::F64Ext;`.

#![allow(dead_code)]

#[cfg(not(feature = "std"))]
pub(crate) trait F64Ext {
    fn sqrt(self) -> f64;
    fn exp(self) -> f64;
    fn ln(self) -> f64;
    fn tanh(self) -> f64;
    fn cos(self) -> f64;
    fn sin(self) -> f64;
    fn floor(self) -> f64;
    fn round(self) -> f64;
    fn powf(self, e: f64) -> f64;
    fn powi(self, e: i32) -> f64;
}

#[cfg(not(feature = "std"))]
impl F64Ext for f64 {
    fn sqrt(self) -> f64 {
        libm::sqrt(self)
    }
    fn exp(self) -> f64 {
        libm::exp(self)
    }
    fn ln(self) -> f64 {
        libm::log(self)
    }
    fn tanh(self) -> f64 {
        libm::tanh(self)
    }
    fn cos(self) -> f64 {
        libm::cos(self)
    }
    fn sin(self) -> f64 {
        libm::sin(self)
    }
    fn floor(self) -> f64 {
        libm::floor(self)
    }
    fn round(self) -> f64 {
        libm::round(self)
    }
    fn powf(self, e: f64) -> f64 {
        libm::pow(self, e)
    }
    fn powi(self, e: i32) -> f64 {
        // Binary exponentiation, matching the strategy std uses.
        let mut base = if e < 0 { 1.0 / self } else { self };
        let mut n = e.unsigned_abs();
        let mut acc = 1.0;
        while n > 0 {
            if n & 1 == 1 {
                acc *= base;
            }
            base *= base;
            n >>= 1;
        }
        acc
    }
}
