//! Forward-mode dual numbers over complex arithmetic.
//!
//! A [`CDual`] carries a complex value and up to [`MAX_PARAMS`] complex
//! partial derivatives. The transfer-matrix kernel is written once against
//! [`CScalar`] and instantiated for plain `Complex64` (values only) and for
//! `CDual` (values plus exact derivatives).

use std::ops::{Add, Div, Mul, Neg, Sub};

use num_complex::Complex64;

/// Maximum number of design parameters a gradient solve can track.
pub const MAX_PARAMS: usize = 8;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

pub trait CScalar:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self> + Neg<Output = Self>
{
    fn constant(z: Complex64) -> Self;
    fn value(&self) -> Complex64;
    fn sqrt(self) -> Self;
    fn cos(self) -> Self;
    fn sin(self) -> Self;
    fn scale(self, s: Complex64) -> Self;
}

impl CScalar for Complex64 {
    #[inline]
    fn constant(z: Complex64) -> Self {
        z
    }
    #[inline]
    fn value(&self) -> Complex64 {
        *self
    }
    #[inline]
    fn sqrt(self) -> Self {
        Complex64::sqrt(self)
    }
    #[inline]
    fn cos(self) -> Self {
        Complex64::cos(self)
    }
    #[inline]
    fn sin(self) -> Self {
        Complex64::sin(self)
    }
    #[inline]
    fn scale(self, s: Complex64) -> Self {
        self * s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CDual {
    pub v: Complex64,
    pub d: [Complex64; MAX_PARAMS],
    /// Number of live derivative slots; slots past `n` are zero.
    pub n: u8,
}

impl CDual {
    pub fn constant_value(v: Complex64) -> Self {
        CDual { v, d: [ZERO; MAX_PARAMS], n: 0 }
    }

    /// Independent variable `slot` out of `n_params`.
    pub fn variable(v: Complex64, slot: usize, n_params: usize) -> Self {
        assert!(slot < n_params && n_params <= MAX_PARAMS, "derivative slot out of range");
        let mut d = [ZERO; MAX_PARAMS];
        d[slot] = Complex64::new(1.0, 0.0);
        CDual { v, d, n: n_params as u8 }
    }

    #[inline]
    pub fn deriv(&self, slot: usize) -> Complex64 {
        self.d[slot]
    }

    #[inline]
    fn map_d(self, f: impl Fn(Complex64) -> Complex64, v: Complex64) -> Self {
        let mut out = CDual { v, d: [ZERO; MAX_PARAMS], n: self.n };
        for i in 0..self.n as usize {
            out.d[i] = f(self.d[i]);
        }
        out
    }
}

impl Add for CDual {
    type Output = CDual;
    #[inline]
    fn add(self, o: CDual) -> CDual {
        let n = self.n.max(o.n);
        let mut d = [ZERO; MAX_PARAMS];
        for i in 0..n as usize {
            d[i] = self.d[i] + o.d[i];
        }
        CDual { v: self.v + o.v, d, n }
    }
}

impl Sub for CDual {
    type Output = CDual;
    #[inline]
    fn sub(self, o: CDual) -> CDual {
        let n = self.n.max(o.n);
        let mut d = [ZERO; MAX_PARAMS];
        for i in 0..n as usize {
            d[i] = self.d[i] - o.d[i];
        }
        CDual { v: self.v - o.v, d, n }
    }
}

impl Mul for CDual {
    type Output = CDual;
    #[inline]
    fn mul(self, o: CDual) -> CDual {
        let n = self.n.max(o.n);
        let mut d = [ZERO; MAX_PARAMS];
        for i in 0..n as usize {
            d[i] = self.d[i] * o.v + self.v * o.d[i];
        }
        CDual { v: self.v * o.v, d, n }
    }
}

impl Div for CDual {
    type Output = CDual;
    #[inline]
    fn div(self, o: CDual) -> CDual {
        let n = self.n.max(o.n);
        let inv = o.v.inv();
        let v = self.v * inv;
        let mut d = [ZERO; MAX_PARAMS];
        for i in 0..n as usize {
            d[i] = (self.d[i] - v * o.d[i]) * inv;
        }
        CDual { v, d, n }
    }
}

impl Neg for CDual {
    type Output = CDual;
    #[inline]
    fn neg(self) -> CDual {
        self.map_d(|x| -x, -self.v)
    }
}

impl CScalar for CDual {
    #[inline]
    fn constant(z: Complex64) -> Self {
        CDual::constant_value(z)
    }
    #[inline]
    fn value(&self) -> Complex64 {
        self.v
    }
    #[inline]
    fn sqrt(self) -> Self {
        let w = self.v.sqrt();
        let k = (w * 2.0).inv();
        self.map_d(|x| x * k, w)
    }
    #[inline]
    fn cos(self) -> Self {
        let s = -self.v.sin();
        self.map_d(|x| x * s, self.v.cos())
    }
    #[inline]
    fn sin(self) -> Self {
        let c = self.v.cos();
        self.map_d(|x| x * c, self.v.sin())
    }
    #[inline]
    fn scale(self, s: Complex64) -> Self {
        self.map_d(|x| x * s, self.v * s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    // Central difference of a complex function of one real variable.
    fn fd(f: impl Fn(f64) -> Complex64, x: f64) -> Complex64 {
        let h = 1e-6;
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn chain_rule_through_every_primitive() {
        let base = c(1.3, 0.4);
        let f = |x: CDual| {
            let y = x * x + x.sin() - x.cos() / (x + CDual::constant(c(2.0, 0.1)));
            (y.sqrt() - x).scale(c(0.5, -0.25)) + (-x)
        };
        for x0 in [0.3, 0.9, 1.7] {
            let xd = CDual::variable(base * x0, 0, 1);
            let got = f(xd).deriv(0) * base;
            let want = fd(|x| f(CDual::constant(base * x)).v, x0);
            assert!((got - want).norm() < 1e-7 * want.norm().max(1.0), "{got} vs {want}");
        }
    }

    #[test]
    fn slots_are_independent() {
        let a = CDual::variable(c(2.0, 0.0), 0, 2);
        let b = CDual::variable(c(3.0, 0.0), 1, 2);
        let p = a * b;
        assert_eq!(p.deriv(0), c(3.0, 0.0));
        assert_eq!(p.deriv(1), c(2.0, 0.0));
    }
}
