//! Scalar abstraction and second-order forward-mode jets.
//!
//! Geometry routines are written once against [`Scalar`] and evaluated either
//! on plain `f64` or on [`Jet`], which carries a value together with its
//! gradient and Hessian with respect to three seed variables.

use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

/// Number of independent seed variables carried by a [`Jet`].
pub const NV: usize = 3;
const NH: usize = NV * (NV + 1) / 2;

#[inline]
fn hidx(i: usize, j: usize) -> usize {
    let (a, b) = if i <= j { (i, j) } else { (j, i) };
    a * NV - a * (a + 1) / 2 + b
}

pub trait Scalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + std::fmt::Debug
{
    fn cst(x: f64) -> Self;
    fn val(&self) -> f64;
    fn exp(self) -> Self;
    fn sqrt(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn powi(self, n: i32) -> Self {
        let mut r = Self::cst(1.0);
        let base = if n < 0 { Self::cst(1.0) / self } else { self };
        for _ in 0..n.unsigned_abs() {
            r = r * base;
        }
        r
    }
}

impl Scalar for f64 {
    #[inline]
    fn cst(x: f64) -> Self {
        x
    }
    #[inline]
    fn val(&self) -> f64 {
        *self
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }
    #[inline]
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
}

/// Value, gradient and (packed upper-triangular) Hessian of a scalar
/// function of three variables.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Jet {
    pub v: f64,
    pub g: [f64; NV],
    pub h: [f64; NH],
}

impl Jet {
    pub fn constant(v: f64) -> Self {
        Jet { v, g: [0.0; NV], h: [0.0; NH] }
    }

    /// The seed variable `i` evaluated at `v`.
    pub fn var(v: f64, i: usize) -> Self {
        let mut j = Jet::constant(v);
        j.g[i] = 1.0;
        j
    }

    pub fn d(&self, i: usize) -> f64 {
        self.g[i]
    }

    pub fn dd(&self, i: usize, j: usize) -> f64 {
        self.h[hidx(i, j)]
    }

    /// Apply a univariate function given its value and first two derivatives.
    #[inline]
    pub fn chain(&self, f0: f64, f1: f64, f2: f64) -> Self {
        let mut r = Jet { v: f0, g: [0.0; NV], h: [0.0; NH] };
        for i in 0..NV {
            r.g[i] = f1 * self.g[i];
        }
        for i in 0..NV {
            for j in i..NV {
                let k = hidx(i, j);
                r.h[k] = f1 * self.h[k] + f2 * self.g[i] * self.g[j];
            }
        }
        r
    }

    pub fn recip(self) -> Self {
        let iv = 1.0 / self.v;
        self.chain(iv, -iv * iv, 2.0 * iv * iv * iv)
    }
}

impl Add for Jet {
    type Output = Jet;
    #[inline]
    fn add(mut self, o: Jet) -> Jet {
        self.v += o.v;
        for i in 0..NV {
            self.g[i] += o.g[i];
        }
        for k in 0..NH {
            self.h[k] += o.h[k];
        }
        self
    }
}

impl Sub for Jet {
    type Output = Jet;
    #[inline]
    fn sub(mut self, o: Jet) -> Jet {
        self.v -= o.v;
        for i in 0..NV {
            self.g[i] -= o.g[i];
        }
        for k in 0..NH {
            self.h[k] -= o.h[k];
        }
        self
    }
}

impl Mul for Jet {
    type Output = Jet;
    #[inline]
    fn mul(self, o: Jet) -> Jet {
        let mut r = Jet { v: self.v * o.v, g: [0.0; NV], h: [0.0; NH] };
        for i in 0..NV {
            r.g[i] = self.v * o.g[i] + o.v * self.g[i];
        }
        for i in 0..NV {
            for j in i..NV {
                let k = hidx(i, j);
                r.h[k] = self.v * o.h[k]
                    + o.v * self.h[k]
                    + self.g[i] * o.g[j]
                    + self.g[j] * o.g[i];
            }
        }
        r
    }
}

impl Div for Jet {
    type Output = Jet;
    #[inline]
    fn div(self, o: Jet) -> Jet {
        self * o.recip()
    }
}

impl Neg for Jet {
    type Output = Jet;
    #[inline]
    fn neg(self) -> Jet {
        self * -1.0
    }
}

impl Add<f64> for Jet {
    type Output = Jet;
    #[inline]
    fn add(mut self, o: f64) -> Jet {
        self.v += o;
        self
    }
}

impl Sub<f64> for Jet {
    type Output = Jet;
    #[inline]
    fn sub(mut self, o: f64) -> Jet {
        self.v -= o;
        self
    }
}

impl Mul<f64> for Jet {
    type Output = Jet;
    #[inline]
    fn mul(mut self, o: f64) -> Jet {
        self.v *= o;
        for i in 0..NV {
            self.g[i] *= o;
        }
        for k in 0..NH {
            self.h[k] *= o;
        }
        self
    }
}

impl Div<f64> for Jet {
    type Output = Jet;
    #[inline]
    fn div(self, o: f64) -> Jet {
        self * (1.0 / o)
    }
}

impl AddAssign for Jet {
    fn add_assign(&mut self, o: Jet) {
        *self = *self + o;
    }
}

impl SubAssign for Jet {
    fn sub_assign(&mut self, o: Jet) {
        *self = *self - o;
    }
}

impl MulAssign for Jet {
    fn mul_assign(&mut self, o: Jet) {
        *self = *self * o;
    }
}

impl Scalar for Jet {
    fn cst(x: f64) -> Self {
        Jet::constant(x)
    }
    fn val(&self) -> f64 {
        self.v
    }
    fn exp(self) -> Self {
        let e = self.v.exp();
        self.chain(e, e, e)
    }
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        self.chain(s, 0.5 / s, -0.25 / (s * self.v))
    }
    fn sin(self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.chain(s, c, -s)
    }
    fn cos(self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.chain(c, -s, -c)
    }
}

/// Small helpers for 3-vectors of scalars.
pub fn dot<T: Scalar>(a: &[T; 3], b: &[T; 3]) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn axpy<T: Scalar>(a: T, x: &[T; 3], y: &[T; 3]) -> [T; 3] {
    [a * x[0] + y[0], a * x[1] + y[1], a * x[2] + y[2]]
}

pub fn scale3<T: Scalar>(a: T, x: &[T; 3]) -> [T; 3] {
    [a * x[0], a * x[1], a * x[2]]
}

pub fn lift3(x: &[f64; 3]) -> [Jet; 3] {
    [Jet::constant(x[0]), Jet::constant(x[1]), Jet::constant(x[2])]
}

pub fn vals3<T: Scalar>(x: &[T; 3]) -> [f64; 3] {
    [x[0].val(), x[1].val(), x[2].val()]
}
