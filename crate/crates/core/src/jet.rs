//! Forward-mode scalar types for per-stencil derivatives.
//!
//! Energy stencils are written once, generic over [`Real`], and evaluated
//! with plain `f64` for values, [`Jet`] for gradients, `Jet<Jet<_>>` for
//! Hessians and `Dual<Dual<Jet<_>>>` for the third-order contractions the
//! adjoint of the implicit step needs.

use std::ops::{Add, Div, Mul, Neg, Sub};

pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn cst(v: f64) -> Self;
    /// Primal value.
    fn re(&self) -> f64;
    fn sqrt(self) -> Self;
    fn atan2(self, x: Self) -> Self;

    fn scale(self, k: f64) -> Self {
        self * Self::cst(k)
    }

    fn powi2(self) -> Self {
        self * self
    }

    /// Replaces the value by the constant `floor` (dropping derivatives) when below it.
    fn floor_at(self, floor: f64) -> Self {
        if self.re() < floor {
            Self::cst(floor)
        } else {
            self
        }
    }
}

impl Real for f64 {
    #[inline]
    fn cst(v: f64) -> Self {
        v
    }
    #[inline]
    fn re(&self) -> f64 {
        *self
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn atan2(self, x: Self) -> Self {
        f64::atan2(self, x)
    }
}

/// Single-direction dual number; nests to any order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<T> {
    pub v: T,
    pub d: T,
}

impl<T: Real> Dual<T> {
    pub fn new(v: T, d: T) -> Self {
        Self { v, d }
    }
}

impl<T: Real> Add for Dual<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(self.v + o.v, self.d + o.d)
    }
}

impl<T: Real> Sub for Dual<T> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(self.v - o.v, self.d - o.d)
    }
}

impl<T: Real> Mul for Dual<T> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        Self::new(self.v * o.v, self.v * o.d + self.d * o.v)
    }
}

impl<T: Real> Div for Dual<T> {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let q = self.v / o.v;
        Self::new(q, (self.d - q * o.d) / o.v)
    }
}

impl<T: Real> Neg for Dual<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self::new(-self.v, -self.d)
    }
}

impl<T: Real> Real for Dual<T> {
    #[inline]
    fn cst(v: f64) -> Self {
        Self::new(T::cst(v), T::cst(0.0))
    }
    #[inline]
    fn re(&self) -> f64 {
        self.v.re()
    }
    #[inline]
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        Self::new(s, self.d / (s + s))
    }
    #[inline]
    fn atan2(self, x: Self) -> Self {
        let r2 = x.v * x.v + self.v * self.v;
        Self::new(self.v.atan2(x.v), (x.v * self.d - self.v * x.d) / r2)
    }
}

/// Value plus a dense gradient over `N` seeded inputs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet<T, const N: usize> {
    pub v: T,
    pub g: [T; N],
}

impl<T: Real, const N: usize> Jet<T, N> {
    pub fn constant(v: T) -> Self {
        Self { v, g: [T::cst(0.0); N] }
    }

    /// Input `i` of the seeded vector.
    pub fn var(v: T, i: usize) -> Self {
        let mut g = [T::cst(0.0); N];
        g[i] = T::cst(1.0);
        Self { v, g }
    }

    #[inline]
    fn chain(self, v: T, dv: T) -> Self {
        let mut g = self.g;
        for gi in g.iter_mut() {
            *gi = *gi * dv;
        }
        Self { v, g }
    }
}

impl<T: Real, const N: usize> Add for Jet<T, N> {
    type Output = Self;
    #[inline]
    fn add(mut self, o: Self) -> Self {
        self.v = self.v + o.v;
        for i in 0..N {
            self.g[i] = self.g[i] + o.g[i];
        }
        self
    }
}

impl<T: Real, const N: usize> Sub for Jet<T, N> {
    type Output = Self;
    #[inline]
    fn sub(mut self, o: Self) -> Self {
        self.v = self.v - o.v;
        for i in 0..N {
            self.g[i] = self.g[i] - o.g[i];
        }
        self
    }
}

impl<T: Real, const N: usize> Mul for Jet<T, N> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        let mut g = self.g;
        for i in 0..N {
            g[i] = self.v * o.g[i] + self.g[i] * o.v;
        }
        Self { v: self.v * o.v, g }
    }
}

impl<T: Real, const N: usize> Div for Jet<T, N> {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let q = self.v / o.v;
        let mut g = self.g;
        for i in 0..N {
            g[i] = (self.g[i] - q * o.g[i]) / o.v;
        }
        Self { v: q, g }
    }
}

impl<T: Real, const N: usize> Neg for Jet<T, N> {
    type Output = Self;
    #[inline]
    fn neg(mut self) -> Self {
        self.v = -self.v;
        for gi in self.g.iter_mut() {
            *gi = -*gi;
        }
        self
    }
}

impl<T: Real, const N: usize> Real for Jet<T, N> {
    #[inline]
    fn cst(v: f64) -> Self {
        Self::constant(T::cst(v))
    }
    #[inline]
    fn re(&self) -> f64 {
        self.v.re()
    }
    #[inline]
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        self.chain(s, T::cst(1.0) / (s + s))
    }
    #[inline]
    fn atan2(self, x: Self) -> Self {
        let r2 = x.v * x.v + self.v * self.v;
        let a = x.v / r2;
        let b = -self.v / r2;
        let mut g = self.g;
        for i in 0..N {
            g[i] = a * self.g[i] + b * x.g[i];
        }
        Self { v: self.v.atan2(x.v), g }
    }
}

pub type Vec3<T> = [T; 3];

#[inline]
pub fn sub3<T: Real>(a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn dot3<T: Real>(a: Vec3<T>, b: Vec3<T>) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross3<T: Real>(a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn scale3<T: Real>(a: Vec3<T>, k: T) -> Vec3<T> {
    [a[0] * k, a[1] * k, a[2] * k]
}
