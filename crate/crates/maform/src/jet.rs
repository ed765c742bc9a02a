//! Third-order forward-mode jets in `D` real variables.
//!
//! A [`Jet`] carries a value together with its gradient, Hessian and third
//! derivative tensor. Closed-form Minkowski functions are written once as
//! generic code over jets, which gives the analytic path exact derivatives.

use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet<const D: usize> {
    pub v: f64,
    pub g: [f64; D],
    pub h: [[f64; D]; D],
    pub t: [[[f64; D]; D]; D],
}

impl<const D: usize> Jet<D> {
    pub fn constant(v: f64) -> Self {
        Jet { v, g: [0.0; D], h: [[0.0; D]; D], t: [[[0.0; D]; D]; D] }
    }

    /// The coordinate function `x_i` evaluated at `x`.
    pub fn var(i: usize, x: f64) -> Self {
        let mut j = Self::constant(x);
        j.g[i] = 1.0;
        j
    }

    /// All `D` coordinate functions at the point `x`.
    pub fn vars(x: &[f64; D]) -> [Self; D] {
        std::array::from_fn(|i| Self::var(i, x[i]))
    }

    /// Applies a scalar function given its value and first three derivatives.
    pub fn chain(&self, f0: f64, f1: f64, f2: f64, f3: f64) -> Self {
        let u = self;
        let mut r = Self::constant(f0);
        for i in 0..D {
            r.g[i] = f1 * u.g[i];
            for j in 0..D {
                r.h[i][j] = f2 * u.g[i] * u.g[j] + f1 * u.h[i][j];
                for k in 0..D {
                    r.t[i][j][k] = f3 * u.g[i] * u.g[j] * u.g[k]
                        + f2 * (u.h[i][j] * u.g[k] + u.h[i][k] * u.g[j] + u.h[j][k] * u.g[i])
                        + f1 * u.t[i][j][k];
                }
            }
        }
        r
    }

    pub fn sqrt(&self) -> Self {
        let s = self.v.sqrt();
        self.chain(s, 0.5 / s, -0.25 / (s * self.v), 0.375 / (s * self.v * self.v))
    }

    pub fn ln(&self) -> Self {
        let x = self.v;
        self.chain(x.ln(), 1.0 / x, -1.0 / (x * x), 2.0 / (x * x * x))
    }

    pub fn exp(&self) -> Self {
        let e = self.v.exp();
        self.chain(e, e, e, e)
    }

    pub fn sin(&self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.chain(s, c, -s, -c)
    }

    pub fn cos(&self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.chain(c, -s, -c, s)
    }

    pub fn recip(&self) -> Self {
        let x = self.v;
        self.chain(1.0 / x, -1.0 / (x * x), 2.0 / (x * x * x), -6.0 / (x * x * x * x))
    }

    pub fn powi(&self, n: i32) -> Self {
        let x = self.v;
        let nf = n as f64;
        self.chain(
            x.powi(n),
            nf * x.powi(n - 1),
            nf * (nf - 1.0) * x.powi(n - 2),
            nf * (nf - 1.0) * (nf - 2.0) * x.powi(n - 3),
        )
    }

    pub fn scale(&self, c: f64) -> Self {
        let mut r = *self;
        r.v *= c;
        for i in 0..D {
            r.g[i] *= c;
            for j in 0..D {
                r.h[i][j] *= c;
                for k in 0..D {
                    r.t[i][j][k] *= c;
                }
            }
        }
        r
    }
}

impl<const D: usize> Add for Jet<D> {
    type Output = Self;
    fn add(mut self, o: Self) -> Self {
        self.v += o.v;
        for i in 0..D {
            self.g[i] += o.g[i];
            for j in 0..D {
                self.h[i][j] += o.h[i][j];
                for k in 0..D {
                    self.t[i][j][k] += o.t[i][j][k];
                }
            }
        }
        self
    }
}

impl<const D: usize> AddAssign for Jet<D> {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<const D: usize> Neg for Jet<D> {
    type Output = Self;
    fn neg(self) -> Self {
        self.scale(-1.0)
    }
}

impl<const D: usize> Sub for Jet<D> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        self + (-o)
    }
}

impl<const D: usize> Mul for Jet<D> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let (u, w) = (&self, &o);
        let mut r = Self::constant(u.v * w.v);
        for i in 0..D {
            r.g[i] = u.g[i] * w.v + u.v * w.g[i];
            for j in 0..D {
                r.h[i][j] = u.h[i][j] * w.v + u.g[i] * w.g[j] + u.g[j] * w.g[i] + u.v * w.h[i][j];
                for k in 0..D {
                    r.t[i][j][k] = u.t[i][j][k] * w.v
                        + u.h[i][j] * w.g[k]
                        + u.h[i][k] * w.g[j]
                        + u.h[j][k] * w.g[i]
                        + u.g[i] * w.h[j][k]
                        + u.g[j] * w.h[i][k]
                        + u.g[k] * w.h[i][j]
                        + u.v * w.t[i][j][k];
                }
            }
        }
        r
    }
}

impl<const D: usize> Div for Jet<D> {
    type Output = Self;
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn div(self, o: Self) -> Self {
        self * o.recip()
    }
}

impl<const D: usize> Add<f64> for Jet<D> {
    type Output = Self;
    fn add(mut self, c: f64) -> Self {
        self.v += c;
        self
    }
}

impl<const D: usize> Sub<f64> for Jet<D> {
    type Output = Self;
    fn sub(mut self, c: f64) -> Self {
        self.v -= c;
        self
    }
}

impl<const D: usize> Mul<f64> for Jet<D> {
    type Output = Self;
    fn mul(self, c: f64) -> Self {
        self.scale(c)
    }
}

impl<const D: usize> Div<f64> for Jet<D> {
    type Output = Self;
    fn div(self, c: f64) -> Self {
        self.scale(1.0 / c)
    }
}

/// A complex number whose real and imaginary parts are jets.
#[derive(Clone, Copy, Debug)]
pub struct CJet<const D: usize> {
    pub re: Jet<D>,
    pub im: Jet<D>,
}

impl<const D: usize> CJet<D> {
    pub fn new(re: Jet<D>, im: Jet<D>) -> Self {
        CJet { re, im }
    }

    pub fn constant(re: f64, im: f64) -> Self {
        CJet { re: Jet::constant(re), im: Jet::constant(im) }
    }

    pub fn real(re: Jet<D>) -> Self {
        CJet { re, im: Jet::constant(0.0) }
    }

    pub fn conj(&self) -> Self {
        CJet { re: self.re, im: -self.im }
    }

    pub fn norm_sqr(&self) -> Jet<D> {
        self.re * self.re + self.im * self.im
    }

    pub fn scale(&self, c: f64) -> Self {
        CJet { re: self.re * c, im: self.im * c }
    }
}

impl<const D: usize> Add for CJet<D> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        CJet { re: self.re + o.re, im: self.im + o.im }
    }
}

impl<const D: usize> Sub for CJet<D> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        CJet { re: self.re - o.re, im: self.im - o.im }
    }
}

impl<const D: usize> Mul for CJet<D> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        CJet {
            re: self.re * o.re - self.im * o.im,
            im: self.re * o.im + self.im * o.re,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(f: impl Fn(&[Jet<2>; 2]) -> Jet<2>, x: [f64; 2]) {
        let j = f(&Jet::vars(&x));
        let h = 1e-4;
        for i in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[i] += h;
            xm[i] -= h;
            let fp = f(&Jet::vars(&xp));
            let fm = f(&Jet::vars(&xm));
            assert!(((fp.v - fm.v) / (2.0 * h) - j.g[i]).abs() < 1e-7);
            for a in 0..2 {
                assert!(((fp.g[a] - fm.g[a]) / (2.0 * h) - j.h[i][a]).abs() < 1e-6);
                for b in 0..2 {
                    let d = (fp.h[a][b] - fm.h[a][b]) / (2.0 * h);
                    assert!((d - j.t[i][a][b]).abs() < 1e-5, "third {i}{a}{b}");
                }
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        fd_check(|x| (x[0] * x[0] + x[1] * x[1] * 4.0 + 1.0).sqrt(), [0.3, -0.7]);
        fd_check(|x| (x[0] * x[1] + 2.0).ln() * x[0].exp(), [0.4, 0.9]);
        fd_check(|x| x[0].sin() / (x[1].cos() + 2.0), [1.1, 0.2]);
        fd_check(|x| (x[0] + x[1]).powi(3) * x[1].recip(), [0.5, 1.5]);
    }

    #[test]
    fn complex_product_of_conjugates_is_real() {
        let x = Jet::<2>::vars(&[0.2, 0.5]);
        let z = CJet::new(x[0], x[1]);
        let p = z * z.conj();
        assert!(p.im.v.abs() < 1e-15);
        assert_eq!(p.re.h[0][0], 2.0);
    }
}
