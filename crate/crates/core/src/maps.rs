//! Generalized Hénon factors `(x, y) -> (y, p(y) - a x)` and their compositions.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A point `(x, y)` of C².
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2<T: Scalar> {
    pub x: Complex<T>,
    pub y: Complex<T>,
}

impl<T: Scalar> Point2<T> {
    #[inline]
    pub fn new(x: Complex<T>, y: Complex<T>) -> Self {
        Self { x, y }
    }

    #[inline]
    pub fn from_re(x: T, y: T) -> Self {
        Self::new(Complex::new(x, T::zero()), Complex::new(y, T::zero()))
    }

    pub fn origin() -> Self {
        Self::default()
    }

    #[inline]
    pub fn is_finite(&self) -> bool {
        self.x.re.is_finite() && self.x.im.is_finite() && self.y.re.is_finite() && self.y.im.is_finite()
    }

    /// Max norm `max(|x|, |y|)`, the norm the filtration is phrased in.
    #[inline]
    pub fn norm(&self) -> T {
        self.x.norm().max(self.y.norm())
    }

    /// Euclidean distance in C² ≅ R⁴.
    #[inline]
    pub fn dist(&self, other: &Self) -> T {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        (dx.norm_sqr() + dy.norm_sqr()).sqrt()
    }
}

/// A 2×2 complex matrix stored row-major.
pub type Mat2<T> = [[Complex<T>; 2]; 2];

pub fn mat_mul<T: Scalar>(a: &Mat2<T>, b: &Mat2<T>) -> Mat2<T> {
    [
        [
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
        ],
        [
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        ],
    ]
}

pub fn mat_det<T: Scalar>(m: &Mat2<T>) -> Complex<T> {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

fn identity<T: Scalar>() -> Mat2<T> {
    let o = Complex::new(T::one(), T::zero());
    let z = Complex::new(T::zero(), T::zero());
    [[o, z], [z, o]]
}

/// One factor `(x, y) -> (y, p(y) - a x)` with `p` monic of degree at least 2.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Factor<T: Scalar> {
    /// Coefficients `c_0, ..., c_{d-1}` of `p(y) = y^d + c_{d-1} y^{d-1} + ... + c_0`.
    lower: Vec<Complex<T>>,
    a: Complex<T>,
}

impl<T: Scalar> Factor<T> {
    pub fn new(lower: Vec<Complex<T>>, a: Complex<T>) -> Result<Self> {
        if lower.len() < 2 {
            return Err(Error::InvalidMap(format!(
                "polynomial degree {} < 2",
                lower.len()
            )));
        }
        if a.norm() == T::zero() {
            return Err(Error::InvalidMap("coefficient a vanishes".into()));
        }
        if !a.re.is_finite()
            || !a.im.is_finite()
            || lower.iter().any(|c| !c.re.is_finite() || !c.im.is_finite())
        {
            return Err(Error::InvalidMap("non-finite coefficient".into()));
        }
        Ok(Self { lower, a })
    }

    /// `p(y) = y^degree + c`, the classical quadratic-like factor.
    pub fn monomial_plus(degree: usize, c: Complex<T>, a: Complex<T>) -> Result<Self> {
        let mut lower = vec![Complex::new(T::zero(), T::zero()); degree];
        if let Some(c0) = lower.first_mut() {
            *c0 = c;
        }
        Self::new(lower, a)
    }

    #[inline]
    pub fn degree(&self) -> usize {
        self.lower.len()
    }

    #[inline]
    pub fn a(&self) -> Complex<T> {
        self.a
    }

    pub fn lower_coeffs(&self) -> &[Complex<T>] {
        &self.lower
    }

    /// Horner evaluation of `p`.
    #[inline]
    pub fn poly(&self, y: Complex<T>) -> Complex<T> {
        let mut acc = Complex::new(T::one(), T::zero());
        for c in self.lower.iter().rev() {
            acc = acc * y + c;
        }
        acc
    }

    /// Horner evaluation of `p'`.
    #[inline]
    pub fn poly_derivative(&self, y: Complex<T>) -> Complex<T> {
        let d = self.lower.len();
        let mut acc = Complex::new(T::lit(d as f64), T::zero());
        for (i, c) in self.lower.iter().enumerate().skip(1).rev() {
            acc = acc * y + c.scale(T::lit(i as f64));
        }
        acc
    }

    #[inline]
    pub fn eval(&self, z: &Point2<T>) -> Result<Point2<T>> {
        let w = Point2::new(z.y, self.poly(z.y) - self.a * z.x);
        if w.is_finite() {
            Ok(w)
        } else {
            Err(Error::Overflow)
        }
    }

    #[inline]
    pub fn eval_inverse(&self, w: &Point2<T>) -> Result<Point2<T>> {
        let z = Point2::new((self.poly(w.x) - w.y) / self.a, w.x);
        if z.is_finite() {
            Ok(z)
        } else {
            Err(Error::Overflow)
        }
    }

    /// Jacobian `[[0, 1], [-a, p'(y)]]` at `z`.
    pub fn jacobian(&self, z: &Point2<T>) -> Mat2<T> {
        let zero = Complex::new(T::zero(), T::zero());
        let one = Complex::new(T::one(), T::zero());
        [[zero, one], [-self.a, self.poly_derivative(z.y)]]
    }

    /// Jacobian of the inverse map `(x, y) -> ((p(x) - y)/a, x)`.
    pub fn inverse_jacobian(&self, w: &Point2<T>) -> Mat2<T> {
        let zero = Complex::new(T::zero(), T::zero());
        let one = Complex::new(T::one(), T::zero());
        [
            [self.poly_derivative(w.x) / self.a, -one / self.a],
            [one, zero],
        ]
    }

    /// `Σ |c_i|`, used in the large-|y| remainder estimates.
    pub fn coeff_abs_sum(&self) -> T {
        self.lower.iter().fold(T::zero(), |s, c| s + c.norm())
    }
}

/// `H = H^(m) ∘ ... ∘ H^(1)`, factors applied first to last.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Composite<T: Scalar> {
    factors: Vec<Factor<T>>,
    degree: usize,
}

impl<T: Scalar> Composite<T> {
    pub fn new(factors: Vec<Factor<T>>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::InvalidMap("composite needs at least one factor".into()));
        }
        let degree = factors.iter().map(Factor::degree).product();
        Ok(Self { factors, degree })
    }

    pub fn single(f: Factor<T>) -> Self {
        let degree = f.degree();
        Self { factors: vec![f], degree }
    }

    pub fn factors(&self) -> &[Factor<T>] {
        &self.factors
    }

    /// `d = d_1 d_2 ... d_m`.
    #[inline]
    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn eval(&self, z: &Point2<T>) -> Result<Point2<T>> {
        self.factors.iter().try_fold(*z, |p, f| f.eval(&p))
    }

    pub fn eval_inverse(&self, w: &Point2<T>) -> Result<Point2<T>> {
        self.factors.iter().rev().try_fold(*w, |p, f| f.eval_inverse(&p))
    }

    /// `H` for `forward`, `H^{-1}` otherwise.
    #[inline]
    pub fn eval_signed(&self, z: &Point2<T>, forward: bool) -> Result<Point2<T>> {
        if forward {
            self.eval(z)
        } else {
            self.eval_inverse(z)
        }
    }

    /// Chain-rule product of the factor Jacobians at `z`.
    pub fn differential(&self, z: &Point2<T>) -> Result<Mat2<T>> {
        let mut m = identity();
        let mut p = *z;
        for f in &self.factors {
            m = mat_mul(&f.jacobian(&p), &m);
            p = f.eval(&p)?;
        }
        if m.iter().flatten().all(|c| c.re.is_finite() && c.im.is_finite()) {
            Ok(m)
        } else {
            Err(Error::Overflow)
        }
    }

    pub fn differential_inverse(&self, w: &Point2<T>) -> Result<Mat2<T>> {
        let mut m = identity();
        let mut p = *w;
        for f in self.factors.iter().rev() {
            m = mat_mul(&f.inverse_jacobian(&p), &m);
            p = f.eval_inverse(&p)?;
        }
        Ok(m)
    }

    /// `∏ a_j`, the constant Jacobian determinant.
    pub fn jacobian_determinant(&self) -> Complex<T> {
        self.factors
            .iter()
            .fold(Complex::new(T::one(), T::zero()), |acc, f| acc * f.a)
    }

    /// `log |C|` where the dominant coordinate maps as `w -> C w^d (1 + O(1/w))`
    /// deep in the escape region of the given direction.
    pub fn leading_log_coeff(&self, forward: bool) -> T {
        if forward {
            // monic factors
            return T::zero();
        }
        let mut acc = T::zero();
        for f in self.factors.iter().rev() {
            acc = T::lit(f.degree() as f64) * acc - f.a.norm().ln();
        }
        acc
    }

    /// Constant `B` such that for a point deep in the escape region with dominant
    /// coordinate `w`, `|log|w'| - d log|w| - log|C|| <= B / |w|`, valid once
    /// `B / |w| <= 1/4`.
    pub fn deep_remainder_const(&self, forward: bool) -> T {
        let mut b = T::zero();
        let mut tail_degree = T::one();
        let two = T::lit(2.0);
        let iter: Box<dyn Iterator<Item = &Factor<T>>> = if forward {
            Box::new(self.factors.iter().rev())
        } else {
            Box::new(self.factors.iter())
        };
        for f in iter {
            let bj = if forward {
                f.coeff_abs_sum() + f.a.norm()
            } else {
                f.coeff_abs_sum() + T::one()
            };
            b += tail_degree * two * bj;
            tail_degree *= T::lit(f.degree() as f64);
        }
        b
    }

    /// `log B` for the growth bound `‖H^{±1}(z)‖ <= B max(1, ‖z‖)^d`.
    pub fn log_growth_const(&self, forward: bool) -> T {
        let mut acc = T::zero();
        let order: Vec<&Factor<T>> = if forward {
            self.factors.iter().collect()
        } else {
            self.factors.iter().rev().collect()
        };
        for f in order {
            let bj = if forward {
                T::one() + f.coeff_abs_sum() + f.a.norm()
            } else {
                (T::lit(2.0) + f.coeff_abs_sum()) / f.a.norm().min(T::one())
            };
            acc = T::lit(f.degree() as f64) * acc + bj.ln();
        }
        acc
    }
}
