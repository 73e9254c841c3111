//! Nestable forward-mode jets.
//!
//! [`Dual`] carries a value together with its partial derivatives with
//! respect to the n coordinates. The carrier is generic: plugging a `Dual`
//! in as the scalar of another `Dual` propagates second derivatives, and a
//! third level yields third derivatives. Every evaluation pipeline in this
//! crate is written against the [`Num`] trait so the same code produces
//! values, gradients, Hessians, or third-order blocks depending on how the
//! point was seeded.

use crate::{Error, Result};
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Numeric carrier for forward-mode differentiation.
///
/// Implemented by `f64` and by [`Dual<T>`] for any carrier `T`, which is
/// what makes the evaluator nestable.
pub trait Num:
    Clone
    + Sized
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    /// A constant with the same shape as `self` (all derivative slots zero).
    fn lift(&self, c: f64) -> Self;

    /// The innermost (order-zero) value, used for domain checks.
    fn primal(&self) -> f64;

    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn tanh(self) -> Self;

    /// Integer power via repeated squaring; chain rule comes for free from
    /// the ring operations.
    fn powi(self, k: i32) -> Self {
        if k == 0 {
            return self.lift(1.0);
        }
        if k < 0 {
            return self.lift(1.0) / self.powi(-k);
        }
        let mut acc: Option<Self> = None;
        let mut base = self;
        let mut e = k as u32;
        loop {
            if e & 1 == 1 {
                acc = Some(match acc {
                    None => base.clone(),
                    Some(a) => a * base.clone(),
                });
            }
            e >>= 1;
            if e == 0 {
                break;
            }
            base = base.clone() * base;
        }
        acc.expect("k > 0")
    }

    /// True when the value and every derivative slot are finite.
    fn all_finite(&self) -> bool;
}

impl Num for f64 {
    fn lift(&self, c: f64) -> Self {
        c
    }
    fn primal(&self) -> f64 {
        *self
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn powi(self, k: i32) -> Self {
        f64::powi(self, k)
    }
    fn all_finite(&self) -> bool {
        self.is_finite()
    }
}

/// Value plus partial derivatives with respect to the n coordinates.
#[derive(Clone, Debug)]
pub struct Dual<T> {
    pub re: T,
    pub eps: Vec<T>,
}

impl<T: Num> Dual<T> {
    /// Constant: zero in every derivative slot.
    pub fn constant(c: f64, exemplar: &T, n: usize) -> Self {
        Dual {
            re: exemplar.lift(c),
            eps: (0..n).map(|_| exemplar.lift(0.0)).collect(),
        }
    }

    fn chain(self, value: T, slope: T) -> Self {
        Dual {
            re: value,
            eps: self.eps.into_iter().map(|e| e * slope.clone()).collect(),
        }
    }
}

impl<T: Num> Add for Dual<T> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Dual {
            re: self.re + rhs.re,
            eps: self
                .eps
                .into_iter()
                .zip(rhs.eps)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }
}

impl<T: Num> Sub for Dual<T> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Dual {
            re: self.re - rhs.re,
            eps: self
                .eps
                .into_iter()
                .zip(rhs.eps)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }
}

impl<T: Num> Mul for Dual<T> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        Dual {
            re: self.re.clone() * rhs.re.clone(),
            eps: self
                .eps
                .into_iter()
                .zip(rhs.eps)
                .map(|(a, b)| a * rhs.re.clone() + self.re.clone() * b)
                .collect(),
        }
    }
}

impl<T: Num> Div for Dual<T> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        let q = self.re.clone() / rhs.re.clone();
        Dual {
            re: q.clone(),
            eps: self
                .eps
                .into_iter()
                .zip(rhs.eps)
                .map(|(a, b)| (a - q.clone() * b) / rhs.re.clone())
                .collect(),
        }
    }
}

impl<T: Num> Neg for Dual<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Dual {
            re: -self.re,
            eps: self.eps.into_iter().map(|e| -e).collect(),
        }
    }
}

impl<T: Num> Num for Dual<T> {
    fn lift(&self, c: f64) -> Self {
        Dual {
            re: self.re.lift(c),
            eps: self.eps.iter().map(|e| e.lift(0.0)).collect(),
        }
    }

    fn primal(&self) -> f64 {
        self.re.primal()
    }

    fn sin(self) -> Self {
        let v = self.re.clone().sin();
        let d = self.re.clone().cos();
        self.chain(v, d)
    }

    fn cos(self) -> Self {
        let v = self.re.clone().cos();
        let d = -self.re.clone().sin();
        self.chain(v, d)
    }

    fn exp(self) -> Self {
        let v = self.re.clone().exp();
        self.chain(v.clone(), v)
    }

    fn ln(self) -> Self {
        let v = self.re.clone().ln();
        let d = self.re.lift(1.0) / self.re.clone();
        self.chain(v, d)
    }

    fn sqrt(self) -> Self {
        let v = self.re.clone().sqrt();
        let d = self.re.lift(0.5) / v.clone();
        self.chain(v, d)
    }

    fn tanh(self) -> Self {
        let v = self.re.clone().tanh();
        let d = self.re.lift(1.0) - v.clone() * v.clone();
        self.chain(v, d)
    }

    fn all_finite(&self) -> bool {
        self.re.all_finite() && self.eps.iter().all(Num::all_finite)
    }
}

/// Seed a point so that one more derivative order is tracked on top of
/// whatever the components already carry.
///
/// Applying this to `&[f64]` gives first-order duals; applying it to the
/// result gives second order, and so on.
pub fn seed<T: Num>(x: &[T]) -> Vec<Dual<T>> {
    let n = x.len();
    x.iter()
        .enumerate()
        .map(|(a, xa)| Dual {
            re: xa.clone(),
            eps: (0..n)
                .map(|b| xa.lift(if a == b { 1.0 } else { 0.0 }))
                .collect(),
        })
        .collect()
}

/// First-order carrier.
pub type D1 = Dual<f64>;
/// Second-order carrier.
pub type D2 = Dual<Dual<f64>>;
/// Third-order carrier.
pub type D3 = Dual<Dual<Dual<f64>>>;

/// Relative tolerance for the Hessian symmetry invariant.
pub const HESSIAN_SYMMETRY_TOL: f64 = 1e-12;

/// Value and coordinate derivatives of a scalar field at a point.
///
/// `grad` always has length n. `hess` (row-major n×n, symmetrized) is
/// present for order ≥ 2 and `third` (n³, index `(a*n + b)*n + c`) for
/// order 3.
#[derive(Clone, Debug)]
pub struct Jet {
    pub order: u8,
    pub value: f64,
    pub grad: Vec<f64>,
    pub hess: Option<Vec<f64>>,
    pub third: Option<Vec<f64>>,
}

impl Jet {
    pub fn dim(&self) -> usize {
        self.grad.len()
    }

    pub fn hess_at(&self, a: usize, b: usize) -> f64 {
        let n = self.dim();
        self.hess.as_ref().expect("order >= 2")[a * n + b]
    }

    pub fn third_at(&self, a: usize, b: usize, c: usize) -> f64 {
        let n = self.dim();
        self.third.as_ref().expect("order == 3")[(a * n + b) * n + c]
    }

    /// Builds a jet from a first-order dual, checking finiteness.
    pub(crate) fn from_d1(d: D1) -> Result<Jet> {
        let jet = Jet {
            order: 1,
            value: d.re,
            grad: d.eps,
            hess: None,
            third: None,
        };
        jet.check_finite()?;
        Ok(jet)
    }

    /// Builds a jet from a second-order dual, enforcing Hessian symmetry.
    pub(crate) fn from_d2(d: D2) -> Result<Jet> {
        let n = d.eps.len();
        let mut hess = vec![0.0; n * n];
        for a in 0..n {
            for b in 0..n {
                hess[a * n + b] = d.eps[a].eps[b];
            }
        }
        symmetrize_checked(&mut hess, n)?;
        let jet = Jet {
            order: 2,
            value: d.re.re,
            grad: d.re.eps,
            hess: Some(hess),
            third: None,
        };
        jet.check_finite()?;
        Ok(jet)
    }

    /// Builds a jet from a third-order dual.
    pub(crate) fn from_d3(d: D3) -> Result<Jet> {
        let n = d.eps.len();
        let mut hess = vec![0.0; n * n];
        let mut third = vec![0.0; n * n * n];
        for a in 0..n {
            for b in 0..n {
                hess[a * n + b] = d.eps[a].eps[b].re;
                for c in 0..n {
                    third[(a * n + b) * n + c] = d.eps[a].eps[b].eps[c];
                }
            }
        }
        symmetrize_checked(&mut hess, n)?;
        let jet = Jet {
            order: 3,
            value: d.re.re.re,
            grad: d.re.re.eps,
            hess: Some(hess),
            third: Some(third),
        };
        jet.check_finite()?;
        Ok(jet)
    }

    fn check_finite(&self) -> Result<()> {
        let ok = self.value.is_finite()
            && self.grad.iter().all(|v| v.is_finite())
            && self.hess.iter().flatten().all(|v| v.is_finite())
            && self.third.iter().flatten().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::NonFinite { op: "eval_jet" })
        }
    }
}

fn symmetrize_checked(hess: &mut [f64], n: usize) -> Result<()> {
    for a in 0..n {
        for b in (a + 1)..n {
            let hab = hess[a * n + b];
            let hba = hess[b * n + a];
            if (hab - hba).abs() > HESSIAN_SYMMETRY_TOL * (1.0 + hab.abs()) {
                return Err(Error::Domain {
                    op: "eval_jet",
                    msg: format!(
                        "Hessian asymmetry |{hab:e} - {hba:e}| exceeds relative tolerance"
                    ),
                });
            }
            let avg = 0.5 * (hab + hba);
            hess[a * n + b] = avg;
            hess[b * n + a] = avg;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nested_product_second_derivative() {
        // f(x, y) = x * y at (3, 4): grad (4, 3), hess off-diagonal 1.
        let x = seed(&seed(&[3.0, 4.0]));
        let f = x[0].clone() * x[1].clone();
        let jet = Jet::from_d2(f).unwrap();
        assert_eq!(jet.value, 12.0);
        assert_eq!(jet.grad, vec![4.0, 3.0]);
        assert_eq!(jet.hess_at(0, 1), 1.0);
        assert_eq!(jet.hess_at(0, 0), 0.0);
    }

    #[test]
    fn third_order_cube() {
        // f(x) = x^3 at x = 2: f''' = 6.
        let x = seed(&seed(&seed(&[2.0])));
        let f = x[0].clone().powi(3);
        let jet = Jet::from_d3(f).unwrap();
        assert_eq!(jet.value, 8.0);
        assert_eq!(jet.grad, vec![12.0]);
        assert_eq!(jet.hess_at(0, 0), 12.0);
        assert_eq!(jet.third_at(0, 0, 0), 6.0);
    }

    #[test]
    fn powi_negative_exponent() {
        let x = seed(&[2.0]);
        let f = x[0].clone().powi(-2);
        assert!((f.re - 0.25).abs() < 1e-15);
        // d/dx x^-2 = -2 x^-3 = -0.25
        assert!((f.eps[0] + 0.25).abs() < 1e-15);
    }

    #[test]
    fn non_finite_detected() {
        let x = seed(&[0.0]);
        let f = x[0].clone().sqrt(); // derivative blows up at 0
        assert!(!f.all_finite());
    }
}
