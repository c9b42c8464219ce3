//! Truncated multivariate Taylor arithmetic for exact partial derivatives of
//! closed-form test functions.
//!
//! A [`Jet`] stores the Taylor coefficients of a function at a point up to a
//! fixed total order. Elementary functions are applied by composing their
//! univariate Taylor series with the nilpotent part of the argument.

use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use crate::mls::PolyBasis;

/// Numbers that closed-form test functions can be evaluated on.
pub trait Scalar:
    Clone
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Mul<f64, Output = Self>
{
    /// The constant `v` in the same space as `self`.
    fn constant_like(&self, v: f64) -> Self;
    fn value(&self) -> f64;
    fn exp(&self) -> Self;
    fn sin(&self) -> Self;
    fn cos(&self) -> Self;
    fn powf(&self, a: f64) -> Self;
    fn recip(&self) -> Self;
}

impl Scalar for f64 {
    fn constant_like(&self, v: f64) -> Self {
        v
    }
    fn value(&self) -> f64 {
        *self
    }
    fn exp(&self) -> Self {
        f64::exp(*self)
    }
    fn sin(&self) -> Self {
        f64::sin(*self)
    }
    fn cos(&self) -> Self {
        f64::cos(*self)
    }
    fn powf(&self, a: f64) -> Self {
        f64::powf(*self, a)
    }
    fn recip(&self) -> Self {
        1.0 / *self
    }
}

/// Index tables shared by all jets of one dimension and order.
#[derive(Debug)]
pub struct JetSpace {
    dim: usize,
    order: usize,
    exponents: Vec<Vec<u32>>,
    /// `(i, j, k)` with `alpha_i + alpha_j = alpha_k`.
    products: Vec<(u32, u32, u32)>,
}

impl JetSpace {
    pub fn new(dim: usize, order: usize) -> Arc<Self> {
        let exponents = PolyBasis::new(dim, order)
            .expect("positive dimension")
            .exponents()
            .to_vec();
        let position = |alpha: &[u32]| exponents.iter().position(|e| e.as_slice() == alpha);
        let mut products = Vec::new();
        for (i, a) in exponents.iter().enumerate() {
            for (j, b) in exponents.iter().enumerate() {
                let sum: Vec<u32> = a.iter().zip(b).map(|(x, y)| x + y).collect();
                if sum.iter().sum::<u32>() as usize <= order {
                    let k = position(&sum).expect("sum of exponents is in the basis");
                    products.push((i as u32, j as u32, k as u32));
                }
            }
        }
        Arc::new(Self { dim, order, exponents, products })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn exponents(&self) -> &[Vec<u32>] {
        &self.exponents
    }

    /// The coordinate functions `x_i` expanded at `x`.
    pub fn variables(self: &Arc<Self>, x: &[f64]) -> Vec<Jet> {
        (0..self.dim)
            .map(|i| {
                let mut coeffs = vec![0.0; self.exponents.len()];
                coeffs[0] = x[i];
                if self.order >= 1 {
                    coeffs[1 + i] = 1.0;
                }
                Jet { space: Arc::clone(self), coeffs }
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Jet {
    space: Arc<JetSpace>,
    coeffs: Vec<f64>,
}

fn factorial(k: u32) -> f64 {
    (1..=k).map(f64::from).product()
}

impl Jet {
    pub fn coefficients(&self) -> &[f64] {
        &self.coeffs
    }

    /// `D^alpha` of the expanded function at the expansion point.
    pub fn derivative(&self, alpha: &[u32]) -> Option<f64> {
        let k = self
            .space
            .exponents
            .iter()
            .position(|e| e.as_slice() == alpha)?;
        Some(self.coeffs[k] * alpha.iter().map(|&a| factorial(a)).product::<f64>())
    }

    /// All derivatives up to the jet order, in graded-lexicographic order.
    pub fn derivatives(&self) -> Vec<(Vec<u32>, f64)> {
        self.space
            .exponents
            .iter()
            .zip(&self.coeffs)
            .map(|(alpha, c)| {
                (alpha.clone(), c * alpha.iter().map(|&a| factorial(a)).product::<f64>())
            })
            .collect()
    }

    /// `g(self)` given `g^(k)(c) for k = 0..=order` at the constant term `c`.
    fn compose(&self, derivs: &[f64]) -> Jet {
        let order = self.space.order;
        let mut h = self.clone();
        h.coeffs[0] = 0.0;
        let mut result = self.constant_like(derivs[order] / factorial(order as u32));
        for k in (0..order).rev() {
            result = result * h.clone();
            result.coeffs[0] += derivs[k] / factorial(k as u32);
        }
        result
    }
}

impl Add for Jet {
    type Output = Jet;
    fn add(mut self, rhs: Jet) -> Jet {
        for (a, b) in self.coeffs.iter_mut().zip(&rhs.coeffs) {
            *a += b;
        }
        self
    }
}

impl Sub for Jet {
    type Output = Jet;
    fn sub(mut self, rhs: Jet) -> Jet {
        for (a, b) in self.coeffs.iter_mut().zip(&rhs.coeffs) {
            *a -= b;
        }
        self
    }
}

impl Mul for Jet {
    type Output = Jet;
    fn mul(self, rhs: Jet) -> Jet {
        let mut coeffs = vec![0.0; self.coeffs.len()];
        for &(i, j, k) in &self.space.products {
            coeffs[k as usize] += self.coeffs[i as usize] * rhs.coeffs[j as usize];
        }
        Jet { space: self.space, coeffs }
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(mut self) -> Jet {
        for a in &mut self.coeffs {
            *a = -*a;
        }
        self
    }
}

impl Add<f64> for Jet {
    type Output = Jet;
    fn add(mut self, rhs: f64) -> Jet {
        self.coeffs[0] += rhs;
        self
    }
}

impl Mul<f64> for Jet {
    type Output = Jet;
    fn mul(mut self, rhs: f64) -> Jet {
        for a in &mut self.coeffs {
            *a *= rhs;
        }
        self
    }
}

impl Scalar for Jet {
    fn constant_like(&self, v: f64) -> Self {
        let mut coeffs = vec![0.0; self.coeffs.len()];
        coeffs[0] = v;
        Jet { space: Arc::clone(&self.space), coeffs }
    }

    fn value(&self) -> f64 {
        self.coeffs[0]
    }

    fn exp(&self) -> Self {
        let e = self.coeffs[0].exp();
        self.compose(&vec![e; self.space.order + 1])
    }

    fn sin(&self) -> Self {
        let (s, c) = self.coeffs[0].sin_cos();
        let cycle = [s, c, -s, -c];
        let derivs: Vec<f64> = (0..=self.space.order).map(|k| cycle[k % 4]).collect();
        self.compose(&derivs)
    }

    fn cos(&self) -> Self {
        let (s, c) = self.coeffs[0].sin_cos();
        let cycle = [c, -s, -c, s];
        let derivs: Vec<f64> = (0..=self.space.order).map(|k| cycle[k % 4]).collect();
        self.compose(&derivs)
    }

    fn powf(&self, a: f64) -> Self {
        let c = self.coeffs[0];
        let mut derivs = Vec::with_capacity(self.space.order + 1);
        let mut falling = 1.0;
        for k in 0..=self.space.order {
            derivs.push(falling * c.powf(a - k as f64));
            falling *= a - k as f64;
        }
        self.compose(&derivs)
    }

    fn recip(&self) -> Self {
        let c = self.coeffs[0];
        let mut derivs = Vec::with_capacity(self.space.order + 1);
        let mut d = 1.0 / c;
        for k in 0..=self.space.order {
            derivs.push(d);
            d *= -((k + 1) as f64) / c;
        }
        self.compose(&derivs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_derivatives() {
        let space = JetSpace::new(2, 3);
        let v = space.variables(&[2.0, 3.0]);
        // f = x^2 y + 3y
        let f = v[0].clone() * v[0].clone() * v[1].clone() + v[1].clone() * 3.0;
        assert_eq!(f.value(), 21.0);
        assert_eq!(f.derivative(&[1, 0]), Some(12.0));
        assert_eq!(f.derivative(&[0, 1]), Some(7.0));
        assert_eq!(f.derivative(&[2, 0]), Some(6.0));
        assert_eq!(f.derivative(&[1, 1]), Some(4.0));
        assert_eq!(f.derivative(&[2, 1]), Some(2.0));
        assert_eq!(f.derivative(&[0, 3]), Some(0.0));
        assert_eq!(f.derivative(&[4, 0]), None);
    }

    #[test]
    fn elementary_functions_in_one_variable() {
        let space = JetSpace::new(1, 4);
        let x = space.variables(&[0.7])[0].clone();
        let e = x.exp();
        for k in 0..=4u32 {
            assert!((e.derivative(&[k]).unwrap() - 0.7f64.exp()).abs() < 1e-13);
        }
        let s = x.sin();
        let expected = [0.7f64.sin(), 0.7f64.cos(), -0.7f64.sin(), -0.7f64.cos(), 0.7f64.sin()];
        for k in 0..=4usize {
            assert!((s.derivative(&[k as u32]).unwrap() - expected[k]).abs() < 1e-13);
        }
        let p = x.powf(2.5);
        let expected = [
            0.7f64.powf(2.5),
            2.5 * 0.7f64.powf(1.5),
            2.5 * 1.5 * 0.7f64.powf(0.5),
            2.5 * 1.5 * 0.5 * 0.7f64.powf(-0.5),
            2.5 * 1.5 * 0.5 * -0.5 * 0.7f64.powf(-1.5),
        ];
        for k in 0..=4usize {
            assert!((p.derivative(&[k as u32]).unwrap() - expected[k]).abs() < 1e-12);
        }
        let r = x.recip();
        assert!((r.derivative(&[3]).unwrap() + 6.0 / 0.7f64.powi(4)).abs() < 1e-10);
        let c = x.cos();
        assert!((c.derivative(&[1]).unwrap() + 0.7f64.sin()).abs() < 1e-14);
    }

    #[test]
    fn chain_rule_matches_closed_form() {
        // d/dx exp(sin(x)) = cos(x) exp(sin(x))
        let space = JetSpace::new(1, 2);
        let x = space.variables(&[0.3])[0].clone();
        let f = x.sin().exp();
        let want = 0.3f64.cos() * 0.3f64.sin().exp();
        assert!((f.derivative(&[1]).unwrap() - want).abs() < 1e-14);
        let want2 = (0.3f64.cos().powi(2) - 0.3f64.sin()) * 0.3f64.sin().exp();
        assert!((f.derivative(&[2]).unwrap() - want2).abs() < 1e-13);
    }
}
