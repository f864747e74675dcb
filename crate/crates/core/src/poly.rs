//! Sparse multivariate polynomials in the parameter coordinates.
//!
//! Every coefficient function in the model zoo (losses, lifts, loss
//! variations, empirical averages) is a polynomial in `w`, so exact partial
//! derivatives of any order are available without finite differences.

use std::collections::BTreeMap;
use std::ops::{Add, Mul, Neg, Sub};

/// A polynomial in `dim` real variables, stored as a sorted list of
/// `(exponents, coefficient)` pairs with no zero coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct Poly {
    dim: usize,
    terms: Vec<(Vec<u32>, f64)>,
}

impl Poly {
    pub fn zero(dim: usize) -> Self {
        Poly {
            dim,
            terms: Vec::new(),
        }
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        Self::monomial(dim, c, &vec![0; dim])
    }

    pub fn monomial(dim: usize, coef: f64, exps: &[u32]) -> Self {
        assert_eq!(exps.len(), dim, "exponent length must match dimension");
        let mut p = Poly::zero(dim);
        if coef != 0.0 {
            p.terms.push((exps.to_vec(), coef));
        }
        p
    }

    /// The coordinate function `w_i`.
    pub fn var(dim: usize, i: usize) -> Self {
        let mut e = vec![0; dim];
        e[i] = 1;
        Self::monomial(dim, 1.0, &e)
    }

    pub fn from_terms(dim: usize, terms: impl IntoIterator<Item = (Vec<u32>, f64)>) -> Self {
        let mut acc: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
        for (e, c) in terms {
            assert_eq!(e.len(), dim, "exponent length must match dimension");
            *acc.entry(e).or_insert(0.0) += c;
        }
        Poly {
            dim,
            terms: acc.into_iter().filter(|(_, c)| *c != 0.0).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> &[(Vec<u32>, f64)] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn eval(&self, w: &[f64]) -> f64 {
        debug_assert!(w.len() >= self.dim);
        let mut s = 0.0;
        for (e, c) in &self.terms {
            let mut m = *c;
            for (wi, &ei) in w.iter().zip(e) {
                if ei > 0 {
                    m *= wi.powi(ei as i32);
                }
            }
            s += m;
        }
        s
    }

    pub fn partial(&self, i: usize) -> Poly {
        let terms = self.terms.iter().filter(|(e, _)| e[i] > 0).map(|(e, c)| {
            let mut e2 = e.clone();
            e2[i] -= 1;
            (e2, c * e[i] as f64)
        });
        Poly::from_terms(self.dim, terms)
    }

    /// Mixed partial derivative `∂^beta`.
    pub fn derivative(&self, beta: &[u32]) -> Poly {
        let mut p = self.clone();
        for (i, &b) in beta.iter().enumerate() {
            for _ in 0..b {
                p = p.partial(i);
            }
        }
        p
    }

    pub fn scale(&self, s: f64) -> Poly {
        Poly::from_terms(self.dim, self.terms.iter().map(|(e, c)| (e.clone(), c * s)))
    }

    /// Substitute a fixed value for coordinate `i`; the result keeps the same
    /// dimension but no longer depends on `w_i`.
    pub fn fix_coord(&self, i: usize, value: f64) -> Poly {
        let terms = self.terms.iter().map(|(e, c)| {
            let mut e2 = e.clone();
            e2[i] = 0;
            (e2, c * value.powi(e[i] as i32))
        });
        Poly::from_terms(self.dim, terms)
    }

    pub fn total_degree(&self) -> u32 {
        self.terms
            .iter()
            .map(|(e, _)| e.iter().sum())
            .max()
            .unwrap_or(0)
    }
}

impl Add for &Poly {
    type Output = Poly;
    fn add(self, rhs: &Poly) -> Poly {
        assert_eq!(self.dim, rhs.dim);
        Poly::from_terms(
            self.dim,
            self.terms.iter().chain(rhs.terms.iter()).cloned(),
        )
    }
}

impl Sub for &Poly {
    type Output = Poly;
    fn sub(self, rhs: &Poly) -> Poly {
        self + &(-rhs)
    }
}

impl Neg for &Poly {
    type Output = Poly;
    fn neg(self) -> Poly {
        self.scale(-1.0)
    }
}

impl Mul for &Poly {
    type Output = Poly;
    fn mul(self, rhs: &Poly) -> Poly {
        assert_eq!(self.dim, rhs.dim);
        let mut out = Vec::with_capacity(self.terms.len() * rhs.terms.len());
        for (ea, ca) in &self.terms {
            for (eb, cb) in &rhs.terms {
                let e: Vec<u32> = ea.iter().zip(eb).map(|(a, b)| a + b).collect();
                out.push((e, ca * cb));
            }
        }
        Poly::from_terms(self.dim, out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_and_derivatives() {
        // p = 3 w0^2 w1 - w1^3 + 2
        let p = Poly::from_terms(
            2,
            vec![(vec![2, 1], 3.0), (vec![0, 3], -1.0), (vec![0, 0], 2.0)],
        );
        assert_eq!(p.eval(&[2.0, 1.0]), 12.0 - 1.0 + 2.0);
        let d0 = p.partial(0);
        assert_eq!(d0.eval(&[2.0, 1.0]), 12.0);
        let d11 = p.derivative(&[0, 2]);
        assert_eq!(d11.eval(&[5.0, 2.0]), -12.0);
        assert!(p.derivative(&[3, 0]).is_zero());
    }

    #[test]
    fn arithmetic_cancels() {
        let a = Poly::var(1, 0);
        let b = &a * &a;
        let c = &b - &b;
        assert!(c.is_zero());
        assert_eq!((&b + &a).eval(&[3.0]), 12.0);
    }

    #[test]
    fn fixing_a_coordinate() {
        let p = Poly::monomial(2, 2.0, &[1, 2]);
        let q = p.fix_coord(1, 0.5);
        assert_eq!(q.eval(&[3.0, 100.0]), 2.0 * 3.0 * 0.25);
    }
}
