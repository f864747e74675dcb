//! Losses, loss variations and polynomial lifts.
//!
//! A [`Lift`] is `Σ_r c_r(w) x^r`. Its population mean is obtained from the
//! standard normal moments and its empirical mean from the sample moments of
//! a [`Dataset`]; both are again polynomials in `w`.

use crate::error::{Error, Result};
use crate::hermite::gaussian_moment;
use crate::model_zoo::{ModelFamily, Perturbation};
use crate::poly::Poly;

/// Highest total `w`-derivative order served by [`lift_derivative`].
pub const MAX_LIFT_ORDER: u32 = 8;

/// Default radius of the excluded tube around the zero locus in [`check_rfv`].
pub const RFV_TUBE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    points: Vec<f64>,
    seed: Option<u64>,
}

impl Dataset {
    pub fn new(points: Vec<f64>) -> Self {
        Dataset { points, seed: None }
    }

    pub(crate) fn with_seed(points: Vec<f64>, seed: u64) -> Self {
        Dataset {
            points,
            seed: Some(seed),
        }
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// Sample moments `(1/n) Σ x_i^r` for `r = 0..=max_r`.
    pub fn moments(&self, max_r: usize) -> Vec<f64> {
        let mut acc = vec![0.0; max_r + 1];
        for &x in &self.points {
            let mut p = 1.0;
            for a in acc.iter_mut() {
                *a += p;
                p *= x;
            }
        }
        let n = self.points.len().max(1) as f64;
        acc.iter().map(|a| a / n).collect()
    }
}

/// `Σ_r c_r(w) x^r` with polynomial coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct Lift {
    dim: usize,
    coeffs: Vec<Poly>,
}

impl Lift {
    pub fn new(coeffs: Vec<Poly>) -> Self {
        assert!(!coeffs.is_empty(), "a lift needs at least one coefficient");
        let dim = coeffs[0].dim();
        assert!(coeffs.iter().all(|c| c.dim() == dim));
        let mut l = Lift { dim, coeffs };
        l.trim();
        l
    }

    /// A lift that does not depend on `x`.
    pub fn deterministic(g: Poly) -> Self {
        Lift::new(vec![g])
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        Lift::deterministic(Poly::constant(dim, c))
    }

    fn trim(&mut self) {
        while self.coeffs.len() > 1 && self.coeffs.last().is_some_and(Poly::is_zero) {
            self.coeffs.pop();
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn coeffs(&self) -> &[Poly] {
        &self.coeffs
    }

    pub fn max_x_degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn is_deterministic(&self) -> bool {
        self.coeffs[1..].iter().all(Poly::is_zero)
    }

    pub fn eval(&self, x: f64, w: &[f64]) -> f64 {
        let mut s = 0.0;
        let mut p = 1.0;
        for c in &self.coeffs {
            s += c.eval(w) * p;
            p *= x;
        }
        s
    }

    /// The `w`-polynomial `w ↦ g̃(x, w)` at fixed `x`.
    pub fn at_x(&self, x: f64) -> Poly {
        let mut out = Poly::zero(self.dim);
        let mut p = 1.0;
        for c in &self.coeffs {
            out = &out + &c.scale(p);
            p *= x;
        }
        out
    }

    /// `∫ ψ(x) g̃(x, ·) q(x) dx` for `ψ(x) = Σ_s a_s x^s`.
    pub fn weighted_mean(&self, weight: &[f64], moments: impl Fn(usize) -> f64) -> Poly {
        let mut out = Poly::zero(self.dim);
        for (r, c) in self.coeffs.iter().enumerate() {
            let m: f64 = weight
                .iter()
                .enumerate()
                .map(|(s, a)| if *a == 0.0 { 0.0 } else { a * moments(r + s) })
                .sum();
            if m != 0.0 {
                out = &out + &c.scale(m);
            }
        }
        out
    }

    /// `E_q[g̃(x, ·)]`.
    pub fn population_mean(&self) -> Poly {
        self.weighted_mean(&[1.0], |r| gaussian_moment(r as u32))
    }

    /// `(1/n) Σ_i g̃(x_i, ·)`.
    pub fn empirical_mean(&self, data: &Dataset) -> Poly {
        let m = data.moments(self.max_x_degree());
        self.weighted_mean(&[1.0], |r| m[r])
    }

    pub fn derivative(&self, beta: &[u32]) -> Lift {
        Lift::new(self.coeffs.iter().map(|c| c.derivative(beta)).collect())
    }

    pub fn scale(&self, s: f64) -> Lift {
        Lift::new(self.coeffs.iter().map(|c| c.scale(s)).collect())
    }

    pub fn add(&self, other: &Lift) -> Lift {
        let n = self.coeffs.len().max(other.coeffs.len());
        let z = Poly::zero(self.dim);
        Lift::new(
            (0..n)
                .map(|r| {
                    let a = self.coeffs.get(r).unwrap_or(&z);
                    let b = other.coeffs.get(r).unwrap_or(&z);
                    a + b
                })
                .collect(),
        )
    }

    pub fn sub(&self, other: &Lift) -> Lift {
        self.add(&other.scale(-1.0))
    }

    pub fn mul(&self, other: &Lift) -> Lift {
        let n = self.coeffs.len() + other.coeffs.len() - 1;
        let mut out = vec![Poly::zero(self.dim); n];
        for (r, a) in self.coeffs.iter().enumerate() {
            for (s, b) in other.coeffs.iter().enumerate() {
                out[r + s] = &out[r + s] + &(a * b);
            }
        }
        Lift::new(out)
    }

    pub fn mul_poly(&self, p: &Poly) -> Lift {
        Lift::new(self.coeffs.iter().map(|c| c * p).collect())
    }

    /// Substitute a fixed value for coordinate `i` in every coefficient.
    pub fn fix_coord(&self, i: usize, v: f64) -> Lift {
        Lift::new(self.coeffs.iter().map(|c| c.fix_coord(i, v)).collect())
    }
}

fn check_domain(model: &ModelFamily, w: &[f64]) -> Result<()> {
    if model.domain().contains(w) {
        Ok(())
    } else {
        Err(Error::OutsideDomain { point: w.to_vec() })
    }
}

pub fn population_loss(model: &ModelFamily, w: &[f64]) -> Result<f64> {
    check_domain(model, w)?;
    Ok(model.loss_poly().eval(w))
}

pub fn empirical_loss_poly(model: &ModelFamily, data: &Dataset) -> Poly {
    model.log_ratio_lift().empirical_mean(data)
}

pub fn empirical_loss(model: &ModelFamily, data: &Dataset, w: &[f64]) -> Result<f64> {
    check_domain(model, w)?;
    Ok(empirical_loss_poly(model, data).eval(w))
}

/// `ΔK(w) = ∫ ξ f(·, w) q` as a polynomial.
pub fn loss_variation_poly(model: &ModelFamily, xi: &Perturbation) -> Poly {
    model
        .log_ratio_lift()
        .weighted_mean(&xi.x_coeffs(), |r| gaussian_moment(r as u32))
}

/// `ΔK_n(w) = (1/n) Σ ξ(x_j) f(x_j, w)` as a polynomial.
pub fn empirical_loss_variation_poly(model: &ModelFamily, xi: &Perturbation, data: &Dataset) -> Poly {
    let lift = model.log_ratio_lift();
    let a = xi.x_coeffs();
    let m = data.moments(lift.max_x_degree() + a.len());
    lift.weighted_mean(&a, |r| m[r])
}

pub fn loss_variation(model: &ModelFamily, xi: &Perturbation, w: &[f64]) -> Result<f64> {
    check_domain(model, w)?;
    Ok(loss_variation_poly(model, xi).eval(w))
}

pub fn empirical_loss_variation(
    model: &ModelFamily,
    xi: &Perturbation,
    data: &Dataset,
    w: &[f64],
) -> Result<f64> {
    check_domain(model, w)?;
    Ok(empirical_loss_variation_poly(model, xi, data).eval(w))
}

/// `∂^β_w g̃(x, w)`, exact.
pub fn lift_derivative(lift: &Lift, beta: &[u32], x: f64, w: &[f64]) -> Result<f64> {
    let order: u32 = beta.iter().sum();
    if order > MAX_LIFT_ORDER {
        return Err(Error::OrderCap {
            requested: order,
            cap: MAX_LIFT_ORDER,
        });
    }
    if beta.len() != lift.dim() {
        return Err(Error::InvalidInput(format!(
            "multi-index has {} entries, lift has dimension {}",
            beta.len(),
            lift.dim()
        )));
    }
    Ok(lift.derivative(beta).eval(x, w))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RfvReport {
    pub holds: bool,
    pub c0_hat: f64,
    /// Grid indices where `E_q[ψ] = 0` but `E_q[ψ²] > 0`.
    pub violations: Vec<usize>,
    pub points_checked: usize,
}

/// Relative finite variance check `E_q[ψ²] ≤ c₀ |E_q[ψ]|` on a grid, skipping
/// points within [`RFV_TUBE`] of the zero locus of `K`.
pub fn check_rfv(lift: &Lift, model: &ModelFamily, grid: &[Vec<f64>], c0_max: f64) -> RfvReport {
    check_rfv_with_tube(lift, model, grid, c0_max, RFV_TUBE)
}

pub fn check_rfv_with_tube(
    lift: &Lift,
    model: &ModelFamily,
    grid: &[Vec<f64>],
    c0_max: f64,
    tube: f64,
) -> RfvReport {
    let mean = lift.population_mean();
    let second = lift.mul(lift).population_mean();
    let mut c0_hat: f64 = 0.0;
    let mut violations = Vec::new();
    let mut checked = 0;
    for (idx, w) in grid.iter().enumerate() {
        if model.distance_to_zero_locus(w) < tube {
            continue;
        }
        checked += 1;
        let m1 = mean.eval(w).abs();
        let m2 = second.eval(w);
        if m1 == 0.0 {
            if m2 > 0.0 {
                violations.push(idx);
                c0_hat = f64::INFINITY;
            }
            continue;
        }
        c0_hat = c0_hat.max(m2 / m1);
    }
    RfvReport {
        holds: violations.is_empty() && c0_hat <= c0_max,
        c0_hat,
        violations,
        points_checked: checked,
    }
}
