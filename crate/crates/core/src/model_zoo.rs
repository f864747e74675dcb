//! Singular model families in standard form.
//!
//! The only generative family is the Gaussian location model
//! `p(x|w) = N(s·w^k, 1)` with true distribution `q = N(0, 1)`, where
//! `s = sqrt(2 c_K)`. Its log density ratio is
//! `f(x, w) = ½ s² w^{2k} − x s w^k`, so `K(w) = c_K w^{2k}` and every
//! population integral reduces to Gaussian moments of a polynomial in `x`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rand::RngExt;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hermite::{hermite, hermite_coeffs};
use crate::loss::{Dataset, Lift};
use crate::poly::Poly;

/// Axis-aligned box `Π [lo_i, hi_i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::InvalidModel(
                "domain bounds must be nonempty and of equal length".into(),
            ));
        }
        for (i, (a, b)) in lo.iter().zip(&hi).enumerate() {
            if !(a.is_finite() && b.is_finite() && a < b) {
                return Err(Error::InvalidModel(format!(
                    "domain has empty interior in coordinate {i}: [{a}, {b}]"
                )));
            }
        }
        Ok(BoxDomain { lo, hi })
    }

    pub fn unit(dim: usize) -> Self {
        BoxDomain {
            lo: vec![0.0; dim],
            hi: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn contains(&self, w: &[f64]) -> bool {
        w.len() == self.dim()
            && w.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(x, (a, b))| *x >= *a && *x <= *b)
    }

    pub fn diameter(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| (b - a) * (b - a))
            .sum::<f64>()
            .sqrt()
    }

    pub fn midpoint(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(a, b)| 0.5 * (a + b)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DataModel {
    #[default]
    GaussianLocation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFamily {
    k: Vec<u32>,
    h: Vec<u32>,
    domain: BoxDomain,
    loss_scale: f64,
    data_model: DataModel,
}

/// `K(w) = ½ w^{2k}` on `domain` with prior `φ ∝ |w^h|`.
pub fn make_monomial_gaussian(k: &[u32], h: &[u32], domain: BoxDomain) -> Result<ModelFamily> {
    if k.is_empty() || k.len() != h.len() || k.len() != domain.dim() {
        return Err(Error::InvalidModel(format!(
            "dimension mismatch: k has {}, h has {}, domain has {} coordinates",
            k.len(),
            h.len(),
            domain.dim()
        )));
    }
    if let Some(i) = k.iter().position(|&ki| ki == 0) {
        return Err(Error::InvalidModel(format!("k[{i}] = 0; loss exponents must be >= 1")));
    }
    Ok(ModelFamily {
        k: k.to_vec(),
        h: h.to_vec(),
        domain,
        loss_scale: 0.5,
        data_model: DataModel::GaussianLocation,
    })
}

impl ModelFamily {
    /// Replace `c_K`; the location mean becomes `sqrt(2 c_K) w^k`.
    pub fn with_loss_scale(mut self, c_k: f64) -> Result<Self> {
        if !(c_k > 0.0 && c_k.is_finite()) {
            return Err(Error::InvalidModel(format!("loss_scale must be positive, got {c_k}")));
        }
        self.loss_scale = c_k;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.k.len()
    }

    pub fn k(&self) -> &[u32] {
        &self.k
    }

    pub fn h(&self) -> &[u32] {
        &self.h
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    /// Short identifier such as `k1-2_h0-1`.
    pub fn label(&self) -> String {
        let j = |v: &[u32]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("-");
        format!("k{}_h{}", j(&self.k), j(&self.h))
    }

    pub fn loss_scale(&self) -> f64 {
        self.loss_scale
    }

    pub fn data_model(&self) -> DataModel {
        self.data_model
    }

    fn location_scale(&self) -> f64 {
        (2.0 * self.loss_scale).sqrt()
    }

    /// Mean of `p(x|w)`: `s·w^k`.
    pub fn mean_poly(&self) -> Poly {
        Poly::monomial(self.dim(), self.location_scale(), &self.k)
    }

    /// `K(w) = c_K w^{2k}`.
    pub fn loss_poly(&self) -> Poly {
        let e: Vec<u32> = self.k.iter().map(|k| 2 * k).collect();
        Poly::monomial(self.dim(), self.loss_scale, &e)
    }

    /// The log density ratio `f(x, w) = ½ μ(w)² − x μ(w)` as a lift.
    pub fn log_ratio_lift(&self) -> Lift {
        let mu = self.mean_poly();
        let c0 = (&mu * &mu).scale(0.5);
        let c1 = mu.scale(-1.0);
        Lift::new(vec![c0, c1])
    }

    pub fn log_ratio(&self, x: f64, w: &[f64]) -> f64 {
        let mu = self.mean_poly().eval(w);
        0.5 * mu * mu - x * mu
    }

    /// Distance from `w` to the zero locus `{w_i = 0 for some i}`.
    pub fn distance_to_zero_locus(&self, w: &[f64]) -> f64 {
        w.iter().map(|x| x.abs()).fold(f64::INFINITY, f64::min)
    }

    fn log_prior_normalizer(&self) -> f64 {
        self.h
            .iter()
            .enumerate()
            .map(|(i, &h)| {
                let (a, b) = (self.domain.lo[i], self.domain.hi[i]);
                let p = h as f64 + 1.0;
                let mass = if a >= 0.0 {
                    (b.powf(p) - a.powf(p)) / p
                } else if b <= 0.0 {
                    (a.abs().powf(p) - b.abs().powf(p)) / p
                } else {
                    (a.abs().powf(p) + b.powf(p)) / p
                };
                mass.ln()
            })
            .sum()
    }

    /// Log of the normalized prior density `φ(w) ∝ |w^h|` on the box.
    pub fn log_prior(&self, w: &[f64]) -> f64 {
        let mut s = -self.log_prior_normalizer();
        for (&x, &h) in w.iter().zip(&self.h) {
            if h > 0 {
                s += h as f64 * x.abs().ln();
            }
        }
        s
    }

    /// `∂_i^order log φ(w)`; mixed partials of `log φ` vanish.
    pub fn log_prior_derivative(&self, i: usize, order: u32, w: &[f64]) -> f64 {
        let h = self.h[i];
        if h == 0 || order == 0 {
            return if order == 0 { self.log_prior(w) } else { 0.0 };
        }
        // d^m/dx^m log|x| = (-1)^{m-1} (m-1)! / x^m
        let m = order as i32;
        let fact: f64 = (1..order).map(|j| j as f64).product();
        let sign = if m % 2 == 1 { 1.0 } else { -1.0 };
        h as f64 * sign * fact / w[i].powi(m)
    }
}

/// One Hermite component `scale · He_index`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HermiteTerm {
    pub hermite_index: u32,
    pub scale: f64,
}

/// A mean-zero perturbation `ξ = Σ scale_j He_{m_j}` of the standard normal.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    terms: Vec<HermiteTerm>,
}

impl Perturbation {
    pub fn hermite(index: u32, scale: f64) -> Result<Self> {
        if index == 0 {
            return Err(Error::InvalidInput(
                "He_0 has nonzero mean under q and is not a perturbation".into(),
            ));
        }
        Ok(Perturbation {
            terms: vec![HermiteTerm {
                hermite_index: index,
                scale,
            }],
        })
    }

    pub fn plus(mut self, other: &Perturbation) -> Self {
        self.terms.extend_from_slice(&other.terms);
        self
    }

    pub fn terms(&self) -> &[HermiteTerm] {
        &self.terms
    }

    pub fn density(&self, x: f64) -> f64 {
        self.terms
            .iter()
            .map(|t| t.scale * hermite(t.hermite_index, x))
            .sum()
    }

    /// Monomial coefficients of `ξ` as a polynomial in `x`.
    pub fn x_coeffs(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for t in &self.terms {
            let c = hermite_coeffs(t.hermite_index);
            if out.len() < c.len() {
                out.resize(c.len(), 0.0);
            }
            for (r, a) in c.iter().enumerate() {
                out[r] += t.scale * a;
            }
        }
        out
    }
}

/// `scale · He_m(x)` summed over the components of `xi`.
pub fn perturbation_density(xi: &Perturbation, x: f64) -> f64 {
    xi.density(x)
}

/// `n` i.i.d. standard normal draws, reproducible from `seed`.
pub fn sample_data(_model: &ModelFamily, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidInput("sample size must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Ok(Dataset::with_seed(points, seed))
}

/// Structured-text model description (`k`, `h`, `domain`, `loss_scale`,
/// optional `perturbation`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default)]
    pub id: Option<String>,
    pub k: Vec<u32>,
    pub h: Vec<u32>,
    #[serde(default)]
    pub domain: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    pub loss_scale: Option<f64>,
    #[serde(default)]
    pub data_model: DataModel,
    #[serde(default)]
    pub perturbation: Option<HermiteTerm>,
}

impl ModelSpec {
    pub fn build(&self) -> Result<ModelFamily> {
        let domain = match &self.domain {
            None => BoxDomain::unit(self.k.len()),
            Some(b) => BoxDomain::new(
                b.iter().map(|r| r[0]).collect(),
                b.iter().map(|r| r[1]).collect(),
            )?,
        };
        let m = make_monomial_gaussian(&self.k, &self.h, domain)?;
        match self.loss_scale {
            Some(c) => m.with_loss_scale(c),
            None => Ok(m),
        }
    }

    pub fn perturbation(&self) -> Result<Option<Perturbation>> {
        self.perturbation
            .map(|t| Perturbation::hermite(t.hermite_index, t.scale))
            .transpose()
    }

    pub fn label(&self) -> String {
        self.id.clone().unwrap_or_else(|| {
            let j = |v: &[u32]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("-");
            format!("k{}_h{}", j(&self.k), j(&self.h))
        })
    }
}
