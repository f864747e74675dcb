//! Tempered posteriors on the box and on axis-aligned slices, by quadrature.
//!
//! A [`Posterior`] is a weighted point cloud: tensor Gauss–Legendre nodes on
//! panels that shrink geometrically towards the zero locus, with normalized
//! weights proportional to `e^{−nβG} φ` and the log partition function kept
//! separately. It is built once and then reused for any number of integrands.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{empirical_loss_poly, Dataset};
use crate::model_zoo::ModelFamily;
use crate::poly::Poly;
use crate::quad::{budget_nodes, compensated_sum, geometric_breaks, pairwise_sum};

/// Largest parameter dimension handled by quadrature.
pub const MAX_QUAD_DIM: usize = 3;

const CHUNK: usize = 2048;

/// `log Z` below this is reported as underflow by [`partition_function`].
const LOG_UNDERFLOW: f64 = -745.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadConfig {
    /// Gauss–Legendre nodes per free dimension, spread over the panels.
    #[serde(default = "default_nodes")]
    pub nodes: usize,
    /// Number of halvings of the concentration scale near the anchor.
    #[serde(default = "default_depth")]
    pub refine_depth: u32,
}

fn default_nodes() -> usize {
    128
}

/// Floor on the Gauss–Legendre order of a single panel.
pub const MIN_PANEL_NODES: usize = 8;

fn default_depth() -> u32 {
    10
}

impl Default for QuadConfig {
    fn default() -> Self {
        QuadConfig {
            nodes: default_nodes(),
            refine_depth: default_depth(),
        }
    }
}

impl QuadConfig {
    pub fn doubled(&self) -> Self {
        QuadConfig {
            nodes: self.nodes * 2,
            refine_depth: self.refine_depth + 1,
        }
    }
}

/// An axis-aligned affine slice `{w_i = v_i for i in fixed}` of the box.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Submanifold {
    dim: usize,
    fixed: BTreeMap<usize, OrdF64>,
}

/// Total-order wrapper so supports can key maps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrdF64(pub f64);

impl Eq for OrdF64 {}

impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl std::hash::Hash for OrdF64 {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.0.to_bits().hash(state)
    }
}

impl Submanifold {
    pub fn full(dim: usize) -> Self {
        Submanifold {
            dim,
            fixed: BTreeMap::new(),
        }
    }

    pub fn slice(dim: usize, fixed: &[(usize, f64)]) -> Result<Self> {
        let mut s = Submanifold::full(dim);
        for &(i, v) in fixed {
            s = s.with_fixed(i, v)?;
        }
        Ok(s)
    }

    pub fn with_fixed(mut self, i: usize, v: f64) -> Result<Self> {
        if i >= self.dim || !v.is_finite() {
            return Err(Error::InvalidInput(format!(
                "cannot fix coordinate {i} to {v} in dimension {}",
                self.dim
            )));
        }
        self.fixed.insert(i, OrdF64(v));
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_full(&self) -> bool {
        self.fixed.is_empty()
    }

    pub fn fixed_value(&self, i: usize) -> Option<f64> {
        self.fixed.get(&i).map(|v| v.0)
    }

    pub fn fixed(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.fixed.iter().map(|(i, v)| (*i, v.0))
    }

    pub fn free_coords(&self) -> Vec<usize> {
        (0..self.dim).filter(|i| !self.fixed.contains_key(i)).collect()
    }

    pub fn fits(&self, model: &ModelFamily) -> Result<()> {
        if self.dim != model.dim() {
            return Err(Error::InvalidInput(format!(
                "support has dimension {}, model has {}",
                self.dim,
                model.dim()
            )));
        }
        let d = model.domain();
        for (i, v) in self.fixed() {
            if v < d.lo()[i] || v > d.hi()[i] {
                return Err(Error::InvalidInput(format!(
                    "support fixes w{i} = {v} outside [{}, {}]",
                    d.lo()[i],
                    d.hi()[i]
                )));
            }
        }
        Ok(())
    }

    /// `p` restricted to the slice.
    pub fn restrict(&self, p: &Poly) -> Poly {
        self.fixed().fold(p.clone(), |acc, (i, v)| acc.fix_coord(i, v))
    }

    pub fn label(&self) -> String {
        if self.is_full() {
            "W".into()
        } else {
            self.fixed()
                .map(|(i, v)| format!("w{}={}", i + 1, v))
                .collect::<Vec<_>>()
                .join(",")
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LossMode {
    Population,
    Empirical(Arc<Dataset>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemperedPosteriorSpec {
    pub model: ModelFamily,
    pub mode: LossMode,
    pub n: usize,
    pub beta: f64,
    pub support: Submanifold,
}

impl TemperedPosteriorSpec {
    pub fn population(model: &ModelFamily, n: usize, beta: f64) -> Self {
        TemperedPosteriorSpec {
            support: Submanifold::full(model.dim()),
            model: model.clone(),
            mode: LossMode::Population,
            n,
            beta,
        }
    }

    pub fn empirical(model: &ModelFamily, data: Arc<Dataset>, beta: f64) -> Self {
        TemperedPosteriorSpec {
            support: Submanifold::full(model.dim()),
            model: model.clone(),
            n: data.len(),
            mode: LossMode::Empirical(data),
            beta,
        }
    }

    pub fn on(mut self, support: Submanifold) -> Self {
        self.support = support;
        self
    }

    pub fn nbeta(&self) -> f64 {
        self.n as f64 * self.beta
    }

    /// `G = K` or `G = K_n`.
    pub fn potential(&self) -> Poly {
        match &self.mode {
            LossMode::Population => self.model.loss_poly(),
            LossMode::Empirical(d) => empirical_loss_poly(&self.model, d),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidInput(format!("beta must be nonnegative, got {}", self.beta)));
        }
        if let LossMode::Empirical(d) = &self.mode {
            if d.len() != self.n {
                return Err(Error::InvalidInput(format!(
                    "empirical posterior needs {} points, dataset has {}",
                    self.n,
                    d.len()
                )));
            }
        }
        self.support.fits(&self.model)
    }
}

/// A normalized weighted point cloud representing `e^{−nβG}φ / Z` on a support.
#[derive(Debug, Clone)]
pub struct Posterior {
    dim: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
    log_z: f64,
    nbeta: f64,
    support: Submanifold,
}

/// Quarter-octave breaks around the edge of the bulk, where `e^{−nβ w^{2k}}`
/// drops steeply for large `k`.
fn shoulder_breaks(nbeta: f64, k: u32) -> Vec<f64> {
    if nbeta <= 0.0 {
        return Vec::new();
    }
    let edge = nbeta.powf(-1.0 / (2.0 * k as f64));
    (-4..=12)
        .map(|j| edge * 2f64.powf(j as f64 / 4.0))
        .flat_map(|t| [t, -t])
        .collect()
}

fn axis_scale(nbeta: f64, k: u32, span: f64) -> f64 {
    if nbeta > 0.0 {
        (2.0 * nbeta.powf(-1.0 / (2.0 * k as f64))).min(span)
    } else {
        span
    }
}

impl Posterior {
    pub fn build(spec: &TemperedPosteriorSpec, quad: &QuadConfig) -> Result<Self> {
        spec.validate()?;
        Self::from_potential(&spec.model, &spec.potential(), spec.nbeta(), &spec.support, quad)
    }

    /// Posterior `∝ e^{−nβ·potential} φ` on `support`.
    pub fn from_potential(
        model: &ModelFamily,
        potential: &Poly,
        nbeta: f64,
        support: &Submanifold,
        quad: &QuadConfig,
    ) -> Result<Self> {
        support.fits(model)?;
        if model.dim() > MAX_QUAD_DIM {
            return Err(Error::Unsupported(format!(
                "quadrature handles dimension <= {MAX_QUAD_DIM}; use SGLD for d = {}",
                model.dim()
            )));
        }
        if quad.nodes == 0 {
            return Err(Error::config("quad.nodes", "must be at least 1"));
        }
        let dim = model.dim();
        let dom = model.domain();
        let free = support.free_coords();
        let axes: Vec<Vec<(f64, f64)>> = free
            .iter()
            .map(|&j| {
                let (lo, hi) = (dom.lo()[j], dom.hi()[j]);
                let scale = axis_scale(nbeta, model.k()[j], hi - lo);
                let br = geometric_breaks(lo, hi, 0.0, scale, quad.refine_depth, &shoulder_breaks(nbeta, model.k()[j]));
                budget_nodes(&br, quad.nodes, MIN_PANEL_NODES)
            })
            .collect();
        let mut base = vec![0.0; dim];
        for (i, v) in support.fixed() {
            base[i] = v;
        }
        let g = support.restrict(potential);
        let total: usize = axes.iter().map(Vec::len).product();

        let chunks: Vec<(Vec<f64>, Vec<f64>)> = (0..total.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let start = c * CHUNK;
                let end = (start + CHUNK).min(total);
                let mut pts = Vec::with_capacity((end - start) * dim);
                let mut lw = Vec::with_capacity(end - start);
                let mut w = base.clone();
                for idx in start..end {
                    let mut rem = idx;
                    let mut log_q = 0.0;
                    for (a, &j) in axes.iter().zip(&free).rev() {
                        let (x, q) = a[rem % a.len()];
                        rem /= a.len();
                        w[j] = x;
                        log_q += q.ln();
                    }
                    let e = log_q - nbeta * g.eval(&w) + model.log_prior(&w);
                    pts.extend_from_slice(&w);
                    lw.push(e);
                }
                (pts, lw)
            })
            .collect();

        let m = chunks
            .iter()
            .flat_map(|(_, l)| l.iter().copied())
            .fold(f64::NEG_INFINITY, f64::max);
        if !m.is_finite() {
            return Err(Error::Underflow { log_z: m });
        }
        let mut kept_pts = Vec::new();
        let mut weights = Vec::new();
        for (p, l) in chunks {
            for (i, e) in l.iter().enumerate() {
                let r = (e - m).exp();
                if r > 0.0 {
                    weights.push(r);
                    kept_pts.extend_from_slice(&p[i * dim..(i + 1) * dim]);
                }
            }
        }
        let z = pairwise_sum(&weights);
        let log_z = m + z.ln();
        for w in weights.iter_mut() {
            *w /= z;
        }
        Ok(Posterior {
            dim,
            points: kept_pts,
            weights,
            log_z,
            nbeta,
            support: support.clone(),
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nbeta(&self) -> f64 {
        self.nbeta
    }

    pub fn support(&self) -> &Submanifold {
        &self.support
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    /// `log Z`; never underflows.
    pub fn log_partition(&self) -> f64 {
        self.log_z
    }

    pub fn partition_function(&self) -> Result<f64> {
        if self.log_z < LOG_UNDERFLOW {
            return Err(Error::Underflow { log_z: self.log_z });
        }
        Ok(self.log_z.exp())
    }

    pub fn expect<F>(&self, f: F) -> f64
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        let parts: Vec<f64> = self
            .weights
            .par_chunks(CHUNK)
            .enumerate()
            .map(|(c, ws)| {
                let off = c * CHUNK;
                compensated_sum(ws.iter().enumerate().map(|(i, w)| w * f(self.point(off + i))))
            })
            .collect();
        pairwise_sum(&parts)
    }

    pub fn expect_poly(&self, p: &Poly) -> f64 {
        self.expect(|w| p.eval(w))
    }

    /// Several expectations in one pass; `f` fills `out` at each point.
    pub fn expect_vec<F>(&self, len: usize, f: F) -> Vec<f64>
    where
        F: Fn(&[f64], &mut [f64]) + Sync,
    {
        let parts: Vec<Vec<f64>> = self
            .weights
            .par_chunks(CHUNK)
            .enumerate()
            .map(|(c, ws)| {
                let off = c * CHUNK;
                let mut buf = vec![0.0; len];
                let mut acc = vec![(0.0f64, 0.0f64); len];
                for (i, w) in ws.iter().enumerate() {
                    f(self.point(off + i), &mut buf);
                    for (a, b) in acc.iter_mut().zip(&buf) {
                        let x = w * b;
                        let t = a.0 + x;
                        if a.0.abs() >= x.abs() {
                            a.1 += (a.0 - t) + x;
                        } else {
                            a.1 += (x - t) + a.0;
                        }
                        a.0 = t;
                    }
                }
                acc.into_iter().map(|(s, c)| s + c).collect()
            })
            .collect();
        (0..len)
            .map(|k| pairwise_sum(&parts.iter().map(|p| p[k]).collect::<Vec<_>>()))
            .collect()
    }
}

pub fn expect<F>(spec: &TemperedPosteriorSpec, integrand: F, quad: &QuadConfig) -> Result<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    Ok(Posterior::build(spec, quad)?.expect(integrand))
}

/// Unnormalized mass `∫_S e^{−nβG} φ`.
pub fn partition_function(spec: &TemperedPosteriorSpec, quad: &QuadConfig) -> Result<f64> {
    Posterior::build(spec, quad)?.partition_function()
}

pub fn log_partition_function(spec: &TemperedPosteriorSpec, quad: &QuadConfig) -> Result<f64> {
    Ok(Posterior::build(spec, quad)?.log_partition())
}

/// Expectation under the uniform distribution on `{K|_S ≤ eps}`.
///
/// The last free coordinate is integrated over its exact sub-interval; the
/// remaining free coordinates use the panel grid.
pub fn level_set_expect<F>(
    model: &ModelFamily,
    eps: f64,
    support: &Submanifold,
    integrand: F,
    quad: &QuadConfig,
) -> Result<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if !(eps > 0.0) {
        return Err(Error::InvalidInput(format!("eps must be positive, got {eps}")));
    }
    support.fits(model)?;
    let dom = model.domain();
    let k = model.k();
    let c = model.loss_scale();
    let mut base = vec![0.0; model.dim()];
    let mut fixed_factor = c;
    for (i, v) in support.fixed() {
        base[i] = v;
        fixed_factor *= v.powi(2 * k[i] as i32);
    }
    let free = support.free_coords();
    if free.is_empty() {
        return if fixed_factor <= eps {
            Ok(integrand(&base))
        } else {
            Err(Error::EmptyLevelSet { eps })
        };
    }
    let (&inner, outer) = free.split_last().unwrap();
    let outer_axes: Vec<Vec<(f64, f64)>> = outer
        .iter()
        .map(|&j| {
            let (lo, hi) = (dom.lo()[j], dom.hi()[j]);
            // kinks where the inner interval meets the box
            let mut kinks = Vec::new();
            if outer.len() == 1 {
                for b in [dom.lo()[inner], dom.hi()[inner]] {
                    let denom = fixed_factor * b.powi(2 * k[inner] as i32);
                    if denom > 0.0 {
                        let t = (eps / denom).powf(1.0 / (2.0 * k[j] as f64));
                        kinks.push(t);
                        kinks.push(-t);
                    }
                }
            }
            let scale = eps.powf(1.0 / (2.0 * k[j] as f64)).min(hi - lo);
            budget_nodes(
                &geometric_breaks(lo, hi, 0.0, scale, quad.refine_depth, &kinks),
                quad.nodes,
                MIN_PANEL_NODES,
            )
        })
        .collect();
    let (ilo, ihi) = (dom.lo()[inner], dom.hi()[inner]);
    let inner_rule = crate::quad::gl_rule(quad.nodes.div_ceil(4).max(MIN_PANEL_NODES));
    let total: usize = outer_axes.iter().map(Vec::len).product();

    let parts: Vec<(f64, f64)> = (0..total.div_ceil(CHUNK).max(1))
        .into_par_iter()
        .map(|ch| {
            let start = ch * CHUNK;
            let end = (start + CHUNK).min(total);
            let mut w = base.clone();
            let (mut num, mut den) = (Vec::new(), Vec::new());
            for idx in start..end {
                let mut rem = idx;
                let mut q = 1.0;
                let mut p = fixed_factor;
                for (a, &j) in outer_axes.iter().zip(outer).rev() {
                    let (x, qw) = a[rem % a.len()];
                    rem /= a.len();
                    w[j] = x;
                    q *= qw;
                    p *= x.powi(2 * k[j] as i32);
                }
                let (a, b) = if p > 0.0 {
                    let r = (eps / p).powf(1.0 / (2.0 * k[inner] as f64));
                    (ilo.max(-r), ihi.min(r))
                } else {
                    (ilo, ihi)
                };
                if b <= a {
                    continue;
                }
                let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
                let mut s = 0.0;
                for &(t, tw) in inner_rule.iter() {
                    w[inner] = mid + half * t;
                    s += tw * integrand(&w);
                }
                num.push(q * half * s);
                den.push(q * (b - a));
            }
            (compensated_sum(num), compensated_sum(den))
        })
        .collect();
    let num = pairwise_sum(&parts.iter().map(|p| p.0).collect::<Vec<_>>());
    let den = pairwise_sum(&parts.iter().map(|p| p.1).collect::<Vec<_>>());
    if !(den > 0.0) {
        return Err(Error::EmptyLevelSet { eps });
    }
    Ok(num / den)
}
