//! Stochastic gradient Langevin dynamics on the box and on axis-aligned slices.
//!
//! One step is
//! `w ← w − (ε/2) ∇(nβ G + γ/2 ‖w − w*‖² − log φ) + √ε ξ` on the free
//! coordinates, followed by reflection into the box. Fixed coordinates are
//! never written.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{Draws, PosteriorBackend};
use crate::error::{Error, Result};
use crate::loss::{empirical_loss_poly, Dataset};
use crate::model_zoo::ModelFamily;
use crate::poly::Poly;
use crate::posterior::{LossMode, Submanifold, TemperedPosteriorSpec};
use crate::quad::compensated_sum;
use crate::stats::{batch_means_se, derive_seed, fnv1a, N_BATCHES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgldConfig {
    /// `None` selects `0.5 / (nβ · max|G''| + γ)`.
    #[serde(default)]
    pub step_size: Option<f64>,
    #[serde(default = "default_length")]
    pub chain_length: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default)]
    pub localization: f64,
    #[serde(default)]
    pub center: Option<Vec<f64>>,
    /// `None` means full-batch gradients.
    #[serde(default)]
    pub minibatch_size: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

fn default_length() -> usize {
    100_000
}

fn default_burn_in() -> usize {
    1_000
}

impl Default for SgldConfig {
    fn default() -> Self {
        SgldConfig {
            step_size: None,
            chain_length: default_length(),
            burn_in: default_burn_in(),
            localization: 0.0,
            center: None,
            minibatch_size: None,
            seed: 0,
        }
    }
}

impl SgldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.chain_length {
            return Err(Error::EmptyChain {
                length: self.chain_length,
                burn_in: self.burn_in,
            });
        }
        if let Some(e) = self.step_size {
            if !(e > 0.0 && e.is_finite()) {
                return Err(Error::config("sgld.step_size", format!("must be positive, got {e}")));
            }
        }
        if !(self.localization >= 0.0) {
            return Err(Error::config("sgld.localization", "must be nonnegative"));
        }
        if self.minibatch_size == Some(0) {
            return Err(Error::config("sgld.minibatch_size", "must be at least 1"));
        }
        Ok(())
    }
}

/// Post-burn-in iterates of one chain, in full coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainSamples {
    dim: usize,
    points: Vec<f64>,
    pub seed: u64,
    pub step_size: f64,
}

impl ChainSamples {
    pub fn new(dim: usize, points: Vec<f64>, seed: u64, step_size: f64) -> Self {
        assert_eq!(points.len() % dim.max(1), 0);
        ChainSamples {
            dim,
            points,
            seed,
            step_size,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn mean_vec<F>(&self, len: usize, f: F) -> Vec<f64>
    where
        F: Fn(&[f64], &mut [f64]),
    {
        let mut cols = vec![Vec::with_capacity(self.len()); len];
        let mut buf = vec![0.0; len];
        for i in 0..self.len() {
            f(self.point(i), &mut buf);
            for (c, b) in cols.iter_mut().zip(&buf) {
                c.push(*b);
            }
        }
        let n = self.len().max(1) as f64;
        cols.into_iter().map(|c| compensated_sum(c) / n).collect()
    }

    /// Binary dump: little-endian `u64` header `{T, d, seed}` then `f64` values.
    pub fn write_dump(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for h in [self.len() as u64, self.dim as u64, self.seed] {
            f.write_all(&h.to_le_bytes())?;
        }
        for v in &self.points {
            f.write_all(&v.to_le_bytes())?;
        }
        f.flush()?;
        Ok(())
    }

    pub fn read_dump(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        if bytes.len() < 24 {
            return Err(Error::InvalidInput("chain dump shorter than its header".into()));
        }
        let word = |i: usize| u64::from_le_bytes(bytes[8 * i..8 * i + 8].try_into().unwrap());
        let (t, d, seed) = (word(0) as usize, word(1) as usize, word(2));
        if bytes.len() != 24 + 8 * t * d {
            return Err(Error::InvalidInput(format!(
                "chain dump holds {} bytes, header promises {t} x {d} values",
                bytes.len()
            )));
        }
        let points = bytes[24..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(ChainSamples::new(d, points, seed, f64::NAN))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleMean {
    pub mean: f64,
    pub mc_std_err: f64,
}

pub fn sample_mean<F: Fn(&[f64]) -> f64>(chain: &ChainSamples, g: F) -> Result<SampleMean> {
    if chain.is_empty() {
        return Err(Error::EmptyChain {
            length: 0,
            burn_in: 0,
        });
    }
    let vals: Vec<f64> = (0..chain.len()).map(|i| g(chain.point(i))).collect();
    Ok(SampleMean {
        mean: compensated_sum(vals.iter().copied()) / vals.len() as f64,
        mc_std_err: batch_means_se(&vals, N_BATCHES),
    })
}

fn reflect(x: f64, lo: f64, hi: f64) -> f64 {
    if x >= lo && x <= hi {
        return x;
    }
    let w = hi - lo;
    let mut y = (x - lo).rem_euclid(2.0 * w);
    if y > w {
        y = 2.0 * w - y;
    }
    lo + y
}

/// Box constraint for [`run_langevin`].
#[derive(Debug, Clone)]
pub struct Bounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

/// Unadjusted Langevin on the coordinates in `free`; `grad` writes
/// `∂_j U(w)` for each free `j` into the matching slot of its output.
pub fn run_langevin<G>(
    mut grad: G,
    start: Vec<f64>,
    free: &[usize],
    bounds: Option<&Bounds>,
    step: f64,
    chain_length: usize,
    burn_in: usize,
    seed: u64,
) -> Result<ChainSamples>
where
    G: FnMut(&[f64], &mut [f64], &mut ChaCha8Rng),
{
    if burn_in >= chain_length {
        return Err(Error::EmptyChain {
            length: chain_length,
            burn_in,
        });
    }
    let dim = start.len();
    let radius = match bounds {
        Some(b) => {
            10.0 * b
                .lo
                .iter()
                .zip(&b.hi)
                .map(|(a, c)| (c - a) * (c - a))
                .sum::<f64>()
                .sqrt()
        }
        None => f64::INFINITY,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = start;
    let mut g = vec![0.0; free.len()];
    let noise = step.sqrt();
    let mut out = Vec::with_capacity((chain_length - burn_in) * dim);
    for t in 0..chain_length {
        grad(&w, &mut g, &mut rng);
        for (slot, &j) in free.iter().enumerate() {
            let z: f64 = rng.sample(StandardNormal);
            let mut x = w[j] - 0.5 * step * g[slot] + noise * z;
            if let Some(b) = bounds {
                x = reflect(x, b.lo[j], b.hi[j]);
            }
            w[j] = x;
        }
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !norm.is_finite() || norm > radius {
            return Err(Error::Divergence {
                step: t,
                detail: format!("iterate {w:?} left the ball of radius {radius}"),
            });
        }
        if t >= burn_in {
            out.extend_from_slice(&w);
        }
    }
    Ok(ChainSamples::new(dim, out, seed, step))
}

/// `0.5 / (nβ · max‖Hess G‖ + γ)` with the Hessian norm bounded by row sums
/// on a coarse grid over the support.
pub fn stability_step(model: &ModelFamily, potential: &Poly, nbeta: f64, gamma: f64, support: &Submanifold) -> f64 {
    let g = support.restrict(potential);
    let free = support.free_coords();
    let hess: Vec<Vec<Poly>> = free
        .iter()
        .map(|&i| free.iter().map(|&j| g.partial(i).partial(j)).collect())
        .collect();
    let mut curv: f64 = 0.0;
    for_grid(model, support, 33, |w| {
        for row in &hess {
            curv = curv.max(row.iter().map(|p| p.eval(w).abs()).sum());
        }
    });
    let denom = nbeta * curv + gamma;
    if denom > 0.0 {
        0.5 / denom
    } else {
        0.5
    }
}

fn for_grid<F: FnMut(&[f64])>(model: &ModelFamily, support: &Submanifold, per_dim: usize, mut f: F) {
    let dom = model.domain();
    let free = support.free_coords();
    let mut w = vec![0.0; model.dim()];
    for (i, v) in support.fixed() {
        w[i] = v;
    }
    let total = per_dim.pow(free.len() as u32);
    for idx in 0..total {
        let mut rem = idx;
        for &j in &free {
            let t = (rem % per_dim) as f64 / (per_dim - 1) as f64;
            rem /= per_dim;
            w[j] = dom.lo()[j] + t * (dom.hi()[j] - dom.lo()[j]);
        }
        f(&w);
    }
}

fn grid_argmin(model: &ModelFamily, g: &Poly, support: &Submanifold) -> Vec<f64> {
    let mut best = (f64::INFINITY, vec![]);
    for_grid(model, support, 33, |w| {
        let v = g.eval(w);
        if v < best.0 {
            best = (v, w.to_vec());
        }
    });
    best.1
}

/// A chain targeting the (localized) tempered posterior of `spec`.
pub fn run_chain(model: &ModelFamily, data: &Dataset, spec: &TemperedPosteriorSpec, cfg: &SgldConfig) -> Result<ChainSamples> {
    spec.validate()?;
    cfg.validate()?;
    let nbeta = spec.nbeta();
    let support = &spec.support;
    let potential = spec.potential();
    let minibatch = match (&spec.mode, cfg.minibatch_size) {
        (LossMode::Empirical(_), Some(b)) if b < data.len() => Some(b),
        _ => None,
    };
    chain_on(model, data, &potential, nbeta, support, cfg, minibatch, cfg.seed)
}

#[allow(clippy::too_many_arguments)]
fn chain_on(
    model: &ModelFamily,
    data: &Dataset,
    potential: &Poly,
    nbeta: f64,
    support: &Submanifold,
    cfg: &SgldConfig,
    minibatch: Option<usize>,
    seed: u64,
) -> Result<ChainSamples> {
    support.fits(model)?;
    let free = support.free_coords();
    let g = support.restrict(potential);
    let step = cfg
        .step_size
        .unwrap_or_else(|| stability_step(model, potential, nbeta, cfg.localization, support));
    let mut start = grid_argmin(model, &g, support);
    if let Some(c) = &cfg.center {
        if c.len() != model.dim() {
            return Err(Error::config("sgld.center", "length must equal the model dimension"));
        }
        for &j in &free {
            start[j] = c[j];
        }
    }
    let center = start.clone();
    let bounds = Bounds {
        lo: model.domain().lo().to_vec(),
        hi: model.domain().hi().to_vec(),
    };
    let grad_g: Vec<Poly> = free.iter().map(|&j| g.partial(j)).collect();
    let lift_grads: Vec<Vec<Poly>> = model
        .log_ratio_lift()
        .coeffs()
        .iter()
        .map(|c| {
            let c = support.restrict(c);
            free.iter().map(|&j| c.partial(j)).collect()
        })
        .collect();
    let gamma = cfg.localization;
    let h = model.h().to_vec();
    let xs = data.points();
    let grad = |w: &[f64], out: &mut [f64], rng: &mut ChaCha8Rng| {
        match minibatch {
            None => {
                for (o, p) in out.iter_mut().zip(&grad_g) {
                    *o = nbeta * p.eval(w);
                }
            }
            Some(b) => {
                let mut mom = vec![0.0; lift_grads.len()];
                for _ in 0..b {
                    let x = xs[rng.random_range(0..xs.len())];
                    let mut p = 1.0;
                    for m in mom.iter_mut() {
                        *m += p;
                        p *= x;
                    }
                }
                for (slot, o) in out.iter_mut().enumerate() {
                    let s: f64 = lift_grads.iter().zip(&mom).map(|(gr, m)| gr[slot].eval(w) * m).sum();
                    *o = nbeta * s / b as f64;
                }
            }
        }
        for (slot, &j) in free.iter().enumerate() {
            if gamma > 0.0 {
                out[slot] += gamma * (w[j] - center[j]);
            }
            if h[j] > 0 {
                out[slot] -= h[j] as f64 / w[j];
            }
        }
    };
    run_langevin(grad, start, &free, Some(&bounds), step, cfg.chain_length, cfg.burn_in, seed)
}

/// Empirical posteriors sampled by SGLD, one chain per `(support, slot)`.
#[derive(Debug)]
pub struct SgldBackend {
    model: ModelFamily,
    data: Arc<Dataset>,
    potential: Poly,
    nbeta: f64,
    cfg: SgldConfig,
    cache: Mutex<HashMap<(Submanifold, usize), Arc<Draws>>>,
}

impl SgldBackend {
    pub fn new(model: &ModelFamily, data: Arc<Dataset>, beta: f64, cfg: SgldConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(SgldBackend {
            model: model.clone(),
            potential: empirical_loss_poly(model, &data),
            nbeta: data.len() as f64 * beta,
            data,
            cfg,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn config(&self) -> &SgldConfig {
        &self.cfg
    }

    fn chain_seed(&self, support: &Submanifold, slot: usize) -> u64 {
        derive_seed(self.cfg.seed, &[slot as u64, fnv1a(support.label().as_bytes())])
    }

    fn run(&self, support: &Submanifold, slot: usize) -> Result<Arc<Draws>> {
        let minibatch = self.cfg.minibatch_size.filter(|b| *b < self.data.len());
        let c = chain_on(
            &self.model,
            &self.data,
            &self.potential,
            self.nbeta,
            support,
            &self.cfg,
            minibatch,
            self.chain_seed(support, slot),
        )?;
        Ok(Arc::new(Draws::Chain(c)))
    }

    /// Run the listed chains in parallel and cache them.
    pub fn prefetch(&self, keys: &[(Submanifold, usize)]) -> Result<()> {
        let todo: Vec<&(Submanifold, usize)> = {
            let cache = self.cache.lock().expect("cache poisoned");
            keys.iter().filter(|k| !cache.contains_key(k)).collect()
        };
        let done: Vec<((Submanifold, usize), Arc<Draws>)> = todo
            .par_iter()
            .map(|k| Ok(((*k).clone(), self.run(&k.0, k.1)?)))
            .collect::<Result<_>>()?;
        self.cache.lock().expect("cache poisoned").extend(done);
        Ok(())
    }
}

impl PosteriorBackend for SgldBackend {
    fn model(&self) -> &ModelFamily {
        &self.model
    }

    fn potential(&self) -> &Poly {
        &self.potential
    }

    fn nbeta(&self) -> f64 {
        self.nbeta
    }

    fn draws(&self, support: &Submanifold, slot: usize) -> Result<Arc<Draws>> {
        let key = (support.clone(), slot);
        if let Some(d) = self.cache.lock().expect("cache poisoned").get(&key) {
            return Ok(d.clone());
        }
        let d = self.run(support, slot)?;
        self.cache.lock().expect("cache poisoned").insert(key, d.clone());
        Ok(d)
    }

    fn log_partition(&self, _support: &Submanifold) -> Result<f64> {
        Err(Error::Unsupported(
            "partition functions are not estimated from SGLD chains".into(),
        ))
    }

    fn is_exact(&self) -> bool {
        false
    }

    fn prefetch(&self, keys: &[(Submanifold, usize)]) -> Result<()> {
        SgldBackend::prefetch(self, keys)
    }
}
