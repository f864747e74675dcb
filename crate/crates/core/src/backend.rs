//! Posterior backends: where expectations under full and restricted
//! posteriors come from.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use crate::error::Result;
use crate::loss::{empirical_loss_poly, Dataset};
use crate::model_zoo::ModelFamily;
use crate::poly::Poly;
use crate::posterior::{Posterior, QuadConfig, Submanifold};
use crate::sgld::ChainSamples;
use crate::stats::{batch_means_se, N_BATCHES};

/// Samples or weighted nodes standing in for one posterior.
#[derive(Debug, Clone)]
pub enum Draws {
    Weighted(Posterior),
    Chain(ChainSamples),
}

impl Draws {
    pub fn len(&self) -> usize {
        match self {
            Draws::Weighted(p) => p.len(),
            Draws::Chain(c) => c.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, Draws::Weighted(_))
    }

    pub fn point(&self, i: usize) -> &[f64] {
        match self {
            Draws::Weighted(p) => p.point(i),
            Draws::Chain(c) => c.point(i),
        }
    }

    pub fn mean<F>(&self, f: F) -> f64
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        self.mean_vec(1, |w, out| out[0] = f(w))[0]
    }

    pub fn mean_vec<F>(&self, len: usize, f: F) -> Vec<f64>
    where
        F: Fn(&[f64], &mut [f64]) + Sync,
    {
        match self {
            Draws::Weighted(p) => p.expect_vec(len, f),
            Draws::Chain(c) => c.mean_vec(len, f),
        }
    }

    /// Batch-means standard error of the sample mean of `f`; zero for
    /// quadrature draws.
    pub fn std_err<F>(&self, f: F) -> f64
    where
        F: Fn(&[f64]) -> f64,
    {
        match self {
            Draws::Weighted(_) => 0.0,
            Draws::Chain(c) => {
                let vals: Vec<f64> = (0..c.len()).map(|i| f(c.point(i))).collect();
                batch_means_se(&vals, N_BATCHES)
            }
        }
    }
}

pub trait PosteriorBackend: Sync {
    fn model(&self) -> &ModelFamily;

    /// `G = K` (population) or `G = K_n` (empirical).
    fn potential(&self) -> &Poly;

    fn nbeta(&self) -> f64;

    /// Draws from the posterior on `support`. `slot` separates independent
    /// chains on the same support; exact backends ignore it.
    fn draws(&self, support: &Submanifold, slot: usize) -> Result<Arc<Draws>>;

    /// `log Z` on `support`, when the backend can provide it.
    fn log_partition(&self, support: &Submanifold) -> Result<f64>;

    fn is_exact(&self) -> bool;

    /// Hint that these draws will be needed; samplers may run them in parallel.
    fn prefetch(&self, _keys: &[(Submanifold, usize)]) -> Result<()> {
        Ok(())
    }
}

/// Deterministic quadrature against `e^{−nβG}φ`.
#[derive(Debug)]
pub struct QuadratureBackend {
    model: ModelFamily,
    potential: Poly,
    nbeta: f64,
    quad: QuadConfig,
    cache: Mutex<HashMap<Submanifold, Arc<Draws>>>,
}

impl QuadratureBackend {
    pub fn with_potential(model: &ModelFamily, potential: Poly, nbeta: f64, quad: QuadConfig) -> Self {
        QuadratureBackend {
            model: model.clone(),
            potential,
            nbeta,
            quad,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn population(model: &ModelFamily, nbeta: f64, quad: QuadConfig) -> Self {
        Self::with_potential(model, model.loss_poly(), nbeta, quad)
    }

    pub fn empirical(model: &ModelFamily, data: &Dataset, beta: f64, quad: QuadConfig) -> Self {
        let nbeta = data.len() as f64 * beta;
        Self::with_potential(model, empirical_loss_poly(model, data), nbeta, quad)
    }

    pub fn quad(&self) -> &QuadConfig {
        &self.quad
    }

    pub fn posterior(&self, support: &Submanifold) -> Result<Arc<Draws>> {
        if let Some(d) = self.cache.lock().expect("cache poisoned").get(support) {
            return Ok(d.clone());
        }
        let p = Posterior::from_potential(&self.model, &self.potential, self.nbeta, support, &self.quad)?;
        let d = Arc::new(Draws::Weighted(p));
        self.cache
            .lock()
            .expect("cache poisoned")
            .insert(support.clone(), d.clone());
        Ok(d)
    }
}

impl PosteriorBackend for QuadratureBackend {
    fn model(&self) -> &ModelFamily {
        &self.model
    }

    fn potential(&self) -> &Poly {
        &self.potential
    }

    fn nbeta(&self) -> f64 {
        self.nbeta
    }

    fn draws(&self, support: &Submanifold, _slot: usize) -> Result<Arc<Draws>> {
        self.posterior(support)
    }

    fn log_partition(&self, support: &Submanifold) -> Result<f64> {
        match &*self.posterior(support)? {
            Draws::Weighted(p) => Ok(p.log_partition()),
            Draws::Chain(_) => unreachable!("quadrature backend stores weighted draws"),
        }
    }

    fn is_exact(&self) -> bool {
        true
    }
}
