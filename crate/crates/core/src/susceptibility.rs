//! Susceptibility estimators, coupling kernels and per-sample susceptibilities.

use serde::{Deserialize, Serialize};

use crate::asymptotics::{ratio_f64, sigma};
use crate::backend::PosteriorBackend;
use crate::error::{Error, Result};
use crate::loss::{empirical_loss_variation_poly, loss_variation_poly, Dataset, Lift};
use crate::model_zoo::{ModelFamily, Perturbation};
use crate::observables::{empirical_observable, restricted_covariance, CovOptions, Observable, ObservableTerm, TermCovariance};
use crate::poly::Poly;
use crate::posterior::{level_set_expect, QuadConfig, Submanifold};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    /// Renormalized population susceptibility.
    PopulationRen,
    /// Population susceptibility including partition-function ratios.
    Population,
    Ideal,
    Ren,
    Sgld,
}

impl EstimatorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EstimatorKind::PopulationRen => "population_ren",
            EstimatorKind::Population => "population",
            EstimatorKind::Ideal => "ideal",
            EstimatorKind::Ren => "ren",
            EstimatorKind::Sgld => "sgld",
        }
    }
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SusceptibilityResult {
    pub value: f64,
    pub estimator_kind: EstimatorKind,
    pub nbeta: f64,
    pub n: usize,
    pub decomposition_id: String,
    pub mc_std_err: Option<f64>,
    /// Per reduced term contributions to `−value`.
    pub terms: Vec<TermCovariance>,
}

/// Supports and derivative orders of each term, in order.
pub fn decomposition_id(obs: &Observable) -> String {
    obs.terms()
        .iter()
        .map(|t| {
            let ord = |v: &[u32]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("");
            let mut s = t.support.label();
            if t.beta.iter().any(|&b| b > 0) {
                s.push_str(&format!("/n{}", ord(&t.beta)));
            }
            if t.tangential.iter().any(|&b| b > 0) {
                s.push_str(&format!("/t{}", ord(&t.tangential)));
            }
            s
        })
        .collect::<Vec<_>>()
        .join(";")
}

fn require_population(backend: &dyn PosteriorBackend) -> Result<()> {
    if !backend.is_exact() || *backend.potential() != backend.model().loss_poly() {
        return Err(Error::InvalidInput("a population quadrature backend is required".into()));
    }
    Ok(())
}

/// `−Cov^res(O, ΔK)` under population posteriors.
pub fn chi_pop_ren(obs: &Observable, xi: &Perturbation, backend: &dyn PosteriorBackend, opts: &CovOptions) -> Result<SusceptibilityResult> {
    require_population(backend)?;
    let delta = loss_variation_poly(backend.model(), xi);
    let cov = restricted_covariance(obs, &delta, backend, opts)?;
    Ok(SusceptibilityResult {
        value: -cov.value,
        estimator_kind: EstimatorKind::PopulationRen,
        nbeta: backend.nbeta(),
        n: 0,
        decomposition_id: decomposition_id(obs),
        mc_std_err: None,
        terms: cov.terms,
    })
}

/// Weight each reduced term by `Z^S / Z^W`.
fn partition_weighted(cov_terms: &[TermCovariance], backend: &dyn PosteriorBackend) -> Result<f64> {
    let full = Submanifold::full(backend.model().dim());
    let log_zw = backend.log_partition(&full)?;
    let mut v = 0.0;
    for t in cov_terms {
        let ratio = (backend.log_partition(&t.support)? - log_zw).exp();
        v += ratio * t.value;
    }
    Ok(v)
}

/// Population susceptibility with the `Z^S/Z` factors kept.
pub fn chi_pop(obs: &Observable, xi: &Perturbation, backend: &dyn PosteriorBackend, opts: &CovOptions) -> Result<SusceptibilityResult> {
    let mut r = chi_pop_ren(obs, xi, backend, opts)?;
    r.value = -partition_weighted(&r.terms, backend)?;
    r.estimator_kind = EstimatorKind::Population;
    Ok(r)
}

/// Renormalized estimator from empirical lifts and `ΔK_n`; the backend
/// decides between exact quadrature and SGLD chains.
pub fn chi_ren_hat(
    obs: &Observable,
    xi: &Perturbation,
    data: &Dataset,
    backend: &dyn PosteriorBackend,
    opts: &CovOptions,
) -> Result<SusceptibilityResult> {
    let obs_n = empirical_observable(obs, data);
    let delta = empirical_loss_variation_poly(backend.model(), xi, data);
    let cov = restricted_covariance(&obs_n, &delta, backend, opts)?;
    Ok(SusceptibilityResult {
        value: -cov.value,
        estimator_kind: if backend.is_exact() {
            EstimatorKind::Ren
        } else {
            EstimatorKind::Sgld
        },
        nbeta: backend.nbeta(),
        n: data.len(),
        decomposition_id: decomposition_id(obs),
        mc_std_err: cov.mc_std_err,
        terms: cov.terms,
    })
}

/// The ideal estimator: renormalized summands weighted by `Z^{emp,S}/Z^{emp}`.
pub fn chi_ideal_hat(
    obs: &Observable,
    xi: &Perturbation,
    data: &Dataset,
    backend: &dyn PosteriorBackend,
    opts: &CovOptions,
) -> Result<SusceptibilityResult> {
    if !backend.is_exact() {
        return Err(Error::Unsupported("the ideal estimator needs partition functions".into()));
    }
    let mut r = chi_ren_hat(obs, xi, data, backend, opts)?;
    r.value = -partition_weighted(&r.terms, backend)?;
    r.estimator_kind = EstimatorKind::Ideal;
    Ok(r)
}

/// `−(nβ)^{−M} Cov^res(O, f(x, ·) − K)`.
pub fn per_sample_susceptibility(obs: &Observable, x: f64, backend: &dyn PosteriorBackend, opts: &CovOptions) -> Result<f64> {
    let model = backend.model();
    let delta = &model.log_ratio_lift().at_x(x) - &model.loss_poly();
    Ok(-restricted_covariance(obs, &delta, backend, opts)?.value)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelKind {
    Population,
    Empirical,
    SharpCutoff { eps: f64, sigma: f64 },
}

/// `κ(x, x') = Σ_{r,s} A_{rs} x^r x'^s` for a functional term.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingKernel {
    pub kind: KernelKind,
    coeffs: Vec<Vec<f64>>,
}

fn functional_term(term: &ObservableTerm) -> Result<()> {
    term.validate()?;
    if term.order() > 0 {
        return Err(Error::InvalidInput("coupling kernels are defined for functional terms".into()));
    }
    Ok(())
}

impl CouplingKernel {
    /// Hybrid kernel under the backend's posteriors.
    pub fn hybrid(term: &ObservableTerm, backend: &dyn PosteriorBackend) -> Result<Self> {
        functional_term(term)?;
        let model = backend.model();
        let f = model.log_ratio_lift();
        let c: Vec<Poly> = term.lift.coeffs().to_vec();
        let d: Vec<Poly> = f.coeffs().to_vec();
        let (nr, ns) = (c.len(), d.len());
        let sd = backend.draws(&term.support, 1)?;
        let wd = backend.draws(&Submanifold::full(model.dim()), 0)?;
        let mixed = sd.mean_vec(nr * ns + nr, |w, out| {
            let cv: Vec<f64> = c.iter().map(|p| p.eval(w)).collect();
            for r in 0..nr {
                for s in 0..ns {
                    out[r * ns + s] = cv[r] * d[s].eval(w);
                }
                out[nr * ns + r] = cv[r];
            }
        });
        let ew = wd.mean_vec(ns, |w, out| {
            for (o, p) in out.iter_mut().zip(&d) {
                *o = p.eval(w);
            }
        });
        let coeffs = (0..nr)
            .map(|r| (0..ns).map(|s| mixed[r * ns + s] - mixed[nr * ns + r] * ew[s]).collect())
            .collect();
        let kind = if *backend.potential() == model.loss_poly() {
            KernelKind::Population
        } else {
            KernelKind::Empirical
        };
        Ok(CouplingKernel { kind, coeffs })
    }

    /// Sharp-cutoff kernel with `σ = λ_{j+k} − λ` on the free coordinates of
    /// the support.
    pub fn sharp_cutoff(term: &ObservableTerm, model: &ModelFamily, eps: f64, insertion: &[u32], quad: &QuadConfig) -> Result<Self> {
        functional_term(term)?;
        let sig = sharp_cutoff_sigma(model, &term.support, insertion)?;
        let f = model.log_ratio_lift();
        let c = term.lift.coeffs();
        let d = f.coeffs();
        let full = Submanifold::full(model.dim());
        let us = |p: &Poly| level_set_expect(model, eps, &term.support, |w| p.eval(w), quad);
        let uw = |p: &Poly| level_set_expect(model, eps, &full, |w| p.eval(w), quad);
        let ew: Vec<f64> = d.iter().map(uw).collect::<Result<_>>()?;
        let pre = eps.powf(-sig);
        let mut coeffs = Vec::with_capacity(c.len());
        for cr in c {
            let ec = us(cr)?;
            let row = d
                .iter()
                .zip(&ew)
                .map(|(ds, ewd)| Ok(pre * (us(&(cr * ds))? - ec * ewd)))
                .collect::<Result<Vec<f64>>>()?;
            coeffs.push(row);
        }
        Ok(CouplingKernel {
            kind: KernelKind::SharpCutoff { eps, sigma: sig },
            coeffs,
        })
    }

    pub fn coefficients(&self) -> &[Vec<f64>] {
        &self.coeffs
    }

    pub fn eval(&self, x: f64, x2: f64) -> f64 {
        let mut v = 0.0;
        let mut xr = 1.0;
        for row in &self.coeffs {
            let mut xs = 1.0;
            for a in row {
                v += a * xr * xs;
                xs *= x2;
            }
            xr *= x;
        }
        v
    }
}

pub fn coupling_kernel(kernel: &CouplingKernel, x: f64, x2: f64) -> f64 {
    kernel.eval(x, x2)
}

/// `σ` for the sharp-cutoff kernel, from the exponents of the free
/// coordinates of `support`; `insertion` is indexed by all coordinates.
pub fn sharp_cutoff_sigma(model: &ModelFamily, support: &Submanifold, insertion: &[u32]) -> Result<f64> {
    let free = support.free_coords();
    if free.is_empty() {
        return Err(Error::InvalidInput("sharp cutoff needs a support of positive dimension".into()));
    }
    if insertion.len() != model.dim() {
        return Err(Error::InvalidInput("insertion index must cover every coordinate".into()));
    }
    let k: Vec<u32> = free.iter().map(|&i| model.k()[i]).collect();
    let h: Vec<u32> = free.iter().map(|&i| model.h()[i]).collect();
    let j: Vec<u32> = free.iter().map(|&i| insertion[i]).collect();
    Ok(ratio_f64(&sigma(&k, &h, &j)?))
}

/// `sup_{w∈S} |g̃(x, w)| · sup_{w∈W} |f(x', w)|` over a uniform grid.
pub fn domination_bound(term: &ObservableTerm, model: &ModelFamily, x: f64, x2: f64, per_dim: usize) -> f64 {
    let g = term.lift.at_x(x);
    let f = model.log_ratio_lift().at_x(x2);
    grid_sup(model, &term.support, &g, per_dim) * grid_sup(model, &Submanifold::full(model.dim()), &f, per_dim)
}

fn grid_sup(model: &ModelFamily, support: &Submanifold, p: &Poly, per_dim: usize) -> f64 {
    let dom = model.domain();
    let free = support.free_coords();
    let mut w = vec![0.0; model.dim()];
    for (i, v) in support.fixed() {
        w[i] = v;
    }
    let per_dim = per_dim.max(2);
    let mut best: f64 = 0.0;
    for idx in 0..per_dim.pow(free.len() as u32) {
        let mut rem = idx;
        for &j in &free {
            let t = (rem % per_dim) as f64 / (per_dim - 1) as f64;
            rem /= per_dim;
            w[j] = dom.lo()[j] + t * (dom.hi()[j] - dom.lo()[j]);
        }
        best = best.max(p.eval(&w).abs());
    }
    best
}

/// Observable `g δ_S` with a lift.
pub fn functional_observable(lift: Lift, support: Submanifold) -> Result<Observable> {
    Observable::single(ObservableTerm::functional(lift, support))
}
