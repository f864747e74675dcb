//! Functional and differential observables and their restricted covariances.
//!
//! A term `∂^α ∂^β (g δ_S)` pairs with a test function `Φ` as
//! `(−1)^{|α|+|β|} ∫_S g ∂^{α+β} Φ dv`, where `α` is tangential to the slice
//! `S` and `β` is normal to it. Tangential orders are removed by integration
//! by parts ([`reduce_tangential`]); normal derivatives acting on
//! `e^{−nβG} φ` are expanded by the product rule ([`leibniz_expand`]).

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex, OnceLock};

use crate::backend::PosteriorBackend;
use crate::error::{Error, Result};
use crate::loss::{Dataset, Lift};
use crate::model_zoo::{BoxDomain, ModelFamily};
use crate::poly::Poly;
use crate::posterior::Submanifold;
use crate::quad::{gl_rule, pairwise_sum};

/// Largest normal order accepted by [`leibniz_expand`].
pub const LEIBNIZ_CAP: u32 = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct ObservableTerm {
    pub lift: Lift,
    pub support: Submanifold,
    /// Normal derivative orders; nonzero only on fixed coordinates.
    pub beta: Vec<u32>,
    /// Tangential derivative orders; nonzero only on free coordinates.
    pub tangential: Vec<u32>,
}

impl ObservableTerm {
    pub fn functional(lift: Lift, support: Submanifold) -> Self {
        let d = support.dim();
        ObservableTerm {
            lift,
            support,
            beta: vec![0; d],
            tangential: vec![0; d],
        }
    }

    pub fn with_normal(mut self, beta: Vec<u32>) -> Self {
        self.beta = beta;
        self
    }

    pub fn with_tangential(mut self, alpha: Vec<u32>) -> Self {
        self.tangential = alpha;
        self
    }

    pub fn order(&self) -> u32 {
        self.beta.iter().sum::<u32>() + self.tangential.iter().sum::<u32>()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.support.dim();
        if self.beta.len() != d || self.tangential.len() != d || self.lift.dim() != d {
            return Err(Error::InvalidInput(format!(
                "observable term mixes dimensions: support {d}, beta {}, tangential {}, lift {}",
                self.beta.len(),
                self.tangential.len(),
                self.lift.dim()
            )));
        }
        for i in 0..d {
            let fixed = self.support.fixed_value(i).is_some();
            if self.beta[i] > 0 && !fixed {
                return Err(Error::InvalidInput(format!(
                    "normal derivative along w{} which is free on the support",
                    i + 1
                )));
            }
            if self.tangential[i] > 0 && fixed {
                return Err(Error::InvalidInput(format!(
                    "tangential derivative along w{} which is fixed on the support",
                    i + 1
                )));
            }
        }
        Ok(())
    }
}

/// `Σ_i P_i δ_{S_i}` as a list of terms.
#[derive(Debug, Clone, PartialEq)]
pub struct Observable {
    terms: Vec<ObservableTerm>,
}

impl Observable {
    pub fn new(terms: Vec<ObservableTerm>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::InvalidInput("an observable needs at least one term".into()));
        }
        for t in &terms {
            t.validate()?;
        }
        Ok(Observable { terms })
    }

    pub fn single(term: ObservableTerm) -> Result<Self> {
        Self::new(vec![term])
    }

    /// `g δ_W` for a deterministic polynomial `g`.
    pub fn on_w(g: Poly) -> Self {
        let d = g.dim();
        Observable {
            terms: vec![ObservableTerm::functional(Lift::deterministic(g), Submanifold::full(d))],
        }
    }

    pub fn terms(&self) -> &[ObservableTerm] {
        &self.terms
    }

    /// The global order `M`.
    pub fn order(&self) -> u32 {
        self.terms.iter().map(ObservableTerm::order).max().unwrap_or(0)
    }

    pub fn is_functional(&self) -> bool {
        self.order() == 0
    }
}

/// The component observable `(f(·, w) − f(·, w*)) δ_W`.
pub fn component_observable(model: &ModelFamily, center: &[f64]) -> Observable {
    let f = model.log_ratio_lift();
    let at_center = Lift::new(
        f.coeffs()
            .iter()
            .map(|c| Poly::constant(model.dim(), c.eval(center)))
            .collect(),
    );
    Observable {
        terms: vec![ObservableTerm::functional(f.sub(&at_center), Submanifold::full(model.dim()))],
    }
}

/// Replace every lift by its dataset average.
pub fn empirical_observable(obs: &Observable, data: &Dataset) -> Observable {
    Observable {
        terms: obs
            .terms
            .iter()
            .map(|t| ObservableTerm {
                lift: if t.lift.is_deterministic() {
                    t.lift.clone()
                } else {
                    Lift::deterministic(t.lift.empirical_mean(data))
                },
                ..t.clone()
            })
            .collect(),
    }
}

/// Integrate tangential derivatives by parts until none remain.
///
/// One step `α = α' + e_j` yields the bulk term `(∂_j g) δ_S`, a term `+g δ_F`
/// on the lower face and `−g δ_F` on the upper face of `S` in direction `j`.
/// Remaining derivatives along `j` become normal derivatives on the faces.
pub fn reduce_tangential(term: &ObservableTerm, domain: &BoxDomain) -> Result<Vec<ObservableTerm>> {
    term.validate()?;
    let Some(j) = term.tangential.iter().position(|&a| a > 0) else {
        return Ok(vec![term.clone()]);
    };
    let mut rest = term.tangential.clone();
    rest[j] -= 1;
    let mut out = Vec::new();

    let bulk_lift = term.lift.derivative(&unit(term.beta.len(), j));
    if !bulk_lift.coeffs().iter().all(Poly::is_zero) {
        let bulk = ObservableTerm {
            lift: bulk_lift,
            support: term.support.clone(),
            beta: term.beta.clone(),
            tangential: rest.clone(),
        };
        out.extend(reduce_tangential(&bulk, domain)?);
    }
    for (bound, sign) in [(domain.lo()[j], 1.0), (domain.hi()[j], -1.0)] {
        let mut beta = term.beta.clone();
        let mut tang = rest.clone();
        beta[j] += tang[j];
        tang[j] = 0;
        let face = ObservableTerm {
            lift: term.lift.scale(sign),
            support: term.support.clone().with_fixed(j, bound)?,
            beta,
            tangential: tang,
        };
        out.extend(reduce_tangential(&face, domain)?);
    }
    Ok(out)
}

fn unit(d: usize, j: usize) -> Vec<u32> {
    let mut e = vec![0; d];
    e[j] = 1;
    e
}

/// `(−1)^{|α|+|β|} ∫_S g ∂^{α+β} Φ dv` for the population coefficient `g`
/// and a polynomial test function, by Gauss–Legendre on the free coordinates.
pub fn distributional_pairing(term: &ObservableTerm, phi: &Poly, domain: &BoxDomain) -> f64 {
    let order: Vec<u32> = term.beta.iter().zip(&term.tangential).map(|(a, b)| a + b).collect();
    let sign = if order.iter().sum::<u32>() % 2 == 0 { 1.0 } else { -1.0 };
    let integrand = &term.lift.population_mean() * &phi.derivative(&order);
    let integrand = term.support.restrict(&integrand);
    let free = term.support.free_coords();
    let n = (integrand.total_degree() as usize / 2 + 2).max(2);
    let rule = gl_rule(n);
    let mut w = vec![0.0; domain.dim()];
    for (i, v) in term.support.fixed() {
        w[i] = v;
    }
    let total = n.pow(free.len() as u32);
    let mut acc = Vec::with_capacity(total);
    for idx in 0..total {
        let mut rem = idx;
        let mut q = 1.0;
        for &j in &free {
            let (x, qw) = rule[rem % n];
            rem /= n;
            let (a, b) = (domain.lo()[j], domain.hi()[j]);
            w[j] = 0.5 * (a + b) + 0.5 * (b - a) * x;
            q *= 0.5 * (b - a) * qw;
        }
        acc.push(q * integrand.eval(&w));
    }
    sign * pairwise_sum(&acc)
}

/// A factor in a Leibniz monomial: a normal derivative of `G` or of `log φ`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Atom {
    Loss(Vec<u32>),
    LogPrior(Vec<u32>),
}

impl Atom {
    fn differentiate(&self, i: usize) -> Atom {
        let bump = |g: &Vec<u32>| {
            let mut g = g.clone();
            g[i] += 1;
            g
        };
        match self {
            Atom::Loss(g) => Atom::Loss(bump(g)),
            Atom::LogPrior(g) => Atom::LogPrior(bump(g)),
        }
    }
}

/// Monomials with `r` factors of `G`, carrying the prefactor `(−nβ)^r`.
#[derive(Debug, Clone, PartialEq)]
pub struct LeibnizGroup {
    pub r: u32,
    pub monomials: Vec<(i64, Vec<Atom>)>,
}

/// `∂^β e^h / e^h = Σ_j (−nβ)^{r_j} Q_j` with `h = −nβG + log φ`.
#[derive(Debug, Clone, PartialEq)]
pub struct LeibnizExpansion {
    pub beta: Vec<u32>,
    pub groups: Vec<LeibnizGroup>,
}

type MonoMap = BTreeMap<(u32, Vec<Atom>), i64>;

fn expand(beta: &[u32]) -> MonoMap {
    let Some(i) = beta.iter().position(|&b| b > 0) else {
        let mut m = MonoMap::new();
        m.insert((0, vec![]), 1);
        return m;
    };
    let mut prev = beta.to_vec();
    prev[i] -= 1;
    let e = unit(beta.len(), i);
    let mut out = MonoMap::new();
    let push = |r: u32, mut atoms: Vec<Atom>, c: i64, out: &mut MonoMap| {
        atoms.sort();
        *out.entry((r, atoms)).or_insert(0) += c;
    };
    for ((r, atoms), c) in expand(&prev) {
        let mut a = atoms.clone();
        a.push(Atom::Loss(e.clone()));
        push(r + 1, a, c, &mut out);
        let mut a = atoms.clone();
        a.push(Atom::LogPrior(e.clone()));
        push(r, a, c, &mut out);
        for k in 0..atoms.len() {
            let mut a = atoms.clone();
            a[k] = atoms[k].differentiate(i);
            push(r, a, c, &mut out);
        }
    }
    out.retain(|_, c| *c != 0);
    out
}

pub fn leibniz_expand(beta: &[u32]) -> Result<Arc<LeibnizExpansion>> {
    let order: u32 = beta.iter().sum();
    if order > LEIBNIZ_CAP {
        return Err(Error::OrderCap {
            requested: order,
            cap: LEIBNIZ_CAP,
        });
    }
    static CACHE: OnceLock<Mutex<HashMap<Vec<u32>, Arc<LeibnizExpansion>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(e) = cache.lock().expect("leibniz cache poisoned").get(beta) {
        return Ok(e.clone());
    }
    let mut by_r: BTreeMap<u32, Vec<(i64, Vec<Atom>)>> = BTreeMap::new();
    for ((r, atoms), c) in expand(beta) {
        by_r.entry(r).or_default().push((c, atoms));
    }
    let exp = Arc::new(LeibnizExpansion {
        beta: beta.to_vec(),
        groups: by_r
            .into_iter()
            .rev()
            .map(|(r, monomials)| LeibnizGroup { r, monomials })
            .collect(),
    });
    cache
        .lock()
        .expect("leibniz cache poisoned")
        .insert(beta.to_vec(), exp.clone());
    Ok(exp)
}

impl LeibnizExpansion {
    /// The coefficients `Q_r` restricted to `support`, as polynomials in the
    /// free coordinates.
    pub fn coefficients(&self, model: &ModelFamily, potential: &Poly, support: &Submanifold) -> Result<Vec<(u32, Poly)>> {
        let d = model.dim();
        let mut base = vec![0.0; d];
        for (i, v) in support.fixed() {
            base[i] = v;
        }
        let atom_poly = |a: &Atom| -> Result<Poly> {
            match a {
                Atom::Loss(g) => Ok(support.restrict(&potential.derivative(g))),
                Atom::LogPrior(g) => {
                    let nz: Vec<usize> = (0..d).filter(|&i| g[i] > 0).collect();
                    if nz.len() != 1 || model.h()[nz[0]] == 0 {
                        return Ok(Poly::zero(d));
                    }
                    let i = nz[0];
                    match support.fixed_value(i) {
                        Some(u) if u != 0.0 => Ok(Poly::constant(d, model.log_prior_derivative(i, g[i], &base))),
                        Some(_) => Err(Error::InvalidInput(format!(
                            "prior vanishes on the support (h{} > 0 at w{} = 0)",
                            i + 1,
                            i + 1
                        ))),
                        None => Err(Error::InvalidInput(format!(
                            "normal derivative along free coordinate w{}",
                            i + 1
                        ))),
                    }
                }
            }
        };
        let mut out = Vec::with_capacity(self.groups.len());
        for grp in &self.groups {
            let mut q = Poly::zero(d);
            for (c, atoms) in &grp.monomials {
                let mut m = Poly::constant(d, *c as f64);
                for a in atoms {
                    m = &m * &atom_poly(a)?;
                }
                q = &q + &m;
            }
            out.push((grp.r, q));
        }
        Ok(out)
    }

    /// `Σ_j (−nβ)^{r_j} Q_j(w)` at a point, with derivatives of `log φ`
    /// taken at `w` itself.
    pub fn evaluate(&self, model: &ModelFamily, potential: &Poly, nbeta: f64, w: &[f64]) -> f64 {
        let d = model.dim();
        let atom = |a: &Atom| -> f64 {
            match a {
                Atom::Loss(g) => potential.derivative(g).eval(w),
                Atom::LogPrior(g) => {
                    let nz: Vec<usize> = (0..d).filter(|&i| g[i] > 0).collect();
                    if nz.len() != 1 {
                        0.0
                    } else {
                        model.log_prior_derivative(nz[0], g[nz[0]], w)
                    }
                }
            }
        };
        self.groups
            .iter()
            .map(|grp| {
                let q: f64 = grp
                    .monomials
                    .iter()
                    .map(|(c, atoms)| *c as f64 * atoms.iter().map(atom).product::<f64>())
                    .sum();
                (-nbeta).powi(grp.r as i32) * q
            })
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovOptions {
    /// Keep only Leibniz groups with `r = M`.
    pub practice: bool,
    /// Relative tolerance between `E[AB] − E[A]E[B]` and `E[(A − EA)(B − EB)]`.
    pub cancellation_tol: f64,
}

impl Default for CovOptions {
    fn default() -> Self {
        CovOptions {
            practice: false,
            cancellation_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupCovariance {
    pub r: u32,
    pub value: f64,
}

/// Contribution of one reduced term, prefactors included.
#[derive(Debug, Clone, PartialEq)]
pub struct TermCovariance {
    pub source_term: usize,
    pub support: Submanifold,
    pub beta: Vec<u32>,
    pub value: f64,
    pub groups: Vec<GroupCovariance>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceResult {
    pub value: f64,
    pub mc_std_err: Option<f64>,
    pub terms: Vec<TermCovariance>,
}

struct Item {
    reduced: usize,
    r: u32,
    pref: f64,
    c: Poly,
}

/// Reduced terms of `obs` with their Leibniz items; `(term index, term)`.
fn prepare(
    obs: &Observable,
    backend: &dyn PosteriorBackend,
    opts: &CovOptions,
) -> Result<(Vec<(usize, ObservableTerm)>, Vec<Item>)> {
    let model = backend.model();
    let m = obs.order();
    let nb = backend.nbeta();
    if m > 0 && !(nb > 0.0) {
        return Err(Error::InvalidInput("differential observables need nβ > 0".into()));
    }
    let mut reduced = Vec::new();
    for (ti, t) in obs.terms().iter().enumerate() {
        for r in reduce_tangential(t, model.domain())? {
            reduced.push((ti, r));
        }
    }
    let mut items = Vec::new();
    for (ri, (_, t)) in reduced.iter().enumerate() {
        let g = t.support.restrict(&t.lift.population_mean());
        let exp = leibniz_expand(&t.beta)?;
        let order: u32 = t.beta.iter().sum();
        let sign = if order % 2 == 0 { 1.0 } else { -1.0 };
        for (r, q) in exp.coefficients(model, backend.potential(), &t.support)? {
            if opts.practice && r != m {
                continue;
            }
            let rs = if r % 2 == 0 { 1.0 } else { -1.0 };
            let pref = sign * rs * nb.powi(r as i32 - m as i32);
            let c = &g * &q;
            if !c.is_zero() {
                items.push(Item { reduced: ri, r, pref, c });
            }
        }
    }
    Ok((reduced, items))
}

/// `Σ (−1)^{|β|} (−nβ)^{r} (nβ)^{−M} [E_S(g Q_r ΔK) − E_S(g Q_r) E_W(ΔK)]`
/// over reduced terms and Leibniz groups.
pub fn restricted_covariance(
    obs: &Observable,
    delta: &Poly,
    backend: &dyn PosteriorBackend,
    opts: &CovOptions,
) -> Result<CovarianceResult> {
    let (reduced, items) = prepare(obs, backend, opts)?;
    let full = Submanifold::full(backend.model().dim());

    let mut chains: BTreeMap<(Submanifold, usize), Vec<usize>> = BTreeMap::new();
    for (k, it) in items.iter().enumerate() {
        let (ti, t) = &reduced[it.reduced];
        chains.entry((t.support.clone(), ti + 1)).or_default().push(k);
    }
    let mut keys: Vec<(Submanifold, usize)> = vec![(full.clone(), 0)];
    keys.extend(chains.keys().cloned());
    backend.prefetch(&keys)?;

    let wd = backend.draws(&full, 0)?;
    let mu = wd.mean(|w| delta.eval(w));

    let mut item_vals = vec![0.0; items.len()];
    let mut item_b = vec![0.0; items.len()];
    let mut var_sum = 0.0;
    for ((support, slot), ks) in &chains {
        let d = backend.draws(support, *slot)?;
        let moments = d.mean_vec(4 * ks.len(), |w, out| {
            let dv = delta.eval(w);
            for (s, &k) in ks.iter().enumerate() {
                let c = items[k].c.eval(w);
                out[4 * s] = c * dv;
                out[4 * s + 1] = c;
                out[4 * s + 2] = c * (dv - mu);
                out[4 * s + 3] = (c * dv).abs() + (c * mu).abs();
            }
        });
        for (s, &k) in ks.iter().enumerate() {
            let (a, b, centered, scale) = (moments[4 * s], moments[4 * s + 1], moments[4 * s + 2], moments[4 * s + 3]);
            let naive = a - b * mu;
            if (naive - centered).abs() > opts.cancellation_tol * scale + f64::MIN_POSITIVE {
                return Err(Error::Cancellation { naive, centered });
            }
            item_vals[k] = items[k].pref * naive;
            item_b[k] = b;
        }
        if !d.is_exact() {
            let se = d.std_err(|w| {
                let dv = delta.eval(w) - mu;
                ks.iter().map(|&k| items[k].pref * items[k].c.eval(w) * dv).sum()
            });
            var_sum += se * se;
        }
    }
    let mc_std_err = if backend.is_exact() {
        None
    } else {
        let slope: f64 = items.iter().zip(&item_b).map(|(it, b)| it.pref * b).sum();
        let se_w = wd.std_err(|w| slope * delta.eval(w));
        Some((var_sum + se_w * se_w).sqrt())
    };

    let mut terms: Vec<TermCovariance> = reduced
        .iter()
        .map(|(ti, t)| TermCovariance {
            source_term: *ti,
            support: t.support.clone(),
            beta: t.beta.clone(),
            value: 0.0,
            groups: Vec::new(),
        })
        .collect();
    for (it, v) in items.iter().zip(&item_vals) {
        let tc = &mut terms[it.reduced];
        tc.value += v;
        match tc.groups.iter_mut().find(|g| g.r == it.r) {
            Some(g) => g.value += v,
            None => tc.groups.push(GroupCovariance { r: it.r, value: *v }),
        }
    }
    let value = pairwise_sum(&item_vals);
    Ok(CovarianceResult {
        value,
        mc_std_err,
        terms,
    })
}

/// `⟨∂^β(g δ_S), e^{−nβG} φ⟩` for a term without tangential derivatives,
/// via the Leibniz expansion.
pub fn normal_pairing(term: &ObservableTerm, backend: &dyn PosteriorBackend) -> Result<f64> {
    term.validate()?;
    if term.tangential.iter().any(|&a| a > 0) {
        return Err(Error::InvalidInput("reduce tangential derivatives first".into()));
    }
    let model = backend.model();
    let g = term.support.restrict(&term.lift.population_mean());
    let exp = leibniz_expand(&term.beta)?;
    let nb = backend.nbeta();
    let mut q = Poly::zero(model.dim());
    for (r, qr) in exp.coefficients(model, backend.potential(), &term.support)? {
        q = &q + &qr.scale((-nb).powi(r as i32));
    }
    let c = &g * &q;
    let d = backend.draws(&term.support, 0)?;
    let order: u32 = term.beta.iter().sum();
    let sign = if order % 2 == 0 { 1.0 } else { -1.0 };
    Ok(sign * backend.log_partition(&term.support)?.exp() * d.mean(|w| c.eval(w)))
}
