//! Reference computations shared by the integration tests. Nothing here calls
//! the library's quadrature, Leibniz or covariance code.

#![allow(dead_code)]

use std::num::NonZeroUsize;

use gauss_quad::{GaussHermite, GaussLegendre};

/// Closed-form description of a monomial Gaussian location model.
#[derive(Debug, Clone)]
pub struct RefModel {
    pub k: Vec<u32>,
    pub h: Vec<u32>,
    pub c_k: f64,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl RefModel {
    pub fn unit(k: &[u32], h: &[u32], c_k: f64) -> Self {
        RefModel {
            k: k.to_vec(),
            h: h.to_vec(),
            c_k,
            lo: vec![0.0; k.len()],
            hi: vec![1.0; k.len()],
        }
    }

    pub fn dim(&self) -> usize {
        self.k.len()
    }

    pub fn mean(&self, w: &[f64]) -> f64 {
        let mono: f64 = w.iter().zip(&self.k).map(|(x, &k)| x.powi(k as i32)).product();
        (2.0 * self.c_k).sqrt() * mono
    }

    /// `log q(x) − log p(x|w)` for `q = N(0,1)`, `p = N(mean(w), 1)`.
    pub fn f(&self, x: f64, w: &[f64]) -> f64 {
        let m = self.mean(w);
        0.5 * m * m - x * m
    }

    pub fn loss(&self, w: &[f64]) -> f64 {
        w.iter().zip(&self.k).map(|(x, &k)| x.powi(2 * k as i32)).product::<f64>() * self.c_k
    }

    /// Unnormalized prior `Π |w_i|^{h_i}`.
    pub fn prior(&self, w: &[f64]) -> f64 {
        w.iter().zip(&self.h).map(|(x, &h)| x.abs().powi(h as i32)).product()
    }
}

/// `E_q[f]` for `q = N(0,1)` by 64-point Gauss–Hermite, symmetrized over
/// `±x` so odd parts cancel pairwise.
pub fn gh_expect<F: Fn(f64) -> f64>(f: F) -> f64 {
    let rule = GaussHermite::new(NonZeroUsize::new(64).unwrap());
    let s: f64 = rule
        .as_node_weight_pairs()
        .iter()
        .map(|&(x, w)| {
            let y = std::f64::consts::SQRT_2 * x;
            0.5 * w * (f(y) + f(-y))
        })
        .sum();
    s / std::f64::consts::PI.sqrt()
}

/// Probabilists' Hermite polynomial by the three-term recurrence.
pub fn he(m: u32, x: f64) -> f64 {
    let (mut a, mut b) = (1.0, x);
    if m == 0 {
        return a;
    }
    for j in 1..m {
        let c = x * b - j as f64 * a;
        a = b;
        b = c;
    }
    b
}

/// `ΔK(w) = E_q[ξ f(·, w)]` for `ξ = He_m`.
pub fn delta_k(model: &RefModel, m: u32, w: &[f64]) -> f64 {
    gh_expect(|x| he(m, x) * model.f(x, w))
}

fn gl(n: usize) -> Vec<(f64, f64)> {
    GaussLegendre::new(NonZeroUsize::new(n).unwrap()).as_node_weight_pairs().to_vec()
}

/// Signed and absolute integrals of each component on `[a, b]`.
fn rule_on<F: Fn(f64) -> Vec<f64>>(rule: &[(f64, f64)], f: &F, a: f64, b: f64, len: usize) -> (Vec<f64>, Vec<f64>) {
    let (c, r) = (0.5 * (a + b), 0.5 * (b - a));
    let mut out = vec![0.0; len];
    let mut abs = vec![0.0; len];
    for &(x, w) in rule {
        let v = f(c + r * x);
        for ((o, s), vi) in out.iter_mut().zip(abs.iter_mut()).zip(v) {
            *o += r * w * vi;
            *s += r * w * vi.abs();
        }
    }
    (out, abs)
}

#[allow(clippy::too_many_arguments)]
fn adapt<F: Fn(f64) -> Vec<f64>>(
    f: &F,
    a: f64,
    b: f64,
    len: usize,
    coarse: &[(f64, f64)],
    fine: &[(f64, f64)],
    rel: f64,
    depth: u32,
) -> Vec<f64> {
    let (i1, _) = rule_on(coarse, f, a, b, len);
    let (i2, abs) = rule_on(fine, f, a, b, len);
    let ok = i1
        .iter()
        .zip(&i2)
        .zip(&abs)
        .all(|((x, y), s)| (x - y).abs() <= rel.max(64.0 * f64::EPSILON) * s + 1e-300);
    if ok || depth == 0 {
        return i2;
    }
    let m = 0.5 * (a + b);
    let mut l = adapt(f, a, m, len, coarse, fine, rel, depth - 1);
    let r = adapt(f, m, b, len, coarse, fine, rel, depth - 1);
    for (x, y) in l.iter_mut().zip(r) {
        *x += y;
    }
    l
}

/// Breakpoints accumulating geometrically at 0, when 0 lies in `[lo, hi]`.
fn breaks(lo: f64, hi: f64) -> Vec<f64> {
    let mut pts = vec![lo, hi];
    if lo <= 0.0 && hi >= 0.0 {
        pts.push(0.0);
        for j in 1..45 {
            let s = 0.5f64.powi(j);
            pts.push(lo * s);
            pts.push(hi * s);
        }
    }
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    pts
}

/// Adaptive Gauss–Legendre (15 vs 31 points) of a vector-valued integrand.
pub fn integrate_1d<F: Fn(f64) -> Vec<f64>>(f: &F, lo: f64, hi: f64, len: usize, rel: f64) -> Vec<f64> {
    let coarse = gl(15);
    let fine = gl(31);
    let bs = breaks(lo, hi);
    let mut out = vec![0.0; len];
    for w in bs.windows(2) {
        let v = adapt(f, w[0], w[1], len, &coarse, &fine, rel, 40);
        for (o, x) in out.iter_mut().zip(v) {
            *o += x;
        }
    }
    out
}

/// `∫_box F(w) dw` in one, two or three dimensions by iterated adaptive
/// quadrature; `fixed[i] = Some(v)` freezes coordinate `i`.
pub fn integrate_box<F>(lo: &[f64], hi: &[f64], fixed: &[Option<f64>], f: &F, len: usize, rel: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    #[allow(clippy::too_many_arguments)]
    fn rec<F: Fn(&[f64]) -> Vec<f64>>(
        i: usize,
        w: &mut Vec<f64>,
        lo: &[f64],
        hi: &[f64],
        fixed: &[Option<f64>],
        f: &F,
        len: usize,
        rel: f64,
    ) -> Vec<f64> {
        if i == w.len() {
            return f(w);
        }
        if let Some(v) = fixed[i] {
            w[i] = v;
            return rec(i + 1, w, lo, hi, fixed, f, len, rel);
        }
        let base = w.clone();
        integrate_1d(
            &|t| {
                let mut ww = base.clone();
                ww[i] = t;
                rec(i + 1, &mut ww, lo, hi, fixed, f, len, rel)
            },
            lo[i],
            hi[i],
            len,
            rel,
        )
    }
    let mut w = vec![0.0; lo.len()];
    rec(0, &mut w, lo, hi, fixed, f, len, rel)
}

/// Posterior expectations of `gs` under `e^{−nβ V} φ` on the slice `fixed`.
pub fn posterior_expect<V>(
    model: &RefModel,
    fixed: &[Option<f64>],
    nbeta: f64,
    potential: V,
    gs: &[&dyn Fn(&[f64]) -> f64],
) -> Vec<f64>
where
    V: Fn(&[f64]) -> f64,
{
    let len = gs.len() + 1;
    let f = |w: &[f64]| {
        let d = (-nbeta * potential(w)).exp() * model.prior_free(w, fixed);
        let mut out = Vec::with_capacity(len);
        out.push(d);
        out.extend(gs.iter().map(|g| d * g(w)));
        out
    };
    let v = integrate_box(&model.lo, &model.hi, fixed, &f, len, 1e-13);
    v[1..].iter().map(|x| x / v[0]).collect()
}

impl RefModel {
    /// Prior factors over the free coordinates only.
    pub fn prior_free(&self, w: &[f64], fixed: &[Option<f64>]) -> f64 {
        w.iter()
            .zip(&self.h)
            .zip(fixed)
            .filter(|(_, fx)| fx.is_none())
            .map(|((x, &h), _)| x.abs().powi(h as i32))
            .product()
    }

    pub fn free_all(&self) -> Vec<Option<f64>> {
        vec![None; self.dim()]
    }
}

/// `(1/nβ) d/dh E_{K + hΔ}[g]` at `h = 0` by a central difference.
pub fn tilted_fd<D, G>(model: &RefModel, fixed: &[Option<f64>], nbeta: f64, delta: D, g: G, h: f64) -> f64
where
    D: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> f64,
{
    let e = |t: f64| posterior_expect(model, fixed, nbeta, |w| model.loss(w) + t * delta(w), &[&g])[0];
    (e(h) - e(-h)) / (2.0 * h * nbeta)
}

/// Relative error with a floor for values near zero.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

/// `λ/(σ(σ² + λ))`.
pub fn ridge_error_formula(sigma_min: f64, lambda: f64) -> f64 {
    lambda / (sigma_min * (sigma_min * sigma_min + lambda))
}

/// Central finite-difference weights for the `p`-th derivative on the nodes
/// `−m..=m` (unit spacing), from the Taylor system.
pub fn central_weights(p: usize, m: usize) -> Vec<f64> {
    let n = 2 * m + 1;
    let nodes: Vec<f64> = (0..n).map(|i| i as f64 - m as f64).collect();
    // Solve Σ_j c_j x_j^i / i! = δ_{ip} for i < n.
    let a = nalgebra::DMatrix::from_fn(n, n, |i, j| nodes[j].powi(i as i32));
    let mut b = nalgebra::DVector::zeros(n);
    b[p] = (1..=p).map(|x| x as f64).product::<f64>();
    a.lu().solve(&b).expect("Vandermonde system is regular").iter().copied().collect()
}

/// Mixed partial `∂^β F(u0)` by tensor central stencils of half-width `m`.
pub fn mixed_fd<F: Fn(&[f64]) -> f64>(f: F, u0: &[f64], beta: &[u32], h: f64, m: usize) -> f64 {
    let axes: Vec<(usize, Vec<f64>)> = beta
        .iter()
        .enumerate()
        .filter(|(_, &b)| b > 0)
        .map(|(i, &b)| (i, central_weights(b as usize, m)))
        .collect();
    let width = 2 * m + 1;
    let total = width.pow(axes.len() as u32);
    let mut acc = 0.0;
    for idx in 0..total {
        let mut rem = idx;
        let mut u = u0.to_vec();
        let mut c = 1.0;
        for (i, w) in &axes {
            let j = rem % width;
            rem /= width;
            u[*i] += (j as f64 - m as f64) * h;
            c *= w[j];
        }
        if c != 0.0 {
            acc += c * f(&u);
        }
    }
    let order: u32 = beta.iter().sum();
    acc / h.powi(order as i32)
}

/// `∫_box F` by a fixed tensor Gauss–Legendre rule of `n` points per free
/// axis; exact for polynomials of degree `< 2n` in each variable.
pub fn tensor_gl<F: Fn(&[f64]) -> f64>(lo: &[f64], hi: &[f64], fixed: &[Option<f64>], n: usize, f: F) -> f64 {
    let rule = gl(n);
    let free: Vec<usize> = (0..lo.len()).filter(|&i| fixed[i].is_none()).collect();
    let mut w: Vec<f64> = fixed.iter().map(|v| v.unwrap_or(0.0)).collect();
    let mut acc = 0.0;
    for idx in 0..n.pow(free.len() as u32) {
        let mut rem = idx;
        let mut q = 1.0;
        for &j in &free {
            let (x, qw) = rule[rem % n];
            rem /= n;
            w[j] = 0.5 * (lo[j] + hi[j]) + 0.5 * (hi[j] - lo[j]) * x;
            q *= 0.5 * (hi[j] - lo[j]) * qw;
        }
        acc += q * f(&w);
    }
    acc
}

/// `E_q[x^r]` for `r < len` by Gauss–Hermite.
pub fn gaussian_moments(len: usize) -> Vec<f64> {
    (0..len).map(|r| gh_expect(|x| x.powi(r as i32))).collect()
}

/// `ΔK` for `ξ = He_m` with the two Hermite moments against `1` and `x`
/// computed once; `f` is affine in `x`, so this is exact.
pub fn delta_k_fn(model: &RefModel, m: u32) -> impl Fn(&[f64]) -> f64 + '_ {
    let a0 = gh_expect(|x| he(m, x));
    let a1 = gh_expect(|x| he(m, x) * x);
    move |w: &[f64]| {
        let mu = model.mean(w);
        0.5 * mu * mu * a0 - mu * a1
    }
}

/// Normalizing mass of `Π|w_i|^{h_i}` on the box.
pub fn prior_mass(r: &RefModel) -> f64 {
    (0..r.dim())
        .map(|i| integrate_1d(&|x| vec![x.abs().powi(r.h[i] as i32)], r.lo[i], r.hi[i], 1, 1e-14)[0])
        .product()
}

/// `(−1)^{|β|} ∂^β_u ∫_S g(v, u0) e^{−nβG(v,u)} φ(v,u) dv` by stencils.
pub fn fd_pairing(r: &RefModel, g: &dyn Fn(&[f64]) -> f64, fixed: &[Option<f64>], beta: &[u32], nbeta: f64, pot: &dyn Fn(&[f64]) -> f64) -> f64 {
    let mass = prior_mass(r);
    let u0: Vec<f64> = fixed.iter().map(|f| f.unwrap_or(0.0)).collect();
    let n_of_u = |u: &[f64]| {
        let shifted: Vec<Option<f64>> = fixed.iter().zip(u).map(|(f, &x)| f.map(|_| x)).collect();
        let f = |w: &[f64]| {
            let mut w0 = w.to_vec();
            for (i, fx) in fixed.iter().enumerate() {
                if let Some(v) = fx {
                    w0[i] = *v;
                }
            }
            vec![g(&w0) * (-nbeta * pot(w)).exp() * r.prior(w) / mass]
        };
        integrate_box(&r.lo, &r.hi, &shifted, &f, 1, 1e-14)[0]
    };
    let order: u32 = beta.iter().sum();
    let sign = if order % 2 == 0 { 1.0 } else { -1.0 };
    let h = 0.3 / (nbeta.sqrt() * 4.0);
    sign * mixed_fd(n_of_u, &u0, beta, h, 5)
}
