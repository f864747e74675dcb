//! Moment-scaling exponents, constants and the fluctuation function.

use num_rational::Ratio;
use serde::Serialize;
use statrs::function::gamma::{gamma, gamma_ur};

use crate::error::{Error, Result};
use crate::stats::ols;

/// `E[w^l] ~ C (nβ)^{−τ} (log nβ)^{m_l − m}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingLaw {
    #[serde(serialize_with = "ser_ratio")]
    pub lambda_l: Ratio<u64>,
    pub multiplicity: usize,
    #[serde(serialize_with = "ser_ratio")]
    pub lambda: Ratio<u64>,
    pub multiplicity0: usize,
    #[serde(serialize_with = "ser_ratio")]
    pub tau: Ratio<u64>,
    /// `Γ(λ_l)/Γ(λ)` for unit loss scale; one-dimensional models only.
    pub c_l: Option<f64>,
}

fn ser_ratio<S: serde::Serializer>(r: &Ratio<u64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&r.to_string())
}

pub fn ratio_f64(r: &Ratio<u64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// `λ_l = min_i (l_i + h_i + 1)/(2 k_i)` and the number of minimizers.
pub fn lambda_l(k: &[u32], h: &[u32], l: &[u32]) -> Result<(Ratio<u64>, usize)> {
    if k.is_empty() || k.len() != h.len() || k.len() != l.len() {
        return Err(Error::InvalidInput("k, h and l must have equal, nonzero length".into()));
    }
    if k.contains(&0) {
        return Err(Error::InvalidInput("loss exponents must be positive".into()));
    }
    let vals: Vec<Ratio<u64>> = (0..k.len())
        .map(|i| Ratio::new((l[i] + h[i] + 1) as u64, 2 * k[i] as u64))
        .collect();
    let min = *vals.iter().min().unwrap();
    Ok((min, vals.iter().filter(|v| **v == min).count()))
}

impl ScalingLaw {
    pub fn tau_f64(&self) -> f64 {
        ratio_f64(&self.tau)
    }

    /// Power of `log nβ` in the moment ratio.
    pub fn log_power(&self) -> i64 {
        self.multiplicity as i64 - self.multiplicity0 as i64
    }

    /// Constant for `K = c_K w^{2k}` instead of `w^{2k}`.
    pub fn constant_for_loss_scale(&self, c_k: f64) -> Option<f64> {
        self.c_l.map(|c| c * c_k.powf(-self.tau_f64()))
    }
}

pub fn scaling_law(k: &[u32], h: &[u32], l: &[u32]) -> Result<ScalingLaw> {
    let (lam_l, m_l) = lambda_l(k, h, l)?;
    let (lam, m) = lambda_l(k, h, &vec![0; k.len()])?;
    let c_l = (k.len() == 1).then(|| gamma(ratio_f64(&lam_l)) / gamma(ratio_f64(&lam)));
    Ok(ScalingLaw {
        lambda_l: lam_l,
        multiplicity: m_l,
        lambda: lam,
        multiplicity0: m,
        tau: lam_l - lam,
        c_l,
    })
}

/// `σ = λ_{j+k} − λ` for an insertion `u^j`.
pub fn sigma(k: &[u32], h: &[u32], j: &[u32]) -> Result<Ratio<u64>> {
    let l: Vec<u32> = j.iter().zip(k).map(|(a, b)| a + b).collect();
    Ok(scaling_law(k, h, &l)?.tau)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalingFit {
    pub slope_hat: f64,
    pub c_hat: f64,
    pub r2: f64,
}

/// Least squares of `log m − (m_l − m) log log nβ` on `log nβ`.
pub fn fit_scaling(values: &[(f64, f64)], law: &ScalingLaw) -> Result<ScalingFit> {
    if values.len() < 5 {
        return Err(Error::InvalidInput(format!("need at least 5 points, got {}", values.len())));
    }
    let lo = values.iter().map(|v| v.0).fold(f64::INFINITY, f64::min);
    let hi = values.iter().map(|v| v.0).fold(f64::NEG_INFINITY, f64::max);
    if !(lo > 0.0) || hi / lo < 1e3 * (1.0 - 1e-12) {
        return Err(Error::InvalidInput(format!(
            "nβ values must be positive and span three decades, got [{lo}, {hi}]"
        )));
    }
    let p = law.log_power() as f64;
    if p != 0.0 && lo <= 1.0 {
        return Err(Error::InvalidInput("log corrections need nβ > 1".into()));
    }
    let mut x = Vec::with_capacity(values.len());
    let mut y = Vec::with_capacity(values.len());
    for &(nb, m) in values {
        if !(m > 0.0) {
            return Err(Error::InvalidInput(format!("moment at nβ = {nb} is not positive: {m}")));
        }
        x.push(nb.ln());
        y.push(m.ln() - if p != 0.0 { p * nb.ln().ln() } else { 0.0 });
    }
    let (a, b, r2) = ols(&x, &y);
    Ok(ScalingFit {
        slope_hat: b,
        c_hat: a.exp(),
        r2,
    })
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for i in 0..7 {
        let x = h * XGK[i];
        let s = f(c - x) + f(c + x);
        k += WGK[i] * s;
        if i % 2 == 1 {
            g += WG[i / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Adaptive Gauss–Kronrod (7, 15) on `[a, b]`; returns `(value, error estimate)`.
pub fn adaptive_gk<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> (f64, f64) {
    fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, whole: (f64, f64), depth: u32) -> (f64, f64) {
        if whole.1 <= tol || depth == 0 {
            return whole;
        }
        let m = 0.5 * (a + b);
        let l = gk15(f, a, m);
        let r = gk15(f, m, b);
        let (lv, le) = rec(f, a, m, 0.5 * tol, l, depth - 1);
        let (rv, re) = rec(f, m, b, 0.5 * tol, r, depth - 1);
        (lv + rv, le + re)
    }
    rec(f, a, b, tol, gk15(f, a, b), 40)
}

/// `S_α(a) = ∫_0^∞ t^{α−1} exp(−t + a√(βt)) dt`.
pub fn fluctuation_function(alpha: f64, a: f64, beta: f64) -> Result<f64> {
    if !(alpha > 0.0) || !(beta >= 0.0) {
        return Err(Error::InvalidInput(format!("need α > 0 and β ≥ 0, got α = {alpha}, β = {beta}")));
    }
    let c = a * beta.sqrt();
    // t = s^p with p even and pα ≥ 1 keeps the integrand bounded at 0 and
    // makes √t = s^{p/2} a polynomial.
    let p = 2.0 * (1.0 / (2.0 * alpha)).ceil();
    let half = (p / 2.0) as i32;
    let pa = p * alpha - 1.0;
    let f = |s: f64| {
        if s == 0.0 {
            return if pa == 0.0 { p } else { 0.0 };
        }
        p * (pa * s.ln() - s.powf(p) + c * s.powi(half)).exp()
    };
    // Tail beyond T: −t + c√t ≤ −t/2 once t ≥ 4c², so the tail is at most
    // ∫_T^∞ t^{α−1} e^{−t/2} dt = 2^α Γ(α) Q(α, T/2).
    let mut t_max = (4.0 * c * c).max(60.0 + 4.0 * alpha);
    let tail = |t: f64| 2f64.powf(alpha) * gamma(alpha) * gamma_ur(alpha, 0.5 * t);
    while tail(t_max) > 1e-16 && t_max < 1e6 {
        t_max *= 1.5;
    }
    let tail_est = tail(t_max);
    let s_max = t_max.powf(1.0 / p);
    let (v, err) = adaptive_gk(&f, 0.0, s_max, 1e-14);
    if tail_est > 1e-10 || err > 1e-10 {
        return Err(Error::Nonconvergence(format!(
            "S_α with α = {alpha}, a = {a}, β = {beta}: tail {tail_est:e}, quadrature error {err:e}"
        )));
    }
    Ok(v)
}

/// First-order expansion `Γ(α)(1 + a√β k_α)` with `k_α = Γ(α+½)/Γ(α)`.
pub fn fluctuation_expansion(alpha: f64, a: f64, beta: f64) -> f64 {
    let k = gamma(alpha + 0.5) / gamma(alpha);
    gamma(alpha) * (1.0 + a * beta.sqrt() * k)
}
