//! One-dimensional quadrature building blocks and deterministic summation.

use std::collections::HashMap;
use std::num::NonZeroUsize;
use std::sync::{Arc, Mutex, OnceLock};

use gauss_quad::GaussLegendre;

/// Gauss–Legendre nodes and weights on `[-1, 1]`, cached per order.
pub fn gl_rule(n: usize) -> Arc<Vec<(f64, f64)>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Vec<(f64, f64)>>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("quadrature cache poisoned");
    guard
        .entry(n)
        .or_insert_with(|| {
            let rule = GaussLegendre::new(NonZeroUsize::new(n.max(1)).unwrap());
            Arc::new(rule.as_node_weight_pairs().to_vec())
        })
        .clone()
}

/// Gauss–Legendre nodes mapped to each consecutive pair of `breaks`.
pub fn panel_nodes(breaks: &[f64], n: usize) -> Vec<(f64, f64)> {
    let rule = gl_rule(n);
    let mut out = Vec::with_capacity(n * breaks.len().saturating_sub(1));
    for p in breaks.windows(2) {
        let (a, b) = (p[0], p[1]);
        if b <= a {
            continue;
        }
        let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
        for &(x, w) in rule.iter() {
            out.push((mid + half * x, half * w));
        }
    }
    out
}

/// Gauss–Legendre nodes spread over the panels of `breaks`, about `budget` in
/// total and never fewer than `min_per_panel` on any panel.
pub fn budget_nodes(breaks: &[f64], budget: usize, min_per_panel: usize) -> Vec<(f64, f64)> {
    let panels = breaks.windows(2).filter(|p| p[1] > p[0]).count().max(1);
    panel_nodes(breaks, budget.div_ceil(panels).max(min_per_panel))
}

/// Panel boundaries on `[lo, hi]` whose widths double away from `anchor`.
///
/// The smallest panel has width `min(scale, hi - lo) / 2^depth`.
pub fn geometric_breaks(lo: f64, hi: f64, anchor: f64, scale: f64, depth: u32, extra: &[f64]) -> Vec<f64> {
    let anchor = anchor.clamp(lo, hi);
    let span = hi - lo;
    let a0 = scale.min(span).max(f64::MIN_POSITIVE) / 2f64.powi(depth as i32);
    let mut breaks = vec![lo, hi, anchor];
    let mut step = a0;
    while anchor + step < hi {
        breaks.push(anchor + step);
        step *= 2.0;
    }
    let mut step = a0;
    while anchor - step > lo {
        breaks.push(anchor - step);
        step *= 2.0;
    }
    breaks.extend(extra.iter().copied().filter(|x| *x > lo && *x < hi));
    breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    breaks.dedup_by(|a, b| (*a - *b).abs() <= 1e-15 * (1.0 + b.abs()));
    breaks
}

/// Neumaier-compensated sum.
pub fn compensated_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for x in xs {
        let t = s + x;
        if s.abs() >= x.abs() {
            c += (s - t) + x;
        } else {
            c += (x - t) + s;
        }
        s = t;
    }
    s + c
}

/// Pairwise reduction in a fixed tree order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        n if n <= 8 => compensated_sum(xs.iter().copied()),
        n => {
            let (a, b) = xs.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}
