//! Small statistics helpers: batch means, medians, replicate summaries, seeds.

use crate::quad::compensated_sum;

/// Number of batches used for autocorrelation-adjusted standard errors.
pub const N_BATCHES: usize = 20;

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    compensated_sum(xs.iter().copied()) / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    compensated_sum(xs.iter().map(|x| (x - m) * (x - m))) / (xs.len() - 1) as f64
}

/// Standard error of the mean of `xs` by non-overlapping batch means.
///
/// Short sequences fall back to the i.i.d. formula.
pub fn batch_means_se(xs: &[f64], n_batches: usize) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let b = n / n_batches.max(2);
    if b < 2 {
        return (variance(xs) / n as f64).sqrt();
    }
    let nb = n / b;
    let means: Vec<f64> = xs.chunks_exact(b).take(nb).map(mean).collect();
    (variance(&means) / nb as f64).sqrt()
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Mean and standard error across independent replicates.
pub fn replicate_summary(xs: &[f64]) -> (f64, f64) {
    (mean(xs), (variance(xs) / xs.len().max(1) as f64).sqrt())
}

/// Derive a child seed from a master seed and a path of indices.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    let mut s = master;
    for &p in path {
        s = splitmix(s ^ splitmix(p.wrapping_add(0x9E37_79B9_7F4A_7C15)));
    }
    s
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// 64-bit FNV-1a, used to key RNG streams by labels.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Ordinary least squares `y ≈ a + b x`; returns `(a, b, r²)`.
pub fn ols(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let mx = mean(x);
    let my = mean(y);
    let sxx = compensated_sum(x.iter().map(|v| (v - mx) * (v - mx)));
    let sxy = compensated_sum(x.iter().zip(y).map(|(u, v)| (u - mx) * (v - my)));
    let syy = compensated_sum(y.iter().map(|v| (v - my) * (v - my)));
    let b = sxy / sxx;
    let a = my - b * mx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (a, b, r2)
}
