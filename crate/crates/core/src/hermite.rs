//! Probabilists' Hermite polynomials and standard normal moments.

/// `E[X^r]` for `X ~ N(0, 1)`: `(r-1)!!` for even `r`, zero for odd `r`.
pub fn gaussian_moment(r: u32) -> f64 {
    if r % 2 == 1 {
        return 0.0;
    }
    let mut m = 1.0;
    let mut j = r as i64 - 1;
    while j > 1 {
        m *= j as f64;
        j -= 2;
    }
    m
}

/// `He_m(x)` by the three-term recurrence `He_{m+1} = x He_m - m He_{m-1}`.
pub fn hermite(m: u32, x: f64) -> f64 {
    let (mut prev, mut cur) = (1.0, x);
    if m == 0 {
        return prev;
    }
    for j in 1..m {
        let next = x * cur - j as f64 * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// Monomial coefficients of `He_m`: `He_m(x) = Σ_r c[r] x^r`.
pub fn hermite_coeffs(m: u32) -> Vec<f64> {
    let m = m as usize;
    let mut prev = vec![1.0];
    if m == 0 {
        return prev;
    }
    let mut cur = vec![0.0, 1.0];
    for j in 1..m {
        let mut next = vec![0.0; j + 2];
        for (r, c) in cur.iter().enumerate() {
            next[r + 1] += c;
        }
        for (r, c) in prev.iter().enumerate() {
            next[r] -= j as f64 * c;
        }
        prev = cur;
        cur = next;
    }
    cur
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments() {
        assert_eq!(gaussian_moment(0), 1.0);
        assert_eq!(gaussian_moment(2), 1.0);
        assert_eq!(gaussian_moment(4), 3.0);
        assert_eq!(gaussian_moment(6), 15.0);
        assert_eq!(gaussian_moment(5), 0.0);
    }

    #[test]
    fn recurrence_matches_coefficients() {
        for m in 0..8 {
            let c = hermite_coeffs(m);
            for &x in &[-1.7f64, 0.0, 0.3, 2.5] {
                let direct: f64 = c.iter().enumerate().map(|(r, a)| a * x.powi(r as i32)).sum();
                assert!((direct - hermite(m, x)).abs() < 1e-10);
            }
        }
        assert_eq!(hermite_coeffs(3), vec![0.0, -3.0, 0.0, 1.0]);
    }
}
