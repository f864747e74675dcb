//! Small dense linear algebra: cyclic Jacobi eigensolver, pseudoinverse and
//! operator norms.

use nalgebra::{DMatrix, DVector};

const JACOBI_SWEEPS: usize = 100;

/// Eigenvalues and eigenvectors (columns) of a symmetric matrix.
pub fn jacobi_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    assert_eq!(n, m.ncols(), "matrix must be square");
    let mut a = m.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    for _ in 0..JACOBI_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum();
        let scale: f64 = a.iter().map(|x| x * x).sum();
        if off <= 1e-32 * scale || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[(i, i)]).collect(), v)
}

/// Moore–Penrose pseudoinverse from the Jacobi spectrum of the smaller Gram
/// matrix. Gram eigenvalues carry roundoff near `n·ε·μ_max`, so the cutoff is
/// the larger of `σ ≤ 1e−10·σ_max` and that floor.
pub fn pseudoinverse(a: &DMatrix<f64>) -> DMatrix<f64> {
    let wide = a.nrows() <= a.ncols();
    let gram = if wide { a * a.transpose() } else { a.transpose() * a };
    let (mu, v) = jacobi_eigen(&gram);
    let mu_max = mu.iter().cloned().fold(0.0, f64::max);
    let n = gram.nrows();
    let cutoff = mu_max * 1e-20f64.max(8.0 * n as f64 * f64::EPSILON);
    let mut inv = DMatrix::<f64>::zeros(n, n);
    for (i, &m) in mu.iter().enumerate() {
        if m > cutoff && m > 0.0 {
            let col = v.column(i);
            inv += (col * col.transpose()) / m;
        }
    }
    if wide {
        a.transpose() * inv
    } else {
        inv * a.transpose()
    }
}

/// Singular values, descending.
pub fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    let (mu, _) = jacobi_eigen(&(a.transpose() * a));
    let mut s: Vec<f64> = mu.into_iter().map(|m| m.max(0.0).sqrt()).collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

/// `‖A‖_op` from the Jacobi spectrum of `AᵀA`.
pub fn op_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    singular_values(a)[0]
}

/// `‖A‖_op` by power iteration on `AᵀA`.
pub fn op_norm_power(a: &DMatrix<f64>, iters: usize) -> f64 {
    let m = a.ncols();
    if m == 0 || a.nrows() == 0 {
        return 0.0;
    }
    let ata = a.transpose() * a;
    let mut x = DVector::from_fn(m, |i, _| 1.0 + (i as f64 * 0.618_033_988_749_895).fract());
    let mut est = 0.0;
    for _ in 0..iters {
        let y = &ata * &x;
        let n = y.norm();
        if n == 0.0 {
            return 0.0;
        }
        x = y / n;
        let next = (a * &x).norm();
        if (next - est).abs() <= 1e-15 * next {
            return next;
        }
        est = next;
    }
    est
}
