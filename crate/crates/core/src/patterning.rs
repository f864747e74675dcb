//! Susceptibility matrices, the ridge-regularized inverse and patterning.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::backend::PosteriorBackend;
use crate::error::{Error, Result};
use crate::linalg::{op_norm, pseudoinverse};
use crate::loss::Dataset;
use crate::model_zoo::Perturbation;
use crate::observables::{CovOptions, Observable};
use crate::susceptibility::{chi_ideal_hat, chi_pop, chi_pop_ren, chi_ren_hat, EstimatorKind, SusceptibilityResult};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Provenance {
    pub model: String,
    pub n: usize,
    pub beta: f64,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SusceptibilityMatrix {
    pub entries: DMatrix<f64>,
    pub estimator_kind: EstimatorKind,
    /// Per-entry Monte Carlo standard errors, for sampled estimators.
    pub std_errs: Option<DMatrix<f64>>,
    pub provenance: Provenance,
}

impl SusceptibilityMatrix {
    pub fn new(entries: DMatrix<f64>, estimator_kind: EstimatorKind) -> Result<Self> {
        if entries.nrows() == 0 || entries.ncols() == 0 {
            return Err(Error::InvalidInput("susceptibility matrix must be at least 1x1".into()));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("susceptibility matrix has non-finite entries".into()));
        }
        Ok(SusceptibilityMatrix {
            entries,
            estimator_kind,
            std_errs: None,
            provenance: Provenance::default(),
        })
    }

    pub fn rows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn cols(&self) -> usize {
        self.entries.ncols()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "H,m,estimator_kind")?;
        writeln!(out, "{},{},{}", self.rows(), self.cols(), self.estimator_kind)?;
        for i in 0..self.rows() {
            let row: Vec<String> = (0..self.cols()).map(|j| format!("{:e}", self.entries[(i, j)])).collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let bad = |m: &str| Error::InvalidInput(format!("matrix csv: {m}"));
        let mut lines = input.lines();
        let header = lines.next().ok_or_else(|| bad("empty file"))??;
        if header.trim() != "H,m,estimator_kind" {
            return Err(bad("unexpected header"));
        }
        let dims = lines.next().ok_or_else(|| bad("missing dimensions"))??;
        let parts: Vec<&str> = dims.trim().split(',').collect();
        if parts.len() != 3 {
            return Err(bad("dimension line needs three fields"));
        }
        let h: usize = parts[0].parse().map_err(|_| bad("bad H"))?;
        let m: usize = parts[1].parse().map_err(|_| bad("bad m"))?;
        let kind: EstimatorKind =
            serde_json::from_value(serde_json::Value::String(parts[2].to_string())).map_err(|_| bad("bad estimator_kind"))?;
        let mut vals = Vec::with_capacity(h * m);
        for _ in 0..h {
            let line = lines.next().ok_or_else(|| bad("missing row"))??;
            let row: Vec<f64> = line
                .trim()
                .split(',')
                .map(|s| s.parse::<f64>().map_err(|_| bad("bad entry")))
                .collect::<Result<_>>()?;
            if row.len() != m {
                return Err(bad("row length mismatch"));
            }
            vals.extend(row);
        }
        Self::new(DMatrix::from_row_slice(h, m, &vals), kind)
    }
}

/// Estimator selection for matrix assembly.
#[derive(Debug, Clone, Copy)]
pub enum EntryEstimator<'a> {
    PopulationRen,
    Population,
    Ren(&'a Dataset),
    Ideal(&'a Dataset),
}

pub fn estimate_entry(
    obs: &Observable,
    xi: &Perturbation,
    est: EntryEstimator<'_>,
    backend: &dyn PosteriorBackend,
    opts: &CovOptions,
) -> Result<SusceptibilityResult> {
    match est {
        EntryEstimator::PopulationRen => chi_pop_ren(obs, xi, backend, opts),
        EntryEstimator::Population => chi_pop(obs, xi, backend, opts),
        EntryEstimator::Ren(d) => chi_ren_hat(obs, xi, d, backend, opts),
        EntryEstimator::Ideal(d) => chi_ideal_hat(obs, xi, d, backend, opts),
    }
}

/// `(i, j) = χ(O_i, ξ_j)`, entries computed in parallel; a failing entry is
/// reported with its position.
pub fn assemble_matrix(
    observables: &[Observable],
    perturbations: &[Perturbation],
    est: EntryEstimator<'_>,
    backend: &dyn PosteriorBackend,
    opts: &CovOptions,
) -> Result<SusceptibilityMatrix> {
    let (h, m) = (observables.len(), perturbations.len());
    if h == 0 || m == 0 {
        return Err(Error::InvalidInput("need at least one observable and one perturbation".into()));
    }
    let results: Vec<Result<SusceptibilityResult>> = (0..h * m)
        .into_par_iter()
        .map(|idx| {
            let (row, col) = (idx / m, idx % m);
            estimate_entry(&observables[row], &perturbations[col], est, backend, opts).map_err(|e| Error::Entry {
                row,
                col,
                source: Box::new(e),
            })
        })
        .collect();
    let mut vals = Vec::with_capacity(h * m);
    let mut ses = Vec::with_capacity(h * m);
    let mut kind = None;
    for r in results {
        let r = r?;
        kind = Some(r.estimator_kind);
        vals.push(r.value);
        ses.push(r.mc_std_err);
    }
    let mut mat = SusceptibilityMatrix::new(DMatrix::from_row_slice(h, m, &vals), kind.expect("nonempty"))?;
    if ses.iter().all(Option::is_some) && !backend.is_exact() {
        let s: Vec<f64> = ses.into_iter().map(Option::unwrap).collect();
        mat.std_errs = Some(DMatrix::from_row_slice(h, m, &s));
    }
    mat.provenance = Provenance {
        model: backend.model().label(),
        n: match est {
            EntryEstimator::Ren(d) | EntryEstimator::Ideal(d) => d.len(),
            _ => 0,
        },
        beta: match est {
            EntryEstimator::Ren(d) | EntryEstimator::Ideal(d) => backend.nbeta() / d.len() as f64,
            _ => f64::NAN,
        },
        seeds: match est {
            EntryEstimator::Ren(d) | EntryEstimator::Ideal(d) => d.seed().into_iter().collect(),
            _ => Vec::new(),
        },
    };
    Ok(mat)
}

/// `R_λ(A) = Aᵀ(AAᵀ + λI)⁻¹` via Cholesky.
pub fn ridge_inverse(a: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidInput(format!("ridge parameter must be positive, got {lambda}")));
    }
    let h = a.nrows();
    let gram = a * a.transpose() + DMatrix::<f64>::identity(h, h) * lambda;
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Nonconvergence("Cholesky failed on a regularized Gram matrix".into()))?;
    let y = chol.solve(&DMatrix::<f64>::identity(h, h));
    Ok(a.transpose() * y)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeSolution {
    pub lambda: f64,
    pub h_vector: DVector<f64>,
    pub residual_norm: f64,
}

pub fn pattern(a: &DMatrix<f64>, b: &DVector<f64>, lambda: f64) -> Result<RidgeSolution> {
    if b.len() != a.nrows() {
        return Err(Error::InvalidInput(format!("target has length {}, matrix has {} rows", b.len(), a.nrows())));
    }
    let h = ridge_inverse(a, lambda)? * b;
    let residual_norm = (a * &h - b).norm();
    Ok(RidgeSolution {
        lambda,
        h_vector: h,
        residual_norm,
    })
}

/// `‖R_λ(A) − A⁺‖_op`.
pub fn ridge_error(a: &DMatrix<f64>, lambda: f64) -> Result<f64> {
    if a.iter().all(|&v| v == 0.0) {
        return Err(Error::InvalidInput("ridge error is undefined for the zero matrix".into()));
    }
    Ok(op_norm(&(ridge_inverse(a, lambda)? - pseudoinverse(a))))
}

/// `λ / (σ_min(σ_min² + λ))` for the smallest positive singular value.
pub fn predicted_ridge_error(sigma_min: f64, lambda: f64) -> f64 {
    lambda / (sigma_min * (sigma_min * sigma_min + lambda))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_ridge() {
        let a = DMatrix::from_element(1, 1, 2.0);
        let r = ridge_inverse(&a, 0.5).unwrap();
        assert!((r[(0, 0)] - 2.0 / 4.5).abs() < 1e-15);
        assert!(ridge_inverse(&a, 0.0).is_err());
    }

    #[test]
    fn zero_matrix() {
        let a = DMatrix::zeros(2, 3);
        assert_eq!(ridge_inverse(&a, 1.0).unwrap(), DMatrix::zeros(3, 2));
        assert!(ridge_error(&a, 1.0).is_err());
    }

    #[test]
    fn diagonal_error() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0]));
        let lam = 1e-3;
        assert!((ridge_error(&a, lam).unwrap() - lam / (1.0 + lam)).abs() < 1e-12);
    }

    #[test]
    fn csv_round_trip() {
        let m = SusceptibilityMatrix::new(DMatrix::from_row_slice(2, 1, &[1.5, -0.25]), EstimatorKind::Ren).unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"H,m,estimator_kind\n2,1,ren\n"));
        let back = SusceptibilityMatrix::read_csv(&buf[..]).unwrap();
        assert_eq!(back.entries, m.entries);
        assert_eq!(back.estimator_kind, EstimatorKind::Ren);
    }
}
