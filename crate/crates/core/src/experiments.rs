//! Experiment drivers behind the command-line subcommands.
//!
//! Every driver returns its CSV as a string. Replicates run in parallel but
//! rows are emitted in schedule order, so the output depends only on the
//! configuration and the master seed.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::asymptotics::{fit_scaling, ratio_f64, scaling_law};
use crate::backend::{Draws, PosteriorBackend, QuadratureBackend};
use crate::config::{BackendKind, ExperimentConfig};
use crate::error::{Error, Result};
use crate::model_zoo::{sample_data, ModelFamily};
use crate::observables::Observable;
use crate::patterning::{assemble_matrix, pattern, EntryEstimator};
use crate::poly::Poly;
use crate::posterior::Submanifold;
use crate::sgld::{SgldBackend, SgldConfig};
use crate::stats::{derive_seed, mean, median, replicate_summary};
use crate::susceptibility::{chi_pop_ren, chi_ren_hat, CouplingKernel};

pub const SUSCEPTIBILITY_HEADER: &str = "model_id,obs_id,xi_id,estimator,n,beta,nbeta,value,mc_se,seed";
pub const SCALING_HEADER: &str = "k,h,l,lambda_l,tau,m_l,slope_hat,C_hat,C_theory,r2";
pub const PATTERN_HEADER: &str = "model_id,n,beta,nbeta,lambda,estimator,seed,index,h_value,residual_norm,error_norm";
pub const KERNEL_HEADER: &str = "model_id,obs_id,kernel,x,x2,kappa";
pub const SGLD_CHECK_HEADER: &str = "model_id,obs_id,xi_id,n,beta,nbeta,quad_value,sgld_value,mc_se,z,step_size,seed";

const STREAM_DATA: u64 = 1;
const STREAM_CHAIN: u64 = 2;

/// Seed of the dataset for replicate `rep` at sample size `n`.
pub fn data_seed(master: u64, n: usize, rep: usize) -> u64 {
    derive_seed(master, &[STREAM_DATA, n as u64, rep as u64])
}

/// Master seed of the SGLD chains for replicate `rep` at sample size `n`.
pub fn chain_seed(master: u64, n: usize, rep: usize) -> u64 {
    derive_seed(master, &[STREAM_CHAIN, n as u64, rep as u64])
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn context(run: &str, e: Error) -> Error {
    match e {
        Error::Config { .. } => e,
        other => Error::Config {
            key: run.to_string(),
            message: other.to_string(),
        },
    }
}

struct Setup {
    model: ModelFamily,
    observables: Vec<Observable>,
    obs_ids: Vec<String>,
    xis: Vec<crate::model_zoo::Perturbation>,
    xi_ids: Vec<String>,
}

fn setup(cfg: &ExperimentConfig) -> Result<Setup> {
    cfg.validate()?;
    let model = cfg.build_model()?;
    Ok(Setup {
        observables: cfg.build_observables(&model)?,
        obs_ids: cfg.observables.iter().map(|o| o.id.clone()).collect(),
        xis: cfg.build_perturbations()?,
        xi_ids: cfg.perturbations.iter().map(|p| p.id.clone()).collect(),
        model,
    })
}

fn empirical_backend(
    cfg: &ExperimentConfig,
    model: &ModelFamily,
    data: Arc<crate::loss::Dataset>,
    beta: f64,
    n: usize,
    rep: usize,
) -> Result<Box<dyn PosteriorBackend>> {
    Ok(match cfg.backend {
        BackendKind::Quadrature => Box::new(QuadratureBackend::empirical(model, &data, beta, cfg.quad)),
        BackendKind::Sgld => {
            let sc = SgldConfig {
                seed: chain_seed(cfg.seed, n, rep),
                ..cfg.sgld.clone()
            };
            Box::new(SgldBackend::new(model, data, beta, sc)?)
        }
    })
}

/// Per `(n, replicate)` renormalized estimates, population values and their
/// differences, then per-`n` medians and replicate means.
pub fn run_converge(cfg: &ExperimentConfig) -> Result<String> {
    let s = setup(cfg)?;
    if s.observables.is_empty() || s.xis.is_empty() {
        return Err(Error::config("observables", "converge needs observables and perturbations"));
    }
    let label = cfg.model.label();
    let opts = cfg.cov_options();
    let mut out = String::new();
    writeln!(out, "{SUSCEPTIBILITY_HEADER}").unwrap();
    for &n in &cfg.schedule.n {
        let beta = cfg.schedule.beta_for(n);
        let nbeta = n as f64 * beta;
        let pop = QuadratureBackend::population(&s.model, nbeta, cfg.quad);
        let pop_vals: Vec<Vec<f64>> = s
            .observables
            .iter()
            .map(|o| {
                s.xis
                    .iter()
                    .map(|xi| chi_pop_ren(o, xi, &pop, &opts).map(|r| r.value))
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<_>>()
            .map_err(|e| context("converge", e))?;
        let reps: Vec<(u64, Vec<Vec<(f64, Option<f64>, &'static str)>>)> = (0..cfg.replicates)
            .into_par_iter()
            .map(|rep| {
                let seed = data_seed(cfg.seed, n, rep);
                let data = Arc::new(sample_data(&s.model, n, seed)?);
                let backend = empirical_backend(cfg, &s.model, data.clone(), beta, n, rep)?;
                let vals = s
                    .observables
                    .iter()
                    .map(|o| {
                        s.xis
                            .iter()
                            .map(|xi| {
                                let r = chi_ren_hat(o, xi, &data, backend.as_ref(), &opts)?;
                                Ok((r.value, r.mc_std_err, r.estimator_kind.as_str()))
                            })
                            .collect::<Result<Vec<_>>>()
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok((seed, vals))
            })
            .collect::<Result<_>>()
            .map_err(|e| context("converge", e))?;
        for (i, oid) in s.obs_ids.iter().enumerate() {
            for (j, xid) in s.xi_ids.iter().enumerate() {
                let p = pop_vals[i][j];
                let mut diffs = Vec::with_capacity(reps.len());
                for (seed, vals) in &reps {
                    let (v, se, kind) = vals[i][j];
                    let row = |est: &str, value: f64, se: Option<f64>| {
                        format!("{label},{oid},{xid},{est},{n},{beta},{nbeta},{value},{},{seed}", opt(se))
                    };
                    writeln!(out, "{}", row(kind, v, se)).unwrap();
                    writeln!(out, "{}", row("population_ren", p, None)).unwrap();
                    writeln!(out, "{}", row("difference", v - p, se)).unwrap();
                    diffs.push(v - p);
                }
                let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
                let (m, se) = replicate_summary(&diffs);
                let master = cfg.seed;
                writeln!(
                    out,
                    "{label},{oid},{xid},median_abs_difference,{n},{beta},{nbeta},{},,{master}",
                    median(&abs)
                )
                .unwrap();
                writeln!(out, "{label},{oid},{xid},mean_difference,{n},{beta},{nbeta},{m},{se},{master}").unwrap();
            }
        }
    }
    Ok(out)
}

/// Fitted moment scaling against the predicted exponent and constant.
pub fn run_moments(cfg: &ExperimentConfig) -> Result<String> {
    let s = setup(cfg)?;
    let model = &s.model;
    if model.dim() != 1 {
        return Err(Error::config("model.k", "moment sweeps are one-dimensional"));
    }
    let grid = cfg.moments.grid();
    let mut out = String::new();
    writeln!(out, "{SCALING_HEADER}").unwrap();
    for &l in &cfg.moments.l {
        let law = scaling_law(model.k(), model.h(), &[l]).map_err(|e| context("moments", e))?;
        let g = Poly::monomial(1, 1.0, &[l]);
        let values: Vec<(f64, f64)> = grid
            .par_iter()
            .map(|&nb| {
                let b = QuadratureBackend::population(model, nb, cfg.quad);
                Ok((nb, b.draws(&Submanifold::full(1), 0)?.mean(|w| g.eval(w))))
            })
            .collect::<Result<_>>()
            .map_err(|e| context("moments", e))?;
        let fit = fit_scaling(&values, &law).map_err(|e| context("moments", e))?;
        writeln!(
            out,
            "{},{},{l},{},{},{},{},{},{},{}",
            model.k()[0],
            model.h()[0],
            ratio_f64(&law.lambda_l),
            law.tau_f64(),
            law.multiplicity,
            fit.slope_hat,
            fit.c_hat,
            opt(law.constant_for_loss_scale(model.loss_scale())),
            fit.r2
        )
        .unwrap();
    }
    Ok(out)
}

/// Ridge patterning of empirical and population susceptibility matrices.
pub fn run_pattern(cfg: &ExperimentConfig) -> Result<String> {
    let s = setup(cfg)?;
    let spec = cfg
        .pattern
        .as_ref()
        .ok_or_else(|| Error::config("pattern", "pattern runs need a [pattern] table"))?;
    if spec.target.len() != s.observables.len() {
        return Err(Error::config(
            "pattern.target",
            format!("expected {} entries, one per observable", s.observables.len()),
        ));
    }
    let b = DVector::from_vec(spec.target.clone());
    let lambda = spec.lambda;
    let label = cfg.model.label();
    let opts = cfg.cov_options();
    let mut out = String::new();
    writeln!(out, "{PATTERN_HEADER}").unwrap();
    for &n in &cfg.schedule.n {
        let beta = cfg.schedule.beta_for(n);
        let nbeta = n as f64 * beta;
        let pop = QuadratureBackend::population(&s.model, nbeta, cfg.quad);
        let a_pop = assemble_matrix(&s.observables, &s.xis, EntryEstimator::PopulationRen, &pop, &opts)
            .map_err(|e| context("pattern", e))?;
        let h_pop = pattern(&a_pop.entries, &b, lambda)?;
        let emit = |out: &mut String, est: &str, seed: u64, h: &DVector<f64>, res: f64, err: f64| {
            for (i, v) in h.iter().enumerate() {
                writeln!(out, "{label},{n},{beta},{nbeta},{lambda},{est},{seed},{i},{v},{res},{err}").unwrap();
            }
        };
        emit(&mut out, "population_ren", cfg.seed, &h_pop.h_vector, h_pop.residual_norm, 0.0);
        let reps: Vec<(u64, DMatrix<f64>)> = (0..cfg.replicates)
            .into_par_iter()
            .map(|rep| {
                let seed = data_seed(cfg.seed, n, rep);
                let data = Arc::new(sample_data(&s.model, n, seed)?);
                let backend = empirical_backend(cfg, &s.model, data.clone(), beta, n, rep)?;
                let a = assemble_matrix(&s.observables, &s.xis, EntryEstimator::Ren(&data), backend.as_ref(), &opts)?;
                Ok((seed, a.entries))
            })
            .collect::<Result<_>>()
            .map_err(|e| context("pattern", e))?;
        let mut errs = Vec::with_capacity(reps.len());
        for (seed, a) in &reps {
            let sol = pattern(a, &b, lambda)?;
            let err = (&sol.h_vector - &h_pop.h_vector).norm();
            let kind = match cfg.backend {
                BackendKind::Quadrature => "ren",
                BackendKind::Sgld => "sgld",
            };
            emit(&mut out, kind, *seed, &sol.h_vector, sol.residual_norm, err);
            errs.push(err);
        }
        writeln!(out, "{label},{n},{beta},{nbeta},{lambda},median_error,{},,,,{}", cfg.seed, median(&errs)).unwrap();
        writeln!(out, "{label},{n},{beta},{nbeta},{lambda},mean_error,{},,,,{}", cfg.seed, mean(&errs)).unwrap();
    }
    Ok(out)
}

/// Coupling kernels of the functional observables on an `(x, x′)` grid.
pub fn run_kernel(cfg: &ExperimentConfig) -> Result<String> {
    let s = setup(cfg)?;
    let ks = &cfg.kernel;
    let label = cfg.model.label();
    let pop = QuadratureBackend::population(&s.model, ks.nbeta, cfg.quad);
    let mut out = String::new();
    writeln!(out, "{KERNEL_HEADER}").unwrap();
    for (o, oid) in s.observables.iter().zip(&s.obs_ids) {
        if o.terms().len() != 1 || !o.is_functional() {
            return Err(Error::config(format!("observables.{oid}"), "kernel runs need single functional terms"));
        }
        let term = &o.terms()[0];
        let (name, k) = match ks.eps {
            None => ("hybrid", CouplingKernel::hybrid(term, &pop)),
            Some(eps) => {
                let j = ks.insertion.clone().unwrap_or_else(|| vec![0; s.model.dim()]);
                ("sharp_cutoff", CouplingKernel::sharp_cutoff(term, &s.model, eps, &j, &cfg.quad))
            }
        };
        let k = k.map_err(|e| context("kernel", e))?;
        for &x in &ks.x {
            for &x2 in &ks.x {
                writeln!(out, "{label},{oid},{name},{x},{x2},{}", k.eval(x, x2)).unwrap();
            }
        }
    }
    Ok(out)
}

/// SGLD estimates next to the exact quadrature value on the same data.
pub fn run_sgld_check(cfg: &ExperimentConfig) -> Result<String> {
    let s = setup(cfg)?;
    let label = cfg.model.label();
    let opts = cfg.cov_options();
    let mut out = String::new();
    writeln!(out, "{SGLD_CHECK_HEADER}").unwrap();
    for &n in &cfg.schedule.n {
        let beta = cfg.schedule.beta_for(n);
        let nbeta = n as f64 * beta;
        let rows: Vec<String> = (0..cfg.replicates)
            .into_par_iter()
            .map(|rep| {
                let seed = data_seed(cfg.seed, n, rep);
                let data = Arc::new(sample_data(&s.model, n, seed)?);
                let quad = QuadratureBackend::empirical(&s.model, &data, beta, cfg.quad);
                let sc = SgldConfig {
                    seed: chain_seed(cfg.seed, n, rep),
                    ..cfg.sgld.clone()
                };
                let sgld = SgldBackend::new(&s.model, data.clone(), beta, sc)?;
                let step = match &*sgld.draws(&Submanifold::full(s.model.dim()), 0)? {
                    Draws::Chain(c) => c.step_size,
                    Draws::Weighted(_) => f64::NAN,
                };
                let mut lines = String::new();
                for (o, oid) in s.observables.iter().zip(&s.obs_ids) {
                    for (xi, xid) in s.xis.iter().zip(&s.xi_ids) {
                        let q = chi_ren_hat(o, xi, &data, &quad, &opts)?;
                        let g = chi_ren_hat(o, xi, &data, &sgld, &opts)?;
                        let se = g.mc_std_err.unwrap_or(f64::NAN);
                        let z = (g.value - q.value) / se;
                        writeln!(
                            lines,
                            "{label},{oid},{xid},{n},{beta},{nbeta},{},{},{se},{z},{step},{seed}",
                            q.value, g.value
                        )
                        .unwrap();
                    }
                }
                Ok(lines)
            })
            .collect::<Result<_>>()
            .map_err(|e| context("sgld-check", e))?;
        for r in rows {
            out.push_str(&r);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub run: String,
    pub config_hash: String,
    pub git_rev: String,
    pub wall_time_s: f64,
    pub seed: u64,
    pub rows: usize,
    pub csv: PathBuf,
}

pub fn config_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn git_rev() -> String {
    std::process::Command::new("git")
        .args(["rev-parse", "HEAD"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .unwrap_or_else(|| "unknown".into())
}

/// Run `run` on the configuration, write `<out>/<run>.csv` and append a line
/// to `<out>/<run>.jsonl`.
pub fn execute(run: &str, cfg: &ExperimentConfig, config_text: &str, out_dir: &Path) -> Result<RunRecord> {
    let start = Instant::now();
    let csv = match run {
        "converge" => run_converge(cfg)?,
        "moments" => run_moments(cfg)?,
        "pattern" => run_pattern(cfg)?,
        "kernel" => run_kernel(cfg)?,
        "sgld-check" => run_sgld_check(cfg)?,
        other => return Err(Error::InvalidInput(format!("unknown run `{other}`"))),
    };
    std::fs::create_dir_all(out_dir)?;
    let csv_path = out_dir.join(format!("{run}.csv"));
    std::fs::write(&csv_path, &csv)?;
    let record = RunRecord {
        run: run.to_string(),
        config_hash: config_hash(config_text),
        git_rev: git_rev(),
        wall_time_s: start.elapsed().as_secs_f64(),
        seed: cfg.seed,
        rows: csv.lines().count().saturating_sub(1),
        csv: csv_path,
    };
    let line = serde_json::to_string(&record).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(out_dir.join(format!("{run}.jsonl")))?;
    use std::io::Write as _;
    writeln!(f, "{line}")?;
    Ok(record)
}
