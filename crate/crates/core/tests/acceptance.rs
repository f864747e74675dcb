//! Acceptance criteria A1–A11. Runs as a plain binary and prints one
//! `PASS`/`FAIL`/`INFO` line per criterion; exits nonzero if a gated
//! criterion fails.

mod common;

use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use common::{fd_pairing, gh_expect, rel_err, ridge_error_formula, tilted_fd, RefModel};
use nalgebra::{DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::function::gamma::gamma;
use susceptlab::asymptotics::{fluctuation_expansion, fluctuation_function};
use susceptlab::backend::{PosteriorBackend, QuadratureBackend};
use susceptlab::linalg::{op_norm_power, pseudoinverse};
use susceptlab::loss::{loss_variation_poly, Lift};
use susceptlab::model_zoo::{make_monomial_gaussian, sample_data, BoxDomain, ModelFamily, Perturbation};
use susceptlab::observables::{
    component_observable, leibniz_expand, normal_pairing, restricted_covariance, CovOptions, Observable, ObservableTerm,
};
use susceptlab::patterning::{assemble_matrix, pattern, ridge_error, ridge_inverse, EntryEstimator};
use susceptlab::poly::Poly;
use susceptlab::posterior::{QuadConfig, Submanifold};
use susceptlab::sgld::{SgldBackend, SgldConfig};
use susceptlab::stats::{median, ols, replicate_summary};
use susceptlab::susceptibility::{chi_pop_ren, chi_ren_hat, domination_bound, CouplingKernel};

struct Outcome {
    gated: bool,
    pass: bool,
    detail: String,
}

impl Outcome {
    fn gate(pass: bool, detail: String) -> Self {
        Outcome { gated: true, pass, detail }
    }
}

fn quad() -> QuadConfig {
    QuadConfig::default()
}

fn opts() -> CovOptions {
    CovOptions::default()
}

fn he1() -> Perturbation {
    Perturbation::hermite(1, 1.0).unwrap()
}

fn model(k: &[u32], h: &[u32]) -> (ModelFamily, RefModel) {
    (
        make_monomial_gaussian(k, h, BoxDomain::unit(k.len())).unwrap(),
        RefModel::unit(k, h, 0.5),
    )
}

fn zoo() -> Vec<(ModelFamily, RefModel)> {
    vec![model(&[1], &[0]), model(&[2], &[1]), model(&[1, 2], &[0, 0])]
}

fn a1() -> Outcome {
    let mut worst: f64 = 0.0;
    for (m, r) in zoo() {
        let d = m.dim();
        let mut e = vec![0; d];
        e[0] = 2;
        let sq = Observable::on_w(Poly::monomial(d, 1.0, &e));
        let ws = vec![0.3; d];
        let comp = component_observable(&m, &ws);
        let k_star = r.loss(&ws);
        let rc = r.clone();
        let cases: [(&Observable, Box<dyn Fn(&[f64]) -> f64>); 2] =
            [(&sq, Box::new(|w: &[f64]| w[0] * w[0])), (&comp, Box::new(move |w: &[f64]| rc.loss(w) - k_star))];
        for (obs, g) in cases {
            for nb in [10.0, 100.0, 1000.0] {
                let b = QuadratureBackend::population(&m, nb, quad());
                let lib = chi_pop_ren(obs, &he1(), &b, &opts()).unwrap().value;
                let fd = tilted_fd(&r, &r.free_all(), nb, common::delta_k_fn(&r, 1), &g, 1e-4);
                worst = worst.max(rel_err(lib, fd));
            }
        }
    }
    Outcome::gate(worst <= 1e-4, format!("max rel err vs tilted finite difference {worst:.2e} (tol 1e-4)"))
}

fn a2() -> Outcome {
    let grid: Vec<f64> = (0..9).map(|i| 10f64.powf(2.0 + 0.5 * i as f64)).collect();
    let (mut slope_dev, mut c_dev): (f64, f64) = (0.0, 0.0);
    for k in 1..=3u32 {
        for h in 0..=1u32 {
            // K = w^{2k} so the constant is the plain gamma ratio.
            let m = make_monomial_gaussian(&[k], &[h], BoxDomain::unit(1)).unwrap().with_loss_scale(1.0).unwrap();
            for l in 1..=2u32 {
                let (xs, ys): (Vec<f64>, Vec<f64>) = grid
                    .iter()
                    .map(|&nb| {
                        let b = QuadratureBackend::population(&m, nb, quad());
                        let e = b.draws(&Submanifold::full(1), 0).unwrap().mean(|w| w[0].powi(l as i32));
                        (nb.ln(), e.ln())
                    })
                    .unzip();
                let (icpt, slope, _) = ols(&xs, &ys);
                let lam = (h + 1) as f64 / (2 * k) as f64;
                let lam_l = (h + l + 1) as f64 / (2 * k) as f64;
                let c = gamma(lam_l) / gamma(lam);
                slope_dev = slope_dev.max((slope + (lam_l - lam)).abs());
                c_dev = c_dev.max((icpt.exp() - c).abs() / c);
            }
        }
    }
    Outcome::gate(
        slope_dev <= 0.05 && c_dev <= 0.05,
        format!("max |slope + τ| {slope_dev:.3e} (tol 0.05), max rel C error {c_dev:.3e} (tol 0.05)"),
    )
}

fn a3() -> Outcome {
    let betas: Vec<f64> = (0..9).map(|i| 10f64.powf(-4.0 + 0.25 * i as f64)).collect();
    let mut c_hat: f64 = 0.0;
    let mut flat = true;
    for alpha in [0.25, 0.5, 1.0, 2.0] {
        for i in 0..=8 {
            let a = -2.0 + 0.5 * i as f64;
            let ratios: Vec<f64> = betas
                .iter()
                .map(|&b| (fluctuation_function(alpha, a, b).unwrap() - fluctuation_expansion(alpha, a, b)).abs() / b)
                .collect();
            let hi = ratios.iter().copied().fold(0.0, f64::max);
            let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
            c_hat = c_hat.max(hi);
            // Residual/β levels off rather than growing as β shrinks.
            if a != 0.0 && !(hi <= 2.0 * lo) {
                flat = false;
            }
        }
    }
    Outcome::gate(c_hat.is_finite() && flat, format!("fitted C = {c_hat:.4} over β ∈ [1e-4, 1e-2]; residual/β bounded: {flat}"))
}

/// `chi_ren_hat − chi_pop_ren` over replicates at sample size `n`.
fn gaps(m: &ModelFamily, obs: &Observable, n: usize, reps: u64, seed: u64) -> Vec<f64> {
    gaps_and_target(m, obs, n, reps, seed).1
}

fn gaps_and_target(m: &ModelFamily, obs: &Observable, n: usize, reps: u64, seed: u64) -> (f64, Vec<f64>) {
    let beta = 1.0 / (n as f64).ln();
    let pop = chi_pop_ren(obs, &he1(), &QuadratureBackend::population(m, n as f64 * beta, quad()), &opts())
        .unwrap()
        .value;
    let g = (0..reps)
        .map(|rep| {
            let data = sample_data(m, n, seed + rep).unwrap();
            let b = QuadratureBackend::empirical(m, &data, beta, quad());
            chi_ren_hat(obs, &he1(), &data, &b, &opts()).unwrap().value - pop
        })
        .collect();
    (pop, g)
}

fn abs(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| x.abs()).collect()
}

struct Consistency {
    lines: Vec<String>,
    factor_ok: bool,
    unbiased_ok: bool,
}

fn a4_a5() -> Consistency {
    let mut lines = Vec::new();
    let (mut factor_ok, mut unbiased_ok) = (true, true);
    for (k, h) in [(1u32, 0u32), (2, 0)] {
        let (m, _) = model(&[k], &[h]);
        let cases = [("w^2", Observable::on_w(Poly::monomial(1, 1.0, &[2]))), ("f-f*", component_observable(&m, &[0.0]))];
        for (name, obs) in cases {
            let small = gaps(&m, &obs, 100, 50, 10_000);
            let (pop, large) = gaps_and_target(&m, &obs, 10_000, 50, 20_000);
            let (ms, ml) = (median(&abs(&small)), median(&abs(&large)));
            let (mean, se) = replicate_summary(&large);
            factor_ok &= ms >= 2.0 * ml;
            unbiased_ok &= mean.abs() <= 2.0 * se;
            lines.push(format!(
                "k={k} {name}: median |gap| {ms:.3e} -> {ml:.3e} (x{:.1}); mean gap at n=1e4 {mean:.2e} ± {se:.2e} ({:.2} SE, {:.2}% of χ)",
                ms / ml,
                mean.abs() / se,
                100.0 * mean / pop
            ));
        }
    }
    Consistency {
        lines,
        factor_ok,
        unbiased_ok,
    }
}

fn a6() -> Outcome {
    // Leibniz pairing against stencils of the slice integral.
    let mut worst: f64 = 0.0;
    let cases: Vec<(Vec<u32>, Vec<u32>, Vec<Option<f64>>, Vec<u32>, Poly)> = vec![
        (vec![2], vec![1], vec![Some(0.4)], vec![1], Poly::constant(1, 1.5)),
        (vec![2], vec![1], vec![Some(0.4)], vec![2], Poly::constant(1, 1.5)),
        (vec![1, 1], vec![2, 0], vec![Some(0.5), None], vec![1, 0], Poly::from_terms(2, [(vec![0, 1], 1.0), (vec![0, 0], 0.2)])),
        (vec![1, 1], vec![2, 0], vec![Some(0.5), None], vec![2, 0], Poly::from_terms(2, [(vec![0, 1], 1.0), (vec![0, 0], 0.2)])),
        (vec![1, 2], vec![1, 0], vec![Some(0.5), Some(0.6)], vec![1, 1], Poly::from_terms(2, [(vec![0, 0], 1.0), (vec![1, 1], 0.5)])),
    ];
    for (k, h, fixed, beta, g) in &cases {
        let (m, r) = model(k, h);
        let pins: Vec<(usize, f64)> = fixed.iter().enumerate().filter_map(|(i, f)| f.map(|v| (i, v))).collect();
        let s = Submanifold::slice(k.len(), &pins).unwrap();
        for nb in [10.0, 100.0] {
            let b = QuadratureBackend::population(&m, nb, quad());
            let term = ObservableTerm::functional(Lift::deterministic(g.clone()), s.clone()).with_normal(beta.clone());
            let lib = normal_pairing(&term, &b).unwrap();
            let fd = fd_pairing(&r, &|w| g.eval(w), fixed, beta, nb, &|w| r.loss(w));
            worst = worst.max(rel_err(lib, fd));
        }
    }

    // Subleading Leibniz groups scale as (nβ)^{r−M}.
    let dom = BoxDomain::new(vec![0.0, 0.5], vec![1.0, 1.0]).unwrap();
    let m2 = make_monomial_gaussian(&[1, 1], &[2, 0], dom).unwrap();
    let s = Submanifold::slice(2, &[(0, 0.5)]).unwrap();
    let exp = leibniz_expand(&[2, 0]).unwrap();
    let mut slope_dev: f64 = 0.0;
    for (r, q) in exp.coefficients(&m2, &m2.loss_poly(), &s).unwrap() {
        let (xs, ys): (Vec<f64>, Vec<f64>) = [1e2, 3e2, 1e3, 3e3, 1e4]
            .iter()
            .map(|&nb| {
                let e = QuadratureBackend::population(&m2, nb, quad()).draws(&s, 0).unwrap().mean(|w| q.eval(w));
                (nb.ln(), (nb.powi(r as i32 - 2) * e).abs().ln())
            })
            .unzip();
        let (_, slope, _) = ols(&xs, &ys);
        slope_dev = slope_dev.max((slope - (r as f64 - 2.0)).abs());
    }

    // Consistency of a first-order observable on S = {w₂ = 0.5}.
    let (m, _) = model(&[1, 2], &[0, 0]);
    let term = ObservableTerm::functional(Lift::deterministic(Poly::var(2, 0)), Submanifold::slice(2, &[(1, 0.5)]).unwrap())
        .with_normal(vec![0, 1]);
    let obs = Observable::single(term).unwrap();
    let ms = median(&abs(&gaps(&m, &obs, 100, 50, 30_000)));
    let ml = median(&abs(&gaps(&m, &obs, 10_000, 50, 40_000)));

    Outcome::gate(
        worst <= 1e-4 && slope_dev <= 0.15 && ms >= 2.0 * ml,
        format!(
            "Leibniz vs stencil max rel {worst:.2e} (tol 1e-4); subleading slope dev {slope_dev:.3} (tol 0.15); |β|=1 median gap {ms:.3e} -> {ml:.3e} (x{:.1})",
            ms / ml
        ),
    )
}

fn a7() -> Outcome {
    let (m, _) = model(&[1, 2], &[0, 1]);
    let b = QuadratureBackend::population(&m, 100.0, quad());
    let x_lift = Lift::new(vec![Poly::var(2, 0), Poly::monomial(2, 1.0, &[1, 1]), Poly::monomial(2, 0.5, &[0, 2])]);
    let terms = [
        ObservableTerm::functional(x_lift.clone(), Submanifold::full(2)),
        ObservableTerm::functional(x_lift, Submanifold::slice(2, &[(0, 0.5)]).unwrap()),
        ObservableTerm::functional(m.log_ratio_lift(), Submanifold::full(2)),
    ];
    let mut worst: f64 = 0.0;
    for xi in [he1(), Perturbation::hermite(3, 0.5).unwrap().plus(&he1())] {
        let delta = loss_variation_poly(&m, &xi);
        for t in &terms {
            let k = CouplingKernel::hybrid(t, &b).unwrap();
            let cov = restricted_covariance(&Observable::single(t.clone()).unwrap(), &delta, &b, &opts()).unwrap().value;
            let dbl = gh_expect(|x| gh_expect(|x2| k.eval(x, x2) * xi.density(x2)));
            worst = worst.max(rel_err(dbl, cov));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut violations = 0;
    let mut tightest: f64 = 0.0;
    for t in &terms {
        let k = CouplingKernel::hybrid(t, &b).unwrap();
        for _ in 0..100 {
            let (x, x2) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let bound = domination_bound(t, &m, x, x2, 41);
            let v = k.eval(x, x2).abs();
            if v > bound {
                violations += 1;
            }
            tightest = tightest.max(v / bound);
        }
    }
    Outcome::gate(
        worst <= 1e-6 && violations == 0,
        format!("64x64 Gauss–Hermite vs Cov max rel {worst:.2e} (tol 1e-6); domination violations {violations}/300, max |κ|/bound {tightest:.3}"),
    )
}

fn a8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let normal = |rng: &mut ChaCha8Rng, h: usize, m: usize| DMatrix::from_fn(h, m, |_, _| StandardNormal.sample(rng));
    let mut excess = f64::NEG_INFINITY;
    for _ in 0..1000 {
        let (h, m) = (rng.random_range(1..=8usize), rng.random_range(1..=8usize));
        let a = normal(&mut rng, h, m);
        for lambda in [1e-4f64, 1e-2, 1.0] {
            let n = op_norm_power(&ridge_inverse(&a, lambda).unwrap(), 10_000);
            excess = excess.max(n - 1.0 / (2.0 * lambda.sqrt()));
        }
    }
    let mut formula_err: f64 = 0.0;
    for (h, m) in [(2, 2), (3, 2), (2, 3), (4, 4), (6, 3)] {
        let a = normal(&mut rng, h, m);
        let smin = a.clone().svd(false, false).singular_values.min();
        for lambda in [1e-4, 1e-2, 1.0] {
            let f = ridge_error_formula(smin, lambda);
            formula_err = formula_err.max((ridge_error(&a, lambda).unwrap() - f).abs() / f.max(1.0));
        }
    }
    let a = normal(&mut rng, 3, 3);
    let b = DVector::from_fn(3, |_, _| StandardNormal.sample(&mut rng));
    let target = a.clone().svd(true, true).pseudo_inverse(1e-12).unwrap() * &b;
    let smin = a.clone().svd(false, false).singular_values.min();
    let mut curve_ok = true;
    let mut prev = f64::INFINITY;
    for lambda in [1.0, 1e-2, 1e-4, 1e-6, 1e-8] {
        let err = (pattern(&a, &b, lambda).unwrap().h_vector - &target).norm();
        curve_ok &= err <= ridge_error_formula(smin, lambda) * b.norm() * (1.0 + 1e-9) && err < prev;
        prev = err;
    }
    curve_ok &= (pseudoinverse(&a) * &b - &target).norm() < 1e-8;
    Outcome::gate(
        excess <= 1e-9 && formula_err <= 1e-10 && curve_ok,
        format!("max ‖R_λ‖ − 1/(2√λ) = {excess:.3e}; ridge error vs formula {formula_err:.2e} (tol 1e-10); λ→0 along predicted curve: {curve_ok}"),
    )
}

fn a9() -> Outcome {
    let (m, _) = model(&[1], &[0]);
    let observables = vec![
        Observable::on_w(Poly::monomial(1, 1.0, &[2])),
        component_observable(&m, &[0.0]),
        Observable::on_w(Poly::var(1, 0)),
    ];
    let xis = vec![he1(), he1().plus(&Perturbation::hermite(2, 1.0).unwrap())];
    let target = DVector::from_vec(vec![1.0, 0.5, -0.3]);
    let lambda = 1e-2;
    let errors = |n: usize, seed: u64| {
        let beta = 1.0 / (n as f64).ln();
        let pop = QuadratureBackend::population(&m, n as f64 * beta, quad());
        let a_pop = assemble_matrix(&observables, &xis, EntryEstimator::PopulationRen, &pop, &opts()).unwrap();
        let h_pop = pattern(&a_pop.entries, &target, lambda).unwrap().h_vector;
        let errs: Vec<f64> = (0..50)
            .map(|rep| {
                let data = sample_data(&m, n, seed + rep).unwrap();
                let b = QuadratureBackend::empirical(&m, &data, beta, quad());
                let a = assemble_matrix(&observables, &xis, EntryEstimator::Ren(&data), &b, &opts()).unwrap();
                (pattern(&a.entries, &target, lambda).unwrap().h_vector - &h_pop).norm()
            })
            .collect();
        median(&errs)
    };
    let (small, large) = (errors(100, 50_000), errors(10_000, 60_000));
    Outcome::gate(
        small >= 2.0 * large,
        format!("median ‖ĥ − h_pop‖ {small:.3e} -> {large:.3e} (x{:.1}) at λ = 1e-2", small / large),
    )
}

fn a10() -> Outcome {
    let (m, _) = model(&[1], &[0]);
    let data = Arc::new(sample_data(&m, 100, 1010).unwrap());
    let obs = Observable::on_w(Poly::monomial(1, 1.0, &[2]));
    let q = QuadratureBackend::empirical(&m, &data, 1.0, quad());
    let exact = chi_ren_hat(&obs, &he1(), &data, &q, &opts()).unwrap().value;
    let cfg = SgldConfig {
        chain_length: 100_000,
        seed: 1010,
        ..SgldConfig::default()
    };
    let s = SgldBackend::new(&m, data.clone(), 1.0, cfg).unwrap();
    let est = chi_ren_hat(&obs, &he1(), &data, &s, &opts()).unwrap();
    let se = est.mc_std_err.unwrap();
    let z = (est.value - exact) / se;
    let step = match &*s.draws(&Submanifold::full(1), 0).unwrap() {
        susceptlab::backend::Draws::Chain(c) => c.step_size,
        _ => f64::NAN,
    };
    // Same chain at a tenth of the step, for the record only.
    let small = SgldBackend::new(
        &m,
        data.clone(),
        1.0,
        SgldConfig {
            step_size: Some(step / 10.0),
            chain_length: 1_000_000,
            seed: 1010,
            ..SgldConfig::default()
        },
    )
    .unwrap();
    let fine = chi_ren_hat(&obs, &he1(), &data, &small, &opts()).unwrap();
    let z_fine = (fine.value - exact) / fine.mc_std_err.unwrap();
    Outcome::gate(
        z.abs() <= 3.0,
        format!(
            "nβ = 100, ε = {step:.3e}: SGLD {:.5e} ± {se:.2e} vs quadrature {exact:.5e}, z = {z:.2}; at ε/10, T = 1e6: z = {z_fine:.2}",
            est.value
        ),
    )
}

fn a11() -> Outcome {
    let (m, _) = model(&[1, 2], &[0, 0]);
    let data = Arc::new(sample_data(&m, 200, 1111).unwrap());
    let s = Submanifold::slice(2, &[(1, 0.5)]).unwrap();
    let whole = Poly::from_terms(2, [(vec![1, 0], 1.0), (vec![2, 0], 1.0)]);
    let one = Observable::single(ObservableTerm::functional(Lift::deterministic(whole), s.clone()).with_normal(vec![0, 1])).unwrap();
    let two = Observable::new(vec![
        ObservableTerm::functional(Lift::deterministic(Poly::var(2, 0)), s.clone()).with_normal(vec![0, 1]),
        ObservableTerm::functional(Lift::deterministic(Poly::monomial(2, 1.0, &[2, 0])), s).with_normal(vec![0, 1]),
    ])
    .unwrap();
    let beta = 1.0 / 200f64.ln();
    let q = QuadratureBackend::empirical(&m, &data, beta, quad());
    let qa = chi_ren_hat(&one, &he1(), &data, &q, &opts()).unwrap().value;
    let qb = chi_ren_hat(&two, &he1(), &data, &q, &opts()).unwrap().value;
    let cfg = SgldConfig {
        chain_length: 50_000,
        seed: 1111,
        ..SgldConfig::default()
    };
    let sg = SgldBackend::new(&m, data.clone(), beta, cfg).unwrap();
    let sa = chi_ren_hat(&one, &he1(), &data, &sg, &opts()).unwrap();
    let sb = chi_ren_hat(&two, &he1(), &data, &sg, &opts()).unwrap();
    Outcome {
        gated: false,
        pass: true,
        detail: format!(
            "quadrature {qa:.5e} vs {qb:.5e} (diff {:.1e}); SGLD [{}] {:.5e} ± {:.1e} vs [{}] {:.5e} ± {:.1e}, diff {:.3e}",
            (qa - qb).abs(),
            sa.decomposition_id,
            sa.value,
            sa.mc_std_err.unwrap(),
            sb.decomposition_id,
            sb.value,
            sb.mc_std_err.unwrap(),
            sa.value - sb.value
        ),
    }
}

fn report(id: &str, o: &Outcome, secs: f64) {
    let tag = match (o.gated, o.pass) {
        (false, _) => "INFO",
        (true, true) => "PASS",
        (true, false) => "FAIL",
    };
    println!("{id} {tag} ({secs:.1}s) {}", o.detail);
}

fn main() -> ExitCode {
    if std::env::args().any(|a| a == "--list") {
        // Lets `cargo test -- --list` enumerate this target.
        return ExitCode::SUCCESS;
    }
    let mut failed = Vec::new();
    let run = |id: &str, f: &dyn Fn() -> Outcome, failed: &mut Vec<String>| {
        let t = Instant::now();
        let o = f();
        report(id, &o, t.elapsed().as_secs_f64());
        if o.gated && !o.pass {
            failed.push(id.to_string());
        }
    };
    run("A1", &a1, &mut failed);
    run("A2", &a2, &mut failed);
    run("A3", &a3, &mut failed);

    let t = Instant::now();
    let c = a4_a5();
    let secs = t.elapsed().as_secs_f64();
    report("A4", &Outcome::gate(c.factor_ok, "median |χ̂ − χ| drops ≥ 2x from n = 1e2 to 1e4".into()), secs);
    for l in &c.lines {
        println!("   {l}");
    }
    if !c.factor_ok {
        failed.push("A4".into());
    }
    report("A5", &Outcome::gate(c.unbiased_ok, "replicate mean gap at n = 1e4 within 2 SE of 0 (see A4 lines)".into()), 0.0);
    if !c.unbiased_ok {
        failed.push("A5".into());
    }

    run("A6", &a6, &mut failed);
    run("A7", &a7, &mut failed);
    run("A8", &a8, &mut failed);
    run("A9", &a9, &mut failed);
    run("A10", &a10, &mut failed);
    run("A11", &a11, &mut failed);

    if failed.is_empty() {
        println!("acceptance: all gated criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed {}", failed.join(", "));
        ExitCode::FAILURE
    }
}
