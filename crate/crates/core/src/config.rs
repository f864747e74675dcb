//! Experiment configuration in TOML.
//!
//! ```toml
//! seed = 7
//! replicates = 50
//! backend = "quadrature"
//!
//! [model]
//! k = [1]
//! h = [0]
//!
//! [[observables]]
//! id = "w2"
//! kind = "monomial"
//! powers = [2]
//!
//! [[perturbations]]
//! id = "he1"
//! terms = [{ hermite_index = 1, scale = 1.0 }]
//!
//! [schedule]
//! n = [100, 1000, 10000]
//! beta = "one_over_log_n"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::Lift;
use crate::model_zoo::{HermiteTerm, ModelFamily, ModelSpec, Perturbation};
use crate::observables::{component_observable, CovOptions, Observable, ObservableTerm};
use crate::poly::Poly;
use crate::posterior::{QuadConfig, Submanifold};
use crate::sgld::SgldConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BetaRule {
    Fixed,
    #[default]
    OneOverLogN,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub n: Vec<usize>,
    #[serde(default)]
    pub beta: BetaRule,
    /// β for the fixed rule.
    #[serde(default)]
    pub beta_value: Option<f64>,
}

impl Schedule {
    pub fn beta_for(&self, n: usize) -> f64 {
        match self.beta {
            BetaRule::Fixed => self.beta_value.unwrap_or(1.0),
            BetaRule::OneOverLogN => 1.0 / (n as f64).ln(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Quadrature,
    Sgld,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservableKind {
    /// `coef · w^powers`, deterministic.
    Monomial,
    /// `f(x, w) − f(x, center)`.
    Component,
    /// `f(x, w)` itself.
    LogRatio,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservableSpec {
    pub id: String,
    pub kind: ObservableKind,
    #[serde(default)]
    pub powers: Option<Vec<u32>>,
    #[serde(default)]
    pub coef: Option<f64>,
    #[serde(default)]
    pub center: Option<Vec<f64>>,
    /// `[coordinate, value]` pairs defining the support; empty means `W`.
    #[serde(default)]
    pub fixed: Vec<(usize, f64)>,
    /// Normal derivative orders, one per coordinate.
    #[serde(default)]
    pub normal: Option<Vec<u32>>,
    #[serde(default)]
    pub tangential: Option<Vec<u32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationSpec {
    pub id: String,
    pub terms: Vec<HermiteTerm>,
}

impl PerturbationSpec {
    pub fn build(&self) -> Result<Perturbation> {
        let mut it = self.terms.iter();
        let first = it
            .next()
            .ok_or_else(|| Error::config(format!("perturbations.{}.terms", self.id), "needs at least one term"))?;
        let mut p = Perturbation::hermite(first.hermite_index, first.scale)?;
        for t in it {
            p = p.plus(&Perturbation::hermite(t.hermite_index, t.scale)?);
        }
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentsSpec {
    #[serde(default = "default_moment_orders")]
    pub l: Vec<u32>,
    /// `nβ` grid; defaults to nine log-spaced points on `[1e2, 1e6]`.
    #[serde(default)]
    pub nbeta: Option<Vec<f64>>,
}

fn default_moment_orders() -> Vec<u32> {
    vec![1, 2]
}

impl Default for MomentsSpec {
    fn default() -> Self {
        MomentsSpec {
            l: default_moment_orders(),
            nbeta: None,
        }
    }
}

impl MomentsSpec {
    pub fn grid(&self) -> Vec<f64> {
        self.nbeta
            .clone()
            .unwrap_or_else(|| (0..9).map(|i| 10f64.powf(2.0 + 0.5 * i as f64)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatternSpec {
    pub target: Vec<f64>,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
}

fn default_lambda() -> f64 {
    1e-2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    #[serde(default = "default_kernel_grid")]
    pub x: Vec<f64>,
    /// Sharp-cutoff level; the hybrid kernel is used when absent.
    #[serde(default)]
    pub eps: Option<f64>,
    /// Insertion exponents for the sharp-cutoff `σ`.
    #[serde(default)]
    pub insertion: Option<Vec<u32>>,
    /// `nβ` for the hybrid kernel.
    #[serde(default = "default_kernel_nbeta")]
    pub nbeta: f64,
}

fn default_kernel_grid() -> Vec<f64> {
    (0..9).map(|i| -2.0 + 0.5 * i as f64).collect()
}

fn default_kernel_nbeta() -> f64 {
    100.0
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec {
            x: default_kernel_grid(),
            eps: None,
            insertion: None,
            nbeta: default_kernel_nbeta(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub backend: BackendKind,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Keep only leading-order Leibniz terms.
    #[serde(default)]
    pub practice: bool,
    pub model: ModelSpec,
    #[serde(default)]
    pub observables: Vec<ObservableSpec>,
    #[serde(default)]
    pub perturbations: Vec<PerturbationSpec>,
    pub schedule: Schedule,
    #[serde(default)]
    pub quad: QuadConfig,
    #[serde(default)]
    pub sgld: SgldConfig,
    #[serde(default)]
    pub moments: MomentsSpec,
    #[serde(default)]
    pub pattern: Option<PatternSpec>,
    #[serde(default)]
    pub kernel: KernelSpec,
}

fn default_replicates() -> usize {
    1
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let key = e.span().map(|s| locate(text, s.start)).unwrap_or_else(|| "<document>".into());
            Error::config(key, e.message().trim().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schedule.n.is_empty() {
            return Err(Error::config("schedule.n", "schedule must list at least one sample size"));
        }
        if let Some(i) = self.schedule.n.iter().position(|&n| n < 2) {
            return Err(Error::config(format!("schedule.n[{i}]"), "sample sizes must be at least 2"));
        }
        if self.schedule.beta == BetaRule::Fixed {
            match self.schedule.beta_value {
                Some(b) if b > 0.0 && b.is_finite() => {}
                Some(b) => return Err(Error::config("schedule.beta_value", format!("must be positive, got {b}"))),
                None => return Err(Error::config("schedule.beta_value", "required by the fixed rule")),
            }
        }
        if self.replicates == 0 {
            return Err(Error::config("replicates", "must be at least 1"));
        }
        let model = self.model.build().map_err(|e| Error::config("model", e.to_string()))?;
        for (i, o) in self.observables.iter().enumerate() {
            o.build(&model)
                .map_err(|e| Error::config(format!("observables[{i}] ({})", o.id), e.to_string()))?;
        }
        for (i, p) in self.perturbations.iter().enumerate() {
            p.build()
                .map_err(|e| Error::config(format!("perturbations[{i}] ({})", p.id), e.to_string()))?;
        }
        if self.quad.nodes == 0 {
            return Err(Error::config("quad.nodes", "must be at least 1"));
        }
        self.sgld.validate()?;
        if let Some(p) = &self.pattern {
            if !(p.lambda > 0.0) {
                return Err(Error::config("pattern.lambda", "must be positive"));
            }
        }
        Ok(())
    }

    pub fn build_model(&self) -> Result<ModelFamily> {
        self.model.build()
    }

    pub fn build_observables(&self, model: &ModelFamily) -> Result<Vec<Observable>> {
        self.observables.iter().map(|o| o.build(model)).collect()
    }

    pub fn build_perturbations(&self) -> Result<Vec<Perturbation>> {
        self.perturbations.iter().map(|p| p.build()).collect()
    }

    pub fn cov_options(&self) -> CovOptions {
        CovOptions {
            practice: self.practice,
            ..CovOptions::default()
        }
    }
}

impl ObservableSpec {
    pub fn build(&self, model: &ModelFamily) -> Result<Observable> {
        let d = model.dim();
        let support = self
            .fixed
            .iter()
            .try_fold(Submanifold::full(d), |s, &(i, v)| s.with_fixed(i, v))?;
        let lift = match self.kind {
            ObservableKind::Monomial => {
                let powers = self
                    .powers
                    .clone()
                    .ok_or_else(|| Error::config(format!("observables.{}.powers", self.id), "required for monomials"))?;
                if powers.len() != d {
                    return Err(Error::config(
                        format!("observables.{}.powers", self.id),
                        format!("expected {d} exponents, got {}", powers.len()),
                    ));
                }
                Lift::deterministic(Poly::monomial(d, self.coef.unwrap_or(1.0), &powers))
            }
            ObservableKind::Component => {
                let center = self.center.clone().unwrap_or_else(|| vec![0.0; d]);
                if center.len() != d {
                    return Err(Error::config(format!("observables.{}.center", self.id), "wrong length"));
                }
                let o = component_observable(model, &center);
                o.terms()[0].lift.scale(self.coef.unwrap_or(1.0))
            }
            ObservableKind::LogRatio => model.log_ratio_lift().scale(self.coef.unwrap_or(1.0)),
        };
        let mut term = ObservableTerm::functional(lift, support);
        if let Some(b) = &self.normal {
            term = term.with_normal(b.clone());
        }
        if let Some(a) = &self.tangential {
            term = term.with_tangential(a.clone());
        }
        Observable::single(term)
    }
}

/// Dotted key path of the table entry enclosing byte offset `pos`, with the
/// line number.
fn locate(text: &str, pos: usize) -> String {
    let before = &text[..pos.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let mut table = String::new();
    for l in before.lines() {
        let t = l.trim();
        if t.starts_with('[') {
            table = t.trim_matches(|c| c == '[' || c == ']').to_string();
        }
    }
    let current = text[before.rfind('\n').map_or(0, |i| i + 1)..]
        .lines()
        .next()
        .unwrap_or("")
        .split('=')
        .next()
        .unwrap_or("")
        .trim()
        .to_string();
    let key = match (table.is_empty(), current.is_empty() || current.starts_with('[')) {
        (true, _) => current,
        (false, true) => table,
        (false, false) => format!("{table}.{current}"),
    };
    format!("line {line}: {key}")
}
