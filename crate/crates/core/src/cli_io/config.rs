//! Run configuration: a TOML file with the sections `[problem]`,
//! `[solver]`, `[solver.quadrature]`, `[budget]` and `[check]`. Every key is
//! optional and falls back to the experiment's defaults; unknown keys are
//! rejected. Errors name the offending line.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::oracle::HeatDatum;
use crate::fields::{analytic_field, AnalyticField, FieldSpec, NormSettings};
use crate::kernel::DeformationMode;
use crate::ns_solver::{CmModel, ContractionBudget, NSProblem, NsEstimator};
use crate::potential::{NodeSampling, TimeQuadrature};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    HeatCheck,
    PoissonCheck,
    GradientCheck,
    BiotSavartCheck,
    FkSystemCheck,
    FkReversalCheck,
    GirsanovCheck,
    TauBound,
    NsSolve,
    ConvergenceStudy,
}

impl Experiment {
    pub const ALL: [Experiment; 10] = [
        Experiment::HeatCheck,
        Experiment::PoissonCheck,
        Experiment::GradientCheck,
        Experiment::BiotSavartCheck,
        Experiment::FkSystemCheck,
        Experiment::FkReversalCheck,
        Experiment::GirsanovCheck,
        Experiment::TauBound,
        Experiment::NsSolve,
        Experiment::ConvergenceStudy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::HeatCheck => "heat-check",
            Experiment::PoissonCheck => "poisson-check",
            Experiment::GradientCheck => "gradient-check",
            Experiment::BiotSavartCheck => "biot-savart-check",
            Experiment::FkSystemCheck => "fk-system-check",
            Experiment::FkReversalCheck => "fk-reversal-check",
            Experiment::GirsanovCheck => "girsanov-check",
            Experiment::TauBound => "tau-bound",
            Experiment::NsSolve => "ns-solve",
            Experiment::ConvergenceStudy => "convergence-study",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment `{s}`")))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Option<Experiment>,
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub problem: ProblemConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub budget: BudgetConfig,
    #[serde(default)]
    pub check: CheckConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub nu: Option<f64>,
    pub alpha: Option<f64>,
    pub p: Option<f64>,
    pub horizon: Option<f64>,
    pub initial_vorticity: Option<FieldSpec>,
    /// Prescribed velocity for transport checks.
    pub velocity: Option<FieldSpec>,
    pub forcing: Option<FieldSpec>,
    /// Overrides the estimated data size.
    pub eps0: Option<f64>,
    /// Half-width and spacing of the box used by the norm estimators.
    pub norm_radius: Option<f64>,
    pub norm_spacing: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub seed: Option<u64>,
    pub n_samples: Option<usize>,
    /// Samples per node of the Biot–Savart map, when different.
    pub bs_samples: Option<usize>,
    pub dt: Option<f64>,
    pub mode: Option<DeformationMode>,
    pub estimator: Option<NsEstimator>,
    pub box_radius: Option<f64>,
    pub spacing: Option<f64>,
    pub n_slices: Option<usize>,
    pub max_iters: Option<usize>,
    pub tolerance: Option<f64>,
    pub bound_slack: Option<f64>,
    #[serde(default)]
    pub quadrature: QuadratureConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureConfig {
    pub s_min: Option<f64>,
    pub s_max: Option<f64>,
    pub n_nodes: Option<usize>,
    pub tolerance: Option<f64>,
    pub sampling: Option<NodeSampling>,
}

impl QuadratureConfig {
    pub fn resolve(&self, base: TimeQuadrature) -> TimeQuadrature {
        TimeQuadrature {
            s_min: self.s_min.unwrap_or(base.s_min),
            s_max: self.s_max.unwrap_or(base.s_max),
            n_nodes: self.n_nodes.unwrap_or(base.n_nodes),
            tolerance: self.tolerance.unwrap_or(base.tolerance),
            sampling: self.sampling.unwrap_or(base.sampling),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetConfig {
    pub l_radius: Option<f64>,
    pub m_radius: Option<f64>,
    pub c_tilde: Option<f64>,
    pub c_nu_p: Option<f64>,
    pub cm_model: Option<CmModel>,
    pub growth_only: Option<bool>,
    /// Uses this horizon instead of the computed bound.
    pub tau: Option<f64>,
}

impl BudgetConfig {
    pub fn resolve(&self, base: ContractionBudget) -> ContractionBudget {
        ContractionBudget {
            l_radius: self.l_radius.unwrap_or(base.l_radius),
            m_radius: self.m_radius.unwrap_or(base.m_radius),
            c_tilde: self.c_tilde.unwrap_or(base.c_tilde),
            c_nu_p: self.c_nu_p.unwrap_or(base.c_nu_p),
            cm_model: self.cm_model.unwrap_or(base.cm_model),
            growth_only: self.growth_only.unwrap_or(base.growth_only),
        }
    }
}

/// Scalar densities for the potential checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensitySpec {
    /// Indicator of the ball of the given radius about the origin.
    UnitBall {
        #[serde(default = "one")]
        radius: f64,
    },
    GaussianBump { amplitude: f64, width: f64 },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckConfig {
    pub points: Option<Vec<Vec<f64>>>,
    /// Elapsed time of the check.
    pub time: Option<f64>,
    /// `k` in `|estimate - oracle| ≤ k·σ + …`.
    pub sigma_multiplier: Option<f64>,
    /// `C` in the discretization allowance `C·Δs` (or `C·h²`).
    pub discretization_coefficient: Option<f64>,
    pub datum: Option<HeatDatum>,
    pub density: Option<DensitySpec>,
    /// Finite-difference spacing of the curl and divergence check.
    pub fd_spacing: Option<f64>,
    pub dt_values: Option<Vec<f64>>,
    pub sample_values: Option<Vec<usize>>,
    pub wavenumber: Option<f64>,
    pub rate: Option<f64>,
    pub expected_tau: Option<f64>,
    pub tau_tolerance: Option<f64>,
    /// Consecutive contraction ratios required by `ns-solve`.
    pub min_contracting: Option<usize>,
}

/// Loads and validates a configuration file.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let src = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    parse_config(&src)
}

/// Parses and validates configuration text.
pub fn parse_config(src: &str) -> Result<RunConfig> {
    let cfg: RunConfig = toml::from_str(src).map_err(|e| {
        let line = e.span().map(|s| line_of_offset(src, s.start));
        let msg = e.message().trim().to_string();
        Error::Config(match line {
            Some(l) => format!("line {l}: {msg}"),
            None => msg,
        })
    })?;
    cfg.validate(src)?;
    Ok(cfg)
}

fn line_of_offset(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())].bytes().filter(|b| *b == b'\n').count() + 1
}

/// Line of `key` inside `[section]`, for semantic diagnostics.
fn line_of_key(src: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, raw) in src.lines().enumerate() {
        let line = raw.trim();
        if let Some(h) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = h.trim().to_string();
            continue;
        }
        if current == section {
            if let Some(rest) = line.strip_prefix(key) {
                if rest.trim_start().starts_with('=') {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}

fn anchored(src: &str, section: &str, key: &str, msg: impl fmt::Display) -> Error {
    let path = if section.is_empty() { key.to_string() } else { format!("{section}.{key}") };
    match line_of_key(src, section, key) {
        Some(l) => Error::Config(format!("line {l}: `{path}`: {msg}")),
        None => Error::Config(format!("`{path}`: {msg}")),
    }
}

impl RunConfig {
    fn validate(&self, src: &str) -> Result<()> {
        let positive = |section: &str, key: &str, v: Option<f64>| -> Result<()> {
            match v {
                Some(x) if !(x > 0.0 && x.is_finite()) => {
                    Err(anchored(src, section, key, format!("must be positive and finite, got {x}")))
                }
                _ => Ok(()),
            }
        };
        let p = &self.problem;
        positive("problem", "nu", p.nu)?;
        positive("problem", "horizon", p.horizon)?;
        positive("problem", "norm_radius", p.norm_radius)?;
        positive("problem", "norm_spacing", p.norm_spacing)?;
        if let Some(a) = p.alpha {
            if !(a > 0.0 && a < 1.0) {
                return Err(anchored(src, "problem", "alpha", format!("must lie in (0, 1), got {a}")));
            }
        }
        if let Some(q) = p.p {
            if !(1.0..1.5).contains(&q) {
                return Err(anchored(src, "problem", "p", format!("must lie in [1, 3/2), got {q}")));
            }
        }
        if let Some(e) = p.eps0 {
            if !(e >= 0.0 && e.is_finite()) {
                return Err(anchored(src, "problem", "eps0", format!("must be finite and non-negative, got {e}")));
            }
        }
        let nu = p.nu.unwrap_or(0.5);
        for (key, spec) in [("initial_vorticity", &p.initial_vorticity), ("velocity", &p.velocity), ("forcing", &p.forcing)] {
            if let Some(spec) = spec {
                analytic_field(spec, nu).map_err(|e| anchored(src, "problem", key, e))?;
            }
        }

        let s = &self.solver;
        positive("solver", "dt", s.dt)?;
        positive("solver", "box_radius", s.box_radius)?;
        positive("solver", "spacing", s.spacing)?;
        if let Some(b) = s.bound_slack {
            if !(b >= 0.0) {
                return Err(anchored(src, "solver", "bound_slack", "must be non-negative"));
            }
        }
        for (key, v) in [("n_samples", s.n_samples), ("bs_samples", s.bs_samples)] {
            if v == Some(0) {
                return Err(anchored(src, "solver", key, "must be at least 1"));
            }
        }
        if let Some(n) = s.n_slices {
            if n < 2 {
                return Err(anchored(src, "solver", "n_slices", "needs at least two slices"));
            }
        }
        s.quadrature
            .resolve(TimeQuadrature::default())
            .validate()
            .map_err(|e| anchored(src, "solver.quadrature", "s_min", e))?;

        let b = &self.budget;
        for (key, v) in [("l_radius", b.l_radius), ("m_radius", b.m_radius), ("c_tilde", b.c_tilde), ("c_nu_p", b.c_nu_p), ("tau", b.tau)] {
            positive("budget", key, v)?;
        }
        if b.l_radius.is_some() || b.m_radius.is_some() {
            let budget = b.resolve(ContractionBudget::new(1.0, 1.0));
            budget.validate().map_err(|e| anchored(src, "budget", "m_radius", e))?;
        }

        let c = &self.check;
        positive("check", "fd_spacing", c.fd_spacing)?;
        positive("check", "sigma_multiplier", c.sigma_multiplier)?;
        if let Some(t) = c.time {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(anchored(src, "check", "time", "must be finite and non-negative"));
            }
        }
        if let Some(pts) = &c.points {
            if pts.is_empty() || pts.iter().any(|p| p.is_empty() || p.iter().any(|v| !v.is_finite())) {
                return Err(anchored(src, "check", "points", "need at least one finite point"));
            }
        }
        if let Some(dts) = &c.dt_values {
            if dts.len() < 2 || dts.iter().any(|d| !(*d > 0.0)) {
                return Err(anchored(src, "check", "dt_values", "need at least two positive steps"));
            }
        }
        if let Some(ns) = &c.sample_values {
            if ns.len() < 2 || ns.contains(&0) {
                return Err(anchored(src, "check", "sample_values", "need at least two positive sample counts"));
            }
        }
        Ok(())
    }

    pub fn nu(&self) -> f64 {
        self.problem.nu.unwrap_or(0.5)
    }

    pub fn seed(&self) -> u64 {
        self.solver.seed.unwrap_or(1)
    }

    pub fn norm_settings(&self, radius: f64, spacing: f64) -> NormSettings {
        NormSettings::new(
            self.problem.alpha.unwrap_or(0.5),
            self.problem.p.unwrap_or(1.2),
            self.problem.norm_radius.unwrap_or(radius),
            self.problem.norm_spacing.unwrap_or(spacing),
        )
    }

    pub fn field(&self, spec: &FieldSpec) -> Result<AnalyticField> {
        analytic_field(spec, self.nu())
    }

    /// The NS problem with the given default initial vorticity.
    pub fn ns_problem(&self, default_xi0: &FieldSpec, horizon: f64, norms: &NormSettings) -> Result<NSProblem> {
        let xi0 = self.field(self.problem.initial_vorticity.as_ref().unwrap_or(default_xi0))?;
        let forcing = match &self.problem.forcing {
            Some(f) => Some(Arc::new(self.field(f)?.vorticity()) as Arc<dyn crate::fields::VectorField>),
            None => None,
        };
        let mut p = NSProblem::new(self.nu(), self.problem.horizon.unwrap_or(horizon), Arc::new(xi0.vorticity()), forcing, norms)?;
        if let Some(e) = self.problem.eps0 {
            p.eps0 = e;
        }
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_valid() {
        assert_eq!(parse_config("").unwrap(), RunConfig::default());
    }

    #[test]
    fn full_config_parses() {
        let src = r#"
experiment = "ns-solve"
output_dir = "out"

[problem]
nu = 0.5
alpha = 0.5
p = 1.2
horizon = 0.1
initial_vorticity = { name = "gaussian_vortex_blob", amplitude = 0.02, scale = 0.5 }

[solver]
seed = 7
n_samples = 200
dt = 0.01
mode = "full-gradient"

[solver.quadrature]
s_min = 1e-5
sampling = "independent"

[budget]
l_radius = 1.0
m_radius = 1.0
cm_model = { kind = "power", coef = 2.0, exponent = 0.5 }

[check]
points = [[0.0, 0.0, 0.0]]
datum = { name = "cosine", amplitude = 1.0, wavenumber = 2.0 }
"#;
        let cfg = parse_config(src).unwrap();
        assert_eq!(cfg.experiment, Some(Experiment::NsSolve));
        assert_eq!(cfg.solver.mode, Some(DeformationMode::FullGradient));
        assert_eq!(cfg.solver.quadrature.sampling, Some(NodeSampling::Independent));
        assert_eq!(cfg.budget.cm_model, Some(CmModel::Power { coef: 2.0, exponent: 0.5 }));
    }

    #[test]
    fn unknown_key_names_its_line() {
        let err = parse_config("[solver]\nseed = 1\nsamples = 3\n").unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Config(_)));
        assert!(msg.contains("line 3"), "{msg}");
    }

    #[test]
    fn semantic_errors_name_their_line() {
        let err = parse_config("[problem]\nnu = 0.5\nalpha = 1.5\n").unwrap_err().to_string();
        assert!(err.contains("line 3") && err.contains("alpha"), "{err}");
        let err = parse_config("[budget]\nl_radius = 2.0\nm_radius = 1.0\n").unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
        let err = parse_config("[problem]\ninitial_vorticity = { name = \"nope\" }\n").unwrap_err().to_string();
        assert!(err.contains("line 2") && err.contains("nope"), "{err}");
    }

    #[test]
    fn experiment_names_round_trip() {
        for e in Experiment::ALL {
            assert_eq!(e.name().parse::<Experiment>().unwrap(), e);
        }
        assert!("heat".parse::<Experiment>().is_err());
    }
}
