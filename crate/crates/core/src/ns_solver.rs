//! The vorticity fixed point: NS map, Biot–Savart map, admissible horizon
//! and Picard iteration.
//!
//! The NS map sends a velocity `u` to
//!
//! ```text
//! ξ(t, x) = E[U_t ξ₀(X_t)] + ∫₀^t E[U_s g(t - s, X_s)] ds
//! ```
//!
//! along the Lagrangian paths of `u`; the BS map sends a vorticity back to
//! its Biot–Savart velocity. A local solution is the fixed point of the
//! composition on a short enough horizon.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::invalid;
use crate::fields::{estimate_norms, GridField, GridGeometry, NormReport, NormSettings, OutsidePolicy, VectorField};
use crate::kernel::{spectral_norm, walk_girsanov, walk_lagrangian, DeformationMode, PathSpec, TimeGrid};
use crate::potential::{biot_savart_velocity, DensityBounds, TimeQuadrature};
use crate::rng::BrownianDriver;
use crate::stats::SampleSet;
use crate::{Error, MCEstimate, Mat3, Result, Vec3};

/// Initial vorticity, forcing and the data size `ε₀`.
#[derive(Clone)]
pub struct NSProblem {
    pub nu: f64,
    pub alpha: f64,
    pub p: f64,
    pub horizon: f64,
    pub xi0: Arc<dyn VectorField>,
    /// `g = curl f`; `None` means no forcing.
    pub forcing: Option<Arc<dyn VectorField>>,
    /// `‖ξ₀‖_{C^α_b ∩ L^p} + ∫₀^T ‖g(s)‖_{C^α_b ∩ L^p} ds`.
    pub eps0: f64,
    pub xi0_norms: NormReport,
}

impl NSProblem {
    /// Validates the exponents and estimates `ε₀` on the truncated box of
    /// `settings`; the forcing integral uses the trapezoid rule on five
    /// times.
    pub fn new(
        nu: f64,
        horizon: f64,
        xi0: Arc<dyn VectorField>,
        forcing: Option<Arc<dyn VectorField>>,
        settings: &NormSettings,
    ) -> Result<Self> {
        let (alpha, p) = (settings.alpha, settings.p);
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(invalid("viscosity must be positive"));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(invalid(format!("Hölder exponent {alpha} must lie in (0, 1)")));
        }
        if !(1.0..1.5).contains(&p) {
            return Err(invalid(format!("integrability exponent {p} must lie in [1, 3/2)")));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(invalid("horizon must be positive"));
        }
        let xi0_norms = estimate_norms(xi0.as_ref(), 0.0, settings)?;
        let mut eps0 = xi0_norms.combined();
        if let Some(g) = &forcing {
            let n = 4;
            let mut acc = 0.0;
            for k in 0..=n {
                let t = horizon * k as f64 / n as f64;
                let w = if k == 0 || k == n { 0.5 } else { 1.0 };
                acc += w * estimate_norms(g.as_ref(), t, settings)?.combined();
            }
            eps0 += acc * horizon / n as f64;
        }
        if !eps0.is_finite() {
            return Err(invalid("data norm is not finite"));
        }
        Ok(Self { nu, alpha, p, horizon, xi0, forcing, eps0, xi0_norms })
    }
}

/// Which estimator of the NS map to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NsEstimator {
    /// Average over the drifted Lagrangian paths.
    #[default]
    Direct,
    /// Average over pure Brownian paths with Girsanov weights.
    Girsanov,
}

/// `ξ(t, x)` from the representation along the paths of `u`.
#[allow(clippy::too_many_arguments)]
pub fn ns_map(
    u: &dyn VectorField,
    problem: &NSProblem,
    t: f64,
    x: Vec3,
    dt: f64,
    driver: &BrownianDriver,
    n_samples: usize,
    mode: DeformationMode,
    estimator: NsEstimator,
) -> Result<MCEstimate> {
    if !(t >= 0.0 && t <= problem.horizon * (1.0 + 1e-12)) {
        return Err(invalid(format!("time {t} lies outside [0, {}]", problem.horizon)));
    }
    if t == 0.0 {
        let v = problem.xi0.value(0.0, &x);
        return Ok(MCEstimate {
            value: v.as_slice().to_vec(),
            std_error: vec![0.0; 3],
            n_samples,
            seed: driver.master_seed(),
            grid: None,
        });
    }
    let grid = TimeGrid::with_step(t, dt)?;
    let spec = PathSpec { velocity: u, start: x, nu: problem.nu, grid, mode: Some(mode) };
    let n = grid.n_steps();
    let h = grid.dt();
    let xi0 = problem.xi0.as_ref();
    let forcing = problem.forcing.as_deref();
    let set = SampleSet::collect(n_samples, 3, driver.master_seed(), |i, row| {
        let mut acc = Vec3::zeros();
        let mut total = Vec3::zeros();
        match estimator {
            NsEstimator::Direct => walk_lagrangian(&spec, driver, i, |k, time, xk, uk| {
                if k < n {
                    if let Some(g) = forcing {
                        acc += uk * g.value(time, xk) * h;
                    }
                } else {
                    total = uk * xi0.value(0.0, xk) + acc;
                }
            })?,
            NsEstimator::Girsanov => walk_girsanov(&spec, driver, i, |k, time, yk, vk, log_z| {
                let z = log_z.exp();
                if k < n {
                    if let Some(g) = forcing {
                        acc += vk * g.value(time, yk) * (z * h);
                    }
                } else {
                    total = vk * xi0.value(0.0, yk) * z + acc;
                }
            })?,
        }
        if !total.iter().all(|c| c.is_finite()) {
            return Err(Error::NonFinite { what: "vorticity datum", sample: i, step: n });
        }
        row.copy_from_slice(total.as_slice());
        Ok(())
    })?;
    set.estimate(Some(grid))
}

/// Node values and standard errors of a map evaluated on a grid.
#[derive(Debug, Clone)]
pub struct GridEstimate {
    pub field: GridField,
    /// Largest component standard error per slice and node.
    pub std_error: Vec<f64>,
    /// Largest truncation bound over nodes (Biot–Savart only).
    pub truncation: f64,
}

impl GridEstimate {
    pub fn max_std_error(&self) -> f64 {
        self.std_error.iter().cloned().fold(0.0, f64::max)
    }
}

/// NS map on every node of `geometry` and every slice time.
#[allow(clippy::too_many_arguments)]
pub fn ns_map_grid(
    u: &dyn VectorField,
    problem: &NSProblem,
    geometry: GridGeometry,
    times: &[f64],
    dt: f64,
    driver: &BrownianDriver,
    n_samples: usize,
    mode: DeformationMode,
) -> Result<GridEstimate> {
    let n = geometry.n_nodes();
    let jobs: Vec<(usize, usize)> = (0..times.len()).flat_map(|m| (0..n).map(move |i| (m, i))).collect();
    let out = jobs
        .par_iter()
        .map(|&(m, i)| {
            let est = ns_map(u, problem, times[m], geometry.position(i), dt, driver, n_samples, mode, NsEstimator::Direct)?;
            Ok((Vec3::from_column_slice(&est.value), est.max_std_error()))
        })
        .collect::<Result<Vec<_>>>()?;
    let (values, std_error): (Vec<Vec3>, Vec<f64>) = out.into_iter().unzip();
    let field = GridField::from_values(geometry, times.to_vec(), values, OutsidePolicy::ZeroExtend)?;
    Ok(GridEstimate { field, std_error, truncation: 0.0 })
}

/// Bounds on `|ξ(t, ·)|` for a zero-extended grid vorticity: sup, `L¹` and
/// second moment from the node values (a cell-sum rule), plus a Lipschitz
/// constant when the field vanishes on the box boundary.
pub fn grid_density_bounds(field: &GridField, slice: usize) -> DensityBounds {
    let g = field.geometry();
    let h3 = g.spacing.powi(3);
    let values = field.slice(slice);
    let mut sup = 0.0f64;
    let mut l1 = 0.0;
    let mut m2 = 0.0;
    let mut boundary = 0.0f64;
    let mut lip = 0.0f64;
    for (i, v) in values.iter().enumerate() {
        let x = g.position(i);
        let a = v.norm();
        sup = sup.max(a);
        l1 += a * h3;
        m2 += a * x.norm_squared() * h3;
        if g.is_boundary(i) {
            boundary = boundary.max(a);
        }
        lip = lip.max(spectral_norm(&field.node_gradient(slice, i)));
    }
    // Node sums underestimate integrals of peaked fields; pad them.
    let pad = 1.25;
    let mut b = DensityBounds {
        lp: vec![(1.0, pad * l1), (f64::INFINITY, sup)],
        second_moment: Some(pad * m2),
        ..Default::default()
    };
    if boundary == 0.0 {
        b.lipschitz = Some(pad * lip);
    }
    b
}

/// Biot–Savart velocity on every node and slice of `xi`, with node
/// gradients by centred differences. All nodes share the driver, so the
/// map is linear in `xi` sample by sample.
pub fn bs_map(
    xi: &GridField,
    quad: &TimeQuadrature,
    driver: &BrownianDriver,
    n_samples: usize,
) -> Result<GridEstimate> {
    let geometry = *xi.geometry();
    let n = geometry.n_nodes();
    let times = xi.times().to_vec();
    let bounds: Vec<DensityBounds> = (0..times.len()).map(|m| grid_density_bounds(xi, m)).collect();
    let jobs: Vec<(usize, usize)> = (0..times.len()).flat_map(|m| (0..n).map(move |i| (m, i))).collect();
    let out = jobs
        .par_iter()
        .map(|&(m, i)| {
            if bounds[m].sup() == Some(0.0) {
                return Ok((Vec3::zeros(), 0.0, 0.0));
            }
            let est = biot_savart_velocity(xi, times[m], &bounds[m], geometry.position(i), quad, driver, n_samples)?;
            let se = est.estimate.max_std_error();
            Ok((Vec3::from_column_slice(est.value()), se, est.truncation))
        })
        .collect::<Result<Vec<_>>>()?;
    let truncation = out.iter().map(|o| o.2).fold(0.0, f64::max);
    let (values, std_error) = out.into_iter().map(|(v, s, _)| (v, s)).unzip();
    let field = GridField::from_values(geometry, times, values, OutsidePolicy::Clamp)?;
    Ok(GridEstimate { field, std_error, truncation })
}

/// Growth model for the constant `C_M(τ)` of the contraction estimate;
/// increasing with `C_M(0+) = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CmModel {
    /// `√τ + τ`.
    #[default]
    SqrtPlusLinear,
    /// `√τ + τ + Mτ^{3/2} + Mτ²`.
    PolynomialShape,
    /// `c·τ^e`, `e > 0`.
    Power { coef: f64, exponent: f64 },
}

impl CmModel {
    pub fn eval(&self, tau: f64, m: f64) -> f64 {
        match *self {
            CmModel::SqrtPlusLinear => tau.sqrt() + tau,
            CmModel::PolynomialShape => tau.sqrt() + tau + m * tau.powf(1.5) + m * tau * tau,
            CmModel::Power { coef, exponent } => coef * tau.powf(exponent),
        }
    }

    fn validate(&self) -> Result<()> {
        if let CmModel::Power { coef, exponent } = *self {
            if !(coef > 0.0 && exponent > 0.0) {
                return Err(invalid("power model needs positive coefficient and exponent"));
            }
        }
        Ok(())
    }
}

/// Radii and constants of the contraction argument.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContractionBudget {
    /// Radius `L` of the vorticity ball.
    pub l_radius: f64,
    /// Radius `M` of the velocity ball.
    pub m_radius: f64,
    /// Bound `C̃` of the Biot–Savart operator.
    #[serde(default = "one")]
    pub c_tilde: f64,
    /// `C(ν, p)`.
    #[serde(default = "one")]
    pub c_nu_p: f64,
    #[serde(default)]
    pub cm_model: CmModel,
    /// Check only `e^{3τM}(1 + τM)ε₀ ≤ L`.
    #[serde(default)]
    pub growth_only: bool,
}

fn one() -> f64 {
    1.0
}

impl ContractionBudget {
    pub fn new(l_radius: f64, m_radius: f64) -> Self {
        Self { l_radius, m_radius, c_tilde: 1.0, c_nu_p: 1.0, cm_model: CmModel::default(), growth_only: false }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("L", self.l_radius), ("M", self.m_radius), ("C̃", self.c_tilde), ("C(ν,p)", self.c_nu_p)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if self.m_radius < self.c_tilde * self.l_radius {
            return Err(invalid(format!(
                "M = {} must be at least C̃·L = {}",
                self.m_radius,
                self.c_tilde * self.l_radius
            )));
        }
        self.cm_model.validate()
    }

    /// `e^{3τM}(1 + τM)`, the growth factor of the vorticity bound.
    pub fn growth(&self, tau: f64) -> f64 {
        let tm = tau * self.m_radius;
        (3.0 * tm).exp() * (1.0 + tm)
    }

    fn admissible(&self, tau: f64, eps0: f64) -> bool {
        let growth = self.growth(tau) * eps0 <= self.l_radius;
        let contraction = self.growth_only
            || self.c_tilde * self.c_nu_p * self.cm_model.eval(tau, self.m_radius) * eps0 < 1.0;
        growth && contraction
    }
}

/// Largest `τ ≤ T` at which both conditions of the budget hold, by
/// bisection to relative tolerance `1e-6`.
pub fn compute_tau_bound(eps0: f64, budget: &ContractionBudget, horizon: f64) -> Result<f64> {
    budget.validate()?;
    if !(eps0 >= 0.0 && eps0.is_finite()) {
        return Err(invalid(format!("ε₀ must be finite and non-negative, got {eps0}")));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(invalid("horizon must be positive"));
    }
    if eps0 == 0.0 || budget.admissible(horizon, eps0) {
        return Ok(horizon);
    }
    if eps0 > budget.l_radius {
        return Err(Error::NoAdmissibleTau { eps0, radius: budget.l_radius });
    }
    let (mut lo, mut hi) = (0.0, horizon);
    while hi - lo > 1e-6 * lo.max(f64::MIN_POSITIVE) && hi - lo > 1e-300 {
        let mid = 0.5 * (lo + hi);
        if budget.admissible(mid, eps0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if lo == 0.0 {
        return Err(Error::NoAdmissibleTau { eps0, radius: budget.l_radius });
    }
    Ok(lo)
}

/// Discretization and sampling settings of the Picard iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PicardSettings {
    pub geometry: GridGeometry,
    /// Time slices on `[0, τ]`, including both ends.
    pub n_slices: usize,
    pub dt: f64,
    pub ns_samples: usize,
    pub bs_samples: usize,
    pub quadrature: TimeQuadrature,
    pub mode: DeformationMode,
    pub max_iters: usize,
    /// Stop once the successive distance falls below this.
    pub tolerance: f64,
    pub seed: u64,
    /// Relative slack of the vorticity-growth diagnostic.
    pub bound_slack: f64,
    pub n_pairs: usize,
}

/// One vorticity-growth check: `‖ξ_k(t)‖ ≤ e^{3tM}(1 + tM)ε₀(1 + slack)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GrowthCheck {
    pub iterate: usize,
    pub time: f64,
    pub norm: f64,
    pub bound: f64,
    /// `sup|ξ_k(t)| ≤ e^{tM'}·sup|ξ₀|·(1 + slack)` with `M'` the observed
    /// sup of `‖𝒟_u‖` (source-free problems only).
    pub sup_norm: f64,
    pub sup_bound: Option<f64>,
    pub holds: bool,
}

#[derive(Debug, Clone)]
pub struct IterationReport {
    pub tau: f64,
    pub times: Vec<f64>,
    /// `(u_k, ξ_k)` for `k = 0, 1, …`.
    pub iterates: Vec<(GridField, GridField)>,
    /// `d_k = max_t ‖u_{k+1}(t) - u_k(t)‖_{C^{1,α}_b}`.
    pub distances: Vec<f64>,
    /// Standard error of each `d_k`, from the Biot–Savart estimate of
    /// `ξ_{k+1} - ξ_k`.
    pub distance_std_error: Vec<f64>,
    pub ratios: Vec<f64>,
    /// First `k` with `d_k < 3·se(d_k)`.
    pub noise_floor: Option<usize>,
    pub diverged: bool,
    pub converged: bool,
    pub growth_checks: Vec<GrowthCheck>,
    /// Largest Biot–Savart truncation bound seen.
    pub truncation: f64,
}

impl IterationReport {
    pub fn final_velocity(&self) -> &GridField {
        &self.iterates.last().expect("at least one iterate").0
    }

    pub fn final_vorticity(&self) -> &GridField {
        &self.iterates.last().expect("at least one iterate").1
    }

    pub fn growth_bound_holds(&self) -> bool {
        self.growth_checks.iter().all(|c| c.holds)
    }

    /// Longest run of consecutive ratios below one, counted before the
    /// noise floor.
    pub fn contracting_run(&self) -> usize {
        let stop = self.noise_floor.unwrap_or(usize::MAX);
        let mut best = 0;
        let mut run = 0;
        for (k, r) in self.ratios.iter().enumerate() {
            // ratio k compares d_{k+1} with d_k
            if k + 1 >= stop {
                break;
            }
            if *r < 1.0 {
                run += 1;
                best = best.max(run);
            } else {
                run = 0;
            }
        }
        best
    }
}

fn max_deformation(u: &GridField, mode: DeformationMode) -> f64 {
    u.values()
        .iter()
        .enumerate()
        .map(|(i, _)| {
            let n = u.geometry().n_nodes();
            spectral_norm(&mode.apply(&u.node_gradient(i / n, i % n)))
        })
        .fold(0.0, f64::max)
}

fn slice_sup(f: &GridField, m: usize) -> f64 {
    f.slice(m).iter().map(|v| v.norm()).fold(0.0, f64::max)
}

/// Picard iteration of `BS ∘ NS` on `[0, τ]`, starting from the heat flow
/// of `ξ₀`. The same master seed drives every application of both maps, so
/// the iterated map is a fixed function of the seed.
pub fn picard_iterate(
    problem: &NSProblem,
    budget: &ContractionBudget,
    tau: f64,
    s: &PicardSettings,
) -> Result<IterationReport> {
    budget.validate()?;
    if !(tau > 0.0 && tau <= problem.horizon * (1.0 + 1e-12)) {
        return Err(invalid(format!("τ = {tau} must lie in (0, {}]", problem.horizon)));
    }
    if s.n_slices < 2 {
        return Err(invalid("need at least two time slices"));
    }
    let times: Vec<f64> = (0..s.n_slices).map(|m| tau * m as f64 / (s.n_slices - 1) as f64).collect();
    let driver = BrownianDriver::new(s.seed);
    let bs_driver = driver.derive(1);
    let g = s.geometry;
    let radius = 0.5 * (g.upper() - g.origin).amax();
    let mut norms = NormSettings::new(problem.alpha, problem.p, radius, g.spacing);
    norms.n_pairs = s.n_pairs;
    norms.seed = s.seed;

    let zero = GridField::zeros(g, times.clone(), OutsidePolicy::Clamp)?;
    let ns = |u: &GridField| ns_map_grid(u, problem, g, &times, s.dt, &driver, s.ns_samples, s.mode);
    let bs = |xi: &GridField| bs_map(xi, &s.quadrature, &bs_driver, s.bs_samples);

    let xi_sup0 = slice_sup(&ns(&zero)?.field, 0);
    let mut report = IterationReport {
        tau,
        times: times.clone(),
        iterates: Vec::new(),
        distances: Vec::new(),
        distance_std_error: Vec::new(),
        ratios: Vec::new(),
        noise_floor: None,
        diverged: false,
        converged: false,
        growth_checks: Vec::new(),
        truncation: 0.0,
    };

    let check_growth = |report: &mut IterationReport, k: usize, u_in: &GridField, xi: &GridField| -> Result<()> {
        let m_obs = max_deformation(u_in, s.mode);
        for (m, &t) in times.iter().enumerate() {
            let norm = estimate_norms(xi, t, &norms)?.combined();
            let bound = budget.growth(t) * problem.eps0 * (1.0 + s.bound_slack);
            let sup_norm = slice_sup(xi, m);
            let sup_bound = problem.forcing.is_none().then(|| (t * m_obs).exp() * xi_sup0 * (1.0 + s.bound_slack));
            let holds = norm <= bound && sup_bound.is_none_or(|b| sup_norm <= b);
            report.growth_checks.push(GrowthCheck { iterate: k, time: t, norm, bound, sup_norm, sup_bound, holds });
        }
        Ok(())
    };

    let xi0 = ns(&zero)?.field;
    check_growth(&mut report, 0, &zero, &xi0)?;
    let u0 = bs(&xi0)?;
    report.truncation = u0.truncation;
    report.iterates.push((u0.field, xi0));

    if problem.eps0 == 0.0 && report.iterates[0].0.values().iter().all(|v| *v == Vec3::zeros()) {
        report.converged = true;
        return Ok(report);
    }

    for k in 0..s.max_iters {
        let (u_k, xi_k) = {
            let last = report.iterates.last().expect("initial iterate");
            (last.0.clone(), last.1.clone())
        };
        let xi_next = ns(&u_k)?.field;
        check_growth(&mut report, k + 1, &u_k, &xi_next)?;
        let u_next = bs(&xi_next)?;
        report.truncation = report.truncation.max(u_next.truncation);

        let diff = u_next.field.difference(&u_k)?;
        let mut d = 0.0f64;
        for &t in &times {
            d = d.max(estimate_norms(&diff, t, &norms)?.c1_alpha());
        }
        // Standard error of the difference: the Biot–Savart map of ξ_{k+1} - ξ_k
        // under the same driver reproduces u_{k+1} - u_k sample by sample.
        let dxi = xi_next.difference(&xi_k)?;
        let se = bs(&dxi)?.max_std_error();
        report.distances.push(d);
        report.distance_std_error.push(se);
        if let [.., a, b] = report.distances[..] {
            report.ratios.push(if a > 0.0 { b / a } else { f64::INFINITY });
        }
        if report.noise_floor.is_none() && d < 3.0 * se {
            report.noise_floor = Some(k);
        }
        report.iterates.push((u_next.field, xi_next));
        if report.ratios.len() >= 3 && report.ratios[report.ratios.len() - 3..].iter().all(|r| *r > 1.0) {
            report.diverged = true;
            break;
        }
        if d < s.tolerance {
            report.converged = true;
            break;
        }
    }
    Ok(report)
}

/// `‖𝒟_u‖` over the nodes of a grid velocity, for choosing `M`.
pub fn deformation_sup(u: &GridField, mode: DeformationMode) -> f64 {
    max_deformation(u, mode)
}

/// The deformation of an analytic velocity at one point, as used by the
/// paths.
pub fn deformation_at(u: &dyn VectorField, t: f64, x: &Vec3, mode: DeformationMode) -> Mat3 {
    mode.apply(&u.gradient(t, x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{AnalyticField, GaussianVortexBlob};

    fn bump_problem(amplitude: f64) -> NSProblem {
        let xi0 = AnalyticField::GaussianBump { amplitude: Vec3::new(0.0, 0.0, amplitude), width: 0.5 };
        NSProblem::new(0.5, 1.0, Arc::new(xi0), None, &NormSettings::new(0.5, 1.2, 3.0, 0.25)).unwrap()
    }

    #[test]
    fn tau_of_the_growth_condition() {
        let mut b = ContractionBudget::new(2.0, 1.0);
        b.growth_only = true;
        b.c_tilde = 0.5;
        let tau = compute_tau_bound(1.0, &b, 10.0).unwrap();
        let f = |t: f64| (3.0 * t).exp() * (1.0 + t) - 2.0;
        assert!(f(tau) <= 0.0 && f(tau * (1.0 + 2e-6)) > 0.0);
        assert!((tau - 0.176786).abs() < 1e-5, "{tau}");
    }

    #[test]
    fn tau_edge_cases() {
        let b = ContractionBudget::new(2.0, 2.0);
        assert_eq!(compute_tau_bound(0.0, &b, 3.0).unwrap(), 3.0);
        assert!(matches!(compute_tau_bound(2.5, &b, 3.0), Err(Error::NoAdmissibleTau { .. })));
        assert!(compute_tau_bound(1.0, &ContractionBudget::new(2.0, 1.0), 3.0).is_err());
    }

    #[test]
    fn tau_shrinks_with_m_and_eps0() {
        let mut prev = f64::INFINITY;
        for m in [1.0, 2.0, 4.0] {
            let mut b = ContractionBudget::new(2.0, m);
            b.growth_only = true;
            b.c_tilde = 0.5;
            let tau = compute_tau_bound(1.0, &b, 10.0).unwrap();
            assert!(tau <= prev / 2.0 * (1.0 + 1e-5));
            prev = tau;
        }
        let b = ContractionBudget::new(2.0, 2.0);
        let a = compute_tau_bound(0.5, &b, 10.0).unwrap();
        let c = compute_tau_bound(1.0, &b, 10.0).unwrap();
        assert!(c < a);
    }

    #[test]
    fn zero_datum_gives_zero() {
        let p = NSProblem::new(0.5, 1.0, Arc::new(AnalyticField::Zero), None, &NormSettings::new(0.5, 1.2, 1.0, 0.25))
            .unwrap();
        let u = AnalyticField::SolenoidalShear { rate: 0.5 };
        let est = ns_map(&u, &p, 0.5, Vec3::new(0.1, 0.2, 0.3), 0.01, &BrownianDriver::new(1), 100, DeformationMode::default(), NsEstimator::Direct)
            .unwrap();
        assert_eq!(est.value, vec![0.0; 3]);
    }

    #[test]
    fn heat_flow_of_a_gaussian_bump() {
        let p = bump_problem(1.0);
        let t = 0.5;
        let est = ns_map(&AnalyticField::Zero, &p, t, Vec3::zeros(), 0.05, &BrownianDriver::new(2), 20_000, DeformationMode::default(), NsEstimator::Direct)
            .unwrap();
        let s2 = 0.25;
        let exact = (s2 / (s2 + 2.0 * 0.5 * t)).powf(1.5);
        assert!(est.within(&[0.0, 0.0, exact], 4.0, 1e-12), "{est:?} {exact}");
    }

    #[test]
    fn horizon_is_enforced() {
        let p = bump_problem(1.0);
        assert!(ns_map(&AnalyticField::Zero, &p, 1.5, Vec3::zeros(), 0.05, &BrownianDriver::new(2), 10, DeformationMode::default(), NsEstimator::Direct).is_err());
    }

    #[test]
    fn girsanov_and_direct_agree_on_shear() {
        let p = bump_problem(1.0);
        let u = AnalyticField::SolenoidalShear { rate: 0.5 };
        let d = BrownianDriver::new(3);
        let x = Vec3::new(0.2, -0.1, 0.0);
        let a = ns_map(&u, &p, 0.5, x, 0.01, &d, 20_000, DeformationMode::FullGradient, NsEstimator::Direct).unwrap();
        let b = ns_map(&u, &p, 0.5, x, 0.01, &d, 20_000, DeformationMode::FullGradient, NsEstimator::Girsanov).unwrap();
        for c in 0..3 {
            let se = (a.std_error[c].powi(2) + b.std_error[c].powi(2)).sqrt();
            assert!((a.value[c] - b.value[c]).abs() <= 3.0 * se + 1e-12, "{a:?} {b:?}");
        }
    }

    #[test]
    fn bs_map_is_linear_under_a_shared_driver() {
        let g = GridGeometry::centered_cube(0.5, 0.5).unwrap();
        let blob = AnalyticField::VortexBlob(GaussianVortexBlob { amplitude: 0.3, scale: 0.5 }).vorticity();
        let bump = AnalyticField::GaussianBump { amplitude: Vec3::new(0.0, 0.2, 0.1), width: 0.4 };
        let times = vec![0.0];
        let f1 = crate::fields::build_grid_field(&blob, g, times.clone(), OutsidePolicy::ZeroExtend).unwrap();
        let f2 = crate::fields::build_grid_field(&bump, g, times.clone(), OutsidePolicy::ZeroExtend).unwrap();
        let combo: Vec<Vec3> = f1.values().iter().zip(f2.values()).map(|(a, b)| a * 2.0 - b * 0.5).collect();
        let f3 = GridField::from_values(g, times, combo, OutsidePolicy::ZeroExtend).unwrap();
        let q = TimeQuadrature { s_min: 1e-6, tolerance: 1.0, ..Default::default() };
        let d = BrownianDriver::new(4);
        let u1 = bs_map(&f1, &q, &d, 200).unwrap().field;
        let u2 = bs_map(&f2, &q, &d, 200).unwrap().field;
        let u3 = bs_map(&f3, &q, &d, 200).unwrap().field;
        for i in 0..g.n_nodes() {
            let lin = u1.node_value(0, i) * 2.0 - u2.node_value(0, i) * 0.5;
            assert!((lin - u3.node_value(0, i)).amax() < 1e-12);
        }
    }

    #[test]
    fn zero_vorticity_gives_zero_velocity() {
        let g = GridGeometry::centered_cube(0.5, 0.5).unwrap();
        let z = GridField::zeros(g, vec![0.0, 0.1], OutsidePolicy::ZeroExtend).unwrap();
        let u = bs_map(&z, &TimeQuadrature::default(), &BrownianDriver::new(1), 10).unwrap();
        assert!(u.field.values().iter().all(|v| *v == Vec3::zeros()));
    }

    #[test]
    fn zero_problem_converges_immediately() {
        let p = NSProblem::new(0.5, 1.0, Arc::new(AnalyticField::Zero), None, &NormSettings::new(0.5, 1.2, 1.0, 0.5))
            .unwrap();
        let s = PicardSettings {
            geometry: GridGeometry::centered_cube(1.0, 0.5).unwrap(),
            n_slices: 2,
            dt: 0.05,
            ns_samples: 8,
            bs_samples: 8,
            quadrature: TimeQuadrature::default(),
            mode: DeformationMode::default(),
            max_iters: 3,
            tolerance: 1e-10,
            seed: 1,
            bound_slack: 0.1,
            n_pairs: 64,
        };
        let r = picard_iterate(&p, &ContractionBudget::new(1.0, 1.0), 0.1, &s).unwrap();
        assert!(r.converged);
        assert_eq!(r.iterates.len(), 1);
        assert!(r.growth_bound_holds());
    }
}
