use std::fmt::Write as _;
use std::sync::Arc;

use super::config::{DensitySpec, Experiment, RunConfig};
use super::oracle::{oracle_reference, HeatDatum, OracleSpec, PeriodicProblem1d};
use super::{ExperimentReport, Overrides, ResultRow};
use crate::feynman_kac::{
    augment_inhomogeneous, solve_final_value, solve_final_value_homogeneous, solve_initial_value,
    solve_initial_value_backward, Diffusion, Direction, ParabolicSystem, SystemBounds,
};
use crate::fields::{AnalyticField, FieldSpec, GaussianVortexBlob, GridGeometry, VectorField};
use crate::kernel::{girsanov_weights, TimeGrid};
use crate::ns_solver::{
    compute_tau_bound, ns_map, picard_iterate, ContractionBudget, NsEstimator, PicardSettings,
};
use crate::potential::{
    biot_savart_samples, biot_savart_truncation, hessian_samples, hessian_truncation, newtonian_potential,
    potential_gradient, DensityBounds, TimeQuadrature,
};
use crate::stats::SampleSet;
use crate::{BrownianDriver, Error, MCEstimate, Result, Vec3};

/// Time quadrature for the ball densities. The node integrands of an
/// indicator are heavy-tailed at large `s` (the variance grows like
/// `√s_max`), so the mass-based tail correction takes over from `s = 300`.
fn ball_quadrature() -> TimeQuadrature {
    TimeQuadrature { s_max: 300.0, ..Default::default() }
}

/// Maps any error raised while resolving settings to a configuration error.
fn conf<T>(r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    })
}

fn label(x: &[f64]) -> String {
    let parts: Vec<String> = x.iter().map(|v| format!("{v}")).collect();
    format!("({})", parts.join(","))
}

const AXES: [&str; 3] = ["x", "y", "z"];

struct Common {
    seed: u64,
    k: f64,
}

impl Common {
    fn new(cfg: &RunConfig, ov: &Overrides) -> Self {
        Self { seed: ov.seed.unwrap_or(cfg.seed()), k: cfg.check.sigma_multiplier.unwrap_or(3.0) }
    }

    fn driver(&self) -> BrownianDriver {
        BrownianDriver::new(self.seed)
    }
}

fn samples(cfg: &RunConfig, ov: &Overrides, default: usize) -> usize {
    ov.samples.or(cfg.solver.n_samples).unwrap_or(default)
}

fn points3(cfg: &RunConfig, default: &[[f64; 3]]) -> Result<Vec<Vec3>> {
    match &cfg.check.points {
        None => Ok(default.iter().map(|p| Vec3::from(*p)).collect()),
        Some(pts) => pts
            .iter()
            .map(|p| {
                if p.len() == 3 {
                    Ok(Vec3::new(p[0], p[1], p[2]))
                } else {
                    Err(Error::Config(format!("`check.points`: expected 3 coordinates, got {}", p.len())))
                }
            })
            .collect(),
    }
}

/// Runs one experiment. Errors while resolving settings are reported as
/// [`Error::Config`]; everything else is a runtime failure.
pub fn run_experiment(experiment: Experiment, cfg: &RunConfig, ov: Overrides) -> Result<ExperimentReport> {
    let mut report = ExperimentReport::new(experiment);
    let common = Common::new(cfg, &ov);
    report.note(format!("seed: {}", common.seed));
    match experiment {
        Experiment::HeatCheck => heat_check(cfg, &ov, &common, &mut report)?,
        Experiment::PoissonCheck => poisson_check(cfg, &ov, &common, &mut report)?,
        Experiment::GradientCheck => gradient_check(cfg, &ov, &common, &mut report)?,
        Experiment::BiotSavartCheck => biot_savart_check(cfg, &ov, &common, &mut report)?,
        Experiment::FkSystemCheck => fk_system_check(cfg, &ov, &common, &mut report)?,
        Experiment::FkReversalCheck => fk_reversal_check(cfg, &ov, &common, &mut report)?,
        Experiment::GirsanovCheck => girsanov_check(cfg, &ov, &common, &mut report)?,
        Experiment::TauBound => tau_bound(cfg, &mut report)?,
        Experiment::NsSolve => ns_solve(cfg, &ov, &common, &mut report)?,
        Experiment::ConvergenceStudy => {
            let study = convergence_settings(cfg, &ov, &common)?;
            emit_convergence_study(&study, &mut report)?;
        }
    }
    Ok(report)
}

/// `∂_t v + ½σ²Δv + λv = 0` on `ℝ^d`, `v(τ) = φ`, evaluated at time 0.
fn heat_system(datum: HeatDatum, sigma: f64, rate: f64, tau: f64) -> Result<ParabolicSystem> {
    let sup = match datum {
        HeatDatum::Cosine { amplitude, .. } | HeatDatum::GaussianBump { amplitude, .. } => amplitude.abs(),
    };
    let mut sys = ParabolicSystem::new(datum.dim(), 1, Direction::FinalCondition { terminal_time: tau }, move |x, out| {
        out[0] = datum.eval(x)
    })?
    .with_diffusion(Diffusion::Scalar(sigma))
    .with_bounds(SystemBounds { coupling: Some(rate.abs()), source: None, datum: Some(sup) });
    if rate != 0.0 {
        sys = sys.with_coupling(move |_, _, out| out[0] = rate);
    }
    Ok(sys)
}

fn heat_check(cfg: &RunConfig, ov: &Overrides, c: &Common, report: &mut ExperimentReport) -> Result<()> {
    let e = Experiment::HeatCheck;
    let datum = cfg.check.datum.unwrap_or(HeatDatum::Cosine { amplitude: 1.0, wavenumber: 2.0 });
    let rate = cfg.check.rate.unwrap_or(0.0);
    let tau = cfg.check.time.unwrap_or(0.5);
    let dt = cfg.solver.dt.unwrap_or(1e-3);
    let n = samples(cfg, ov, 100_000);
    let coef = cfg.check.discretization_coefficient.unwrap_or(0.5);
    let points: Vec<Vec<f64>> = match (&cfg.check.points, datum.dim()) {
        (Some(p), _) => p.clone(),
        (None, 1) => vec![vec![0.0], vec![0.3], vec![1.0]],
        (None, d) => vec![vec![0.0; d], {
            let mut v = vec![0.0; d];
            v[0] = 0.5;
            v
        }],
    };
    if points.iter().any(|p| p.len() != datum.dim()) {
        return Err(Error::Config(format!("`check.points` must have {} coordinates", datum.dim())));
    }
    let grid = conf(TimeGrid::with_step(tau, dt))?;
    let sys = conf(heat_system(datum, 1.0, rate, tau))?;
    let oracle = OracleSpec::HeatConvolution { datum, sigma: 1.0, rate };
    report.note(format!("datum: {datum:?}, rate {rate}, elapsed time {tau}, Δs = {}, N = {n}", grid.dt()));
    report.note(format!("tolerance: {}·σ + {coef}·Δs + oracle error", c.k));
    let driver = c.driver();
    for x in &points {
        let est = solve_final_value_homogeneous(&sys, 0.0, x, grid, &driver, n)?;
        let o = conf(oracle_reference(&oracle, x, tau))?;
        let tol = c.k * est.std_error[0] + coef * grid.dt() + o.error;
        report.rows.push(ResultRow::compare(e, format!("v{}", label(x)), est.value[0], est.std_error[0], o.value[0], tol));
    }
    Ok(())
}

type Density = Box<dyn Fn(&Vec3) -> f64 + Sync>;

fn density_fn(d: DensitySpec) -> (Density, DensityBounds) {
    match d {
        DensitySpec::UnitBall { radius } => {
            let mut b = DensityBounds::unit_ball();
            if radius != 1.0 {
                let vol = 4.0 / 3.0 * std::f64::consts::PI * radius.powi(3);
                b = DensityBounds {
                    lp: vec![(1.0, vol), (f64::INFINITY, 1.0)],
                    mass: Some(vol),
                    second_moment: Some(0.6 * radius * radius * vol),
                    support: Some(crate::potential::Support { center: Vec3::zeros(), radius }),
                    ..Default::default()
                };
            }
            (Box::new(move |y: &Vec3| if y.norm_squared() <= radius * radius { 1.0 } else { 0.0 }), b)
        }
        DensitySpec::GaussianBump { amplitude, width } => (
            Box::new(move |y: &Vec3| amplitude * (-y.norm_squared() / (2.0 * width * width)).exp()),
            DensityBounds::gaussian(amplitude.abs(), width),
        ),
    }
}

fn quadrature(cfg: &RunConfig, base: TimeQuadrature) -> Result<TimeQuadrature> {
    let q = cfg.solver.quadrature.resolve(base);
    conf(q.validate())?;
    Ok(q)
}

fn poisson_check(cfg: &RunConfig, ov: &Overrides, c: &Common, report: &mut ExperimentReport) -> Result<()> {
    let e = Experiment::PoissonCheck;
    let radius = match cfg.check.density.unwrap_or(DensitySpec::UnitBall { radius: 1.0 }) {
        DensitySpec::UnitBall { radius } if radius > 0.0 => radius,
        _ => return Err(Error::Config("poisson-check needs a ball density with positive radius".into())),
    };
    let (f, bounds) = density_fn(DensitySpec::UnitBall { radius });
    let points = points3(cfg, &[[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]])?;
    let quad = quadrature(cfg, ball_quadrature())?;
    let n = samples(cfg, ov, 100_000);
    let oracle = OracleSpec::BallPotential { radius, derivative: false };
    report.note(format!("density: ball of radius {radius}; N = {n}; quadrature {quad:?}"));
    report.note(format!("tolerance: {}·σ + quadrature tolerance {}", c.k, quad.tolerance));
    let driver = c.driver();
    for x in points {
        let est = newtonian_potential(f.as_ref(), &bounds, x, &quad, &driver, n)?;
        let o = oracle_reference(&oracle, x.as_slice(), 0.0)?;
        let tol = c.k * est.std_error()[0] + quad.tolerance + o.error;
        report.note(format!("Nf{}: truncation bound {:.2e}", label(x.as_slice()), est.truncation));
        report
            .rows
            .push(ResultRow::compare(e, format!("Nf{}", label(x.as_slice())), est.value()[0], est.std_error()[0], o.value[0], tol));
    }
    Ok(())
}

fn gradient_check(cfg: &RunConfig, ov: &Overrides, c: &Common, report: &mut ExperimentReport) -> Result<()> {
    let e = Experiment::GradientCheck;
    let n = samples(cfg, ov, 100_000);
    let driver = c.driver();
    let (ball, bump) = match cfg.check.density {
        None => (Some(1.0), Some((1.0, 1.0))),
        Some(DensitySpec::UnitBall { radius }) => (Some(radius), None),
        Some(DensitySpec::GaussianBump { amplitude, width }) => (None, Some((amplitude, width))),
    };
    if let Some(radius) = ball {
        let (f, bounds) = density_fn(DensitySpec::UnitBall { radius });
        let points = if bump.is_none() { points3(cfg, &[[2.0, 0.0, 0.0]])? } else { vec![Vec3::new(2.0, 0.0, 0.0)] };
        let quad = quadrature(cfg, ball_quadrature())?;
        let oracle = OracleSpec::BallPotential { radius, derivative: true };
        report.note(format!("gradient: ball of radius {radius}; N = {n}; quadrature {quad:?}"));
        for x in points {
            let est = potential_gradient(f.as_ref(), &bounds, x, &quad, &driver, n)?;
            let o = oracle_reference(&oracle, x.as_slice(), 0.0)?;
            for i in 0..3 {
                let tol = c.k * est.std_error()[i] + quad.tolerance + o.error;
                report.rows.push(ResultRow::compare(
                    e,
                    format!("d{}Nf{}", AXES[i], label(x.as_slice())),
                    est.value()[i],
                    est.std_error()[i],
                    o.value[i],
                    tol,
                ));
            }
        }
    }
    if let Some((amplitude, width)) = bump {
        let density = DensitySpec::GaussianBump { amplitude, width };
        let (f, bounds) = density_fn(density);
        let points = if ball.is_none() { points3(cfg, &[[0.0, 0.0, 0.0]])? } else { vec![Vec3::zeros()] };
        let quad = quadrature(cfg, TimeQuadrature { s_min: 1e-6, n_nodes: 40, tolerance: 1e-2, ..Default::default() })?;
        report.note(format!("Hessian: Gaussian bump amplitude {amplitude}, width {width}; quadrature {quad:?}"));
        for x in points {
            let trunc = hessian_truncation(&bounds, &x, &quad)?;
            let set = hessian_samples(f.as_ref(), &[x], &quad, &driver, n)?;
            let (trace, se) = set.linear(&[(0, -1.0), (4, -1.0), (8, -1.0)]);
            let tol = c.k * se + quad.tolerance.max(3.0 * trunc);
            report.rows.push(ResultRow::compare(e, format!("-trace D2Nf{}", label(x.as_slice())), trace, se, f(&x), tol));
        }
    }
    Ok(())
}

fn biot_savart_check(cfg: &RunConfig, ov: &Overrides, c: &Common, report: &mut ExperimentReport) -> Result<()> {
    let e = Experiment::BiotSavartCheck;
    let default_blob = FieldSpec { amplitude: Some(1.0), scale: Some(0.5), ..FieldSpec::named("gaussian_vortex_blob") };
    let velocity = conf(cfg.field(cfg.problem.initial_vorticity.as_ref().unwrap_or(&default_blob)))?;
    let xi = velocity.vorticity();
    let bounds = xi
        .bounds()
        .ok_or_else(|| Error::Config("biot-savart-check needs a vorticity with known integrability bounds".into()))?;
    let scale = match velocity {
        AnalyticField::VortexBlob(GaussianVortexBlob { scale, .. }) => scale,
        _ => 1.0,
    };
    let points = points3(cfg, &[[0.3, 0.1, 0.0], [0.0, 0.5, 0.2], [-0.4, -0.2, 0.1], [0.2, -0.3, -0.25], [0.1, 0.2, 0.4]])?;
    let h = cfg.check.fd_spacing.unwrap_or(0.05);
    let quad = quadrature(cfg, TimeQuadrature { s_min: 1e-6, ..Default::default() })?;
    let n = samples(cfg, ov, 100_000);
    let driver = c.driver();
    report.note(format!("vorticity: curl of {velocity:?}; N = {n}; h = {h}; quadrature {quad:?}"));
    report.note(format!(
        "velocity tolerance: {k}·σ + truncation + kernel-quadrature error; curl/div tolerance: {k}·σ + 2·(finite-difference error of the exact velocity) + truncation/h",
        k = c.k
    ));
    for x in points {
        let mut stencil = vec![x];
        for j in 0..3 {
            let mut d = Vec3::zeros();
            d[j] = h;
            stencil.push(x + d);
            stencil.push(x - d);
        }
        let set = biot_savart_samples(&xi, 0.0, &stencil, &quad, &driver, n)?;
        let trunc = biot_savart_truncation(&bounds, &x, &quad)?;
        let oracle = OracleSpec::KernelBiotSavart { vorticity: velocity, cutoff: x.norm() + 12.0 * scale, resolution: 48 };
        let o = oracle_reference(&oracle, x.as_slice(), 0.0)?;
        for i in 0..3 {
            let (v, se) = set.column(i);
            let tol = c.k * se + trunc + o.error;
            report.rows.push(ResultRow::compare(e, format!("u{}{}", AXES[i], label(x.as_slice())), v, se, o.value[i], tol));
        }
        // column of component `comp` at stencil point `x ± h e_axis`
        let col = |axis: usize, plus: bool, comp: usize| (1 + 2 * axis + usize::from(!plus)) * 3 + comp;
        let dq = 1.0 / (2.0 * h);
        let deriv = |comp: usize, axis: usize, sign: f64| [(col(axis, true, comp), sign * dq), (col(axis, false, comp), -sign * dq)];
        let exact_fd = |comp: usize, axis: usize| {
            let mut d = Vec3::zeros();
            d[axis] = h;
            (velocity.value(0.0, &(x + d))[comp] - velocity.value(0.0, &(x - d))[comp]) * dq
        };
        let target = xi.value(0.0, &x);
        for i in 0..3 {
            let (j, k) = ((i + 1) % 3, (i + 2) % 3);
            let terms: Vec<(usize, f64)> = deriv(k, j, 1.0).into_iter().chain(deriv(j, k, -1.0)).collect();
            let (v, se) = set.linear(&terms);
            let fd_err = (exact_fd(k, j) - exact_fd(j, k) - target[i]).abs();
            let tol = c.k * se + 2.0 * fd_err + trunc / h;
            report.rows.push(ResultRow::compare(e, format!("curl_{}{}", AXES[i], label(x.as_slice())), v, se, target[i], tol));
        }
        let terms: Vec<(usize, f64)> = (0..3).flat_map(|a| deriv(a, a, 1.0)).collect();
        let (v, se) = set.linear(&terms);
        let fd_err = (0..3).map(|a| exact_fd(a, a)).sum::<f64>().abs();
        let tol = c.k * se + 2.0 * fd_err + trunc / h;
        report.rows.push(ResultRow::compare(e, format!("div{}", label(x.as_slice())), v, se, 0.0, tol));
    }
    Ok(())
}

fn fk_system_check(cfg: &RunConfig, ov: &Overrides, c: &Common, report: &mut ExperimentReport) -> Result<()> {
    let e = Experiment::FkSystemCheck;
    let tau = cfg.check.time.unwrap_or(1.0);
    let dt = cfg.solver.dt.unwrap_or(1e-2);
    let n = samples(cfg, ov, 20_000);
    let grid = conf(TimeGrid::with_step(tau, dt))?;
    let driver = c.driver();
    let x0 = 0.3;
    let machine = 1e-12;
    report.note(format!("elapsed time {tau}, Δs = {}, N = {n}", grid.dt()));

    // Nilpotent coupling on frozen paths: U_T = I + τ𝒟 exactly.
    let nil = conf(ParabolicSystem::new(1, 2, Direction::FinalCondition { terminal_time: tau }, |x, out| {
        out[0] = x[0].cos();
        out[1] = x[0].sin();
    }))?
    .with_coupling(|_, _, out| out.copy_from_slice(&[0.0, 1.0, 0.0, 0.0]));
    let est = solve_final_value_homogeneous(&nil, 0.0, &[x0], grid, &driver, 4)?;
    let exact = [x0.cos() + tau * x0.sin(), x0.sin()];
    for i in 0..2 {
        report.rows.push(ResultRow::compare(e, format!("nilpotent v{}", i + 1), est.value[i], est.std_error[i], exact[i], machine));
    }

    // Inhomogeneous system against its augmented homogeneous form.
    let inhom = conf(ParabolicSystem::new(1, 2, Direction::FinalCondition { terminal_time: tau }, |x, out| {
        out[0] = x[0].cos();
        out[1] = 1.0 / (1.0 + x[0] * x[0]);
    }))?
    .with_drift(|_, x, out| out[0] = 0.5 * x[0].cos())
    .with_diffusion(Diffusion::Scalar(1.0))
    .with_coupling(|t, x, out| out.copy_from_slice(&[0.1 * x[0].sin(), 0.3, -0.2, 0.1 * t]))
    .with_source(|t, x, out| {
        out[0] = (x[0] + t).sin();
        out[1] = 0.5;
    });
    let aug = augment_inhomogeneous(&inhom);
    let a = solve_final_value(&inhom, 0.0, &[x0], grid, &driver, n)?;
    let b = solve_final_value_homogeneous(&aug, 0.0, &[x0], grid, &driver, n)?;
    for i in 0..2 {
        report.rows.push(ResultRow::compare(e, format!("augmented v{}", i + 1), a.value[i], a.std_error[i], b.value[i], machine));
    }
    report.rows.push(ResultRow::compare(e, "augmented v3", b.value[2], b.std_error[2], 1.0, machine));

    // Constant coupling with a constant datum: e^{Aτ}φ.
    let matrix = vec![0.3, 1.0, -0.5, 0.1];
    let phi = vec![1.0, 2.0];
    let m2 = matrix.clone();
    let p2 = phi.clone();
    let lin = conf(ParabolicSystem::new(1, 2, Direction::FinalCondition { terminal_time: tau }, move |_, out| {
        out.copy_from_slice(&p2)
    }))?
    .with_diffusion(Diffusion::Scalar(1.0))
    .with_coupling(move |_, _, out| out.copy_from_slice(&m2));
    let est = solve_final_value_homogeneous(&lin, 0.0, &[x0], grid, &driver, 16)?;
    let o = oracle_reference(&OracleSpec::LinearOdeMean { matrix, datum: phi }, &[], tau)?;
    let coef = cfg.check.discretization_coefficient.unwrap_or(2.0);
    for i in 0..2 {
        let tol = c.k * est.std_error[i] + coef * grid.dt() + o.error;
        report.rows.push(ResultRow::compare(e, format!("constant coupling v{}", i + 1), est.value[i], est.std_error[i], o.value[i], tol));
    }

    // Variable coefficients against Crank–Nicolson.
    let problem = PeriodicProblem1d { drift: [0.2, 0.5], sigma: 1.0, potential: [0.1, 0.3], source: 0.4, wavenumber: 1 };
    let fd_tau = tau.min(0.5);
    let fd_grid = conf(TimeGrid::with_step(fd_tau, dt.max(5e-3)))?;
    let p = problem;
    let scalar = conf(ParabolicSystem::new(1, 1, Direction::FinalCondition { terminal_time: fd_tau }, move |x, out| {
        out[0] = p.datum_at(x[0])
    }))?
    .with_drift(move |_, x, out| out[0] = p.drift_at(x[0]))
    .with_diffusion(Diffusion::Scalar(p.sigma))
    .with_coupling(move |_, x, out| out[0] = p.potential_at(x[0]))
    .with_source(move |_, x, out| out[0] = p.source_at(x[0]));
    let oracle = OracleSpec::FdParabolic1d { problem, cells: 256, steps: 400 };
    report.note(format!("finite-difference comparison: {problem:?}, elapsed time {fd_tau}, Δs = {}", fd_grid.dt()));
    for x in [0.0, 1.0, 2.5] {
        let est = solve_final_value(&scalar, 0.0, &[x], fd_grid, &driver, n)?;
        let o = oracle_reference(&oracle, &[x], fd_tau)?;
        let tol = c.k * est.std_error[0] + coef * fd_grid.dt() + o.error;
        report.rows.push(ResultRow::compare(e, format!("periodic v({x})"), est.value[0], est.std_error[0], o.value[0], tol));
    }
    Ok(())
}

/// A three-dimensional, three-component initial-value system with every
/// coefficient switched on.
pub(crate) fn reversal_system() -> Result<ParabolicSystem> {
    Ok(ParabolicSystem::new(3, 3, Direction::InitialCondition, |x, out| {
        out[0] = x[0];
        out[1] = x[1].cos();
        out[2] = (-(x[0] * x[0] + x[1] * x[1] + x[2] * x[2])).exp();
    })?
    .with_drift(|t, x, out| {
        out[0] = x[1].sin();
        out[1] = x[2].cos();
        out[2] = 0.1 * t;
    })
    .with_diffusion(Diffusion::Scalar(0.7))
    .with_coupling(|t, x, out| {
        out.copy_from_slice(&[0.1, 0.5 * x[0].sin(), 0.0, -0.5 * x[0].sin(), 0.1, t, 0.0, 0.2, -0.3])
    })
    .with_source(|t, x, out| {
        out[0] = x[0].cos();
        out[1] = t;
        out[2] = x[2].sin();
    }))
}

fn fk_reversal_check(cfg: &RunConfig, ov: &Overrides, c: &Common, report: &mut ExperimentReport) -> Result<()> {
    let e = Experiment::FkReversalCheck;
    let t = cfg.check.time.unwrap_or(0.5);
    let dt = cfg.solver.dt.unwrap_or(1e-2);
    let n = samples(cfg, ov, 2_000);
    let grid = conf(TimeGrid::with_step(t, dt))?;
    let points = points3(cfg, &[[0.1, 0.2, 0.3], [-0.5, 0.0, 1.0]])?;
    let sys = reversal_system()?;
    let driver = c.driver();
    report.note(format!("t = {t}, Δs = {}, N = {n}; pass requires bit-identical values and errors", grid.dt()));
    for x in points {
        let f = solve_initial_value(&sys, t, x.as_slice(), grid, &driver, n)?;
        let b = solve_initial_value_backward(&sys, t, x.as_slice(), grid, &driver, n)?;
        for i in 0..3 {
            let same = f.value[i].to_bits() == b.value[i].to_bits() && f.std_error[i].to_bits() == b.std_error[i].to_bits();
            let mut row = ResultRow::compare(e, format!("v{}{}", i + 1, label(x.as_slice())), f.value[i], f.std_error[i], b.value[i], 0.0);
            row.pass = same;
            report.rows.push(row);
        }
    }
    Ok(())
}

fn girsanov_check(cfg: &RunConfig, ov: &Overrides, c: &Common, report: &mut ExperimentReport) -> Result<()> {
    let e = Experiment::GirsanovCheck;
    let nu = cfg.nu();
    let t = cfg.check.time.unwrap_or(1.0);
    let dt = cfg.solver.dt.unwrap_or(1e-2);
    let n = samples(cfg, ov, 100_000);
    let grid = conf(TimeGrid::with_step(t, dt))?;
    let driver = c.driver();
    let constant = FieldSpec { vector: Some([0.4, -0.3, 0.2]), ..FieldSpec::named("constant") };
    let u = conf(cfg.field(cfg.problem.velocity.as_ref().unwrap_or(&constant)))?;
    let AnalyticField::Constant(cv) = u else {
        return Err(Error::Config("girsanov-check needs a `constant` velocity".into()));
    };
    report.note(format!("constant velocity {cv:?}, ν = {nu}, t = {t}, Δs = {}, N = {n}", grid.dt()));
    let ens = girsanov_weights(&u, Vec3::zeros(), t, nu, grid, &driver, n)?;
    let last = grid.n_steps();
    let set = SampleSet::collect(n, 2, c.seed, |i, row| {
        let z = ens.weight(i, last).expect("weights are stored");
        row[0] = z;
        row[1] = z * z;
        Ok(())
    })?;
    let (z1, s1) = set.column(0);
    let (z2, s2) = set.column(1);
    report.rows.push(ResultRow::compare(e, "E[Z_t]", z1, s1, 1.0, c.k * s1));
    let second = (cv.norm_squared() * t / (2.0 * nu)).exp();
    report.rows.push(ResultRow::compare(e, "E[Z_t^2]", z2, s2, second, c.k * s2));

    // Direct and weighted NS map under a shear.
    let rate = cfg.check.rate.unwrap_or(0.5);
    let shear = AnalyticField::SolenoidalShear { rate };
    let blob = FieldSpec { amplitude: Some(1.0), scale: Some(0.5), ..FieldSpec::named("gaussian_vortex_blob") };
    let norms = cfg.norm_settings(3.0, 0.25);
    let horizon = 0.5f64.min(t);
    let problem = conf(cfg.ns_problem(&blob, horizon, &norms))?;
    let mode = cfg.solver.mode.unwrap_or_default();
    let x = Vec3::new(0.2, -0.1, 0.0);
    let ns_dt = cfg.solver.dt.unwrap_or(1e-2);
    let a = ns_map(&shear, &problem, horizon, x, ns_dt, &driver, n, mode, NsEstimator::Direct)?;
    let b = ns_map(&shear, &problem, horizon, x, ns_dt, &driver, n, mode, NsEstimator::Girsanov)?;
    report.note(format!("NS map under shear rate {rate} at {} and t = {horizon}, mode {mode:?}", label(x.as_slice())));
    for i in 0..3 {
        let se = a.std_error[i].hypot(b.std_error[i]);
        let mut row = ResultRow::compare(e, format!("xi{} direct vs weighted", AXES[i]), a.value[i], a.std_error[i], b.value[i], c.k * se);
        row.std_error = se;
        report.rows.push(row);
    }
    Ok(())
}

fn tau_bound(cfg: &RunConfig, report: &mut ExperimentReport) -> Result<()> {
    let e = Experiment::TauBound;
    let mut base = ContractionBudget::new(2.0, 1.0);
    base.c_tilde = 0.5;
    base.growth_only = true;
    let budget = cfg.budget.resolve(base);
    conf(budget.validate())?;
    let horizon = cfg.problem.horizon.unwrap_or(10.0);
    let eps0 = match (cfg.problem.eps0, &cfg.problem.initial_vorticity) {
        (Some(v), _) => v,
        (None, Some(spec)) => {
            let norms = cfg.norm_settings(3.0, 0.25);
            conf(cfg.ns_problem(spec, horizon, &norms))?.eps0
        }
        (None, None) => 1.0,
    };
    report.note(format!("ε₀ = {eps0}, T = {horizon}, budget {budget:?}"));
    let tau = compute_tau_bound(eps0, &budget, horizon)?;
    let growth = budget.growth(tau) * eps0;
    let contraction = budget.c_tilde * budget.c_nu_p * budget.cm_model.eval(tau, budget.m_radius) * eps0;
    let resolution = 1e-6 * tau;
    match cfg.check.expected_tau {
        Some(expected) => {
            let tol = cfg.check.tau_tolerance.unwrap_or(1e-4);
            report.rows.push(ResultRow::compare(e, "tau", tau, resolution, expected, tol));
        }
        None => report.rows.push(ResultRow::info(e, "tau", tau, resolution)),
    }
    report.rows.push(ResultRow::bounded(e, "growth condition e^{3τM}(1+τM)ε₀", growth, 0.0, budget.l_radius));
    if !budget.growth_only {
        let mut row = ResultRow::bounded(e, "contraction condition C̃·C(ν,p)·C_M(τ)·ε₀", contraction, 0.0, 1.0);
        row.pass = contraction < 1.0;
        report.rows.push(row);
    }

    let mut prev = tau;
    let mut monotone_m = true;
    for factor in [2.0, 4.0] {
        let mut b = budget;
        b.m_radius = budget.m_radius * factor;
        let t = compute_tau_bound(eps0, &b, horizon)?;
        report.rows.push(ResultRow::info(e, format!("tau(M={})", b.m_radius), t, 1e-6 * t));
        monotone_m &= t <= prev;
        prev = t;
    }
    report.rows.push(ResultRow::flag(e, "tau non-increasing in M", monotone_m));
    if eps0 > 0.0 {
        let half = compute_tau_bound(eps0 / 2.0, &budget, horizon)?;
        report.rows.push(ResultRow::info(e, format!("tau(eps0={})", eps0 / 2.0), half, 1e-6 * half));
        report.rows.push(ResultRow::flag(e, "tau non-increasing in eps0", half >= tau));
    }
    Ok(())
}

fn ns_solve(cfg: &RunConfig, ov: &Overrides, c: &Common, report: &mut ExperimentReport) -> Result<()> {
    if let Some(vspec) = &cfg.problem.velocity {
        return ns_transport(cfg, ov, c, report, vspec);
    }
    let e = Experiment::NsSolve;
    let blob = FieldSpec { amplitude: Some(0.02), scale: Some(0.5), ..FieldSpec::named("gaussian_vortex_blob") };
    let norms = cfg.norm_settings(2.0, 0.1);
    let problem = conf(cfg.ns_problem(&blob, 0.1, &norms))?;
    let budget = cfg.budget.resolve(ContractionBudget::new(1.0, 1.0));
    conf(budget.validate())?;
    let tau = match cfg.budget.tau {
        Some(t) => t,
        None => compute_tau_bound(problem.eps0, &budget, problem.horizon)?,
    };
    let geometry = conf(GridGeometry::centered_cube(
        cfg.solver.box_radius.unwrap_or(1.5),
        cfg.solver.spacing.unwrap_or(0.3),
    ))?;
    let n = samples(cfg, ov, 200);
    let settings = PicardSettings {
        geometry,
        n_slices: cfg.solver.n_slices.unwrap_or(3),
        dt: cfg.solver.dt.unwrap_or(1e-2),
        ns_samples: n,
        bs_samples: cfg.solver.bs_samples.unwrap_or(n),
        quadrature: quadrature(cfg, TimeQuadrature { s_min: 1e-5, s_max: 1e2, tolerance: 1.0, ..Default::default() })?,
        mode: cfg.solver.mode.unwrap_or_default(),
        max_iters: cfg.solver.max_iters.unwrap_or(5),
        tolerance: cfg.solver.tolerance.unwrap_or(0.0),
        seed: c.seed,
        bound_slack: cfg.solver.bound_slack.unwrap_or(0.1),
        n_pairs: 512,
    };
    report.note(format!("ν = {}, ε₀ = {:.6e}, τ = {tau:.6e}, budget {budget:?}", problem.nu, problem.eps0));
    report.note(format!("initial vorticity norms: {:?}", problem.xi0_norms));
    report.note(format!(
        "grid: {:?} nodes, spacing {}, {} slices, Δs = {}, N = {} (NS) / {} (BS)",
        geometry.dims, geometry.spacing, settings.n_slices, settings.dt, settings.ns_samples, settings.bs_samples
    ));
    let r = picard_iterate(&problem, &budget, tau, &settings)?;
    report.rows.push(ResultRow::info(e, "tau", tau, 1e-6 * tau));
    for (k, (d, se)) in r.distances.iter().zip(&r.distance_std_error).enumerate() {
        report.rows.push(ResultRow::info(e, format!("d_{k}"), *d, *se));
    }
    for (k, ratio) in r.ratios.iter().enumerate() {
        let rel = (r.distance_std_error[k] / r.distances[k]).hypot(r.distance_std_error[k + 1] / r.distances[k + 1]);
        report.rows.push(ResultRow::info(e, format!("d_{}/d_{k}", k + 1), *ratio, ratio * rel));
    }
    let need = cfg.check.min_contracting.unwrap_or(3);
    let run = r.contracting_run();
    let mut row = ResultRow::bounded(e, "consecutive contraction ratios below 1", run as f64, 0.0, need as f64);
    row.pass = run >= need || r.converged;
    row.oracle_value = Some(need as f64);
    row.tolerance = None;
    report.rows.push(row);
    report.rows.push(ResultRow::flag(e, "not diverged", !r.diverged));
    for g in &r.growth_checks {
        let mut row = ResultRow::bounded(e, format!("NSbound iterate {} t={}", g.iterate, g.time), g.norm, 0.0, g.bound);
        if let Some(b) = g.sup_bound {
            row.pass &= g.sup_norm <= b;
        }
        report.rows.push(row);
    }
    report.note(format!(
        "noise floor reached at: {}",
        r.noise_floor.map_or("not reached".to_string(), |k| format!("d_{k}"))
    ));
    report.note(format!("largest Biot–Savart truncation bound: {:.3e}", r.truncation));
    report.fields.push(("velocity".into(), r.final_velocity().clone()));
    report.fields.push(("vorticity".into(), r.final_vorticity().clone()));
    Ok(())
}

/// NS map along a prescribed Lamb–Oseen velocity, compared with the
/// analytic vorticity.
fn ns_transport(cfg: &RunConfig, ov: &Overrides, c: &Common, report: &mut ExperimentReport, vspec: &FieldSpec) -> Result<()> {
    let e = Experiment::NsSolve;
    let u = conf(cfg.field(vspec))?;
    let AnalyticField::LambOseen(lo) = u else {
        return Err(Error::Config("transport check needs `problem.velocity` = lamb_oseen_slice".into()));
    };
    let t = cfg.check.time.or(cfg.problem.horizon).unwrap_or(0.5);
    let dt = cfg.solver.dt.unwrap_or(1e-3);
    let n = samples(cfg, ov, 100_000);
    let coef = cfg.check.discretization_coefficient.unwrap_or(1.0);
    let norms = cfg.norm_settings(3.0, 0.25);
    let xi0 = Arc::new(u.vorticity());
    let mut problem = conf(crate::ns_solver::NSProblem::new(cfg.nu(), t, xi0, None, &norms))?;
    if let Some(eps) = cfg.problem.eps0 {
        problem.eps0 = eps;
    }
    let points = points3(cfg, &[[0.0, 0.0, 0.0], [0.5, 0.0, 0.0], [0.3, -0.4, 0.2], [-0.8, 0.6, 0.0], [1.0, 1.0, -0.5]])?;
    let mode = cfg.solver.mode.unwrap_or_default();
    let estimator = cfg.solver.estimator.unwrap_or_default();
    let oracle = OracleSpec::LambOseen { circulation: lo.circulation, nu: lo.nu, t0: lo.t0 };
    let driver = c.driver();
    report.note(format!("transport along {lo:?}: t = {t}, Δs = {dt}, N = {n}, mode {mode:?}, estimator {estimator:?}"));
    report.note(format!("tolerance: {}·σ + {coef}·Δs", c.k));
    if problem.xi0_norms.non_decaying {
        report.note("initial vorticity does not decay in x₃; its L^p norm describes the truncated box only");
    }
    for x in points {
        let est: MCEstimate = ns_map(&u, &problem, t, x, dt, &driver, n, mode, estimator)?;
        let o = oracle_reference(&oracle, x.as_slice(), t)?;
        for i in 0..3 {
            let tol = c.k * est.std_error[i] + coef * dt + o.error;
            report.rows.push(ResultRow::compare(
                e,
                format!("xi{}{}", AXES[i], label(x.as_slice())),
                est.value[i],
                est.std_error[i],
                o.value[i],
                tol,
            ));
        }
    }
    Ok(())
}

/// Settings of a convergence sweep on `∂_t v + ½∂_x²v + λv = 0`,
/// `v(τ) = φ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceStudy {
    pub datum: HeatDatum,
    pub rate: f64,
    pub elapsed: f64,
    pub x: f64,
    /// Step sizes, swept at `n_samples`.
    pub dt_values: Vec<f64>,
    pub n_samples: usize,
    /// Sample counts, swept at the smallest step.
    pub sample_values: Vec<usize>,
    pub seed: u64,
    /// Relative tolerance on `error(Δs₁)/error(Δs₂) = Δs₁/Δs₂`.
    pub dt_ratio_tolerance: f64,
    /// Relative tolerance on `σ(N₁)/σ(N₂) = √(N₂/N₁)`.
    pub se_ratio_tolerance: f64,
}

impl Default for ConvergenceStudy {
    fn default() -> Self {
        Self {
            datum: HeatDatum::Cosine { amplitude: 1.0, wavenumber: 0.5 },
            rate: 1.0,
            elapsed: 1.0,
            x: 0.0,
            dt_values: vec![0.1, 0.05, 0.025],
            n_samples: 1_000_000,
            sample_values: vec![250_000, 1_000_000],
            seed: 1,
            dt_ratio_tolerance: 0.3,
            se_ratio_tolerance: 0.2,
        }
    }
}

fn convergence_settings(cfg: &RunConfig, ov: &Overrides, c: &Common) -> Result<ConvergenceStudy> {
    let d = ConvergenceStudy::default();
    let datum = match (cfg.check.datum, cfg.check.wavenumber) {
        (Some(HeatDatum::GaussianBump { .. }), _) => {
            return Err(Error::Config("convergence-study uses a one-dimensional cosine datum".into()))
        }
        (Some(dat), _) => dat,
        (None, Some(k)) => HeatDatum::Cosine { amplitude: 1.0, wavenumber: k },
        (None, None) => d.datum,
    };
    let x = match &cfg.check.points {
        Some(p) if p.len() == 1 && p[0].len() == 1 => p[0][0],
        Some(_) => return Err(Error::Config("convergence-study takes a single one-dimensional point".into())),
        None => d.x,
    };
    Ok(ConvergenceStudy {
        datum,
        rate: cfg.check.rate.unwrap_or(d.rate),
        elapsed: cfg.check.time.unwrap_or(d.elapsed),
        x,
        dt_values: cfg.check.dt_values.clone().unwrap_or(d.dt_values),
        n_samples: samples(cfg, ov, d.n_samples),
        sample_values: cfg.check.sample_values.clone().unwrap_or(d.sample_values),
        seed: c.seed,
        ..d
    })
}

/// One sweep entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergencePoint {
    pub dt: f64,
    pub n_samples: usize,
    pub estimate: f64,
    pub std_error: f64,
    pub oracle: f64,
    pub error: f64,
}

fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let cov: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    cov / var
}

/// Runs the `Δs` and `N` sweeps, adding ratio and slope rows and the full
/// table (`convergence.csv`) to `report`.
pub fn emit_convergence_study(study: &ConvergenceStudy, report: &mut ExperimentReport) -> Result<Vec<ConvergencePoint>> {
    let e = Experiment::ConvergenceStudy;
    if study.dt_values.len() < 2 || study.sample_values.len() < 2 {
        return Err(Error::Config("a sweep needs at least two step sizes and two sample counts".into()));
    }
    let oracle = OracleSpec::HeatConvolution { datum: study.datum, sigma: 1.0, rate: study.rate };
    let o = oracle_reference(&oracle, &[study.x], study.elapsed)?.value[0];
    let sys = conf(heat_system(study.datum, 1.0, study.rate, study.elapsed))?;
    let driver = BrownianDriver::new(study.seed);
    let run = |dt: f64, n: usize| -> Result<ConvergencePoint> {
        let grid = conf(TimeGrid::with_step(study.elapsed, dt))?;
        let est = solve_final_value_homogeneous(&sys, 0.0, &[study.x], grid, &driver, n)?;
        Ok(ConvergencePoint {
            dt: grid.dt(),
            n_samples: n,
            estimate: est.value[0],
            std_error: est.std_error[0],
            oracle: o,
            error: (est.value[0] - o).abs(),
        })
    };
    let mut points = Vec::new();
    for &dt in &study.dt_values {
        points.push(run(dt, study.n_samples)?);
    }
    let dt_min = study.dt_values.iter().cloned().fold(f64::INFINITY, f64::min);
    let dt_min = TimeGrid::with_step(study.elapsed, dt_min).map_or(dt_min, |g| g.dt());
    let mut n_points = Vec::new();
    for &n in &study.sample_values {
        match points.iter().find(|p| p.dt == dt_min && p.n_samples == n) {
            Some(p) => n_points.push(*p),
            None => n_points.push(run(dt_min, n)?),
        }
    }

    report.note(format!(
        "v_t + ½v_xx + {}v = 0, datum {:?}, elapsed {}, x = {}; oracle {o:.12e}",
        study.rate, study.datum, study.elapsed, study.x
    ));
    let zero = points.iter().chain(&n_points).all(|p| p.oracle == 0.0 && p.estimate == 0.0);
    for p in &points {
        let q = format!("error[dt={},N={}]", p.dt, p.n_samples);
        if zero {
            report.rows.push(ResultRow::compare(e, q, p.error, p.std_error, 0.0, 0.0));
        } else {
            report.rows.push(ResultRow::info(e, q, p.error, p.std_error));
        }
    }
    for p in &n_points {
        report.rows.push(ResultRow::info(e, format!("std_error[dt={},N={}]", p.dt, p.n_samples), p.std_error, 0.0));
    }
    if zero {
        report.note("zero problem: every error vanishes, ratios are undefined");
    } else {
        for w in points.windows(2) {
            let (a, b) = (w[0], w[1]);
            let ratio = a.error / b.error;
            let se = ratio * (a.std_error / a.error).hypot(b.std_error / b.error);
            let expected = a.dt / b.dt;
            report.rows.push(ResultRow::compare(
                e,
                format!("error ratio dt {}→{}", a.dt, b.dt),
                ratio,
                se,
                expected,
                study.dt_ratio_tolerance * expected,
            ));
        }
        let xs: Vec<f64> = points.iter().map(|p| p.dt.ln()).collect();
        let ys: Vec<f64> = points.iter().map(|p| p.error.ln()).collect();
        report.rows.push(ResultRow::info(e, "slope log(error) vs log(dt)", least_squares_slope(&xs, &ys), 0.0));
        for w in n_points.windows(2) {
            let (a, b) = (w[0], w[1]);
            let ratio = a.std_error / b.std_error;
            let expected = (b.n_samples as f64 / a.n_samples as f64).sqrt();
            report.rows.push(ResultRow::compare(
                e,
                format!("std_error ratio N {}→{}", a.n_samples, b.n_samples),
                ratio,
                0.0,
                expected,
                study.se_ratio_tolerance * expected,
            ));
        }
        let xs: Vec<f64> = n_points.iter().map(|p| (p.n_samples as f64).ln()).collect();
        let ys: Vec<f64> = n_points.iter().map(|p| p.std_error.ln()).collect();
        report.rows.push(ResultRow::info(e, "slope log(std_error) vs log(N)", least_squares_slope(&xs, &ys), 0.0));
    }
    let mut table = String::from("dt,n_samples,estimate,std_error,oracle,error\n");
    for p in points.iter().chain(&n_points) {
        let _ = writeln!(table, "{},{},{},{},{},{}", p.dt, p.n_samples, p.estimate, p.std_error, p.oracle, p.error);
    }
    report.tables.push(("convergence".into(), table));
    points.extend(n_points);
    Ok(points)
}
