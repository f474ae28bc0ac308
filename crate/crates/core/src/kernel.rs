//! Brownian increments, Lagrangian paths, deformation matrices, Girsanov
//! weights and flow Jacobians.
//!
//! Paths solve, for `0 ≤ s ≤ t`,
//!
//! ```text
//! dX_s = -u(t - s, X_s) ds + sqrt(2ν) dW_s,      X_0 = x
//! dU_s = U_s 𝒟_u(t - s, X_s) ds,                  U_0 = I
//! ```
//!
//! with explicit Euler–Maruyama for `X` and the multiplicative forward Euler
//! update `U ← U (I + Δs 𝒟_u)` for `U`. Sample `i` always consumes the
//! Gaussian stream `driver.stream_for(i)` one triple per step, so every
//! estimator built on these walks is a function of the master seed only.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::invalid;
use crate::fields::VectorField;
use crate::rng::BrownianDriver;
use crate::{Error, Mat3, Result, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeGrid {
    horizon: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self> {
        if n_steps == 0 {
            return Err(invalid("time grid needs at least one step"));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(invalid(format!("time horizon must be finite and positive, got {horizon}")));
        }
        Ok(Self { horizon, n_steps })
    }

    /// Grid on `[0, horizon]` with step as close to `dt` as an integer
    /// number of steps allows.
    pub fn with_step(horizon: f64, dt: f64) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(invalid("time step must be positive"));
        }
        let n = (horizon / dt).round().max(1.0);
        Self::new(horizon, n as usize)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    /// `s_k = k·Δs`; `s_n` is exactly the horizon.
    #[inline]
    pub fn node(&self, k: usize) -> f64 {
        self.horizon * (k as f64) / (self.n_steps as f64)
    }
}

/// Which part of `∇u` drives the deformation matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeformationMode {
    FullGradient,
    /// `½(∇u + ∇uᵀ)`.
    #[default]
    SymmetricPart,
}

impl DeformationMode {
    #[inline]
    pub fn apply(self, grad: &Mat3) -> Mat3 {
        match self {
            DeformationMode::FullGradient => *grad,
            DeformationMode::SymmetricPart => (grad + grad.transpose()) * 0.5,
        }
    }
}

pub fn spectral_norm(m: &Mat3) -> f64 {
    (m.transpose() * m).symmetric_eigenvalues().max().max(0.0).sqrt()
}

fn finite3(v: &Vec3) -> bool {
    v.iter().all(|c| c.is_finite())
}

fn finite33(m: &Mat3) -> bool {
    m.iter().all(|c| c.is_finite())
}

/// Brownian increments `ΔW` of shape `n_samples × n_steps × 3`.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianIncrements {
    data: Vec<f64>,
    n_samples: usize,
    n_steps: usize,
}

impl BrownianIncrements {
    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn get(&self, sample: usize, step: usize) -> Vec3 {
        let o = (sample * self.n_steps + step) * 3;
        Vec3::new(self.data[o], self.data[o + 1], self.data[o + 2])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

pub fn sample_brownian_increments(
    driver: &BrownianDriver,
    grid: &TimeGrid,
    n_samples: usize,
) -> Result<BrownianIncrements> {
    if n_samples == 0 {
        return Err(invalid("n_samples must be at least 1"));
    }
    let n_steps = grid.n_steps();
    let scale = grid.dt().sqrt();
    let mut data = vec![0.0; n_samples * n_steps * 3];
    data.par_chunks_mut(n_steps * 3).enumerate().for_each(|(i, row)| {
        let mut stream = driver.stream_for(i as u64);
        for v in row.iter_mut() {
            *v = scale * stream.standard_normal();
        }
    });
    Ok(BrownianIncrements { data, n_samples, n_steps })
}

/// Inputs shared by every path of an ensemble.
#[derive(Clone, Copy)]
pub struct PathSpec<'a> {
    pub velocity: &'a dyn VectorField,
    pub start: Vec3,
    pub nu: f64,
    pub grid: TimeGrid,
    /// `None` skips the deformation matrices.
    pub mode: Option<DeformationMode>,
}

impl PathSpec<'_> {
    fn validate(&self) -> Result<()> {
        if !(self.nu.is_finite() && self.nu > 0.0) {
            return Err(invalid("viscosity must be positive"));
        }
        if !finite3(&self.start) {
            return Err(invalid("start point must be finite"));
        }
        Ok(())
    }
}

/// Simulates one Lagrangian path and calls `visit(k, t - s_k, X_k, U_k)` for
/// `k = 0..=n_steps`. `U_k` stays the identity when `spec.mode` is `None`.
pub fn walk_lagrangian<F>(spec: &PathSpec<'_>, driver: &BrownianDriver, sample: usize, mut visit: F) -> Result<()>
where
    F: FnMut(usize, f64, &Vec3, &Mat3),
{
    spec.validate()?;
    let grid = spec.grid;
    let n = grid.n_steps();
    let dt = grid.dt();
    let noise = (2.0 * spec.nu * dt).sqrt();
    let mut stream = driver.stream_for(sample as u64);
    let mut x = spec.start;
    let mut u_mat = Mat3::identity();
    for k in 0..n {
        let time = grid.node(n - k);
        visit(k, time, &x, &u_mat);
        let vel = spec.velocity.value(time, &x);
        if !finite3(&vel) {
            return Err(Error::NonFinite { what: "velocity", sample, step: k });
        }
        if let Some(mode) = spec.mode {
            let grad = spec.velocity.gradient(time, &x);
            if !finite33(&grad) {
                return Err(Error::NonFinite { what: "velocity gradient", sample, step: k });
            }
            u_mat += u_mat * mode.apply(&grad) * dt;
        }
        x += -vel * dt + stream.gaussian3() * noise;
    }
    if !finite3(&x) || !finite33(&u_mat) {
        return Err(Error::NonFinite { what: "path state", sample, step: n });
    }
    visit(n, 0.0, &x, &u_mat);
    Ok(())
}

/// Pure Brownian path `Y = x + sqrt(2ν) W` with the log Girsanov weight that
/// turns expectations over `Y` into expectations over the drifted paths of
/// [`walk_lagrangian`]:
///
/// ```text
/// log Z_s = (2ν)^{-1/2} ∫ <b, dW> - (4ν)^{-1} ∫ |b|² dr,   b = -u(t - r, Y_r)
/// ```
///
/// The discrete accumulation is the exact likelihood ratio of the Euler
/// chain against the Brownian chain. `visit(k, t - s_k, Y_k, V_k, log Z_k)`
/// sees the deformation `V` integrated along `Y`.
pub fn walk_girsanov<F>(spec: &PathSpec<'_>, driver: &BrownianDriver, sample: usize, mut visit: F) -> Result<()>
where
    F: FnMut(usize, f64, &Vec3, &Mat3, f64),
{
    spec.validate()?;
    let grid = spec.grid;
    let n = grid.n_steps();
    let dt = grid.dt();
    let sqdt = dt.sqrt();
    let scale = (2.0 * spec.nu).sqrt();
    let mut stream = driver.stream_for(sample as u64);
    let mut y = spec.start;
    let mut v_mat = Mat3::identity();
    let mut log_z = 0.0;
    for k in 0..n {
        let time = grid.node(n - k);
        visit(k, time, &y, &v_mat, log_z);
        let drift = -spec.velocity.value(time, &y);
        if !finite3(&drift) {
            return Err(Error::NonFinite { what: "velocity", sample, step: k });
        }
        if let Some(mode) = spec.mode {
            let grad = spec.velocity.gradient(time, &y);
            if !finite33(&grad) {
                return Err(Error::NonFinite { what: "velocity gradient", sample, step: k });
            }
            v_mat += v_mat * mode.apply(&grad) * dt;
        }
        let dw = stream.gaussian3() * sqdt;
        log_z += drift.dot(&dw) / scale - drift.norm_squared() * dt / (2.0 * scale * scale);
        if !log_z.is_finite() {
            return Err(Error::NonFinite { what: "log Girsanov weight", sample, step: k });
        }
        y += dw * scale;
    }
    visit(n, 0.0, &y, &v_mat, log_z);
    Ok(())
}

/// Materialized ensemble: `n_samples` paths on `n_steps + 1` grid nodes.
#[derive(Debug, Clone)]
pub struct PathEnsemble {
    pub start: Vec3,
    pub nu: f64,
    pub grid: TimeGrid,
    pub mode: DeformationMode,
    n_samples: usize,
    positions: Vec<Vec3>,
    deformations: Option<Vec<Mat3>>,
    log_weights: Option<Vec<f64>>,
}

impl PathEnsemble {
    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    fn slot(&self, sample: usize, step: usize) -> usize {
        sample * (self.grid.n_steps() + 1) + step
    }

    pub fn position(&self, sample: usize, step: usize) -> Vec3 {
        self.positions[self.slot(sample, step)]
    }

    pub fn deformation(&self, sample: usize, step: usize) -> Option<Mat3> {
        self.deformations.as_ref().map(|d| d[self.slot(sample, step)])
    }

    pub fn log_weight(&self, sample: usize, step: usize) -> Option<f64> {
        self.log_weights.as_ref().map(|w| w[self.slot(sample, step)])
    }

    /// Girsanov weight `Z_s`, exponentiated on demand.
    pub fn weight(&self, sample: usize, step: usize) -> Option<f64> {
        self.log_weight(sample, step).map(f64::exp)
    }

    pub fn has_deformations(&self) -> bool {
        self.deformations.is_some()
    }
}

pub fn simulate_lagrangian_paths(
    u: &dyn VectorField,
    x: Vec3,
    t: f64,
    nu: f64,
    grid: TimeGrid,
    driver: &BrownianDriver,
    n_samples: usize,
) -> Result<PathEnsemble> {
    check_horizon(t, &grid)?;
    if n_samples == 0 {
        return Err(invalid("n_samples must be at least 1"));
    }
    let spec = PathSpec { velocity: u, start: x, nu, grid, mode: None };
    let width = grid.n_steps() + 1;
    let mut positions = vec![Vec3::zeros(); n_samples * width];
    positions
        .par_chunks_mut(width)
        .enumerate()
        .try_for_each(|(i, row)| walk_lagrangian(&spec, driver, i, |k, _, x, _| row[k] = *x))?;
    Ok(PathEnsemble {
        start: x,
        nu,
        grid,
        mode: DeformationMode::default(),
        n_samples,
        positions,
        deformations: None,
        log_weights: None,
    })
}

fn check_horizon(t: f64, grid: &TimeGrid) -> Result<()> {
    if (t - grid.horizon()).abs() > 1e-12 * t.abs().max(1.0) {
        return Err(invalid(format!("grid horizon {} does not match t = {t}", grid.horizon())));
    }
    Ok(())
}

/// Fills `U_s` along the stored paths: `U ← U (I + Δs 𝒟_u(t - s_k, X_k))`.
pub fn evolve_deformation(
    mut ensemble: PathEnsemble,
    u: &dyn VectorField,
    mode: DeformationMode,
) -> Result<PathEnsemble> {
    let grid = ensemble.grid;
    let n = grid.n_steps();
    let dt = grid.dt();
    let width = n + 1;
    let positions = &ensemble.positions;
    let mut defs = vec![Mat3::identity(); positions.len()];
    defs.par_chunks_mut(width).enumerate().try_for_each(|(i, row)| {
        let mut m = Mat3::identity();
        for k in 0..n {
            row[k] = m;
            let g = u.gradient(grid.node(n - k), &positions[i * width + k]);
            if !finite33(&g) {
                return Err(Error::NonFinite { what: "velocity gradient", sample: i, step: k });
            }
            m += m * mode.apply(&g) * dt;
        }
        row[n] = m;
        Ok(())
    })?;
    ensemble.deformations = Some(defs);
    ensemble.mode = mode;
    Ok(ensemble)
}

/// Pure Brownian paths `x + sqrt(2ν) W` together with their Girsanov
/// weights relative to the drift `-u(t - s, ·)`.
pub fn girsanov_weights(
    u: &dyn VectorField,
    x: Vec3,
    t: f64,
    nu: f64,
    grid: TimeGrid,
    driver: &BrownianDriver,
    n_samples: usize,
) -> Result<PathEnsemble> {
    check_horizon(t, &grid)?;
    if n_samples == 0 {
        return Err(invalid("n_samples must be at least 1"));
    }
    let spec = PathSpec { velocity: u, start: x, nu, grid, mode: None };
    let width = grid.n_steps() + 1;
    let mut rows = vec![(Vec3::zeros(), 0.0); n_samples * width];
    rows.par_chunks_mut(width).enumerate().try_for_each(|(i, row)| {
        walk_girsanov(&spec, driver, i, |k, _, y, _, lz| row[k] = (*y, lz))
    })?;
    let (positions, log_weights) = rows.into_iter().unzip();
    Ok(PathEnsemble {
        start: x,
        nu,
        grid,
        mode: DeformationMode::default(),
        n_samples,
        positions,
        deformations: None,
        log_weights: Some(log_weights),
    })
}

/// `det J_t` for the flow-map Jacobian along one noise realization,
/// `dJ = -∇u(t - s, X_s) J ds`, `J_0 = I`.
pub fn flow_jacobian_determinant(
    u: &dyn VectorField,
    x: Vec3,
    t: f64,
    nu: f64,
    grid: TimeGrid,
    driver: &BrownianDriver,
    sample: usize,
) -> Result<f64> {
    check_horizon(t, &grid)?;
    let spec = PathSpec { velocity: u, start: x, nu, grid, mode: None };
    let dt = grid.dt();
    let n = grid.n_steps();
    let mut jac = Mat3::identity();
    let mut failed = None;
    walk_lagrangian(&spec, driver, sample, |k, time, x, _| {
        if k < n && failed.is_none() {
            let g = u.gradient(time, x);
            if finite33(&g) {
                jac -= g * jac * dt;
            } else {
                failed = Some(k);
            }
        }
    })?;
    if let Some(step) = failed {
        return Err(Error::NonFinite { what: "velocity gradient", sample, step });
    }
    Ok(jac.determinant())
}

/// Outcome of checking a pathwise inequality on every sample and step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct BoundCheck {
    pub checked: usize,
    pub violations: usize,
    /// Largest observed `lhs / bound`.
    pub worst_ratio: f64,
}

impl BoundCheck {
    fn record(&mut self, lhs: f64, bound: f64) {
        self.checked += 1;
        let ratio = if bound > 0.0 { lhs / bound } else if lhs > 0.0 { f64::INFINITY } else { 0.0 };
        self.worst_ratio = self.worst_ratio.max(ratio);
        if lhs > bound {
            self.violations += 1;
        }
    }

    fn merge(mut self, o: BoundCheck) -> BoundCheck {
        self.checked += o.checked;
        self.violations += o.violations;
        self.worst_ratio = self.worst_ratio.max(o.worst_ratio);
        self
    }
}

/// Relative allowance for floating-point rounding in pathwise bounds.
const ROUNDING: f64 = 1e-12;

/// Discrete deformation bound `‖U_s‖ ≤ e^{sM}(1 + c·Δs·s)`, with `c = M²`
/// unless given.
pub fn check_deformation_bound(ensemble: &PathEnsemble, m_bound: f64, slack: Option<f64>) -> Result<BoundCheck> {
    let Some(defs) = ensemble.deformations.as_ref() else {
        return Err(invalid("ensemble has no deformation matrices"));
    };
    let grid = ensemble.grid;
    let c = slack.unwrap_or(m_bound * m_bound);
    let width = grid.n_steps() + 1;
    Ok(defs
        .par_chunks(width)
        .map(|row| {
            let mut chk = BoundCheck::default();
            for (k, m) in row.iter().enumerate() {
                let s = grid.node(k);
                let bound = (s * m_bound).exp() * (1.0 + c * grid.dt() * s) * (1.0 + ROUNDING);
                chk.record(spectral_norm(m), bound);
            }
            chk
        })
        .reduce(BoundCheck::default, BoundCheck::merge))
}

/// Two-point estimate: paths from `x` and `y` driven by identical noise stay
/// within `|x - y| e^{s L}(1 + c·Δs·s)`, `L` a bound on `‖∇u‖`.
#[allow(clippy::too_many_arguments)]
pub fn check_two_point(
    u: &dyn VectorField,
    x: Vec3,
    y: Vec3,
    t: f64,
    nu: f64,
    grid: TimeGrid,
    driver: &BrownianDriver,
    n_samples: usize,
    grad_bound: f64,
    slack: Option<f64>,
) -> Result<BoundCheck> {
    check_horizon(t, &grid)?;
    let c = slack.unwrap_or(grad_bound * grad_bound);
    let d0 = (x - y).norm();
    let width = grid.n_steps() + 1;
    (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let mut px = vec![Vec3::zeros(); width];
            let spec_x = PathSpec { velocity: u, start: x, nu, grid, mode: None };
            walk_lagrangian(&spec_x, driver, i, |k, _, p, _| px[k] = *p)?;
            let spec_y = PathSpec { start: y, ..spec_x };
            let mut chk = BoundCheck::default();
            walk_lagrangian(&spec_y, driver, i, |k, _, p, _| {
                let s = grid.node(k);
                let bound = d0 * (s * grad_bound).exp() * (1.0 + c * grid.dt() * s) * (1.0 + ROUNDING);
                chk.record((px[k] - p).norm(), bound + ROUNDING * d0.max(1e-300));
            })?;
            Ok(chk)
        })
        .try_reduce(BoundCheck::default, |a, b| Ok(a.merge(b)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{AnalyticField, GaussianVortexBlob, LambOseen};

    #[test]
    fn grid_rejects_degenerate_input() {
        assert!(TimeGrid::new(1.0, 0).is_err());
        assert!(TimeGrid::new(f64::INFINITY, 10).is_err());
        assert!(TimeGrid::new(f64::NAN, 10).is_err());
        let g = TimeGrid::new(1.0, 1000).unwrap();
        assert_eq!(g.node(1000), 1.0);
        assert_eq!(g.node(500), 0.5);
    }

    #[test]
    fn increments_are_bit_identical_across_runs() {
        let d = BrownianDriver::new(7);
        let g = TimeGrid::new(1.0, 10).unwrap();
        let a = sample_brownian_increments(&d, &g, 10).unwrap();
        let b = sample_brownian_increments(&d, &g, 10).unwrap();
        assert_eq!(a.as_slice(), b.as_slice());
    }

    #[test]
    fn zero_generator_keeps_identity() {
        let g = TimeGrid::new(1.0, 20).unwrap();
        let d = BrownianDriver::new(1);
        let ens = simulate_lagrangian_paths(&AnalyticField::Zero, Vec3::zeros(), 1.0, 0.5, g, &d, 16).unwrap();
        let ens = evolve_deformation(ens, &AnalyticField::Zero, DeformationMode::FullGradient).unwrap();
        for i in 0..16 {
            for k in 0..=20 {
                assert_eq!(ens.deformation(i, k).unwrap(), Mat3::identity());
            }
        }
    }

    #[test]
    fn zero_velocity_has_unit_weights_and_jacobian() {
        let g = TimeGrid::new(1.0, 20).unwrap();
        let d = BrownianDriver::new(1);
        let ens = girsanov_weights(&AnalyticField::Zero, Vec3::zeros(), 1.0, 0.5, g, &d, 8).unwrap();
        for i in 0..8 {
            for k in 0..=20 {
                assert_eq!(ens.weight(i, k), Some(1.0));
            }
        }
        assert_eq!(flow_jacobian_determinant(&AnalyticField::Zero, Vec3::zeros(), 1.0, 0.5, g, &d, 3).unwrap(), 1.0);
    }

    #[test]
    fn shear_jacobian_is_unimodular() {
        let g = TimeGrid::new(1.0, 100).unwrap();
        let d = BrownianDriver::new(2);
        let shear = AnalyticField::SolenoidalShear { rate: 0.5 };
        for i in 0..10 {
            let det = flow_jacobian_determinant(&shear, Vec3::new(0.3, 0.1, 0.0), 1.0, 0.5, g, &d, i).unwrap();
            assert!((det - 1.0).abs() <= 5.0 * g.dt());
        }
    }

    #[test]
    fn compressible_jacobian_decays() {
        let mut a = Mat3::zeros();
        a[(0, 0)] = 1.0;
        let g = TimeGrid::new(1.0, 1000).unwrap();
        let det = flow_jacobian_determinant(&AnalyticField::Linear(a), Vec3::zeros(), 1.0, 0.5, g, &BrownianDriver::new(3), 0)
            .unwrap();
        // (1 - Δs)^n
        assert!((det - (-1.0f64).exp()).abs() < 2.0 * g.dt());
    }

    #[test]
    fn mismatched_horizon_is_rejected() {
        let g = TimeGrid::new(1.0, 10).unwrap();
        assert!(simulate_lagrangian_paths(&AnalyticField::Zero, Vec3::zeros(), 2.0, 0.5, g, &BrownianDriver::new(0), 4).is_err());
    }

    #[test]
    fn non_finite_velocity_reports_location() {
        let bad = crate::fields::FnField::new(
            |t: f64, _x: &Vec3| if t < 0.5 { Vec3::new(f64::NAN, 0.0, 0.0) } else { Vec3::zeros() },
            |_t: f64, _x: &Vec3| Mat3::zeros(),
        );
        let g = TimeGrid::new(1.0, 10).unwrap();
        let err = simulate_lagrangian_paths(&bad, Vec3::zeros(), 1.0, 0.5, g, &BrownianDriver::new(0), 1).unwrap_err();
        // field time t - s_k drops below 0.5 at k = 6
        assert!(matches!(err, Error::NonFinite { what: "velocity", sample: 0, step: 6 }), "{err}");
    }

    #[test]
    fn stretching_forms_agree_on_curl() {
        let lo = AnalyticField::LambOseen(LambOseen { circulation: 1.0, nu: 0.1, t0: 0.3 });
        let blob = AnalyticField::VortexBlob(GaussianVortexBlob { amplitude: 0.4, scale: 0.7 });
        let shear = AnalyticField::SolenoidalShear { rate: 0.5 };
        for f in [lo, blob, shear] {
            for x in [Vec3::new(0.2, -0.1, 0.4), Vec3::new(-0.5, 0.3, 0.0)] {
                let g = f.gradient(0.0, &x);
                let w = f.curl(0.0, &x);
                let full = DeformationMode::FullGradient.apply(&g) * w;
                let sym = DeformationMode::SymmetricPart.apply(&g) * w;
                assert!((full - sym).amax() < 1e-12);
            }
        }
    }

    #[test]
    fn spectral_norm_of_known_matrices() {
        assert!((spectral_norm(&Mat3::from_diagonal(&Vec3::new(1.0, -3.0, 2.0))) - 3.0).abs() < 1e-12);
        let mut n = Mat3::zeros();
        n[(0, 1)] = 2.0;
        assert!((spectral_norm(&n) - 2.0).abs() < 1e-12);
    }
}
