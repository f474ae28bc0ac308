//! Feynman–Kac representations for linear parabolic systems coupled through
//! the zero-order term.
//!
//! A system on `ℝ^d` with `l` unknowns is described by a drift `b(t, x)`,
//! a diffusion factor `σ(t, x)`, an `l × l` coupling `𝒟(t, x)`, a source
//! `f(t, x)` and a datum `φ(x)`. Paths solve `dX = b ds + σ dW` and carry the
//! matrices `dU = U 𝒟(·, X) ds`, `U = I` at the start; the estimators average
//! `U φ(X)` plus the left-endpoint rectangle rule for `∫ U f`.
//!
//! Matrices are stored row-major in flat slices.

use std::sync::Arc;

use crate::error::invalid;
use crate::kernel::TimeGrid;
use crate::rng::{BrownianDriver, NormalStream};
use crate::stats::SampleSet;
use crate::{Error, MCEstimate, Result};

/// `(t, x, out)`: writes a coefficient evaluated at `(t, x)` into `out`.
pub type CoefFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;
/// `(x, out)`: writes the datum at `x` into `out`.
pub type DatumFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

#[derive(Clone)]
pub enum Diffusion {
    Zero,
    /// `σ = c·I`.
    Scalar(f64),
    /// Full `d × d` factor, row-major.
    Matrix(CoefFn),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Direction {
    /// `v(T, ·) = φ`, solved backwards from `T`.
    FinalCondition { terminal_time: f64 },
    /// `v(0, ·) = φ`.
    InitialCondition,
}

/// User-asserted sup-norm bounds. Checked on probe points by
/// [`ParabolicSystem::validate_on_probe`] and used by the a priori bound on
/// every estimate.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SystemBounds {
    /// `sup ‖𝒟‖₂`.
    pub coupling: Option<f64>,
    /// `sup |f|`.
    pub source: Option<f64>,
    /// `sup |φ|`.
    pub datum: Option<f64>,
}

/// Hypotheses under which the weak solution is unique. Recorded, not
/// enforced.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct UniquenessFlags {
    pub constant_diffusion: bool,
    pub lipschitz_drift: bool,
    pub divergence_free_drift: bool,
}

impl UniquenessFlags {
    pub fn all_hold(&self) -> bool {
        self.constant_diffusion && self.lipschitz_drift && self.divergence_free_drift
    }
}

#[derive(Clone)]
pub struct ParabolicSystem {
    pub dim: usize,
    pub size: usize,
    /// `None` means `b ≡ 0`.
    pub drift: Option<CoefFn>,
    pub diffusion: Diffusion,
    /// `None` means `𝒟 ≡ 0`.
    pub coupling: Option<CoefFn>,
    /// `None` means `f ≡ 0`.
    pub source: Option<CoefFn>,
    pub datum: DatumFn,
    pub direction: Direction,
    pub bounds: SystemBounds,
    pub flags: UniquenessFlags,
}

impl ParabolicSystem {
    pub fn new<P>(dim: usize, size: usize, direction: Direction, datum: P) -> Result<Self>
    where
        P: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        if dim == 0 || size == 0 {
            return Err(invalid("state dimension and system size must be positive"));
        }
        if let Direction::FinalCondition { terminal_time } = direction {
            if !terminal_time.is_finite() {
                return Err(invalid("terminal time must be finite"));
            }
        }
        Ok(Self {
            dim,
            size,
            drift: None,
            diffusion: Diffusion::Zero,
            coupling: None,
            source: None,
            datum: Arc::new(datum),
            direction,
            bounds: SystemBounds::default(),
            flags: UniquenessFlags::default(),
        })
    }

    pub fn with_drift<F>(mut self, b: F) -> Self
    where
        F: Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        self.drift = Some(Arc::new(b));
        self
    }

    pub fn with_diffusion(mut self, sigma: Diffusion) -> Self {
        self.diffusion = sigma;
        self
    }

    pub fn with_coupling<F>(mut self, d: F) -> Self
    where
        F: Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        self.coupling = Some(Arc::new(d));
        self
    }

    pub fn with_source<F>(mut self, f: F) -> Self
    where
        F: Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        self.source = Some(Arc::new(f));
        self
    }

    pub fn with_bounds(mut self, bounds: SystemBounds) -> Self {
        self.bounds = bounds;
        self
    }

    pub fn with_flags(mut self, flags: UniquenessFlags) -> Self {
        self.flags = flags;
        self
    }

    /// Samples every coefficient on the given points and times, checking
    /// finiteness and the declared bounds.
    pub fn validate_on_probe(&self, points: &[Vec<f64>], times: &[f64]) -> Result<()> {
        let (d, l) = (self.dim, self.size);
        let mut vd = vec![0.0; d];
        let mut md = vec![0.0; d * d];
        let mut ml = vec![0.0; l * l];
        let mut vl = vec![0.0; l];
        let finite = |v: &[f64], what: &str| {
            if v.iter().all(|c| c.is_finite()) {
                Ok(())
            } else {
                Err(invalid(format!("{what} is not finite on the probe set")))
            }
        };
        for x in points {
            if x.len() != d {
                return Err(invalid(format!("probe point has dimension {}, expected {d}", x.len())));
            }
            (self.datum)(x, &mut vl);
            finite(&vl, "datum")?;
            check_bound(norm2(&vl), self.bounds.datum, "datum")?;
            for &t in times {
                if let Some(b) = &self.drift {
                    b(t, x, &mut vd);
                    finite(&vd, "drift")?;
                }
                if let Diffusion::Matrix(s) = &self.diffusion {
                    s(t, x, &mut md);
                    finite(&md, "diffusion")?;
                }
                if let Some(c) = &self.coupling {
                    c(t, x, &mut ml);
                    finite(&ml, "coupling")?;
                    // Frobenius norm, an upper bound for the spectral norm.
                    check_bound(norm2(&ml), self.bounds.coupling, "coupling")?;
                }
                if let Some(f) = &self.source {
                    f(t, x, &mut vl);
                    finite(&vl, "source")?;
                    check_bound(norm2(&vl), self.bounds.source, "source")?;
                }
            }
        }
        Ok(())
    }

    /// A priori bound `e^{h‖𝒟‖}(‖φ‖ + h‖f‖)` on `|v|` over a horizon `h`,
    /// when the needed bounds are declared.
    pub fn a_priori_bound(&self, horizon: f64) -> Option<f64> {
        let d = if self.coupling.is_some() { self.bounds.coupling? } else { 0.0 };
        let f = if self.source.is_some() { self.bounds.source? } else { 0.0 };
        Some((horizon * d).exp() * (self.bounds.datum? + horizon * f))
    }

    fn check_dims(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(invalid(format!("point has dimension {}, expected {}", x.len(), self.dim)));
        }
        if x.iter().any(|c| !c.is_finite()) {
            return Err(invalid("evaluation point must be finite"));
        }
        Ok(())
    }
}

fn check_bound(value: f64, bound: Option<f64>, what: &str) -> Result<()> {
    match bound {
        Some(b) if value > b * (1.0 + 1e-12) => Err(Error::BoundViolation(format!(
            "{what} norm {value} exceeds the declared bound {b} on the probe set"
        ))),
        _ => Ok(()),
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|c| c * c).sum::<f64>().sqrt()
}


/// Time at which coefficients are evaluated on grid node `k`.
#[derive(Clone, Copy)]
enum Clock {
    /// `t + s_k`.
    Forward(f64),
    /// `t - s_k`.
    Reversed(f64),
}

impl Clock {
    #[inline]
    fn at(self, grid: &TimeGrid, k: usize) -> f64 {
        match self {
            Clock::Forward(t) => t + grid.node(k),
            Clock::Reversed(t) => t - grid.node(k),
        }
    }
}

struct Walker<'a> {
    sys: &'a ParabolicSystem,
    grid: TimeGrid,
    clock: Clock,
    x: Vec<f64>,
    u: Vec<f64>,
    du: Vec<f64>,
    drift: Vec<f64>,
    sigma: Vec<f64>,
    coupling: Vec<f64>,
    noise: Vec<f64>,
}

impl<'a> Walker<'a> {
    fn new(sys: &'a ParabolicSystem, grid: TimeGrid, clock: Clock) -> Self {
        let (d, l) = (sys.dim, sys.size);
        Self {
            sys,
            grid,
            clock,
            x: vec![0.0; d],
            u: vec![0.0; l * l],
            du: vec![0.0; l * l],
            drift: vec![0.0; d],
            sigma: vec![0.0; d * d],
            coupling: vec![0.0; l * l],
            noise: vec![0.0; d],
        }
    }

    /// Calls `visit(k, time_k, X_k, U_k)` for `k = 0..=n`.
    fn run<F>(&mut self, x0: &[f64], stream: &mut NormalStream, sample: usize, mut visit: F) -> Result<()>
    where
        F: FnMut(usize, f64, &[f64], &[f64]),
    {
        let (d, l) = (self.sys.dim, self.sys.size);
        let n = self.grid.n_steps();
        let dt = self.grid.dt();
        let sqdt = dt.sqrt();
        self.x.copy_from_slice(x0);
        self.u.fill(0.0);
        for i in 0..l {
            self.u[i * l + i] = 1.0;
        }
        for k in 0..n {
            let time = self.clock.at(&self.grid, k);
            visit(k, time, &self.x, &self.u);
            if let Some(c) = &self.sys.coupling {
                c(time, &self.x, &mut self.coupling);
                if self.coupling.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite { what: "coupling", sample, step: k });
                }
                for i in 0..l {
                    for j in 0..l {
                        let mut s = 0.0;
                        for m in 0..l {
                            s += self.u[i * l + m] * self.coupling[m * l + j];
                        }
                        self.du[i * l + j] = s;
                    }
                }
                for (u, du) in self.u.iter_mut().zip(&self.du) {
                    *u += dt * du;
                }
            }
            if let Some(b) = &self.sys.drift {
                b(time, &self.x, &mut self.drift);
                if self.drift.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite { what: "drift", sample, step: k });
                }
            } else {
                self.drift.fill(0.0);
            }
            match &self.sys.diffusion {
                Diffusion::Zero => {
                    for i in 0..d {
                        self.x[i] += self.drift[i] * dt;
                    }
                }
                Diffusion::Scalar(c) => {
                    for i in 0..d {
                        self.x[i] += self.drift[i] * dt + c * sqdt * stream.standard_normal();
                    }
                }
                Diffusion::Matrix(s) => {
                    s(time, &self.x, &mut self.sigma);
                    if self.sigma.iter().any(|v| !v.is_finite()) {
                        return Err(Error::NonFinite { what: "diffusion", sample, step: k });
                    }
                    stream.fill(&mut self.noise);
                    for i in 0..d {
                        let mut s = 0.0;
                        for j in 0..d {
                            s += self.sigma[i * d + j] * self.noise[j];
                        }
                        self.x[i] += self.drift[i] * dt + sqdt * s;
                    }
                }
            }
        }
        if self.x.iter().chain(&self.u).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "path state", sample, step: n });
        }
        visit(n, self.clock.at(&self.grid, n), &self.x, &self.u);
        Ok(())
    }
}

/// `out = U v` for row-major `l × l` `U`.
#[inline]
fn mat_vec(u: &[f64], v: &[f64], out: &mut [f64]) {
    let l = v.len();
    for i in 0..l {
        let mut s = 0.0;
        for m in 0..l {
            s += u[i * l + m] * v[m];
        }
        out[i] = s;
    }
}

fn check_grid(expected: f64, grid: &TimeGrid) -> Result<()> {
    if (expected - grid.horizon()).abs() > 1e-12 * expected.abs().max(1.0) {
        return Err(invalid(format!(
            "grid horizon {} does not match the solve horizon {expected}",
            grid.horizon()
        )));
    }
    Ok(())
}

fn finish(sys: &ParabolicSystem, set: SampleSet, grid: TimeGrid) -> Result<MCEstimate> {
    let est = set.estimate(Some(grid))?;
    if let Some(bound) = sys.a_priori_bound(grid.horizon()) {
        let norm = norm2(&est.value);
        // The discrete matrices satisfy ‖U_k‖ ≤ (1 + Δs‖𝒟‖)^k ≤ e^{s_k‖𝒟‖}.
        if norm > bound * (1.0 + 1e-9) {
            return Err(Error::BoundViolation(format!(
                "estimate norm {norm} exceeds the a priori bound {bound}"
            )));
        }
    }
    Ok(est)
}

/// Forward estimator shared by the final- and initial-value solvers.
fn solve_forward(
    sys: &ParabolicSystem,
    x: &[f64],
    grid: TimeGrid,
    clock: Clock,
    driver: &BrownianDriver,
    n_samples: usize,
) -> Result<MCEstimate> {
    sys.check_dims(x)?;
    let l = sys.size;
    let n = grid.n_steps();
    let dt = grid.dt();
    let set = SampleSet::collect(n_samples, l, driver.master_seed(), |i, row| {
        let mut walker = Walker::new(sys, grid, clock);
        let mut stream = driver.stream_for(i as u64);
        let mut acc = vec![0.0; l];
        let mut fv = vec![0.0; l];
        let mut uf = vec![0.0; l];
        let mut terminal = vec![0.0; l];
        walker.run(x, &mut stream, i, |k, time, xk, uk| {
            if k < n {
                if let Some(f) = &sys.source {
                    f(time, xk, &mut fv);
                    mat_vec(uk, &fv, &mut uf);
                    for (a, v) in acc.iter_mut().zip(&uf) {
                        *a += dt * v;
                    }
                }
            } else {
                (sys.datum)(xk, &mut fv);
                mat_vec(uk, &fv, &mut terminal);
            }
        })?;
        for ((r, t), a) in row.iter_mut().zip(&terminal).zip(&acc) {
            *r = t + a;
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "source or datum", sample: i, step: n });
        }
        Ok(())
    })?;
    finish(sys, set, grid)
}

fn terminal_time(sys: &ParabolicSystem) -> Result<f64> {
    match sys.direction {
        Direction::FinalCondition { terminal_time } => Ok(terminal_time),
        Direction::InitialCondition => Err(invalid("system is posed with an initial condition")),
    }
}

fn require_initial(sys: &ParabolicSystem) -> Result<()> {
    match sys.direction {
        Direction::InitialCondition => Ok(()),
        Direction::FinalCondition { .. } => Err(invalid("system is posed with a final condition")),
    }
}

/// `v(t, x) = E[U_T φ(X_T)]` for a source-free final-value problem.
pub fn solve_final_value_homogeneous(
    sys: &ParabolicSystem,
    t: f64,
    x: &[f64],
    grid: TimeGrid,
    driver: &BrownianDriver,
    n_samples: usize,
) -> Result<MCEstimate> {
    if sys.source.is_some() {
        return Err(invalid("system has a source term; use solve_final_value"));
    }
    solve_final_value(sys, t, x, grid, driver, n_samples)
}

/// `v(t, x) = E[U_T φ(X_T)] + ∫_t^T E[U_r f(r, X_r)] dr`.
pub fn solve_final_value(
    sys: &ParabolicSystem,
    t: f64,
    x: &[f64],
    grid: TimeGrid,
    driver: &BrownianDriver,
    n_samples: usize,
) -> Result<MCEstimate> {
    let big_t = terminal_time(sys)?;
    if !(t.is_finite() && t < big_t) {
        return Err(invalid(format!("evaluation time {t} must be finite and below the terminal time {big_t}")));
    }
    check_grid(big_t - t, &grid)?;
    solve_forward(sys, x, grid, Clock::Forward(t), driver, n_samples)
}

/// `v(t, x) = E[U_t φ(X_t)] + ∫_0^t E[U_r f(t - r, X_r)] dr`, coefficients
/// evaluated at the reversed time `t - r`.
pub fn solve_initial_value(
    sys: &ParabolicSystem,
    t: f64,
    x: &[f64],
    grid: TimeGrid,
    driver: &BrownianDriver,
    n_samples: usize,
) -> Result<MCEstimate> {
    require_initial(sys)?;
    check_grid(t, &grid)?;
    solve_forward(sys, x, grid, Clock::Reversed(t), driver, n_samples)
}

/// Backward form `v(t, x) = E[V_t^0 φ(Y_0)] + ∫_0^t E[V_t^r f(r, Y_r)] dr`.
///
/// Each backward path is the forward path read in reverse: `Y_{r_j} = X_{n-j}`
/// and `V_t^{r_j} = U_{n-j}` with `r_j = t - s_{n-j}`. The source integral
/// runs over the right endpoints `j = n, …, 1`, which are the forward left
/// endpoints, so the two solvers agree exactly.
pub fn solve_initial_value_backward(
    sys: &ParabolicSystem,
    t: f64,
    x: &[f64],
    grid: TimeGrid,
    driver: &BrownianDriver,
    n_samples: usize,
) -> Result<MCEstimate> {
    require_initial(sys)?;
    check_grid(t, &grid)?;
    sys.check_dims(x)?;
    let (d, l) = (sys.dim, sys.size);
    let n = grid.n_steps();
    let dt = grid.dt();
    let set = SampleSet::collect(n_samples, l, driver.master_seed(), |i, row| {
        let mut walker = Walker::new(sys, grid, Clock::Reversed(t));
        let mut stream = driver.stream_for(i as u64);
        let mut xs = vec![0.0; (n + 1) * d];
        let mut us = vec![0.0; (n + 1) * l * l];
        let mut rs = vec![0.0; n + 1];
        walker.run(x, &mut stream, i, |k, time, xk, uk| {
            xs[k * d..(k + 1) * d].copy_from_slice(xk);
            us[k * l * l..(k + 1) * l * l].copy_from_slice(uk);
            rs[k] = time;
        })?;
        let y = |j: usize| &xs[(n - j) * d..(n - j + 1) * d];
        let v = |j: usize| &us[(n - j) * l * l..(n - j + 1) * l * l];
        let r = |j: usize| rs[n - j];
        let mut acc = vec![0.0; l];
        let mut fv = vec![0.0; l];
        let mut vf = vec![0.0; l];
        if let Some(f) = &sys.source {
            for j in (1..=n).rev() {
                f(r(j), y(j), &mut fv);
                mat_vec(v(j), &fv, &mut vf);
                for (a, w) in acc.iter_mut().zip(&vf) {
                    *a += dt * w;
                }
            }
        }
        let mut terminal = vec![0.0; l];
        (sys.datum)(y(0), &mut fv);
        mat_vec(v(0), &fv, &mut terminal);
        for ((o, tv), a) in row.iter_mut().zip(&terminal).zip(&acc) {
            *o = tv + a;
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "source or datum", sample: i, step: n });
        }
        Ok(())
    })?;
    finish(sys, set, grid)
}

/// Homogeneous `(l + 1)`-system with `𝒟̃ = [[𝒟, f], [0, 0]]` and
/// `φ̃ = (φ, 1)`. Its first `l` components solve the original
/// inhomogeneous problem and the last is identically 1.
pub fn augment_inhomogeneous(sys: &ParabolicSystem) -> ParabolicSystem {
    let l = sys.size;
    let la = l + 1;
    let coupling = sys.coupling.clone();
    let source = sys.source.clone();
    let datum = sys.datum.clone();
    let mut aug = sys.clone();
    aug.size = la;
    aug.source = None;
    aug.datum = Arc::new(move |x: &[f64], out: &mut [f64]| {
        datum(x, &mut out[..l]);
        out[l] = 1.0;
    });
    aug.coupling = if coupling.is_none() && source.is_none() {
        None
    } else {
        Some(Arc::new(move |t: f64, x: &[f64], out: &mut [f64]| {
            out.fill(0.0);
            if let Some(c) = &coupling {
                let mut dbuf = vec![0.0; l * l];
                c(t, x, &mut dbuf);
                for i in 0..l {
                    out[i * la..i * la + l].copy_from_slice(&dbuf[i * l..(i + 1) * l]);
                }
            }
            if let Some(f) = &source {
                let mut fbuf = vec![0.0; l];
                f(t, x, &mut fbuf);
                for i in 0..l {
                    out[i * la + l] = fbuf[i];
                }
            }
        }))
    };
    let cb = sys.bounds.coupling.unwrap_or(0.0);
    let fb = sys.bounds.source.unwrap_or(0.0);
    aug.bounds = SystemBounds {
        coupling: match (sys.bounds.coupling.is_some() || sys.coupling.is_none(), sys.bounds.source.is_some() || sys.source.is_none()) {
            (true, true) => Some((cb * cb + fb * fb).sqrt()),
            _ => None,
        },
        source: None,
        datum: sys.bounds.datum.map(|b| (b * b + 1.0).sqrt()),
    };
    aug
}

#[cfg(test)]
mod tests {
    use super::*;

    fn heat_1d(k: f64, big_t: f64) -> ParabolicSystem {
        ParabolicSystem::new(1, 1, Direction::FinalCondition { terminal_time: big_t }, move |x, out| {
            out[0] = (k * x[0]).cos()
        })
        .unwrap()
        .with_diffusion(Diffusion::Scalar(1.0))
    }

    #[test]
    fn constant_datum_is_reproduced() {
        let sys = ParabolicSystem::new(2, 1, Direction::FinalCondition { terminal_time: 1.0 }, |_, o| o[0] = 3.0)
            .unwrap()
            .with_diffusion(Diffusion::Scalar(0.7))
            .with_drift(|_, x, o| {
                o[0] = x[1];
                o[1] = -x[0];
            });
        let g = TimeGrid::new(1.0, 50).unwrap();
        let est = solve_final_value_homogeneous(&sys, 0.0, &[0.1, 0.2], g, &BrownianDriver::new(1), 200).unwrap();
        assert_eq!(est.value, vec![3.0]);
        assert_eq!(est.std_error, vec![0.0]);
    }

    #[test]
    fn cosine_datum_matches_characteristic_function() {
        let sys = heat_1d(2.0, 1.0);
        let g = TimeGrid::new(0.5, 100).unwrap();
        for x in [0.0, 0.3, 1.0] {
            let est = solve_final_value_homogeneous(&sys, 0.5, &[x], g, &BrownianDriver::new(11), 20_000).unwrap();
            let exact = (2.0 * x).cos() * (-1.0f64).exp();
            assert!(est.within(&[exact], 4.0, 0.0), "x={x}: {:?} vs {exact}", est);
        }
    }

    fn nilpotent(direction: Direction) -> ParabolicSystem {
        ParabolicSystem::new(1, 2, direction, |x, o| {
            o[0] = x[0].sin();
            o[1] = 1.0 + x[0] * x[0];
        })
        .unwrap()
        .with_coupling(|_, _, o| o.copy_from_slice(&[0.0, 1.0, 0.0, 0.0]))
    }

    #[test]
    fn nilpotent_coupling_is_exact() {
        let sys = nilpotent(Direction::FinalCondition { terminal_time: 2.0 });
        let g = TimeGrid::new(1.5, 30).unwrap();
        let x = 0.4f64;
        let est = solve_final_value_homogeneous(&sys, 0.5, &[x], g, &BrownianDriver::new(3), 8).unwrap();
        let phi2 = 1.0 + x * x;
        assert!((est.value[0] - (x.sin() + 1.5 * phi2)).abs() < 1e-12);
        assert_eq!(est.value[1], phi2);
    }

    #[test]
    fn homogeneous_solver_rejects_sources() {
        let sys = heat_1d(1.0, 1.0).with_source(|_, _, o| o[0] = 1.0);
        let g = TimeGrid::new(1.0, 10).unwrap();
        assert!(solve_final_value_homogeneous(&sys, 0.0, &[0.0], g, &BrownianDriver::new(0), 4).is_err());
        assert!(solve_initial_value(&sys, 1.0, &[0.0], g, &BrownianDriver::new(0), 4).is_err());
    }

    #[test]
    fn constant_source_shifts_the_estimate() {
        let base = heat_1d(1.0, 1.0);
        let with_f = base.clone().with_source(|_, _, o| o[0] = 0.25);
        let g = TimeGrid::new(0.8, 40).unwrap();
        let d = BrownianDriver::new(5);
        let a = solve_final_value(&base, 0.2, &[0.3], g, &d, 500).unwrap();
        let b = solve_final_value(&with_f, 0.2, &[0.3], g, &d, 500).unwrap();
        assert!((b.value[0] - a.value[0] - 0.8 * 0.25).abs() < 1e-12);
    }

    #[test]
    fn scalar_growth_with_unit_source() {
        let lambda = 0.5;
        let sys = ParabolicSystem::new(1, 1, Direction::FinalCondition { terminal_time: 1.0 }, |_, o| o[0] = 0.0)
            .unwrap()
            .with_diffusion(Diffusion::Scalar(1.0))
            .with_coupling(move |_, _, o| o[0] = lambda)
            .with_source(|_, _, o| o[0] = 1.0);
        let g = TimeGrid::new(1.0, 1000).unwrap();
        let est = solve_final_value(&sys, 0.0, &[0.0], g, &BrownianDriver::new(2), 16).unwrap();
        let exact = (lambda.exp() - 1.0) / lambda;
        // Deterministic: left rectangle rule for a geometric sequence.
        assert!((est.value[0] - exact).abs() < 2.0 * g.dt());
        assert_eq!(est.std_error[0], 0.0);
    }

    #[test]
    fn autonomous_initial_value_equals_final_value() {
        let fin = heat_1d(1.5, 2.0);
        let mut ini = fin.clone();
        ini.direction = Direction::InitialCondition;
        let g = TimeGrid::new(0.7, 35).unwrap();
        let d = BrownianDriver::new(9);
        let a = solve_final_value_homogeneous(&fin, 1.3, &[0.2], g, &d, 300).unwrap();
        let b = solve_initial_value(&ini, 0.7, &[0.2], g, &d, 300).unwrap();
        assert_eq!(a.value, b.value);
    }

    #[test]
    fn half_horizon_source() {
        let sys = ParabolicSystem::new(1, 1, Direction::InitialCondition, |_, o| o[0] = 0.0)
            .unwrap()
            .with_diffusion(Diffusion::Scalar(1.0))
            .with_source(|s, _, o| o[0] = if s <= 0.5 { 1.0 } else { 0.0 });
        let g = TimeGrid::new(1.0, 100).unwrap();
        let d = BrownianDriver::new(4);
        let fwd = solve_initial_value(&sys, 1.0, &[0.0], g, &d, 10).unwrap();
        let bwd = solve_initial_value_backward(&sys, 1.0, &[0.0], g, &d, 10).unwrap();
        assert!((fwd.value[0] - 0.5).abs() < 1e-12);
        assert_eq!(fwd.value, bwd.value);
    }

    #[test]
    fn backward_matches_forward_bitwise() {
        let sys = ParabolicSystem::new(2, 2, Direction::InitialCondition, |x, o| {
            o[0] = (x[0] - x[1]).cos();
            o[1] = (-x[0] * x[0]).exp();
        })
        .unwrap()
        .with_drift(|s, x, o| {
            o[0] = s * x[1].sin();
            o[1] = -0.3 * x[0];
        })
        .with_diffusion(Diffusion::Matrix(Arc::new(|s, x, o| {
            o.copy_from_slice(&[1.0, 0.1 * s, 0.2 * x[0].cos(), 0.8]);
        })))
        .with_coupling(|s, x, o| o.copy_from_slice(&[0.1, s, -x[1].tanh(), 0.2]))
        .with_source(|s, x, o| {
            o[0] = (s + x[0]).sin();
            o[1] = 0.5;
        });
        let g = TimeGrid::new(0.9, 45).unwrap();
        let d = BrownianDriver::new(21);
        let fwd = solve_initial_value(&sys, 0.9, &[0.1, -0.2], g, &d, 64).unwrap();
        let bwd = solve_initial_value_backward(&sys, 0.9, &[0.1, -0.2], g, &d, 64).unwrap();
        assert_eq!(fwd, bwd);
    }

    #[test]
    fn augmentation_reproduces_inhomogeneous_solution() {
        let sys = ParabolicSystem::new(1, 2, Direction::FinalCondition { terminal_time: 1.0 }, |x, o| {
            o[0] = x[0].cos();
            o[1] = 0.5;
        })
        .unwrap()
        .with_diffusion(Diffusion::Scalar(1.0))
        .with_coupling(|_, x, o| o.copy_from_slice(&[0.2, x[0].sin(), 0.0, -0.1]))
        .with_source(|s, x, o| {
            o[0] = 1.0 + s;
            o[1] = x[0].cos();
        });
        let aug = augment_inhomogeneous(&sys);
        let g = TimeGrid::new(1.0, 100).unwrap();
        let d = BrownianDriver::new(8);
        let a = solve_final_value(&sys, 0.0, &[0.3], g, &d, 200).unwrap();
        let b = solve_final_value_homogeneous(&aug, 0.0, &[0.3], g, &d, 200).unwrap();
        for c in 0..2 {
            assert!((a.value[c] - b.value[c]).abs() <= 1e-12, "{a:?} {b:?}");
        }
        assert_eq!(b.value[2], 1.0);
    }

    #[test]
    fn augmentation_without_source_is_identity_on_first_components() {
        let sys = nilpotent(Direction::FinalCondition { terminal_time: 1.0 }).with_diffusion(Diffusion::Scalar(0.5));
        let aug = augment_inhomogeneous(&sys);
        let g = TimeGrid::new(1.0, 20).unwrap();
        let d = BrownianDriver::new(8);
        let a = solve_final_value_homogeneous(&sys, 0.0, &[0.3], g, &d, 50).unwrap();
        let b = solve_final_value_homogeneous(&aug, 0.0, &[0.3], g, &d, 50).unwrap();
        assert_eq!(&a.value[..], &b.value[..2]);
        assert_eq!(b.value[2], 1.0);
    }

    #[test]
    fn declared_bounds_are_checked() {
        let sys = heat_1d(1.0, 1.0).with_bounds(SystemBounds { coupling: None, source: None, datum: Some(0.5) });
        assert!(sys.validate_on_probe(&[vec![0.0]], &[0.0]).is_err());
        let ok = heat_1d(1.0, 1.0).with_bounds(SystemBounds { datum: Some(1.0), ..Default::default() });
        assert!(ok.validate_on_probe(&[vec![0.0], vec![1.0]], &[0.0, 0.5]).is_ok());
        assert_eq!(ok.a_priori_bound(2.0), Some(1.0));
    }

    #[test]
    fn wrong_horizon_or_direction_is_rejected() {
        let sys = heat_1d(1.0, 1.0);
        let g = TimeGrid::new(0.5, 10).unwrap();
        assert!(solve_final_value(&sys, 0.0, &[0.0], g, &BrownianDriver::new(0), 4).is_err());
        assert!(solve_final_value(&sys, 0.5, &[0.0, 1.0], g, &BrownianDriver::new(0), 4).is_err());
        assert!(solve_initial_value_backward(&sys, 0.5, &[0.0], g, &BrownianDriver::new(0), 4).is_err());
    }
}
