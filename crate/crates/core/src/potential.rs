//! Probabilistic Newtonian potential, Bismut–Elworthy derivatives and the
//! probabilistic Biot–Savart law.
//!
//! With `W_s` a standard Brownian motion in `ℝ³`,
//!
//! ```text
//! Nf(x)     = ½ ∫₀^∞ E[f(x + W_s)] ds
//! ∇Nf(x)    = ½ ∫₀^∞ s⁻¹ E[f(x + W_s) W_s] ds
//! D²Nf(x)   = ∫₀^∞ (2/s²) E[f(x + W + W') W'ⁱ Wʲ] ds,   W, W' ~ N(0, s/2)
//! u(x)      = ½ ∫₀^∞ s⁻¹ E[W_s × ξ(x + W_s)] ds
//! ```
//!
//! The time integral runs over log-spaced trapezoid nodes on
//! `[s_min, s_max]`. One Gaussian vector per sample is shared by all nodes
//! (`W_{s_j} = √s_j·G`), so each sample contributes a whole integral and the
//! reported standard error includes the correlation between nodes. The
//! integrands are evaluated in antithetic form (`±W`), which leaves their
//! expectations unchanged and removes the `s⁻¹` blow-up at small `s`.
//! Everything outside `[s_min, s_max]` is either corrected for analytically
//! or bounded from the declared [`DensityBounds`].

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::invalid;
use crate::fields::VectorField;
use crate::rng::BrownianDriver;
use crate::stats::SampleSet;
use crate::{Error, MCEstimate, Mat3, Result, Vec3};

/// How Gaussian draws are shared between quadrature nodes within a sample.
/// Draws are always shared between evaluation points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeSampling {
    /// One Gaussian per sample, scaled to every node.
    #[default]
    Shared,
    /// Fresh Gaussians at every node. For densities whose node integrands
    /// are strongly positively correlated (indicators, for instance) this
    /// has the smaller variance.
    Independent,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeQuadrature {
    pub s_min: f64,
    pub s_max: f64,
    pub n_nodes: usize,
    /// Largest acceptable bound on the neglected parts of the time integral.
    pub tolerance: f64,
    pub sampling: NodeSampling,
}

impl Default for TimeQuadrature {
    fn default() -> Self {
        Self { s_min: 1e-4, s_max: 1e4, n_nodes: 32, tolerance: 1e-3, sampling: NodeSampling::Shared }
    }
}

impl TimeQuadrature {
    pub fn new(s_min: f64, s_max: f64, n_nodes: usize, tolerance: f64) -> Result<Self> {
        let q = Self { s_min, s_max, n_nodes, tolerance, sampling: NodeSampling::Shared };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s_min > 0.0 && self.s_max > self.s_min && self.s_max.is_finite()) {
            return Err(invalid(format!(
                "quadrature needs 0 < s_min < s_max < ∞, got [{}, {}]",
                self.s_min, self.s_max
            )));
        }
        if self.n_nodes < 2 {
            return Err(invalid("quadrature needs at least two nodes"));
        }
        if !(self.tolerance > 0.0) {
            return Err(invalid("quadrature tolerance must be positive"));
        }
        Ok(())
    }

    /// `(s_j, w_j)`: trapezoid rule in `ln s`.
    pub fn nodes(&self) -> Vec<(f64, f64)> {
        let (a, b) = (self.s_min.ln(), self.s_max.ln());
        let n = self.n_nodes - 1;
        let du = (b - a) / n as f64;
        (0..=n)
            .map(|j| {
                let s = (a + du * j as f64).exp();
                let w = if j == 0 || j == n { 0.5 * du * s } else { du * s };
                (s, w)
            })
            .collect()
    }
}

/// Support of a density: contained in the closed ball `|y - center| ≤ radius`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Support {
    pub center: Vec3,
    pub radius: f64,
}

/// Declared properties of a scalar density `f` (or of `|ξ|` for a
/// vorticity). Every entry is optional; the estimators use whatever is
/// available to bound the truncated parts of the time integral and fail
/// when nothing suffices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DensityBounds {
    /// `(p, ‖f‖_p)` pairs; `p = ∞` is the sup norm.
    pub lp: Vec<(f64, f64)>,
    /// `∫ f`.
    pub mass: Option<f64>,
    /// `∫ |f| |y|²`.
    pub second_moment: Option<f64>,
    pub lipschitz: Option<f64>,
    /// `(α, [f]_α)`.
    pub holder: Option<(f64, f64)>,
    /// `sup ‖D²f‖`.
    pub hessian_sup: Option<f64>,
    pub support: Option<Support>,
}

impl DensityBounds {
    pub fn norm(&self, p: f64) -> Option<f64> {
        self.lp.iter().find(|(q, _)| *q == p).map(|&(_, v)| v)
    }

    pub fn sup(&self) -> Option<f64> {
        self.norm(f64::INFINITY)
    }

    pub fn l1(&self) -> Option<f64> {
        self.norm(1.0)
    }

    pub fn validate(&self) -> Result<()> {
        for &(p, v) in &self.lp {
            if !(p >= 1.0) || !(v >= 0.0) || v.is_nan() {
                return Err(invalid(format!("invalid norm declaration ‖f‖_{p} = {v}")));
            }
        }
        if let Some((a, v)) = self.holder {
            if !(a > 0.0 && a <= 1.0 && v >= 0.0) {
                return Err(invalid(format!("invalid Hölder declaration ({a}, {v})")));
            }
        }
        Ok(())
    }

    pub fn zero() -> Self {
        Self {
            lp: vec![(1.0, 0.0), (f64::INFINITY, 0.0)],
            mass: Some(0.0),
            second_moment: Some(0.0),
            lipschitz: Some(0.0),
            hessian_sup: Some(0.0),
            ..Default::default()
        }
    }

    /// Unit-ball indicator `1{|y| ≤ 1}`.
    pub fn unit_ball() -> Self {
        let vol = 4.0 * PI / 3.0;
        Self {
            lp: vec![(1.0, vol), (f64::INFINITY, 1.0)],
            mass: Some(vol),
            second_moment: Some(4.0 * PI / 5.0),
            support: Some(Support { center: Vec3::zeros(), radius: 1.0 }),
            ..Default::default()
        }
    }

    /// `amplitude · exp(-|y|²/(2 width²))`.
    pub fn gaussian(amplitude: f64, width: f64) -> Self {
        let a = amplitude.abs();
        let mass = (2.0 * PI).powf(1.5) * width.powi(3);
        let lp = |p: f64| a * ((2.0 * PI / p).powf(1.5) * width.powi(3)).powf(1.0 / p);
        Self {
            lp: vec![(1.0, a * mass), (1.2, lp(1.2)), (2.0, lp(2.0)), (f64::INFINITY, a)],
            mass: Some(amplitude * mass),
            second_moment: Some(3.0 * width * width * a * mass),
            lipschitz: Some(a * (-0.5f64).exp() / width),
            hessian_sup: Some(a / (width * width)),
            ..Default::default()
        }
    }
}

/// `E|G|^m` for a standard Gaussian vector in `ℝ³`.
pub fn gaussian_moment(m: f64) -> f64 {
    2f64.powf(m / 2.0) * libm::tgamma((3.0 + m) / 2.0) / libm::tgamma(1.5)
}

/// `‖|z|^k φ_s‖_{p'}` (heat kernel `φ_s` at time `s`, `1/p + 1/p' = 1`) as a
/// power law `c·s^γ`; returns `(c, γ)`.
pub fn heat_kernel_norm(k: f64, p: f64) -> (f64, f64) {
    let gamma = k / 2.0 - 1.5 / p;
    let c = if p == 1.0 {
        // p' = ∞: sup_r r^k e^{-r²/2}/(2π)^{3/2}, attained at r² = k.
        let peak = if k == 0.0 { 1.0 } else { k.powf(k / 2.0) * (-k / 2.0).exp() };
        (2.0 * PI).powf(-1.5) * peak
    } else {
        let q = if p.is_infinite() { 1.0 } else { p / (p - 1.0) };
        let a = (k * q + 3.0) / 2.0;
        let integral = (2.0 * PI).powf(-1.5 * q) * 2.0 * PI * (2.0 / q).powf(a) * libm::tgamma(a);
        integral.powf(1.0 / q)
    };
    (c, gamma)
}

/// `P(|G| ≥ r)` for a standard Gaussian vector in `ℝ³`.
fn chi3_tail(r: f64) -> f64 {
    libm::erfc(r / 2f64.sqrt()) + (2.0 / PI).sqrt() * r * (-r * r / 2.0).exp()
}

/// `E[|G| 1{|G| ≥ r}]` for a standard Gaussian vector in `ℝ³`.
fn chi3_first_moment_tail(r: f64) -> f64 {
    (2.0 / PI).sqrt() * (r * r + 2.0) * (-r * r / 2.0).exp()
}

/// Distance from `x` to the declared support, when the endpoint bound on
/// `[0, s_min]` is valid (the integrand is then increasing in `s`).
fn support_gap(b: &DensityBounds, x: &Vec3, s_min: f64) -> Option<f64> {
    let sup = b.support?;
    let d = (x - sup.center).norm() - sup.radius;
    (d > 0.0 && d * d / s_min >= 10.0).then_some(d)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    Potential,
    /// Gradient and Biot–Savart share their bounds.
    FirstOrder,
    Hessian,
}

/// Bound on `∫₀^{s_min}` of the (antithetic) integrand.
fn small_time_bound(kind: Kind, b: &DensityBounds, x: &Vec3, s0: f64) -> Option<f64> {
    let sup = b.sup();
    let gap = support_gap(b, x, s0);
    let mut best: Option<f64> = None;
    let mut take = |v: Option<f64>| {
        if let Some(v) = v {
            best = Some(best.map_or(v, |b: f64| b.min(v)));
        }
    };
    match kind {
        Kind::Potential => {
            take(sup.map(|m| 0.5 * s0 * m));
            if let (Some(m), Some(d)) = (sup, gap) {
                take(Some(0.5 * s0 * m * chi3_tail(d / s0.sqrt())));
            }
        }
        Kind::FirstOrder => {
            take(b.lipschitz.map(|l| 1.5 * l * s0));
            take(b.holder.map(|(a, h)| h * gaussian_moment(1.0 + a) * s0.powf((1.0 + a) / 2.0) / (1.0 + a)));
            take(sup.map(|m| m * gaussian_moment(1.0) * s0.sqrt()));
            if let (Some(m), Some(d)) = (sup, gap) {
                take(Some(0.5 * s0 * m * s0.powf(-0.5) * chi3_first_moment_tail(d / s0.sqrt())));
            }
        }
        Kind::Hessian => {
            take(b.hessian_sup.map(|h| 4.5 * h * s0));
            take(b.holder.map(|(a, h)| {
                let g = gaussian_moment(1.0 + a / 2.0);
                2f64.powf(a) * 2f64.powf(-1.0 - a / 2.0) * h * g * g * (2.0 / a) * s0.powf(a / 2.0)
            }));
        }
    }
    best
}

/// Analytic correction and residual bound for `∫_{s_max}^∞`.
fn large_time_tail(kind: Kind, b: &DensityBounds, x: &Vec3, s1: f64) -> Option<(f64, f64)> {
    let mut best: Option<(f64, f64)> = None;
    let mut take = |v: (f64, f64)| {
        if best.is_none_or(|(_, r)| v.1 < r) {
            best = Some(v);
        }
    };
    let c3 = (2.0 * PI).powf(-1.5);
    if kind == Kind::Potential {
        if let (Some(mass), Some(m2), Some(l1)) = (b.mass, b.second_moment, b.l1()) {
            let correction = 0.5 * mass * c3 * 2.0 / s1.sqrt();
            let residual = 0.5 * c3 * (m2 + x.norm_squared() * l1) * (2.0 / 3.0) * s1.powf(-1.5);
            take((correction, residual));
        }
    }
    for &(p, norm) in &b.lp {
        let bound = match kind {
            Kind::Potential => {
                let (c, g) = heat_kernel_norm(0.0, p);
                (g < -1.0).then(|| 0.5 * norm * c * s1.powf(g + 1.0) / (-g - 1.0))
            }
            Kind::FirstOrder => {
                let (c, g) = heat_kernel_norm(1.0, p);
                (g < 0.0).then(|| 0.5 * norm * c * s1.powf(g) / (-g))
            }
            Kind::Hessian => {
                let (c, g) = heat_kernel_norm(1.0, p);
                let coef = 2.0 * norm * c * 2f64.powf(-g - 0.5) * gaussian_moment(1.0);
                (g < 0.5).then(|| coef * s1.powf(g - 0.5) / (0.5 - g))
            }
        };
        if let Some(r) = bound {
            take((0.0, r));
        }
    }
    best
}

/// Monte Carlo estimate together with the deterministic bound on the parts
/// of the time integral that were not sampled.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureEstimate {
    pub estimate: MCEstimate,
    /// Bound on `|∫₀^{s_min}| + |residual of ∫_{s_max}^∞|`, per point.
    pub truncation: f64,
    pub warnings: Vec<String>,
}

impl QuadratureEstimate {
    pub fn value(&self) -> &[f64] {
        &self.estimate.value
    }

    pub fn std_error(&self) -> &[f64] {
        &self.estimate.std_error
    }

    /// `|value_i - target_i| ≤ k·σ_i + truncation + slack` componentwise.
    pub fn within(&self, target: &[f64], k: f64, slack: f64) -> bool {
        self.estimate.within(target, k, self.truncation + slack)
    }
}

fn truncation(kind: Kind, b: &DensityBounds, x: &Vec3, quad: &TimeQuadrature) -> Result<(f64, f64)> {
    let small = small_time_bound(kind, b, x, quad.s_min).ok_or_else(|| {
        invalid(match kind {
            Kind::Potential => "small-time bound needs a declared sup norm",
            Kind::FirstOrder => "small-time bound needs a Lipschitz, Hölder or sup bound",
            Kind::Hessian => "small-time bound needs a Hölder or second-derivative bound",
        })
    })?;
    let (corr, large) = large_time_tail(kind, b, x, quad.s_max)
        .ok_or_else(|| invalid("large-time tail needs an L^p norm with small enough p, or mass and second moment"))?;
    let bound = small + large;
    if !(bound <= quad.tolerance) {
        return Err(Error::TruncationTooLarge { bound, tolerance: quad.tolerance });
    }
    Ok((corr, bound))
}

/// Runs `kernel(point, s, G, G', out)` over all nodes and points; each
/// sample row holds `width` outputs per point, weighted and summed over
/// nodes.
fn node_samples<K>(
    points: &[Vec3],
    width: usize,
    quad: &TimeQuadrature,
    driver: &BrownianDriver,
    n_samples: usize,
    kernel: K,
) -> Result<SampleSet>
where
    K: Fn(&Vec3, f64, &Vec3, &Vec3, &mut [f64]) + Sync,
{
    quad.validate()?;
    if points.is_empty() {
        return Err(invalid("no evaluation points"));
    }
    let nodes = quad.nodes();
    SampleSet::collect(n_samples, width * points.len(), driver.master_seed(), |i, row| {
        let mut stream = driver.stream_for(i as u64);
        let draws: Vec<(Vec3, Vec3)> = match quad.sampling {
            NodeSampling::Shared => vec![(stream.gaussian3(), stream.gaussian3())],
            NodeSampling::Independent => (0..nodes.len()).map(|_| (stream.gaussian3(), stream.gaussian3())).collect(),
        };
        let mut tmp = vec![0.0; width];
        for (p, x) in points.iter().enumerate() {
            let out = &mut row[p * width..(p + 1) * width];
            for (j, &(s, w)) in nodes.iter().enumerate() {
                let (g, g2) = &draws[j.min(draws.len() - 1)];
                kernel(x, s, g, g2, &mut tmp);
                for (o, t) in out.iter_mut().zip(&tmp) {
                    *o += w * t;
                }
            }
            if out.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { what: "density", sample: i, step: p });
            }
        }
        Ok(())
    })
}

pub type ScalarDensity<'a> = &'a (dyn Fn(&Vec3) -> f64 + Sync);

/// Per-sample node integrals of the potential at several points (common
/// random numbers across points). Tail corrections are not included.
pub fn potential_samples(
    f: ScalarDensity<'_>,
    points: &[Vec3],
    quad: &TimeQuadrature,
    driver: &BrownianDriver,
    n_samples: usize,
) -> Result<SampleSet> {
    node_samples(points, 1, quad, driver, n_samples, |x, s, g, _, out| {
        let w = g * s.sqrt();
        out[0] = 0.25 * (f(&(x + w)) + f(&(x - w)));
    })
}

/// A priori bound `|Nf| ≤ ½[‖f‖_q ∫₀¹ B₀(s, q) ds + ‖f‖_p ∫₁^∞ B₀(s, p) ds]`
/// using the best declared pair `p < 3/2 < q`.
pub fn a_priori_potential_bound(b: &DensityBounds) -> Option<f64> {
    let mut best: Option<f64> = None;
    for &(p, np) in b.lp.iter().filter(|(p, _)| *p < 1.5) {
        for &(q, nq) in b.lp.iter().filter(|(q, _)| *q > 1.5) {
            let (cq, gq) = heat_kernel_norm(0.0, q);
            let (cp, gp) = heat_kernel_norm(0.0, p);
            let v = 0.5 * (nq * cq / (gq + 1.0) + np * cp / (-gp - 1.0));
            best = Some(best.map_or(v, |b: f64| b.min(v)));
        }
    }
    best
}

fn with_exponent_warnings(b: &DensityBounds, need_q_above: f64) -> Vec<String> {
    let has_p = b.lp.iter().any(|(p, _)| *p < 1.5);
    let has_q = b.lp.iter().any(|(q, _)| *q > need_q_above);
    let mut w = Vec::new();
    if !has_p {
        w.push("no declared L^p norm with p < 3/2".to_string());
    }
    if !has_q {
        w.push(format!("no declared L^q norm with q > {need_q_above}"));
    }
    w
}

/// `Nf(x)`.
pub fn newtonian_potential(
    f: ScalarDensity<'_>,
    bounds: &DensityBounds,
    x: Vec3,
    quad: &TimeQuadrature,
    driver: &BrownianDriver,
    n_samples: usize,
) -> Result<QuadratureEstimate> {
    bounds.validate()?;
    let (corr, trunc) = truncation(Kind::Potential, bounds, &x, quad)?;
    let set = potential_samples(f, &[x], quad, driver, n_samples)?;
    let mut est = set.estimate(None)?;
    est.value[0] += corr;
    if let Some(c) = a_priori_potential_bound(bounds) {
        let slack = 6.0 * est.std_error[0] + trunc;
        if est.value[0].abs() > c + slack {
            return Err(Error::BoundViolation(format!(
                "|Nf(x)| = {} exceeds the a priori bound {c}",
                est.value[0].abs()
            )));
        }
    }
    Ok(QuadratureEstimate { estimate: est, truncation: trunc, warnings: with_exponent_warnings(bounds, 1.5) })
}

/// Per-sample node integrals of `∇Nf` at several points, three columns per
/// point.
pub fn gradient_samples(
    f: ScalarDensity<'_>,
    points: &[Vec3],
    quad: &TimeQuadrature,
    driver: &BrownianDriver,
    n_samples: usize,
) -> Result<SampleSet> {
    node_samples(points, 3, quad, driver, n_samples, |x, s, g, _, out| {
        let w = g * s.sqrt();
        let c = 0.25 * (f(&(x + w)) - f(&(x - w))) / s;
        for i in 0..3 {
            out[i] = c * w[i];
        }
    })
}

/// `∇Nf(x)`.
pub fn potential_gradient(
    f: ScalarDensity<'_>,
    bounds: &DensityBounds,
    x: Vec3,
    quad: &TimeQuadrature,
    driver: &BrownianDriver,
    n_samples: usize,
) -> Result<QuadratureEstimate> {
    bounds.validate()?;
    let (_, trunc) = truncation(Kind::FirstOrder, bounds, &x, quad)?;
    let est = gradient_samples(f, &[x], quad, driver, n_samples)?.estimate(None)?;
    Ok(QuadratureEstimate { estimate: est, truncation: trunc, warnings: with_exponent_warnings(bounds, 3.0) })
}

/// Per-sample node integrals of `D²Nf` at several points, nine row-major
/// columns per point. Each sample is symmetrized in `(W, W')`, which leaves
/// the expectation unchanged and makes every estimate exactly symmetric.
pub fn hessian_samples(
    f: ScalarDensity<'_>,
    points: &[Vec3],
    quad: &TimeQuadrature,
    driver: &BrownianDriver,
    n_samples: usize,
) -> Result<SampleSet> {
    node_samples(points, 9, quad, driver, n_samples, |x, s, g, g2, out| {
        let h = (s / 2.0).sqrt();
        let (w, w2) = (g * h, g2 * h);
        let second = f(&(x + w + w2)) - f(&(x + w - w2)) - f(&(x - w + w2)) + f(&(x - w - w2));
        let c = second / (2.0 * s * s);
        for i in 0..3 {
            for j in 0..3 {
                out[3 * i + j] = 0.5 * c * (w2[i] * w[j] + w[i] * w2[j]);
            }
        }
    })
}

/// `D²Nf(x)`, row-major.
pub fn potential_hessian(
    f: ScalarDensity<'_>,
    bounds: &DensityBounds,
    x: Vec3,
    quad: &TimeQuadrature,
    driver: &BrownianDriver,
    n_samples: usize,
) -> Result<QuadratureEstimate> {
    let trunc = hessian_truncation(bounds, &x, quad)?;
    let est = hessian_samples(f, &[x], quad, driver, n_samples)?.estimate(None)?;
    Ok(QuadratureEstimate { estimate: est, truncation: trunc, warnings: with_exponent_warnings(bounds, 1.5) })
}

/// Truncation bound of [`potential_hessian`] at `x`.
pub fn hessian_truncation(bounds: &DensityBounds, x: &Vec3, quad: &TimeQuadrature) -> Result<f64> {
    bounds.validate()?;
    Ok(truncation(Kind::Hessian, bounds, x, quad)?.1)
}

/// Per-sample node integrals of the Biot–Savart velocity at several points,
/// three columns per point.
pub fn biot_savart_samples(
    xi: &dyn VectorField,
    t: f64,
    points: &[Vec3],
    quad: &TimeQuadrature,
    driver: &BrownianDriver,
    n_samples: usize,
) -> Result<SampleSet> {
    node_samples(points, 3, quad, driver, n_samples, |x, s, g, _, out| {
        let w = g * s.sqrt();
        let diff = xi.value(t, &(x + w)) - xi.value(t, &(x - w));
        let v = w.cross(&diff) * (0.25 / s);
        out.copy_from_slice(v.as_slice());
    })
}

/// `u(x) = ½ ∫₀^∞ s⁻¹ E[W_s × ξ(x + W_s)] ds`, the divergence-free field
/// with `curl u = ξ` (for divergence-free `ξ`). `bounds` describe `|ξ(t, ·)|`.
pub fn biot_savart_velocity(
    xi: &dyn VectorField,
    t: f64,
    bounds: &DensityBounds,
    x: Vec3,
    quad: &TimeQuadrature,
    driver: &BrownianDriver,
    n_samples: usize,
) -> Result<QuadratureEstimate> {
    bounds.validate()?;
    let (_, trunc) = truncation(Kind::FirstOrder, bounds, &x, quad)?;
    let est = biot_savart_samples(xi, t, &[x], quad, driver, n_samples)?.estimate(None)?;
    Ok(QuadratureEstimate { estimate: est, truncation: trunc, warnings: with_exponent_warnings(bounds, 1.5) })
}

/// Truncation bound of [`biot_savart_velocity`] at `x`, for callers that
/// build their own sample sets with [`biot_savart_samples`].
pub fn biot_savart_truncation(bounds: &DensityBounds, x: &Vec3, quad: &TimeQuadrature) -> Result<f64> {
    bounds.validate()?;
    Ok(truncation(Kind::FirstOrder, bounds, x, quad)?.1)
}

/// The Hessian estimate as a matrix.
pub fn as_matrix(values: &[f64]) -> Mat3 {
    Mat3::from_row_slice(values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ball(y: &Vec3) -> f64 {
        if y.norm_squared() <= 1.0 {
            1.0
        } else {
            0.0
        }
    }

    #[test]
    fn quadrature_nodes_cover_the_interval() {
        let q = TimeQuadrature::default();
        let nodes = q.nodes();
        assert_eq!(nodes.len(), 32);
        assert!((nodes[0].0 - 1e-4).abs() < 1e-16);
        assert!((nodes[31].0 - 1e4).abs() < 1e-8);
        // ∫ ds over [s_min, s_max] in log space is exact only in the limit;
        // ∫ s⁻¹ ds is exact.
        let inv: f64 = nodes.iter().map(|(s, w)| w / s).sum();
        assert!((inv - (1e8f64).ln()).abs() < 1e-10);
        assert!(TimeQuadrature::new(0.0, 1.0, 10, 1e-3).is_err());
        assert!(TimeQuadrature::new(1.0, 0.5, 10, 1e-3).is_err());
    }

    #[test]
    fn gaussian_moments() {
        assert!((gaussian_moment(2.0) - 3.0).abs() < 1e-12);
        assert!((gaussian_moment(1.0) - 2.0 * (2.0 / PI).sqrt()).abs() < 1e-12);
        assert!((gaussian_moment(4.0) - 15.0).abs() < 1e-10);
    }

    #[test]
    fn heat_kernel_norms_match_direct_cases() {
        // ‖φ_s‖_1 = 1.
        let (c, g) = heat_kernel_norm(0.0, f64::INFINITY);
        assert!((c - 1.0).abs() < 1e-12 && g == 0.0);
        // ‖φ_s‖_∞ = (2πs)^{-3/2}.
        let (c, g) = heat_kernel_norm(0.0, 1.0);
        assert!((c - (2.0 * PI).powf(-1.5)).abs() < 1e-15 && g == -1.5);
        // ‖|z| φ_s‖_1 = √s E|G|.
        let (c, g) = heat_kernel_norm(1.0, f64::INFINITY);
        assert!((c - gaussian_moment(1.0)).abs() < 1e-12 && g == 0.5);
        // ‖φ_s‖_2² = (4πs)^{-3/2}.
        let (c, _) = heat_kernel_norm(0.0, 2.0);
        assert!((c * c - (4.0 * PI).powf(-1.5)).abs() < 1e-14);
    }

    #[test]
    fn chi3_tails() {
        assert!((chi3_tail(0.0) - 1.0).abs() < 1e-15);
        assert!((chi3_first_moment_tail(0.0) - gaussian_moment(1.0)).abs() < 1e-15);
        assert!(chi3_tail(5.0) < 1e-4);
    }

    #[test]
    fn zero_density_gives_zero() {
        let q = TimeQuadrature::default();
        let b = DensityBounds::unit_ball();
        let zero = |_: &Vec3| 0.0;
        let d = BrownianDriver::new(1);
        let x = Vec3::new(0.5, 0.0, 0.0);
        let p = potential_samples(&zero, &[x], &q, &d, 100).unwrap().estimate(None).unwrap();
        assert_eq!(p.value, vec![0.0]);
        let g = potential_gradient(&zero, &b, Vec3::new(2.0, 0.0, 0.0), &q, &d, 100).unwrap();
        assert_eq!(g.value(), &[0.0; 3]);
        let h = potential_hessian(&zero, &DensityBounds::gaussian(1.0, 1.0), x, &TimeQuadrature { s_min: 1e-6, ..q }, &d, 100)
            .unwrap();
        assert_eq!(h.value(), &[0.0; 9]);
    }

    #[test]
    fn deterministic_quadrature_of_ball_potential() {
        // Replace the Monte Carlo mean by the exact node expectation
        // P(|G|² ≤ 1/s) to check the quadrature and tail handling alone.
        let q = TimeQuadrature::default();
        let b = DensityBounds::unit_ball();
        let (corr, trunc) = truncation(Kind::Potential, &b, &Vec3::zeros(), &q).unwrap();
        let v: f64 = 0.5 * q.nodes().iter().map(|&(s, w)| w * (1.0 - chi3_tail(s.powf(-0.5)))).sum::<f64>() + corr;
        assert!((v - 0.5).abs() < trunc + 1e-4, "{v} {trunc}");
    }

    #[test]
    fn ball_potential_at_the_origin() {
        let q = TimeQuadrature::default();
        let est =
            newtonian_potential(&ball, &DensityBounds::unit_ball(), Vec3::zeros(), &q, &BrownianDriver::new(5), 20_000)
                .unwrap();
        assert!(est.within(&[0.5], 4.0, 1e-3), "{est:?}");
    }

    #[test]
    fn exterior_ball_potential_and_gradient() {
        let q = TimeQuadrature::default();
        let b = DensityBounds::unit_ball();
        let x = Vec3::new(2.0, 0.0, 0.0);
        let d = BrownianDriver::new(6);
        let p = newtonian_potential(&ball, &b, x, &q, &d, 20_000).unwrap();
        assert!(p.within(&[1.0 / 6.0], 4.0, 1e-3), "{p:?}");
        let g = potential_gradient(&ball, &b, x, &q, &d, 20_000).unwrap();
        assert!(g.within(&[-1.0 / 12.0, 0.0, 0.0], 4.0, 1e-3), "{g:?}");
    }

    #[test]
    fn independent_nodes_share_the_expectation() {
        let q = TimeQuadrature { sampling: NodeSampling::Independent, ..Default::default() };
        let est =
            newtonian_potential(&ball, &DensityBounds::unit_ball(), Vec3::zeros(), &q, &BrownianDriver::new(8), 20_000)
                .unwrap();
        assert!(est.within(&[0.5], 4.0, 1e-3), "{est:?}");
    }

    #[test]
    fn missing_bounds_are_reported() {
        let q = TimeQuadrature::default();
        let d = BrownianDriver::new(1);
        let err = newtonian_potential(&ball, &DensityBounds::default(), Vec3::zeros(), &q, &d, 10).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
        let tight = TimeQuadrature { tolerance: 1e-9, ..q };
        let err = newtonian_potential(&ball, &DensityBounds::unit_ball(), Vec3::zeros(), &tight, &d, 10).unwrap_err();
        assert!(matches!(err, Error::TruncationTooLarge { .. }));
    }

    #[test]
    fn hessian_trace_of_gaussian_bump() {
        let f = |y: &Vec3| (-0.5 * y.norm_squared()).exp();
        let q = TimeQuadrature { s_min: 1e-6, n_nodes: 40, ..Default::default() };
        let est = potential_hessian(&f, &DensityBounds::gaussian(1.0, 1.0), Vec3::zeros(), &q, &BrownianDriver::new(3), 20_000)
            .unwrap();
        let h = as_matrix(est.value());
        assert_eq!(h, h.transpose());
        let se: f64 = [0, 4, 8].iter().map(|&i| est.std_error()[i].powi(2)).sum::<f64>().sqrt();
        assert!((-h.trace() - 1.0).abs() < 4.0 * se * 3f64.sqrt() + 3.0 * est.truncation + 5e-3, "{h} {se}");
    }

    #[test]
    fn a_priori_bound_holds_for_ball() {
        let c = a_priori_potential_bound(&DensityBounds::unit_ball()).unwrap();
        assert!(c >= 0.5);
    }
}
