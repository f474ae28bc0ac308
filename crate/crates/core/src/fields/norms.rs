//! Grid estimators of `‖·‖_∞`, `[·]_α`, `‖·‖_p` and `‖·‖_{C^{1,α}_b}`.
//!
//! Sup-type quantities are maxima over finitely many points and are
//! therefore lower bounds of the true norms; `L^p` is a midpoint rule on
//! the truncated box `[-R, R]³`.

use rayon::prelude::*;
use serde::Serialize;

use super::{GridGeometry, VectorField};
use crate::error::invalid;
use crate::rng::BrownianDriver;
use crate::{Result, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormSettings {
    pub alpha: f64,
    pub p: f64,
    /// Half-width of the truncated box.
    pub radius: f64,
    pub spacing: f64,
    pub n_pairs: usize,
    pub seed: u64,
    /// Boundary-to-sup ratio above which the tail counts as non-decaying.
    pub decay_threshold: f64,
}

impl NormSettings {
    pub fn new(alpha: f64, p: f64, radius: f64, spacing: f64) -> Self {
        Self {
            alpha,
            p,
            radius,
            spacing,
            n_pairs: 4096,
            seed: 0x5eed,
            decay_threshold: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormReport {
    pub alpha: f64,
    pub p: f64,
    pub sup_norm: f64,
    pub holder_seminorm: f64,
    pub lp_norm: f64,
    /// `Σ_j sup |∂_j g|`.
    pub gradient_sup: f64,
    /// `Σ_j [∂_j g]_α`.
    pub gradient_holder: f64,
    pub truncation_radius: f64,
    /// Set when the field does not decay towards the box boundary, in which
    /// case `lp_norm` only describes the truncated box.
    pub non_decaying: bool,
}

impl NormReport {
    /// `‖g‖_{C^α_b}` = sup + Hölder seminorm.
    pub fn holder_norm(&self) -> f64 {
        self.sup_norm + self.holder_seminorm
    }

    /// `‖g‖_{C^α_b ∩ L^p}` = `‖g‖_p + ‖g‖_{C^α_b}`.
    pub fn combined(&self) -> f64 {
        self.lp_norm + self.sup_norm + self.holder_seminorm
    }

    /// `‖g‖_{C^{1,α}_b}` = sup + `Σ_j sup|∂_j g|` + `Σ_j [∂_j g]_α`.
    pub fn c1_alpha(&self) -> f64 {
        self.sup_norm + self.gradient_sup + self.gradient_holder
    }
}

pub fn estimate_norms(field: &dyn VectorField, t: f64, s: &NormSettings) -> Result<NormReport> {
    if !(s.alpha > 0.0 && s.alpha < 1.0) {
        return Err(invalid("Hölder exponent must lie in (0, 1)"));
    }
    if !(s.p >= 1.0 && s.p.is_finite()) {
        return Err(invalid("integrability exponent must be >= 1"));
    }
    let geom = GridGeometry::centered_cube(s.radius, s.spacing)?;
    let n = geom.n_nodes();

    // (sup |g|, Σ_j sup |∂_j g| per column, boundary sup)
    let node_stats = (0..n)
        .into_par_iter()
        .map(|idx| {
            let x = geom.position(idx);
            let v = field.value(t, &x).norm();
            let g = field.gradient(t, &x);
            let cols = [g.column(0).norm(), g.column(1).norm(), g.column(2).norm()];
            let b = if geom.is_boundary(idx) { v } else { 0.0 };
            (v, cols, b)
        })
        .collect::<Vec<_>>();
    let mut sup = 0.0f64;
    let mut col_sup = [0.0f64; 3];
    let mut boundary = 0.0f64;
    for (v, cols, b) in &node_stats {
        sup = sup.max(*v);
        boundary = boundary.max(*b);
        for j in 0..3 {
            col_sup[j] = col_sup[j].max(cols[j]);
        }
    }

    let cells = geom.dims[0] - 1;
    let h = s.spacing;
    let lp_sum: f64 = (0..cells)
        .into_par_iter()
        .map(|k| {
            let mut acc = 0.0;
            for j in 0..cells {
                for i in 0..cells {
                    let c = geom.origin + Vec3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5) * h;
                    acc += field.value(t, &c).norm().powf(s.p);
                }
            }
            acc
        })
        .collect::<Vec<_>>()
        .iter()
        .sum();
    let lp = (lp_sum * h * h * h).powf(1.0 / s.p);

    let mut levels = Vec::new();
    let mut delta = h;
    while delta <= 2.0 * s.radius * (1.0 + 1e-12) {
        levels.push(delta);
        delta *= 2.0;
    }
    let driver = BrownianDriver::new(s.seed);
    let lo = geom.origin;
    let width = 2.0 * s.radius;
    let pair_stats = (0..s.n_pairs)
        .into_par_iter()
        .map(|i| {
            let delta = levels[i % levels.len()];
            let mut rng = driver.stream_for(i as u64);
            let x = lo + Vec3::new(rng.uniform(), rng.uniform(), rng.uniform()) * width;
            let dir = rng.gaussian3().normalize();
            let mut y = x + dir * delta;
            if !geom.contains(&y) {
                y = x - dir * delta;
                if !geom.contains(&y) {
                    return (0.0, [0.0; 3]);
                }
            }
            let scale = (x - y).norm().powf(s.alpha);
            let dv = (field.value(t, &x) - field.value(t, &y)).norm() / scale;
            let dg = field.gradient(t, &x) - field.gradient(t, &y);
            let cols = [
                dg.column(0).norm() / scale,
                dg.column(1).norm() / scale,
                dg.column(2).norm() / scale,
            ];
            (dv, cols)
        })
        .collect::<Vec<_>>();
    let mut holder = 0.0f64;
    let mut grad_holder = [0.0f64; 3];
    for (dv, cols) in &pair_stats {
        holder = holder.max(*dv);
        for j in 0..3 {
            grad_holder[j] = grad_holder[j].max(cols[j]);
        }
    }

    Ok(NormReport {
        alpha: s.alpha,
        p: s.p,
        sup_norm: sup,
        holder_seminorm: holder,
        lp_norm: lp,
        gradient_sup: col_sup.iter().sum(),
        gradient_holder: grad_holder.iter().sum(),
        truncation_radius: s.radius,
        non_decaying: sup > 0.0 && boundary > s.decay_threshold * sup,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::AnalyticField;

    #[test]
    fn zero_field_has_zero_norms() {
        let r = estimate_norms(&AnalyticField::Zero, 0.0, &NormSettings::new(0.5, 1.0, 2.0, 0.5)).unwrap();
        assert_eq!(r.combined(), 0.0);
        assert_eq!(r.c1_alpha(), 0.0);
        assert!(!r.non_decaying);
    }

    #[test]
    fn constant_field_is_flagged() {
        let c = Vec3::new(3.0, 0.0, 4.0);
        let r = estimate_norms(&AnalyticField::Constant(c), 0.0, &NormSettings::new(0.5, 1.0, 2.0, 0.5)).unwrap();
        assert!((r.sup_norm - 5.0).abs() < 1e-14);
        assert_eq!(r.holder_seminorm, 0.0);
        assert!(r.non_decaying);
    }

    #[test]
    fn gaussian_l2_norm_matches_closed_form() {
        let bump = AnalyticField::GaussianBump { amplitude: Vec3::new(1.0, 0.0, 0.0), width: 1.0 };
        let mut s = NormSettings::new(0.5, 2.0, 6.0, 0.1);
        s.n_pairs = 64;
        let r = estimate_norms(&bump, 0.0, &s).unwrap();
        let exact = std::f64::consts::PI.powf(0.75);
        assert!((r.lp_norm - exact).abs() < 1e-3, "{} vs {exact}", r.lp_norm);
        assert!((r.sup_norm - 1.0).abs() < 1e-12);
        assert!(!r.non_decaying);
    }

    #[test]
    fn combined_norm_is_additive() {
        let bump = AnalyticField::GaussianBump { amplitude: Vec3::new(0.0, 2.0, 0.0), width: 0.7 };
        let r = estimate_norms(&bump, 0.0, &NormSettings::new(0.4, 1.2, 3.0, 0.25)).unwrap();
        assert_eq!(r.combined(), r.lp_norm + r.sup_norm + r.holder_seminorm);
    }

    #[test]
    fn more_pairs_never_lower_the_seminorm() {
        let bump = AnalyticField::GaussianBump { amplitude: Vec3::new(1.0, 0.0, 0.0), width: 0.5 };
        let mut s = NormSettings::new(0.5, 1.0, 2.0, 0.25);
        s.n_pairs = 256;
        let a = estimate_norms(&bump, 0.0, &s).unwrap();
        s.n_pairs = 2048;
        let b = estimate_norms(&bump, 0.0, &s).unwrap();
        assert!(b.holder_seminorm >= a.holder_seminorm);
        assert!(b.gradient_holder >= a.gradient_holder);
    }

    #[test]
    fn sup_is_monotone_under_nested_refinement() {
        let bump = AnalyticField::GaussianBump { amplitude: Vec3::new(1.0, 0.0, 0.0), width: 0.3 };
        let coarse = estimate_norms(&bump, 0.0, &NormSettings::new(0.5, 1.0, 1.2, 0.4)).unwrap();
        let fine = estimate_norms(&bump, 0.0, &NormSettings::new(0.5, 1.0, 1.2, 0.2)).unwrap();
        assert!(fine.sup_norm >= coarse.sup_norm);
        assert!(fine.gradient_sup >= coarse.gradient_sup);
    }

    #[test]
    fn rejects_bad_exponents() {
        let f = AnalyticField::Zero;
        assert!(estimate_norms(&f, 0.0, &NormSettings::new(1.0, 1.0, 1.0, 0.5)).is_err());
        assert!(estimate_norms(&f, 0.0, &NormSettings::new(0.5, 0.5, 1.0, 0.5)).is_err());
    }
}
