//! Closed-form fields used as drivers and oracles.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::VectorField;
use crate::potential::DensityBounds;
use crate::{Error, Mat3, Result, Vec3};

/// Planar Lamb–Oseen vortex embedded in 3D, axis along `x₃`.
///
/// Field time `t` corresponds to physical time `t0 + t`, so `t0 > 0` keeps
/// the core regular at `t = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambOseen {
    pub circulation: f64,
    pub nu: f64,
    pub t0: f64,
}

impl LambOseen {
    fn core(&self, t: f64) -> f64 {
        4.0 * self.nu * (self.t0 + t)
    }

    /// Axial vorticity `Γ/(4πνt)·exp(-r²/(4νt))` at physical time `t0 + t`.
    pub fn omega(&self, t: f64, r2: f64) -> f64 {
        let c = self.core(t);
        self.circulation / (PI * c) * (-r2 / c).exp()
    }

    /// Azimuthal profile `F(q)` with `u = F(r²)(-x₂, x₁, 0)`, and `F'(q)`.
    fn profile(&self, t: f64, q: f64) -> (f64, f64) {
        let c = self.core(t);
        let z = q / c;
        let k = self.circulation / (2.0 * PI);
        if z < 1e-3 {
            let f = k / c * (1.0 - z / 2.0 + z * z / 6.0 - z * z * z / 24.0 + z.powi(4) / 120.0);
            let df = k / (c * c) * (-0.5 + z / 3.0 - z * z / 8.0 + z * z * z / 30.0);
            (f, df)
        } else {
            let e = (-z).exp();
            let f = k * (1.0 - e) / q;
            let df = k * (-(1.0 - e) / (q * q) + e / (c * q));
            (f, df)
        }
    }

    pub fn velocity(&self, t: f64, x: &Vec3) -> Vec3 {
        let (f, _) = self.profile(t, x[0] * x[0] + x[1] * x[1]);
        Vec3::new(-f * x[1], f * x[0], 0.0)
    }

    pub fn velocity_gradient(&self, t: f64, x: &Vec3) -> Mat3 {
        let (f, df) = self.profile(t, x[0] * x[0] + x[1] * x[1]);
        let mut g = Mat3::zeros();
        for j in 0..2 {
            g[(0, j)] = -df * 2.0 * x[j] * x[1];
            g[(1, j)] = df * 2.0 * x[j] * x[0];
        }
        g[(0, 1)] -= f;
        g[(1, 0)] += f;
        g
    }

    pub fn vorticity(&self, t: f64, x: &Vec3) -> Vec3 {
        Vec3::new(0.0, 0.0, self.omega(t, x[0] * x[0] + x[1] * x[1]))
    }

    pub fn vorticity_gradient(&self, t: f64, x: &Vec3) -> Mat3 {
        let c = self.core(t);
        let w = self.omega(t, x[0] * x[0] + x[1] * x[1]);
        let mut g = Mat3::zeros();
        g[(2, 0)] = -2.0 * x[0] / c * w;
        g[(2, 1)] = -2.0 * x[1] / c * w;
        g
    }
}

/// Vortex blob `ξ = curl curl (0, 0, ψ)` with `ψ = a·exp(-|x|²/(2ℓ²))`.
///
/// Its divergence-free velocity is exactly `u = curl (0, 0, ψ)`, which decays
/// like a Gaussian, so it is the unique Biot–Savart velocity of `ξ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianVortexBlob {
    pub amplitude: f64,
    pub scale: f64,
}

impl GaussianVortexBlob {
    fn psi(&self, x: &Vec3) -> f64 {
        self.amplitude * (-x.norm_squared() / (2.0 * self.scale * self.scale)).exp()
    }

    fn d2(&self, x: &Vec3, psi: f64, i: usize, j: usize) -> f64 {
        let k = 1.0 / (self.scale * self.scale);
        let delta = if i == j { 1.0 } else { 0.0 };
        (k * k * x[i] * x[j] - k * delta) * psi
    }

    fn d3(&self, x: &Vec3, psi: f64, i: usize, j: usize, m: usize) -> f64 {
        let k = 1.0 / (self.scale * self.scale);
        let d = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
        psi * (k * k * (d(i, m) * x[j] + d(j, m) * x[i] + d(i, j) * x[m]) - k * k * k * x[i] * x[j] * x[m])
    }

    pub fn velocity(&self, x: &Vec3) -> Vec3 {
        let k = 1.0 / (self.scale * self.scale);
        let p = self.psi(x);
        // (∂₂ψ, -∂₁ψ, 0)
        Vec3::new(-k * x[1] * p, k * x[0] * p, 0.0)
    }

    pub fn velocity_gradient(&self, x: &Vec3) -> Mat3 {
        let p = self.psi(x);
        let mut g = Mat3::zeros();
        for j in 0..3 {
            g[(0, j)] = self.d2(x, p, 1, j);
            g[(1, j)] = -self.d2(x, p, 0, j);
        }
        g
    }

    pub fn vorticity(&self, x: &Vec3) -> Vec3 {
        let p = self.psi(x);
        Vec3::new(
            self.d2(x, p, 0, 2),
            self.d2(x, p, 1, 2),
            -self.d2(x, p, 0, 0) - self.d2(x, p, 1, 1),
        )
    }

    /// Declared bounds on `|ξ|`. In units `y = x/ℓ`, `ξ = (a/ℓ²) Φ(y)` with
    /// `sup|Φ| = 2`; the integral constants come from a fine quadrature of
    /// `Φ` and are rounded up.
    pub fn vorticity_bounds(&self) -> DensityBounds {
        let (a, l) = (self.amplitude.abs(), self.scale);
        let c = a / (l * l);
        let lp = |p: f64, k: f64| (p, c * l.powf(3.0 / p) * k);
        DensityBounds {
            lp: vec![lp(1.0, 31.2), lp(1.2, 14.4), lp(2.0, 3.75), (f64::INFINITY, 2.0 * c)],
            second_moment: Some(140.5 * a * l.powi(3)),
            lipschitz: Some(2.0 * c / l),
            ..Default::default()
        }
    }

    pub fn vorticity_gradient(&self, x: &Vec3) -> Mat3 {
        let p = self.psi(x);
        let mut g = Mat3::zeros();
        for m in 0..3 {
            g[(0, m)] = self.d3(x, p, 0, 2, m);
            g[(1, m)] = self.d3(x, p, 1, 2, m);
            g[(2, m)] = -self.d3(x, p, 0, 0, m) - self.d3(x, p, 1, 1, m);
        }
        g
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AnalyticField {
    Zero,
    Constant(Vec3),
    /// `u(x) = A x`.
    Linear(Mat3),
    /// `u(x) = (γ x₂, 0, 0)`.
    SolenoidalShear { rate: f64 },
    /// Velocity of a Lamb–Oseen vortex; its curl is the vortex's vorticity.
    LambOseen(LambOseen),
    /// Velocity of a Gaussian vortex blob.
    VortexBlob(GaussianVortexBlob),
    /// `A·exp(-|x|²/(2w²))`.
    GaussianBump { amplitude: Vec3, width: f64 },
}

impl AnalyticField {
    /// The curl of this field as a field in its own right, with closed-form
    /// gradient.
    pub fn vorticity(self) -> AnalyticVorticity {
        AnalyticVorticity(self)
    }

    /// Bounds on `|u|` when this field is used as a density; `None` for
    /// fields that do not decay.
    pub fn bounds(&self) -> Option<DensityBounds> {
        match self {
            AnalyticField::Zero => Some(DensityBounds::zero()),
            AnalyticField::GaussianBump { amplitude, width } => Some(DensityBounds::gaussian(amplitude.norm(), *width)),
            _ => None,
        }
    }
}

fn bump(x: &Vec3, width: f64) -> f64 {
    (-x.norm_squared() / (2.0 * width * width)).exp()
}

impl VectorField for AnalyticField {
    fn value(&self, t: f64, x: &Vec3) -> Vec3 {
        match self {
            AnalyticField::Zero => Vec3::zeros(),
            AnalyticField::Constant(c) => *c,
            AnalyticField::Linear(a) => a * x,
            AnalyticField::SolenoidalShear { rate } => Vec3::new(rate * x[1], 0.0, 0.0),
            AnalyticField::LambOseen(lo) => lo.velocity(t, x),
            AnalyticField::VortexBlob(b) => b.velocity(x),
            AnalyticField::GaussianBump { amplitude, width } => amplitude * bump(x, *width),
        }
    }

    fn gradient(&self, t: f64, x: &Vec3) -> Mat3 {
        match self {
            AnalyticField::Zero | AnalyticField::Constant(_) => Mat3::zeros(),
            AnalyticField::Linear(a) => *a,
            AnalyticField::SolenoidalShear { rate } => {
                let mut g = Mat3::zeros();
                g[(0, 1)] = *rate;
                g
            }
            AnalyticField::LambOseen(lo) => lo.velocity_gradient(t, x),
            AnalyticField::VortexBlob(b) => b.velocity_gradient(x),
            AnalyticField::GaussianBump { amplitude, width } => {
                let g = bump(x, *width);
                amplitude * (x * (-g / (width * width))).transpose()
            }
        }
    }
}

/// Curl of an [`AnalyticField`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticVorticity(pub AnalyticField);

impl AnalyticVorticity {
    /// Bounds on `|ξ|`; `None` when the vorticity is not integrable.
    pub fn bounds(&self) -> Option<DensityBounds> {
        match &self.0 {
            AnalyticField::Zero | AnalyticField::Constant(_) => Some(DensityBounds::zero()),
            AnalyticField::VortexBlob(b) => Some(b.vorticity_bounds()),
            _ => None,
        }
    }
}

impl VectorField for AnalyticVorticity {
    fn value(&self, t: f64, x: &Vec3) -> Vec3 {
        match &self.0 {
            AnalyticField::LambOseen(lo) => lo.vorticity(t, x),
            AnalyticField::VortexBlob(b) => b.vorticity(x),
            f => f.curl(t, x),
        }
    }

    fn gradient(&self, t: f64, x: &Vec3) -> Mat3 {
        match &self.0 {
            AnalyticField::LambOseen(lo) => lo.vorticity_gradient(t, x),
            AnalyticField::VortexBlob(b) => b.vorticity_gradient(x),
            AnalyticField::GaussianBump { amplitude, width } => {
                // ∂_m (∇g × A) = (∂_m ∇g) × A
                let w2 = width * width;
                let g = bump(x, *width);
                let mut out = Mat3::zeros();
                for m in 0..3 {
                    let mut col = Vec3::zeros();
                    for i in 0..3 {
                        let delta = if i == m { 1.0 } else { 0.0 };
                        col[i] = (x[i] * x[m] / (w2 * w2) - delta / w2) * g;
                    }
                    out.set_column(m, &col.cross(amplitude));
                }
                out
            }
            _ => Mat3::zeros(),
        }
    }
}

/// Name-plus-parameters description of an analytic field, as written in run
/// configurations.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSpec {
    pub name: String,
    pub amplitude: Option<f64>,
    pub scale: Option<f64>,
    pub rate: Option<f64>,
    pub circulation: Option<f64>,
    pub t0: Option<f64>,
    pub vector: Option<[f64; 3]>,
}

impl FieldSpec {
    pub fn named(name: &str) -> Self {
        Self {
            name: name.to_string(),
            ..Default::default()
        }
    }
}

/// Looks up an analytic field by name. `nu` is the viscosity used by
/// viscous closed forms (Lamb–Oseen).
pub fn analytic_field(spec: &FieldSpec, nu: f64) -> Result<AnalyticField> {
    let positive = |v: Option<f64>, default: f64, what: &str| -> Result<f64> {
        let v = v.unwrap_or(default);
        if v.is_finite() && v > 0.0 {
            Ok(v)
        } else {
            Err(Error::InvalidArgument(format!("{}: `{what}` must be positive", spec.name)))
        }
    };
    match spec.name.as_str() {
        "zero" => Ok(AnalyticField::Zero),
        "constant" => Ok(AnalyticField::Constant(Vec3::from(spec.vector.unwrap_or([0.0; 3])))),
        "solenoidal_shear" => Ok(AnalyticField::SolenoidalShear {
            rate: spec.rate.unwrap_or(0.5),
        }),
        "lamb_oseen_slice" => Ok(AnalyticField::LambOseen(LambOseen {
            circulation: spec.circulation.unwrap_or(1.0),
            nu: positive(Some(nu), nu, "nu")?,
            t0: positive(spec.t0, 1.0, "t0")?,
        })),
        "gaussian_vortex_blob" => Ok(AnalyticField::VortexBlob(GaussianVortexBlob {
            amplitude: spec.amplitude.unwrap_or(1.0),
            scale: positive(spec.scale, 0.5, "scale")?,
        })),
        "gaussian_bump" => {
            let dir = Vec3::from(spec.vector.unwrap_or([0.0, 0.0, 1.0]));
            Ok(AnalyticField::GaussianBump {
                amplitude: dir * spec.amplitude.unwrap_or(1.0),
                width: positive(spec.scale, 1.0, "scale")?,
            })
        }
        other => Err(Error::UnknownField(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_gradient(f: &dyn VectorField, t: f64, x: &Vec3, h: f64) -> Mat3 {
        let mut g = Mat3::zeros();
        for j in 0..3 {
            let mut e = Vec3::zeros();
            e[j] = h;
            let col = (f.value(t, &(x + e)) - f.value(t, &(x - e))) / (2.0 * h);
            g.set_column(j, &col);
        }
        g
    }

    fn probes() -> Vec<Vec3> {
        vec![
            Vec3::new(0.1, -0.2, 0.3),
            Vec3::new(0.5, 0.4, -0.1),
            Vec3::new(-0.7, 0.2, 0.05),
            Vec3::new(1e-4, 2e-4, 0.0),
        ]
    }

    #[test]
    fn zero_field_is_zero() {
        let f = analytic_field(&FieldSpec::named("zero"), 1.0).unwrap();
        for x in probes() {
            assert_eq!(f.value(0.3, &x), Vec3::zeros());
            assert_eq!(f.gradient(0.3, &x), Mat3::zeros());
        }
    }

    #[test]
    fn shear_is_divergence_free() {
        let f = analytic_field(&FieldSpec::named("solenoidal_shear"), 1.0).unwrap();
        for x in probes() {
            assert_eq!(f.divergence(0.0, &x), 0.0);
        }
    }

    #[test]
    fn unknown_name_is_rejected() {
        assert!(matches!(
            analytic_field(&FieldSpec::named("taylor_green"), 1.0),
            Err(Error::UnknownField(_))
        ));
    }

    #[test]
    fn closed_form_gradients_match_finite_differences() {
        let lo = AnalyticField::LambOseen(LambOseen { circulation: 1.3, nu: 0.1, t0: 0.5 });
        let blob = AnalyticField::VortexBlob(GaussianVortexBlob { amplitude: 0.7, scale: 0.6 });
        let bump = AnalyticField::GaussianBump { amplitude: Vec3::new(0.2, -1.0, 0.5), width: 0.8 };
        let fields: Vec<Box<dyn VectorField>> = vec![
            Box::new(lo),
            Box::new(lo.vorticity()),
            Box::new(blob),
            Box::new(blob.vorticity()),
            Box::new(bump),
            Box::new(bump.vorticity()),
        ];
        for f in &fields {
            for x in probes() {
                let exact = f.gradient(0.2, &x);
                let fd = fd_gradient(f.as_ref(), 0.2, &x, 1e-5);
                assert!((exact - fd).amax() < 1e-6, "{exact} vs {fd}");
            }
        }
    }

    #[test]
    fn vorticity_is_curl_and_velocity_solenoidal() {
        let lo = AnalyticField::LambOseen(LambOseen { circulation: 1.3, nu: 0.1, t0: 0.5 });
        let blob = AnalyticField::VortexBlob(GaussianVortexBlob { amplitude: 0.7, scale: 0.6 });
        for f in [lo, blob] {
            for x in probes() {
                let w = f.vorticity().value(0.2, &x);
                assert!((f.curl(0.2, &x) - w).amax() < 1e-12);
                assert!(f.divergence(0.2, &x).abs() < 1e-12);
                assert!(f.vorticity().divergence(0.2, &x).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn lamb_oseen_solves_planar_vorticity_equation() {
        // ∂_t ω + u·∇ω = ν Δω, residual by central differences.
        let lo = LambOseen { circulation: 2.0, nu: 0.05, t0: 1.0 };
        let (ht, hx) = (1e-4, 1e-3);
        for x in probes() {
            let r2 = |y: &Vec3| y[0] * y[0] + y[1] * y[1];
            let dt = (lo.omega(0.3 + ht, r2(&x)) - lo.omega(0.3 - ht, r2(&x))) / (2.0 * ht);
            let mut lap = 0.0;
            let mut grad = Vec3::zeros();
            for j in 0..2 {
                let mut e = Vec3::zeros();
                e[j] = hx;
                let (p, m) = (lo.omega(0.3, r2(&(x + e))), lo.omega(0.3, r2(&(x - e))));
                lap += (p - 2.0 * lo.omega(0.3, r2(&x)) + m) / (hx * hx);
                grad[j] = (p - m) / (2.0 * hx);
            }
            let residual = dt + lo.velocity(0.3, &x).dot(&grad) - lo.nu * lap;
            assert!(residual.abs() < 1e-5, "residual {residual}");
        }
    }
}
