//! Deterministic reference values: closed forms, dense quadrature and a
//! finite-difference solver. None of them draws random numbers.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::invalid;
use crate::fields::{AnalyticField, VectorField};
use crate::{Result, Vec3};

/// Datum of the heat-convolution oracle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum HeatDatum {
    /// `A·cos(k x₁)`.
    Cosine { amplitude: f64, wavenumber: f64 },
    /// `A·exp(-|x|²/(2w²))` on `ℝ^dim`.
    GaussianBump { amplitude: f64, width: f64, dim: usize },
}

impl HeatDatum {
    pub fn dim(&self) -> usize {
        match self {
            HeatDatum::Cosine { .. } => 1,
            HeatDatum::GaussianBump { dim, .. } => *dim,
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match *self {
            HeatDatum::Cosine { amplitude, wavenumber } => amplitude * (wavenumber * x[0]).cos(),
            HeatDatum::GaussianBump { amplitude, width, .. } => {
                let r2: f64 = x.iter().map(|v| v * v).sum();
                amplitude * (-r2 / (2.0 * width * width)).exp()
            }
        }
    }
}

/// Coefficients `b(x) = b₀ + b₁cos x`, `c(x) = c₀ + c₁cos x`,
/// `f(x) = f₀ sin x`, `φ(x) = cos(kx)` of a `2π`-periodic scalar problem
/// `∂_t v + b ∂_x v + ½σ²∂_x² v + c v + f = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeriodicProblem1d {
    pub drift: [f64; 2],
    pub sigma: f64,
    pub potential: [f64; 2],
    pub source: f64,
    pub wavenumber: i32,
}

impl PeriodicProblem1d {
    pub fn drift_at(&self, x: f64) -> f64 {
        self.drift[0] + self.drift[1] * x.cos()
    }

    pub fn potential_at(&self, x: f64) -> f64 {
        self.potential[0] + self.potential[1] * x.cos()
    }

    pub fn source_at(&self, x: f64) -> f64 {
        self.source * x.sin()
    }

    pub fn datum_at(&self, x: f64) -> f64 {
        (self.wavenumber as f64 * x).cos()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OracleSpec {
    /// `E[φ(x + σW_τ)]·e^{λτ}`.
    HeatConvolution { datum: HeatDatum, sigma: f64, rate: f64 },
    /// Newtonian potential (`derivative = false`) or its gradient of the
    /// indicator of the ball of the given radius.
    BallPotential { radius: f64, derivative: bool },
    /// `u(x) = (4π)⁻¹∫ ξ(y) × (x - y)/|x - y|³ dy` by spherical product
    /// quadrature centred at `x`, cut off at `|y - x| = cutoff`.
    KernelBiotSavart { vorticity: AnalyticField, cutoff: f64, resolution: usize },
    /// Axial vorticity of a Lamb–Oseen vortex at field time `t`.
    LambOseen { circulation: f64, nu: f64, t0: f64 },
    /// `e^{Aτ}φ` for a constant `l × l` matrix `A` (row-major).
    LinearOdeMean { matrix: Vec<f64>, datum: Vec<f64> },
    /// Crank–Nicolson on a periodic grid of `cells` nodes with `steps` time
    /// steps per unit time.
    FdParabolic1d { problem: PeriodicProblem1d, cells: usize, steps: usize },
}

/// Reference value with its own discretization-error estimate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleValue {
    pub value: Vec<f64>,
    pub error: f64,
}

impl OracleValue {
    fn exact(value: Vec<f64>) -> Self {
        Self { value, error: 0.0 }
    }
}

/// Reference value of `spec` at point `x` and elapsed time `t`.
pub fn oracle_reference(spec: &OracleSpec, x: &[f64], t: f64) -> Result<OracleValue> {
    if x.iter().any(|v| !v.is_finite()) || !t.is_finite() {
        return Err(invalid("oracle query must be finite"));
    }
    match spec {
        OracleSpec::HeatConvolution { datum, sigma, rate } => {
            if x.len() != datum.dim() || t < 0.0 {
                return Err(invalid("heat oracle needs a point of the datum's dimension and t >= 0"));
            }
            let var = sigma * sigma * t;
            let v = match *datum {
                HeatDatum::Cosine { amplitude, wavenumber } => {
                    amplitude * (wavenumber * x[0]).cos() * (-0.5 * wavenumber * wavenumber * var).exp()
                }
                HeatDatum::GaussianBump { amplitude, width, dim } => {
                    let w2 = width * width;
                    let r2: f64 = x.iter().map(|v| v * v).sum();
                    amplitude * (w2 / (w2 + var)).powf(dim as f64 / 2.0) * (-r2 / (2.0 * (w2 + var))).exp()
                }
            };
            Ok(OracleValue::exact(vec![v * (rate * t).exp()]))
        }
        OracleSpec::BallPotential { radius, derivative } => {
            let x = point3(x)?;
            let (a, r) = (*radius, x.norm());
            if !(a > 0.0) {
                return Err(invalid("ball radius must be positive"));
            }
            if *derivative {
                let g = if r < a { -x / 3.0 } else { -x * (a.powi(3) / (3.0 * r.powi(3))) };
                Ok(OracleValue::exact(g.as_slice().to_vec()))
            } else {
                let v = if r < a { (3.0 * a * a - r * r) / 6.0 } else { a.powi(3) / (3.0 * r) };
                Ok(OracleValue::exact(vec![v]))
            }
        }
        OracleSpec::KernelBiotSavart { vorticity, cutoff, resolution } => {
            let x = point3(x)?;
            if *resolution < 8 || !(*cutoff > 0.0) {
                return Err(invalid("kernel quadrature needs resolution >= 8 and a positive cutoff"));
            }
            let xi = vorticity.vorticity();
            let fine = kernel_quadrature(&xi, t, &x, *cutoff, *resolution);
            let coarse = kernel_quadrature(&xi, t, &x, *cutoff, resolution * 2 / 3);
            Ok(OracleValue { value: fine.as_slice().to_vec(), error: (fine - coarse).amax() })
        }
        OracleSpec::LambOseen { circulation, nu, t0 } => {
            let c = 4.0 * nu * (t0 + t);
            if !(c > 0.0) {
                return Err(invalid("Lamb–Oseen oracle needs ν(t0 + t) > 0"));
            }
            let x = point3(x)?;
            let r2 = x[0] * x[0] + x[1] * x[1];
            Ok(OracleValue::exact(vec![0.0, 0.0, circulation / (PI * c) * (-r2 / c).exp()]))
        }
        OracleSpec::LinearOdeMean { matrix, datum } => {
            let l = datum.len();
            if l == 0 || matrix.len() != l * l {
                return Err(invalid("matrix must be l × l for a datum of length l"));
            }
            let a = DMatrix::from_row_slice(l, l, matrix) * t;
            let v = a.exp() * DVector::from_column_slice(datum);
            Ok(OracleValue::exact(v.as_slice().to_vec()))
        }
        OracleSpec::FdParabolic1d { problem, cells, steps } => {
            if x.len() != 1 || t < 0.0 {
                return Err(invalid("finite-difference oracle takes a scalar point and t >= 0"));
            }
            if *cells < 16 || *steps < 4 {
                return Err(invalid("finite-difference oracle needs at least 16 cells and 4 steps"));
            }
            let n_t = (*steps as f64 * t).ceil().max(1.0) as usize;
            let fine = crank_nicolson(problem, *cells, n_t, t, x[0]);
            let coarse = crank_nicolson(problem, cells / 2, n_t.div_ceil(2), t, x[0]);
            Ok(OracleValue { value: vec![fine], error: (fine - coarse).abs() })
        }
    }
}

fn point3(x: &[f64]) -> Result<Vec3> {
    if x.len() != 3 {
        return Err(invalid(format!("expected a point in ℝ³, got {} coordinates", x.len())));
    }
    Ok(Vec3::new(x[0], x[1], x[2]))
}

/// Nodes and weights of `n`-point Gauss–Legendre on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            if n == 1 {
                p0 = 1.0;
                p1 = z;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        out.push((z, 2.0 / ((1.0 - z * z) * dp * dp)));
    }
    out
}

fn kernel_quadrature(xi: &dyn VectorField, t: f64, x: &Vec3, cutoff: f64, n: usize) -> Vec3 {
    let radial = gauss_legendre(n);
    let polar = gauss_legendre(n / 2);
    let n_phi = n;
    let mut acc = Vec3::zeros();
    for &(c, wc) in &polar {
        let sin = (1.0 - c * c).sqrt();
        for j in 0..n_phi {
            let phi = 2.0 * PI * j as f64 / n_phi as f64;
            let omega = Vec3::new(sin * phi.cos(), sin * phi.sin(), c);
            let mut line = Vec3::zeros();
            for &(z, wr) in &radial {
                let r = 0.5 * cutoff * (z + 1.0);
                line += xi.value(t, &(x + omega * r)) * (0.5 * cutoff * wr);
            }
            acc += omega.cross(&line) * (wc * 2.0 * PI / n_phi as f64);
        }
    }
    acc / (4.0 * PI)
}

/// Solves backwards from the datum over elapsed time `t` on `cells` periodic
/// nodes, then interpolates at `x` with the four nearest nodes.
fn crank_nicolson(p: &PeriodicProblem1d, cells: usize, n_t: usize, t: f64, x: f64) -> f64 {
    let h = 2.0 * PI / cells as f64;
    let dt = t / n_t as f64;
    let nodes: Vec<f64> = (0..cells).map(|i| i as f64 * h).collect();
    let d2 = 0.5 * p.sigma * p.sigma;
    // w_τ = L w + f with L = b ∂_x + ½σ²∂_x² + c.
    let mut l = DMatrix::<f64>::zeros(cells, cells);
    for (i, &xi) in nodes.iter().enumerate() {
        let (im, ip) = ((i + cells - 1) % cells, (i + 1) % cells);
        let b = p.drift_at(xi);
        l[(i, im)] += d2 / (h * h) - b / (2.0 * h);
        l[(i, ip)] += d2 / (h * h) + b / (2.0 * h);
        l[(i, i)] += -2.0 * d2 / (h * h) + p.potential_at(xi);
    }
    let id = DMatrix::<f64>::identity(cells, cells);
    let lhs = (&id - &l * (0.5 * dt)).lu();
    let rhs = &id + &l * (0.5 * dt);
    let f = DVector::from_iterator(cells, nodes.iter().map(|&x| p.source_at(x) * dt));
    let mut w = DVector::from_iterator(cells, nodes.iter().map(|&x| p.datum_at(x)));
    for _ in 0..n_t {
        let b = &rhs * &w + &f;
        w = lhs.solve(&b).expect("Crank–Nicolson matrix is nonsingular for small steps");
    }
    let y = x.rem_euclid(2.0 * PI) / h;
    let i0 = y.floor() as isize;
    let mut v = 0.0;
    for a in -1..=2isize {
        let idx = (i0 + a).rem_euclid(cells as isize) as usize;
        let mut weight = 1.0;
        for b in -1..=2isize {
            if b != a {
                weight *= (y - (i0 + b) as f64) / (a - b) as f64;
            }
        }
        v += weight * w[idx];
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::GaussianVortexBlob;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let q = gauss_legendre(6);
        let s: f64 = q.iter().map(|(z, w)| w * z.powi(10)).sum();
        assert!((s - 2.0 / 11.0).abs() < 1e-14);
        let total: f64 = q.iter().map(|(_, w)| w).sum();
        assert!((total - 2.0).abs() < 1e-14);
    }

    #[test]
    fn ball_potential_values() {
        let spec = OracleSpec::BallPotential { radius: 1.0, derivative: false };
        assert_eq!(oracle_reference(&spec, &[0.0; 3], 0.0).unwrap().value, vec![0.5]);
        let v = oracle_reference(&spec, &[2.0, 0.0, 0.0], 0.0).unwrap().value[0];
        assert!((v - 1.0 / 6.0).abs() < 1e-15);
        let g = OracleSpec::BallPotential { radius: 1.0, derivative: true };
        let v = oracle_reference(&g, &[2.0, 0.0, 0.0], 0.0).unwrap().value;
        assert!((v[0] + 1.0 / 12.0).abs() < 1e-15);
        assert!(oracle_reference(&g, &[1.0], 0.0).is_err());
    }

    #[test]
    fn heat_convolution_closed_forms() {
        let cos = OracleSpec::HeatConvolution {
            datum: HeatDatum::Cosine { amplitude: 1.0, wavenumber: 2.0 },
            sigma: 1.0,
            rate: 0.0,
        };
        let v = oracle_reference(&cos, &[0.3], 0.5).unwrap().value[0];
        assert!((v - (0.6f64).cos() * (-1.0f64).exp()).abs() < 1e-15);
        let bump = OracleSpec::HeatConvolution {
            datum: HeatDatum::GaussianBump { amplitude: 2.0, width: 1.0, dim: 3 },
            sigma: 1.0,
            rate: 0.0,
        };
        assert_eq!(oracle_reference(&bump, &[0.0; 3], 0.0).unwrap().value, vec![2.0]);
        let v = oracle_reference(&bump, &[0.0; 3], 1.0).unwrap().value[0];
        assert!((v - 2.0 * 0.5f64.powf(1.5)).abs() < 1e-15);
    }

    #[test]
    fn kernel_oracle_matches_blob_velocity() {
        let blob = GaussianVortexBlob { amplitude: 1.0, scale: 0.5 };
        let spec = OracleSpec::KernelBiotSavart { vorticity: AnalyticField::VortexBlob(blob), cutoff: 5.0, resolution: 48 };
        for x in [Vec3::new(0.3, 0.1, 0.0), Vec3::new(0.0, 0.5, 0.2), Vec3::new(0.7, 0.0, -0.3)] {
            let o = oracle_reference(&spec, x.as_slice(), 0.0).unwrap();
            let exact = blob.velocity(&x);
            let err = (Vec3::from_column_slice(&o.value) - exact).amax();
            assert!(err < 1e-6 && o.error < 1e-4, "{x:?} {o:?} {exact:?}");
        }
        let zero = OracleSpec::KernelBiotSavart { vorticity: AnalyticField::Zero, cutoff: 1.0, resolution: 8 };
        assert_eq!(oracle_reference(&zero, &[0.1, 0.2, 0.3], 0.0).unwrap().value, vec![0.0; 3]);
    }

    #[test]
    fn lamb_oseen_peak() {
        let spec = OracleSpec::LambOseen { circulation: 1.0, nu: 0.25, t0: 1.0 };
        let v = oracle_reference(&spec, &[0.0; 3], 0.0).unwrap().value;
        assert!((v[2] - 1.0 / PI).abs() < 1e-15);
    }

    #[test]
    fn linear_ode_mean_of_a_rotation() {
        let spec = OracleSpec::LinearOdeMean { matrix: vec![0.0, 1.0, -1.0, 0.0], datum: vec![1.0, 0.0] };
        let v = oracle_reference(&spec, &[], PI / 2.0).unwrap().value;
        assert!(v[0].abs() < 1e-12 && (v[1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn crank_nicolson_reproduces_pure_diffusion() {
        let problem = PeriodicProblem1d { drift: [0.0; 2], sigma: 1.0, potential: [0.0; 2], source: 0.0, wavenumber: 2 };
        let spec = OracleSpec::FdParabolic1d { problem, cells: 256, steps: 400 };
        let o = oracle_reference(&spec, &[0.3], 0.5).unwrap();
        let exact = (0.6f64).cos() * (-1.0f64).exp();
        assert!((o.value[0] - exact).abs() < 1e-3, "{o:?}");
        assert!((o.value[0] - exact).abs() <= 2.0 * o.error + 1e-6);
    }

    #[test]
    fn crank_nicolson_with_constant_potential_and_source() {
        // φ = cos x, c = 0.3, f = 0.2 sin x: modes decouple.
        let problem = PeriodicProblem1d { drift: [0.0; 2], sigma: 1.0, potential: [0.3, 0.0], source: 0.2, wavenumber: 1 };
        let spec = OracleSpec::FdParabolic1d { problem, cells: 256, steps: 400 };
        let (x, t) = (0.7f64, 0.8f64);
        let lam = 0.3 - 0.5;
        let exact = x.cos() * (lam * t).exp() + 0.2 * x.sin() * ((lam * t).exp() - 1.0) / lam;
        let o = oracle_reference(&spec, &[x], t).unwrap();
        assert!((o.value[0] - exact).abs() < 1e-4, "{o:?} {exact}");
    }
}
