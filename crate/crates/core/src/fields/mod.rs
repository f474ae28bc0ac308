//! Time-dependent vector fields: analytic closed forms, grid-backed storage,
//! serialization and norm estimators.

pub mod analytic;
pub mod grid;
pub mod io;
pub mod norms;

use std::sync::Arc;

use crate::{Mat3, Vec3};

pub use analytic::{analytic_field, AnalyticField, FieldSpec, GaussianVortexBlob, LambOseen};
pub use grid::{build_grid_field, GridField, GridGeometry, OutsidePolicy};
pub use norms::{estimate_norms, NormReport, NormSettings};

/// A time-dependent field `R × R³ → R³` with its spatial Jacobian.
///
/// `gradient(t, x)[(i, j)]` is `∂u_i/∂x_j`, so `(∇u)v` is the directional
/// derivative of `u` along `v`.
pub trait VectorField: Send + Sync {
    fn value(&self, t: f64, x: &Vec3) -> Vec3;

    fn gradient(&self, t: f64, x: &Vec3) -> Mat3;

    fn curl(&self, t: f64, x: &Vec3) -> Vec3 {
        curl_of(&self.gradient(t, x))
    }

    fn divergence(&self, t: f64, x: &Vec3) -> f64 {
        self.gradient(t, x).trace()
    }
}

pub fn curl_of(g: &Mat3) -> Vec3 {
    Vec3::new(
        g[(2, 1)] - g[(1, 2)],
        g[(0, 2)] - g[(2, 0)],
        g[(1, 0)] - g[(0, 1)],
    )
}

impl<T: VectorField + ?Sized> VectorField for &T {
    fn value(&self, t: f64, x: &Vec3) -> Vec3 {
        (**self).value(t, x)
    }
    fn gradient(&self, t: f64, x: &Vec3) -> Mat3 {
        (**self).gradient(t, x)
    }
}

impl<T: VectorField + ?Sized> VectorField for Box<T> {
    fn value(&self, t: f64, x: &Vec3) -> Vec3 {
        (**self).value(t, x)
    }
    fn gradient(&self, t: f64, x: &Vec3) -> Mat3 {
        (**self).gradient(t, x)
    }
}

impl<T: VectorField + ?Sized> VectorField for Arc<T> {
    fn value(&self, t: f64, x: &Vec3) -> Vec3 {
        (**self).value(t, x)
    }
    fn gradient(&self, t: f64, x: &Vec3) -> Mat3 {
        (**self).gradient(t, x)
    }
}

/// Field defined by a pair of closures.
pub struct FnField<V, G> {
    value: V,
    gradient: G,
}

impl<V, G> FnField<V, G>
where
    V: Fn(f64, &Vec3) -> Vec3 + Send + Sync,
    G: Fn(f64, &Vec3) -> Mat3 + Send + Sync,
{
    pub fn new(value: V, gradient: G) -> Self {
        Self { value, gradient }
    }
}

impl<V, G> VectorField for FnField<V, G>
where
    V: Fn(f64, &Vec3) -> Vec3 + Send + Sync,
    G: Fn(f64, &Vec3) -> Mat3 + Send + Sync,
{
    fn value(&self, t: f64, x: &Vec3) -> Vec3 {
        (self.value)(t, x)
    }
    fn gradient(&self, t: f64, x: &Vec3) -> Mat3 {
        (self.gradient)(t, x)
    }
}

/// `a·f + b·g`, evaluated pointwise.
pub struct Combination<F, G> {
    pub a: f64,
    pub f: F,
    pub b: f64,
    pub g: G,
}

impl<F: VectorField, G: VectorField> VectorField for Combination<F, G> {
    fn value(&self, t: f64, x: &Vec3) -> Vec3 {
        self.f.value(t, x) * self.a + self.g.value(t, x) * self.b
    }
    fn gradient(&self, t: f64, x: &Vec3) -> Mat3 {
        self.f.gradient(t, x) * self.a + self.g.gradient(t, x) * self.b
    }
}
