//! Uniform-grid vector fields with trilinear spatial and linear temporal
//! interpolation.

use std::ops::{Add, Mul};

use rayon::prelude::*;

use super::VectorField;
use crate::error::invalid;
use crate::{Mat3, Result, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutsidePolicy {
    /// Zero outside the box (compactly supported data, e.g. vorticity).
    ZeroExtend,
    /// Nearest point of the box (e.g. velocity).
    Clamp,
}

/// Node lattice `origin + h·(i, j, k)`, `0 ≤ i < dims[0]` and so on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridGeometry {
    pub origin: Vec3,
    pub spacing: f64,
    pub dims: [usize; 3],
}

impl GridGeometry {
    pub fn new(origin: Vec3, spacing: f64, dims: [usize; 3]) -> Result<Self> {
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(invalid("grid spacing must be positive"));
        }
        if dims.iter().any(|&n| n < 2) {
            return Err(invalid("grid needs at least two nodes per axis"));
        }
        if origin.iter().any(|v| !v.is_finite()) {
            return Err(invalid("grid origin must be finite"));
        }
        Ok(Self { origin, spacing, dims })
    }

    /// The box `[-R, R]³` with spacing `h`; `2R/h` must be an integer.
    pub fn centered_cube(radius: f64, spacing: f64) -> Result<Self> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(invalid("box radius must be positive"));
        }
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(invalid("grid spacing must be positive"));
        }
        let cells = 2.0 * radius / spacing;
        let n = cells.round();
        if (cells - n).abs() > 1e-9 * n.max(1.0) || n < 1.0 {
            return Err(invalid(format!("2R/h = {cells} is not a positive integer")));
        }
        let n = n as usize + 1;
        Self::new(Vec3::repeat(-radius), spacing, [n; 3])
    }

    /// Cube of `2m+1` nodes per axis centred on `center`.
    pub fn stencil(center: Vec3, spacing: f64, m: usize) -> Result<Self> {
        let n = 2 * m + 1;
        Self::new(center - Vec3::repeat(m as f64 * spacing), spacing, [n; 3])
    }

    pub fn n_nodes(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.dims[0];
        let rest = idx / self.dims[0];
        [i, rest % self.dims[1], rest / self.dims[1]]
    }

    #[inline]
    pub fn position(&self, idx: usize) -> Vec3 {
        let c = self.coords(idx);
        self.origin + Vec3::new(c[0] as f64, c[1] as f64, c[2] as f64) * self.spacing
    }

    pub fn upper(&self) -> Vec3 {
        self.origin
            + Vec3::new(
                (self.dims[0] - 1) as f64,
                (self.dims[1] - 1) as f64,
                (self.dims[2] - 1) as f64,
            ) * self.spacing
    }

    pub fn contains(&self, x: &Vec3) -> bool {
        let hi = self.upper();
        (0..3).all(|a| x[a] >= self.origin[a] && x[a] <= hi[a])
    }

    pub fn is_boundary(&self, idx: usize) -> bool {
        let c = self.coords(idx);
        (0..3).any(|a| c[a] == 0 || c[a] + 1 == self.dims[a])
    }

    /// Cell corner and fractional offsets, or `None` outside under
    /// [`OutsidePolicy::ZeroExtend`].
    fn locate(&self, x: &Vec3, outside: OutsidePolicy) -> Option<([usize; 3], [f64; 3])> {
        let mut cell = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let top = (self.dims[a] - 1) as f64;
            let mut f = (x[a] - self.origin[a]) / self.spacing;
            if !(0.0..=top).contains(&f) {
                match outside {
                    OutsidePolicy::ZeroExtend => return None,
                    OutsidePolicy::Clamp => f = f.clamp(0.0, top),
                }
            }
            let i = (f.floor() as usize).min(self.dims[a] - 2);
            cell[a] = i;
            frac[a] = f - i as f64;
        }
        Some((cell, frac))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    geometry: GridGeometry,
    times: Vec<f64>,
    values: Vec<Vec3>,
    gradients: Vec<Mat3>,
    outside: OutsidePolicy,
}

fn trilinear<T, F>(g: &GridGeometry, cell: [usize; 3], frac: [f64; 3], fetch: F) -> T
where
    T: Copy + Add<Output = T> + Mul<f64, Output = T>,
    F: Fn(usize) -> T,
{
    let [i, j, k] = cell;
    let [fx, fy, fz] = frac;
    let lerp = |a: T, b: T, w: f64| a * (1.0 - w) + b * w;
    let at = |di, dj, dk| fetch(g.index(i + di, j + dj, k + dk));
    let c00 = lerp(at(0, 0, 0), at(1, 0, 0), fx);
    let c10 = lerp(at(0, 1, 0), at(1, 1, 0), fx);
    let c01 = lerp(at(0, 0, 1), at(1, 0, 1), fx);
    let c11 = lerp(at(0, 1, 1), at(1, 1, 1), fx);
    lerp(lerp(c00, c10, fy), lerp(c01, c11, fy), fz)
}

impl GridField {
    /// Wraps node values (`values[slice * n_nodes + node]`) and derives node
    /// gradients by centred differences.
    pub fn from_values(
        geometry: GridGeometry,
        times: Vec<f64>,
        values: Vec<Vec3>,
        outside: OutsidePolicy,
    ) -> Result<Self> {
        if times.is_empty() {
            return Err(invalid("grid field needs at least one time slice"));
        }
        if times.iter().any(|t| !t.is_finite()) || times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("time slices must be finite and strictly increasing"));
        }
        if values.len() != times.len() * geometry.n_nodes() {
            return Err(invalid(format!(
                "expected {} node values, got {}",
                times.len() * geometry.n_nodes(),
                values.len()
            )));
        }
        if values.iter().any(|v| v.iter().any(|c| !c.is_finite())) {
            return Err(invalid("grid field values must be finite"));
        }
        let gradients = node_gradients(&geometry, times.len(), &values);
        Ok(Self { geometry, times, values, gradients, outside })
    }

    pub fn zeros(geometry: GridGeometry, times: Vec<f64>, outside: OutsidePolicy) -> Result<Self> {
        let n = geometry.n_nodes() * times.len();
        Self::from_values(geometry, times, vec![Vec3::zeros(); n], outside)
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn outside(&self) -> OutsidePolicy {
        self.outside
    }

    pub fn values(&self) -> &[Vec3] {
        &self.values
    }

    pub fn slice(&self, m: usize) -> &[Vec3] {
        let n = self.geometry.n_nodes();
        &self.values[m * n..(m + 1) * n]
    }

    pub fn node_value(&self, slice: usize, node: usize) -> Vec3 {
        self.values[slice * self.geometry.n_nodes() + node]
    }

    pub fn node_gradient(&self, slice: usize, node: usize) -> Mat3 {
        self.gradients[slice * self.geometry.n_nodes() + node]
    }

    /// Pointwise `self - other` on identical lattices.
    pub fn difference(&self, other: &GridField) -> Result<GridField> {
        if self.geometry != other.geometry || self.times != other.times {
            return Err(invalid("difference of fields on different grids"));
        }
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        GridField::from_values(self.geometry, self.times.clone(), values, self.outside)
    }

    /// Slice bracket and weight for time `t` (clamped to the stored range).
    fn time_weights(&self, t: f64) -> (usize, usize, f64) {
        let n = self.times.len();
        if n == 1 || t <= self.times[0] {
            return (0, 0, 0.0);
        }
        if t >= self.times[n - 1] {
            return (n - 1, n - 1, 0.0);
        }
        let m = self.times.partition_point(|&s| s <= t) - 1;
        let w = (t - self.times[m]) / (self.times[m + 1] - self.times[m]);
        (m, m + 1, w)
    }

    fn interp<T, F>(&self, t: f64, x: &Vec3, zero: T, fetch: F) -> T
    where
        T: Copy + Add<Output = T> + Mul<f64, Output = T>,
        F: Fn(usize) -> T,
    {
        let Some((cell, frac)) = self.geometry.locate(x, self.outside) else {
            return zero;
        };
        let n = self.geometry.n_nodes();
        let (a, b, w) = self.time_weights(t);
        let va = trilinear(&self.geometry, cell, frac, |i| fetch(a * n + i));
        if w == 0.0 {
            return va;
        }
        let vb = trilinear(&self.geometry, cell, frac, |i| fetch(b * n + i));
        va * (1.0 - w) + vb * w
    }
}

impl VectorField for GridField {
    fn value(&self, t: f64, x: &Vec3) -> Vec3 {
        self.interp(t, x, Vec3::zeros(), |i| self.values[i])
    }

    /// Trilinear interpolation of the centred-difference node gradients.
    fn gradient(&self, t: f64, x: &Vec3) -> Mat3 {
        self.interp(t, x, Mat3::zeros(), |i| self.gradients[i])
    }
}

fn node_gradients(g: &GridGeometry, n_slices: usize, values: &[Vec3]) -> Vec<Mat3> {
    let n = g.n_nodes();
    let h = g.spacing;
    let mut out = vec![Mat3::zeros(); values.len()];
    out.par_chunks_mut(n).enumerate().for_each(|(m, grads)| {
        let slice = &values[m * n..(m + 1) * n];
        for (idx, grad) in grads.iter_mut().enumerate() {
            let c = g.coords(idx);
            for a in 0..3 {
                let step = |d: isize| {
                    let mut cc = c;
                    cc[a] = (c[a] as isize + d) as usize;
                    slice[g.index(cc[0], cc[1], cc[2])]
                };
                let na = g.dims[a];
                let col = if c[a] > 0 && c[a] + 1 < na {
                    (step(1) - step(-1)) / (2.0 * h)
                } else if na >= 3 && c[a] == 0 {
                    (step(0) * -3.0 + step(1) * 4.0 - step(2)) / (2.0 * h)
                } else if na >= 3 {
                    (step(0) * 3.0 - step(-1) * 4.0 + step(-2)) / (2.0 * h)
                } else if c[a] == 0 {
                    (step(1) - step(0)) / h
                } else {
                    (step(0) - step(-1)) / h
                };
                grad.set_column(a, &col);
            }
        }
    });
    debug_assert_eq!(out.len(), n * n_slices);
    out
}

/// Samples `source` at every node and time slice.
pub fn build_grid_field(
    source: &dyn VectorField,
    geometry: GridGeometry,
    times: Vec<f64>,
    outside: OutsidePolicy,
) -> Result<GridField> {
    let n = geometry.n_nodes();
    let mut values = vec![Vec3::zeros(); n * times.len()];
    values.par_chunks_mut(n).enumerate().for_each(|(m, slice)| {
        for (idx, v) in slice.iter_mut().enumerate() {
            *v = source.value(times[m], &geometry.position(idx));
        }
    });
    GridField::from_values(geometry, times, values, outside)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{AnalyticField, FnField};

    fn off_node_points() -> Vec<Vec3> {
        vec![
            Vec3::new(0.13, -0.27, 0.41),
            Vec3::new(-0.61, 0.33, 0.07),
            Vec3::new(0.9, 0.9, -0.9),
            Vec3::new(0.0, 0.05, -0.35),
        ]
    }

    #[test]
    fn constant_field_interpolates_exactly() {
        let c = Vec3::new(1.5, -2.0, 0.25);
        let g = GridGeometry::centered_cube(1.0, 0.25).unwrap();
        let f = build_grid_field(&AnalyticField::Constant(c), g, vec![0.0], OutsidePolicy::Clamp).unwrap();
        for x in off_node_points() {
            assert!((f.value(0.0, &x) - c).amax() < 1e-14);
            assert!(f.gradient(0.0, &x).amax() < 1e-12);
        }
    }

    #[test]
    fn linear_field_interpolates_exactly() {
        let a = Mat3::new(0.3, -1.0, 0.2, 0.5, 0.1, -0.4, 0.0, 0.7, -0.4);
        let g = GridGeometry::centered_cube(1.0, 0.25).unwrap();
        let f = build_grid_field(&AnalyticField::Linear(a), g, vec![0.0, 1.0], OutsidePolicy::Clamp).unwrap();
        for x in off_node_points() {
            assert!((f.value(0.5, &x) - a * x).amax() < 1e-13);
            assert!((f.gradient(0.5, &x) - a).amax() < 1e-12);
        }
    }

    #[test]
    fn node_values_are_reproduced() {
        let bump = AnalyticField::GaussianBump { amplitude: Vec3::new(1.0, 0.0, 2.0), width: 0.5 };
        let g = GridGeometry::centered_cube(1.0, 0.25).unwrap();
        let f = build_grid_field(&bump, g, vec![0.0], OutsidePolicy::ZeroExtend).unwrap();
        for idx in [0, 17, 364, g.n_nodes() - 1] {
            let x = g.position(idx);
            assert_eq!(f.value(0.0, &x), bump.value(0.0, &x));
        }
    }

    #[test]
    fn interpolation_error_is_second_order() {
        let bump = AnalyticField::GaussianBump { amplitude: Vec3::new(1.0, 0.0, 0.0), width: 0.5 };
        let err = |h: f64| {
            let g = GridGeometry::centered_cube(1.0, h).unwrap();
            let f = build_grid_field(&bump, g, vec![0.0], OutsidePolicy::ZeroExtend).unwrap();
            off_node_points()
                .iter()
                .map(|x| (f.value(0.0, x) - bump.value(0.0, x)).norm())
                .fold(0.0, f64::max)
        };
        let (e1, e2) = (err(0.1), err(0.05));
        let ratio = e1 / e2;
        assert!((3.0..5.0).contains(&ratio), "ratio {ratio} ({e1} / {e2})");
    }

    #[test]
    fn outside_policies() {
        let g = GridGeometry::centered_cube(1.0, 0.5).unwrap();
        let f = build_grid_field(&AnalyticField::Linear(Mat3::identity()), g, vec![0.0], OutsidePolicy::Clamp).unwrap();
        let far = Vec3::new(3.0, 0.0, -5.0);
        assert!((f.value(0.0, &far) - Vec3::new(1.0, 0.0, -1.0)).amax() < 1e-14);
        let z = GridField::from_values(g, vec![0.0], f.values().to_vec(), OutsidePolicy::ZeroExtend).unwrap();
        assert_eq!(z.value(0.0, &far), Vec3::zeros());
    }

    #[test]
    fn time_interpolation_is_linear() {
        let moving = FnField::new(|t: f64, _x: &Vec3| Vec3::new(t, 2.0 * t, 0.0), |_t: f64, _x: &Vec3| Mat3::zeros());
        let g = GridGeometry::centered_cube(1.0, 0.5).unwrap();
        let f = build_grid_field(&moving, g, vec![0.0, 0.5, 1.0], OutsidePolicy::Clamp).unwrap();
        let v = f.value(0.7, &Vec3::new(0.1, 0.2, 0.3));
        assert!((v - Vec3::new(0.7, 1.4, 0.0)).amax() < 1e-14);
        assert_eq!(f.value(5.0, &Vec3::zeros()), Vec3::new(1.0, 2.0, 0.0));
    }

    #[test]
    fn rejects_non_finite_values() {
        let g = GridGeometry::centered_cube(1.0, 1.0).unwrap();
        let mut vals = vec![Vec3::zeros(); g.n_nodes()];
        vals[3] = Vec3::new(f64::NAN, 0.0, 0.0);
        assert!(GridField::from_values(g, vec![0.0], vals, OutsidePolicy::Clamp).is_err());
        assert!(GridGeometry::centered_cube(1.0, 0.3).is_err());
        assert!(GridGeometry::centered_cube(1.0, 0.0).is_err());
    }
}
