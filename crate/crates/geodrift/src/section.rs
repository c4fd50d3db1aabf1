//! Planar Poincaré sections of the unit tangent bundle of a surface.
//!
//! A section is the plane through `base` with unit `normal`; its trace on the
//! surface is a curve with unit tangent `tangent` at `base`. A crossing state
//! is described by `(u, ϑ)`: `u` is the position along `tangent` and `ϑ` the
//! angle of the velocity measured from the in-surface normal of the trace
//! curve towards the curve tangent.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};
use crate::jet::dot;
use crate::surface_geometry::{cross, normalize, smul, sub, ImplicitSurface, V3};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub normal: V3,
    pub base: V3,
    pub tangent: V3,
}

impl Section {
    /// Section through the surface point `base` with plane normal `normal`.
    pub fn new(surface: &ImplicitSurface, normal: V3, base: V3) -> Self {
        let n = normalize(&normal);
        let t = normalize(&cross(&n, &surface.grad(&base)));
        Section { normal: n, base, tangent: t }
    }

    pub fn value(&self, z: &V3) -> f64 {
        dot(&self.normal, &sub(z, &self.base))
    }

    /// In-surface unit vectors `(d_n, d_c)`: across and along the trace curve.
    pub fn frame(&self, surface: &ImplicitSurface, z: &V3) -> (V3, V3) {
        let g = surface.grad(z);
        let mut dc = normalize(&cross(&self.normal, &g));
        if dot(&dc, &self.tangent) < 0.0 {
            dc = smul(-1.0, &dc);
        }
        let mut dn = normalize(&cross(&g, &dc));
        if dot(&dn, &self.normal) < 0.0 {
            dn = smul(-1.0, &dn);
        }
        (dn, dc)
    }

    pub fn coords(&self, surface: &ImplicitSurface, z: &V3, v: &V3) -> [f64; 2] {
        let (dn, dc) = self.frame(surface, z);
        let u = dot(&sub(z, &self.base), &self.tangent);
        [u, dot(v, &dc).atan2(dot(v, &dn))]
    }

    pub fn coords6(&self, surface: &ImplicitSurface, y: &[f64; 6]) -> [f64; 2] {
        self.coords(surface, &[y[0], y[1], y[2]], &[y[3], y[4], y[5]])
    }

    /// Point on the trace curve at coordinate `u`.
    pub fn point(&self, surface: &ImplicitSurface, u: f64) -> Result<V3> {
        let mut z = [
            self.base[0] + u * self.tangent[0],
            self.base[1] + u * self.tangent[1],
            self.base[2] + u * self.tangent[2],
        ];
        for _ in 0..60 {
            let f = Vector3::new(surface.q(&z), self.value(&z), dot(&sub(&z, &self.base), &self.tangent) - u);
            if f.amax() < 1e-15 {
                return Ok(z);
            }
            let g = surface.grad(&z);
            let m = Matrix3::new(
                g[0],
                g[1],
                g[2],
                self.normal[0],
                self.normal[1],
                self.normal[2],
                self.tangent[0],
                self.tangent[1],
                self.tangent[2],
            );
            let dz = m.lu().solve(&f).ok_or_else(|| GeoError::NoConvergence("section lift singular".into()))?;
            let step = dz.amax();
            for i in 0..3 {
                z[i] -= dz[i];
            }
            if step < 1e-16 {
                return Ok(z);
            }
        }
        if surface.q(&z).abs() < 1e-12 {
            return Ok(z);
        }
        Err(GeoError::NoConvergence(format!("section point at u = {u}")))
    }

    /// Lift `(u, ϑ)` to a state of speed `speed`.
    pub fn lift(&self, surface: &ImplicitSurface, x: &[f64; 2], speed: f64) -> Result<(V3, V3)> {
        let z = self.point(surface, x[0])?;
        let (dn, dc) = self.frame(surface, &z);
        let (s, c) = x[1].sin_cos();
        let v = [
            speed * (c * dn[0] + s * dc[0]),
            speed * (c * dn[1] + s * dc[1]),
            speed * (c * dn[2] + s * dc[2]),
        ];
        Ok((z, v))
    }

    pub fn lift6(&self, surface: &ImplicitSurface, x: &[f64; 2], speed: f64) -> Result<[f64; 6]> {
        let (z, v) = self.lift(surface, x, speed)?;
        Ok([z[0], z[1], z[2], v[0], v[1], v[2]])
    }

    /// Derivative of the lift (6×2, column-major pairs) by central differences.
    pub fn lift_jacobian(&self, surface: &ImplicitSurface, x: &[f64; 2], speed: f64) -> Result<[[f64; 2]; 6]> {
        let h = 1e-6;
        let mut j = [[0.0; 2]; 6];
        for c in 0..2 {
            let mut a = *x;
            let mut b = *x;
            a[c] += h;
            b[c] -= h;
            let ya = self.lift6(surface, &a, speed)?;
            let yb = self.lift6(surface, &b, speed)?;
            for r in 0..6 {
                j[r][c] = (ya[r] - yb[r]) / (2.0 * h);
            }
        }
        Ok(j)
    }

    /// Derivative of the coordinates with respect to the ambient state (2×6).
    pub fn coords_jacobian(&self, surface: &ImplicitSurface, y: &[f64; 6]) -> [[f64; 6]; 2] {
        let h = 1e-7;
        let mut j = [[0.0; 6]; 2];
        for c in 0..6 {
            let mut a = *y;
            let mut b = *y;
            a[c] += h;
            b[c] -= h;
            let xa = self.coords6(surface, &a);
            let xb = self.coords6(surface, &b);
            for r in 0..2 {
                j[r][c] = (xa[r] - xb[r]) / (2.0 * h);
            }
        }
        j
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lift_and_coords_roundtrip() {
        let s = ImplicitSurface::ellipsoid(1.0, 1.2, 1.5);
        let sec = Section::new(&s, [1.0, 0.0, 0.0], [0.0, 0.0, -1.5]);
        assert!((sec.tangent[1] - 1.0).abs() < 1e-15);
        let x = [0.07, -0.2];
        let (z, v) = sec.lift(&s, &x, 1.0).unwrap();
        assert!(s.q(&z).abs() < 1e-14);
        assert!(z[0].abs() < 1e-15);
        assert!(dot(&s.grad(&z), &v).abs() < 1e-14);
        let y = sec.coords(&s, &z, &v);
        assert!((y[0] - x[0]).abs() < 1e-14 && (y[1] - x[1]).abs() < 1e-14);
        let (z0, v0) = sec.lift(&s, &[0.0, 0.0], 1.0).unwrap();
        assert!((z0[2] + 1.5).abs() < 1e-14);
        assert!((v0[0] - 1.0).abs() < 1e-14);
    }
}
