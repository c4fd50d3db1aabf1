//! Static implicit surfaces `M = {Q = 0}` in R³ and their differential
//! invariants.

use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};
use crate::jet::{dot, Scalar};

pub type V3 = [f64; 3];

/// Default half-width of the band `|Q| <= band` treated as on-surface.
pub const CONSTRAINT_BAND: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaseShape {
    Ellipsoid { a: f64, b: f64, c: f64 },
    Sphere { radius: f64 },
}

impl BaseShape {
    fn inv_axes_sq(&self) -> V3 {
        match *self {
            BaseShape::Ellipsoid { a, b, c } => [1.0 / (a * a), 1.0 / (b * b), 1.0 / (c * c)],
            BaseShape::Sphere { radius } => {
                let r = 1.0 / (radius * radius);
                [r, r, r]
            }
        }
    }
}

/// Gaussian bump `μ exp(-|y - center|² / width²)` added to Q.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StaticBump {
    pub center: V3,
    pub amplitude: f64,
    pub width: f64,
}

/// `Q(z) = q(z / scale)` where `q` is a quadric plus Gaussian bumps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImplicitSurface {
    pub base: BaseShape,
    #[serde(default)]
    pub bumps: Vec<StaticBump>,
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

impl ImplicitSurface {
    pub fn ellipsoid(a: f64, b: f64, c: f64) -> Self {
        ImplicitSurface { base: BaseShape::Ellipsoid { a, b, c }, bumps: vec![], scale: 1.0 }
    }

    pub fn unit_sphere() -> Self {
        ImplicitSurface { base: BaseShape::Sphere { radius: 1.0 }, bumps: vec![], scale: 1.0 }
    }

    pub fn with_bump(mut self, center: V3, amplitude: f64, width: f64) -> Self {
        self.bumps.push(StaticBump { center, amplitude, width });
        self
    }

    pub fn scaled(&self, scale: f64) -> Self {
        let mut s = self.clone();
        s.scale = scale;
        s
    }

    pub fn q_gen<T: Scalar>(&self, z: &[T; 3]) -> T {
        let d = self.base.inv_axes_sq();
        let is = 1.0 / self.scale;
        let y = [z[0] * is, z[1] * is, z[2] * is];
        let mut q = y[0] * y[0] * d[0] + y[1] * y[1] * d[1] + y[2] * y[2] * d[2] - 1.0;
        for b in &self.bumps {
            if b.amplitude == 0.0 {
                continue;
            }
            let r = [y[0] - b.center[0], y[1] - b.center[1], y[2] - b.center[2]];
            let e = (-dot(&r, &r) / (b.width * b.width)).exp();
            q += e * b.amplitude;
        }
        q
    }

    pub fn grad_gen<T: Scalar>(&self, z: &[T; 3]) -> [T; 3] {
        let d = self.base.inv_axes_sq();
        let is = 1.0 / self.scale;
        let y = [z[0] * is, z[1] * is, z[2] * is];
        let mut g = [y[0] * (2.0 * d[0]), y[1] * (2.0 * d[1]), y[2] * (2.0 * d[2])];
        for b in &self.bumps {
            if b.amplitude == 0.0 {
                continue;
            }
            let w2 = b.width * b.width;
            let r = [y[0] - b.center[0], y[1] - b.center[1], y[2] - b.center[2]];
            let e = (-dot(&r, &r) / w2).exp() * (-2.0 * b.amplitude / w2);
            for i in 0..3 {
                g[i] += e * r[i];
            }
        }
        [g[0] * is, g[1] * is, g[2] * is]
    }

    pub fn hess_gen<T: Scalar>(&self, z: &[T; 3]) -> [[T; 3]; 3] {
        let d = self.base.inv_axes_sq();
        let is = 1.0 / self.scale;
        let y = [z[0] * is, z[1] * is, z[2] * is];
        let zero = T::cst(0.0);
        let mut h = [[zero; 3]; 3];
        for i in 0..3 {
            h[i][i] = T::cst(2.0 * d[i]);
        }
        for b in &self.bumps {
            if b.amplitude == 0.0 {
                continue;
            }
            let w2 = b.width * b.width;
            let r = [y[0] - b.center[0], y[1] - b.center[1], y[2] - b.center[2]];
            let e = (-dot(&r, &r) / w2).exp() * b.amplitude;
            for i in 0..3 {
                for j in 0..3 {
                    let mut t = r[i] * r[j] * (4.0 / (w2 * w2));
                    if i == j {
                        t = t - 2.0 / w2;
                    }
                    h[i][j] += e * t;
                }
            }
        }
        let is2 = is * is;
        for row in h.iter_mut() {
            for x in row.iter_mut() {
                *x = *x * is2;
            }
        }
        h
    }

    pub fn q(&self, z: &V3) -> f64 {
        self.q_gen(z)
    }

    pub fn grad(&self, z: &V3) -> V3 {
        self.grad_gen(z)
    }

    pub fn hess(&self, z: &V3) -> [[f64; 3]; 3] {
        self.hess_gen(z)
    }

    /// Newton along the fixed direction `grad_Q(z)` onto `{Q = 0}`.
    pub fn project_to_surface(&self, z: &V3) -> Result<V3> {
        let g0 = self.grad(z);
        let gg = dot(&g0, &g0);
        if gg.sqrt() < 1e-12 {
            return Err(GeoError::DegenerateGradient(*z));
        }
        let mut t = 0.0;
        let mut p = *z;
        for _ in 0..50 {
            let q = self.q(&p);
            let dq = dot(&self.grad(&p), &g0);
            if q.abs() <= 1e-15 {
                return Ok(p);
            }
            if dq.abs() < 1e-14 * gg {
                break;
            }
            let dt = -q / dq;
            t += dt;
            p = [z[0] + t * g0[0], z[1] + t * g0[1], z[2] + t * g0[2]];
            if dt.abs() < 1e-17 * (1.0 + t.abs()) {
                if self.q(&p).abs() <= 1e-12 {
                    return Ok(p);
                }
                break;
            }
        }
        if self.q(&p).abs() <= 1e-12 {
            return Ok(p);
        }
        Err(GeoError::NoConvergence(format!("project_to_surface from {z:?}")))
    }

    pub fn unit_normal(&self, z: &V3) -> Result<V3> {
        let g = self.grad(z);
        let n = dot(&g, &g).sqrt();
        if n < 1e-12 {
            return Err(GeoError::DegenerateGradient(*z));
        }
        Ok([-g[0] / n, -g[1] / n, -g[2] / n])
    }

    /// The quadratic form `vᵀ hess_Q(z) v`, without normalisation by `|grad_Q|`.
    pub fn normal_curvature(&self, z: &V3, v: &V3) -> Result<f64> {
        let n = self.unit_normal(z)?;
        let vn = dot(&n, v);
        let vv = dot(v, v).sqrt();
        if vn.abs() > 1e-10 * vv.max(1.0) {
            return Err(GeoError::NotTangent(vn));
        }
        Ok(quad_form(&self.hess(z), v))
    }

    pub fn tangent_project(&self, z: &V3, w: &V3) -> Result<V3> {
        let n = self.unit_normal(z)?;
        let c = dot(w, &n);
        Ok([w[0] - c * n[0], w[1] - c * n[1], w[2] - c * n[2]])
    }

    pub fn is_on_surface(&self, z: &V3, band: f64) -> bool {
        self.q(z).abs() <= band
    }
}

pub fn quad_form<T: Scalar>(h: &[[T; 3]; 3], v: &[T; 3]) -> T {
    let mut s = T::cst(0.0);
    for i in 0..3 {
        for j in 0..3 {
            s += h[i][j] * v[i] * v[j];
        }
    }
    s
}

pub fn norm(v: &V3) -> f64 {
    dot(v, v).sqrt()
}

pub fn sub(a: &V3, b: &V3) -> V3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn add(a: &V3, b: &V3) -> V3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn smul(s: f64, a: &V3) -> V3 {
    [s * a[0], s * a[1], s * a[2]]
}

pub fn cross(a: &V3, b: &V3) -> V3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub fn normalize(a: &V3) -> V3 {
    smul(1.0 / norm(a), a)
}
