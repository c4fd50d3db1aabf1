//! Fermi coordinates along a segment of the homoclinic geodesic.
//!
//! `h(x₀, x₁)` is the time-one geodesic flow from `ξ(x₀)` with initial
//! velocity `x₁ e₁(x₀)`, where `e₁` is the parallel unit normal field along
//! `ξ`. The axis data `(ξ, ξ', e₁)` is tabulated at a fixed spacing and
//! re-integrated from the nearest node with a fixed number of RK8 steps, so
//! `h` is a smooth function that can be evaluated on jets.

use nalgebra::{Matrix2, Matrix3x2, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};
use crate::geodesic_dynamics::geodesic_accel_gen;
use crate::hyperbolic_structures::HomoclinicOrbit;
use crate::jet::{dot, Jet, Scalar};
use crate::ode::{rk8_step_gen, IntegratorOptions, Stepper};
use crate::perturbation::Fluctuation;
use crate::surface_geometry::{cross, norm, quad_form, sub, ImplicitSurface, V3};

/// Fraction of the chart half-widths inside which the chart is engaged.
pub const CHART_BUFFER: f64 = 0.9;

const AXIS_SUBSTEPS: usize = 2;
const FLOW_SUBSTEPS: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FermiChart {
    pub delta0: f64,
    pub delta1: f64,
    /// Axis coordinate of the first node.
    pub x0_min: f64,
    pub step: f64,
    /// `(ξ, ξ', e₁)` at `x₀ = x0_min + k · step`.
    pub nodes: Vec<[f64; 9]>,
    pub a_minus: f64,
    pub a_plus: f64,
    #[serde(rename = "Delta")]
    pub delta: f64,
}

/// Position, axis velocity and normal frame vector on the axis.
pub type AxisPoint<T> = ([T; 3], [T; 3], [T; 3]);

/// Axis equations: geodesic flow plus parallel transport of `e₁`, whose
/// derivative is the purely normal vector keeping it tangent.
fn axis_rhs<T: Scalar>(surface: &ImplicitSurface, y: &[T; 9]) -> [T; 9] {
    let z = [y[0], y[1], y[2]];
    let v = [y[3], y[4], y[5]];
    let e = [y[6], y[7], y[8]];
    let a = geodesic_accel_gen(surface, &z, &v);
    let g = surface.grad_gen(&z);
    let h = surface.hess_gen(&z);
    let mut hv = [T::cst(0.0); 3];
    for i in 0..3 {
        hv[i] = h[i][0] * v[0] + h[i][1] * v[1] + h[i][2] * v[2];
    }
    let c = -dot(&e, &hv) / dot(&g, &g);
    [v[0], v[1], v[2], a[0], a[1], a[2], c * g[0], c * g[1], c * g[2]]
}

fn frame_defect(surface: &ImplicitSurface, y: &[f64; 9]) -> f64 {
    let z = [y[0], y[1], y[2]];
    let v = [y[3], y[4], y[5]];
    let e = [y[6], y[7], y[8]];
    let g = surface.grad(&z);
    (norm(&e) - 1.0).abs().max(dot(&e, &v).abs()).max((dot(&e, &g) / norm(&g)).abs())
}

pub fn build_chart(
    surface: &ImplicitSurface,
    homoclinic: &HomoclinicOrbit,
    delta0: f64,
    delta1: f64,
    opts: &IntegratorOptions,
) -> Result<FermiChart> {
    let step = 0.01;
    let n = (delta0 / step).ceil() as usize + 1;
    let y0 = homoclinic.seed();
    let z = [y0[0], y0[1], y0[2]];
    let v = [y0[3], y0[4], y0[5]];
    let g = surface.grad(&z);
    let nrm = [-g[0] / norm(&g), -g[1] / norm(&g), -g[2] / norm(&g)];
    // (ξ', e₁, n) right-handed.
    let e = cross(&nrm, &v);
    let e = [e[0] / norm(&e), e[1] / norm(&e), e[2] / norm(&e)];
    let start = [z[0], z[1], z[2], v[0], v[1], v[2], e[0], e[1], e[2]];
    let mut nodes = vec![[0.0; 9]; 2 * n + 1];
    nodes[n] = start;
    let sys = |_t: f64, y: &[f64; 9]| axis_rhs(surface, y);
    let o = opts.with_tol(opts.rel_tol.min(1e-13)).with_max_step(step);
    for dir in [1.0, -1.0] {
        let mut st = Stepper::new(&sys, 0.0, start, dir, o);
        for k in 1..=n {
            let t = dir * k as f64 * step;
            while (t - st.t) * dir > 0.0 {
                st.step(&sys, Some(t))?;
            }
            let d = frame_defect(surface, &st.y);
            if d > 1e-8 {
                return Err(GeoError::FrameDrift(d));
            }
            let idx = if dir > 0.0 { n + k } else { n - k };
            nodes[idx] = st.y;
        }
    }
    Ok(FermiChart {
        delta0,
        delta1,
        x0_min: -(n as f64) * step,
        step,
        nodes,
        a_minus: homoclinic.a_minus,
        a_plus: homoclinic.a_plus,
        delta: homoclinic.delta,
    })
}

impl FermiChart {
    pub fn contains(&self, x: &[f64; 2]) -> bool {
        x[0].abs() <= self.delta0 && x[1].abs() <= self.delta1
    }

    /// Inside the shell where the chart dynamics is engaged.
    pub fn in_buffer(&self, x: &[f64; 2]) -> bool {
        self.buffer_value(x) < 0.0
    }

    /// Negative inside the engagement box, positive outside.
    pub fn buffer_value(&self, x: &[f64; 2]) -> f64 {
        (x[0].abs() / (CHART_BUFFER * self.delta0)).max(x[1].abs() / (CHART_BUFFER * self.delta1)) - 1.0
    }

    pub fn axis_gen<T: Scalar>(&self, surface: &ImplicitSurface, x0: T) -> AxisPoint<T> {
        let k = ((x0.val() - self.x0_min) / self.step).round().clamp(0.0, (self.nodes.len() - 1) as f64) as usize;
        let node = &self.nodes[k];
        let mut y: [T; 9] = std::array::from_fn(|i| T::cst(node[i]));
        let h = (x0 - (self.x0_min + k as f64 * self.step)) / AXIS_SUBSTEPS as f64;
        for _ in 0..AXIS_SUBSTEPS {
            y = rk8_step_gen(|w: &[T; 9]| axis_rhs(surface, w), &y, h);
        }
        ([y[0], y[1], y[2]], [y[3], y[4], y[5]], [y[6], y[7], y[8]])
    }

    pub fn axis(&self, surface: &ImplicitSurface, x0: f64) -> AxisPoint<f64> {
        self.axis_gen(surface, x0)
    }

    /// `h(x)` without the final projection.
    pub fn forward_gen<T: Scalar>(&self, surface: &ImplicitSurface, x: &[T; 2]) -> [T; 3] {
        let (z, _, e) = self.axis_gen(surface, x[0]);
        let mut y = [z[0], z[1], z[2], x[1] * e[0], x[1] * e[1], x[1] * e[2]];
        let h = T::cst(1.0 / FLOW_SUBSTEPS as f64);
        let f = |w: &[T; 6]| {
            let a = geodesic_accel_gen(surface, &[w[0], w[1], w[2]], &[w[3], w[4], w[5]]);
            [w[3], w[4], w[5], a[0], a[1], a[2]]
        };
        for _ in 0..FLOW_SUBSTEPS {
            y = rk8_step_gen(f, &y, h);
        }
        [y[0], y[1], y[2]]
    }

    pub fn fermi_forward(&self, surface: &ImplicitSurface, x: &[f64; 2]) -> Result<V3> {
        let z = self.forward_gen(surface, x);
        surface.project_to_surface(&z)
    }

    /// `h(x)` and its 3×2 Jacobian.
    pub fn forward_with_jacobian(&self, surface: &ImplicitSurface, x: &[f64; 2]) -> (V3, Matrix3x2<f64>) {
        let xj = [Jet::var(x[0], 0), Jet::var(x[1], 1)];
        let z = self.forward_gen(surface, &xj);
        let m = Matrix3x2::from_fn(|r, c| z[r].d(c));
        ([z[0].v, z[1].v, z[2].v], m)
    }

    /// Chart coordinates of a surface point by Newton on `h`.
    pub fn fermi_inverse(&self, surface: &ImplicitSurface, z: &V3) -> Result<[f64; 2]> {
        let (k, d) = self
            .nodes
            .iter()
            .enumerate()
            .map(|(k, y)| (k, norm(&sub(z, &[y[0], y[1], y[2]]))))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("nonempty");
        if d > 2.0 * (self.delta1 + self.step) {
            return Err(GeoError::OutsideChart);
        }
        let y = &self.nodes[k];
        let w = sub(z, &[y[0], y[1], y[2]]);
        let mut x = [
            self.x0_min + k as f64 * self.step + dot(&w, &[y[3], y[4], y[5]]),
            dot(&w, &[y[6], y[7], y[8]]),
        ];
        let lim = |x: &[f64; 2]| x[0].abs() <= 1.05 * self.delta0 && x[1].abs() <= 1.5 * self.delta1;
        for _ in 0..30 {
            if !lim(&x) {
                return Err(GeoError::OutsideChart);
            }
            let (hz, m) = self.forward_with_jacobian(surface, &x);
            let r = Vector3::from(sub(z, &hz));
            if r.norm() <= 1e-13 {
                break;
            }
            let mt = m.transpose();
            let dx = (mt * m).lu().solve(&(mt * r)).ok_or(GeoError::OutsideChart)?;
            x = [x[0] + dx[0], x[1] + dx[1]];
            if dx.norm() < 1e-15 {
                break;
            }
        }
        let hz = self.forward_gen(surface, &x);
        if norm(&sub(z, &hz)) > 1e-10 || !self.contains(&x) {
            return Err(GeoError::OutsideChart);
        }
        Ok(x)
    }

    /// Normalized normal curvature `κ / |∇Q|` of the axis direction.
    pub fn axis_curvature_gen<T: Scalar>(&self, surface: &ImplicitSurface, x0: T) -> T {
        let (z, v, _) = self.axis_gen(surface, x0);
        let g = surface.grad_gen(&z);
        quad_form(&surface.hess_gen(&z), &v) / dot(&g, &g).sqrt()
    }

    /// Static Fermi metric at `x`.
    pub fn static_metric(&self, surface: &ImplicitSurface, x: &[f64; 2]) -> Matrix2<f64> {
        let (_, m) = self.forward_with_jacobian(surface, x);
        m.transpose() * m
    }

    /// Chart state `(x, η)` from an ambient state, with `η = g p` for the
    /// chart velocity `p` (`D h · p = v`).
    pub fn to_chart(&self, surface: &ImplicitSurface, z: &V3, v: &V3) -> Result<([f64; 2], [f64; 2])> {
        let x = self.fermi_inverse(surface, z)?;
        let (_, m) = self.forward_with_jacobian(surface, &x);
        let g = m.transpose() * m;
        let p = g.lu().solve(&(m.transpose() * Vector3::from(*v))).ok_or(GeoError::OutsideChart)?;
        let eta = g * p;
        Ok((x, [eta[0], eta[1]]))
    }

    /// Ambient state from a chart position and chart velocity `p`.
    pub fn to_ambient(&self, surface: &ImplicitSurface, x: &[f64; 2], p: &[f64; 2]) -> Result<(V3, V3)> {
        let (z, m) = self.forward_with_jacobian(surface, x);
        let v = m * Vector2::new(p[0], p[1]);
        let zp = surface.project_to_surface(&z)?;
        Ok((zp, [v[0], v[1], v[2]]))
    }

    pub fn chart_metric(&self, fl: &Fluctuation, epsilon: f64, x: &[f64; 2], theta: f64) -> Result<ChartMetric> {
        let md = fl.metric_data(epsilon, x, theta)?;
        Ok(ChartMetric { g: md.ge, dg_dtheta: md.dge[2] })
    }
}

/// Pullback metric of the fluctuating surface and its `θ`-derivative.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChartMetric {
    pub g: Matrix2<f64>,
    pub dg_dtheta: Matrix2<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn equator_chart() -> (ImplicitSurface, FermiChart) {
        let s = ImplicitSurface::unit_sphere();
        let step = 0.01;
        let n = 40;
        let nodes = (0..=2 * n)
            .map(|k| {
                let a = (k as f64 - n as f64) * step;
                [a.cos(), a.sin(), 0.0, -a.sin(), a.cos(), 0.0, 0.0, 0.0, 1.0]
            })
            .collect();
        let c = FermiChart {
            delta0: 0.35,
            delta1: 0.1,
            x0_min: -(n as f64) * step,
            step,
            nodes,
            a_minus: 0.0,
            a_plus: 0.0,
            delta: 0.0,
        };
        (s, c)
    }

    #[test]
    fn sphere_meridian_and_roundtrip() {
        let (s, c) = equator_chart();
        let z = c.fermi_forward(&s, &[0.0, 0.07]).unwrap();
        assert!((z[0] - 0.07f64.cos()).abs() < 1e-13 && (z[2] - 0.07f64.sin()).abs() < 1e-13, "{z:?}");
        let z = c.fermi_forward(&s, &[0.123, 0.0]).unwrap();
        assert!((z[0] - 0.123f64.cos()).abs() < 1e-14 && (z[1] - 0.123f64.sin()).abs() < 1e-14);
        let x = c.fermi_inverse(&s, &c.fermi_forward(&s, &[-0.2, 0.05]).unwrap()).unwrap();
        assert!((x[0] + 0.2).abs() < 1e-12 && (x[1] - 0.05).abs() < 1e-12, "{x:?}");
        assert!(matches!(c.fermi_inverse(&s, &[-1.0, 0.0, 0.0]), Err(GeoError::OutsideChart)));
    }
}
