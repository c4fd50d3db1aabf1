//! Constrained geodesic flow on an implicit surface and the extended
//! (time-phase augmented) flow of the fluctuating metric.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};
use crate::jet::{dot, Scalar};
use crate::ode::{IntegratorOptions, OdeSystem, Stepper};
use crate::surface_geometry::{norm, quad_form, smul, ImplicitSurface, V3};

mod extended;
pub use extended::*;

/// One point of the extended phase space.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtendedState {
    pub z: V3,
    pub v: V3,
    pub theta: f64,
    #[serde(rename = "Theta")]
    pub big_theta: f64,
}

impl ExtendedState {
    pub fn new(z: V3, v: V3, theta: f64, big_theta: f64) -> Self {
        ExtendedState { z, v, theta, big_theta }
    }

    pub fn from_static(z: V3, v: V3) -> Self {
        ExtendedState { z, v, theta: 0.0, big_theta: 0.0 }
    }

    pub fn speed(&self) -> f64 {
        norm(&self.v)
    }

    pub fn kinetic(&self) -> f64 {
        0.5 * dot(&self.v, &self.v)
    }

    pub fn pack(&self) -> [f64; 6] {
        pack(&self.z, &self.v)
    }
}

pub fn pack(z: &V3, v: &V3) -> [f64; 6] {
    [z[0], z[1], z[2], v[0], v[1], v[2]]
}

pub fn unpack(y: &[f64; 6]) -> (V3, V3) {
    ([y[0], y[1], y[2]], [y[3], y[4], y[5]])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChartTag {
    Ambient,
    Fermi,
}

impl ChartTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            ChartTag::Ambient => "ambient",
            ChartTag::Fermi => "fermi",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajSample {
    pub t: f64,
    pub state: ExtendedState,
    pub chart: ChartTag,
    /// Time derivative of `(z, v)` at the sample, used for Hermite interpolation.
    pub dzv: [f64; 6],
    /// Value of the (possibly perturbed) Hamiltonian at the sample.
    pub h: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub samples: Vec<TrajSample>,
}

impl Trajectory {
    pub fn last(&self) -> &TrajSample {
        self.samples.last().expect("empty trajectory")
    }

    pub fn first(&self) -> &TrajSample {
        &self.samples[0]
    }

    /// Cubic Hermite interpolation of `(z, v)` between stored samples.
    pub fn interpolate(&self, t: f64) -> Option<[f64; 6]> {
        let s = &self.samples;
        if s.is_empty() {
            return None;
        }
        let fwd = s.len() < 2 || s[1].t >= s[0].t;
        let idx = s.partition_point(|p| if fwd { p.t <= t } else { p.t >= t });
        if idx == 0 || idx == s.len() {
            let p = if idx == 0 { &s[0] } else { &s[s.len() - 1] };
            return (p.t == t).then(|| p.state.pack());
        }
        let a = &s[idx - 1];
        let b = &s[idx];
        let h = b.t - a.t;
        let u = (t - a.t) / h;
        let (ya, yb) = (a.state.pack(), b.state.pack());
        let h00 = (1.0 + 2.0 * u) * (1.0 - u) * (1.0 - u);
        let h10 = u * (1.0 - u) * (1.0 - u);
        let h01 = u * u * (3.0 - 2.0 * u);
        let h11 = u * u * (u - 1.0);
        Some(std::array::from_fn(|i| h00 * ya[i] + h10 * h * a.dzv[i] + h01 * yb[i] + h11 * h * b.dzv[i]))
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,z0,z1,z2,v0,v1,v2,theta,Theta,H,chart")?;
        for p in &self.samples {
            let s = &p.state;
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{}",
                fmt17(p.t),
                fmt17(s.z[0]),
                fmt17(s.z[1]),
                fmt17(s.z[2]),
                fmt17(s.v[0]),
                fmt17(s.v[1]),
                fmt17(s.v[2]),
                fmt17(s.theta),
                fmt17(s.big_theta),
                fmt17(p.h),
                p.chart.as_str()
            )?;
        }
        Ok(())
    }
}

/// Float with 17 significant digits.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Normal acceleration `λ ∇Q` keeping `(z, v)` on the tangent bundle.
pub fn geodesic_accel_gen<T: Scalar>(surface: &ImplicitSurface, z: &[T; 3], v: &[T; 3]) -> [T; 3] {
    let g = surface.grad_gen(z);
    let h = surface.hess_gen(z);
    let lam = -quad_form(&h, v) / dot(&g, &g);
    [lam * g[0], lam * g[1], lam * g[2]]
}

pub fn geodesic_rhs(surface: &ImplicitSurface, z: &V3, v: &V3) -> Result<(V3, V3)> {
    let g = surface.grad(z);
    if norm(&g) < 1e-12 {
        return Err(GeoError::DegenerateGradient(*z));
    }
    Ok((*v, geodesic_accel_gen(surface, z, v)))
}

/// The ambient geodesic vector field as an ODE system on `(z, v)`.
#[derive(Clone, Copy)]
pub struct GeodesicField<'a>(pub &'a ImplicitSurface);

impl OdeSystem<6> for GeodesicField<'_> {
    fn rhs(&self, _t: f64, y: &[f64; 6]) -> [f64; 6] {
        let (z, v) = unpack(y);
        let a = geodesic_accel_gen(self.0, &z, &v);
        [v[0], v[1], v[2], a[0], a[1], a[2]]
    }
}

/// Project `(z, v)` back onto the unit-speed-`speed` tangent bundle.
pub fn project_state(surface: &ImplicitSurface, y: &[f64; 6], speed: f64) -> Result<[f64; 6]> {
    let (z, v) = unpack(y);
    let zp = surface.project_to_surface(&z)?;
    let vt = surface.tangent_project(&zp, &v)?;
    let n = norm(&vt);
    let vp = if n > 0.0 { smul(speed / n, &vt) } else { vt };
    Ok(pack(&zp, &vp))
}

/// Adaptive integrator of the static flow with post-step projection.
pub struct StaticFlow<'a> {
    pub surface: &'a ImplicitSurface,
    pub stepper: Stepper<6>,
    pub speed: f64,
}

impl<'a> StaticFlow<'a> {
    pub fn new(surface: &'a ImplicitSurface, z: V3, v: V3, t0: f64, dir: f64, opts: IntegratorOptions) -> Self {
        let y = pack(&z, &v);
        let stepper = Stepper::new(&GeodesicField(surface), t0, y, dir, opts);
        StaticFlow { surface, stepper, speed: norm(&v) }
    }

    pub fn t(&self) -> f64 {
        self.stepper.t
    }

    pub fn y(&self) -> [f64; 6] {
        self.stepper.y
    }

    pub fn step(&mut self, t_end: Option<f64>) -> Result<()> {
        let f = GeodesicField(self.surface);
        self.stepper.step(&f, t_end)?;
        if self.stepper.opts.projection_enabled {
            let yp = project_state(self.surface, &self.stepper.y, self.speed)?;
            self.stepper.set_state(&f, yp);
        }
        Ok(())
    }

    /// Integrate to `t_end` exactly.
    pub fn run_to(&mut self, t_end: f64) -> Result<[f64; 6]> {
        while (t_end - self.t()) * self.stepper.dir > 0.0 {
            self.step(Some(t_end))?;
        }
        Ok(self.y())
    }

    /// Locate a root of `g` in the last step.
    pub fn locate<G: Fn(f64, &[f64; 6]) -> f64>(&self, g: G) -> (f64, [f64; 6]) {
        let (t, y) = self.stepper.locate(&GeodesicField(self.surface), g);
        let y = project_state(self.surface, &y, self.speed).unwrap_or(y);
        (t, y)
    }

    pub fn derivative(&self) -> [f64; 6] {
        self.stepper.f
    }
}

/// Flow `(z, v)` for time `t` (negative allowed).
pub fn flow_static(surface: &ImplicitSurface, z: &V3, v: &V3, t: f64, opts: &IntegratorOptions) -> Result<(V3, V3)> {
    if t == 0.0 {
        return Ok((*z, *v));
    }
    let mut fl = StaticFlow::new(surface, *z, *v, 0.0, t.signum(), *opts);
    let y = fl.run_to(t)?;
    Ok(unpack(&y))
}

fn static_sample(surface: &ImplicitSurface, t: f64, y: &[f64; 6], theta0: f64, big: f64, t0: f64) -> TrajSample {
    let (z, v) = unpack(y);
    let a = geodesic_accel_gen(surface, &z, &v);
    let st = ExtendedState::new(z, v, theta0 + (t - t0), big);
    TrajSample { t, state: st, chart: ChartTag::Ambient, dzv: [v[0], v[1], v[2], a[0], a[1], a[2]], h: st.kinetic() }
}

/// Integrate the unperturbed flow for time `T` (sign gives direction),
/// recording every accepted step. θ advances with time, Θ is constant.
pub fn integrate_static(
    surface: &ImplicitSurface,
    state: &ExtendedState,
    t_total: f64,
    opts: &IntegratorOptions,
) -> Result<Trajectory> {
    let mut traj = Trajectory::default();
    let th0 = state.theta;
    let big = state.big_theta;
    traj.samples.push(static_sample(surface, 0.0, &state.pack(), th0, big, 0.0));
    if t_total == 0.0 {
        return Ok(traj);
    }
    let mut fl = StaticFlow::new(surface, state.z, state.v, 0.0, t_total.signum(), *opts);
    while (t_total - fl.t()) * fl.stepper.dir > 0.0 {
        fl.step(Some(t_total))?;
        traj.samples.push(static_sample(surface, fl.t(), &fl.y(), th0, big, 0.0));
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface_geometry::{normalize, sub};
    use std::f64::consts::PI;

    #[test]
    fn sphere_rhs() {
        let s = ImplicitSurface::unit_sphere();
        let (dz, dv) = geodesic_rhs(&s, &[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]).unwrap();
        assert_eq!(dz, [0.0, 1.0, 0.0]);
        assert!((dv[0] + 1.0).abs() < 1e-15 && dv[1].abs() < 1e-15);
        let (_, dv0) = geodesic_rhs(&s, &[1.0, 0.0, 0.0], &[0.0; 3]).unwrap();
        assert_eq!(dv0, [0.0; 3]);
    }

    #[test]
    fn great_circle_period() {
        let s = ImplicitSurface::unit_sphere();
        let st = ExtendedState::from_static([1.0, 0.0, 0.0], [0.0, 0.6, 0.8]);
        let tr = integrate_static(&s, &st, 2.0 * PI, &IntegratorOptions::default()).unwrap();
        let e = tr.last().state;
        assert!(norm(&sub(&e.z, &st.z)) < 1e-9 && norm(&sub(&e.v, &st.v)) < 1e-9);
    }

    #[test]
    fn constraint_derivative_vanishes() {
        let s = ImplicitSurface::ellipsoid(1.0, 1.2, 1.5);
        let z = s.project_to_surface(&[0.5, 0.7, 0.9]).unwrap();
        let v = normalize(&s.tangent_project(&z, &[1.0, -0.2, 0.3]).unwrap());
        let opts = IntegratorOptions::default();
        let c = |t: f64| {
            let (zz, vv) = flow_static(&s, &z, &v, t, &opts).unwrap();
            dot(&s.grad(&zz), &vv)
        };
        let h = 1e-3;
        let d = (c(h) - c(-h)) / (2.0 * h);
        assert!(d.abs() < 1e-8, "{d}");
    }

    #[test]
    fn interpolation_between_samples() {
        let s = ImplicitSurface::unit_sphere();
        let st = ExtendedState::from_static([1.0, 0.0, 0.0], [0.0, 1.0, 0.0]);
        let tr = integrate_static(&s, &st, 1.0, &IntegratorOptions::default().with_max_step(0.05)).unwrap();
        let y = tr.interpolate(0.5123).unwrap();
        assert!((y[0] - 0.5123f64.cos()).abs() < 1e-7);
        assert!((y[1] - 0.5123f64.sin()).abs() < 1e-7);
    }
}
