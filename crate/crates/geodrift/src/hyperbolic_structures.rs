//! The hyperbolic closed geodesic, its invariant manifolds, a transverse
//! homoclinic geodesic and its asymptotic phases.

use nalgebra::{Matrix2, SMatrix, SVector, Vector2};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{GeoError, Result};
use crate::geodesic_dynamics::{geodesic_accel_gen, pack, project_state, unpack, StaticFlow};
use crate::jet::{dot, Jet};
use crate::ode::{IntegratorOptions, OdeSystem, Stepper};
use crate::section::Section;
use crate::surface_geometry::{norm, ImplicitSurface, V3};

mod homoclinic;
pub use homoclinic::*;

pub type M6 = SMatrix<f64, 6, 6>;

/// Jacobian of the ambient geodesic vector field at `(z, v)`.
pub fn geodesic_jacobian(surface: &ImplicitSurface, z: &V3, v: &V3) -> [[f64; 6]; 6] {
    let zj = [Jet::var(z[0], 0), Jet::var(z[1], 1), Jet::var(z[2], 2)];
    let gj = surface.grad_gen(&zj);
    let hj = surface.hess_gen(&zj);
    let g: V3 = [gj[0].v, gj[1].v, gj[2].v];
    let h: [[f64; 3]; 3] = std::array::from_fn(|i| std::array::from_fn(|j| gj[i].d(j)));
    let gg = dot(&g, &g);
    let hv: V3 = std::array::from_fn(|i| dot(&h[i], v));
    let hg: V3 = std::array::from_fn(|i| dot(&h[i], &g));
    let vhv = dot(v, &hv);
    let lam = -vhv / gg;
    let mut jac = [[0.0; 6]; 6];
    for i in 0..3 {
        jac[i][3 + i] = 1.0;
    }
    for k in 0..3 {
        let mut tvv = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                tvv += hj[i][j].d(k) * v[i] * v[j];
            }
        }
        let dlam_dz = -tvv / gg + vhv * 2.0 * hg[k] / (gg * gg);
        let dlam_dv = -2.0 * hv[k] / gg;
        for i in 0..3 {
            jac[3 + i][k] = lam * h[i][k] + g[i] * dlam_dz;
            jac[3 + i][3 + k] = g[i] * dlam_dv;
        }
    }
    jac
}

/// Geodesic flow together with its variational equation `Φ' = Df Φ`
/// (state in the first 6 slots, `Φ` row-major in the remaining 36).
#[derive(Clone, Copy)]
pub struct VariationalField<'a>(pub &'a ImplicitSurface);

impl OdeSystem<42> for VariationalField<'_> {
    fn rhs(&self, _t: f64, y: &[f64; 42]) -> [f64; 42] {
        let z = [y[0], y[1], y[2]];
        let v = [y[3], y[4], y[5]];
        let a = geodesic_accel_gen(self.0, &z, &v);
        let jac = geodesic_jacobian(self.0, &z, &v);
        let mut out = [0.0; 42];
        out[..3].copy_from_slice(&v);
        out[3..6].copy_from_slice(&a);
        for i in 0..6 {
            for j in 0..6 {
                let mut s = 0.0;
                for k in 0..6 {
                    s += jac[i][k] * y[6 + 6 * k + j];
                }
                out[6 + 6 * i + j] = s;
            }
        }
        out
    }
}

/// A crossing of a section plane in the direction of its normal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SectionHit {
    pub t: f64,
    pub y: [f64; 6],
}

/// Options for searching section crossings.
#[derive(Clone, Copy, Debug)]
pub struct CrossingSearch {
    /// Ignore crossings earlier than this (in |t|).
    pub t_min: f64,
    /// Give up after this much time (in |t|).
    pub t_max: f64,
    /// Only accept crossings within this distance of the section base.
    pub gate: f64,
}

/// All crossings of `section` (with `v·normal > 0`) along the orbit of `y0`
/// integrated in direction `dir`, stopping after `max_hits` of them.
pub fn section_crossings(
    surface: &ImplicitSurface,
    section: &Section,
    y0: &[f64; 6],
    dir: f64,
    opts: &IntegratorOptions,
    search: &CrossingSearch,
    max_hits: usize,
) -> Result<Vec<SectionHit>> {
    let (z, v) = unpack(y0);
    let mut fl = StaticFlow::new(surface, z, v, 0.0, dir, *opts);
    let mut hits = Vec::new();
    let g = |_t: f64, y: &[f64; 6]| section.value(&[y[0], y[1], y[2]]);
    let mut g_prev = g(0.0, y0);
    while fl.t().abs() < search.t_max && hits.len() < max_hits {
        fl.step(None)?;
        let g_now = g(0.0, &fl.y());
        if (g_prev < 0.0) != (g_now < 0.0) {
            let (t, y) = fl.locate(g);
            let zn = [y[0], y[1], y[2]];
            let vn = dot(&section.normal, &[y[3], y[4], y[5]]);
            if vn > 0.0 && t.abs() >= search.t_min && norm(&crate::surface_geometry::sub(&zn, &section.base)) < search.gate {
                hits.push(SectionHit { t, y });
            }
        }
        g_prev = g_now;
    }
    Ok(hits)
}

/// First return of `x` (section coordinates, unit speed) to `section`.
pub fn return_map(
    surface: &ImplicitSurface,
    section: &Section,
    x: &[f64; 2],
    opts: &IntegratorOptions,
    search: &CrossingSearch,
) -> Result<([f64; 2], SectionHit)> {
    let y0 = section.lift6(surface, x, 1.0)?;
    let hits = section_crossings(surface, section, &y0, 1.0, opts, search, 1)?;
    let hit = hits.first().copied().ok_or_else(|| GeoError::SectionMiss("no return to the section".into()))?;
    Ok((section.coords6(surface, &hit.y), hit))
}

/// Monodromy `Φ(T)` along the orbit of `y0` up to its first return, the
/// return time, the return state and the saltation-corrected 6×6 Jacobian
/// of the first-return map.
pub struct VariationalReturn {
    pub time: f64,
    pub y: [f64; 6],
    pub monodromy: M6,
    pub return_jacobian: M6,
}

pub fn variational_return(
    surface: &ImplicitSurface,
    section: &Section,
    y0: &[f64; 6],
    opts: &IntegratorOptions,
    search: &CrossingSearch,
) -> Result<VariationalReturn> {
    let sys = VariationalField(surface);
    let mut w = [0.0; 42];
    w[..6].copy_from_slice(y0);
    for i in 0..6 {
        w[6 + 7 * i] = 1.0;
    }
    let mut o = *opts;
    o.projection_enabled = false;
    let mut st = Stepper::new(&sys, 0.0, w, 1.0, o);
    let g = |_t: f64, y: &[f64; 42]| section.value(&[y[0], y[1], y[2]]);
    let mut g_prev = g(0.0, &w);
    while st.t < search.t_max {
        st.step(&sys, None)?;
        let g_now = g(0.0, &st.y);
        if g_prev < 0.0 && g_now >= 0.0 && st.t >= search.t_min {
            let (t, y) = st.locate(&sys, g);
            let z = [y[0], y[1], y[2]];
            if norm(&crate::surface_geometry::sub(&z, &section.base)) < search.gate {
                let phi = M6::from_fn(|i, j| y[6 + 6 * i + j]);
                let ys: [f64; 6] = std::array::from_fn(|i| y[i]);
                let f = sys.rhs(t, &y);
                let fv = SVector::<f64, 6>::from_fn(|i, _| f[i]);
                let grad = SVector::<f64, 6>::from_fn(|i, _| if i < 3 { section.normal[i] } else { 0.0 });
                let denom = grad.dot(&fv);
                let salt = M6::identity() - fv * grad.transpose() / denom;
                return Ok(VariationalReturn { time: t, y: ys, monodromy: phi, return_jacobian: salt * phi });
            }
        }
        g_prev = g_now;
    }
    Err(GeoError::SectionMiss("variational orbit did not return".into()))
}

/// Reduced 2×2 return-map Jacobian in section coordinates at `x`.
pub fn reduced_return_jacobian(
    surface: &ImplicitSurface,
    section: &Section,
    x: &[f64; 2],
    opts: &IntegratorOptions,
    search: &CrossingSearch,
) -> Result<(Matrix2<f64>, VariationalReturn)> {
    let y0 = section.lift6(surface, x, 1.0)?;
    let vr = variational_return(surface, section, &y0, opts, search)?;
    let jin = section.lift_jacobian(surface, x, 1.0)?;
    let jout = section.coords_jacobian(surface, &vr.y);
    let a = SMatrix::<f64, 6, 2>::from_fn(|i, j| jin[i][j]);
    let b = SMatrix::<f64, 2, 6>::from_fn(|i, j| jout[i][j]);
    Ok((b * vr.return_jacobian * a, vr))
}

/// Eigen-decomposition of a real 2×2 matrix with real eigenvalues
/// `|l0| >= |l1|` and unit eigenvectors.
pub fn eig2(m: &Matrix2<f64>) -> Option<([f64; 2], [[f64; 2]; 2])> {
    let tr = m.trace();
    let det = m.determinant();
    let disc = tr * tr / 4.0 - det;
    if disc < 0.0 {
        return None;
    }
    let r = disc.sqrt();
    let (l0, l1) = if tr >= 0.0 { (tr / 2.0 + r, tr / 2.0 - r) } else { (tr / 2.0 - r, tr / 2.0 + r) };
    let vec = |l: f64| -> [f64; 2] {
        let (a, b, c, d) = (m[(0, 0)] - l, m[(0, 1)], m[(1, 0)], m[(1, 1)] - l);
        let v = if a.abs() + b.abs() >= c.abs() + d.abs() { Vector2::new(-b, a) } else { Vector2::new(-d, c) };
        let v = v.normalize();
        let s = if v[0] < 0.0 || (v[0] == 0.0 && v[1] < 0.0) { -1.0 } else { 1.0 };
        [s * v[0], s * v[1]]
    };
    Some(([l0, l1], [vec(l0), vec(l1)]))
}

/// Null vector of `m - l I` (unit norm) via SVD.
fn eigvec6(m: &M6, l: f64) -> [f64; 6] {
    let a = m - M6::identity() * l;
    let svd = a.svd(false, true);
    let vt = svd.v_t.expect("svd");
    let k = svd.singular_values.imin();
    std::array::from_fn(|i| vt[(k, i)])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosedGeodesic {
    pub seed_z: V3,
    pub seed_v: V3,
    pub length_l: f64,
    /// `2π / L`; phase `φ = phase_scale · s` for arclength `s` from the seed.
    pub phase_scale: f64,
    pub floquet_multiplier: f64,
    pub multipliers: [f64; 2],
    /// Eigenvectors of the reduced return map in section coordinates `(u, ϑ)`.
    pub unstable_dir: [f64; 2],
    pub stable_dir: [f64; 2],
    /// Floquet eigenvectors of the full monodromy at the seed, unit norm.
    pub unstable_ambient: [f64; 6],
    pub stable_ambient: [f64; 6],
    pub reduced_monodromy: [[f64; 2]; 2],
    pub section: Section,
    pub section_point: [f64; 2],
    pub fixed_point_residual: f64,
    pub periodicity_residual: f64,
    /// `(γ, γ')` at phases `2πk/N`, unit speed.
    pub samples: Vec<[f64; 6]>,
}

pub const GEODESIC_SAMPLES: usize = 256;

impl ClosedGeodesic {
    pub fn seed(&self) -> [f64; 6] {
        pack(&self.seed_z, &self.seed_v)
    }

    /// Exact `(γ(φ), γ'(φ))` by flowing from the nearest tabulated node.
    pub fn state_at_phase(&self, surface: &ImplicitSurface, phi: f64, opts: &IntegratorOptions) -> Result<[f64; 6]> {
        let n = self.samples.len();
        let w = phi.rem_euclid(2.0 * PI);
        let k = ((w / (2.0 * PI) * n as f64).floor() as usize).min(n - 1);
        let dt = (w - 2.0 * PI * k as f64 / n as f64) / self.phase_scale;
        let (z, v) = unpack(&self.samples[k]);
        if dt == 0.0 {
            return Ok(self.samples[k]);
        }
        let mut fl = StaticFlow::new(surface, z, v, 0.0, 1.0, *opts);
        fl.run_to(dt)
    }

    /// Point of the linear unstable fiber through the seed, displaced by
    /// `offset` along the Floquet eigenvector and returned to unit speed.
    pub fn unstable_seed(&self, surface: &ImplicitSurface, offset: f64) -> Result<[f64; 6]> {
        self.fiber_point(surface, &self.unstable_ambient, offset)
    }

    pub fn stable_seed(&self, surface: &ImplicitSurface, offset: f64) -> Result<[f64; 6]> {
        self.fiber_point(surface, &self.stable_ambient, offset)
    }

    fn fiber_point(&self, surface: &ImplicitSurface, e: &[f64; 6], offset: f64) -> Result<[f64; 6]> {
        let s = self.seed();
        let y: [f64; 6] = std::array::from_fn(|i| s[i] + offset * e[i]);
        project_state(surface, &y, 1.0)
    }
}

/// Distance between two states in `(z, v)`.
pub fn state_distance(a: &[f64; 6], b: &[f64; 6]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Newton search for the closed geodesic through `section`, starting from
/// section coordinates `x0`.
pub fn find_closed_geodesic(
    surface: &ImplicitSurface,
    section: &Section,
    x0: [f64; 2],
    opts: &IntegratorOptions,
    search: &CrossingSearch,
) -> Result<ClosedGeodesic> {
    let mut x = x0;
    let mut res = f64::INFINITY;
    for _ in 0..40 {
        let (x1, _) = return_map(surface, section, &x, opts, search)?;
        let r = [x1[0] - x[0], x1[1] - x[1]];
        res = r[0].hypot(r[1]);
        if !res.is_finite() {
            return Err(GeoError::NewtonDiverged(format!("residual not finite at {x:?}")));
        }
        if res <= 1e-12 {
            break;
        }
        let (dp, _) = reduced_return_jacobian(surface, section, &x, opts, search)?;
        let a = dp - Matrix2::identity();
        let dx = a
            .lu()
            .solve(&Vector2::new(-r[0], -r[1]))
            .ok_or_else(|| GeoError::NewtonDiverged("singular return Jacobian".into()))?;
        x = [x[0] + dx[0], x[1] + dx[1]];
        if dx.norm() > 1.0 {
            return Err(GeoError::NewtonDiverged(format!("Newton step {:e}", dx.norm())));
        }
    }
    if res > 1e-11 {
        return Err(GeoError::NewtonDiverged(format!("fixed-point residual {res:e}")));
    }
    let (dp, vr) = reduced_return_jacobian(surface, section, &x, opts, search)?;
    let (mult, vecs) = eig2(&dp).ok_or(GeoError::NotHyperbolic(1.0))?;
    if mult[0].abs() <= 1.0 + 1e-6 {
        return Err(GeoError::NotHyperbolic(mult[0].abs()));
    }
    let seed = section.lift6(surface, &x, 1.0)?;
    let length = vr.time;
    let jout = section.coords_jacobian(surface, &seed);
    let orient = |e: [f64; 6], d: &[f64; 2]| -> [f64; 6] {
        let p0: f64 = (0..6).map(|j| jout[0][j] * e[j]).sum();
        let p1: f64 = (0..6).map(|j| jout[1][j] * e[j]).sum();
        if p0 * d[0] + p1 * d[1] < 0.0 {
            e.map(|c| -c)
        } else {
            e
        }
    };
    let eu = orient(eigvec6(&vr.monodromy, mult[0]), &vecs[0]);
    let es = orient(eigvec6(&vr.monodromy, mult[1]), &vecs[1]);

    let (z, v) = unpack(&seed);
    let mut fl = StaticFlow::new(surface, z, v, 0.0, 1.0, *opts);
    let mut samples = Vec::with_capacity(GEODESIC_SAMPLES);
    samples.push(seed);
    for k in 1..GEODESIC_SAMPLES {
        samples.push(fl.run_to(length * k as f64 / GEODESIC_SAMPLES as f64)?);
    }
    let end = fl.run_to(length)?;
    let periodicity_residual = state_distance(&end, &seed);

    Ok(ClosedGeodesic {
        seed_z: z,
        seed_v: v,
        length_l: length,
        phase_scale: 2.0 * PI / length,
        floquet_multiplier: mult[0],
        multipliers: mult,
        unstable_dir: vecs[0],
        stable_dir: vecs[1],
        unstable_ambient: eu,
        stable_ambient: es,
        reduced_monodromy: [[dp[(0, 0)], dp[(0, 1)]], [dp[(1, 0)], dp[(1, 1)]]],
        section: section.clone(),
        section_point: x,
        fixed_point_residual: res,
        periodicity_residual,
        samples,
    })
}

/// Section transverse to the middle geodesic of an ellipsoid-like surface:
/// the plane `z0 = 0` through the point of the surface on the negative
/// `z2` axis.
pub fn default_section(surface: &ImplicitSurface) -> Result<Section> {
    let c = match surface.base {
        crate::surface_geometry::BaseShape::Ellipsoid { c, .. } => c,
        crate::surface_geometry::BaseShape::Sphere { radius } => radius,
    } * surface.scale;
    let base = surface.project_to_surface(&[0.0, 0.0, -c])?;
    Ok(Section::new(surface, [1.0, 0.0, 0.0], base))
}

/// Crossing search matched to a closed geodesic of length roughly `length`.
pub fn crossing_search(length: f64, surface: &ImplicitSurface) -> CrossingSearch {
    CrossingSearch { t_min: 0.25 * length, t_max: 1.75 * length, gate: 0.5 * surface.scale }
}

/// The invariant cylinder `Λ = {(γ(φ), J γ'(φ))}` with speed floor `J_min`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cylinder {
    pub geodesic: ClosedGeodesic,
    pub j_min: f64,
}

impl Cylinder {
    pub fn new(geodesic: ClosedGeodesic, j_min: f64) -> Result<Self> {
        if j_min <= 0.0 {
            return Err(GeoError::InvalidConfig("J_min must be positive".into()));
        }
        Ok(Cylinder { geodesic, j_min })
    }

    pub fn point(&self, surface: &ImplicitSurface, phi: f64, j: f64, opts: &IntegratorOptions) -> Result<[f64; 6]> {
        let y = self.geodesic.state_at_phase(surface, phi, opts)?;
        Ok([y[0], y[1], y[2], j * y[3], j * y[4], j * y[5]])
    }

    /// Pullback of `Σ dz_i ∧ dv_i` to `(φ, J)`, evaluated on `(∂φ, ∂J)`.
    pub fn symplectic_pullback(&self, surface: &ImplicitSurface, phi: f64, j: f64, opts: &IntegratorOptions) -> Result<f64> {
        let h = 1e-4;
        let dphi = {
            let a = self.point(surface, phi + h, j, opts)?;
            let b = self.point(surface, phi - h, j, opts)?;
            std::array::from_fn::<f64, 6, _>(|i| (a[i] - b[i]) / (2.0 * h))
        };
        let dj = {
            let a = self.point(surface, phi, j + h, opts)?;
            let b = self.point(surface, phi, j - h, opts)?;
            std::array::from_fn::<f64, 6, _>(|i| (a[i] - b[i]) / (2.0 * h))
        };
        Ok((0..3).map(|i| dphi[i] * dj[3 + i] - dj[i] * dphi[3 + i]).sum())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jacobian_matches_finite_differences() {
        let s = ImplicitSurface::ellipsoid(1.0, 1.2, 1.5).with_bump([0.3, 0.5, 0.9], 0.05, 0.4);
        let z = s.project_to_surface(&[0.4, 0.7, 0.9]).unwrap();
        let v = s.tangent_project(&z, &[0.3, -0.5, 0.4]).unwrap();
        let jac = geodesic_jacobian(&s, &z, &v);
        let f = |y: &[f64; 6]| {
            let (z, v) = unpack(y);
            let a = geodesic_accel_gen(&s, &z, &v);
            [v[0], v[1], v[2], a[0], a[1], a[2]]
        };
        let y = pack(&z, &v);
        let h = 1e-6;
        for k in 0..6 {
            let mut a = y;
            let mut b = y;
            a[k] += h;
            b[k] -= h;
            let (fa, fb) = (f(&a), f(&b));
            for i in 0..6 {
                let d = (fa[i] - fb[i]) / (2.0 * h);
                assert!((d - jac[i][k]).abs() < 1e-7, "{i} {k}: {d} vs {}", jac[i][k]);
            }
        }
    }

    #[test]
    fn eig2_of_diagonal_and_shear() {
        let (l, v) = eig2(&Matrix2::new(0.5, 0.0, 0.0, 2.0)).unwrap();
        assert_eq!(l, [2.0, 0.5]);
        assert!((v[0][1] - 1.0).abs() < 1e-15 && (v[1][0] - 1.0).abs() < 1e-15);
        assert!(eig2(&Matrix2::new(0.0, -1.0, 1.0, 0.0)).is_none());
    }
}
