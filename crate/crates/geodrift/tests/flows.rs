mod common;

use std::f64::consts::PI;

use approx::assert_abs_diff_eq;
use nalgebra::Matrix6;
use proptest::prelude::*;

use geodrift::geodesic_dynamics::{flow_static, integrate_static, unpack, ExtendedState};
use geodrift::hyperbolic_structures::{crossing_search, default_section, find_closed_geodesic, state_distance, ClosedGeodesic, Cylinder};
use geodrift::ode::IntegratorOptions;
use geodrift::surface_geometry::{cross, norm, normalize, sub, ImplicitSurface, V3};

fn ellipsoid() -> ImplicitSurface {
    ImplicitSurface::ellipsoid(1.0, 1.2, 1.5)
}

fn middle_geodesic(s: &ImplicitSurface) -> ClosedGeodesic {
    let opts = IntegratorOptions::default();
    find_closed_geodesic(s, &default_section(s).unwrap(), [0.0, 0.0], &opts, &crossing_search(8.0, s)).unwrap()
}

/// Unit tangent at the projection of `dir` onto the surface, rotated by `angle`.
fn tangent_state(s: &ImplicitSurface, dir: V3, angle: f64) -> (V3, V3) {
    let z = s.project_to_surface(&dir).unwrap();
    let n = s.unit_normal(&z).unwrap();
    let a = if n[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let e0 = normalize(&cross(&n, &a));
    let e1 = cross(&n, &e0);
    let v = std::array::from_fn(|i| angle.cos() * e0[i] + angle.sin() * e1[i]);
    (z, v)
}

fn run_end(s: &ImplicitSurface, z: V3, v: V3, t: f64) -> (V3, V3) {
    flow_static(s, &z, &v, t, &IntegratorOptions::default()).unwrap()
}

#[test]
fn ellipsoid_speed_and_constraint_over_long_run() {
    let s = ellipsoid();
    let (z, v) = tangent_state(&s, [0.7, 0.5, 0.9], 0.3);
    let traj = integrate_static(&s, &ExtendedState::from_static(z, v), 1000.0, &IntegratorOptions::default()).unwrap();
    let speed = traj.samples.iter().map(|p| (p.state.speed() - 1.0).abs()).fold(0.0, f64::max);
    let q = traj.samples.iter().map(|p| s.q(&p.state.z).abs()).fold(0.0, f64::max);
    assert!(speed <= 1e-9, "speed drift {speed:e}");
    assert!(q <= 1e-9, "constraint drift {q:e}");
}

#[test]
fn doubled_speed_over_half_time_reaches_same_point() {
    let s = ellipsoid();
    let (z, v) = tangent_state(&s, [-0.4, 0.8, 0.6], 1.1);
    let (za, _) = run_end(&s, z, v, 10.0);
    let (zb, _) = run_end(&s, z, [2.0 * v[0], 2.0 * v[1], 2.0 * v[2]], 5.0);
    assert!(norm(&sub(&za, &zb)) <= 1e-9);
}

#[test]
fn forward_then_backward_returns_home() {
    let s = ellipsoid();
    let (z, v) = tangent_state(&s, [0.2, -0.9, 0.5], 2.0);
    let (z1, v1) = run_end(&s, z, v, 50.0);
    let (z2, v2) = run_end(&s, z1, v1, -50.0);
    assert!(norm(&sub(&z, &z2)).max(norm(&sub(&v, &v2))) <= 1e-7);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn speed_scaling_reparametrizes_paths(
        dir in prop::array::uniform3(-1.0f64..1.0),
        angle in 0.0..2.0 * PI,
        c in 0.5f64..3.0,
    ) {
        prop_assume!(norm(&dir) > 0.2);
        let s = ellipsoid();
        let (z, v) = tangent_state(&s, dir, angle);
        let t = 3.0;
        let (za, _) = run_end(&s, z, v, t);
        let (zb, _) = run_end(&s, z, [c * v[0], c * v[1], c * v[2]], t / c);
        prop_assert!(norm(&sub(&za, &zb)) <= 1e-9);
    }
}

#[test]
fn middle_ellipse_is_planar() {
    let s = ellipsoid();
    let g = middle_geodesic(&s);
    let off_plane = g.samples.iter().map(|y| y[1].abs()).fold(0.0, f64::max);
    assert!(off_plane <= 1e-10, "max |z1| = {off_plane:e}");
    assert!(g.fixed_point_residual <= 1e-11);
}

#[test]
fn multiplier_matches_finite_difference_monodromy() {
    // Central differences of the time-L flow map in all six ambient
    // directions; its spectrum is {λ, 1/λ, 1, 1, 1, 1} up to roundoff.
    let s = ellipsoid();
    let g = middle_geodesic(&s);
    let mut opts = IntegratorOptions::default();
    opts.projection_enabled = false;
    let y0 = g.seed();
    let h = 1e-6;
    let mut m = Matrix6::zeros();
    for k in 0..6 {
        let mut yp = y0;
        let mut ym = y0;
        yp[k] += h;
        ym[k] -= h;
        let (zp, vp) = flow_static(&s, &[yp[0], yp[1], yp[2]], &[yp[3], yp[4], yp[5]], g.length_l, &opts).unwrap();
        let (zm, vm) = flow_static(&s, &[ym[0], ym[1], ym[2]], &[ym[3], ym[4], ym[5]], g.length_l, &opts).unwrap();
        for i in 0..3 {
            m[(i, k)] = (zp[i] - zm[i]) / (2.0 * h);
            m[(i + 3, k)] = (vp[i] - vm[i]) / (2.0 * h);
        }
    }
    let lambda = m.complex_eigenvalues().iter().map(|c| c.norm()).fold(0.0, f64::max);
    assert_abs_diff_eq!(lambda, g.floquet_multiplier, epsilon = 1e-6);
}

#[test]
fn small_bump_shifts_multiplier_linearly() {
    let s0 = ellipsoid();
    let l0 = middle_geodesic(&s0).floquet_multiplier;
    let c = [0.62108, 0.44434, 1.03614];
    let shift = |mu: f64| middle_geodesic(&ellipsoid().with_bump(c, mu, 0.4)).floquet_multiplier - l0;
    let (d1, d2) = (shift(1e-2), shift(5e-3));
    assert!(d1.abs() <= l0 * 1e-2, "shift {d1:e}");
    assert!((d1 / d2 - 2.0).abs() <= 0.1, "ratio {}", d1 / d2);
    // A bump far from the geodesic leaves it essentially unchanged.
    let far = middle_geodesic(&ellipsoid().with_bump([0.0, 1.2, 0.0], 1e-2, 0.4)).floquet_multiplier - l0;
    assert!(far.abs() <= 1e-5);
}

#[test]
fn fiber_seeds() {
    let geo = common::geodesic();
    let (s, g) = (&geo.surface, &geo.geodesic);
    assert!(state_distance(&g.unstable_seed(s, 0.0).unwrap(), &g.seed()) <= 1e-14);
    let d1 = state_distance(&g.unstable_seed(s, 1e-6).unwrap(), &g.seed());
    let d2 = state_distance(&g.unstable_seed(s, 5e-7).unwrap(), &g.seed());
    assert!((d1 / d2 - 2.0).abs() <= 0.1);
}

#[test]
fn unstable_branches_decay_backward_at_floquet_rate() {
    let geo = common::geodesic();
    let (s, g) = (&geo.surface, &geo.geodesic);
    let opts = IntegratorOptions::default();
    let expected = g.floquet_multiplier.ln() / g.length_l;
    let p = g.seed();
    for sign in [1.0, -1.0] {
        let y = g.unstable_seed(s, sign * 1e-6).unwrap();
        let (z, v) = unpack(&y);
        let mut dist = Vec::new();
        for k in 1..=4 {
            let (zk, vk) = flow_static(s, &z, &v, -(k as f64) * g.length_l, &opts).unwrap();
            let yk = [zk[0], zk[1], zk[2], vk[0], vk[1], vk[2]];
            dist.push(state_distance(&yk, &p));
        }
        let rate = (dist[0] / dist[3]).ln() / (3.0 * g.length_l);
        assert!((rate / expected - 1.0).abs() <= 0.01, "branch {sign}: rate {rate} vs {expected}");
    }
}

#[test]
fn period_map_scales_floquet_fibers() {
    let geo = common::geodesic();
    let (s, g) = (&geo.surface, &geo.geodesic);
    let opts = IntegratorOptions::default();
    let lambda = g.floquet_multiplier;
    let stretch = |plus: [f64; 6], minus: [f64; 6]| {
        let (zp, vp) = flow_static(s, &[plus[0], plus[1], plus[2]], &[plus[3], plus[4], plus[5]], g.length_l, &opts).unwrap();
        let (zm, vm) = flow_static(s, &[minus[0], minus[1], minus[2]], &[minus[3], minus[4], minus[5]], g.length_l, &opts).unwrap();
        let after = norm(&sub(&zp, &zm)).hypot(norm(&sub(&vp, &vm)));
        after / state_distance(&plus, &minus)
    };
    let d = 1e-6;
    let contraction = stretch(g.stable_seed(s, d).unwrap(), g.stable_seed(s, -d).unwrap());
    assert_abs_diff_eq!(contraction, 1.0 / lambda, epsilon = 1e-6);
    let expansion = stretch(g.unstable_seed(s, d).unwrap(), g.unstable_seed(s, -d).unwrap());
    assert!((expansion / lambda - 1.0).abs() <= 1e-5);
    assert_abs_diff_eq!(g.multipliers[0] * g.multipliers[1], 1.0, epsilon = 1e-8);
}

#[test]
fn cylinder_symplectic_form_and_inner_motion() {
    let geo = common::geodesic();
    let (s, g) = (&geo.surface, &geo.geodesic);
    let opts = IntegratorOptions::default();
    let cyl = Cylinder::new(g.clone(), 1.0).unwrap();
    for (phi, j) in [(0.3, 1.0), (2.0, 1.7), (4.5, 3.0)] {
        let w = cyl.symplectic_pullback(s, phi, j, &opts).unwrap();
        assert_abs_diff_eq!(w, 1.0, epsilon = 1e-6);
        // φ̇ = J, J̇ = 0 on the cylinder.
        let t = 1.3;
        let (z, v) = unpack(&cyl.point(s, phi, j, &opts).unwrap());
        let (zt, vt) = flow_static(s, &z, &v, t, &opts).unwrap();
        let expect = cyl.point(s, phi + j * t * g.phase_scale, j, &opts).unwrap();
        let got = [zt[0], zt[1], zt[2], vt[0], vt[1], vt[2]];
        assert!(state_distance(&got, &expect) <= 1e-9, "({phi}, {j})");
    }
}
