mod common;

use std::f64::consts::PI;

use approx::assert_abs_diff_eq;

use common::{config, setup, wrap_pi};
use geodrift::config::RunConfig;
use geodrift::hyperbolic_structures::{
    asymptotic_phase, continue_homoclinic, crossing_search, default_section, find_closed_geodesic, find_homoclinic,
};
use geodrift::ode::IntegratorOptions;
use geodrift::pipeline::geodesic_stage;
use geodrift::surface_geometry::{norm, sub, ImplicitSurface};
use geodrift::GeoError;

const BUMP_CENTER: [f64; 3] = [0.62108, 0.44434, 1.03614];

#[test]
fn point_on_geodesic_has_its_own_phase() {
    let s = setup();
    let (surf, g) = (s.surface(), s.geodesic());
    let opts = &config().solver;
    for phi in [1.0, 2.5, 4.0] {
        let y = g.state_at_phase(surf, phi, opts).unwrap();
        for dir in [1.0, -1.0] {
            let fit = asymptotic_phase(surf, g, &y, dir, 10.0 * g.length_l, opts).unwrap();
            assert!(wrap_pi(fit.a - phi).abs() <= 1e-6, "phi {phi} dir {dir}: {}", fit.a);
        }
    }
}

#[test]
fn asymptotic_phases_do_not_depend_on_the_seeding_point() {
    // a± from independent fits started at several points of each tail,
    // referred back to the arclength origin of ξ.
    let s = setup();
    let h = &s.homoclinic;
    let (surf, g) = (s.surface(), s.geodesic());
    let opts = &config().solver;
    let ps = g.phase_scale;
    let horizon = 30.0;
    let mut deltas = Vec::new();
    for k in 0..3 {
        let sp = h.s_max() - 10.0 * k as f64;
        let sm = h.s_min + 10.0 * k as f64;
        let fp = asymptotic_phase(surf, g, &h.state_at(surf, sp, opts).unwrap(), 1.0, horizon, opts).unwrap();
        let fm = asymptotic_phase(surf, g, &h.state_at(surf, sm, opts).unwrap(), -1.0, horizon, opts).unwrap();
        let ap = fp.a - sp * ps;
        let am = fm.a - sm * ps;
        assert!(wrap_pi(ap - h.a_plus).abs() <= 1e-6, "a+ from s = {sp}");
        assert!(wrap_pi(am - h.a_minus).abs() <= 1e-6, "a- from s = {sm}");
        deltas.push(ap - am);
    }
    for d in &deltas {
        assert!(wrap_pi(d - h.delta).abs() <= 1e-6);
    }
    // Fit horizon S against 1.5 S.
    let y = h.state_at(surf, h.s_max(), opts).unwrap();
    let a = asymptotic_phase(surf, g, &y, 1.0, horizon, opts).unwrap().a;
    let b = asymptotic_phase(surf, g, &y, 1.0, 1.5 * horizon, opts).unwrap().a;
    assert!(wrap_pi(a - b).abs() <= 1e-6);
}

#[test]
fn delta_is_stable_under_window_origin_and_speed() {
    let s = setup();
    let h = &s.homoclinic;
    let g = s.geodesic();
    let w = h.search.fit_window;
    let (_, _, d2) = h.phases(g, 2.0 * w, 0.0).unwrap();
    assert!(wrap_pi(d2 - h.delta).abs() <= 1e-6);
    for x0 in [-0.7, 1.3] {
        let (am, ap, d) = h.phases(g, w, x0).unwrap();
        assert!(wrap_pi(d - h.delta).abs() <= 1e-6);
        assert!(wrap_pi(am - h.a_minus - x0 * g.phase_scale).abs() <= 1e-6);
        assert!(wrap_pi(ap - h.a_plus - x0 * g.phase_scale).abs() <= 1e-6);
    }
    let (_, _, dj) = h.phases_at_speed(s.surface(), g, 2.0, w, &config().solver).unwrap();
    assert!(wrap_pi(dj - h.delta).abs() <= 1e-8, "speed two: {:e}", wrap_pi(dj - h.delta));
}

#[test]
fn tails_decay_at_floquet_rate() {
    let s = setup();
    let h = &s.homoclinic;
    let g = s.geodesic();
    let expected = g.floquet_multiplier.ln() / g.length_l;
    assert!(h.transversality_angle >= h.search.angle_floor);
    assert!(h.fit_minus.residual <= 0.1 && h.fit_plus.residual <= 0.1);
    for rate in [h.decay_rate, h.decay_minus.rate, h.decay_plus.rate] {
        assert!((rate / expected - 1.0).abs() <= 0.05, "rate {rate} vs {expected}");
    }
}

#[test]
fn chart_segment_is_simple_and_clear_of_geodesic() {
    let s = setup();
    let (surf, g, h, chart) = (s.surface(), s.geodesic(), &s.homoclinic, &s.chart);
    let opts = &config().solver;
    assert!(chart.delta0 <= PI / 8.0 + 1e-12);
    let seg: Vec<_> = (-100..=100)
        .map(|k| h.state_at(surf, chart.delta0 * k as f64 / 100.0, opts).unwrap())
        .map(|y| [y[0], y[1], y[2]])
        .collect();
    let gamma: Vec<_> = (0..2000)
        .map(|k| g.state_at_phase(surf, 2.0 * PI * k as f64 / 2000.0, opts).unwrap())
        .map(|y| [y[0], y[1], y[2]])
        .collect();
    let clearance = seg.iter().flat_map(|p| gamma.iter().map(move |q| norm(&sub(p, q)))).fold(f64::INFINITY, f64::min);
    assert!(clearance >= 0.9 * config().chart.clearance, "clearance {clearance}");
    // Simple: points far apart along the segment are far apart in space.
    for (i, p) in seg.iter().enumerate() {
        for q in seg.iter().skip(i + 20) {
            assert!(norm(&sub(p, q)) > 0.5 * 20.0 * chart.delta0 / 100.0);
        }
    }
}

#[test]
fn unbumped_ellipsoid_has_no_transverse_homoclinic() {
    let opts = IntegratorOptions::default();
    let cfg = RunConfig { surface: ImplicitSurface::ellipsoid(1.0, 1.2, 1.5), ..RunConfig::default() };
    let geo = geodesic_stage(&cfg).unwrap();
    match find_homoclinic(&geo.surface, &geo.geodesic, &cfg.homoclinic, &opts) {
        Err(GeoError::TangencySuspected(a)) => assert!(a < cfg.homoclinic.angle_floor),
        Err(GeoError::NoHomoclinicFound(_)) => {}
        Err(e) => panic!("unexpected error {e}"),
        Ok(o) => assert!(o.transversality_angle < 1e-6, "angle {}", o.transversality_angle),
    }
}

#[test]
fn splitting_angle_shrinks_towards_a_fold_as_bump_weakens() {
    // The homoclinic shadows the reversed geodesic and is born in a
    // tangency: the angle vanishes like √(μ − μ*) rather than like μ.
    let s = setup();
    let cfg = config();
    let mut prev = s.homoclinic.clone();
    let mut rows = vec![(0.05, prev.transversality_angle)];
    for mu in [0.046, 0.042, 0.038] {
        let c = RunConfig { surface: ImplicitSurface::ellipsoid(1.0, 1.2, 1.5).with_bump(BUMP_CENTER, mu, 0.4), ..cfg.clone() };
        let geo = geodesic_stage(&c).unwrap();
        prev = continue_homoclinic(&geo.surface, &geo.geodesic, &prev, &cfg.solver).unwrap();
        rows.push((mu, prev.transversality_angle));
    }
    for w in rows.windows(2) {
        assert!(w[1].1 < w[0].1, "angle not decreasing: {rows:?}");
    }
    // angle² is affine in μ: least squares line and its relative misfit.
    let n = rows.len() as f64;
    let (sx, sy) = rows.iter().fold((0.0, 0.0), |(a, b), r| (a + r.0, b + r.1 * r.1));
    let (mx, my) = (sx / n, sy / n);
    let sxy: f64 = rows.iter().map(|r| (r.0 - mx) * (r.1 * r.1 - my)).sum();
    let sxx: f64 = rows.iter().map(|r| (r.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let misfit = rows.iter().map(|r| (r.1 * r.1 - my - slope * (r.0 - mx)).abs() / (r.1 * r.1)).fold(0.0, f64::max);
    let mu_star = mx - my / slope;
    assert!(misfit <= 0.1, "misfit {misfit}: {rows:?}");
    assert!(mu_star > 0.0 && mu_star < 0.038, "fold at {mu_star}");
}

#[test]
fn unscaled_geodesic_length_matches_normalization() {
    let s = setup();
    let g = s.geodesic();
    assert_abs_diff_eq!(g.length_l, 2.0 * PI, epsilon = 1e-10);
    let raw = &config().surface;
    let g0 = find_closed_geodesic(raw, &default_section(raw).unwrap(), [0.0, 0.0], &config().solver, &crossing_search(8.0, raw))
        .unwrap();
    assert_abs_diff_eq!(g0.floquet_multiplier, g.floquet_multiplier, epsilon = 1e-8);
}
