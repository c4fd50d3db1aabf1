mod common;

use std::f64::consts::{FRAC_PI_4, PI};

use approx::{assert_abs_diff_eq, assert_relative_eq};
use nalgebra::SymmetricEigen;

use common::{config, phases, setup, wrap_pi};
use geodrift::geodesic_dynamics::{flow_static, integrate_extended, unpack, ExtendedFlow, ExtendedState};
use geodrift::perturbation::{Fluctuation, TimeProfile};
use geodrift::scattering::{
    measure_scattering, predicted_delta_theta, predicted_delta_theta_limit, remainder, remainder_estimate, uniform_thetas,
};
use geodrift::surface_geometry::{norm, sub, V3};
use geodrift::GeoError;

fn dot(a: &V3, b: &V3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn fluctuation() -> Fluctuation<'static> {
    let s = setup();
    Fluctuation::new(s.surface(), &s.chart, &s.spec).unwrap()
}

// Fermi chart.

#[test]
fn frame_table_is_orthonormal() {
    let s = setup();
    let surf = s.surface();
    for node in &s.chart.nodes {
        let z = [node[0], node[1], node[2]];
        let t = [node[3], node[4], node[5]];
        let e = [node[6], node[7], node[8]];
        let n = surf.unit_normal(&z).unwrap();
        assert_abs_diff_eq!(norm(&e), 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(norm(&t), 1.0, epsilon = 1e-9);
        assert!(dot(&e, &t).abs() <= 1e-9 && dot(&e, &n).abs() <= 1e-9);
    }
}

#[test]
fn transport_from_neighbouring_nodes_agrees() {
    // Halfway between two nodes the frame is transported forward from one
    // and backward from the other.
    let s = setup();
    let c = &s.chart;
    for k in (0..c.nodes.len() - 1).step_by(7) {
        let mid = c.x0_min + (k as f64 + 0.5) * c.step;
        let (za, _, ea) = c.axis(s.surface(), mid - 1e-13);
        let (zb, _, eb) = c.axis(s.surface(), mid + 1e-13);
        assert!(norm(&sub(&za, &zb)) <= 1e-8 && norm(&sub(&ea, &eb)) <= 1e-8, "node {k}");
    }
}

#[test]
fn forward_map_on_axis_follows_homoclinic() {
    let s = setup();
    let opts = &config().solver;
    for x0 in [-0.3, -0.1, 0.0, 0.2, 0.35] {
        let z = s.chart.fermi_forward(s.surface(), &[x0, 0.0]).unwrap();
        let y = s.homoclinic.state_at(s.surface(), x0, opts).unwrap();
        assert!(norm(&sub(&z, &[y[0], y[1], y[2]])) <= 1e-9, "x0 = {x0}");
    }
}

#[test]
fn inverse_map_examples() {
    let s = setup();
    let (surf, c) = (s.surface(), &s.chart);
    let opts = &config().solver;
    let y = s.homoclinic.state_at(surf, 0.1, opts).unwrap();
    let x = c.fermi_inverse(surf, &[y[0], y[1], y[2]]).unwrap();
    assert!((x[0] - 0.1).abs() <= 1e-8 && x[1].abs() <= 1e-8);

    // Unit-time geodesic from ξ(0) with velocity 1e-3 e₁.
    let (z, _, e) = c.axis(surf, 0.0);
    let (z1, _) = flow_static(surf, &z, &[1e-3 * e[0], 1e-3 * e[1], 1e-3 * e[2]], 1.0, opts).unwrap();
    let x = c.fermi_inverse(surf, &z1).unwrap();
    assert!((x[1] - 1e-3).abs() <= 1e-6 && x[0].abs() <= 1e-6, "{x:?}");

    let far = s.geodesic().state_at_phase(surf, 1.0, opts).unwrap();
    assert!(matches!(c.fermi_inverse(surf, &[far[0], far[1], far[2]]), Err(GeoError::OutsideChart)));
}

#[test]
fn static_metric_is_fermi() {
    let s = setup();
    let fl = fluctuation();
    let c = &s.chart;
    for k in 0..=20 {
        let x0 = c.delta0 * (k as f64 / 10.0 - 1.0) * 0.99;
        let md = fl.metric_data(0.0, &[x0, 0.0], 0.0).unwrap();
        assert!((md.g - nalgebra::Matrix2::identity()).abs().max() <= 1e-6);
        // The axis is a geodesic: ∂g₀₀/∂x₁ vanishes on it.
        assert!(md.dg[1][(0, 0)].abs() <= 1e-5, "x0 = {x0}: {}", md.dg[1][(0, 0)]);
    }
    for i in 0..=8 {
        for j in 0..=8 {
            let x = [c.delta0 * (i as f64 / 4.0 - 1.0), c.delta1 * (j as f64 / 4.0 - 1.0)];
            let g = c.static_metric(s.surface(), &x);
            assert!((g[(0, 1)] - g[(1, 0)]).abs() <= 1e-12);
            assert!(SymmetricEigen::new(g).eigenvalues.min() > 0.5);
        }
    }
}

// Perturbation.

#[test]
fn psi_at_centre_is_minus_alpha_over_curvature() {
    let s = setup();
    let fl = fluctuation();
    let surf = s.surface();
    let (z, v) = unpack(&s.homoclinic.seed());
    let kappa = surf.normal_curvature(&z, &v).unwrap() / norm(&surf.grad(&z));
    let expect = -s.spec.alpha_rho(0.0) / kappa;
    assert_relative_eq!(fl.psi(&z, 0.0).unwrap(), expect, max_relative = 1e-9);
    for t in [0.0, 0.7, 3.0] {
        assert_abs_diff_eq!(fl.psi(&z, t + 2.0 * PI).unwrap(), fl.psi(&z, t).unwrap(), epsilon = 1e-15);
    }
}

#[test]
fn psi_vanishes_off_its_support() {
    let s = setup();
    let fl = fluctuation();
    let (surf, c, spec) = (s.surface(), &s.chart, &s.spec);
    let opts = &config().solver;
    // Along ξ beyond ρ, inside and outside the chart.
    for k in 0..=20 {
        let u = spec.rho + (2.0 * c.delta0 - spec.rho) * k as f64 / 20.0;
        for sgn in [1.0, -1.0] {
            let y = s.homoclinic.state_at(surf, sgn * u, opts).unwrap();
            assert_eq!(fl.psi(&[y[0], y[1], y[2]], 0.3).unwrap(), 0.0);
        }
    }
    // Transverse shell beyond supp β.
    for k in 0..=10 {
        let x0 = c.delta0 * (k as f64 / 5.0 - 1.0) * 0.95;
        for x1 in [spec.beta_width, 0.5 * (spec.beta_width + c.delta1), 0.999 * c.delta1] {
            for sgn in [1.0, -1.0] {
                let z = c.fermi_forward(surf, &[x0, sgn * x1]).unwrap();
                assert_eq!(fl.psi(&z, 1.1).unwrap(), 0.0);
            }
        }
    }
    let far = s.geodesic().state_at_phase(surf, 2.0, opts).unwrap();
    assert_eq!(fl.psi(&[far[0], far[1], far[2]], 0.0).unwrap(), 0.0);
}

#[test]
fn fluctuating_embedding_is_second_order_close_to_normal_offset() {
    let s = setup();
    let fl = fluctuation();
    let surf = s.surface();
    let z = s.chart.fermi_forward(surf, &[0.03, 0.01]).unwrap();
    let t = 0.3;
    assert_eq!(fl.fluctuating_embedding(0.0, &z, t).unwrap(), z);
    let psi = fl.psi(&z, t).unwrap();
    assert!(psi != 0.0);
    // First-order point z + εψ n, with n = −∇Q/|∇Q|.
    let n = surf.unit_normal(&z).unwrap();
    let dev = |eps: f64| {
        let w = fl.fluctuating_embedding(eps, &z, t).unwrap();
        let lin = [z[0] + eps * psi * n[0], z[1] + eps * psi * n[1], z[2] + eps * psi * n[2]];
        norm(&sub(&w, &lin))
    };
    let ratio = dev(2e-3) / dev(1e-3);
    assert!((ratio / 4.0 - 1.0).abs() <= 0.3, "ratio {ratio}");
    let far = s.geodesic().state_at_phase(surf, 2.0, &config().solver).unwrap();
    let zf = [far[0], far[1], far[2]];
    assert_eq!(fl.fluctuating_embedding(1e-3, &zf, t).unwrap(), zf);
}

#[test]
fn fluctuating_surface_stays_regular() {
    let s = setup();
    let fl = fluctuation();
    let c = &s.chart;
    let eps = config().perturbation.epsilon_max;
    for i in 0..=8 {
        for j in 0..=8 {
            let x = [c.delta0 * (i as f64 / 4.0 - 1.0) * 0.99, c.delta1 * (j as f64 / 4.0 - 1.0) * 0.99];
            for th in [0.0, 2.0, 4.0] {
                let md = fl.metric_data(eps, &x, th).unwrap();
                assert!(SymmetricEigen::new(md.ge).eigenvalues.min() > 0.25, "{x:?}");
            }
        }
    }
}

// Extended flow.

fn start_state() -> ExtendedState {
    let s = setup();
    let y = s.homoclinic.state_at(s.surface(), -5.0, &config().solver).unwrap();
    let (z, v) = unpack(&y);
    ExtendedState::new(z, v, 0.7, 0.2)
}

#[test]
fn unperturbed_extended_flow_is_the_static_flow() {
    let s = setup();
    let fl = fluctuation();
    let st = start_state();
    let traj = integrate_extended(&fl, 0.0, &st, 10.0, &config().solver).unwrap();
    assert!(traj.samples.iter().any(|p| p.chart == geodrift::geodesic_dynamics::ChartTag::Fermi));
    for p in traj.samples.iter().step_by(5) {
        let (z, v) = flow_static(s.surface(), &st.z, &st.v, p.t, &config().solver).unwrap();
        let err = norm(&sub(&z, &p.state.z)).max(norm(&sub(&v, &p.state.v)));
        assert!(err <= 1e-10, "t = {}: {err:e}", p.t);
        assert_abs_diff_eq!(p.state.theta, st.theta + p.t, epsilon = 1e-12);
        assert_eq!(p.state.big_theta, st.big_theta);
    }
}

#[test]
fn autonomous_perturbation_exchanges_no_energy() {
    let s = setup();
    let spec = s.spec.with_chi(TimeProfile::Constant { value: 1.0 });
    let fl = Fluctuation::new(s.surface(), &s.chart, &spec).unwrap();
    let st = start_state();
    let traj = integrate_extended(&fl, 1e-3, &st, 10.0, &config().solver).unwrap();
    for p in &traj.samples {
        assert!((p.state.big_theta - st.big_theta).abs() <= 1e-10);
    }
}

#[test]
fn perturbed_excursion_is_reversible_and_conservative() {
    let fl = fluctuation();
    let st = start_state();
    let opts = config().solver;
    let eps = 1e-3;
    let mut fwd = ExtendedFlow::new(fl, eps, &st, 0.0, 1.0, opts).unwrap();
    let e0 = fwd.hamiltonian().unwrap() + st.big_theta;
    let mut worst: f64 = 0.0;
    while fwd.t() < 10.0 {
        fwd.step(Some(10.0)).unwrap();
        worst = worst.max((fwd.hamiltonian().unwrap() + fwd.state().unwrap().big_theta - e0).abs());
    }
    assert!(fwd.passages > 0);
    assert!(worst <= 1e-8 * e0.abs().max(1.0), "energy drift {worst:e}");
    let end = fwd.state().unwrap();
    assert!((end.big_theta - st.big_theta).abs() > 1e-6, "no exchange");
    let mut back = ExtendedFlow::new(fl, eps, &end, 10.0, -1.0, opts).unwrap();
    let home = back.run_to(0.0).unwrap();
    let err = norm(&sub(&home.z, &st.z))
        .max(norm(&sub(&home.v, &st.v)))
        .max((home.theta - st.theta).abs())
        .max((home.big_theta - st.big_theta).abs());
    assert!(err <= 1e-7, "{err:e}");
}

// Scattering.

#[test]
fn unperturbed_scattering_is_the_phase_shift() {
    let s = setup();
    let ph = phases();
    let spec = s.spec.with_epsilon(0.0);
    let fl = Fluctuation::new(s.surface(), &s.chart, &spec).unwrap();
    let phi = config().experiments.scattering_phi;
    for (j, th) in [(1.0, 0.4), (2.0, 2.0)] {
        let m = measure_scattering(&fl, &s.homoclinic, &ph, [phi, j, th, 0.3], 5.0, &config().solver).unwrap();
        let [pb, jb, tb, bb] = m.measured_image;
        assert!(wrap_pi(pb - phi - ph.delta()).abs() <= 1e-7, "phi {:e}", wrap_pi(pb - phi - ph.delta()));
        assert!((jb - j).abs() <= 1e-7 && wrap_pi(tb - th).abs() <= 1e-7 && (bb - 0.3).abs() <= 1e-7);
        assert_eq!(m.delta_theta_measured, 0.0);
    }
}

#[test]
fn perturbed_scattering_moves_phase_and_speed_by_order_epsilon() {
    let s = setup();
    let ph = phases();
    let phi = config().experiments.scattering_phi;
    for eps in [2e-3, 1e-3] {
        let spec = s.spec.with_epsilon(eps);
        let fl = Fluctuation::new(s.surface(), &s.chart, &spec).unwrap();
        for th in [0.0, 1.5, 3.0, 4.5] {
            let m = measure_scattering(&fl, &s.homoclinic, &ph, [phi, 1.0, th, 0.0], 5.0, &config().solver).unwrap();
            let [pb, jb, ..] = m.measured_image;
            assert!((jb - 1.0).abs() <= 10.0 * eps, "J moved by {:e}", jb - 1.0);
            assert!(wrap_pi(pb - phi - ph.delta()).abs() <= 10.0 * eps);
            // H + Θ is conserved across the excursion: J̄²/2 + Θ̄ = J²/2 + Θ.
            assert_abs_diff_eq!(0.5 * jb * jb + m.measured_image[3], 0.5, epsilon = 1e-8);
        }
    }
}

#[test]
fn scattering_residual_is_quadratic_in_epsilon() {
    let s = setup();
    let ph = phases();
    let e = &config().experiments;
    let eps = [4e-3, 2e-3, 1e-3];
    let sup: Vec<f64> = eps
        .iter()
        .map(|&ep| {
            let spec = s.spec.with_epsilon(ep);
            let fl = Fluctuation::new(s.surface(), &s.chart, &spec).unwrap();
            e.scattering_thetas
                .iter()
                .map(|&th| measure_scattering(&fl, &s.homoclinic, &ph, [e.scattering_phi, 1.0, th, 0.0], 5.0, &config().solver).unwrap().residual)
                .fold(0.0, f64::max)
        })
        .collect();
    for w in sup.windows(2) {
        let r = w[0] / w[1];
        assert!((3.0..=5.0).contains(&r), "residual ratio {r}: {sup:?}");
    }
}

#[test]
fn jump_scales_with_speed() {
    // Same channel phase θ + (a₋ − φ)/J at J = 1 and J = 2.
    let s = setup();
    let ph = phases();
    let spec = s.spec.with_epsilon(1e-3);
    let fl = Fluctuation::new(s.surface(), &s.chart, &spec).unwrap();
    let phi = config().experiments.scattering_phi;
    let target = -FRAC_PI_4;
    let run = |j: f64| {
        let th = target - (ph.a_minus - phi) / j;
        measure_scattering(&fl, &s.homoclinic, &ph, [phi, j, th, 0.0], 5.0, &config().solver).unwrap()
    };
    let (a, b) = (run(1.0), run(2.0));
    let measured = b.delta_theta_measured / a.delta_theta_measured;
    let predicted = b.delta_theta_predicted / a.delta_theta_predicted;
    assert!((measured / predicted - 1.0).abs() <= 0.1, "measured {measured}, predicted {predicted}");
    assert!((predicted / 2.0 - 1.0).abs() <= 0.1);
}

#[test]
fn prediction_forms_and_remainders() {
    let s = setup();
    let ph = phases();
    let spec = s.spec.with_epsilon(1e-3);
    for (phi, j, th) in [(0.0, 1.0, 0.3), (0.5, 2.0, 2.0), (-0.2, 4.0, 5.0)] {
        let full = predicted_delta_theta(&spec, &ph, phi, j, th);
        let lim = predicted_delta_theta_limit(&spec, &ph, phi, j, th);
        let r0 = remainder(&spec, &ph, phi, j, th, 1);
        assert_abs_diff_eq!(full - lim, -spec.epsilon * j * r0, epsilon = 1e-12);
        // The limit form depends on (φ, θ) through θ + (a₋ − φ)/J only.
        assert_abs_diff_eq!(lim, predicted_delta_theta_limit(&spec, &ph, 0.0, j, th - phi / j), epsilon = 1e-12);
    }
    // At φ = 0 the limit form is +εJ sin(θ + a₋/J).
    for th in [0.0, 1.0, 2.0] {
        let v = predicted_delta_theta_limit(&spec, &ph, 0.0, 1.5, th);
        assert_abs_diff_eq!(v, spec.epsilon * 1.5 * (th + ph.a_minus / 1.5).sin(), epsilon = 1e-15);
    }
    let flat = spec.with_chi(TimeProfile::Constant { value: 2.0 });
    assert_eq!(predicted_delta_theta(&flat, &ph, 0.1, 1.0, 0.5), 0.0);
    let est = remainder_estimate(&flat, &ph, &[0.2, 0.1], &[1.0, 2.0], &uniform_thetas(16));
    assert!(est.iter().all(|e| e.sup_r0 == 0.0 && e.sup_r1 == 0.0));
}

#[test]
fn remainder_respects_taylor_envelope_and_is_second_order() {
    // α is even, so the first moment of αρ vanishes and R is O(ρ²).
    let s = setup();
    let ph = phases();
    let e = &config().experiments;
    let thetas = uniform_thetas(e.remainder_theta_count);
    let est = remainder_estimate(&s.spec, &ph, &e.remainder_rhos, &[1.0], &thetas);
    for r in &est {
        assert!(r.sup_r0 <= r.rho && r.sup_r1 <= r.rho, "{r:?}");
    }
    for w in est.windows(2) {
        let ratio = w[0].sup_r0 / w[1].sup_r0;
        assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
    }
}
