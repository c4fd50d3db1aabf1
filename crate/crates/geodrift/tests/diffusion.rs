mod common;

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_4, PI};

use approx::assert_abs_diff_eq;

use common::{config, phases, setup};
use geodrift::diffusion_experiments::{
    build_transition_chain, jump_derivative, jump_phase, scattering_jump, time_scaling_study, ChainMode, CylinderState,
    Direction,
};
use geodrift::pipeline::{chain_params, chain_start, timing_params};
use geodrift::verification::{chains, guided_drift, inner_map, nonincreasing, transversality};
use geodrift::GeoError;

#[test]
fn jumps_at_the_chosen_phases() {
    let s = setup();
    let ph = phases();
    let spec = s.spec.with_epsilon(1e-2);
    let w = config().experiments.window;
    for j in [1.0, 1.7, 3.0] {
        let e0 = 0.5 * j * j;
        let up = CylinderState::new(jump_phase(Direction::Up, j, &ph), 0.0, e0);
        let down = CylinderState::new(jump_phase(Direction::Down, j, &ph), 0.0, e0);
        let a = scattering_jump(&up, &spec, &ph, Direction::Up, w, false).unwrap();
        let b = scattering_jump(&down, &spec, &ph, Direction::Down, w, false).unwrap();
        assert_abs_diff_eq!(a.big_theta, 1e-2 * j * FRAC_1_SQRT_2, epsilon = 1e-15);
        assert_abs_diff_eq!(b.big_theta, -1e-2 * j * FRAC_1_SQRT_2, epsilon = 1e-15);
        assert_abs_diff_eq!(jump_derivative(&up, &spec, &ph, false).abs(), 1e-2 * j * FRAC_1_SQRT_2, epsilon = 1e-15);
        // Zero of the kernel: sin(θ + a₋/J) = 0.
        let flat = CylinderState::new((-ph.a_minus / j).rem_euclid(2.0 * PI), 0.0, e0);
        assert!(matches!(scattering_jump(&flat, &spec, &ph, Direction::Up, w, false), Err(GeoError::PhaseOutOfWindow(_))));
    }
}

#[test]
fn diffusive_chain_descends_by_guaranteed_steps() {
    let s = setup();
    let cfg = config();
    let c = chains(s, cfg).unwrap();
    let rec = c.diffusive.as_ref().unwrap();
    let eps = c.epsilon;
    let w = cfg.experiments.window;
    let theta0 = c.c_star;
    let mut guaranteed = 0.0;
    let mut last_j = 0.0;
    for step in rec.jumps() {
        let (j, jn) = (step.before.speed(), step.after.speed());
        let d = step.after.big_theta - step.before.big_theta;
        assert!(d <= -eps * j * (FRAC_PI_4 - w).sin(), "jump {d:e} at J = {j}");
        assert!(d.abs() >= eps * j / (2.0 * 2f64.sqrt()));
        assert!(jn > j && j > last_j);
        assert!((jn * jn - j * j - 2.0 * d.abs()).abs() <= 1e-12 * jn * jn);
        guaranteed += eps * j * (FRAC_PI_4 - w).sin();
        last_j = j;
    }
    let last = rec.final_state().unwrap();
    assert!(last.big_theta <= theta0 - guaranteed + 1e-9);
    assert!(c.final_drop >= c.target_drop);
    let bound = (c.target_drop * 2f64.sqrt() / (eps * c.j0)).ceil() as usize;
    assert!(c.jumps <= bound, "{} jumps, bound {bound}", c.jumps);
}

#[test]
fn oscillatory_chain_returns_near_start_while_minima_sink() {
    let s = setup();
    let cfg = config();
    let ph = phases();
    let spec = s.spec.with_epsilon(cfg.experiments.chain_epsilon);
    let start = chain_start(&ph, cfg.experiments.chain_j0);
    let rec =
        build_transition_chain(&start, &spec, &ph, ChainMode::Oscillatory, cfg.experiments.chain_max_jumps, &chain_params(cfg))
            .unwrap();
    let ext = rec.cycle_extrema();
    assert!(ext.len() >= cfg.experiments.oscillatory_cycles);
    for (hi, _) in &ext {
        assert!((hi - start.big_theta).abs() <= 1.0);
    }
    let mins: Vec<f64> = ext.iter().map(|e| e.1).collect();
    assert!(nonincreasing(&mins), "{mins:?}");
    assert!(mins.last().unwrap() < &(start.big_theta - 1.0));
}

#[test]
fn true_flow_on_cylinder_matches_inner_map() {
    let s = setup();
    let r = inner_map(s, config()).unwrap();
    for ret in &r.returns {
        assert_abs_diff_eq!(ret.return_time, 2.0 * PI / ret.j, epsilon = 1e-8);
    }
    assert!(r.returns.iter().any(|x| (x.j - 1.0).abs() < 1e-12 && (x.return_time - 2.0 * PI).abs() <= 1e-8));
    assert!(r.returns.iter().any(|x| (x.j - 2.0).abs() < 1e-12 && (x.return_time - PI).abs() <= 1e-8));
    assert_abs_diff_eq!(r.twist_ratio, 8.0, epsilon = 1e-3);
    for t in &r.twists {
        assert!((t.measured / t.analytic - 1.0).abs() <= 1e-4);
    }
}

#[test]
fn leaves_are_crossed_transversally() {
    let s = setup();
    let r = transversality(s, config()).unwrap();
    assert!(r.min_margin >= 1.0);
    assert!(r.max_residual <= 1e-12);
    assert!(r.samples.iter().all(|x| x.derivative.abs() >= x.floor));
}

#[test]
fn halving_epsilon_doubles_drift_time() {
    let s = setup();
    let ph = phases();
    let mut p = timing_params(config());
    p.epsilons = vec![1e-2, 5e-3, 2.5e-3];
    p.speeds = vec![2.5f64.sqrt()];
    let r = time_scaling_study(&s.spec, &ph, &p).unwrap();
    let times: Vec<f64> = r.rows.iter().map(|row| row.time).collect();
    for w in times.windows(2) {
        let ratio = w[1] / w[0];
        assert!((1.5..=2.7).contains(&ratio), "time ratio {ratio}: {times:?}");
    }
    let jumps: Vec<f64> = r.rows.iter().map(|row| row.jumps).collect();
    for w in jumps.windows(2) {
        assert!((w[1] / w[0] - 2.0).abs() <= 0.2, "{jumps:?}");
    }
}

#[test]
fn guided_drift_follows_prediction() {
    let s = setup();
    let cfg = config();
    let g = guided_drift(s, cfg).unwrap();
    let n = cfg.experiments.drift_excursions;
    assert_eq!(g.perturbed.excursions.len(), n);
    for x in &g.control.excursions {
        assert!(x.delta_measured.abs() <= 1e-8);
    }
    for r in g.ratios() {
        assert!((0.5..=2.0).contains(&r), "ratio {r}");
    }
    assert!(g.perturbed.excursions.iter().all(|x| x.delta_measured < 0.0));
    assert!(g.reversed.excursions.iter().all(|x| x.delta_measured > 0.0));
    let ideal = -(n as f64) * cfg.experiments.drift_epsilon * cfg.experiments.drift_j0 * FRAC_1_SQRT_2;
    let q = g.perturbed.cumulative_delta / ideal;
    assert!((0.5..=2.0).contains(&q), "cumulative {} vs {ideal}", g.perturbed.cumulative_delta);
}
