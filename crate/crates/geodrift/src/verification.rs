//! Measurements behind the acceptance properties, each judged against its
//! stated bound. Shared by `verify-all` and the test suites.

use std::time::Instant;

use nalgebra::{Matrix2, Vector2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::diffusion_experiments::{
    build_transition_chain, guided_drift_simulation, time_scaling_study, verify_foliation_transversality, verify_inner_map,
    aligned_theta0, ChainMode, ChainRecord, CylinderPoint, DriftReport, ExcursionReport, InnerMapReport, TimingReport,
    TransversalityReport,
};
use crate::error::{GeoError, Result};
use crate::geodesic_dynamics::{flow_static, ChartField, integrate_extended, integrate_static, unpack, ExtendedState};
use crate::hyperbolic_structures::{crossing_search, eig2, return_map};
use crate::ode::Stepper;
use crate::perturbation::Fluctuation;
use crate::pipeline::{chain_params, chain_start, drift_params, timing_params, Setup};
use crate::scattering::{loglog_slope, measure_scattering, remainder_estimate, uniform_thetas, ChannelPhases, RemainderEstimate};
use crate::surface_geometry::{norm, sub};

/// One judged quantity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub bound: String,
    pub pass: bool,
}

impl Check {
    pub fn le(name: &str, value: f64, bound: f64) -> Self {
        Check { name: name.into(), value, bound: format!("≤ {bound:e}"), pass: value <= bound }
    }

    pub fn ge(name: &str, value: f64, bound: f64) -> Self {
        Check { name: name.into(), value, bound: format!("≥ {bound:e}"), pass: value >= bound }
    }

    pub fn within(name: &str, value: f64, lo: f64, hi: f64) -> Self {
        Check { name: name.into(), value, bound: format!("∈ [{lo}, {hi}]"), pass: value >= lo && value <= hi }
    }

    pub fn holds(name: &str, ok: bool) -> Self {
        Check { name: name.into(), value: f64::from(u8::from(ok)), bound: "true".into(), pass: ok }
    }

    pub fn info(name: &str, value: f64) -> Self {
        Check { name: name.into(), value, bound: "reported".into(), pass: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriterionReport {
    pub id: usize,
    pub title: String,
    pub seconds: f64,
    pub checks: Vec<Check>,
    /// Module error name when the measurement itself failed.
    pub error: Option<String>,
    pub data: serde_json::Value,
}

impl CriterionReport {
    pub fn pass(&self) -> bool {
        self.error.is_none() && self.checks.iter().all(|c| c.pass)
    }
}

fn judged<M: Serialize>(
    id: usize,
    title: &str,
    limit_seconds: Option<f64>,
    run: impl FnOnce() -> Result<M>,
    judge: impl FnOnce(&M) -> Vec<Check>,
) -> CriterionReport {
    let t = Instant::now();
    let out = run();
    let seconds = t.elapsed().as_secs_f64();
    let mut rep = CriterionReport {
        id,
        title: title.into(),
        seconds,
        checks: Vec::new(),
        error: None,
        data: serde_json::Value::Null,
    };
    match out {
        Ok(m) => {
            rep.checks = judge(&m);
            rep.data = serde_json::to_value(&m).unwrap_or(serde_json::Value::Null);
        }
        Err(e) => rep.error = Some(format!("{}: {e}", e.name())),
    }
    if let Some(lim) = limit_seconds {
        rep.checks.push(Check::le("runtime_seconds", seconds, lim));
    }
    rep
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conservation {
    pub arclength: f64,
    pub static_max_q: f64,
    pub static_speed_drift: f64,
    pub extended_epsilon: f64,
    pub extended_energy_drift: f64,
    pub extended_passages: usize,
}

/// Unit-speed static run from `ξ(0)` and extended run from `ξ(−5)`.
pub fn conservation(setup: &Setup, cfg: &RunConfig, arclength: f64) -> Result<Conservation> {
    let s = setup.surface();
    let opts = &cfg.solver;
    let (z, v) = unpack(&setup.homoclinic.seed());
    let traj = integrate_static(s, &ExtendedState::from_static(z, v), arclength, opts)?;
    let static_max_q = traj.samples.iter().map(|p| s.q(&p.state.z).abs()).fold(0.0, f64::max);
    let static_speed_drift = traj.samples.iter().map(|p| (p.state.speed() - 1.0).abs()).fold(0.0, f64::max);

    let fl = Fluctuation::new(s, &setup.chart, &setup.spec)?;
    let y = setup.homoclinic.state_at(s, -5.0, opts)?;
    let (z, v) = unpack(&y);
    let st = ExtendedState::new(z, v, 0.0, 0.0);
    let e0 = 0.5;
    let traj = integrate_extended(&fl, setup.spec.epsilon, &st, arclength, opts)?;
    let extended_energy_drift = traj.samples.iter().map(|p| (p.h + p.state.big_theta - e0).abs()).fold(0.0, f64::max);
    let mut passages = 0;
    for w in traj.samples.windows(2) {
        if w[0].chart != w[1].chart && w[1].chart == crate::geodesic_dynamics::ChartTag::Fermi {
            passages += 1;
        }
    }
    Ok(Conservation {
        arclength,
        static_max_q,
        static_speed_drift,
        extended_epsilon: setup.spec.epsilon,
        extended_energy_drift,
        extended_passages: passages,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperbolicity {
    pub length: f64,
    pub periodicity_residual: f64,
    pub multipliers: [f64; 2],
    pub product_defect: f64,
    pub lambda: f64,
    /// `λ` from central differences of the return map.
    pub lambda_difference_quotient: f64,
}

/// Leading multiplier of the reduced return map from central differences
/// with step `h`.
pub fn return_map_multiplier(setup: &Setup, cfg: &RunConfig, h: f64) -> Result<f64> {
    let g = setup.geodesic();
    let s = setup.surface();
    let search = crossing_search(g.length_l, s);
    let x = g.section_point;
    let mut m = Matrix2::zeros();
    for k in 0..2 {
        let mut xp = x;
        let mut xm = x;
        xp[k] += h;
        xm[k] -= h;
        let (fp, _) = return_map(s, &g.section, &xp, &cfg.solver, &search)?;
        let (fm, _) = return_map(s, &g.section, &xm, &cfg.solver, &search)?;
        for i in 0..2 {
            m[(i, k)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    let (mult, _) = eig2(&m).ok_or(GeoError::NotHyperbolic(1.0))?;
    Ok(mult[0].abs().max(mult[1].abs()))
}

pub fn hyperbolicity(setup: &Setup, cfg: &RunConfig) -> Result<Hyperbolicity> {
    let g = setup.geodesic();
    let [a, b] = g.multipliers;
    Ok(Hyperbolicity {
        length: g.length_l,
        periodicity_residual: g.periodicity_residual,
        multipliers: g.multipliers,
        product_defect: (a * b - 1.0).abs(),
        lambda: g.floquet_multiplier,
        lambda_difference_quotient: return_map_multiplier(setup, cfg, 1e-5)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HomoclinicChecks {
    pub transversality_angle: f64,
    pub angle_floor: f64,
    pub fit_residual_minus: f64,
    pub fit_residual_plus: f64,
    pub fit_window: f64,
    pub delta: f64,
    pub delta_doubled_window: f64,
    pub delta_speed_two: f64,
}

pub fn homoclinic_checks(setup: &Setup, cfg: &RunConfig) -> Result<HomoclinicChecks> {
    let h = &setup.homoclinic;
    let w = h.search.fit_window;
    let (_, _, d2) = h.phases(setup.geodesic(), 2.0 * w, 0.0)?;
    let (_, _, dj) = h.phases_at_speed(setup.surface(), setup.geodesic(), 2.0, w, &cfg.solver)?;
    Ok(HomoclinicChecks {
        transversality_angle: h.transversality_angle,
        angle_floor: h.search.angle_floor,
        fit_residual_minus: h.fit_minus.residual,
        fit_residual_plus: h.fit_plus.residual,
        fit_window: w,
        delta: h.delta,
        delta_doubled_window: d2,
        delta_speed_two: dj,
    })
}

/// Difference of two angles in `(−π, π]`.
pub fn angle_gap(a: f64, b: f64) -> f64 {
    crate::diffusion_experiments::wrap_pi(a - b)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FermiIdentities {
    pub axis_metric_deviation: f64,
    pub round_trip: f64,
    pub chart_vs_ambient: f64,
    pub flow_time: f64,
}

/// Chart flow at `ε = 0` against the ambient flow over time `t`, from a
/// few chart points and directions.
pub fn chart_vs_ambient(setup: &Setup, cfg: &RunConfig, t: f64) -> Result<f64> {
    let s = setup.surface();
    let chart = &setup.chart;
    let fl = Fluctuation::new(s, chart, &setup.spec)?;
    let field = ChartField { fl, epsilon: 0.0 };
    let mut opts = cfg.solver;
    opts.projection_enabled = false;
    let mut worst: f64 = 0.0;
    for (f0, f1, ang) in [(-0.25, 0.15, 0.0), (0.12, -0.25, 0.4), (0.4, 0.0, -0.3), (0.0, 0.3, std::f64::consts::PI)] {
        let x = [f0 * chart.delta0, f1 * chart.delta1];
        let p = [ang.cos(), ang.sin()];
        let (z, v) = chart.to_ambient(s, &x, &p)?;
        let sp = norm(&v);
        let v = [v[0] / sp, v[1] / sp, v[2] / sp];
        let (xc, eta) = chart.to_chart(s, &z, &v)?;
        let mut st = Stepper::new(&field, 0.0, [xc[0], xc[1], eta[0], eta[1], 0.0, 0.0], 1.0, opts);
        while st.t < t {
            st.step(&field, Some(t))?;
        }
        let g = chart.static_metric(s, &[st.y[0], st.y[1]]);
        let xd = g.try_inverse().ok_or(GeoError::OutsideChart)? * Vector2::new(st.y[2], st.y[3]);
        let (zc, vc) = chart.to_ambient(s, &[st.y[0], st.y[1]], &[xd[0], xd[1]])?;
        let (za, va) = flow_static(s, &z, &v, t, &cfg.solver)?;
        worst = worst.max(norm(&sub(&zc, &za))).max(norm(&sub(&vc, &va)));
    }
    Ok(worst)
}

pub fn fermi_identities(setup: &Setup, cfg: &RunConfig) -> Result<FermiIdentities> {
    let s = setup.surface();
    let chart = &setup.chart;
    let mut axis: f64 = 0.0;
    for k in 0..=40 {
        let x0 = chart.delta0 * (k as f64 / 20.0 - 1.0);
        let g = chart.static_metric(s, &[x0, 0.0]);
        axis = axis.max((g - Matrix2::identity()).abs().max());
    }
    let n = 20;
    let mut rt: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let u = |k: usize| 2.0 * (k as f64 + 0.5) / n as f64 - 1.0;
            let x = [chart.delta0 * u(i), chart.delta1 * u(j)];
            let z = chart.fermi_forward(s, &x)?;
            let xi = chart.fermi_inverse(s, &z)?;
            rt = rt.max((xi[0] - x[0]).abs().max((xi[1] - x[1]).abs()));
        }
    }
    let t = 0.1;
    Ok(FermiIdentities { axis_metric_deviation: axis, round_trip: rt, chart_vs_ambient: chart_vs_ambient(setup, cfg, t)?, flow_time: t })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Realization {
    pub epsilons: Vec<f64>,
    /// `sup |(g_ε − g)₀₀/ε − 2αρ χ|` over the axis, per `ε`.
    pub sups: Vec<f64>,
    /// Consecutive ratios `sup(ε) / sup(ε/2)`.
    pub ratios: Vec<f64>,
}

pub fn realization(setup: &Setup, epsilons: &[f64]) -> Result<Realization> {
    let s = setup.surface();
    let chart = &setup.chart;
    let spec = &setup.spec;
    let fl = Fluctuation::new(s, chart, spec)?;
    let sups = epsilons
        .par_iter()
        .map(|&eps| -> Result<f64> {
            let mut sup: f64 = 0.0;
            for k in 0..=80 {
                let x0 = chart.delta0 * (k as f64 / 40.0 - 1.0);
                for th in [0.0, 1.0, 2.5] {
                    let md = fl.metric_data(eps, &[x0, 0.0], th)?;
                    let r = (md.ge[(0, 0)] - md.g[(0, 0)]) / eps - spec.reference_gbar00(&[x0, 0.0], th);
                    sup = sup.max(r.abs());
                }
            }
            Ok(sup)
        })
        .collect::<Result<Vec<_>>>()?;
    let ratios = sups.windows(2).map(|w| w[0] / w[1]).collect();
    Ok(Realization { epsilons: epsilons.to_vec(), sups, ratios })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScatteringLaw {
    #[serde(rename = "J")]
    pub j: f64,
    pub epsilons: Vec<f64>,
    /// `sup_θ |ΔΘ_measured − ΔΘ_predicted|` per `ε`.
    pub residuals: Vec<f64>,
    pub slope: f64,
    pub remainders: Vec<RemainderEstimate>,
    pub floor: f64,
    pub ratios_r0: Vec<f64>,
    pub ratios_r1: Vec<f64>,
}

pub fn scattering_law(setup: &Setup, cfg: &RunConfig, j: f64) -> Result<ScatteringLaw> {
    let e = &cfg.experiments;
    let phases = ChannelPhases::new(&setup.homoclinic, setup.geodesic());
    let jobs: Vec<(f64, f64)> = e.scattering_epsilons.iter().flat_map(|&eps| e.scattering_thetas.iter().map(move |&th| (eps, th))).collect();
    let res = jobs
        .par_iter()
        .map(|&(eps, th)| -> Result<f64> {
            let sp = setup.spec.with_epsilon(eps);
            let fl = Fluctuation::new(setup.surface(), &setup.chart, &sp)?;
            Ok(measure_scattering(&fl, &setup.homoclinic, &phases, [e.scattering_phi, j, th, 0.0], 5.0, &cfg.solver)?.residual)
        })
        .collect::<Result<Vec<_>>>()?;
    let n = e.scattering_thetas.len();
    let residuals: Vec<f64> = res.chunks(n).map(|c| c.iter().copied().fold(0.0, f64::max)).collect();
    let slope = loglog_slope(&e.scattering_epsilons, &residuals);
    let remainders =
        remainder_estimate(&setup.spec, &phases, &e.remainder_rhos, &e.remainder_speeds, &uniform_thetas(e.remainder_theta_count));
    let ratios_r0 = remainders.windows(2).map(|w| w[0].sup_r0 / w[1].sup_r0).collect();
    let ratios_r1 = remainders.windows(2).map(|w| w[0].sup_r1 / w[1].sup_r1).collect();
    Ok(ScatteringLaw {
        j,
        epsilons: e.scattering_epsilons.clone(),
        residuals,
        slope,
        remainders,
        floor: 1.0 / (2.0 * std::f64::consts::SQRT_2),
        ratios_r0,
        ratios_r1,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainChecks {
    pub epsilon: f64,
    #[serde(rename = "J0")]
    pub j0: f64,
    pub target_drop: f64,
    pub jumps: usize,
    pub final_drop: f64,
    pub monotone: bool,
    pub bookkeeping_error: f64,
    pub c_star: f64,
    pub cycle_extrema: Vec<(f64, f64)>,
    #[serde(skip)]
    pub diffusive: Option<ChainRecord>,
    #[serde(skip)]
    pub oscillatory: Option<ChainRecord>,
}

/// Largest `|J²ₙ₊₁ − J²ₙ + 2ΔΘₙ|` over the jumps of a chain; for a
/// monotone decreasing chain this is the `2|ΔΘₙ|` form.
pub fn bookkeeping_error(rec: &ChainRecord) -> f64 {
    rec.jumps()
        .map(|s| {
            let (a, b) = (s.before.speed(), s.after.speed());
            (b * b - a * a + 2.0 * (s.after.big_theta - s.before.big_theta)).abs()
        })
        .fold(0.0, f64::max)
}

pub fn chains(setup: &Setup, cfg: &RunConfig) -> Result<ChainChecks> {
    let e = &cfg.experiments;
    let phases = ChannelPhases::new(&setup.homoclinic, setup.geodesic());
    let spec = setup.spec.with_epsilon(e.chain_epsilon);
    let params = chain_params(cfg);
    let start = chain_start(&phases, e.chain_j0);
    let rec = build_transition_chain(&start, &spec, &phases, ChainMode::Diffusive, e.chain_max_jumps, &params)?;
    let monotone = rec.jumps().all(|s| s.after.big_theta < s.before.big_theta);
    let last = rec.final_state().unwrap_or(start);
    let osc = build_transition_chain(&start, &spec, &phases, ChainMode::Oscillatory, e.chain_max_jumps, &params)?;
    Ok(ChainChecks {
        epsilon: e.chain_epsilon,
        j0: e.chain_j0,
        target_drop: e.chain_target_drop,
        jumps: rec.jumps().count(),
        final_drop: start.big_theta - last.big_theta,
        monotone,
        bookkeeping_error: bookkeeping_error(&rec).max(bookkeeping_error(&osc)),
        c_star: start.big_theta,
        cycle_extrema: osc.cycle_extrema(),
        diffusive: Some(rec),
        oscillatory: Some(osc),
    })
}

/// Nonincreasing sequence test.
pub fn nonincreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] <= w[0])
}

/// Excursion records of one guided run, without the trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftSummary {
    pub epsilon: f64,
    pub excursions: Vec<ExcursionReport>,
    pub cumulative_delta: f64,
}

impl From<DriftReport> for DriftSummary {
    fn from(r: DriftReport) -> Self {
        DriftSummary { epsilon: r.epsilon, cumulative_delta: r.cumulative_delta(), excursions: r.excursions }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuidedDrift {
    pub perturbed: DriftSummary,
    pub reversed: DriftSummary,
    pub control: DriftSummary,
    pub requested: usize,
}

impl GuidedDrift {
    /// `ΔΘ_measured / ΔΘ_predicted` per excursion of the perturbed run.
    pub fn ratios(&self) -> Vec<f64> {
        self.perturbed.excursions.iter().map(|x| x.delta_measured / x.delta_predicted).collect()
    }

    pub fn control_max(&self) -> f64 {
        self.control.excursions.iter().map(|x| x.delta_measured.abs()).fold(0.0, f64::max)
    }
}

/// Guided runs with `χ`, with `−χ`, and at `ε = 0`.
pub fn guided_drift(setup: &Setup, cfg: &RunConfig) -> Result<GuidedDrift> {
    let e = &cfg.experiments;
    let phases = ChannelPhases::new(&setup.homoclinic, setup.geodesic());
    let params = drift_params(cfg);
    let start = CylinderPoint { phi: 0.0, j: e.drift_j0, t: 0.0, big_theta: 0.0 };
    let theta0 = aligned_theta0(&start, &phases, &params);
    let chi = setup.spec.chi;
    let runs = [(e.drift_epsilon, chi), (e.drift_epsilon, chi.negated()), (0.0, chi)];
    let mut out = runs
        .par_iter()
        .map(|&(eps, chi)| -> Result<DriftSummary> {
            let sp = setup.spec.with_epsilon(eps).with_chi(chi);
            let fl = Fluctuation::new(setup.surface(), &setup.chart, &sp)?;
            Ok(guided_drift_simulation(&fl, setup.geodesic(), &setup.homoclinic, &phases, start, theta0, &params, &cfg.solver)?
                .into())
        })
        .collect::<Result<Vec<_>>>()?;
    let control = out.pop().expect("three runs");
    let reversed = out.pop().expect("three runs");
    let perturbed = out.pop().expect("three runs");
    Ok(GuidedDrift { perturbed, reversed, control, requested: e.drift_excursions })
}

pub fn inner_map(setup: &Setup, cfg: &RunConfig) -> Result<InnerMapReport> {
    let e = &cfg.experiments;
    verify_inner_map(setup.surface(), setup.geodesic(), e.inner_energy, &e.inner_speeds, 1e-3, &cfg.solver)
}

pub fn transversality(setup: &Setup, cfg: &RunConfig) -> Result<TransversalityReport> {
    let e = &cfg.experiments;
    let phases = ChannelPhases::new(&setup.homoclinic, setup.geodesic());
    verify_foliation_transversality(&setup.spec, &phases, &e.scattering_speeds, e.window, e.transversality_samples)
}

pub fn timing(setup: &Setup, cfg: &RunConfig) -> Result<TimingReport> {
    let phases = ChannelPhases::new(&setup.homoclinic, setup.geodesic());
    time_scaling_study(&setup.spec, &phases, &timing_params(cfg))
}

/// Every criterion, measured and judged in order.
pub fn verify_all(setup: &Setup, cfg: &RunConfig) -> Vec<CriterionReport> {
    let mut out = Vec::new();
    out.push(judged(
        1,
        "conservation",
        Some(60.0),
        || conservation(setup, cfg, 1000.0),
        |m| {
            vec![
                Check::le("static_max_abs_q", m.static_max_q, 1e-9),
                Check::le("static_relative_speed_drift", m.static_speed_drift, 1e-9),
                Check::le("extended_energy_drift", m.extended_energy_drift, 1e-8),
            ]
        },
    ));
    out.push(judged(
        2,
        "hyperbolicity",
        None,
        || hyperbolicity(setup, cfg),
        |m| {
            vec![
                Check::le("periodicity_residual", m.periodicity_residual, 1e-10),
                Check::le("multiplier_product_defect", m.product_defect, 1e-8),
                Check::ge("lambda", m.lambda, 1.01),
                Check::le("lambda_vs_difference_quotient", (m.lambda - m.lambda_difference_quotient).abs(), 1e-6),
            ]
        },
    ));
    out.push(judged(
        3,
        "homoclinic",
        None,
        || homoclinic_checks(setup, cfg),
        |m| {
            vec![
                Check::ge("angle_over_floor", m.transversality_angle / m.angle_floor, 1.0),
                Check::le("fit_residual_minus", m.fit_residual_minus, 0.1),
                Check::le("fit_residual_plus", m.fit_residual_plus, 0.1),
                Check::le("delta_window_doubling", angle_gap(m.delta, m.delta_doubled_window).abs(), 1e-6),
                Check::le("delta_speed_doubling", angle_gap(m.delta, m.delta_speed_two).abs(), 1e-8),
            ]
        },
    ));
    out.push(judged(
        4,
        "fermi_identities",
        None,
        || fermi_identities(setup, cfg),
        |m| {
            vec![
                Check::le("axis_metric_deviation", m.axis_metric_deviation, 1e-6),
                Check::le("round_trip", m.round_trip, 1e-8),
                Check::le("chart_vs_ambient", m.chart_vs_ambient, 1e-7),
            ]
        },
    ));
    out.push(judged(
        5,
        "realization",
        Some(120.0),
        || realization(setup, &[4e-3, 2e-3, 1e-3]),
        |m| m.ratios.iter().enumerate().map(|(k, r)| Check::within(&format!("ratio_{k}"), *r, 1.5, 3.0)).collect(),
    ));
    out.push(judged(
        6,
        "scattering_law",
        Some(600.0),
        || scattering_law(setup, cfg, 1.0),
        |m| {
            let mut c = vec![Check::within("residual_slope", m.slope, 1.7, 2.3)];
            if let Some(r) = m.remainders.first() {
                c.push(Check::le("sup_r0_working_rho", r.sup_r0, m.floor));
                c.push(Check::le("sup_r1_working_rho", r.sup_r1, m.floor));
            }
            if let (Some(a), Some(b)) = (m.ratios_r0.first(), m.ratios_r1.first()) {
                c.push(Check::within("r0_ratio_rho_halved", *a, 1.5, 3.0));
                c.push(Check::within("r1_ratio_rho_halved", *b, 1.5, 3.0));
            }
            c
        },
    ));
    out.push(judged(
        7,
        "inner_map",
        None,
        || inner_map(setup, cfg),
        |m| {
            let worst = m.returns.iter().map(|r| (r.return_time - r.expected).abs()).fold(0.0, f64::max);
            vec![Check::le("return_time_error", worst, 1e-8), Check::le("twist_ratio_error", (m.twist_ratio - 8.0).abs(), 1e-3)]
        },
    ));
    out.push(judged(
        8,
        "transversality",
        None,
        || transversality(setup, cfg),
        |m| vec![Check::ge("min_margin", m.min_margin, 1.0), Check::le("decomposition_residual", m.max_residual, 1e-12)],
    ));
    out.push(judged(
        9,
        "chains",
        Some(60.0),
        || chains(setup, cfg),
        |m| {
            let maxes: Vec<f64> = m.cycle_extrema.iter().map(|e| e.0).collect();
            let mins: Vec<f64> = m.cycle_extrema.iter().map(|e| e.1).collect();
            let worst_max = maxes.iter().map(|x| (x - m.c_star).abs()).fold(0.0, f64::max);
            vec![
                Check::ge("final_drop", m.final_drop, m.target_drop),
                Check::le("jumps", m.jumps as f64, 1415.0),
                Check::holds("strictly_monotone", m.monotone),
                Check::le("bookkeeping_error", m.bookkeeping_error, 1e-9),
                Check::le("cycle_max_distance_to_c_star", worst_max, 1.0),
                Check::holds("cycle_min_nonincreasing", nonincreasing(&mins)),
                Check::ge("cycles", m.cycle_extrema.len() as f64, cfg.experiments.oscillatory_cycles as f64),
            ]
        },
    ));
    out.push(judged(
        10,
        "guided_drift",
        Some(900.0),
        || guided_drift(setup, cfg),
        |m| {
            let mut c = vec![
                Check::ge("excursions", m.perturbed.excursions.len() as f64, m.requested as f64),
                Check::holds("cumulative_negative", m.perturbed.cumulative_delta < 0.0),
            ];
            for (k, r) in m.ratios().iter().enumerate() {
                c.push(Check::within(&format!("ratio_to_prediction_{k}"), *r, 0.5, 2.0));
            }
            c.push(Check::le("control_max_abs_delta", m.control_max(), 1e-8));
            c.push(Check::info("reversed_cumulative", m.reversed.cumulative_delta));
            c
        },
    ));
    out.push(judged(
        11,
        "timing",
        None,
        || timing(setup, cfg),
        |m| vec![Check::within("epsilon_exponent", m.epsilon_exponent, -1.3, -0.7), Check::info("j_exponent", m.j_exponent)],
    ));
    out
}

