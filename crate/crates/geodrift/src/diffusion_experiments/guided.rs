//! Guided drift along the true extended flow.
//!
//! Between excursions the orbit lies on the invariant cylinder over `γ`,
//! where the flow is `φ̇ = J`, `θ̇ = 1`. Each excursion leaves from a point
//! of the unstable leaf far up the tail of `ξ`, runs through the chart under
//! the full time-dependent flow, and is recaptured on the cylinder at the
//! closest approach on the stable side.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{in_window, Direction, TWO_PI};
use crate::error::{GeoError, Result};
use crate::geodesic_dynamics::{fmt17, ExtendedFlow, ExtendedState, TrajSample, Trajectory};
use crate::hyperbolic_structures::{state_distance, ClosedGeodesic, HomoclinicOrbit};
use crate::jet::dot;
use crate::ode::{brent, IntegratorOptions};
use crate::perturbation::Fluctuation;
use crate::scattering::{predicted_delta_theta, ChannelPhases};
use crate::surface_geometry::sub;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftParams {
    pub excursions: usize,
    /// Window occurrences skipped after a failed capture before giving up.
    pub retries: usize,
    pub window: f64,
    pub m_max: usize,
    /// Arclength along the unstable tail of `ξ` before its mid point where
    /// the orbit leaves the cylinder.
    pub eject_horizon: f64,
    /// Arclength after the mid point searched for the closest approach.
    pub capture_horizon: f64,
    /// Largest phase-space distance to the cylinder accepted at capture.
    pub capture_tol: f64,
    /// Windows are those of the cosine profile, whatever the perturbation.
    pub direction: Direction,
}

impl Default for DriftParams {
    fn default() -> Self {
        DriftParams {
            excursions: 5,
            retries: 8,
            window: 0.05,
            m_max: 1_000_000,
            eject_horizon: 120.0,
            capture_horizon: 60.0,
            capture_tol: 0.2,
            direction: Direction::Down,
        }
    }
}

/// State on the cylinder: foot phase, speed, and time (`θ = θ₀ + t`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CylinderPoint {
    pub phi: f64,
    #[serde(rename = "J")]
    pub j: f64,
    pub t: f64,
    #[serde(rename = "Theta")]
    pub big_theta: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExcursionReport {
    pub index: usize,
    /// Inner iterates between the previous capture and this passage.
    pub inner_iterates: usize,
    pub skipped_windows: usize,
    pub t_eject: f64,
    pub t_capture: f64,
    /// `θ` at the virtual crossing of `{φ = 0}` paired with the passage.
    pub theta_section: f64,
    #[serde(rename = "J_before")]
    pub j_before: f64,
    #[serde(rename = "J_after")]
    pub j_after: f64,
    #[serde(rename = "Theta_before")]
    pub theta_before: f64,
    #[serde(rename = "Theta_after")]
    pub theta_after: f64,
    #[serde(rename = "delta_Theta_measured")]
    pub delta_measured: f64,
    #[serde(rename = "delta_Theta_predicted")]
    pub delta_predicted: f64,
    pub eject_offset: f64,
    pub capture_offset: f64,
    /// Largest `|H + Θ − (H + Θ)(t_eject)|` along the flow segment.
    pub energy_drift: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub epsilon: f64,
    pub start: CylinderPoint,
    pub excursions: Vec<ExcursionReport>,
    pub trajectory: Trajectory,
    /// Excursion index of each trajectory sample.
    pub segment: Vec<usize>,
}

impl DriftReport {
    pub fn cumulative_delta(&self) -> f64 {
        self.excursions.iter().map(|e| e.delta_measured).sum()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "excursion,t,x,y,z,vx,vy,vz,theta,Theta,H,chart")?;
        for (s, k) in self.trajectory.samples.iter().zip(&self.segment) {
            let st = &s.state;
            writeln!(
                w,
                "{k},{},{},{},{},{},{},{},{},{},{},{}",
                fmt17(s.t),
                fmt17(st.z[0]),
                fmt17(st.z[1]),
                fmt17(st.z[2]),
                fmt17(st.v[0]),
                fmt17(st.v[1]),
                fmt17(st.v[2]),
                fmt17(st.theta),
                fmt17(st.big_theta),
                fmt17(s.h),
                s.chart.as_str()
            )?;
        }
        Ok(())
    }

    pub fn write_excursions_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "index,inner_iterates,t_eject,t_capture,theta_section,J_before,J_after,Theta_before,Theta_after,delta_Theta_measured,delta_Theta_predicted,eject_offset,capture_offset,energy_drift"
        )?;
        for e in &self.excursions {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                e.index,
                e.inner_iterates,
                fmt17(e.t_eject),
                fmt17(e.t_capture),
                fmt17(e.theta_section),
                fmt17(e.j_before),
                fmt17(e.j_after),
                fmt17(e.theta_before),
                fmt17(e.theta_after),
                fmt17(e.delta_measured),
                fmt17(e.delta_predicted),
                fmt17(e.eject_offset),
                fmt17(e.capture_offset),
                fmt17(e.energy_drift)
            )?;
        }
        Ok(())
    }
}

/// Foot phase on `γ` of the point of `γ` closest to `z` in position, with
/// the tangent check on velocity, and the phase-space distance to it.
pub fn cylinder_projection(
    fl: &Fluctuation,
    geodesic: &ClosedGeodesic,
    y: &[f64; 6],
    opts: &IntegratorOptions,
) -> Result<(f64, f64)> {
    let j = dot(&[y[3], y[4], y[5]], &[y[3], y[4], y[5]]).sqrt();
    let unit = |y: &[f64; 6]| -> [f64; 6] { [y[0], y[1], y[2], y[3] / j, y[4] / j, y[5] / j] };
    let u = unit(y);
    let n = geodesic.samples.len();
    let (k, _) = geodesic
        .samples
        .iter()
        .enumerate()
        .map(|(k, s)| (k, state_distance(s, &u)))
        .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
    let dphi = TWO_PI / n as f64;
    let g = |phi: f64| -> f64 {
        match geodesic.state_at_phase(fl.surface, phi, opts) {
            Ok(s) => dot(&sub(&[u[0], u[1], u[2]], &[s[0], s[1], s[2]]), &[s[3], s[4], s[5]]),
            Err(_) => f64::NAN,
        }
    };
    let (a, b) = (k as f64 * dphi - 2.0 * dphi, k as f64 * dphi + 2.0 * dphi);
    let (ga, gb) = (g(a), g(b));
    if !(ga * gb < 0.0) {
        return Err(GeoError::CaptureFailed("closest point on the cylinder not bracketed".into()));
    }
    let phi = brent(g, a, b, ga, gb, 1e-14).rem_euclid(TWO_PI);
    let s = geodesic.state_at_phase(fl.surface, phi, opts)?;
    Ok((phi, state_distance(&s, &u)))
}

struct Candidate {
    m: usize,
    t_section: f64,
}

/// Iterates the inner map from a cylinder point and returns the first
/// crossing of `{φ = 0}` in the jump window no earlier than `not_before`.
fn next_window(
    p: &CylinderPoint,
    theta0: f64,
    phases: &ChannelPhases,
    params: &DriftParams,
    not_before: f64,
    skip: usize,
) -> Result<Candidate> {
    let period = TWO_PI / p.j;
    let mut t = p.t + (TWO_PI - p.phi.rem_euclid(TWO_PI)) / p.j;
    let mut hits = 0;
    for m in 0..=params.m_max {
        if t >= not_before && in_window(theta0 + t, params.direction, p.j, phases, params.window) {
            if hits == skip {
                return Ok(Candidate { m, t_section: t });
            }
            hits += 1;
        }
        t += period;
    }
    Err(GeoError::WindowUnreachable(params.m_max))
}

/// `θ₀` placing the first admissible crossing of `{φ = 0}` after `start`
/// at the centre of the jump window.
pub fn aligned_theta0(start: &CylinderPoint, phases: &ChannelPhases, params: &DriftParams) -> f64 {
    let not_before = start.t + (params.eject_horizon - phases.a_minus) / start.j;
    let period = TWO_PI / start.j;
    let mut t = start.t + (TWO_PI - start.phi.rem_euclid(TWO_PI)) / start.j;
    if t < not_before {
        t += ((not_before - t) / period).ceil() * period;
    }
    super::jump_phase(params.direction, start.j, phases) - t
}

/// Runs `params.excursions` excursions of the extended flow of `fl` from a
/// point of the cylinder, choosing each ejection so that the passage falls
/// in the jump window of `params.direction`.
#[allow(clippy::too_many_arguments)]
pub fn guided_drift_simulation(
    fl: &Fluctuation,
    geodesic: &ClosedGeodesic,
    homoclinic: &HomoclinicOrbit,
    phases: &ChannelPhases,
    start: CylinderPoint,
    theta0: f64,
    params: &DriftParams,
    opts: &IntegratorOptions,
) -> Result<DriftReport> {
    let eps = fl.spec.epsilon;
    let h_in = params.eject_horizon;
    let y_eject = homoclinic.state_at(fl.surface, -h_in, opts)?;
    let phi_eject = phases.a_minus - h_in;
    let foot = geodesic.state_at_phase(fl.surface, phi_eject, opts)?;
    let eject_offset = state_distance(&foot, &y_eject);

    let mut report = DriftReport { epsilon: eps, start, excursions: Vec::new(), trajectory: Trajectory::default(), segment: Vec::new() };
    let mut p = start;
    for index in 0..params.excursions {
        let mut attempt = 0;
        let excursion = loop {
            let not_before = p.t + (h_in - phases.a_minus) / p.j;
            let cand = next_window(&p, theta0, phases, params, not_before, attempt)?;
            let j = p.j;
            let t_eject = cand.t_section + phi_eject / j;
            let theta_e = theta0 + t_eject;
            let st = ExtendedState::new(
                [y_eject[0], y_eject[1], y_eject[2]],
                [j * y_eject[3], j * y_eject[4], j * y_eject[5]],
                theta_e,
                p.big_theta,
            );
            match run_excursion(fl, geodesic, &st, t_eject, params, opts) {
                Ok((samples, cap_t, cap_phi, cap_dist, end, drift)) => {
                    let predicted = predicted_delta_theta(fl.spec, phases, phi_eject, j, theta_e);
                    let rep = ExcursionReport {
                        index,
                        inner_iterates: cand.m,
                        skipped_windows: attempt,
                        t_eject,
                        t_capture: cap_t,
                        theta_section: theta0 + cand.t_section,
                        j_before: j,
                        j_after: end.speed(),
                        theta_before: p.big_theta,
                        theta_after: end.big_theta,
                        delta_measured: end.big_theta - p.big_theta,
                        delta_predicted: predicted,
                        eject_offset,
                        capture_offset: cap_dist,
                        energy_drift: drift,
                    };
                    for s in samples {
                        report.trajectory.samples.push(s);
                        report.segment.push(index);
                    }
                    p = CylinderPoint { phi: cap_phi, j: end.speed(), t: cap_t, big_theta: end.big_theta };
                    break rep;
                }
                Err(GeoError::CaptureFailed(msg)) => {
                    attempt += 1;
                    if attempt > params.retries {
                        return Err(GeoError::CaptureFailed(format!("excursion {index}: {msg}")));
                    }
                }
                Err(e) => return Err(e),
            }
        };
        report.excursions.push(excursion);
    }
    Ok(report)
}

type ExcursionOutcome = (Vec<TrajSample>, f64, f64, f64, ExtendedState, f64);

fn run_excursion(
    fl: &Fluctuation,
    geodesic: &ClosedGeodesic,
    st: &ExtendedState,
    t_eject: f64,
    params: &DriftParams,
    opts: &IntegratorOptions,
) -> Result<ExcursionOutcome> {
    let j = st.speed();
    let mut flow = ExtendedFlow::new(*fl, fl.spec.epsilon, st, t_eject, 1.0, *opts)?;
    let t_mid = t_eject + params.eject_horizon / j;
    let t_end = t_mid + params.capture_horizon / j;
    let first = flow.sample()?;
    let e0 = first.h + first.state.big_theta;
    let mut samples = vec![first];
    let mut drift: f64 = 0.0;
    let mut best: Option<(usize, f64)> = None;
    while flow.t() < t_end {
        flow.step(Some(t_end))?;
        let s = flow.sample()?;
        drift = drift.max((s.h + s.state.big_theta - e0).abs());
        if flow.passages > 0 && s.t > t_mid {
            let y = s.state.pack();
            let u = [y[0], y[1], y[2], y[3] / j, y[4] / j, y[5] / j];
            let d = geodesic.samples.iter().map(|g| state_distance(g, &u)).fold(f64::INFINITY, f64::min);
            if best.map_or(true, |(_, b)| d < b) {
                best = Some((samples.len(), d));
            }
        }
        samples.push(s);
    }
    if flow.passages == 0 {
        return Err(GeoError::LostChannel("no chart passage during the excursion".into()));
    }
    let (k, _) = best.ok_or_else(|| GeoError::CaptureFailed("no approach to the cylinder".into()))?;
    samples.truncate(k + 1);
    let cap = samples[k].clone();
    let (phi, dist) = cylinder_projection(fl, geodesic, &cap.state.pack(), opts)?;
    if dist > params.capture_tol {
        return Err(GeoError::CaptureFailed(format!("closest approach {dist:.3e}")));
    }
    Ok((samples, cap.t, phi, dist, cap.state, drift))
}
