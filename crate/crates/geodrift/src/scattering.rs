//! First-order scattering map by quadrature, the measured scattering map by
//! direct integration, and the finite-width remainders.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};
use crate::geodesic_dynamics::{fmt17, ExtendedFlow, ExtendedState};
use crate::hyperbolic_structures::{ClosedGeodesic, HomoclinicOrbit};
use crate::jet::dot;
use crate::ode::{brent, IntegratorOptions};
use crate::perturbation::{Fluctuation, PerturbationSpec};
use crate::quadrature::integrate;
use crate::surface_geometry::{norm, sub, V3};

const QUAD_TOL: f64 = 1e-13;

/// Asymptotic phases of the homoclinic expressed in arclength (equal to the
/// phases in radians when the closed geodesic has length 2π).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelPhases {
    pub a_minus: f64,
    pub a_plus: f64,
    /// Length of the closed geodesic.
    pub period: f64,
}

impl ChannelPhases {
    pub fn new(homoclinic: &HomoclinicOrbit, geodesic: &ClosedGeodesic) -> Self {
        ChannelPhases {
            a_minus: homoclinic.a_minus / geodesic.phase_scale,
            a_plus: homoclinic.a_plus / geodesic.phase_scale,
            period: geodesic.length_l,
        }
    }

    /// `Δ = a₊ − a₋` reduced to `[0, L)`.
    pub fn delta(&self) -> f64 {
        (self.a_plus - self.a_minus).rem_euclid(self.period)
    }
}

/// `∫ αρ(φ + tJ − a) f(θ + t) J² dt` over the support window.
fn kernel_integral<F: Fn(f64) -> f64>(spec: &PerturbationSpec, a: f64, phi: f64, j: f64, theta: f64, f: F) -> f64 {
    let lo = (a - phi - spec.rho) / j;
    let hi = (a - phi + spec.rho) / j;
    j * j * integrate(|t| spec.alpha_rho(phi + t * j - a) * f(theta + t), lo, hi, QUAD_TOL * j * j)
}

/// `S*(φ, J, θ) = ∫ αρ(φ + tJ − a₊) χ(θ + t) J² dt`.
pub fn melnikov_potential(spec: &PerturbationSpec, phases: &ChannelPhases, phi: f64, j: f64, theta: f64) -> f64 {
    kernel_integral(spec, phases.a_plus, phi, j, theta, |s| spec.chi.eval(s))
}

/// `−ε ∂S*/∂θ(φ + Δ, J, θ) = −ε J² ∫ αρ(φ + tJ − a₋) χ′(θ + t) dt`.
pub fn predicted_delta_theta(spec: &PerturbationSpec, phases: &ChannelPhases, phi: f64, j: f64, theta: f64) -> f64 {
    -spec.epsilon * kernel_integral(spec, phases.a_minus, phi, j, theta, |s| spec.chi.deriv(s, 1))
}

/// The `ρ → 0` form `−ε J χ′(θ + (a₋ − φ)/J)`.
pub fn predicted_delta_theta_limit(spec: &PerturbationSpec, phases: &ChannelPhases, phi: f64, j: f64, theta: f64) -> f64 {
    -spec.epsilon * j * spec.chi.deriv(theta + (phases.a_minus - phi) / j, 1)
}

/// `R⁰ρ` (`order = 1`) and `R¹ρ` (`order = 2`):
/// `J ∫ αρ(φ + tJ − a₋) χ⁽ᵏ⁾(θ + t) dt − χ⁽ᵏ⁾(θ + (a₋ − φ)/J)`.
pub fn remainder(spec: &PerturbationSpec, phases: &ChannelPhases, phi: f64, j: f64, theta: f64, order: u32) -> f64 {
    kernel_integral(spec, phases.a_minus, phi, j, theta, |s| spec.chi.deriv(s, order)) / j
        - spec.chi.deriv(theta + (phases.a_minus - phi) / j, order)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RemainderEstimate {
    pub rho: f64,
    pub sup_r0: f64,
    pub sup_r1: f64,
}

/// Sup of `|R⁰ρ|`, `|R¹ρ|` at `φ = 0` over the `(J, θ)` grid, per `ρ`.
pub fn remainder_estimate(
    spec: &PerturbationSpec,
    phases: &ChannelPhases,
    rhos: &[f64],
    speeds: &[f64],
    thetas: &[f64],
) -> Vec<RemainderEstimate> {
    rhos.iter()
        .map(|&rho| {
            let sp = spec.with_rho(rho);
            let mut e = RemainderEstimate { rho, sup_r0: 0.0, sup_r1: 0.0 };
            for &j in speeds {
                for &th in thetas {
                    e.sup_r0 = e.sup_r0.max(remainder(&sp, phases, 0.0, j, th, 1).abs());
                    e.sup_r1 = e.sup_r1.max(remainder(&sp, phases, 0.0, j, th, 2).abs());
                }
            }
            e
        })
        .collect()
}

pub fn uniform_thetas(n: usize) -> Vec<f64> {
    (0..n).map(|k| 2.0 * std::f64::consts::PI * k as f64 / n as f64).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScatteringSample {
    /// `(φ, J, θ, Θ)`.
    pub input: [f64; 4],
    /// `(φ̄, J̄, θ̄, Θ̄)`.
    pub measured_image: [f64; 4],
    #[serde(rename = "delta_Theta_measured")]
    pub delta_theta_measured: f64,
    #[serde(rename = "delta_Theta_predicted")]
    pub delta_theta_predicted: f64,
    pub residual: f64,
    pub epsilon: f64,
    pub rho: f64,
}

/// Arclength `s > 0` of the point of the stable half of `ξ` closest to `z`.
fn stable_footpoint(fl: &Fluctuation, homoclinic: &HomoclinicOrbit, z: &V3, opts: &IntegratorOptions) -> Result<f64> {
    let (mut best, mut dbest) = (0.0, f64::INFINITY);
    for (k, y) in homoclinic.samples.iter().enumerate() {
        let s = homoclinic.s_min + k as f64 * homoclinic.table_step;
        if s < 0.0 {
            continue;
        }
        let d = norm(&sub(z, &[y[0], y[1], y[2]]));
        if d < dbest {
            best = s;
            dbest = d;
        }
    }
    if dbest > 0.1 {
        return Err(GeoError::ProjectionFailed(format!("distance {dbest:.3e} to the homoclinic")));
    }
    let g = |s: f64| -> f64 {
        match homoclinic.state_at(fl.surface, s, opts) {
            Ok(y) => dot(&sub(z, &[y[0], y[1], y[2]]), &[y[3], y[4], y[5]]),
            Err(_) => f64::NAN,
        }
    };
    let h = 2.0 * homoclinic.table_step;
    let (a, b) = (best - h, best + h);
    let (ga, gb) = (g(a), g(b));
    if !(ga * gb < 0.0) {
        return Err(GeoError::ProjectionFailed("closest point not bracketed".into()));
    }
    Ok(brent(g, a, b, ga, gb, 1e-14))
}

/// Integrates one homoclinic excursion of the perturbed extended flow.
///
/// The trajectory is seeded on the unperturbed homoclinic `horizon`
/// arclength before the chart; the perturbation is supported away from the
/// closed geodesic, so this is exactly the perturbed unstable-side orbit
/// with inner coordinates `(φ, J, θ, Θ)` at time 0.
pub fn measure_scattering(
    fl: &Fluctuation,
    homoclinic: &HomoclinicOrbit,
    phases: &ChannelPhases,
    point: [f64; 4],
    horizon: f64,
    opts: &IntegratorOptions,
) -> Result<ScatteringSample> {
    let [phi, j, theta, big] = point;
    let eps = fl.spec.epsilon;
    // Time at which the unperturbed orbit passes ξ(0).
    let t_star = (phases.a_minus - phi) / j;
    let t0 = t_star - horizon / j;
    let y = homoclinic.state_at(fl.surface, -horizon, opts)?;
    let st = ExtendedState::new([y[0], y[1], y[2]], [j * y[3], j * y[4], j * y[5]], theta + t0, big);
    let mut flow = ExtendedFlow::new(*fl, eps, &st, t0, 1.0, *opts)?;
    let t1 = t_star + horizon / j;
    let end = flow.run_to(t1)?;
    if flow.passages == 0 {
        return Err(GeoError::LostChannel("no chart passage".into()));
    }
    let jbar = end.speed();
    let s_star = stable_footpoint(fl, homoclinic, &end.z, opts)?;
    let phibar = (s_star + phases.a_plus - jbar * t1).rem_euclid(phases.period);
    let measured = end.big_theta - big;
    let predicted = predicted_delta_theta(fl.spec, phases, phi, j, theta);
    Ok(ScatteringSample {
        input: point,
        measured_image: [phibar, jbar, end.theta - t1, end.big_theta],
        delta_theta_measured: measured,
        delta_theta_predicted: predicted,
        residual: (measured - predicted).abs(),
        epsilon: eps,
        rho: fl.spec.rho,
    })
}

pub fn write_samples_csv<W: Write>(samples: &[ScatteringSample], mut w: W) -> std::io::Result<()> {
    writeln!(
        w,
        "epsilon,rho,phi,J,theta,Theta,phi_bar,J_bar,theta_bar,Theta_bar,delta_Theta_measured,delta_Theta_predicted,residual"
    )?;
    for s in samples {
        let mut row = vec![fmt17(s.epsilon), fmt17(s.rho)];
        row.extend(s.input.iter().chain(s.measured_image.iter()).map(|x| fmt17(*x)));
        row.extend([s.delta_theta_measured, s.delta_theta_predicted, s.residual].iter().map(|x| fmt17(*x)));
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn write_remainder_csv<W: Write>(rows: &[RemainderEstimate], mut w: W) -> std::io::Result<()> {
    writeln!(w, "rho,sup_R0,sup_R1")?;
    for r in rows {
        writeln!(w, "{},{},{}", fmt17(r.rho), fmt17(r.sup_r0), fmt17(r.sup_r1))?;
    }
    Ok(())
}

/// `S*`, the first-order `ΔΘ` and its `ρ → 0` form on a grid, one row per
/// `(φ, J, θ)`.
pub fn write_melnikov_csv<W: Write>(
    spec: &PerturbationSpec,
    phases: &ChannelPhases,
    phis: &[f64],
    speeds: &[f64],
    thetas: &[f64],
    mut w: W,
) -> std::io::Result<()> {
    writeln!(w, "phi,J,theta,S_star,delta_Theta_predicted,delta_Theta_limit,R0,R1")?;
    for &phi in phis {
        for &j in speeds {
            for &th in thetas {
                let row = [
                    phi,
                    j,
                    th,
                    melnikov_potential(spec, phases, phi, j, th),
                    predicted_delta_theta(spec, phases, phi, j, th),
                    predicted_delta_theta_limit(spec, phases, phi, j, th),
                    remainder(spec, phases, phi, j, th, 1),
                    remainder(spec, phases, phi, j, th, 2),
                ];
                writeln!(w, "{}", row.map(fmt17).join(","))?;
            }
        }
    }
    Ok(())
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perturbation::{BumpProfile, TimeProfile};

    fn spec(chi: TimeProfile) -> PerturbationSpec {
        PerturbationSpec { alpha: BumpProfile::smooth(), rho: 0.2, beta_width: 0.08, chi, epsilon: 1e-3, kappa_floor: 1e-3 }
    }

    const PH: ChannelPhases = ChannelPhases { a_minus: 0.4, a_plus: 4.5, period: 2.0 * std::f64::consts::PI };

    #[test]
    fn potential_with_constant_profile_is_speed() {
        let s = spec(TimeProfile::Constant { value: 1.0 });
        for j in [1.0, 2.5] {
            assert!((melnikov_potential(&s, &PH, 0.3, j, 1.0) - j).abs() < 1e-12);
        }
        assert_eq!(predicted_delta_theta(&s, &PH, 0.3, 1.0, 1.0), 0.0);
        assert_eq!(remainder(&s, &PH, 0.0, 1.0, 0.7, 1), 0.0);
    }

    #[test]
    fn potential_shift_invariance_and_point_limit() {
        let s = spec(TimeProfile::default());
        let (phi, j, th, sh) = (0.2, 1.3, 0.9, 0.1);
        let a = melnikov_potential(&s, &PH, phi, j, th);
        let b = melnikov_potential(&s, &PH, phi + j * sh, j, th + sh);
        assert!((a - b).abs() < 1e-12);
        let lim = j * s.chi(th + (PH.a_plus - phi) / j);
        let d3 = (melnikov_potential(&s.with_rho(1e-3), &PH, phi, j, th) - lim).abs();
        let d4 = (melnikov_potential(&s.with_rho(1e-4), &PH, phi, j, th) - lim).abs();
        assert!(d4 < d3 && d3 < 1e-6, "{d3} {d4}");
    }

    #[test]
    fn limit_form_at_zero_phase() {
        let s = spec(TimeProfile::default());
        let th = 0.8;
        let want = s.epsilon * 2.0 * (th + PH.a_minus / 2.0).sin();
        assert!((predicted_delta_theta_limit(&s, &PH, 0.0, 2.0, th) - want).abs() < 1e-15);
        let full = predicted_delta_theta(&s, &PH, 0.0, 2.0, th);
        let r0 = remainder(&s, &PH, 0.0, 2.0, th, 1);
        assert!((full - (want - s.epsilon * 2.0 * r0)).abs() < 1e-15);
    }

    #[test]
    fn slope_of_power_law() {
        let x = [1.0, 2.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powi(2)).collect();
        assert!((loglog_slope(&x, &y) - 2.0).abs() < 1e-12);
    }
}
