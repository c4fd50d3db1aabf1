//! Stage functions shared by the command-line front end and the tests.

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::diffusion_experiments::{jump_phase, ChainParams, CylinderState, Direction, DriftParams, TimingParams};
use crate::error::Result;
use crate::fermi_charts::{build_chart, FermiChart};
use crate::hyperbolic_structures::{
    crossing_search, default_section, find_closed_geodesic, find_homoclinic, select_chart_center, select_delta0,
    ClosedGeodesic, HomoclinicOrbit, CLEARANCE_GAP,
};
use crate::perturbation::PerturbationSpec;
use crate::scattering::ChannelPhases;
use crate::surface_geometry::ImplicitSurface;

/// The working (possibly rescaled) surface together with its closed geodesic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeodesicArtifact {
    pub surface: ImplicitSurface,
    pub geodesic: ClosedGeodesic,
}

pub fn geodesic_stage(cfg: &RunConfig) -> Result<GeodesicArtifact> {
    let opts = &cfg.solver;
    let s0 = &cfg.surface;
    let g0 = find_closed_geodesic(
        s0,
        &default_section(s0)?,
        cfg.geodesic.guess,
        opts,
        &crossing_search(cfg.geodesic.length_guess, s0),
    )?;
    if !cfg.geodesic.normalize_length {
        return Ok(GeodesicArtifact { surface: s0.clone(), geodesic: g0 });
    }
    let surface = s0.scaled(2.0 * std::f64::consts::PI / g0.length_l);
    let geodesic = find_closed_geodesic(
        &surface,
        &default_section(&surface)?,
        cfg.geodesic.guess,
        opts,
        &crossing_search(2.0 * std::f64::consts::PI, &surface),
    )?;
    Ok(GeodesicArtifact { surface, geodesic })
}

/// The homoclinic orbit, reparametrized so that `ξ(0)` is the chart centre.
pub fn homoclinic_stage(art: &GeodesicArtifact, cfg: &RunConfig) -> Result<HomoclinicOrbit> {
    let found = find_homoclinic(&art.surface, &art.geodesic, &cfg.homoclinic, &cfg.solver)?;
    let c = &cfg.chart;
    let (center, _) = select_chart_center(&art.geodesic, &found, c.delta0_max, c.clearance, c.center_range, c.center_step)?;
    found.recentered(&art.geodesic, &art.surface, center, &cfg.solver)
}

/// Chart half-widths: `δ₀` from the simple-segment scan, `δ₁` shrunk from
/// `fraction · δ₀` (capped by the clearance to the rest of `ξ`) until the Fermi metric is uniformly positive.
pub fn chart_stage(art: &GeodesicArtifact, orbit: &HomoclinicOrbit, cfg: &RunConfig) -> Result<FermiChart> {
    let c = &cfg.chart;
    let delta0 = select_delta0(&art.surface, &art.geodesic, orbit, c.delta0_max, c.clearance, &cfg.solver)?;
    let own = orbit.self_clearance(0.0, delta0, CLEARANCE_GAP);
    let mut delta1 = (c.delta1_fraction * delta0).min(c.self_clearance_fraction * own);
    loop {
        let chart = build_chart(&art.surface, orbit, delta0, delta1, &cfg.solver)?;
        if min_metric_eigenvalue(&art.surface, &chart, 9) >= c.eig_floor || delta1 < 1e-3 {
            return Ok(chart);
        }
        delta1 *= 0.8;
    }
}

pub fn min_metric_eigenvalue(surface: &ImplicitSurface, chart: &FermiChart, n: usize) -> f64 {
    let mut m = f64::INFINITY;
    for i in 0..n {
        for j in 0..n {
            let x = [
                chart.delta0 * (2.0 * i as f64 / (n - 1) as f64 - 1.0),
                chart.delta1 * (2.0 * j as f64 / (n - 1) as f64 - 1.0),
            ];
            let g = chart.static_metric(surface, &x);
            m = m.min(g.symmetric_eigenvalues().min());
        }
    }
    m
}

pub fn perturbation_spec(chart: &FermiChart, cfg: &RunConfig) -> Result<PerturbationSpec> {
    let p = &cfg.perturbation;
    let mut spec = PerturbationSpec::new(p.rho, p.chi, p.epsilon, chart);
    spec.kappa_floor = p.kappa_floor;
    spec.validate(chart)?;
    Ok(spec)
}

/// Everything up to the perturbation, computed in sequence.
#[derive(Clone, Debug)]
pub struct Setup {
    pub geo: GeodesicArtifact,
    pub homoclinic: HomoclinicOrbit,
    pub chart: FermiChart,
    pub spec: PerturbationSpec,
}

impl Setup {
    pub fn compute(cfg: &RunConfig) -> Result<Self> {
        let geo = geodesic_stage(cfg)?;
        let homoclinic = homoclinic_stage(&geo, cfg)?;
        let chart = chart_stage(&geo, &homoclinic, cfg)?;
        let spec = perturbation_spec(&chart, cfg)?;
        Ok(Setup { geo, homoclinic, chart, spec })
    }

    pub fn surface(&self) -> &ImplicitSurface {
        &self.geo.surface
    }

    pub fn geodesic(&self) -> &ClosedGeodesic {
        &self.geo.geodesic
    }
}

pub fn chain_params(cfg: &RunConfig) -> ChainParams {
    let e = &cfg.experiments;
    ChainParams {
        window: e.window,
        m_max: e.m_max,
        target_drop: e.chain_target_drop,
        cycles: e.oscillatory_cycles,
        depth: e.oscillatory_depth,
        ..ChainParams::default()
    }
}

pub fn drift_params(cfg: &RunConfig) -> DriftParams {
    let e = &cfg.experiments;
    DriftParams {
        excursions: e.drift_excursions,
        retries: e.drift_retries,
        window: e.window,
        m_max: e.m_max,
        eject_horizon: e.drift_eject_horizon,
        capture_horizon: e.drift_capture_horizon,
        capture_tol: e.drift_capture_tol,
        ..DriftParams::default()
    }
}

pub fn timing_params(cfg: &RunConfig) -> TimingParams {
    let e = &cfg.experiments;
    TimingParams {
        epsilons: e.timing_epsilons.clone(),
        speeds: e.timing_speeds.clone(),
        drop: e.timing_drop,
        trials: e.timing_trials,
        seed: cfg.seed,
        chain: ChainParams { target_drop: e.timing_drop, ..chain_params(cfg) },
    }
}

/// Start of the idealized chains: `θ*₋` at speed `J₀`, `Θ = 0`.
pub fn chain_start(phases: &ChannelPhases, j0: f64) -> CylinderState {
    CylinderState::new(jump_phase(Direction::Down, j0, phases), 0.0, 0.5 * j0 * j0)
}
