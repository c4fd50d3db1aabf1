//! Run configuration document.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};
use crate::hyperbolic_structures::HomoclinicSearch;
use crate::ode::IntegratorOptions;
use crate::perturbation::TimeProfile;
use crate::surface_geometry::ImplicitSurface;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeodesicConfig {
    /// Initial guess in section coordinates `(u, ϑ)`.
    pub guess: [f64; 2],
    /// Rough length of the closed geodesic on the unscaled surface.
    pub length_guess: f64,
    /// Rescale the surface so that the closed geodesic has length 2π.
    pub normalize_length: bool,
}

impl Default for GeodesicConfig {
    fn default() -> Self {
        GeodesicConfig { guess: [0.0, 0.0], length_guess: 8.0, normalize_length: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChartConfig {
    pub delta0_max: f64,
    /// Minimal distance between the chart axis and the closed geodesic.
    pub clearance: f64,
    /// Initial `δ₁ / δ₀`.
    pub delta1_fraction: f64,
    /// Required lower bound on the eigenvalues of the Fermi metric.
    pub eig_floor: f64,
    /// Chart centres are searched on `ξ` within this arclength of the
    /// homoclinic point found, with this spacing.
    pub center_range: f64,
    pub center_step: f64,
    /// Upper bound on `δ₁` relative to the distance from the chart axis to
    /// the rest of `ξ`.
    pub self_clearance_fraction: f64,
}

impl Default for ChartConfig {
    fn default() -> Self {
        ChartConfig {
            delta0_max: PI / 8.0,
            clearance: 0.3,
            delta1_fraction: 0.3,
            eig_floor: 0.5,
            center_range: 6.0,
            center_step: 0.05,
            self_clearance_fraction: 0.75,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbationConfig {
    pub rho: f64,
    pub chi: TimeProfile,
    pub epsilon: f64,
    pub epsilon_max: f64,
    pub kappa_floor: f64,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        PerturbationConfig {
            rho: 0.2,
            chi: TimeProfile::Cos { amplitude: 1.0 },
            epsilon: 1e-3,
            epsilon_max: 1e-2,
            kappa_floor: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// ε values for the scattering sweep.
    pub scattering_epsilons: Vec<f64>,
    /// Speeds for the scattering sweep.
    pub scattering_speeds: Vec<f64>,
    /// Time phases for the scattering sweep.
    pub scattering_thetas: Vec<f64>,
    /// Channel phase `φ` of the scattering samples.
    pub scattering_phi: f64,
    pub remainder_rhos: Vec<f64>,
    pub remainder_speeds: Vec<f64>,
    pub remainder_theta_count: usize,
    pub inner_energy: f64,
    pub inner_speeds: Vec<f64>,
    pub chain_epsilon: f64,
    pub chain_j0: f64,
    pub chain_target_drop: f64,
    pub chain_max_jumps: usize,
    pub oscillatory_cycles: usize,
    pub oscillatory_depth: f64,
    pub window: f64,
    pub m_max: usize,
    pub drift_epsilon: f64,
    pub drift_excursions: usize,
    pub drift_retries: usize,
    /// Starting speed of the guided drift; an integer speed makes the
    /// rotation on the cylinder resonant.
    pub drift_j0: f64,
    pub drift_eject_horizon: f64,
    pub drift_capture_horizon: f64,
    pub drift_capture_tol: f64,
    pub timing_epsilons: Vec<f64>,
    pub timing_speeds: Vec<f64>,
    pub timing_drop: f64,
    pub timing_trials: usize,
    pub transversality_samples: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scattering_epsilons: vec![4e-3, 2e-3, 1e-3, 4e-4],
            scattering_speeds: vec![1.0, 2.0],
            scattering_thetas: vec![0.3, 1.2, 2.5, 4.0, 5.5],
            scattering_phi: 0.0,
            remainder_rhos: vec![0.2, 0.1, 0.05],
            remainder_speeds: vec![1.0, 2.0, 4.0, 8.0],
            remainder_theta_count: 64,
            inner_energy: 0.0,
            inner_speeds: vec![1.0, 2.0],
            chain_epsilon: 1e-2,
            chain_j0: 1.0,
            chain_target_drop: 10.0,
            chain_max_jumps: 100_000,
            oscillatory_cycles: 4,
            oscillatory_depth: 3.0,
            window: 0.05,
            m_max: 1_000_000,
            drift_epsilon: 1e-3,
            drift_excursions: 5,
            drift_retries: 8,
            drift_j0: 1.0618034,
            drift_eject_horizon: 120.0,
            drift_capture_horizon: 60.0,
            drift_capture_tol: 0.2,
            timing_epsilons: vec![4e-2, 2e-2, 1e-2, 5e-3, 2.5e-3],
            timing_speeds: vec![1.25f64.sqrt(), 2.5f64.sqrt(), 5f64.sqrt(), 10f64.sqrt()],
            timing_drop: 1.0,
            timing_trials: 32,
            transversality_samples: 9,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub surface: ImplicitSurface,
    #[serde(default)]
    pub geodesic: GeodesicConfig,
    #[serde(default)]
    pub solver: IntegratorOptions,
    #[serde(default)]
    pub homoclinic: HomoclinicSearch,
    #[serde(default)]
    pub chart: ChartConfig,
    #[serde(default)]
    pub perturbation: PerturbationConfig,
    #[serde(default)]
    pub experiments: ExperimentConfig,
    #[serde(default = "default_out")]
    pub output_dir: String,
    #[serde(default)]
    pub seed: u64,
}

fn default_out() -> String {
    "out".into()
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            surface: ImplicitSurface::ellipsoid(1.0, 1.2, 1.5).with_bump([0.62108, 0.44434, 1.03614], 0.05, 0.4),
            geodesic: GeodesicConfig::default(),
            solver: IntegratorOptions::default(),
            homoclinic: HomoclinicSearch::default(),
            chart: ChartConfig::default(),
            perturbation: PerturbationConfig::default(),
            experiments: ExperimentConfig::default(),
            output_dir: default_out(),
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig = serde_json::from_str(&text).map_err(|e| GeoError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks that need no computed artifacts.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(GeoError::InvalidConfig(m));
        let s = &self.solver;
        if !(s.rel_tol > 0.0 && s.abs_tol > 0.0 && s.max_step > 0.0) {
            return bad("tolerances and max_step must be positive".into());
        }
        let p = &self.perturbation;
        if !(p.rho > 0.0) {
            return bad(format!("ρ > 0 violated: ρ = {}", p.rho));
        }
        if p.rho >= self.chart.delta0_max {
            return bad(format!("ρ < δ₀ violated: ρ = {} ≥ δ₀ ≤ {}", p.rho, self.chart.delta0_max));
        }
        if !(p.epsilon >= 0.0 && p.epsilon <= p.epsilon_max) {
            return bad(format!("0 ≤ ε ≤ ε_max violated: ε = {}, ε_max = {}", p.epsilon, p.epsilon_max));
        }
        if !(self.chart.delta1_fraction > 0.0 && self.chart.delta0_max > 0.0) {
            return bad("chart half-widths must be positive".into());
        }
        if self.experiments.window <= 0.0 || self.experiments.window >= std::f64::consts::FRAC_PI_4 {
            return bad(format!("jump window half-width must lie in (0, π/4): {}", self.experiments.window));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
