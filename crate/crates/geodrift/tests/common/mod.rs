#![allow(dead_code, unused_imports)]

use std::sync::OnceLock;

use geodrift::config::RunConfig;
use geodrift::pipeline::{geodesic_stage, GeodesicArtifact, Setup};
use geodrift::scattering::ChannelPhases;

pub use geodrift::diffusion_experiments::wrap_pi;

pub fn config() -> &'static RunConfig {
    static CFG: OnceLock<RunConfig> = OnceLock::new();
    CFG.get_or_init(RunConfig::default)
}

/// Default surface and its closed geodesic.
pub fn geodesic() -> &'static GeodesicArtifact {
    static GEO: OnceLock<GeodesicArtifact> = OnceLock::new();
    GEO.get_or_init(|| geodesic_stage(config()).expect("default geodesic"))
}

/// Default pipeline up to the perturbation, computed once per test binary.
pub fn setup() -> &'static Setup {
    static SETUP: OnceLock<Setup> = OnceLock::new();
    SETUP.get_or_init(|| Setup::compute(config()).expect("default setup"))
}

pub fn phases() -> ChannelPhases {
    let s = setup();
    ChannelPhases::new(&s.homoclinic, s.geodesic())
}
