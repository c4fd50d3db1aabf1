//! Geodesic flows on time-periodically fluctuating surfaces in R³.

pub mod config;
pub mod diffusion_experiments;
pub mod error;
pub mod fermi_charts;
pub mod jet;
pub mod geodesic_dynamics;
pub mod hyperbolic_structures;
pub mod ode;
pub mod perturbation;
pub mod pipeline;
pub mod quadrature;
pub mod scattering;
pub mod section;
pub mod surface_geometry;
pub mod verification;

pub use error::{GeoError, Result};
