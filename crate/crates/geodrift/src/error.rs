use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("Newton iteration did not converge: {0}")]
    NoConvergence(String),
    #[error("gradient of Q degenerates at {0:?}")]
    DegenerateGradient([f64; 3]),
    #[error("vector is not tangent (grad_Q . v = {0:e})")]
    NotTangent(f64),
    #[error("integrator step size underflow at t = {0}")]
    StepFailure(f64),
    #[error("integrator exceeded {0} steps")]
    TooManySteps(usize),
    #[error("trajectory left the Fermi chart domain at x = {0:?}")]
    ChartExit([f64; 2]),
    #[error("section Newton diverged: {0}")]
    NewtonDiverged(String),
    #[error("closed geodesic is not hyperbolic (|lambda| = {0})")]
    NotHyperbolic(f64),
    #[error("no homoclinic orbit found: {0}")]
    NoHomoclinicFound(String),
    #[error("separatrices appear tangent (angle = {0:e})")]
    TangencySuspected(f64),
    #[error("asymptotic fit failed: {0}")]
    FitFailed(String),
    #[error("parallel frame drifted by {0:e}")]
    FrameDrift(f64),
    #[error("point lies outside the Fermi chart")]
    OutsideChart,
    #[error("normal curvature {0:e} below floor along the chart axis")]
    KappaVanishes(f64),
    #[error("excursion missed the homoclinic channel: {0}")]
    LostChannel(String),
    #[error("asymptotic projection failed: {0}")]
    ProjectionFailed(String),
    #[error("energy floor violated: E0 - Theta = {0}")]
    EnergyFloor(f64),
    #[error("trajectory missed the section: {0}")]
    SectionMiss(String),
    #[error("phase {0} is outside the jump window")]
    PhaseOutOfWindow(f64),
    #[error("jump window unreachable within {0} inner iterates")]
    WindowUnreachable(usize),
    #[error("capture near the cylinder failed: {0}")]
    CaptureFailed(String),
    #[error("foliation transversality failed: {0}")]
    TransversalityFailed(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl GeoError {
    /// Variant name as recorded in run manifests.
    pub fn name(&self) -> &'static str {
        use GeoError::*;
        match self {
            NoConvergence(_) => "NoConvergence",
            DegenerateGradient(_) => "DegenerateGradient",
            NotTangent(_) => "NotTangent",
            StepFailure(_) => "StepFailure",
            TooManySteps(_) => "TooManySteps",
            ChartExit(_) => "ChartExit",
            NewtonDiverged(_) => "NewtonDiverged",
            NotHyperbolic(_) => "NotHyperbolic",
            NoHomoclinicFound(_) => "NoHomoclinicFound",
            TangencySuspected(_) => "TangencySuspected",
            FitFailed(_) => "FitFailed",
            FrameDrift(_) => "FrameDrift",
            OutsideChart => "OutsideChart",
            KappaVanishes(_) => "KappaVanishes",
            LostChannel(_) => "LostChannel",
            ProjectionFailed(_) => "ProjectionFailed",
            EnergyFloor(_) => "EnergyFloor",
            SectionMiss(_) => "SectionMiss",
            PhaseOutOfWindow(_) => "PhaseOutOfWindow",
            WindowUnreachable(_) => "WindowUnreachable",
            CaptureFailed(_) => "CaptureFailed",
            TransversalityFailed(_) => "TransversalityFailed",
            InvalidConfig(_) => "InvalidConfig",
            Io(_) => "Io",
        }
    }

    pub fn is_validation(&self) -> bool {
        matches!(self, GeoError::InvalidConfig(_))
    }
}

impl From<std::io::Error> for GeoError {
    fn from(e: std::io::Error) -> Self {
        GeoError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for GeoError {
    fn from(e: serde_json::Error) -> Self {
        GeoError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, GeoError>;
