use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("geometry: {0}")]
    Geometry(String),

    #[error("geometry: degenerate element {index}: {reason}")]
    DegenerateElement { index: usize, reason: String },

    #[error("eigensolver did not converge after {iterations} iterations (worst residual {worst_residual:.3e})")]
    EigenConvergence {
        iterations: usize,
        worst_residual: f64,
    },

    #[error("matrix not positive definite (pivot {pivot} = {value:.3e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("point ({x}, {y}) outside plate domain")]
    OutOfDomain { x: f64, y: f64 },

    #[error("singular grammian: {0}")]
    SingularGrammian(String),

    #[error("matrix not Hurwitz: eigenvalue with real part {0:.3e}")]
    NotHurwitz(f64),

    #[error("placement: {0}")]
    Placement(String),

    #[error("rank-deficient map: {context} (singular values {singular_values:?})")]
    RankDeficient {
        context: String,
        singular_values: Vec<f64>,
    },

    #[error("plant: {0}")]
    Plant(String),

    #[error("control: {0}")]
    Control(String),

    #[error("simulation diverged at t = {t:.6} s (state norm {norm:.3e})")]
    SimulationDiverged { t: f64, norm: f64 },

    #[error("config: {0}")]
    Config(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("format: {0}")]
    Format(String),
}

impl Error {
    /// Stable one-word category for the CLI's machine-parsable error line.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Geometry(_) | Error::DegenerateElement { .. } => "geometry",
            Error::EigenConvergence { .. } | Error::NotPositiveDefinite { .. } => "eigen",
            Error::OutOfDomain { .. } => "domain",
            Error::SingularGrammian(_) | Error::NotHurwitz(_) | Error::Placement(_) => {
                "placement"
            }
            Error::RankDeficient { .. } | Error::Plant(_) => "plant",
            Error::Control(_) => "control",
            Error::SimulationDiverged { .. } => "simulation",
            Error::Config(_) => "config",
            Error::Infeasible(_) => "infeasible",
            Error::Io(_) => "io",
            Error::Format(_) => "format",
        }
    }
}
