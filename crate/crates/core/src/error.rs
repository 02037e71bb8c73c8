use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not in se(3) (residual {residual:e})")]
    NotInLieAlgebra { residual: f64 },

    #[error("pitch {pitch} rad is too close to +-pi/2 for the ZYX parameterization")]
    GimbalLock { pitch: f64 },

    #[error("arc length {s} m outside [0, {length}] m")]
    ArcLengthOutOfRange { s: f64, length: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("mass matrix is singular or indefinite (condition estimate {condition:e})")]
    SingularMass { condition: f64 },

    #[error("state became non-finite")]
    NonFiniteState,

    #[error("point is behind the camera (depth {depth} m)")]
    BehindCamera { depth: f64 },

    #[error("compensated projection is degenerate (third component {w:e})")]
    DegenerateProjection { w: f64 },

    #[error("feature quadrilateral is degenerate")]
    DegenerateQuad,

    #[error("interaction matrix is ill-conditioned (condition {condition:e})")]
    SingularInteraction { condition: f64 },

    #[error("no rod configuration keeps the target in front of the local camera")]
    NoFeasibleConfig,

    #[error("trajectory window [{t0}, {tf}] is empty")]
    DegenerateWindow { t0: f64, tf: f64 },

    #[error("target is invisible to both cameras")]
    TargetLost,

    #[error("total thrust demand {force:e} N is too small to define attitude references")]
    DegenerateThrust { force: f64 },

    #[error("actuator allocation infeasible (residual {residual:e})")]
    InfeasibleAllocation { residual: f64 },

    #[error("perturbed mass matrix is not positive definite")]
    PerturbationBreaksPD,

    #[error("invalid controller gains: {0}")]
    InvalidGains(String),

    #[error("reference camera pose does not see all target corners")]
    ReferenceNotVisible,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config parse error: {0}")]
    Parse(String),

    #[error("config validation error at `{field}`: {message}")]
    Validation { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
