use thiserror::Error;

pub type Result<T> = std::result::Result<T, RipwError>;

/// Errors raised across the crate.
///
/// Variants fall into two groups: input/validation failures and numeric
/// failures. [`RipwError::is_numeric`] tells them apart, which the CLI uses
/// to pick an exit code.
#[derive(Debug, Error)]
pub enum RipwError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("InvalidDesignFile: {0}")]
    InvalidDesignFile(String),

    #[error("missing or misnamed column: expected `{expected}`, found `{found}`")]
    MissingColumn { expected: String, found: String },

    #[error("malformed value `{value}` in column `{column}` (row {row})")]
    MalformedValue {
        column: String,
        row: usize,
        value: String,
    },

    #[error("UnbalancedPanel: unit `{unit}` has no observation for period {period}")]
    UnbalancedPanel { unit: String, period: i64 },

    #[error("NonBinaryTreatment: unit `{unit}`, period {period} has treated = `{value}`")]
    NonBinaryTreatment {
        unit: String,
        period: i64,
        value: String,
    },

    #[error("DuplicateCell: unit `{unit}`, period {period} appears more than once")]
    DuplicateCell { unit: String, period: i64 },

    #[error("DimensionTooLarge: {periods} periods exceeds the cap of {max}")]
    DimensionTooLarge { periods: usize, max: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid support: {0}")]
    InvalidSupport(String),

    #[error("InvalidAdoptionSet: {0}")]
    InvalidAdoptionSet(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid time weights: {0}")]
    InvalidTimeWeights(String),

    #[error("AbsoluteContinuityViolated: reshaped mass on path {path} which no unit can realize")]
    AbsoluteContinuityViolated { path: String },

    #[error("ZeroPropensityRealized: unit {unit} realized path {path} with zero propensity")]
    ZeroPropensityRealized { unit: usize, path: String },

    #[error("FloorTooLarge: floor {floor} times support size {support_size} is not below 1")]
    FloorTooLarge { floor: f64, support_size: usize },

    #[error("NonUniformWeightsUnsupported: this closed form requires equal time weights")]
    NonUniformWeightsUnsupported,

    #[error("NoPositiveSolution: {0}")]
    NoPositiveSolution(String),

    #[error("SolverDiverged: objective became non-finite")]
    SolverDiverged,

    #[error("EmptyFamily: {0}")]
    EmptyFamily(String),

    #[error("NoSolution: the DATE equation has no solution on this support (best objective {best_objective:e})")]
    NoSolution { best_objective: f64 },

    #[error("DegenerateSupport: reshaped distribution puts no mass outside the all-zeros/all-ones paths")]
    DegenerateSupport,

    #[error("DegenerateDenominator: D = {value:e} is not above {threshold:e}")]
    DegenerateDenominator { value: f64, threshold: f64 },

    #[error("AllWeightsZero: every unit has a zero weight")]
    AllWeightsZero,

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("TooFewUnits: {units} units cannot be split into {folds} folds")]
    TooFewUnits { units: usize, folds: usize },

    #[error("PathOutsideSupport: unit {unit} realized path {path} outside the declared support")]
    PathOutsideSupport { unit: usize, path: String },

    #[error("TooManyStrata: {levels} levels exceeds the cap of {max}")]
    TooManyStrata { levels: usize, max: usize },

    #[error("EmptyStratum: {0}")]
    EmptyStratum(String),

    #[error("covariate column {column} varies over time for unit {unit}")]
    CovariateNotTimeInvariant { column: usize, unit: usize },

    #[error("covariate column {column} out of range (panel has {available})")]
    CovariateOutOfRange { column: usize, available: usize },

    #[error("SeparationDetected: coefficient {index} reached {value:e}; the likelihood is unbounded")]
    SeparationDetected { index: usize, value: f64 },

    #[error("NonStaggeredSupport: {0}")]
    NonStaggeredSupport(String),
}

impl RipwError {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            RipwError::DegenerateDenominator { .. }
                | RipwError::SolverDiverged
                | RipwError::EmptyFamily(_)
                | RipwError::NoSolution { .. }
                | RipwError::NoPositiveSolution(_)
                | RipwError::DegenerateSupport
                | RipwError::AllWeightsZero
                | RipwError::SeparationDetected { .. }
        )
    }
}
