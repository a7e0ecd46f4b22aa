use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SymbolicError {
    #[error("syntax error at column {column}: {message}")]
    Syntax { column: usize, message: String },
    #[error("unsupported function `{name}` at column {column}")]
    UnsupportedFunction { name: String, column: usize },
    #[error("argument of `{name}` at column {column} is not affine in the state")]
    NonAffineArgument { name: String, column: usize },
    #[error("variable index x{index} out of range for dimension {n}")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("seed generator list is empty")]
    EmptySeed,
    #[error("EBIF chain did not stabilize")]
    NotStabilized,
    #[error("L_{field} of basis element {index} is not in the stabilized space")]
    NotInvariant { field: String, index: usize },
    #[error("coordinate x{0} has no projection row")]
    MissingProjection(usize),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid system: {0}")]
    InvalidSystem(String),
    #[error(transparent)]
    Symbolic(#[from] SymbolicError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("matrix is not square ({rows}×{cols})")]
    NonSquare { rows: usize, cols: usize },
    #[error("matrix has non-finite entries")]
    NonFinite,
    #[error("invalid schedule: {0}")]
    ScheduleInvalid(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid step: {0}")]
    InvalidStep(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReachError {
    #[error("matrix is not square ({rows}×{cols})")]
    NonSquare { rows: usize, cols: usize },
    #[error("adjoint span is empty although some B_i is nonzero")]
    EmptySpan,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Symbolic(#[from] SymbolicError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControlError {
    #[error("Lyapunov operator is singular (eigenvalues sum to zero)")]
    SingularSylvester,
    #[error("A is not Hurwitz; supply P explicitly")]
    NotStabilizable,
    #[error("{0} is not positive definite")]
    NotPositiveDefinite(&'static str),
    #[error("R is singular")]
    SingularR,
    #[error("state became non-finite at t = {0}")]
    NonFiniteState(f64),
    #[error("forward-backward sweep diverged (control norm {0:.3e})")]
    SweepDiverged(f64),
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Write {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: line {line}, column {column}: {message}")]
    Json {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{context}: {source}")]
    Expression {
        context: String,
        #[source]
        source: SymbolicError,
    },
    #[error("invalid rational literal `{0}`")]
    Rational(String),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
}
