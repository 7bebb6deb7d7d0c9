use thiserror::Error;

/// Errors raised by the condition algebra (encoding, projection, combination).
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConditionError {
    #[error("invalid level `{level}` for variable `{variable}`")]
    InvalidLevel { variable: String, level: String },
    #[error("expected {expected} levels, got {got}")]
    Arity { expected: usize, got: usize },
    #[error("variable `{0}` is not part of the source variable set")]
    Projection(String),
    #[error("variable `{0}` appears on both sides of a combination")]
    VariableOverlap(String),
    #[error("condition code {code} out of range (condition count {count})")]
    CodeOutOfRange { code: u64, count: u64 },
    #[error("duplicate variable `{0}`")]
    DuplicateVariable(String),
    #[error("duplicate level `{level}` in variable `{variable}`")]
    DuplicateLevel { variable: String, level: String },
    #[error("variable `{0}` must declare at least one level")]
    NoLevels(String),
    #[error("condition space too large")]
    TooManyConditions,
}

/// Diagnostic codes for the design language front end.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum ParseErrorKind {
    Syntax,
    DuplicateVariable,
    DuplicateLevel,
    DuplicateName,
    UnknownIdentifier,
    Arity,
    MissingAssign,
    DuplicateAssign,
    InvalidUnits,
}

impl ParseErrorKind {
    pub fn code(self) -> &'static str {
        match self {
            ParseErrorKind::Syntax => "E-SYNTAX",
            ParseErrorKind::DuplicateVariable => "E-DUPLICATE-VARIABLE",
            ParseErrorKind::DuplicateLevel => "E-DUPLICATE-LEVEL",
            ParseErrorKind::DuplicateName => "E-DUPLICATE-NAME",
            ParseErrorKind::UnknownIdentifier => "E-UNKNOWN-IDENTIFIER",
            ParseErrorKind::Arity => "E-ARITY",
            ParseErrorKind::MissingAssign => "E-MISSING-ASSIGN",
            ParseErrorKind::DuplicateAssign => "E-DUPLICATE-ASSIGN",
            ParseErrorKind::InvalidUnits => "E-INVALID-UNITS",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{}:{line}:{column}: {message}", kind.code())]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl ParseError {
    pub fn new(kind: ParseErrorKind, line: usize, column: usize, message: impl Into<String>) -> Self {
        ParseError {
            kind,
            line,
            column,
            message: message.into(),
        }
    }
}

/// Errors raised while turning a design expression into a shaped constraint system.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ResolveError {
    #[error("unsatisfiable shape: {0}")]
    UnsatisfiableShape(String),
    #[error("no method determines the trial count: {0}")]
    MissingTrialCount(String),
    #[error("cross children have different trial counts ({left} vs {right})")]
    CrossArityMismatch { left: usize, right: usize },
    #[error("variable `{0}` is assigned more than once")]
    VariableOverlap(String),
    #[error("partial nesting is not supported: {0}")]
    PartialNestingUnsupported(String),
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("unknown design `{0}`")]
    UnknownDesign(String),
    #[error("unsupported composition: {0}")]
    UnsupportedComposition(String),
    #[error(transparent)]
    Condition(#[from] ConditionError),
}

impl ResolveError {
    pub fn code(&self) -> &'static str {
        match self {
            ResolveError::UnsatisfiableShape(_) => "UnsatisfiableShape",
            ResolveError::MissingTrialCount(_) => "MissingTrialCount",
            ResolveError::CrossArityMismatch { .. } => "CrossArityMismatch",
            ResolveError::VariableOverlap(_) => "VariableOverlap",
            ResolveError::PartialNestingUnsupported(_) => "PartialNestingUnsupported",
            ResolveError::UnknownVariable(_) => "UnknownVariable",
            ResolveError::UnknownDesign(_) => "UnknownDesign",
            ResolveError::UnsupportedComposition(_) => "UnsupportedComposition",
            ResolveError::Condition(_) => "ConditionError",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SolveError {
    #[error("unsatisfiable: no plan matrix satisfies {0}")]
    Unsatisfiable(String),
    #[error("search budget of {0:?} exceeded")]
    Timeout(std::time::Duration),
    #[error("design has {cells} cells, above the enumeration cap of {cap}")]
    DesignTooLarge { cells: usize, cap: usize },
    #[error("cross children have different trial counts ({left} vs {right})")]
    CrossArityMismatch { left: usize, right: usize },
    #[error(transparent)]
    Condition(#[from] ConditionError),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AssignError {
    #[error("{units} units cannot be split evenly across {plans} plans")]
    UnevenPartition { units: usize, plans: usize },
    #[error("no {0} to assign")]
    Empty(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VerifyError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("divisibility: {0}")]
    Divisibility(String),
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
}
